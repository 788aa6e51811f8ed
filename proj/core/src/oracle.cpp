#include "metacon/oracle.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "metacon/errors.hpp"

namespace metacon {

double meta_loss(const LinearHead& w0, std::span<const LabeledFeature> support, std::span<const LabeledFeature> query,
                 std::size_t n_step, double eta) {
  const AdaptedHead adapted =
      adapt_features(w0, std::vector<LabeledFeature>(support.begin(), support.end()), n_step, eta);
  return cross_entropy(adapted.head, query);
}

double meta_loss(const LinearHead& w0, const EncoderParams& encoder, const Episode& episode,
                 const MetaConfig& config) {
  const AdaptedHead adapted = adapt(w0, encoder, episode.support, config);
  return cross_entropy(adapted.head, encode_samples(encoder, episode.query));
}

Vector fd_gradient(const ScalarFieldProbe& probe, std::span<const double> point, double h) {
  METACON_REQUIRE(h > 0.0, "fd_gradient: step must be positive");
  METACON_REQUIRE(point.size() == probe.dimension, "fd_gradient: point dimension mismatch");
  Vector x(point.begin(), point.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = probe.evaluate(x);
    x[i] = saved - h;
    const double minus = probe.evaluate(x);
    x[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NumericError("fd_gradient: probe returned a non-finite value at coordinate " + std::to_string(i));
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> analytic, std::span<const double> fd) {
  return norm(subtract(analytic, fd)) / (norm(fd) + 1e-8);
}

namespace {

struct TinyInstance {
  std::size_t n_way = 2;
  std::size_t n_features = 2;
  std::size_t n_step = 1;
  double eta = 0.1;
  LinearHead w0;
  std::vector<LabeledFeature> support;
  std::vector<LabeledFeature> query;
};

std::size_t draw_between(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

std::vector<LabeledFeature> draw_labeled(RngStream& rng, std::size_t n_way, std::size_t per_class, std::size_t nf) {
  std::vector<LabeledFeature> out;
  for (std::size_t k = 0; k < n_way; ++k)
    for (std::size_t i = 0; i < per_class; ++i) out.push_back({draw_gaussian(rng, nf, 0.0, 1.0), k});
  return out;
}

TinyInstance draw_instance(RngStream& rng, std::size_t n_step, double eta, bool zero_head) {
  TinyInstance inst;
  inst.n_way = draw_between(rng, 2, 5);
  inst.n_features = draw_between(rng, 2, 8);
  inst.n_step = n_step;
  inst.eta = eta;
  inst.w0 = LinearHead::zeros(inst.n_features, inst.n_way);
  if (!zero_head) {
    const Vector w = draw_gaussian(rng, inst.n_features * inst.n_way, 0.0, 0.5);
    std::copy(w.begin(), w.end(), inst.w0.w.data().begin());
  }
  inst.support = draw_labeled(rng, inst.n_way, draw_between(rng, 1, 4), inst.n_features);
  inst.query = draw_labeled(rng, inst.n_way, draw_between(rng, 1, 4), inst.n_features);
  return inst;
}

void write_values(std::ostringstream& os, std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
}

void write_samples(std::ostringstream& os, const char* key, std::span<const LabeledFeature> samples) {
  for (const auto& s : samples) {
    os << key << " = " << (s.label + 1) << " : ";
    write_values(os, s.feature);
    os << "\n";
  }
}

std::string serialize(const TinyInstance& inst, const std::string& variant) {
  std::ostringstream os;
  os.precision(17);
  os << "[instance]\n"
     << "variant = " << variant << "\n"
     << "n_way = " << inst.n_way << "\n"
     << "n_features = " << inst.n_features << "\n"
     << "n_step = " << inst.n_step << "\n"
     << "eta = " << inst.eta << "\n"
     << "w0 = ";
  write_values(os, inst.w0.w.data());
  os << "\n";
  write_samples(os, "support", inst.support);
  write_samples(os, "query", inst.query);
  return os.str();
}

void record(VerificationReport& report, std::size_t trial, double err, const std::string& reason,
            const std::string& instance) {
  report.failures.push_back({trial, err, reason, instance});
}

}  // namespace

std::vector<VerificationReport> verify_head_grads(const VerifyOptions& options, RngStream& rng,
                                                  const HeadGradForms& forms) {
  METACON_REQUIRE(options.trials >= 1, "verify_head_grads: need at least one trial");
  std::vector<VerificationReport> reports;

  for (std::size_t n_step : options.fomaml_steps) {
    VerificationReport rep{"fomaml_nstep" + std::to_string(n_step), options.trials, 0.0, options.tolerance};
    for (std::size_t t = 0; t < options.trials; ++t) {
      const TinyInstance inst = draw_instance(rng, n_step, options.eta, t % 2 == 1);
      const AdaptedHead adapted = adapt_features(inst.w0, inst.support, inst.n_step, inst.eta);
      const Matrix analytic = forms.fomaml(adapted, inst.query);
      // FOMAML differentiates the query loss at w^N with the adaptation held fixed.
      LinearHead probe_head = adapted.head;
      ScalarFieldProbe probe{[&](std::span<const double> w) {
                               std::copy(w.begin(), w.end(), probe_head.w.data().begin());
                               return cross_entropy(probe_head, inst.query);
                             },
                             adapted.head.w.size()};
      const Vector fd = scaled(fd_gradient(probe, adapted.head.w.data(), options.step), -1.0);
      const double err = relative_error(analytic.data(), fd);
      rep.max_rel_err = std::max(rep.max_rel_err, err);
      if (!(err <= options.tolerance)) record(rep, t, err, "relative error above tolerance", serialize(inst, rep.variant));
    }
    reports.push_back(std::move(rep));
  }

  VerificationReport rep{"somaml", options.trials, 0.0, options.tolerance};
  for (std::size_t t = 0; t < options.trials; ++t) {
    const bool zero_head = t % 2 == 1;
    const TinyInstance inst = draw_instance(rng, 1, options.eta, zero_head);
    const AdaptedHead adapted = adapt_features(inst.w0, inst.support, 1, inst.eta);
    const Matrix analytic = forms.somaml(inst.w0, inst.support, adapted, inst.query, inst.eta);
    LinearHead probe_head = inst.w0;
    ScalarFieldProbe probe{[&](std::span<const double> w) {
                             std::copy(w.begin(), w.end(), probe_head.w.data().begin());
                             return meta_loss(probe_head, inst.support, inst.query, 1, inst.eta);
                           },
                           inst.w0.w.size()};
    const Vector fd = scaled(fd_gradient(probe, inst.w0.w.data(), options.step), -1.0);
    const double err = relative_error(analytic.data(), fd);
    rep.max_rel_err = std::max(rep.max_rel_err, err);
    if (!(err <= options.tolerance)) record(rep, t, err, "relative error above tolerance", serialize(inst, "somaml"));
    if (zero_head) {
      const double vanish = frobenius_norm(somaml_head_terms(inst.w0, inst.support, adapted, inst.query, inst.eta).cross_channel);
      rep.max_vanishing_norm = std::max(rep.max_vanishing_norm, vanish);
      if (!(vanish <= options.identity_tolerance))
        record(rep, t, err, "cross-channel term does not vanish at w0 = 0", serialize(inst, "somaml"));
    }
  }
  reports.push_back(std::move(rep));
  return reports;
}

namespace {

// Encoder whose hidden pre-activations on `inputs` stay clear of the rectifier kink.
EncoderParams draw_encoder(RngStream& rng, std::span<const std::size_t> sizes, std::span<const Vector> inputs) {
  for (;;) {
    EncoderParams enc = init_encoder(sizes, rng);
    for (std::size_t i = 0; i < enc.num_layers(); ++i) {
      auto& l = enc.mutable_layer(i);
      l.bias = draw_gaussian(rng, l.out_dim(), 0.0, 0.3);
    }
    bool clear = true;
    for (const auto& x : inputs) {
      const auto f = forward(enc, x);
      for (const auto& z : f.tape.pre_activations)
        for (double v : z) clear = clear && std::abs(v) > 1e-3;
    }
    if (clear) return enc;
  }
}

}  // namespace

VerificationReport verify_encoder_grad(const VerifyOptions& options, RngStream& rng) {
  METACON_REQUIRE(options.trials >= 1, "verify_encoder_grad: need at least one trial");
  VerificationReport rep{"encoder", options.trials, 0.0, options.tolerance};

  for (std::size_t t = 0; t < options.trials; ++t) {
    const bool zero_head = t % 2 == 1;
    MetaConfig cfg;
    cfg.n_way = draw_between(rng, 2, 5);
    cfg.n_shot = draw_between(rng, 1, 4);
    cfg.n_query = draw_between(rng, 1, 4);
    cfg.n_step = draw_between(rng, 1, 3);
    cfg.eta = options.eta;
    cfg.variant = Variant::fomaml;
    const std::size_t n_in = draw_between(rng, 2, 6);
    const std::size_t nf = draw_between(rng, 2, 8);
    // Alternate a single linear layer with a two-layer rectifier net.
    std::vector<std::size_t> sizes{n_in};
    if (t % 4 >= 2) sizes.push_back(draw_between(rng, 2, 8));
    sizes.push_back(nf);

    Episode ep;
    ep.class_map.resize(cfg.n_way);
    for (std::size_t k = 0; k < cfg.n_way; ++k) {
      ep.class_map[k] = k;
      for (std::size_t i = 0; i < cfg.n_shot; ++i) ep.support.push_back({draw_gaussian(rng, n_in, 0.0, 1.0), k});
      for (std::size_t i = 0; i < cfg.n_query; ++i) ep.query.push_back({draw_gaussian(rng, n_in, 0.0, 1.0), k});
    }
    std::vector<Vector> inputs;
    for (const auto& s : ep.support) inputs.push_back(s.x);
    for (const auto& s : ep.query) inputs.push_back(s.x);

    MetaModel model;
    model.encoder = draw_encoder(rng, sizes, inputs);
    model.head = LinearHead::zeros(nf, cfg.n_way);
    if (!zero_head) {
      const Vector w = draw_gaussian(rng, nf * cfg.n_way, 0.0, 0.5);
      std::copy(w.begin(), w.end(), model.head.w.data().begin());
    }

    const EncoderGradient analytic = encoder_meta_grad(model, ep, cfg);

    // Query path only: the adapted head is built from the base encoder's support features.
    const AdaptedHead adapted = adapt(model.head, model.encoder, ep.support, cfg);
    EncoderParams probe_enc = model.encoder;
    ScalarFieldProbe probe{[&](std::span<const double> theta) {
                             probe_enc.assign_flat(theta);
                             return cross_entropy(adapted.head, encode_samples(probe_enc, ep.query));
                           },
                           model.encoder.parameter_count()};
    const Vector fd = fd_gradient(probe, model.encoder.flat(), options.step);
    const double err = relative_error(analytic.flat(), fd);
    rep.max_rel_err = std::max(rep.max_rel_err, err);

    TinyInstance inst;
    auto describe = [&] {
      inst.n_way = cfg.n_way;
      inst.n_features = nf;
      inst.n_step = cfg.n_step;
      inst.eta = cfg.eta;
      inst.w0 = model.head;
      inst.support = adapted.support;
      inst.query = encode_samples(model.encoder, ep.query);
      return serialize(inst, "encoder");
    };
    if (!(err <= options.tolerance)) record(rep, t, err, "relative error above tolerance", describe());

    const auto query_features = encode_samples(model.encoder, ep.query);
    for (const auto& q : query_features) {
      const auto dec = encoder_backprop_error(model.head, adapted, q);
      const double gap = max_abs(subtract(dec.total, add(dec.interference, dec.contrastive)));
      rep.max_decomposition_gap = std::max(rep.max_decomposition_gap, gap);
      if (!(gap <= options.identity_tolerance)) record(rep, t, err, "decomposition identity violated", describe());
      if (zero_head) {
        const double interf = norm(dec.interference);
        rep.max_zeroed_interference = std::max(rep.max_zeroed_interference, interf);
        if (!(interf <= options.identity_tolerance))
          record(rep, t, err, "interference term nonzero at w0 = 0", describe());
      }
    }
    if (zero_head) {
      const AdaptedHead one_step = adapt_features(model.head, adapted.support, 1, cfg.eta);
      const double vanish =
          frobenius_norm(somaml_head_terms(model.head, adapted.support, one_step, query_features, cfg.eta).cross_channel);
      rep.max_vanishing_norm = std::max(rep.max_vanishing_norm, vanish);
      if (!(vanish <= options.identity_tolerance))
        record(rep, t, err, "cross-channel term does not vanish at w0 = 0", describe());
    }
  }
  return rep;
}

std::string report_to_json(const VerificationReport& report) {
  nlohmann::ordered_json j;
  j["variant"] = report.variant;
  j["trials"] = report.trials;
  j["max_rel_err"] = report.max_rel_err;
  j["tolerance"] = report.tolerance;
  j["max_vanishing_norm"] = report.max_vanishing_norm;
  j["max_decomposition_gap"] = report.max_decomposition_gap;
  j["max_zeroed_interference"] = report.max_zeroed_interference;
  j["failures"] = nlohmann::ordered_json::array();
  for (const auto& f : report.failures)
    j["failures"].push_back({{"trial", f.trial}, {"rel_err", f.rel_err}, {"reason", f.reason}, {"instance", f.instance}});
  return j.dump(2);
}

}  // namespace metacon
