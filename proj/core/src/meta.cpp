#include "metacon/meta.hpp"

#include <cmath>

#include "metacon/errors.hpp"
#include "metacon/parallel.hpp"

namespace metacon {

namespace {

void check_features(const LinearHead& head, std::span<const LabeledFeature> samples, const char* where) {
  for (const auto& s : samples) {
    if (s.feature.size() != head.n_features())
      throw ContractViolation(std::string(where) + ": feature length does not match head");
    if (s.label >= head.n_way()) throw ContractViolation(std::string(where) + ": label outside 1..N_way");
  }
}

// Column k of the result is E (1{k=label} - g_k) phi over `samples`, with
// the probabilities supplied per sample.
Matrix weighted_residual_sum(std::span<const LabeledFeature> samples, std::span<const Vector> probs,
                             std::size_t n_features, std::size_t n_way) {
  Matrix out(n_features, n_way);
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& phi = samples[i].feature;
    for (std::size_t k = 0; k < n_way; ++k) {
      const double r = ((k == samples[i].label) ? 1.0 : 0.0) - probs[i][k];
      const double c = inv * r;
      for (std::size_t f = 0; f < n_features; ++f) out(f, k) += c * phi[f];
    }
  }
  return out;
}

std::vector<Vector> probabilities(const LinearHead& head, std::span<const LabeledFeature> samples) {
  std::vector<Vector> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(head_probabilities(head, s.feature));
  return out;
}

}  // namespace

Vector head_logits(const LinearHead& head, std::span<const double> feature) {
  METACON_REQUIRE(feature.size() == head.n_features(), "head_logits: feature length does not match head");
  return matvec_transposed(head.w, feature);
}

Vector head_probabilities(const LinearHead& head, std::span<const double> feature) {
  return softmax(head_logits(head, feature));
}

double cross_entropy(const LinearHead& head, std::span<const LabeledFeature> samples) {
  METACON_REQUIRE(!samples.empty(), "cross_entropy: empty sample set");
  check_features(head, samples, "cross_entropy");
  double total = 0.0;
  for (const auto& s : samples) {
    const Vector z = head_logits(head, s.feature);
    double top = z[0];
    for (double v : z) top = std::max(top, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - top);
    total += top + std::log(sum) - z[s.label];
  }
  return total / static_cast<double>(samples.size());
}

LinearHead inner_step(const LinearHead& head, std::span<const LabeledFeature> support, double eta) {
  METACON_REQUIRE(!support.empty(), "inner_step: empty support set");
  check_features(head, support, "inner_step");
  const auto probs = probabilities(head, support);
  LinearHead out = head;
  out.w += weighted_residual_sum(support, probs, head.n_features(), head.n_way()) * eta;
  return out;
}

AdaptedHead adapt_features(const LinearHead& head0, std::vector<LabeledFeature> support, std::size_t n_step,
                           double eta) {
  METACON_REQUIRE(!support.empty(), "adapt: empty support set");
  check_features(head0, support, "adapt");
  AdaptedHead out{head0, head0, std::move(support), {}, eta};
  out.trajectory.reserve(n_step);
  for (std::size_t i = 0; i < n_step; ++i) {
    InnerStepRecord rec{probabilities(out.head, out.support)};
    out.head.w += weighted_residual_sum(out.support, rec.support_probs, head0.n_features(), head0.n_way()) * eta;
    out.trajectory.push_back(std::move(rec));
  }
  return out;
}

std::vector<LabeledFeature> encode_samples(const EncoderParams& encoder, std::span<const Sample> samples) {
  std::vector<LabeledFeature> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({encode(encoder, s.x), s.label});
  return out;
}

AdaptedHead adapt(const LinearHead& head0, const EncoderParams& encoder, std::span<const Sample> support,
                  const MetaConfig& config) {
  METACON_REQUIRE(head0.n_way() == config.n_way, "adapt: head width differs from n_way");
  METACON_REQUIRE(head0.n_features() == encoder.feature_dim(), "adapt: head height differs from encoder output");
  return adapt_features(head0, encode_samples(encoder, support), config.n_step, config.eta);
}

Matrix fomaml_head_grad(const AdaptedHead& adapted, std::span<const LabeledFeature> query) {
  METACON_REQUIRE(!query.empty(), "fomaml_head_grad: empty query set");
  check_features(adapted.head, query, "fomaml_head_grad");
  const auto probs = probabilities(adapted.head, query);
  return weighted_residual_sum(query, probs, adapted.head.n_features(), adapted.head.n_way());
}

SomamlHeadTerms somaml_head_terms(const LinearHead& head0, std::span<const LabeledFeature> support,
                                  const AdaptedHead& adapted, std::span<const LabeledFeature> query, double eta) {
  if (adapted.trajectory.size() != 1)
    throw UnsupportedConfiguration("somaml_head_grad: closed form requires exactly one inner step");
  METACON_REQUIRE(!support.empty(), "somaml_head_grad: empty support set");
  check_features(head0, support, "somaml_head_grad");
  const std::size_t nf = head0.n_features();
  const std::size_t nw = head0.n_way();

  // q_m = E_q (1{m=u} - g_q,m at w^1) phi(q)
  const Matrix qdir = fomaml_head_grad(adapted, query);
  const auto g0 = probabilities(head0, support);
  const double inv = 1.0 / static_cast<double>(support.size());

  SomamlHeadTerms out{qdir, Matrix(nf, nw), Matrix(nf, nw)};
  Vector proj(nw);
  for (std::size_t s = 0; s < support.size(); ++s) {
    const auto& phi = support[s].feature;
    for (std::size_t m = 0; m < nw; ++m) {
      double acc = 0.0;
      for (std::size_t f = 0; f < nf; ++f) acc += phi[f] * qdir(f, m);
      proj[m] = acc;
    }
    const Vector& g = g0[s];
    double mixed = 0.0;  // sum_m g_m phi^T q_m
    for (std::size_t m = 0; m < nw; ++m) mixed += g[m] * proj[m];
    for (std::size_t k = 0; k < nw; ++k) {
      const double a = -eta * inv * g[k] * proj[k];
      const double b = eta * inv * g[k] * mixed;
      for (std::size_t f = 0; f < nf; ++f) {
        out.preconditioned(f, k) += a * phi[f];
        out.cross_channel(f, k) += b * phi[f];
      }
    }
  }
  out.total = out.preconditioned + out.cross_channel;
  return out;
}

Matrix somaml_head_grad(const LinearHead& head0, std::span<const LabeledFeature> support,
                        const AdaptedHead& adapted, std::span<const LabeledFeature> query, double eta) {
  if (adapted.trajectory.size() != 1)
    throw UnsupportedConfiguration("somaml_head_grad: closed form requires exactly one inner step");
  METACON_REQUIRE(!support.empty(), "somaml_head_grad: empty support set");
  check_features(head0, support, "somaml_head_grad");
  const std::size_t nf = head0.n_features();
  const std::size_t nw = head0.n_way();

  const Matrix qdir = fomaml_head_grad(adapted, query);
  const auto g0 = probabilities(head0, support);
  const double inv = 1.0 / static_cast<double>(support.size());

  // Column k: [I - eta E_s (g_k - g_k^2) phi phi^T] q_k + eta sum_{m != k} E_s (g_m g_k) phi phi^T q_m.
  Matrix out = qdir;
  Vector proj(nw);
  for (std::size_t s = 0; s < support.size(); ++s) {
    const auto& phi = support[s].feature;
    for (std::size_t m = 0; m < nw; ++m) {
      double acc = 0.0;
      for (std::size_t f = 0; f < nf; ++f) acc += phi[f] * qdir(f, m);
      proj[m] = acc;
    }
    const Vector& g = g0[s];
    for (std::size_t k = 0; k < nw; ++k) {
      double coeff = -(g[k] - g[k] * g[k]) * proj[k];
      for (std::size_t m = 0; m < nw; ++m)
        if (m != k) coeff += g[m] * g[k] * proj[m];
      coeff *= eta * inv;
      for (std::size_t f = 0; f < nf; ++f) out(f, k) += coeff * phi[f];
    }
  }
  return out;
}

Matrix weighted_feature_covariance(std::span<const LabeledFeature> support, const LinearHead& head0,
                                   std::size_t channel, CovarianceWeight weight) {
  METACON_REQUIRE(!support.empty(), "weighted_feature_covariance: empty support set");
  METACON_REQUIRE(channel < head0.n_way(), "weighted_feature_covariance: channel out of range");
  check_features(head0, support, "weighted_feature_covariance");
  const std::size_t nf = head0.n_features();
  Matrix h(nf, nf);
  const double inv = 1.0 / static_cast<double>(support.size());
  for (const auto& s : support) {
    const double g = head_probabilities(head0, s.feature)[channel];
    const double c = inv * (weight == CovarianceWeight::prob ? g : g - g * g);
    for (std::size_t i = 0; i < nf; ++i)
      for (std::size_t j = 0; j < nf; ++j) h(i, j) += c * s.feature[i] * s.feature[j];
  }
  return h;
}

GradientDecomposition encoder_backprop_error(const LinearHead& head0, const AdaptedHead& adapted,
                                             const LabeledFeature& query_sample) {
  METACON_REQUIRE(!adapted.trajectory.empty(), "encoder_backprop_error: adaptation trajectory missing");
  METACON_REQUIRE(head0.w.rows() == adapted.head.w.rows() && head0.w.cols() == adapted.head.w.cols(),
                  "encoder_backprop_error: head shapes differ");
  check_features(adapted.head, std::span(&query_sample, 1), "encoder_backprop_error");
  for (const auto& rec : adapted.trajectory)
    METACON_REQUIRE(rec.support_probs.size() == adapted.support.size(),
                    "encoder_backprop_error: trajectory does not match support set");

  const std::size_t nf = head0.n_features();
  const std::size_t nw = head0.n_way();
  const Vector gq = head_probabilities(adapted.head, query_sample.feature);
  Vector residual(nw);
  for (std::size_t j = 0; j < nw; ++j) residual[j] = (j == query_sample.label ? 1.0 : 0.0) - gq[j];

  GradientDecomposition out{Vector(nf, 0.0), Vector(nf, 0.0), Vector(nf, 0.0)};
  for (std::size_t j = 0; j < nw; ++j) {
    for (std::size_t f = 0; f < nf; ++f) {
      out.interference[f] += residual[j] * head0.w(f, j);
      out.total[f] += residual[j] * adapted.head.w(f, j);
    }
  }
  // Support imprint accumulated over the inner steps: sum_p E_s (1{j=t} - g_s,j at w^{p-1}) phi(s).
  Matrix imprint(nf, nw);
  for (const auto& rec : adapted.trajectory)
    imprint += weighted_residual_sum(adapted.support, rec.support_probs, nf, nw);
  for (std::size_t j = 0; j < nw; ++j)
    for (std::size_t f = 0; f < nf; ++f) out.contrastive[f] += adapted.eta * residual[j] * imprint(f, j);
  return out;
}

namespace {

struct QueryPass {
  std::vector<ForwardResult> forwards;
  std::vector<LabeledFeature> features;
};

QueryPass forward_query(const EncoderParams& encoder, std::span<const Sample> query) {
  QueryPass pass;
  pass.forwards.reserve(query.size());
  pass.features.reserve(query.size());
  for (const auto& q : query) {
    pass.forwards.push_back(forward(encoder, q.x));
    pass.features.push_back({pass.forwards.back().feature, q.label});
  }
  return pass;
}

EncoderGradient encoder_grad_from(const MetaModel& model, const AdaptedHead& adapted, const QueryPass& pass) {
  EncoderGradient grad = EncoderGradient::zeros_like(model.encoder);
  const double inv = 1.0 / static_cast<double>(pass.features.size());
  for (std::size_t i = 0; i < pass.features.size(); ++i) {
    // dL/dphi(q) = -total / |Q| for the mean query loss, with
    // total = sum_j (1{j=u} - g_q,j) w^N_j (the sum of both decomposition terms).
    const auto& q = pass.features[i];
    Vector residual = head_probabilities(adapted.head, q.feature);
    for (double& r : residual) r = -r;
    residual[q.label] += 1.0;
    const Vector upstream = scaled(matvec(adapted.head.w, residual), -inv);
    grad += backward(pass.forwards[i].tape, upstream).grad;
  }
  return grad;
}

void check_episode(const MetaModel& model, const Episode& episode, const MetaConfig& config) {
  METACON_REQUIRE(!episode.support.empty() && !episode.query.empty(), "episode: empty support or query set");
  METACON_REQUIRE(model.head.n_way() == config.n_way, "model head width differs from n_way");
  METACON_REQUIRE(model.head.n_features() == model.encoder.feature_dim(), "model head height differs from encoder");
}

}  // namespace

EncoderGradient encoder_meta_grad(const MetaModel& model, const Episode& episode, const MetaConfig& config) {
  check_episode(model, episode, config);
  const AdaptedHead adapted = adapt(model.head, model.encoder, episode.support, config);
  const QueryPass pass = forward_query(model.encoder, episode.query);
  return encoder_grad_from(model, adapted, pass);
}

TaskGradient task_gradient(const MetaModel& model, const Episode& episode, const MetaConfig& config) {
  check_episode(model, episode, config);
  const AdaptedHead adapted = adapt(model.head, model.encoder, episode.support, config);
  const QueryPass pass = forward_query(model.encoder, episode.query);
  TaskGradient out;
  if (config.variant == Variant::somaml) {
    if (config.n_step != 1) throw UnsupportedConfiguration("somaml requires n_step = 1");
    out.head_direction = somaml_head_grad(model.head, adapted.support, adapted, pass.features, config.eta);
  } else {
    out.head_direction = fomaml_head_grad(adapted, pass.features);
  }
  out.encoder = encoder_grad_from(model, adapted, pass);
  out.query_loss = cross_entropy(adapted.head, pass.features);
  return out;
}

BatchGradient batch_gradient(const MetaModel& model, std::span<const Episode> batch, const MetaConfig& config,
                             std::size_t threads) {
  METACON_REQUIRE(!batch.empty(), "outer_update: empty task batch");
  std::vector<TaskGradient> per_task(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) { per_task[i] = task_gradient(model, batch[i], config); });

  BatchGradient out{Matrix(model.head.n_features(), model.head.n_way()), EncoderGradient::zeros_like(model.encoder),
                    0.0};
  for (const auto& t : per_task) {
    out.head_direction += t.head_direction;
    out.encoder += t.encoder;
    out.mean_query_loss += t.query_loss;
  }
  out.mean_query_loss /= static_cast<double>(batch.size());
  return out;
}

MetaModel outer_update(const MetaModel& model, std::span<const Episode> batch, const MetaConfig& config,
                       std::size_t threads, double* mean_query_loss) {
  const BatchGradient grad = batch_gradient(model, batch, config, threads);
  if (mean_query_loss != nullptr) *mean_query_loss = grad.mean_query_loss;

  MetaModel next = model;
  if (config.outer_optimizer.kind == OuterOptimizer::Kind::plain_sgd) {
    next.head.w += grad.head_direction * config.rho;
    Vector enc = next.encoder.flat();
    axpy(-config.rho, grad.encoder.flat(), enc);
    next.encoder.assign_flat(enc);
  } else {
    const auto& opt = config.outer_optimizer;
    // Loss gradient over [head entries, encoder parameters].
    Vector g = scaled(grad.head_direction.data(), -1.0);
    const Vector ge = grad.encoder.flat();
    g.insert(g.end(), ge.begin(), ge.end());

    AdamState& st = next.optimizer;
    if (st.first_moment.size() != g.size()) {
      st.first_moment.assign(g.size(), 0.0);
      st.second_moment.assign(g.size(), 0.0);
      st.steps = 0;
    }
    ++st.steps;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.steps));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.steps));
    Vector params(next.head.w.data().begin(), next.head.w.data().end());
    const Vector enc = next.encoder.flat();
    params.insert(params.end(), enc.begin(), enc.end());
    for (std::size_t i = 0; i < g.size(); ++i) {
      st.first_moment[i] = opt.beta1 * st.first_moment[i] + (1.0 - opt.beta1) * g[i];
      st.second_moment[i] = opt.beta2 * st.second_moment[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = st.first_moment[i] / bc1;
      const double vhat = st.second_moment[i] / bc2;
      params[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
    }
    const std::size_t nh = next.head.w.size();
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(nh), next.head.w.data().begin());
    next.encoder.assign_flat(std::span<const double>(params).subspan(nh));
  }
  if (config.head_init.kind == HeadInitPolicy::Kind::zeroing_trick) next.head.w.fill(0.0);
  return next;
}

LinearHead init_head(const HeadInitPolicy& policy, std::size_t n_features, std::size_t n_way, RngStream& rng) {
  METACON_REQUIRE(n_features > 0 && n_way > 0, "init_head: zero dimension");
  LinearHead head = LinearHead::zeros(n_features, n_way);
  if (policy.kind == HeadInitPolicy::Kind::random || policy.kind == HeadInitPolicy::Kind::scaled) {
    const double scale = policy.kind == HeadInitPolicy::Kind::scaled ? policy.factor : 1.0;
    const double stddev = policy.kind == HeadInitPolicy::Kind::random && policy.stddev > 0.0
                              ? policy.stddev
                              : 1.0 / std::sqrt(static_cast<double>(n_features));
    const Vector draw = draw_gaussian(rng, n_features * n_way, 0.0, stddev);
    for (std::size_t i = 0; i < draw.size(); ++i) head.w.data()[i] = scale * draw[i];
  }
  return head;
}

MetaModel init_model(std::span<const std::size_t> encoder_sizes, const MetaConfig& config, RngStream& rng) {
  // Separate child streams keep the encoder draw identical across head policies.
  RngStream enc_rng = rng.split(1);
  RngStream head_rng = rng.split(2);
  MetaModel model;
  model.encoder = init_encoder(encoder_sizes, enc_rng);
  model.head = init_head(config.head_init, model.encoder.feature_dim(), config.n_way, head_rng);
  return model;
}

}  // namespace metacon
