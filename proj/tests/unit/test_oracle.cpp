#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "metacon/errors.hpp"
#include "metacon/oracle.hpp"
#include "test_util.hpp"

using namespace metacon;
using metacon::testutil::random_matrix;

namespace {

Episode random_episode(RngStream& rng, std::size_t n_way, std::size_t n_in, std::size_t shots, std::size_t queries) {
  Episode ep;
  for (std::size_t k = 0; k < n_way; ++k) {
    ep.class_map.push_back(k);
    for (std::size_t i = 0; i < shots; ++i) ep.support.push_back({draw_gaussian(rng, n_in, 0.0, 1.0), k});
    for (std::size_t i = 0; i < queries; ++i) ep.query.push_back({draw_gaussian(rng, n_in, 0.0, 1.0), k});
  }
  return ep;
}

// Second implementation of the composed loss: raw arrays, explicit loops,
// log-sum-exp written out, encoder restricted to one or two dense layers.
double explicit_meta_loss(const EncoderParams& enc, const Matrix& w0, const Episode& ep, std::size_t n_step,
                          double eta) {
  const std::size_t nf = w0.rows(), nw = w0.cols();
  auto feat = [&](const Vector& x) {
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t l = 0; l < enc.num_layers(); ++l) {
      const auto& L = enc.layer(l);
      std::vector<double> y(L.weight.rows());
      for (std::size_t o = 0; o < y.size(); ++o) {
        double a = L.bias[o];
        for (std::size_t i = 0; i < h.size(); ++i) a += L.weight(o, i) * h[i];
        y[o] = (l + 1 < enc.num_layers() && a < 0.0) ? 0.0 : a;
      }
      h = y;
    }
    return h;
  };
  std::vector<std::vector<double>> w(nw, std::vector<double>(nf));
  for (std::size_t k = 0; k < nw; ++k)
    for (std::size_t f = 0; f < nf; ++f) w[k][f] = w0(f, k);
  auto logits = [&](const std::vector<double>& phi) {
    std::vector<double> z(nw, 0.0);
    for (std::size_t k = 0; k < nw; ++k)
      for (std::size_t f = 0; f < nf; ++f) z[k] += w[k][f] * phi[f];
    return z;
  };
  std::vector<std::vector<double>> sphi;
  for (const auto& s : ep.support) sphi.push_back(feat(s.x));
  for (std::size_t step = 0; step < n_step; ++step) {
    auto next = w;
    for (std::size_t i = 0; i < sphi.size(); ++i) {
      const auto z = logits(sphi[i]);
      double m = -1e300, sum = 0.0;
      for (double v : z) m = std::max(m, v);
      for (double v : z) sum += std::exp(v - m);
      for (std::size_t k = 0; k < nw; ++k) {
        const double g = std::exp(z[k] - m) / sum;
        const double r = (ep.support[i].label == k ? 1.0 : 0.0) - g;
        for (std::size_t f = 0; f < nf; ++f) next[k][f] += eta * r * sphi[i][f] / static_cast<double>(sphi.size());
      }
    }
    w = next;
  }
  double total = 0.0;
  for (const auto& q : ep.query) {
    const auto z = logits(feat(q.x));
    double m = -1e300, sum = 0.0;
    for (double v : z) m = std::max(m, v);
    for (double v : z) sum += std::exp(v - m);
    total += m + std::log(sum) - z[q.label];
  }
  return total / static_cast<double>(ep.query.size());
}

MetaConfig config(std::size_t n_way, std::size_t n_step, double eta) {
  MetaConfig c;
  c.n_way = n_way;
  c.n_step = n_step;
  c.eta = eta;
  return c;
}

}  // namespace

TEST(MetaLoss, ZeroHeadZeroEtaIsLogN) {
  RngStream rng(1);
  const auto enc = init_encoder(std::vector<std::size_t>{4, 6}, rng);
  for (std::size_t nw : {2u, 5u}) {
    const auto ep = random_episode(rng, nw, 4, 1, 3);
    EXPECT_NEAR(meta_loss(LinearHead::zeros(6, nw), enc, ep, config(nw, 1, 0.0)), std::log(static_cast<double>(nw)),
                1e-12);
  }
  const auto ep = random_episode(rng, 5, 4, 1, 3);
  EXPECT_NEAR(meta_loss(LinearHead::zeros(6, 5), enc, ep, config(5, 3, 0.0)), 1.6094379124341003746, 1e-12);
}

TEST(MetaLoss, SaturatedCorrectPredictionsApproachZero) {
  const EncoderParams enc({DenseLayer{Matrix::identity(2), Vector(2)}});
  LinearHead h = LinearHead::zeros(2, 2);
  h.w(0, 0) = h.w(1, 1) = 50.0;
  Episode ep;
  ep.support = {{{1, 0}, 0}, {{0, 1}, 1}};
  ep.query = {{{1, 0}, 0}, {{0, 1}, 1}};
  ep.class_map = {0, 1};
  EXPECT_LT(meta_loss(h, enc, ep, config(2, 1, 0.1)), 1e-20);
}

TEST(MetaLoss, MatchesExplicitLoopImplementation) {
  RngStream rng(2);
  for (std::size_t n_step : {1u, 2u, 4u}) {
    const auto enc = init_encoder(std::vector<std::size_t>{5, 7, 4}, rng);
    const Matrix w0 = random_matrix(rng, 4, 3, 0.5);
    const auto ep = random_episode(rng, 3, 5, 2, 4);
    const double a = meta_loss(LinearHead{w0}, enc, ep, config(3, n_step, 0.3));
    const double b = explicit_meta_loss(enc, w0, ep, n_step, 0.3);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(MetaLoss, FeatureOverloadAgrees) {
  RngStream rng(3);
  const auto enc = init_encoder(std::vector<std::size_t>{5, 4}, rng);
  const LinearHead h{random_matrix(rng, 4, 3, 0.5)};
  const auto ep = random_episode(rng, 3, 5, 2, 4);
  EXPECT_EQ(meta_loss(h, enc, ep, config(3, 2, 0.3)),
            meta_loss(h, encode_samples(enc, ep.support), encode_samples(enc, ep.query), 2, 0.3));
}

TEST(FdGradient, Examples) {
  ScalarFieldProbe sq{[](std::span<const double> x) { return x[0] * x[0]; }, 1};
  EXPECT_NEAR(fd_gradient(sq, Vector{3.0}, 1e-5)[0], 6.0, 1e-9);

  ScalarFieldProbe c{[](std::span<const double>) { return 4.2; }, 3};
  EXPECT_EQ(fd_gradient(c, Vector{1, 2, 3}, 1e-5), Vector(3, 0.0));

  RngStream rng(4);
  const Matrix a = random_matrix(rng, 6, 6);
  ScalarFieldProbe quad{[&](std::span<const double> x) { return dot(x, matvec(a, x)); }, 6};
  const Vector x = draw_gaussian(rng, 6, 0.0, 1.0);
  const Vector expected = matvec(a + a.transposed(), x);
  EXPECT_LE(relative_error(fd_gradient(quad, x, 1e-5), expected), 1e-7);
}

TEST(FdGradient, Errors) {
  ScalarFieldProbe bad{[](std::span<const double> x) { return x[0] > 0.0 ? std::nan("") : 0.0; }, 1};
  EXPECT_THROW(fd_gradient(bad, Vector{0.0}, 1e-5), NumericError);
  ScalarFieldProbe ok{[](std::span<const double>) { return 0.0; }, 2};
  EXPECT_THROW(fd_gradient(ok, Vector{0.0}, 1e-5), ContractViolation);
  EXPECT_THROW(fd_gradient(ok, Vector{0.0, 0.0}, 0.0), ContractViolation);
}

TEST(RelativeError, Definition) {
  EXPECT_DOUBLE_EQ(relative_error(Vector{3, 4}, Vector{3, 4}), 0.0);
  EXPECT_NEAR(relative_error(Vector{0, 0}, Vector{3, 4}), 5.0 / (5.0 + 1e-8), 1e-15);
  EXPECT_NEAR(relative_error(Vector{1e-9}, Vector{0.0}), 0.1, 1e-12);
}

TEST(VerifyHeadGrads, LibraryFormsPass) {
  RngStream rng(5);
  VerifyOptions o;
  o.trials = 25;
  const auto reports = verify_head_grads(o, rng);
  ASSERT_EQ(reports.size(), 4u);  // FOMAML at N_step 1, 2, 3, then SOMAML
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed()) << r.variant << " " << r.max_rel_err;
    EXPECT_LE(r.max_rel_err, 1e-5);
    EXPECT_EQ(r.trials, 25u);
  }
  EXPECT_LE(reports.back().max_vanishing_norm, 1e-12);
}

TEST(VerifyHeadGrads, CorruptedFormsAreCaught) {
  // Negative controls: dropping the cross-channel sum, and FOMAML with the sign flipped.
  HeadGradForms forms;
  forms.somaml = [](const LinearHead& h0, std::span<const LabeledFeature> s, const AdaptedHead& a,
                    std::span<const LabeledFeature> q, double eta) {
    return somaml_head_terms(h0, s, a, q, eta).preconditioned;
  };
  forms.fomaml = [](const AdaptedHead& a, std::span<const LabeledFeature> q) { return fomaml_head_grad(a, q) * -1.0; };
  RngStream rng(6);
  VerifyOptions o;
  o.trials = 10;
  const auto reports = verify_head_grads(o, rng, forms);
  for (const auto& r : reports) {
    EXPECT_FALSE(r.passed()) << r.variant;
    ASSERT_FALSE(r.failures.empty());
    EXPECT_FALSE(r.failures.front().instance.empty());
  }
}

TEST(VerifyEncoderGrad, PassesWithIdentities) {
  RngStream rng(7);
  VerifyOptions o;
  o.trials = 20;
  const auto r = verify_encoder_grad(o, rng);
  EXPECT_TRUE(r.passed()) << r.max_rel_err;
  EXPECT_LE(r.max_rel_err, 1e-5);
  EXPECT_LE(r.max_decomposition_gap, 1e-12);
  EXPECT_LE(r.max_zeroed_interference, 1e-12);
  EXPECT_LE(r.max_vanishing_norm, 1e-12);
}

TEST(VerifyEncoderGrad, ZeroEtaHasNoContrastiveTerm) {
  RngStream rng(8);
  const LinearHead h0{random_matrix(rng, 4, 3)};
  const auto support = metacon::testutil::random_features(rng, 3, 2, 4);
  const auto a = adapt_features(h0, support, 2, 0.0);
  const auto d = encoder_backprop_error(h0, a, {draw_gaussian(rng, 4, 0.0, 1.0), 0});
  for (double v : d.contrastive) EXPECT_EQ(v, 0.0);
}

TEST(ReportJson, ShapeAndRoundTrip) {
  VerificationReport r;
  r.variant = "somaml";
  r.trials = 3;
  r.max_rel_err = 2.5e-9;
  r.tolerance = 1e-5;
  r.failures.push_back({2, 0.5, "exceeds tolerance", "[meta]\nn_way = 2\n"});
  const auto j = nlohmann::json::parse(report_to_json(r));
  EXPECT_EQ(j["variant"], "somaml");
  EXPECT_EQ(j["trials"], 3);
  EXPECT_DOUBLE_EQ(j["max_rel_err"].get<double>(), 2.5e-9);
  ASSERT_EQ(j["failures"].size(), 1u);
  EXPECT_EQ(j["failures"][0]["trial"], 2);
  EXPECT_EQ(j["failures"][0]["instance"], "[meta]\nn_way = 2\n");
  EXPECT_FALSE(r.passed());
}
