#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "metacon/analysis.hpp"
#include "metacon/errors.hpp"
#include "test_util.hpp"

using namespace metacon;
using metacon::testutil::random_matrix;

namespace {

FeatureGroup group(FeatureSet set, std::size_t c, std::vector<Vector> f) { return {set, c, std::move(f)}; }

// Exhaustive pairwise mean of cosines, recomputing norms per pair.
double brute_pair_mean(const std::vector<Vector>& a, const std::vector<Vector>& b, bool same_group) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (same_group && i == j) continue;
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t d = 0; d < a[i].size(); ++d) {
        ab += a[i][d] * b[j][d];
        aa += a[i][d] * a[i][d];
        bb += b[j][d] * b[j][d];
      }
      sum += ab / std::sqrt(aa * bb);
      ++n;
    }
  return n ? sum / n : 1.0;
}

MetaConfig config5(double eta) {
  MetaConfig c;
  c.n_way = 5;
  c.n_shot = 5;
  c.n_query = 15;
  c.eta = eta;
  return c;
}

}  // namespace

TEST(Heatmap, IdenticalFeaturesGiveAllOnes) {
  const Vector v{0.2, -1.0, 3.0};
  const std::vector<FeatureGroup> g{group(FeatureSet::support, 0, {v, v}), group(FeatureSet::query, 1, {v, v, v})};
  const auto h = similarity_heatmap(g);
  for (double x : h.matrix.data()) EXPECT_NEAR(x, 1.0, 1e-15);
}

TEST(Heatmap, OrthogonalClustersGiveZeroOffDiagonal) {
  const std::vector<FeatureGroup> g{group(FeatureSet::support, 0, {{1, 0}, {2, 0}}),
                                    group(FeatureSet::support, 1, {{0, 1}, {0, 3}})};
  const auto h = similarity_heatmap(g);
  EXPECT_EQ(h.matrix(0, 1), 0.0);
  EXPECT_EQ(h.matrix(1, 0), 0.0);
  EXPECT_NEAR(h.matrix(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(contrast_score(h), 1.0, 1e-15);
}

TEST(Heatmap, MatchesBruteForcePairEnumeration) {
  RngStream rng(1);
  std::vector<FeatureGroup> g;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<Vector> f;
    for (int i = 0; i < 3; ++i) f.push_back(draw_gaussian(rng, 4, 0.0, 1.0));
    g.push_back(group(c % 2 ? FeatureSet::query : FeatureSet::support, c, f));
  }
  g.push_back(group(FeatureSet::query, 0, {draw_gaussian(rng, 4, 0.0, 1.0)}));
  const auto h = similarity_heatmap(g);
  ASSERT_EQ(h.matrix.rows(), 4u);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      EXPECT_NEAR(h.matrix(a, b), brute_pair_mean(g[a].features, g[b].features, a == b), 1e-12);
  EXPECT_EQ(h.matrix(3, 3), 1.0);  // singleton group
  EXPECT_EQ(h.labels[1], (GroupLabel{FeatureSet::query, 1}));
}

TEST(Heatmap, Errors) {
  EXPECT_THROW(similarity_heatmap(std::vector<FeatureGroup>{}), ContractViolation);
  EXPECT_THROW(similarity_heatmap(std::vector<FeatureGroup>{group(FeatureSet::support, 0, {})}), ContractViolation);
  EXPECT_THROW(similarity_heatmap(std::vector<FeatureGroup>{group(FeatureSet::support, 0, {{0, 0}})}),
               DegenerateInput);
}

TEST(ContrastScore, Examples) {
  SimilarityHeatmap h;
  h.labels = {{FeatureSet::support, 0}, {FeatureSet::support, 1}, {FeatureSet::query, 0}, {FeatureSet::query, 1}};
  h.matrix = Matrix(4, 4, 1.0);
  EXPECT_EQ(contrast_score(h), 0.0);

  RngStream rng(2);
  h.matrix = random_matrix(rng, 4, 4);
  // Two-pass oracle: collect entries first, then average.
  std::vector<double> same, diff;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      (h.labels[a].class_index == h.labels[b].class_index ? same : diff).push_back(h.matrix(a, b));
  double ms = 0, md = 0;
  for (double v : same) ms += v / same.size();
  for (double v : diff) md += v / diff.size();
  EXPECT_NEAR(contrast_score(h), ms - md, 1e-12);
}

TEST(Heatmap, JsonRoundTrip) {
  RngStream rng(3);
  SimilarityHeatmap h;
  h.labels = {{FeatureSet::support, 0}, {FeatureSet::query, 4}};
  h.matrix = random_matrix(rng, 2, 2);
  const auto text = heatmap_to_json(h);
  const auto back = heatmap_from_json(text);
  EXPECT_EQ(back.labels, h.labels);
  EXPECT_EQ(back.matrix, h.matrix);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["labels"][1], "query:4");
  EXPECT_THROW(heatmap_from_json("{"), FormatError);
  EXPECT_THROW(heatmap_from_json(R"({"labels":["support:0"],"matrix":[[1,2]]})"), FormatError);
  EXPECT_THROW(heatmap_from_json(R"({"labels":["train:0"],"matrix":[[1]]})"), FormatError);
}

TEST(GroupFeatures, OrderAndCounts) {
  RngStream rng(4);
  const auto enc = init_encoder(std::vector<std::size_t>{3, 4}, rng);
  Episode ep;
  ep.class_map = {7, 9};
  ep.support = {{{1, 0, 0}, 1}, {{0, 1, 0}, 0}};
  ep.query = {{{1, 1, 0}, 0}, {{0, 0, 1}, 1}, {{1, 0, 1}, 1}};
  const auto g = group_features(enc, ep, 2);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g[0].set, FeatureSet::support);
  EXPECT_EQ(g[1].class_index, 1u);
  EXPECT_EQ(g[2].set, FeatureSet::query);
  EXPECT_EQ(g[3].features.size(), 2u);
  EXPECT_EQ(g[1].features[0], encode(enc, Vector{1, 0, 0}));
}

TEST(Preconditioner, FeaturesAlongDiagonal) {
  const std::vector<LabeledFeature> s{{{1, 1}, 0}, {{2, 2}, 1}, {{-0.5, -0.5}, 0}};
  const auto rep = preconditioner_report(s, LinearHead::zeros(2, 2), 0, 0.1);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(rep.eigenvectors(0, 0)), r, 1e-12);
  EXPECT_NEAR(std::abs(rep.eigenvectors(1, 0)), r, 1e-12);
  EXPECT_NEAR(rep.eigenvalues[1], 0.0, 1e-12);
}

TEST(Preconditioner, SingleFeatureRankOne) {
  const auto rep = preconditioner_report(std::vector<LabeledFeature>{{{1, 0}, 0}}, LinearHead::zeros(2, 2), 1, 0.4);
  EXPECT_NEAR(rep.h(0, 0), 0.5, 1e-15);
  EXPECT_EQ(rep.h(0, 1), 0.0);
  EXPECT_EQ(rep.h(1, 1), 0.0);
  EXPECT_NEAR(rep.eigenvalues[0], 0.5, 1e-15);
  EXPECT_NEAR(rep.eigenvalues[1], 0.0, 1e-15);
  EXPECT_NEAR(rep.contraction[0], 0.8, 1e-15);
  EXPECT_NEAR(rep.contraction[1], 1.0, 1e-15);
}

TEST(Preconditioner, ContractionAlongTopDirection) {
  RngStream rng(5);
  const auto support = metacon::testutil::random_features(rng, 5, 3, 6);
  const LinearHead h0 = LinearHead::zeros(6, 5);
  const double eta = 0.2;
  const auto rep = preconditioner_report(support, h0, 2, eta);
  const Vector v = draw_gaussian(rng, 6, 0.0, 1.0);
  const Vector out = apply_preconditioner(rep, v);

  // Direct multiply oracle.
  Matrix p = Matrix::identity(6);
  p += rep.h * (-eta);
  EXPECT_LE(testutil::max_abs_diff(out, matvec(p, v)), 1e-10);

  const Vector top = rep.eigenvectors.column(0);
  EXPECT_NEAR(dot(out, top), (1.0 - eta * rep.eigenvalues[0]) * dot(v, top), 1e-10);
  for (double c : rep.contraction) EXPECT_LE(c, 1.0 + 1e-12);
  for (double l : rep.eigenvalues) EXPECT_GE(l, -1e-12);
  EXPECT_LT(rep.contraction[0], 1.0);
}

TEST(Preconditioner, SpectralJson) {
  const auto rep = preconditioner_report(std::vector<LabeledFeature>{{{1, 0}, 0}}, LinearHead::zeros(2, 2), 0, 0.1);
  const auto j = nlohmann::json::parse(spectral_reports_to_json(std::vector<SpectralReport>{rep}));
  ASSERT_TRUE(j.is_array());
  EXPECT_EQ(j[0]["channel"], 0);
  EXPECT_NEAR(j[0]["eigenvalues"][0].get<double>(), 0.5, 1e-15);
  EXPECT_EQ(j[0]["h"].size(), 2u);
}

TEST(Evaluate, UntrainedEncoderOnInseparableBankIsChance) {
  RngStream rng(6);
  const auto cfg = config5(0.1);
  const auto bank = make_bank(20, 8, 0.0, 1.0, rng);
  std::vector<Episode> eps;
  for (int i = 0; i < 400; ++i) eps.push_back(sample_episode(bank, cfg, rng));
  const auto m = init_model(std::vector<std::size_t>{8, 16, 8}, cfg, rng);
  const auto r = evaluate(m, eps, cfg, 5, false);
  const double sigma = binomial_stderr(0.2, 400 * 75);
  EXPECT_NEAR(r.accuracy, 0.2, 3 * sigma + 0.01);
  EXPECT_EQ(r.per_episode.size(), 400u);
}

TEST(Evaluate, ZeroHeadNoStepsIsUniform) {
  RngStream rng(7);
  const auto cfg = config5(0.1);
  const auto bank = make_bank(20, 8, 3.0, 1.0, rng);
  std::vector<Episode> eps;
  for (int i = 0; i < 50; ++i) eps.push_back(sample_episode(bank, cfg, rng));
  const auto m = init_model(std::vector<std::size_t>{8, 8}, cfg, rng);
  // Uniform logits pick channel 0, which is right for exactly one class in five.
  EXPECT_NEAR(evaluate(m, eps, cfg, 0, true).accuracy, 0.2, 1e-15);
}

TEST(Evaluate, ImprintingOnSeparatedBankIsAccurate) {
  RngStream rng(8);
  auto cfg = config5(0.5);
  const auto bank = make_bank(20, 8, 12.0, 1.0, rng);
  std::vector<Episode> eps;
  for (int i = 0; i < 400; ++i) eps.push_back(sample_episode(bank, cfg, rng));
  MetaModel m;
  m.encoder = EncoderParams({DenseLayer{Matrix::identity(8), Vector(8)}});
  m.head = LinearHead::zeros(8, 5);
  EXPECT_GE(evaluate(m, eps, cfg, 5, true).accuracy, 0.95);
}

TEST(Evaluate, PairedMatchesSeparateCallsAndLeavesModel) {
  RngStream rng(9);
  const auto cfg = config5(0.1);
  const auto bank = make_bank(20, 8, 2.0, 1.0, rng);
  std::vector<Episode> eps;
  for (int i = 0; i < 20; ++i) eps.push_back(sample_episode(bank, cfg, rng));
  const auto m = init_model(std::vector<std::size_t>{8, 16, 8}, cfg, rng);
  const auto copy = m;
  const auto p = evaluate_paired(m, eps, cfg, 3, 2);
  EXPECT_EQ(p.raw.per_episode, evaluate(m, eps, cfg, 3, false).per_episode);
  EXPECT_EQ(p.zeroed.per_episode, evaluate(m, eps, cfg, 3, true, 3).per_episode);
  EXPECT_EQ(m.head, copy.head);
  EXPECT_EQ(m.encoder, copy.encoder);
}

TEST(Analysis, HeatmapIsRotationInvariant) {
  RngStream rng(10);
  std::vector<FeatureGroup> g;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<Vector> f;
    for (int i = 0; i < 4; ++i) f.push_back(draw_gaussian(rng, 5, 0.0, 1.0));
    g.push_back(group(FeatureSet::support, c, f));
  }
  // Orthogonal matrix from the eigenvectors of a random symmetric matrix.
  const Matrix a = random_matrix(rng, 5, 5);
  const Matrix q = symmetric_eig(a + a.transposed()).vectors;
  auto rotated = g;
  for (auto& grp : rotated)
    for (auto& f : grp.features) f = matvec(q, f);
  const auto h1 = similarity_heatmap(g), h2 = similarity_heatmap(rotated);
  EXPECT_LE(testutil::max_abs_diff(h1.matrix.data(), h2.matrix.data()), 1e-12);
  EXPECT_NEAR(contrast_score(h1), contrast_score(h2), 1e-12);
}

TEST(BinomialStderr, Values) {
  EXPECT_DOUBLE_EQ(binomial_stderr(0.5, 100), 0.05);
  EXPECT_EQ(binomial_stderr(0.5, 0), 0.0);
  EXPECT_EQ(binomial_stderr(1.0, 10), 0.0);
}
