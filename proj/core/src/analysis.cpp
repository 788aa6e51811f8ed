#include "metacon/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "metacon/errors.hpp"
#include "metacon/parallel.hpp"

namespace metacon {

SimilarityHeatmap similarity_heatmap(std::span<const FeatureGroup> groups) {
  METACON_REQUIRE(!groups.empty(), "similarity_heatmap: no groups");
  // Normalize once; cosine similarity is then a plain dot product.
  std::vector<std::vector<Vector>> unit(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    METACON_REQUIRE(!groups[g].features.empty(), "similarity_heatmap: empty group");
    for (const auto& f : groups[g].features) {
      const double n = norm(f);
      if (n == 0.0) throw DegenerateInput("similarity_heatmap: zero-norm feature");
      unit[g].push_back(scaled(f, 1.0 / n));
    }
  }

  SimilarityHeatmap h;
  h.matrix = Matrix(groups.size(), groups.size());
  for (const auto& g : groups) h.labels.push_back({g.set, g.class_index});
  for (std::size_t a = 0; a < groups.size(); ++a) {
    for (std::size_t b = a; b < groups.size(); ++b) {
      double sum = 0.0;
      std::size_t pairs = 0;
      for (std::size_t i = 0; i < unit[a].size(); ++i)
        for (std::size_t j = 0; j < unit[b].size(); ++j) {
          if (a == b && i == j) continue;
          sum += std::clamp(dot(unit[a][i], unit[b][j]), -1.0, 1.0);
          ++pairs;
        }
      const double v = pairs == 0 ? 1.0 : sum / static_cast<double>(pairs);
      h.matrix(a, b) = v;
      h.matrix(b, a) = v;
    }
  }
  return h;
}

double contrast_score(const SimilarityHeatmap& h) {
  double same = 0.0, diff = 0.0;
  std::size_t n_same = 0, n_diff = 0;
  for (std::size_t a = 0; a < h.labels.size(); ++a)
    for (std::size_t b = 0; b < h.labels.size(); ++b) {
      if (h.labels[a].class_index == h.labels[b].class_index) {
        same += h.matrix(a, b);
        ++n_same;
      } else {
        diff += h.matrix(a, b);
        ++n_diff;
      }
    }
  const double ms = n_same ? same / static_cast<double>(n_same) : 0.0;
  const double md = n_diff ? diff / static_cast<double>(n_diff) : 0.0;
  return ms - md;
}

std::vector<FeatureGroup> group_features(const EncoderParams& encoder, const Episode& episode, std::size_t n_way) {
  std::vector<FeatureGroup> groups;
  for (FeatureSet set : {FeatureSet::support, FeatureSet::query})
    for (std::size_t c = 0; c < n_way; ++c) groups.push_back({set, c, {}});
  for (const auto& s : episode.support) groups.at(s.label).features.push_back(encode(encoder, s.x));
  for (const auto& s : episode.query) groups.at(n_way + s.label).features.push_back(encode(encoder, s.x));
  return groups;
}

namespace {

std::string label_text(const GroupLabel& l) {
  return std::string(l.set == FeatureSet::support ? "support" : "query") + ":" + std::to_string(l.class_index);
}

GroupLabel parse_label(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw FormatError("heatmap label without ':': " + text);
  const std::string set = text.substr(0, colon);
  GroupLabel l;
  if (set == "support") l.set = FeatureSet::support;
  else if (set == "query") l.set = FeatureSet::query;
  else throw FormatError("heatmap label has unknown set: " + text);
  try {
    l.class_index = std::stoul(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw FormatError("heatmap label has bad class index: " + text);
  }
  return l;
}

nlohmann::ordered_json matrix_json(const Matrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

}  // namespace

std::string heatmap_to_json(const SimilarityHeatmap& h) {
  nlohmann::ordered_json j;
  j["labels"] = nlohmann::ordered_json::array();
  for (const auto& l : h.labels) j["labels"].push_back(label_text(l));
  j["matrix"] = matrix_json(h.matrix);
  return j.dump();
}

SimilarityHeatmap heatmap_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("heatmap JSON: ") + e.what());
  }
  if (!j.contains("labels") || !j.contains("matrix")) throw FormatError("heatmap JSON: missing labels or matrix");
  SimilarityHeatmap h;
  for (const auto& l : j["labels"]) h.labels.push_back(parse_label(l.get<std::string>()));
  const std::size_t n = h.labels.size();
  const auto& rows = j["matrix"];
  if (rows.size() != n) throw FormatError("heatmap JSON: matrix row count differs from labels");
  h.matrix = Matrix(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    if (rows[r].size() != n) throw FormatError("heatmap JSON: ragged matrix");
    for (std::size_t c = 0; c < n; ++c) h.matrix(r, c) = rows[r][c].get<double>();
  }
  return h;
}

SpectralReport preconditioner_report(std::span<const LabeledFeature> support, const LinearHead& head0,
                                     std::size_t channel, double eta) {
  SpectralReport rep;
  rep.channel = channel;
  rep.eta = eta;
  rep.h = weighted_feature_covariance(support, head0, channel, CovarianceWeight::prob);
  auto eig = symmetric_eig(rep.h);
  rep.eigenvalues = std::move(eig.values);
  rep.eigenvectors = std::move(eig.vectors);
  rep.contraction.resize(rep.eigenvalues.size());
  for (std::size_t i = 0; i < rep.eigenvalues.size(); ++i) rep.contraction[i] = 1.0 - eta * rep.eigenvalues[i];
  return rep;
}

Vector apply_preconditioner(const SpectralReport& report, std::span<const double> v) {
  Vector out(v.begin(), v.end());
  axpy(-report.eta, matvec(report.h, v), out);
  return out;
}

std::string spectral_reports_to_json(std::span<const SpectralReport> reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["channel"] = r.channel;
    j["eta"] = r.eta;
    j["eigenvalues"] = r.eigenvalues;
    j["contraction"] = r.contraction;
    j["eigenvectors"] = matrix_json(r.eigenvectors);
    j["h"] = matrix_json(r.h);
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

namespace {

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double episode_accuracy(const LinearHead& head0, std::vector<LabeledFeature> support,
                        std::span<const LabeledFeature> query, std::size_t steps, double eta) {
  LinearHead head = head0;
  if (steps > 0) head = adapt_features(head0, std::move(support), steps, eta).head;
  std::size_t correct = 0;
  for (const auto& q : query)
    if (argmax_lowest(head_logits(head, q.feature)) == q.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(query.size());
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

EvalResult evaluate(const MetaModel& model, std::span<const Episode> episodes, const MetaConfig& config,
                    std::size_t steps, bool zero_head_first, std::size_t threads) {
  EvalResult res;
  res.per_episode.resize(episodes.size());
  const LinearHead head0 = zero_head_first ? LinearHead::zeros(model.head.n_features(), model.head.n_way()) : model.head;
  parallel_for(episodes.size(), threads, [&](std::size_t i) {
    const auto& ep = episodes[i];
    METACON_REQUIRE(!ep.query.empty(), "evaluate: empty query set");
    res.per_episode[i] = episode_accuracy(head0, encode_samples(model.encoder, ep.support),
                                          encode_samples(model.encoder, ep.query), steps, config.eta);
  });
  res.accuracy = mean(res.per_episode);
  return res;
}

PairedEval evaluate_paired(const MetaModel& model, std::span<const Episode> episodes, const MetaConfig& config,
                           std::size_t steps, std::size_t threads) {
  PairedEval out;
  out.raw.per_episode.resize(episodes.size());
  out.zeroed.per_episode.resize(episodes.size());
  const LinearHead zero = LinearHead::zeros(model.head.n_features(), model.head.n_way());
  parallel_for(episodes.size(), threads, [&](std::size_t i) {
    const auto& ep = episodes[i];
    METACON_REQUIRE(!ep.query.empty(), "evaluate: empty query set");
    auto support = encode_samples(model.encoder, ep.support);
    const auto query = encode_samples(model.encoder, ep.query);
    out.raw.per_episode[i] = episode_accuracy(model.head, support, query, steps, config.eta);
    out.zeroed.per_episode[i] = episode_accuracy(zero, std::move(support), query, steps, config.eta);
  });
  out.raw.accuracy = mean(out.raw.per_episode);
  out.zeroed.accuracy = mean(out.zeroed.per_episode);
  return out;
}

double binomial_stderr(double p, std::size_t n) {
  if (n == 0) return 0.0;
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n));
}

}  // namespace metacon
