#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "metacon/episodes.hpp"
#include "metacon/meta.hpp"
#include "metacon/numerics.hpp"

namespace metacon {

enum class FeatureSet { support, query };

struct FeatureGroup {
  FeatureSet set = FeatureSet::support;
  std::size_t class_index = 0;
  std::vector<Vector> features;
};

struct GroupLabel {
  FeatureSet set = FeatureSet::support;
  std::size_t class_index = 0;
  bool operator==(const GroupLabel&) const = default;
};

/// Averaged pairwise cosine similarities between feature groups. Support and
/// query groups of the same class are separate rows.
struct SimilarityHeatmap {
  std::vector<GroupLabel> labels;
  Matrix matrix;
};

/// Entry (a, b) is the mean cosine similarity over all cross pairs; diagonal
/// entries exclude self-pairs (a singleton group gets 1). Throws
/// DegenerateInput on a zero-norm feature, ContractViolation on an empty group.
SimilarityHeatmap similarity_heatmap(std::span<const FeatureGroup> groups);

/// Mean of same-class entries minus mean of different-class entries.
double contrast_score(const SimilarityHeatmap& h);

/// Groups in [support c0..c(N-1), query c0..c(N-1)] order from an episode.
std::vector<FeatureGroup> group_features(const EncoderParams& encoder, const Episode& episode, std::size_t n_way);

std::string heatmap_to_json(const SimilarityHeatmap& h);
SimilarityHeatmap heatmap_from_json(const std::string& text);

struct SpectralReport {
  std::size_t channel = 0;
  double eta = 0.0;
  Matrix h;
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns
  Vector contraction;   // 1 - eta * lambda_i
};

/// H = E_s(g_s,k at w0) phi(s) phi(s)^T and its eigen-structure.
SpectralReport preconditioner_report(std::span<const LabeledFeature> support, const LinearHead& head0,
                                     std::size_t channel, double eta);

/// (I - eta H) v.
Vector apply_preconditioner(const SpectralReport& report, std::span<const double> v);

std::string spectral_reports_to_json(std::span<const SpectralReport> reports);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_episode;
};

/// Adapts a copy of the head on each support set for `steps` inner steps
/// (optionally zeroing it first) and scores argmax predictions on the query
/// set; ties go to the lowest channel.
EvalResult evaluate(const MetaModel& model, std::span<const Episode> episodes, const MetaConfig& config,
                    std::size_t steps, bool zero_head_first, std::size_t threads = 1);

/// Both evaluation modes over the same episodes, sharing the encoder passes.
struct PairedEval {
  EvalResult raw;
  EvalResult zeroed;
};
PairedEval evaluate_paired(const MetaModel& model, std::span<const Episode> episodes, const MetaConfig& config,
                           std::size_t steps, std::size_t threads = 1);

/// Standard error of a proportion p estimated from n Bernoulli trials.
double binomial_stderr(double p, std::size_t n);

}  // namespace metacon
