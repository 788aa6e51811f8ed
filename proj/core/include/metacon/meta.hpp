#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metacon/encoder.hpp"
#include "metacon/episodes.hpp"
#include "metacon/meta_config.hpp"
#include "metacon/numerics.hpp"

namespace metacon {

/// Final linear layer, shape (N_f, N_way); column k is the weight of channel k.
struct LinearHead {
  Matrix w;

  static LinearHead zeros(std::size_t n_features, std::size_t n_way) { return {Matrix(n_features, n_way)}; }
  std::size_t n_features() const noexcept { return w.rows(); }
  std::size_t n_way() const noexcept { return w.cols(); }
  bool operator==(const LinearHead&) const = default;
};

/// A feature vector with its 0-based channel label.
struct LabeledFeature {
  Vector feature;
  std::size_t label = 0;
};

/// Softmax outputs on the support set at the head used by one inner step.
struct InnerStepRecord {
  std::vector<Vector> support_probs;  // [sample][channel], g at w^{i-1}
};

/// Result of inner-loop adaptation. Replaying the recorded steps over
/// `support` starting from `initial` reproduces `head`.
struct AdaptedHead {
  LinearHead initial;
  LinearHead head;
  std::vector<LabeledFeature> support;
  std::vector<InnerStepRecord> trajectory;
  double eta = 0.0;
};

/// Backpropagated error of one query sample, split into the part carried by
/// the pre-adaptation head and the part built from support features.
/// All three are descent directions (-dL/dphi(q)).
struct GradientDecomposition {
  Vector interference;
  Vector contrastive;
  Vector total;
};

/// The two SOMAML head terms as written with the preconditioner
/// I - eta E_s(g_k) phi phi^T, plus their sum.
struct SomamlHeadTerms {
  Matrix preconditioned;  // [I - eta H_k] E_q(1{k=u} - g_q,k) phi(q)
  Matrix cross_channel;   // eta sum_m E_s(g_m g_k phi phi^T) E_q(1{m=u} - g_q,m) phi(q)
  Matrix total;
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::size_t steps = 0;
};

struct MetaModel {
  EncoderParams encoder;
  LinearHead head;
  AdamState optimizer;
};

Vector head_logits(const LinearHead& head, std::span<const double> feature);
Vector head_probabilities(const LinearHead& head, std::span<const double> feature);

/// Mean cross-entropy of `samples` under `head`.
double cross_entropy(const LinearHead& head, std::span<const LabeledFeature> samples);

/// One gradient step of the support cross-entropy on the head:
/// w_k += eta * E_s (1{k=t} - g_s,k) phi(s).
LinearHead inner_step(const LinearHead& head, std::span<const LabeledFeature> support, double eta);

/// n_step inner steps on precomputed support features.
AdaptedHead adapt_features(const LinearHead& head0, std::vector<LabeledFeature> support, std::size_t n_step,
                           double eta);

/// Encodes the support samples with the (frozen) encoder, then adapts.
AdaptedHead adapt(const LinearHead& head0, const EncoderParams& encoder, std::span<const Sample> support,
                  const MetaConfig& config);

std::vector<LabeledFeature> encode_samples(const EncoderParams& encoder, std::span<const Sample> samples);

/// First-order head direction, column k = E_q (1{k=u} - g_q,k at w^N) phi(q).
/// This is -dL_Q/dw^N; the outer step adds +rho times it.
Matrix fomaml_head_grad(const AdaptedHead& adapted, std::span<const LabeledFeature> query);

/// Exact second-order head direction -dL_Q/dw^0 for a single inner step.
/// Throws UnsupportedConfiguration when the adaptation took more than one step.
Matrix somaml_head_grad(const LinearHead& head0, std::span<const LabeledFeature> support,
                        const AdaptedHead& adapted, std::span<const LabeledFeature> query, double eta);

/// Same quantity split into the preconditioned and cross-channel terms.
SomamlHeadTerms somaml_head_terms(const LinearHead& head0, std::span<const LabeledFeature> support,
                                  const AdaptedHead& adapted, std::span<const LabeledFeature> query, double eta);

enum class CovarianceWeight {
  prob,                // g_s,k
  prob_minus_square,   // g_s,k - g_s,k^2
};

/// E_s weight(s) phi(s) phi(s)^T for channel k at head0.
Matrix weighted_feature_covariance(std::span<const LabeledFeature> support, const LinearHead& head0,
                                   std::size_t channel, CovarianceWeight weight);

GradientDecomposition encoder_backprop_error(const LinearHead& head0, const AdaptedHead& adapted,
                                             const LabeledFeature& query_sample);

/// Per-task pieces of the outer-loop gradient.
struct TaskGradient {
  Matrix head_direction;     // ascent direction for w^0 (FOMAML or SOMAML)
  EncoderGradient encoder;   // dL_Q/dphi through the query features
  double query_loss = 0.0;
};

TaskGradient task_gradient(const MetaModel& model, const Episode& episode, const MetaConfig& config);

/// dL_Q/dphi for one episode: per query sample, backprop of -total from
/// encoder_backprop_error, averaged over the query set.
EncoderGradient encoder_meta_grad(const MetaModel& model, const Episode& episode, const MetaConfig& config);

/// Sum of task gradients over a batch, reduced in task order.
struct BatchGradient {
  Matrix head_direction;
  EncoderGradient encoder;
  double mean_query_loss = 0.0;
};

/// `threads` > 1 computes tasks concurrently; the reduction order (and so
/// the result) does not depend on it.
BatchGradient batch_gradient(const MetaModel& model, std::span<const Episode> batch, const MetaConfig& config,
                             std::size_t threads = 1);

/// One outer-loop update. Applies the configured optimizer to the summed
/// batch gradient, then zeroes the head under the zeroing trick.
MetaModel outer_update(const MetaModel& model, std::span<const Episode> batch, const MetaConfig& config,
                       std::size_t threads = 1, double* mean_query_loss = nullptr);

/// random: N(0, 1/N_f) unless a stddev is given; scaled(c): the same draw times c; zero / zeroing_trick: zeros.
LinearHead init_head(const HeadInitPolicy& policy, std::size_t n_features, std::size_t n_way, RngStream& rng);

MetaModel init_model(std::span<const std::size_t> encoder_sizes, const MetaConfig& config, RngStream& rng);

}  // namespace metacon
