#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metacon/encoder.hpp"
#include "metacon/episodes.hpp"
#include "metacon/meta.hpp"

namespace metacon {

/// Mean query cross-entropy after adapting `w0` on the support set. This is
/// the function the SOMAML head direction and the encoder gradient differentiate.
double meta_loss(const LinearHead& w0, const EncoderParams& encoder, const Episode& episode, const MetaConfig& config);

/// Same on precomputed features.
double meta_loss(const LinearHead& w0, std::span<const LabeledFeature> support, std::span<const LabeledFeature> query,
                 std::size_t n_step, double eta);

/// Deterministic scalar function of a flat parameter vector.
struct ScalarFieldProbe {
  std::function<double(std::span<const double>)> evaluate;
  std::size_t dimension = 0;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h. Throws
/// NumericError if the probe returns a non-finite value.
Vector fd_gradient(const ScalarFieldProbe& probe, std::span<const double> point, double h);

/// |a - fd| / (|fd| + 1e-8).
double relative_error(std::span<const double> analytic, std::span<const double> fd);

struct VerifyOptions {
  std::size_t trials = 100;
  double step = 1e-5;
  double tolerance = 1e-5;
  double eta = 0.1;
  std::vector<std::size_t> fomaml_steps{1, 2, 3};
  /// Bound for the identities checked alongside the gradients.
  double identity_tolerance = 1e-12;
};

struct VerificationFailure {
  std::size_t trial = 0;
  double rel_err = 0.0;
  std::string reason;
  /// Offending instance in the key = value config format, for replay.
  std::string instance;
};

struct VerificationReport {
  std::string variant;
  std::size_t trials = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  /// Largest |cross-channel term| over trials with w0 = 0 (SOMAML / encoder only).
  double max_vanishing_norm = 0.0;
  /// Largest |total - (interference + contrastive)|_inf (encoder only).
  double max_decomposition_gap = 0.0;
  /// Largest |interference| over zero-w0 trials (encoder only).
  double max_zeroed_interference = 0.0;
  std::vector<VerificationFailure> failures;

  bool passed() const noexcept { return failures.empty(); }
};

/// Head-gradient closed forms under test. Defaults are the library ones;
/// tests swap in corrupted versions as a negative control.
struct HeadGradForms {
  std::function<Matrix(const AdaptedHead&, std::span<const LabeledFeature>)> fomaml = fomaml_head_grad;
  std::function<Matrix(const LinearHead&, std::span<const LabeledFeature>, const AdaptedHead&,
                       std::span<const LabeledFeature>, double)>
      somaml = somaml_head_grad;
};

/// FOMAML (one report per entry of options.fomaml_steps) against the FD
/// gradient at w^N with the adaptation held fixed, and SOMAML against the FD
/// gradient with respect to w^0 through the adaptation.
std::vector<VerificationReport> verify_head_grads(const VerifyOptions& options, RngStream& rng,
                                                  const HeadGradForms& forms = {});

/// encoder_meta_grad against the FD gradient over flattened encoder
/// parameters (query path; support features held at the base encoder), plus
/// the vanishing cross-channel term and the decomposition identity.
VerificationReport verify_encoder_grad(const VerifyOptions& options, RngStream& rng);

/// JSON {variant, trials, max_rel_err, failures: [...]} plus the auxiliary maxima.
std::string report_to_json(const VerificationReport& report);

}  // namespace metacon
