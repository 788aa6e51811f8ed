#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metacon/numerics.hpp"

namespace metacon {

struct DenseLayer {
  Matrix weight;  // (out, in)
  Vector bias;    // out

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

/// Fully connected feature extractor. Rectifier after every layer except the
/// last. Mutation goes through `mutable_layer` / `assign_flat`, which bump a
/// revision counter so tapes recorded against older parameters are rejected.
class EncoderParams {
 public:
  EncoderParams() = default;
  explicit EncoderParams(std::vector<DenseLayer> layers);
  EncoderParams(const EncoderParams& other);
  EncoderParams(EncoderParams&& other) noexcept;
  EncoderParams& operator=(const EncoderParams& other);
  EncoderParams& operator=(EncoderParams&& other) noexcept;
  ~EncoderParams() = default;

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t input_dim() const noexcept;
  std::size_t feature_dim() const noexcept;
  /// Layer sizes [in, hidden..., N_f].
  std::vector<std::size_t> layer_sizes() const;
  std::size_t parameter_count() const noexcept;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  DenseLayer& mutable_layer(std::size_t i);

  /// Parameters flattened layer by layer: weight row-major, then bias.
  Vector flat() const;
  void assign_flat(std::span<const double> values);

  std::uint64_t revision() const noexcept { return revision_; }

  bool operator==(const EncoderParams& other) const { return layers_ == other.layers_; }

 private:
  std::vector<DenseLayer> layers_;
  // Process-unique; every construction, assignment or mutation takes a fresh value.
  std::uint64_t revision_ = next_revision();

  static std::uint64_t next_revision() noexcept;
};

/// dL/dphi, shape-congruent with the EncoderParams it came from.
struct EncoderGradient {
  std::vector<DenseLayer> layers;

  static EncoderGradient zeros_like(const EncoderParams& params);
  bool congruent_with(const EncoderParams& params) const;
  EncoderGradient& operator+=(const EncoderGradient& other);
  EncoderGradient& operator*=(double s);
  Vector flat() const;
  double norm() const;
};

/// Activation record for one forward pass.
struct ForwardTape {
  const EncoderParams* params = nullptr;
  std::uint64_t revision = 0;
  /// inputs[i] is the input to layer i; inputs.back() is the network output.
  std::vector<Vector> inputs;
  /// Pre-activation of each hidden layer (rectifier mask).
  std::vector<Vector> pre_activations;

  bool valid_for(const EncoderParams& p) const noexcept {
    return params == &p && revision == p.revision() && !inputs.empty();
  }
};

struct ForwardResult {
  Vector feature;
  ForwardTape tape;
};

struct BackwardResult {
  EncoderGradient grad;
  Vector input_grad;
};

ForwardResult forward(const EncoderParams& params, std::span<const double> x);
/// Feature only, no tape.
Vector encode(const EncoderParams& params, std::span<const double> x);

/// Reverse-mode gradient of dot(feature, upstream) with respect to the
/// parameters and the input. The tape must come from `forward` on parameters
/// that have not been mutated since.
BackwardResult backward(const ForwardTape& tape, std::span<const double> upstream);

/// Weights ~ N(0, 1/fan_in), biases zero. `sizes` = [in, hidden..., N_f].
EncoderParams init_encoder(std::span<const std::size_t> sizes, RngStream& rng);

}  // namespace metacon
