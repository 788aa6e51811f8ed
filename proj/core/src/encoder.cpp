#include "metacon/encoder.hpp"

#include <atomic>
#include <cmath>

#include "metacon/errors.hpp"

namespace metacon {

EncoderParams::EncoderParams(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  METACON_REQUIRE(!layers_.empty(), "EncoderParams: at least one layer is required");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    METACON_REQUIRE(layers_[i].bias.size() == layers_[i].out_dim(), "EncoderParams: bias length mismatch");
    if (i > 0)
      METACON_REQUIRE(layers_[i].in_dim() == layers_[i - 1].out_dim(), "EncoderParams: layer shapes do not compose");
  }
}

EncoderParams::EncoderParams(const EncoderParams& other) : layers_(other.layers_) {}

EncoderParams::EncoderParams(EncoderParams&& other) noexcept : layers_(std::move(other.layers_)) {
  other.revision_ = next_revision();
}

EncoderParams& EncoderParams::operator=(const EncoderParams& other) {
  layers_ = other.layers_;
  revision_ = next_revision();
  return *this;
}

EncoderParams& EncoderParams::operator=(EncoderParams&& other) noexcept {
  layers_ = std::move(other.layers_);
  revision_ = next_revision();
  other.revision_ = next_revision();
  return *this;
}

std::uint64_t EncoderParams::next_revision() noexcept {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::size_t EncoderParams::input_dim() const noexcept {
  return layers_.empty() ? 0 : layers_.front().in_dim();
}

std::size_t EncoderParams::feature_dim() const noexcept {
  return layers_.empty() ? 0 : layers_.back().out_dim();
}

std::vector<std::size_t> EncoderParams::layer_sizes() const {
  std::vector<std::size_t> sizes;
  if (layers_.empty()) return sizes;
  sizes.push_back(input_dim());
  for (const auto& l : layers_) sizes.push_back(l.out_dim());
  return sizes;
}

std::size_t EncoderParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

DenseLayer& EncoderParams::mutable_layer(std::size_t i) {
  revision_ = next_revision();
  return layers_.at(i);
}

namespace {

Vector flatten_layers(const std::vector<DenseLayer>& layers) {
  Vector out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

}  // namespace

Vector EncoderParams::flat() const { return flatten_layers(layers_); }

void EncoderParams::assign_flat(std::span<const double> values) {
  METACON_REQUIRE(values.size() == parameter_count(), "EncoderParams::assign_flat: length mismatch");
  revision_ = next_revision();
  std::size_t pos = 0;
  for (auto& l : layers_) {
    for (double& w : l.weight.data()) w = values[pos++];
    for (double& b : l.bias) b = values[pos++];
  }
}

EncoderGradient EncoderGradient::zeros_like(const EncoderParams& params) {
  EncoderGradient g;
  for (const auto& l : params.layers())
    g.layers.push_back({Matrix(l.out_dim(), l.in_dim()), Vector(l.out_dim(), 0.0)});
  return g;
}

bool EncoderGradient::congruent_with(const EncoderParams& params) const {
  if (layers.size() != params.num_layers()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = params.layer(i);
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size())
      return false;
  }
  return true;
}

EncoderGradient& EncoderGradient::operator+=(const EncoderGradient& other) {
  METACON_REQUIRE(layers.size() == other.layers.size(), "EncoderGradient +=: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    axpy(1.0, other.layers[i].bias, layers[i].bias);
  }
  return *this;
}

EncoderGradient& EncoderGradient::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    for (double& b : l.bias) b *= s;
  }
  return *this;
}

Vector EncoderGradient::flat() const { return flatten_layers(layers); }

double EncoderGradient::norm() const { return metacon::norm(flat()); }

ForwardResult forward(const EncoderParams& params, std::span<const double> x) {
  METACON_REQUIRE(params.num_layers() > 0, "forward: encoder has no layers");
  METACON_REQUIRE(x.size() == params.input_dim(), "forward: input length does not match encoder");
  ForwardResult out;
  out.tape.params = &params;
  out.tape.revision = params.revision();
  out.tape.inputs.emplace_back(x.begin(), x.end());
  const std::size_t n = params.num_layers();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = params.layer(i);
    Vector z = matvec(l.weight, out.tape.inputs.back());
    axpy(1.0, l.bias, z);
    if (i + 1 < n) {
      Vector a(z.size());
      for (std::size_t j = 0; j < z.size(); ++j) a[j] = z[j] > 0.0 ? z[j] : 0.0;
      out.tape.pre_activations.push_back(std::move(z));
      out.tape.inputs.push_back(std::move(a));
    } else {
      out.tape.inputs.push_back(std::move(z));
    }
  }
  out.feature = out.tape.inputs.back();
  return out;
}

Vector encode(const EncoderParams& params, std::span<const double> x) {
  return forward(params, x).feature;
}

BackwardResult backward(const ForwardTape& tape, std::span<const double> upstream) {
  METACON_REQUIRE(tape.params != nullptr && !tape.inputs.empty(), "backward: missing tape");
  const EncoderParams& params = *tape.params;
  METACON_REQUIRE(tape.revision == params.revision(), "backward: tape is stale (parameters changed since forward)");
  METACON_REQUIRE(tape.inputs.size() == params.num_layers() + 1, "backward: tape does not match encoder depth");
  METACON_REQUIRE(upstream.size() == params.feature_dim(), "backward: upstream length mismatch");
  METACON_REQUIRE(all_finite(upstream), "backward: non-finite upstream");

  BackwardResult out{EncoderGradient::zeros_like(params), {}};
  Vector delta(upstream.begin(), upstream.end());
  for (std::size_t i = params.num_layers(); i-- > 0;) {
    const auto& l = params.layer(i);
    if (i + 1 < params.num_layers()) {
      const Vector& z = tape.pre_activations[i];
      for (std::size_t j = 0; j < delta.size(); ++j)
        if (!(z[j] > 0.0)) delta[j] = 0.0;
    }
    auto& g = out.grad.layers[i];
    const Vector& in = tape.inputs[i];
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      if (delta[r] == 0.0) continue;
      axpy(delta[r], in, g.weight.row(r));
    }
    g.bias = delta;
    delta = matvec_transposed(l.weight, delta);
  }
  out.input_grad = std::move(delta);
  return out;
}

EncoderParams init_encoder(std::span<const std::size_t> sizes, RngStream& rng) {
  METACON_REQUIRE(sizes.size() >= 2, "init_encoder: need at least input and output sizes");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t in = sizes[i];
    const std::size_t out = sizes[i + 1];
    METACON_REQUIRE(in > 0 && out > 0, "init_encoder: zero-width layer");
    Matrix w(out, in, draw_gaussian(rng, out * in, 0.0, 1.0 / std::sqrt(static_cast<double>(in))));
    layers.push_back({std::move(w), Vector(out, 0.0)});
  }
  return EncoderParams(std::move(layers));
}

}  // namespace metacon
