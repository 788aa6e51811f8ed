#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace metacon {

enum class Variant { fomaml, somaml };

/// How the linear head is initialized. `zeroing_trick` also zeroes the head
/// after every outer update.
struct HeadInitPolicy {
  enum class Kind { random, scaled, zero, zeroing_trick };

  Kind kind = Kind::random;
  /// Multiplier on the random draw for `scaled`; ignored otherwise.
  double factor = 1.0;
  /// Standard deviation of the random draw; 0 means 1/sqrt(N_f).
  double stddev = 0.0;

  static HeadInitPolicy random(double stddev = 0.0) { return {Kind::random, 1.0, stddev}; }
  static HeadInitPolicy scaled(double c) { return {Kind::scaled, c, 0.0}; }
  static HeadInitPolicy zero() { return {Kind::zero, 0.0, 0.0}; }
  static HeadInitPolicy zeroing_trick() { return {Kind::zeroing_trick, 0.0, 0.0}; }

  bool operator==(const HeadInitPolicy&) const = default;
};

struct OuterOptimizer {
  enum class Kind { plain_sgd, adam };

  Kind kind = Kind::adam;
  /// Adam step size. plain_sgd uses MetaConfig::rho instead.
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OuterOptimizer plain_sgd() { return {Kind::plain_sgd, 0.0}; }
  static OuterOptimizer adam(double lr) { return {Kind::adam, lr}; }

  bool operator==(const OuterOptimizer&) const = default;
};

struct MetaConfig {
  std::size_t n_way = 5;
  std::size_t n_shot = 1;
  std::size_t n_query = 15;
  std::size_t n_batch = 4;
  std::size_t n_step = 1;
  double eta = 0.01;  // inner-loop rate
  double rho = 0.001; // outer-loop rate for plain_sgd
  Variant variant = Variant::fomaml;
  HeadInitPolicy head_init = HeadInitPolicy::random();
  OuterOptimizer outer_optimizer = OuterOptimizer::adam(0.001);

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const MetaConfig&) const = default;
};

std::string to_string(Variant v);
std::string to_string(const HeadInitPolicy& p);
std::string to_string(const OuterOptimizer& o);

/// Inverse of to_string. Throw ConfigError on unknown spellings.
Variant parse_variant(std::string_view text);
HeadInitPolicy parse_head_init(std::string_view text);
OuterOptimizer parse_outer_optimizer(std::string_view text);

}  // namespace metacon
