#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "metacon/meta_config.hpp"
#include "metacon/numerics.hpp"

namespace metacon {

/// One class of a bank: either an isotropic Gaussian generator or, when
/// `pool` is nonempty, a finite set of recorded samples.
struct ClassSource {
  Vector mean;
  double stddev = 1.0;
  std::vector<Vector> pool;
};

/// Pool of classes episodes are drawn from. Immutable after construction.
class ClassBank {
 public:
  ClassBank() = default;
  explicit ClassBank(std::vector<ClassSource> classes);

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t input_dim() const noexcept { return input_dim_; }
  const ClassSource& source(std::size_t c) const { return classes_.at(c); }

  /// `count` distinct draws from class `c`. Pool classes sample without replacement.
  std::vector<Vector> draw(std::size_t c, std::size_t count, RngStream& rng) const;

 private:
  std::vector<ClassSource> classes_;
  std::size_t input_dim_ = 0;
};

/// Class means on a sphere of radius `separation` inside the first
/// `informative_dims` coordinates (all of them when 0); isotropic noise
/// `stddev` in every coordinate.
ClassBank make_bank(std::size_t num_classes, std::size_t input_dim, double separation, double stddev,
                    RngStream& rng, std::size_t informative_dims = 0);

/// One CSV per class (rows = samples, comma separated, no header), loaded in
/// lexicographic filename order. Throws FormatError on malformed content.
ClassBank load_bank_csv_dir(const std::filesystem::path& dir);

struct Sample {
  Vector x;
  std::size_t label = 0;  // 0-based channel
};

struct Episode {
  std::vector<Sample> support;
  std::vector<Sample> query;
  /// class_map[label] = bank class index.
  std::vector<std::size_t> class_map;
};

/// Mutually exclusive episode: N_way distinct classes, labels assigned by a
/// fresh uniform permutation. Throws ContractViolation if the bank has fewer
/// than N_way classes.
Episode sample_episode(const ClassBank& bank, const MetaConfig& config, RngStream& rng);

/// Non-mutually-exclusive episode: label t always draws its class from bank
/// indices [t*L, (t+1)*L). Requires bank size == N_way * L.
Episode sample_nme_episode(const ClassBank& bank, const MetaConfig& config, std::size_t classes_per_label,
                           RngStream& rng);

/// Frozen 5-class set with 20 support and 20 query samples per class.
struct FixedOverfitSet {
  static constexpr std::size_t kClasses = 5;
  static constexpr std::size_t kPerSplit = 20;

  std::vector<std::size_t> bank_classes;
  std::vector<std::vector<Vector>> support;  // [class][sample]
  std::vector<std::vector<Vector>> query;

  /// The whole set as one episode under a fresh label permutation.
  Episode episode(RngStream& rng) const;
  /// The whole set with label == position in bank_classes.
  Episode unshuffled_episode() const;
};

FixedOverfitSet fixed_overfit_set(const ClassBank& bank, RngStream& rng);

}  // namespace metacon
