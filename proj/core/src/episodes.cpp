#include "metacon/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "metacon/errors.hpp"

namespace metacon {

ClassBank::ClassBank(std::vector<ClassSource> classes) : classes_(std::move(classes)) {
  METACON_REQUIRE(!classes_.empty(), "ClassBank: no classes");
  input_dim_ = classes_.front().pool.empty() ? classes_.front().mean.size() : classes_.front().pool.front().size();
  METACON_REQUIRE(input_dim_ > 0, "ClassBank: zero input dimension");
  for (const auto& c : classes_) {
    if (c.pool.empty()) {
      METACON_REQUIRE(c.mean.size() == input_dim_, "ClassBank: class mean length differs");
      METACON_REQUIRE(c.stddev > 0.0, "ClassBank: class stddev must be positive");
    } else {
      for (const auto& s : c.pool) METACON_REQUIRE(s.size() == input_dim_, "ClassBank: pooled sample length differs");
    }
  }
}

std::vector<Vector> ClassBank::draw(std::size_t c, std::size_t count, RngStream& rng) const {
  const ClassSource& src = source(c);
  std::vector<Vector> out;
  out.reserve(count);
  if (src.pool.empty()) {
    for (std::size_t i = 0; i < count; ++i) {
      Vector x = draw_gaussian(rng, input_dim_, 0.0, src.stddev);
      axpy(1.0, src.mean, x);
      out.push_back(std::move(x));
    }
    return out;
  }
  METACON_REQUIRE(src.pool.size() >= count, "ClassBank::draw: class pool smaller than requested draws");
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(src.pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(src.pool[idx[i]]);
  }
  return out;
}

ClassBank make_bank(std::size_t num_classes, std::size_t input_dim, double separation, double stddev,
                    RngStream& rng, std::size_t informative_dims) {
  METACON_REQUIRE(num_classes >= 1 && input_dim >= 1, "make_bank: need at least one class and one dimension");
  METACON_REQUIRE(stddev > 0.0, "make_bank: stddev must be positive");
  METACON_REQUIRE(separation >= 0.0, "make_bank: separation must be non-negative");
  const std::size_t d = informative_dims == 0 ? input_dim : std::min(informative_dims, input_dim);
  std::vector<ClassSource> classes;
  classes.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Vector dir = draw_gaussian(rng, d, 0.0, 1.0);
    double n = norm(dir);
    while (n == 0.0) {
      dir = draw_gaussian(rng, d, 0.0, 1.0);
      n = norm(dir);
    }
    Vector mean(input_dim, 0.0);
    for (std::size_t i = 0; i < d; ++i) mean[i] = separation * dir[i] / n;
    classes.push_back({std::move(mean), stddev, {}});
  }
  return ClassBank(std::move(classes));
}

ClassBank load_bank_csv_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError("bank directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no .csv class files in " + dir.string());

  std::vector<ClassSource> classes;
  std::size_t width = 0;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw FormatError("cannot read " + file.string());
    ClassSource src;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      Vector row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        try {
          std::size_t used = 0;
          row.push_back(std::stod(cell, &used));
          while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
          if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
          throw FormatError(file.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
        }
      }
      if (!all_finite(row)) throw FormatError(file.string() + ":" + std::to_string(line_no) + ": non-finite value");
      if (width == 0) width = row.size();
      if (row.size() != width)
        throw FormatError(file.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                          " columns");
      src.pool.push_back(std::move(row));
    }
    if (src.pool.empty()) throw FormatError(file.string() + ": no samples");
    src.mean = Vector(width, 0.0);
    for (const auto& s : src.pool) axpy(1.0 / static_cast<double>(src.pool.size()), s, src.mean);
    classes.push_back(std::move(src));
  }
  return ClassBank(std::move(classes));
}

namespace {

void fill_episode(const ClassBank& bank, const MetaConfig& config, RngStream& rng, Episode& ep) {
  for (std::size_t label = 0; label < ep.class_map.size(); ++label) {
    // Fresh draws for support and query keep the two sets disjoint.
    auto draws = bank.draw(ep.class_map[label], config.n_shot + config.n_query, rng);
    for (std::size_t i = 0; i < draws.size(); ++i) {
      auto& dst = i < config.n_shot ? ep.support : ep.query;
      dst.push_back({std::move(draws[i]), label});
    }
  }
}

}  // namespace

Episode sample_episode(const ClassBank& bank, const MetaConfig& config, RngStream& rng) {
  METACON_REQUIRE(bank.num_classes() >= config.n_way, "sample_episode: bank has fewer classes than n_way");
  // Uniform N_way-subset via partial Fisher-Yates, then an independent label permutation.
  std::vector<std::size_t> idx(bank.num_classes());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < config.n_way; ++i) std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);
  std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(config.n_way));
  std::sort(chosen.begin(), chosen.end());
  const auto perm = random_permutation(rng, config.n_way);

  Episode ep;
  ep.class_map.resize(config.n_way);
  for (std::size_t i = 0; i < config.n_way; ++i) ep.class_map[perm[i]] = chosen[i];
  fill_episode(bank, config, rng, ep);
  return ep;
}

Episode sample_nme_episode(const ClassBank& bank, const MetaConfig& config, std::size_t classes_per_label,
                           RngStream& rng) {
  METACON_REQUIRE(classes_per_label >= 1, "sample_nme_episode: L must be positive");
  METACON_REQUIRE(bank.num_classes() == config.n_way * classes_per_label,
                  "sample_nme_episode: bank size must equal n_way * L");
  Episode ep;
  ep.class_map.resize(config.n_way);
  for (std::size_t t = 0; t < config.n_way; ++t) ep.class_map[t] = t * classes_per_label + rng.uniform_index(classes_per_label);
  fill_episode(bank, config, rng, ep);
  return ep;
}

FixedOverfitSet fixed_overfit_set(const ClassBank& bank, RngStream& rng) {
  METACON_REQUIRE(bank.num_classes() >= FixedOverfitSet::kClasses, "fixed_overfit_set: bank needs at least 5 classes");
  std::vector<std::size_t> idx(bank.num_classes());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < FixedOverfitSet::kClasses; ++i)
    std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);

  FixedOverfitSet set;
  for (std::size_t c = 0; c < FixedOverfitSet::kClasses; ++c) {
    set.bank_classes.push_back(idx[c]);
    auto draws = bank.draw(idx[c], 2 * FixedOverfitSet::kPerSplit, rng);
    set.support.emplace_back(draws.begin(), draws.begin() + FixedOverfitSet::kPerSplit);
    set.query.emplace_back(draws.begin() + FixedOverfitSet::kPerSplit, draws.end());
  }
  return set;
}

Episode FixedOverfitSet::episode(RngStream& rng) const {
  const auto perm = random_permutation(rng, bank_classes.size());
  Episode ep;
  ep.class_map.resize(bank_classes.size());
  for (std::size_t c = 0; c < bank_classes.size(); ++c) ep.class_map[perm[c]] = bank_classes[c];
  for (std::size_t c = 0; c < bank_classes.size(); ++c) {
    for (const auto& x : support[c]) ep.support.push_back({x, perm[c]});
    for (const auto& x : query[c]) ep.query.push_back({x, perm[c]});
  }
  return ep;
}

Episode FixedOverfitSet::unshuffled_episode() const {
  Episode ep;
  ep.class_map = bank_classes;
  for (std::size_t c = 0; c < bank_classes.size(); ++c) {
    for (const auto& x : support[c]) ep.support.push_back({x, c});
    for (const auto& x : query[c]) ep.query.push_back({x, c});
  }
  return ep;
}

}  // namespace metacon
