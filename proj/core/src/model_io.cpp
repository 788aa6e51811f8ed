#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "metacon/errors.hpp"
#include "metacon/experiment.hpp"

namespace metacon {

namespace {

constexpr std::string_view kVersionLine = "metacon-model 1";

void write_values(std::ostream& out, std::span<const double> values) {
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    out << (i ? " " : "") << buf;
  }
  out << '\n';
}

std::string expect_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(std::string("model file truncated before ") + what);
  return line;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

std::size_t parse_size(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size() || s[0] == '-') throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(std::string("model file: bad ") + what + " '" + s + "'");
  }
}

std::size_t keyed_size(std::istream& in, const char* key) {
  const auto t = tokens(expect_line(in, key));
  if (t.size() != 2 || t[0] != key) throw FormatError(std::string("model file: expected '") + key + " N'");
  return parse_size(t[1], key);
}

void read_row(std::istream& in, std::span<double> dst, const char* what) {
  const auto t = tokens(expect_line(in, what));
  if (t.size() != dst.size())
    throw FormatError(std::string("model file: ") + what + " row has " + std::to_string(t.size()) +
                      " values, expected " + std::to_string(dst.size()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t[i], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t[i].size() || !std::isfinite(v))
      throw FormatError(std::string("model file: bad ") + what + " value '" + t[i] + "'");
    dst[i] = v;
  }
}

}  // namespace

void write_model(std::ostream& out, const MetaModel& model) {
  out << kVersionLine << '\n' << "layers";
  for (auto s : model.encoder.layer_sizes()) out << ' ' << s;
  out << '\n' << "n_way " << model.head.n_way() << '\n' << "n_features " << model.head.n_features() << '\n';
  for (const auto& layer : model.encoder.layers()) {
    for (std::size_t r = 0; r < layer.weight.rows(); ++r) write_values(out, layer.weight.row(r));
    write_values(out, layer.bias);
  }
  for (std::size_t r = 0; r < model.head.w.rows(); ++r) write_values(out, model.head.w.row(r));
}

void save_model(const std::filesystem::path& path, const MetaModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write model file " + path.string());
  write_model(out, model);
  if (!out) throw FormatError("failed writing model file " + path.string());
}

MetaModel read_model(std::istream& in) {
  if (expect_line(in, "version line") != kVersionLine) throw FormatError("model file: missing or unknown version line");
  const auto t = tokens(expect_line(in, "layers"));
  if (t.size() < 3 || t[0] != "layers") throw FormatError("model file: expected 'layers' with at least two sizes");
  std::vector<std::size_t> sizes;
  for (std::size_t i = 1; i < t.size(); ++i) {
    sizes.push_back(parse_size(t[i], "layer size"));
    if (sizes.back() == 0) throw FormatError("model file: zero layer size");
  }
  const std::size_t n_way = keyed_size(in, "n_way");
  const std::size_t n_features = keyed_size(in, "n_features");
  if (n_way == 0) throw FormatError("model file: n_way must be positive");
  if (n_features != sizes.back()) throw FormatError("model file: n_features does not match the last layer size");

  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    DenseLayer layer{Matrix(sizes[l + 1], sizes[l]), Vector(sizes[l + 1])};
    for (std::size_t r = 0; r < layer.weight.rows(); ++r) read_row(in, layer.weight.row(r), "weight");
    read_row(in, layer.bias, "bias");
    layers.push_back(std::move(layer));
  }
  MetaModel model{EncoderParams(std::move(layers)), LinearHead::zeros(n_features, n_way), {}};
  for (std::size_t r = 0; r < n_features; ++r) read_row(in, model.head.w.row(r), "head");
  std::string rest;
  while (std::getline(in, rest))
    if (!tokens(rest).empty()) throw FormatError("model file: trailing content");
  return model;
}

MetaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read model file " + path.string());
  return read_model(in);
}

}  // namespace metacon
