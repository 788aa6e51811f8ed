#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "metacon/errors.hpp"
#include "metacon/experiment.hpp"

namespace metacon {

namespace {

// Desk-scale synthetic stand-ins for the published settings. Class means
// live in an 8-dimensional subspace of a 32-dimensional input, so the
// encoder has something to learn.
constexpr std::string_view kSyntheticBank = R"(
[encoder]
layers = 32 64 16

[bank]
train_classes = 64
test_classes = 20
input_dim = 32
informative_dims = 8
separation = 2.5
stddev = 1
)";

struct PresetDef {
  std::string_view name;
  std::string_view meta;
  std::string_view run;
};

constexpr PresetDef kPresets[] = {
    {"miniimagenet-like-1shot",
     R"(
[meta]
n_way = 5
n_shot = 1
n_query = 15
n_batch = 4
n_step = 5
eta = 0.01
rho = 0.001
variant = fomaml
head_init = random
outer_optimizer = adam(0.001)
)",
     R"(
[run]
iterations = 2000
eval_every = 100
eval_episodes = 400
test_steps = 5
zero_head_at_test = true
task_source = episodic
log_contrast = true
seed = 1
verify_trials = 100
)"},
    {"miniimagenet-like-5shot",
     R"(
[meta]
n_way = 5
n_shot = 5
n_query = 15
n_batch = 2
n_step = 5
eta = 0.01
rho = 0.001
variant = fomaml
head_init = random
outer_optimizer = adam(0.001)
)",
     R"(
[run]
iterations = 2000
eval_every = 100
eval_episodes = 400
test_steps = 5
zero_head_at_test = true
task_source = episodic
log_contrast = true
seed = 1
verify_trials = 100
)"},
    {"omniglot-like",
     R"(
[meta]
n_way = 5
n_shot = 1
n_query = 15
n_batch = 32
n_step = 1
eta = 0.4
rho = 0.001
variant = fomaml
head_init = random
outer_optimizer = adam(0.001)
)",
     R"(
[run]
iterations = 2000
eval_every = 100
eval_episodes = 500
test_steps = 1
zero_head_at_test = true
task_source = episodic
log_contrast = true
seed = 1
verify_trials = 100
)"},
    {"memorization-L12",
     R"(
[meta]
n_way = 5
n_shot = 1
n_query = 15
n_batch = 4
n_step = 5
eta = 0.01
rho = 0.001
variant = fomaml
head_init = random
outer_optimizer = adam(0.001)
)",
     R"(
[run]
iterations = 2000
eval_every = 100
eval_episodes = 400
test_steps = 5
zero_head_at_test = true
nme_L = 12
task_source = episodic
log_contrast = true
seed = 1
verify_trials = 100
)"},
};

const PresetDef* find_preset(std::string_view name) {
  for (const auto& p : kPresets)
    if (p.name == name) return &p;
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a finite real number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::set<std::string> kRequired = {"meta.eta", "meta.rho", "meta.n_step", "meta.variant", "meta.head_init"};

void apply(ExperimentConfig& c, const std::string& key, const std::string& v) {
  auto set_with = [&](auto fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      throw ConfigError(key, e.field().empty() ? msg : msg.substr(e.field().size() + 2));
    }
  };
  if (key == "meta.n_way") c.meta.n_way = parse_count(key, v);
  else if (key == "meta.n_shot") c.meta.n_shot = parse_count(key, v);
  else if (key == "meta.n_query") c.meta.n_query = parse_count(key, v);
  else if (key == "meta.n_batch") c.meta.n_batch = parse_count(key, v);
  else if (key == "meta.n_step") c.meta.n_step = parse_count(key, v);
  else if (key == "meta.eta") c.meta.eta = parse_real(key, v);
  else if (key == "meta.rho") c.meta.rho = parse_real(key, v);
  else if (key == "meta.variant") set_with([&] { c.meta.variant = parse_variant(v); });
  else if (key == "meta.head_init") set_with([&] { c.meta.head_init = parse_head_init(v); });
  else if (key == "meta.outer_optimizer") set_with([&] { c.meta.outer_optimizer = parse_outer_optimizer(v); });
  else if (key == "encoder.layers") {
    std::istringstream is(v);
    std::vector<std::size_t> sizes;
    std::string tok;
    while (is >> tok) sizes.push_back(parse_count(key, tok));
    c.encoder_sizes = std::move(sizes);
  } else if (key == "bank.train_classes") c.bank.train_classes = parse_count(key, v);
  else if (key == "bank.test_classes") c.bank.test_classes = parse_count(key, v);
  else if (key == "bank.input_dim") c.bank.input_dim = parse_count(key, v);
  else if (key == "bank.informative_dims") c.bank.informative_dims = parse_count(key, v);
  else if (key == "bank.separation") c.bank.separation = parse_real(key, v);
  else if (key == "bank.stddev") c.bank.stddev = parse_real(key, v);
  else if (key == "bank.train_csv_dir") c.bank.train_csv_dir = v;
  else if (key == "bank.test_csv_dir") c.bank.test_csv_dir = v;
  else if (key == "run.iterations") c.iterations = parse_count(key, v);
  else if (key == "run.eval_every") c.eval_every = parse_count(key, v);
  else if (key == "run.eval_episodes") c.eval_episodes = parse_count(key, v);
  else if (key == "run.test_steps") c.test_steps = parse_count(key, v);
  else if (key == "run.zero_head_at_test") c.zero_head_at_test = parse_bool(key, v);
  else if (key == "run.nme_L") c.nme_L = v == "none" ? std::nullopt : std::optional(parse_count(key, v));
  else if (key == "run.task_source") {
    if (v == "episodic") c.task_source = TaskSource::episodic;
    else if (v == "fixed_overfit") c.task_source = TaskSource::fixed_overfit;
    else throw ConfigError(key, "expected episodic or fixed_overfit, got '" + v + "'");
  } else if (key == "run.log_contrast") c.log_contrast = parse_bool(key, v);
  else if (key == "run.seed") c.seed = parse_count(key, v);
  else if (key == "run.verify_trials") c.verify_trials = parse_count(key, v);
  else throw ConfigError(key, "unknown configuration key");
}

struct ParseState {
  ExperimentConfig config;
  std::set<std::string> seen;
};

void parse_into(ParseState& st, std::string_view text, bool allow_preset) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (section != "meta" && section != "encoder" && section != "bank" && section != "run")
        throw ConfigError(section, "unknown section");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (section.empty()) {
      if (key != "preset" || !allow_preset) throw ConfigError(key, "key outside of a section");
      if (!st.seen.empty()) throw ConfigError("preset", "must come before any other key");
      const PresetDef* p = find_preset(value);
      if (p == nullptr) throw ConfigError("preset", "unknown preset '" + value + "'");
      parse_into(st, preset_text(value), false);
      continue;
    }
    const std::string full = section + "." + key;
    apply(st.config, full, value);
    st.seen.insert(full);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  meta.validate();
  if (encoder_sizes.size() < 2) throw ConfigError("encoder.layers", "need at least input and output sizes");
  if (std::find(encoder_sizes.begin(), encoder_sizes.end(), 0u) != encoder_sizes.end())
    throw ConfigError("encoder.layers", "layer sizes must be positive");
  if (bank.train_csv_dir.empty() && bank.test_csv_dir.empty() && encoder_sizes.front() != bank.input_dim)
    throw ConfigError("encoder.layers", "first size must equal bank.input_dim");
  if (bank.input_dim == 0) throw ConfigError("bank.input_dim", "must be positive");
  if (!(bank.stddev > 0.0)) throw ConfigError("bank.stddev", "must be positive");
  if (!(bank.separation >= 0.0)) throw ConfigError("bank.separation", "must be non-negative");
  if (bank.test_classes < meta.n_way) throw ConfigError("bank.test_classes", "must be at least n_way");
  if (bank.train_classes < meta.n_way) throw ConfigError("bank.train_classes", "must be at least n_way");
  if (eval_every == 0) throw ConfigError("run.eval_every", "must be positive");
  if (eval_episodes == 0) throw ConfigError("run.eval_episodes", "must be positive");
  if (verify_trials == 0) throw ConfigError("run.verify_trials", "must be positive");
  if (nme_L.has_value()) {
    if (*nme_L == 0) throw ConfigError("run.nme_L", "must be positive");
    if (bank.train_csv_dir.empty() && bank.train_classes != meta.n_way * *nme_L)
      throw ConfigError("bank.train_classes", "must equal n_way * nme_L for non-mutually-exclusive training");
  }
  if (task_source == TaskSource::fixed_overfit && meta.n_way != FixedOverfitSet::kClasses)
    throw ConfigError("run.task_source", "fixed_overfit requires n_way = 5");
}

ExperimentConfig parse_config(std::string_view text) {
  ParseState st;
  parse_into(st, text, true);
  for (const auto& key : kRequired)
    if (!st.seen.contains(key)) throw ConfigError(key, "required field is missing");
  st.config.validate();
  return st.config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[meta]\n"
     << "n_way = " << c.meta.n_way << "\n"
     << "n_shot = " << c.meta.n_shot << "\n"
     << "n_query = " << c.meta.n_query << "\n"
     << "n_batch = " << c.meta.n_batch << "\n"
     << "n_step = " << c.meta.n_step << "\n"
     << "eta = " << format_real(c.meta.eta) << "\n"
     << "rho = " << format_real(c.meta.rho) << "\n"
     << "variant = " << to_string(c.meta.variant) << "\n"
     << "head_init = " << to_string(c.meta.head_init) << "\n"
     << "outer_optimizer = " << to_string(c.meta.outer_optimizer) << "\n\n"
     << "[encoder]\nlayers =";
  for (auto s : c.encoder_sizes) os << " " << s;
  os << "\n\n[bank]\n"
     << "train_classes = " << c.bank.train_classes << "\n"
     << "test_classes = " << c.bank.test_classes << "\n"
     << "input_dim = " << c.bank.input_dim << "\n"
     << "informative_dims = " << c.bank.informative_dims << "\n"
     << "separation = " << format_real(c.bank.separation) << "\n"
     << "stddev = " << format_real(c.bank.stddev) << "\n";
  if (!c.bank.train_csv_dir.empty()) os << "train_csv_dir = " << c.bank.train_csv_dir << "\n";
  if (!c.bank.test_csv_dir.empty()) os << "test_csv_dir = " << c.bank.test_csv_dir << "\n";
  os << "\n[run]\n"
     << "iterations = " << c.iterations << "\n"
     << "eval_every = " << c.eval_every << "\n"
     << "eval_episodes = " << c.eval_episodes << "\n"
     << "test_steps = " << c.test_steps << "\n"
     << "zero_head_at_test = " << (c.zero_head_at_test ? "true" : "false") << "\n"
     << "nme_L = " << (c.nme_L ? std::to_string(*c.nme_L) : std::string("none")) << "\n"
     << "task_source = " << (c.task_source == TaskSource::episodic ? "episodic" : "fixed_overfit") << "\n"
     << "log_contrast = " << (c.log_contrast ? "true" : "false") << "\n"
     << "seed = " << c.seed << "\n"
     << "verify_trials = " << c.verify_trials << "\n";
  return os.str();
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

std::string preset_text(std::string_view name) {
  const PresetDef* p = find_preset(name);
  if (p == nullptr) throw ConfigError("preset", "unknown preset '" + std::string(name) + "'");
  std::string text = std::string(p->meta) + std::string(kSyntheticBank) + std::string(p->run);
  if (name == "memorization-L12") {
    // Meta-train bank sized exactly N_way * L.
    const auto pos = text.find("train_classes = 64");
    text.replace(pos, std::string_view("train_classes = 64").size(), "train_classes = 60");
  }
  return text;
}

ExperimentConfig preset(std::string_view name) { return parse_config(preset_text(name)); }

}  // namespace metacon
