#include "metacon/meta_config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "metacon/errors.hpp"

namespace metacon {

namespace {

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Parses the argument of "name(x)"; returns false if `text` is not of that form.
bool parse_call(std::string_view text, std::string_view name, double& arg) {
  if (text.size() < name.size() + 2 || text.substr(0, name.size()) != name) return false;
  if (text[name.size()] != '(' || text.back() != ')') return false;
  const std::string inner(text.substr(name.size() + 1, text.size() - name.size() - 2));
  try {
    std::size_t used = 0;
    arg = std::stod(inner, &used);
    return used == inner.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

void MetaConfig::validate() const {
  if (n_way < 2) throw ConfigError("n_way", "must be at least 2");
  if (n_shot == 0) throw ConfigError("n_shot", "must be positive");
  if (n_query == 0) throw ConfigError("n_query", "must be positive");
  if (n_batch == 0) throw ConfigError("n_batch", "must be positive");
  if (n_step == 0) throw ConfigError("n_step", "must be positive");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta", "must be finite and non-negative");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("rho", "must be finite and positive");
  if (variant == Variant::somaml && n_step != 1)
    throw ConfigError("n_step", "somaml closed form requires n_step = 1");
  if (head_init.kind == HeadInitPolicy::Kind::scaled && !(head_init.factor >= 0.0))
    throw ConfigError("head_init", "scale factor must be non-negative");
  if (!(head_init.stddev >= 0.0) || !std::isfinite(head_init.stddev))
    throw ConfigError("head_init", "random stddev must be finite and non-negative");
  if (outer_optimizer.kind == OuterOptimizer::Kind::adam && !(outer_optimizer.learning_rate > 0.0))
    throw ConfigError("outer_optimizer", "adam learning rate must be positive");
}

std::string to_string(Variant v) { return v == Variant::fomaml ? "fomaml" : "somaml"; }

std::string to_string(const HeadInitPolicy& p) {
  switch (p.kind) {
    case HeadInitPolicy::Kind::random:
      return p.stddev > 0.0 ? "random(" + format_real(p.stddev) + ")" : "random";
    case HeadInitPolicy::Kind::scaled: return "scaled(" + format_real(p.factor) + ")";
    case HeadInitPolicy::Kind::zero: return "zero";
    case HeadInitPolicy::Kind::zeroing_trick: return "zeroing_trick";
  }
  return "random";
}

std::string to_string(const OuterOptimizer& o) {
  if (o.kind == OuterOptimizer::Kind::plain_sgd) return "plain_sgd";
  return "adam(" + format_real(o.learning_rate) + ")";
}

Variant parse_variant(std::string_view text) {
  if (text == "fomaml") return Variant::fomaml;
  if (text == "somaml") return Variant::somaml;
  throw ConfigError("variant", "expected fomaml or somaml, got '" + std::string(text) + "'");
}

HeadInitPolicy parse_head_init(std::string_view text) {
  if (text == "random") return HeadInitPolicy::random();
  if (text == "zero") return HeadInitPolicy::zero();
  if (text == "zeroing_trick") return HeadInitPolicy::zeroing_trick();
  double c = 0.0;
  if (parse_call(text, "scaled", c) && c >= 0.0) return HeadInitPolicy::scaled(c);
  if (parse_call(text, "random", c) && c > 0.0) return HeadInitPolicy::random(c);
  throw ConfigError("head_init", "expected random, random(stddev), scaled(c), zero or zeroing_trick, got '" +
                                     std::string(text) + "'");
}

OuterOptimizer parse_outer_optimizer(std::string_view text) {
  if (text == "plain_sgd") return OuterOptimizer::plain_sgd();
  double lr = 0.0;
  if (parse_call(text, "adam", lr) && lr > 0.0) return OuterOptimizer::adam(lr);
  throw ConfigError("outer_optimizer", "expected plain_sgd or adam(lr), got '" + std::string(text) + "'");
}

}  // namespace metacon
