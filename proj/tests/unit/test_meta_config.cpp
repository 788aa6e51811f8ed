#include <cmath>

#include <gtest/gtest.h>

#include "metacon/errors.hpp"
#include "metacon/meta_config.hpp"

using namespace metacon;

namespace {

std::string field_of(const MetaConfig& c) {
  try {
    c.validate();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(MetaConfig, DefaultsValidate) {
  const MetaConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.n_way, 5u);
  EXPECT_EQ(c.n_query, 15u);
  EXPECT_EQ(c.variant, Variant::fomaml);
}

TEST(MetaConfig, ValidateNamesOffendingField) {
  MetaConfig c;
  c.n_way = 1;
  EXPECT_EQ(field_of(c), "n_way");
  c = {};
  c.n_shot = 0;
  EXPECT_EQ(field_of(c), "n_shot");
  c = {};
  c.n_query = 0;
  EXPECT_EQ(field_of(c), "n_query");
  c = {};
  c.n_batch = 0;
  EXPECT_EQ(field_of(c), "n_batch");
  c = {};
  c.n_step = 0;
  EXPECT_EQ(field_of(c), "n_step");
  c = {};
  c.eta = -0.1;
  EXPECT_EQ(field_of(c), "eta");
  c.eta = std::nan("");
  EXPECT_EQ(field_of(c), "eta");
  c = {};
  c.rho = 0.0;
  EXPECT_EQ(field_of(c), "rho");
  c = {};
  c.head_init = HeadInitPolicy::scaled(-1.0);
  EXPECT_EQ(field_of(c), "head_init");
  c = {};
  c.outer_optimizer = OuterOptimizer::adam(0.0);
  EXPECT_EQ(field_of(c), "outer_optimizer");
}

TEST(MetaConfig, SecondOrderRequiresSingleStep) {
  MetaConfig c;
  c.variant = Variant::somaml;
  EXPECT_NO_THROW(c.validate());
  c.n_step = 2;
  EXPECT_EQ(field_of(c), "n_step");
}

TEST(MetaConfig, ZeroEtaIsAllowed) {
  MetaConfig c;
  c.eta = 0.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Spellings, RoundTrip) {
  for (const auto& p : {HeadInitPolicy::random(), HeadInitPolicy::random(0.25), HeadInitPolicy::scaled(0.5),
                        HeadInitPolicy::scaled(0.0), HeadInitPolicy::zero(), HeadInitPolicy::zeroing_trick()})
    EXPECT_EQ(parse_head_init(to_string(p)), p) << to_string(p);
  for (auto v : {Variant::fomaml, Variant::somaml}) EXPECT_EQ(parse_variant(to_string(v)), v);
  for (const auto& o : {OuterOptimizer::plain_sgd(), OuterOptimizer::adam(0.001), OuterOptimizer::adam(3e-4)})
    EXPECT_EQ(parse_outer_optimizer(to_string(o)), o);
}

TEST(Spellings, ExactText) {
  EXPECT_EQ(to_string(HeadInitPolicy::scaled(0.5)), "scaled(0.5)");
  EXPECT_EQ(to_string(HeadInitPolicy::random()), "random");
  EXPECT_EQ(to_string(HeadInitPolicy::zeroing_trick()), "zeroing_trick");
  EXPECT_EQ(to_string(OuterOptimizer::adam(0.001)), "adam(0.001)");
  EXPECT_EQ(to_string(OuterOptimizer::plain_sgd()), "plain_sgd");
}

TEST(Spellings, RejectUnknown) {
  EXPECT_THROW(parse_variant("maml"), ConfigError);
  EXPECT_THROW(parse_head_init("scaled"), ConfigError);
  EXPECT_THROW(parse_head_init("scaled(x)"), ConfigError);
  EXPECT_THROW(parse_head_init("scaled(-1)"), ConfigError);
  EXPECT_THROW(parse_head_init("random(0)"), ConfigError);
  EXPECT_THROW(parse_head_init("Zero"), ConfigError);
  EXPECT_THROW(parse_outer_optimizer("adam"), ConfigError);
  EXPECT_THROW(parse_outer_optimizer("adam(0.1"), ConfigError);
  EXPECT_THROW(parse_outer_optimizer("sgd"), ConfigError);
  try {
    parse_head_init("bogus");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "head_init");
  }
}
