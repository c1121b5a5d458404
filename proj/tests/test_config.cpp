#include <gtest/gtest.h>

#include "hyperinv/config.hpp"
#include "hyperinv/error.hpp"

using namespace hyperinv;

namespace {

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const TrainConfig d;
  EXPECT_EQ(parse_config(dump_config(d)), d);
  EXPECT_EQ(parse_config(""), d);
  EXPECT_EQ(d.loss.lambda_pixel, 1.0);
  EXPECT_EQ(d.loss.lambda_perc, 0.8);
  EXPECT_EQ(d.loss.lambda_id, 0.1);
  EXPECT_EQ(d.train.lr, 1e-4);
  EXPECT_EQ(d.train.batch_size_warm, 8u);
  EXPECT_EQ(d.train.batch_size_adv, 4u);
}

TEST(Config, ModifiedValuesRoundTrip) {
  TrainConfig c;
  set_config_value(c, "seed", "17");
  set_config_value(c, "hyper.D", "16");
  set_config_value(c, "hyper.appearance", "x-only");
  set_config_value(c, "train.lr", "0.000123456789012345");
  set_config_value(c, "data.mode", "procedural");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.hyper.hidden_dim, 16u);
  EXPECT_EQ(c.hyper.appearance, AppearanceMode::XOnly);
  EXPECT_EQ(parse_config(dump_config(c)), c);
}

TEST(Config, EveryKeyIsDumped) {
  const std::string text = dump_config(TrainConfig{});
  for (const auto& k : config_keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}

TEST(Config, ProfileAppliesBeforeOtherKeys) {
  const TrainConfig c = parse_config("loss.lambda_id = 0.25\nprofile = church-analog\n");
  EXPECT_EQ(c.profile, Profile::ChurchAnalog);
  EXPECT_EQ(c.loss.lambda_id, 0.25);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("seed = 1\nbogus.key = 3\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("seed = 1\nseed = 2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("# comment\nseed\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("train.lr = fast\n"), "");
  EXPECT_NE(error_of("train.batch_size_warm = -3\n"), "");
}

TEST(Config, ValidationRejectsBadSchedules) {
  EXPECT_NE(error_of("train.warmup_iters = 30000\n"), "");
  EXPECT_NE(error_of("train.lr = 0\n"), "");
  EXPECT_NE(error_of("loss.lambda_adv = -1\n"), "");
}
