#include "cmda/config.hpp"
#include "doctest.h"

using namespace cmda;

TEST_CASE("config parses assignments, comments, and blanks") {
  auto cfg = ExperimentConfig::from_lines(
      {"# experiment", "train.max_steps = 200", "", "da.mode=soft",
       "da.gamma = 0.25  # tuned", "model.d_model=64"},
      "test");
  CHECK(cfg.get_long("train.max_steps", 0) == 200);
  CHECK(cfg.get_str("da.mode", "") == "soft");
  CHECK(cfg.get_double("da.gamma", 0) == doctest::Approx(0.25));
  CHECK(cfg.get_long("model.d_model", 0) == 64);
  CHECK(cfg.get_long("absent", 7) == 7);
  CHECK(cfg.has("da.mode"));
  CHECK(!cfg.has("absent"));
}

TEST_CASE("malformed config lines are reported together") {
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_lines({"ok=1", "broken line", "=nokey"}, "cfg"),
      doctest::Contains("cfg:2"), DataError);
  try {
    ExperimentConfig::from_lines({"ok=1", "broken line", "=nokey"}, "cfg");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("cfg:3") != std::string::npos);
  }
}

TEST_CASE("typed getters reject junk values naming the key") {
  ExperimentConfig cfg;
  cfg.set("train.max_steps", "12abc");
  cfg.set("da.gamma", "zero");
  cfg.set("flag", "maybe");
  CHECK_THROWS_WITH_AS(cfg.get_long("train.max_steps", 0),
                       doctest::Contains("train.max_steps"), DataError);
  CHECK_THROWS_WITH_AS(cfg.get_double("da.gamma", 0),
                       doctest::Contains("da.gamma"), DataError);
  CHECK_THROWS_WITH_AS(cfg.get_bool("flag", false), doctest::Contains("flag"),
                       DataError);
  CHECK_THROWS_AS(cfg.require_str("missing.key"), DataError);
}

TEST_CASE("overrides win and malformed ones raise usage errors") {
  ExperimentConfig cfg;
  cfg.set("a", "1");
  cfg.apply_overrides({"a=2", "b.c=x"});
  CHECK(cfg.get_str("a", "") == "2");
  CHECK(cfg.get_str("b.c", "") == "x");
  CHECK_THROWS_AS(cfg.apply_overrides({"noequals"}), UsageError);
  CHECK_THROWS_WITH_AS(cfg.apply_overrides({"good=1", "=bad"}),
                       doctest::Contains("=bad"), UsageError);
}

TEST_CASE("digest is stable, order independent, and value sensitive") {
  ExperimentConfig a, b;
  a.set("x", "1");
  a.set("y", "2");
  b.set("y", "2");
  b.set("x", "1");
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 16);
  b.set("y", "3");
  CHECK(a.digest() != b.digest());
  ExperimentConfig c;
  c.set("x", "1");
  CHECK(c.digest() != a.digest());
}

TEST_CASE("boolean forms") {
  ExperimentConfig cfg;
  cfg.set("t1", "true");
  cfg.set("t2", "1");
  cfg.set("t3", "yes");
  cfg.set("f1", "false");
  cfg.set("f2", "0");
  cfg.set("f3", "no");
  CHECK(cfg.get_bool("t1", false));
  CHECK(cfg.get_bool("t2", false));
  CHECK(cfg.get_bool("t3", false));
  CHECK(!cfg.get_bool("f1", true));
  CHECK(!cfg.get_bool("f2", true));
  CHECK(!cfg.get_bool("f3", true));
  CHECK(cfg.get_bool("absent", true));
}
