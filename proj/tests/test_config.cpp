#include <gtest/gtest.h>

#include <sstream>

#include "exitlab/config.hpp"

using namespace exitlab;

namespace {

const ConfigSchema kSchema{{"run", {"seed", "output"}}, {"model", {"name", "lambda"}}, {"experiment", {"N"}}};

ConfigFile parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, kSchema, "t.cfg");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    return e.what();
  }
  ADD_FAILURE() << "accepted: " << text;
  return {};
}

}  // namespace

TEST(Config, SectionsCommentsAndRunDefault) {
  const auto c = parse("# top\nseed = 7   # trailing\n\n[model]\nname = sirs\n lambda=2.5 \n[experiment]\nN = 100\n");
  ASSERT_NE(c.find("run", "seed"), nullptr);
  EXPECT_EQ(*c.find("run", "seed"), "7");
  EXPECT_EQ(*c.find("model", "name"), "sirs");
  EXPECT_EQ(*c.find("model", "lambda"), "2.5");
  EXPECT_EQ(*c.find("experiment", "N"), "100");
  EXPECT_EQ(c.find("run", "output"), nullptr);
  EXPECT_EQ(c.find("numerics", "x"), nullptr);
}

TEST(Config, ErrorsNameTheKeyAndLine) {
  EXPECT_NE(error_of("[model]\nbeta = 1\n").find("t.cfg:2: unknown key 'model.beta'"), std::string::npos);
  EXPECT_NE(error_of("bogus = 1\n").find("'bogus'"), std::string::npos);
  EXPECT_NE(error_of("[nope]\n").find("unknown section 'nope'"), std::string::npos);
  EXPECT_NE(error_of("[model]\nname = a\nname = b\n").find("duplicate key 'model.name'"), std::string::npos);
  EXPECT_NE(error_of("[model]\nlambda\n").find("t.cfg:2"), std::string::npos);
  EXPECT_NE(error_of("[model\n").find("malformed"), std::string::npos);
}

TEST(Config, MissingFile) {
  try {
    load_config("/nonexistent/exitlab.cfg", kSchema);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
  }
}
