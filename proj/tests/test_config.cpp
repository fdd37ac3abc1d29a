/* Copyright 2026 The gwap Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "gwap/config.hpp"
#include "gwap/error.hpp"
#include "test_util.hpp"

using gwap::Config;
using gwap::IoError;
using gwap::ValidationError;

TEST_CASE("config parses keys, comments, and whitespace") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("a.cfg"),
                       "# schedule\n"
                       "  lr =  0.01 \n"
                       "\n"
                       "iters=3000\r\n"
                       "head = gwap-agnostic\n"
                       "flip = yes\n");
  const Config cfg = Config::from_file(dir.file("a.cfg"));
  CHECK(cfg.get_double("lr", 0.0) == doctest::Approx(0.01));
  CHECK(cfg.get_int("iters", 0) == 3000);
  CHECK(cfg.get_string("head", "") == "gwap-agnostic");
  CHECK(cfg.get_bool("flip", false));
  CHECK_NOTHROW(cfg.require_known());
}

TEST_CASE("config rejects malformed files") {
  testutil::TempDir dir;

  testutil::write_file(dir.file("dup.cfg"), "a = 1\na = 2\n");
  CHECK_THROWS_AS(Config::from_file(dir.file("dup.cfg")), ValidationError);

  testutil::write_file(dir.file("nokey.cfg"), " = 2\n");
  CHECK_THROWS_AS(Config::from_file(dir.file("nokey.cfg")), ValidationError);

  testutil::write_file(dir.file("noeq.cfg"), "just words\n");
  CHECK_THROWS_AS(Config::from_file(dir.file("noeq.cfg")), ValidationError);

  CHECK_THROWS_AS(Config::from_file(dir.file("absent.cfg")), IoError);
}

TEST_CASE("typed getters validate values and report defaults") {
  Config cfg;
  cfg.set("i", "42");
  cfg.set("neg", "-7");
  cfg.set("d", "2.5e-3");
  cfg.set("s", "hello");
  cfg.set("bad_int", "42x");
  cfg.set("bad_bool", "maybe");

  CHECK(cfg.get_int("i", 0) == 42);
  CHECK(cfg.get_int("neg", 0) == -7);
  CHECK(cfg.get_uint("i", 0) == 42u);
  CHECK(cfg.get_double("d", 0.0) == doctest::Approx(2.5e-3));
  CHECK(cfg.get_string("s", "") == "hello");
  CHECK(cfg.get_int("missing", -1) == -1);
  CHECK(cfg.get_double("missing", 1.5) == doctest::Approx(1.5));
  CHECK(cfg.get_string("missing", "def") == "def");
  CHECK(cfg.get_bool("missing", true));

  CHECK_THROWS_AS(cfg.get_int("bad_int", 0), ValidationError);
  CHECK_THROWS_AS(cfg.get_uint("neg", 0), ValidationError);
  CHECK_THROWS_AS(cfg.get_double("s", 0.0), ValidationError);
  CHECK_THROWS_AS(cfg.get_bool("bad_bool", false), ValidationError);
}

TEST_CASE("bool getter accepts the documented spellings") {
  Config cfg;
  const char* kTrue[] = {"true", "1", "yes", "on"};
  const char* kFalse[] = {"false", "0", "no", "off"};
  for (const char* v : kTrue) {
    cfg.set("k", v);
    CHECK(cfg.get_bool("k", false));
  }
  for (const char* v : kFalse) {
    cfg.set("k", v);
    CHECK_FALSE(cfg.get_bool("k", true));
  }
}

TEST_CASE("set overwrites file values, as command-line flags require") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("a.cfg"), "lr = 0.5\n");
  Config cfg = Config::from_file(dir.file("a.cfg"));
  cfg.set("lr", "0.25");
  CHECK(cfg.get_double("lr", 0.0) == doctest::Approx(0.25));
}

TEST_CASE("require_known lists every unconsumed key") {
  Config cfg;
  cfg.set("used", "1");
  cfg.set("stray_a", "1");
  cfg.set("stray_b", "2");
  (void)cfg.get_int("used", 0);
  CHECK(cfg.has("stray_a"));
  try {
    cfg.require_known();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("stray_a") != std::string::npos);
    CHECK(msg.find("stray_b") != std::string::npos);
    CHECK(msg.find("used") == std::string::npos);
  }
}
