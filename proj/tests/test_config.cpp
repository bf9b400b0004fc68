#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowrecon/config.hpp"

using namespace flowrecon;

TEST_SUITE_BEGIN("config");

TEST_CASE("parses dotted keys, comments and blank lines") {
    Config c = Config::from_string(
        "# experiment\n"
        "problem.kind = cs\n"
        "\n"
        "train.lr = 1e-3   # inline comment\n"
        "train.epochs=12\n"
        "arch.conditional = true\n"
        "sim.seed = 18446744073709551615\n");
    CHECK(c.has("problem.kind"));
    CHECK(c.get_string("problem.kind", "") == "cs");
    CHECK(c.get_double("train.lr", 0.0) == doctest::Approx(1e-3));
    CHECK(c.get_int("train.epochs", 0) == 12);
    CHECK(c.get_bool("arch.conditional", false) == true);
    CHECK(c.get_u64("sim.seed", 0) == 18446744073709551615ull);
}

TEST_CASE("defaults apply when keys are absent") {
    Config c = Config::from_string("a.b = 1\n");
    CHECK(c.get_string("missing.key", "fallback") == "fallback");
    CHECK(c.get_int("missing.key", -7) == -7);
    CHECK(c.get_double("missing.key", 2.5) == 2.5);
    CHECK(c.get_bool("missing.key", true) == true);
    CHECK(!c.has("missing.key"));
}

TEST_CASE("require_string demands presence") {
    Config c = Config::from_string("a.b = x\n");
    CHECK(c.require_string("a.b") == "x");
    CHECK_THROWS_AS(c.require_string("a.c"), ConfigError);
}

TEST_CASE("malformed values are rejected") {
    Config c = Config::from_string(
        "k.int = 3.5\n"
        "k.dbl = abc\n"
        "k.bool = yes-please\n");
    CHECK_THROWS_AS(c.get_int("k.int", 0), ConfigError);
    CHECK_THROWS_AS(c.get_double("k.dbl", 0.0), ConfigError);
    CHECK_THROWS_AS(c.get_bool("k.bool", false), ConfigError);
}

TEST_CASE("duplicate keys and malformed lines are rejected") {
    CHECK_THROWS_AS(Config::from_string("a.b = 1\na.b = 2\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_string("no equals sign here\n"), ConfigError);
}

TEST_CASE("reject_unknown names every unread key") {
    Config c = Config::from_string("a.b = 1\nc.d = 2\n");
    c.get_int("a.b", 0);
    try {
        c.reject_unknown();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("c.d") != std::string::npos);
    }
    c.get_int("c.d", 0);
    CHECK_NOTHROW(c.reject_unknown());
}

TEST_CASE("from_file matches from_string and missing files raise ConfigError") {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "flowrecon_config_test.cfg";
    std::ofstream(p) << "x.y = 9\n";
    Config c = Config::from_file(p.string());
    CHECK(c.get_int("x.y", 0) == 9);
    CHECK_THROWS_AS(Config::from_file("/no/such/file.cfg"), ConfigError);
}

TEST_SUITE_END();
