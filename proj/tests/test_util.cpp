#include "timt/common.hpp"
#include "timt/util/config.hpp"
#include "timt/util/sha256.hpp"

#include <doctest.h>

#include <fstream>

using namespace timt;

TEST_CASE("sha256 known vectors") {
  CHECK(util::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(util::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // spans a block boundary
  std::string long_input(1000, 'x');
  CHECK(util::sha256_hex(long_input) == util::sha256_hex(std::string(1000, 'x')));
  CHECK(util::sha256_hex(long_input) != util::sha256_hex(std::string(999, 'x')));
}

TEST_CASE("sha256 file matches string digest") {
  const auto path = std::filesystem::temp_directory_path() / "timt_sha_test.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "abc";
  }
  CHECK(util::sha256_file(path) == util::sha256_hex("abc"));
  std::filesystem::remove(path);
}

TEST_CASE("rng determinism and range") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(10) < 10);
  }
}

TEST_CASE("ini parse, defaults, override, dump round-trip") {
  util::IniConfig cfg = util::IniConfig::parse_string(
      "# comment\n[corpus]\nmin_len = 2\nalphabet = abc\n\n[train]\nepochs=5\n"
      "deterministic = true\n");
  CHECK(cfg.get_int("corpus", "min_len", 0) == 2);
  CHECK(cfg.get("corpus", "alphabet", "") == "abc");
  CHECK(cfg.get_int("train", "epochs", 0) == 5);
  CHECK(cfg.get_bool("train", "deterministic", false));
  CHECK(cfg.get_int("train", "missing", 42) == 42);

  cfg.set("train", "epochs", "9");
  CHECK(cfg.get_int("train", "epochs", 0) == 9);

  util::IniConfig reparsed = util::IniConfig::parse_string(cfg.dump());
  CHECK(reparsed.dump() == cfg.dump());

  CHECK_THROWS_AS(util::IniConfig::parse_string("[x]\nnokey\n"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.get_int("corpus", "alphabet", 0), std::invalid_argument);
}
