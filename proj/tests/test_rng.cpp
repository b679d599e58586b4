#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "loopscope/likelihood.hpp"
#include "loopscope/parallel.hpp"
#include "loopscope/rng.hpp"

using namespace loopscope;

TEST_SUITE("rng") {

TEST_CASE("engine is the standard mt19937_64") {
  // The standard pins the 10000th output for the default seed.
  Rng rng(5489);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = rng.next();
  CHECK(x == 9981545732273789042ULL);
}

TEST_CASE("uniform01 uses the top 53 bits") {
  Rng rng(17);
  std::mt19937_64 ref(17);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform01();
    CHECK(u == static_cast<double>(ref() >> 11) * 0x1.0p-53);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform_below rejects the biased low range") {
  for (std::uint64_t n : {1ULL, 2ULL, 3ULL, 7ULL, 1000ULL, (1ULL << 63) + 5}) {
    Rng rng(n * 31 + 1);
    std::mt19937_64 ref(n * 31 + 1);
    const std::uint64_t threshold = (0 - n) % n;
    for (int i = 0; i < 200; ++i) {
      std::uint64_t x;
      do x = ref(); while (x < threshold);
      CHECK(rng.uniform_below(n) == x % n);
    }
  }
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(rng.uniform_below(1) == 0);
}

TEST_CASE("fnv1a and seed splitting") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
  CHECK(passage_seed(10, 3) == 9);
  CHECK(stage_seed(5, "x") == (5 ^ fnv1a("x")));
  CHECK(stage_seed(5, "decode/greedy") != stage_seed(5, "decode/sample"));
}

TEST_CASE("mask positions match the reference stream") {
  std::ifstream in(std::string(LOOPSCOPE_TEST_DATA) + "/mask_golden.json");
  REQUIRE(in);
  const auto golden = nlohmann::json::parse(in);
  CHECK(golden.at("mt19937_64_seed5489_10000th").get<std::uint64_t>() == 9981545732273789042ULL);
  Rng seeded_one(1);
  for (const auto& x : golden.at("mt19937_64_seed1_first")) CHECK(seeded_one.next() == x.get<std::uint64_t>());
  for (const auto& c : golden.at("cases")) {
    const std::string id = c.at("passage_id");
    Rng rng(mask_seed(c.at("seed").get<std::uint64_t>(), id));
    const auto expected = c.at("positions").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& rep : expected) {
      CHECK(select_mask_positions(c.at("length"), c.at("fraction"), rng) == rep);
    }
  }
}

TEST_CASE("parallel_for visits each index once and rethrows") {
  for (std::size_t workers : {1, 3, 16}) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(50, 4,
                               [](std::size_t i) {
                                 if (i == 17) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
  parallel_for(0, 4, [](std::size_t) { FAIL("called"); });
}

TEST_CASE("default_workers reads the environment") {
  ::setenv("LOOPSCOPE_WORKERS", "3", 1);
  CHECK(default_workers() == 3);
  ::unsetenv("LOOPSCOPE_WORKERS");
  CHECK(default_workers() >= 1);
}

}
