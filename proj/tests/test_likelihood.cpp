#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "loopscope/error.hpp"
#include "loopscope/likelihood.hpp"
#include "support.hpp"

using namespace loopscope;

namespace {

std::vector<Passage> passages(std::size_t count, std::size_t length, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<Passage> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<TokenId> t(length - i % 5);
    for (auto& x : t) x = static_cast<TokenId>(gen() % 50);
    out.push_back(testing::real_passage("p" + std::to_string(i), t));
  }
  return out;
}

class FlakyScorer : public MaskedScorer {
 public:
  explicit FlakyScorer(int failures_per_query) : failures_(failures_per_query) {}
  std::vector<double> score(const MaskedQuery& q) const override {
    if (calls_++ % (failures_ + 1) < failures_) throw std::runtime_error("flaky");
    return std::vector<double>(q.positions.size(), -1.0);
  }

 private:
  int failures_;
  mutable std::atomic<int> calls_{0};
};

}  // namespace

TEST_SUITE("likelihood") {

TEST_CASE("mask counts round up") {
  CHECK(mask_count(512, 0.15) == 77);
  CHECK(mask_count(100, 0.15) == 15);  // 15.000000000000002 in floating point
  CHECK(mask_count(10, 0.5) == 5);
  CHECK(mask_count(7, 0.01) == 1);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto pos = select_mask_positions(512, 0.15, rng);
    CHECK(pos.size() == 77);
    CHECK(std::is_sorted(pos.begin(), pos.end()));
    CHECK(std::adjacent_find(pos.begin(), pos.end()) == pos.end());
    CHECK(pos.back() < 512);
  }
}

TEST_CASE("uniform scorer gives -log V everywhere") {
  const auto ps = passages(20, 64, 3);
  const UniformScorer scorer(50);
  const auto curve = masked_likelihood_curve(ps, scorer, 0.15, 10, 9);
  REQUIRE(curve.size() == 64);
  for (const auto& p : curve) {
    if (p.n == 0) continue;
    CHECK(std::abs(p.mean + std::log(50.0)) < 1e-9);
  }
  std::size_t samples = 0;
  for (const auto& p : curve) samples += p.n;
  std::size_t expected = 0;
  for (const auto& p : ps) expected += 10 * mask_count(p.tokens.size(), 0.15);
  CHECK(samples == expected);

  const auto again = masked_likelihood_curve(ps, scorer, 0.15, 10, 9);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(again[i].mean == curve[i].mean);
    CHECK(again[i].n == curve[i].n);
  }
  CHECK_THROWS_AS(UniformScorer(0), UsageError);
  CHECK_THROWS_AS(masked_likelihood_curve(ps, scorer, 0.0, 1, 0), UsageError);
  CHECK_THROWS_AS(masked_likelihood_curve(ps, scorer, 1.0, 1, 0), UsageError);
  CHECK_THROWS_AS(masked_likelihood_curve(ps, scorer, 0.2, 0, 0), UsageError);
}

TEST_CASE("score files replay and order does not matter") {
  testing::TempDir dir;
  const auto ps = passages(6, 40, 5);
  const std::uint64_t seed = 21;
  {
    std::ofstream out(dir / "scores.jsonl");
    for (const auto& p : ps) {
      Rng rng(mask_seed(seed, p.id));
      for (std::size_t rep = 0; rep < 3; ++rep) {
        const auto pos = select_mask_positions(p.tokens.size(), 0.25, rng);
        std::vector<double> ll;
        for (std::size_t x : pos) ll.push_back(-0.01 * static_cast<double>(x) - 0.5);
        out << nlohmann::json{{"passage_id", p.id}, {"repetition", rep}, {"positions", pos}, {"loglik", ll}}.dump()
            << "\n";
      }
    }
  }
  const ScoreFileScorer scorer(dir / "scores.jsonl");
  const auto curve = masked_likelihood_curve(ps, scorer, 0.25, 3, seed);
  for (const auto& p : curve) {
    if (p.n) CHECK(p.mean == doctest::Approx(-0.01 * static_cast<double>(p.step) - 0.5));
  }
  auto reversed = ps;
  std::reverse(reversed.begin(), reversed.end());
  const auto curve2 = masked_likelihood_curve(reversed, scorer, 0.25, 3, seed);
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(curve2[i].mean == curve[i].mean);

  // A different seed asks for other positions than the file holds.
  CHECK_THROWS_AS(masked_likelihood_curve(ps, scorer, 0.25, 3, seed + 1), Error);

  std::ofstream(dir / "bad.jsonl") << R"({"passage_id":"x","repetition":0,"positions":[1],"loglik":[0.5]})" << "\n";
  CHECK_THROWS_AS(ScoreFileScorer(dir / "bad.jsonl"), FormatError);
  std::ofstream(dir / "bad2.jsonl") << R"({"passage_id":"x","repetition":0,"positions":[1,2],"loglik":[-1]})" << "\n";
  CHECK_THROWS_AS(ScoreFileScorer(dir / "bad2.jsonl"), FormatError);
  CHECK_THROWS_AS(ScoreFileScorer(dir / "none.jsonl"), LoadError);
}

TEST_CASE("a failing scorer is retried once") {
  const auto ps = passages(3, 20, 1);
  const FlakyScorer once(1);
  const auto curve = masked_likelihood_curve(ps, once, 0.3, 2, 0);
  for (const auto& p : curve) {
    if (p.n) CHECK(p.mean == -1.0);
  }
  const FlakyScorer twice(2);
  try {
    masked_likelihood_curve(ps, twice, 0.3, 2, 0);
    FAIL("expected an abort");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("p0") != std::string::npos);
  }
}

}
