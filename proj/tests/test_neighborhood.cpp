#include <doctest.h>

#include <random>

#include "loopscope/error.hpp"
#include "loopscope/neighborhood.hpp"
#include "oracles/neighbor_oracle.hpp"
#include "support.hpp"

using namespace loopscope;

namespace {

// Traces whose states scatter around a few centers at several scales.
std::vector<StateTrace> clustered(std::mt19937_64& gen, std::size_t count, std::size_t steps,
                                  std::size_t dim, std::size_t layers = 1) {
  std::normal_distribution<float> z(0.0f, 1.0f);
  std::vector<std::vector<float>> centers(6, std::vector<float>(dim));
  for (auto& c : centers) {
    for (auto& x : c) x = z(gen);
  }
  const float scales[] = {0.02f, 0.05f, 0.1f, 0.3f};
  std::vector<StateTrace> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<float> v(layers * steps * dim);
    for (std::size_t row = 0; row < layers * steps; ++row) {
      const auto& c = centers[gen() % centers.size()];
      const float s = scales[gen() % 4];
      for (std::size_t k = 0; k < dim; ++k) v[row * dim + k] = c[k] + s * z(gen);
    }
    out.emplace_back("t" + std::to_string(i), layers, steps, dim, std::move(v));
  }
  return out;
}

std::vector<const StateTrace*> ptrs(const std::vector<StateTrace>& traces) {
  std::vector<const StateTrace*> out;
  for (const auto& t : traces) out.push_back(&t);
  return out;
}

}  // namespace

TEST_SUITE("neighborhood") {

TEST_CASE("counts equal a linear scan") {
  std::mt19937_64 gen(31);
  const auto support = clustered(gen, 40, 12, 16, 2);
  const auto queries = clustered(gen, 10, 14, 16, 2);
  const auto sp = ptrs(support);
  for (std::size_t layer : {0, 1}) {
    const SupportIndex index = SupportIndex::build(sp, layer);
    CHECK(index.size() == 40 * 12);
    CHECK(index.num_steps() == 12);
    for (const auto& q : queries) {
      for (std::size_t t = 0; t < q.num_steps(); ++t) {
        for (double r : {0.1, 0.3, 0.5, 1.0, 2.0, 8.0}) {
          for (std::size_t w : {0, 1, 3, 20}) {
            const auto state = q.at(layer, t);
            CHECK(index.count(state, {t, r, w}) ==
                  oracle::count_neighbors(sp, layer, state.data(), 16, t, r, w));
          }
        }
      }
    }
  }
}

TEST_CASE("the radius boundary is excluded") {
  const StateTrace a("a", 1, 1, 3, {0.0f, 0.0f, 0.0f});
  const StateTrace b("b", 1, 1, 3, {1.0f, 0.0f, 0.0f});
  const StateTrace c("c", 1, 1, 3, {0.0f, 0.5f, 0.0f});
  const std::vector<const StateTrace*> sp{&a, &b, &c};
  const SupportIndex index = SupportIndex::build(sp, 0);
  const std::vector<float> origin{0, 0, 0};
  CHECK(index.count(origin, {0, 1.0, 0}) == 2);
  CHECK(index.count(origin, {0, 0.5, 0}) == 1);
  CHECK(index.count(origin, {0, std::nextafter(1.0, 2.0), 0}) == 3);
  CHECK(index.count(origin, {5, 10.0, 2}) == 0);
  CHECK(index.count(origin, {5, 10.0, 5}) == 3);
  CHECK_THROWS_AS(index.count(origin, {0, 0.0, 0}), UsageError);
  CHECK_THROWS_AS(index.count(std::vector<float>{0, 0}, {0, 1.0, 0}), UsageError);
}

TEST_CASE("monotone in radius and window, invariant to order") {
  std::mt19937_64 gen(8);
  auto support = clustered(gen, 30, 10, 8);
  const auto queries = clustered(gen, 5, 10, 8);
  const SupportIndex index = SupportIndex::build(ptrs(support), 0);
  std::shuffle(support.begin(), support.end(), gen);
  const SupportIndex shuffled = SupportIndex::build(ptrs(support), 0);
  for (const auto& q : queries) {
    for (std::size_t t = 0; t < 10; ++t) {
      std::size_t prev_r = 0;
      for (double r = 0.05; r < 4.0; r *= 1.5) {
        const std::size_t n = index.count(q.at(0, t), {t, r, 2});
        CHECK(n >= prev_r);
        CHECK(shuffled.count(q.at(0, t), {t, r, 2}) == n);
        prev_r = n;
      }
      std::size_t prev_w = 0;
      for (std::size_t w = 0; w < 12; ++w) {
        const std::size_t n = index.count(q.at(0, t), {t, 0.8, w});
        CHECK(n >= prev_w);
        prev_w = n;
      }
    }
  }
}

TEST_CASE("build checks its input") {
  CHECK_THROWS_AS(SupportIndex::build(std::vector<const StateTrace*>{}, 0), UsageError);
  const StateTrace a("a", 1, 2, 3, std::vector<float>(6));
  const StateTrace b("b", 1, 2, 4, std::vector<float>(8));
  CHECK_THROWS_AS(SupportIndex::build(std::vector<const StateTrace*>{&a, &b}, 0), FormatError);
  CHECK_THROWS_AS(SupportIndex::build(std::vector<const StateTrace*>{&a}, 1), FormatError);
}

TEST_CASE("curve steps") {
  const auto steps = evenly_spaced_steps(512, 20);
  REQUIRE(steps.size() == 20);
  CHECK(steps.front() == 0);
  CHECK(steps.back() == 511);
  CHECK(std::is_sorted(steps.begin(), steps.end()));
  CHECK(evenly_spaced_steps(5, 20) == std::vector<long>{0, 1, 2, 3, 4});
  CHECK(evenly_spaced_steps(0, 20).empty());
  const auto rel = relative_offsets();
  CHECK(rel.size() == 17);
  CHECK(rel.front() == -32);
  CHECK(rel.back() == 128);
  CHECK(parse_axis("relative") == CurveAxis::relative_to_loop_start);
  CHECK(parse_axis(to_string(CurveAxis::absolute_time)) == CurveAxis::absolute_time);
  CHECK_THROWS_AS(parse_axis("log"), UsageError);
}

TEST_CASE("accumulator reduces with population std") {
  CurveAccumulator a;
  a.add(3, 1.0);
  a.add(-1, 5.0);
  a.add(3, 3.0);
  CurveAccumulator b;
  b.add(3, 5.0);
  a.merge(b);
  const DeviationCurve c = a.finish(CurveAxis::relative_to_loop_start);
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[0].step == -1);
  CHECK(c.points[0].std == 0.0);
  CHECK(c.points[1].step == 3);
  CHECK(c.points[1].n == 3);
  CHECK(c.points[1].mean == doctest::Approx(3.0));
  CHECK(c.points[1].std == doctest::Approx(std::sqrt(8.0 / 3.0)));
}

TEST_CASE("absolute and relative curves") {
  std::mt19937_64 gen(2);
  const auto support = clustered(gen, 20, 30, 4);
  const auto eval = clustered(gen, 6, 30, 4);
  const SupportIndex index = SupportIndex::build(ptrs(support), 0);
  const auto ep = ptrs(eval);

  CurveOptions abs;
  abs.radius = 1.0;
  abs.time_window = 2;
  abs.workers = 3;
  const DeviationCurve curve = deviation_curve(index, ep, abs);
  REQUIRE(curve.points.size() == 20);
  for (const auto& p : curve.points) {
    CHECK(p.n == 6);
    double sum = 0;
    for (const auto* t : ep) {
      sum += oracle::count_neighbors(ptrs(support), 0, t->at(0, p.step).data(), 4, p.step, 1.0, 2);
    }
    CHECK(p.mean == doctest::Approx(sum / 6));
  }
  abs.workers = 1;
  CHECK(deviation_curve(index, ep, abs) == curve);

  CurveOptions rel = abs;
  rel.axis = CurveAxis::relative_to_loop_start;
  std::vector<std::optional<LoopSpec>> loops(6);
  loops[0] = LoopSpec{10, 4, {}, {}};   // anchor 14
  loops[3] = LoopSpec{20, 5, {}, {}};   // anchor 25
  const DeviationCurve rc = deviation_curve(index, ep, rel, loops);
  for (const auto& p : rc.points) {
    const std::size_t expected = (14 + p.step >= 0 && 14 + p.step < 30) + (25 + p.step >= 0 && 25 + p.step < 30);
    CHECK(p.n == expected);
  }
  CHECK_THROWS_AS(deviation_curve(index, ep, rel, {}), UsageError);

  CurveAccumulator diff;
  accumulate_differences(index, ep, ep, loops, rel, diff);
  for (const auto& p : diff.finish(rel.axis).points) CHECK(p.mean == 0.0);
}

TEST_CASE("shuffled control permutes tokens") {
  std::vector<Passage> ps{testing::real_passage("a", {1, 2, 3, 4, 5, 6, 7, 8}),
                          testing::real_passage("b", {9, 9, 1})};
  ps[0].text = "text";
  const auto s = shuffle_control(ps, 4);
  REQUIRE(s.size() == 2);
  CHECK(s[0].id == "a/shuffled");
  CHECK(s[0].source_id == "a");
  CHECK_FALSE(s[0].text);
  auto sorted = s[0].tokens;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == ps[0].tokens);
  CHECK(s[0].tokens != ps[0].tokens);
  CHECK(shuffle_control(ps, 4) == s);
  CHECK_THROWS_AS(shuffle_control(std::vector<Passage>{}, 1), UsageError);
}

}
