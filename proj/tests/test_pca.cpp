#include <doctest.h>

#include <cmath>
#include <random>

#include "loopscope/error.hpp"
#include "loopscope/pca.hpp"
#include "oracles/jacobi.hpp"

using namespace loopscope;

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_SUITE("pca") {

TEST_CASE("collinear points have rank one") {
  const std::vector<float> pts{0, 0, 1, 2, 2, 4, -1, -2, 3, 6};
  const PcaResult r = pca_project(pts, 2, 2);
  CHECK(r.explained_ratio[0] == doctest::Approx(1.0));
  CHECK(r.explained_ratio[1] == 0.0);
  CHECK(r.explained_variance[1] == 0.0);
  CHECK(std::abs(r.directions[0]) == doctest::Approx(1 / std::sqrt(5.0)));
}

TEST_CASE("distances inside a plane survive projection") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> z;
  // Plane spanned by two fixed 5-d vectors.
  const double u[5] = {1, 2, 0, -1, 0.5};
  const double v[5] = {0, 1, 1, 1, -2};
  std::vector<float> pts;
  for (int i = 0; i < 30; ++i) {
    const double a = z(gen), b = z(gen);
    for (int k = 0; k < 5; ++k) pts.push_back(static_cast<float>(a * u[k] + b * v[k]));
  }
  const PcaResult r = pca_project(pts, 5, 2);
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 30; ++j) {
      double full = 0, proj = 0;
      for (int k = 0; k < 5; ++k) full += std::pow(double(pts[i * 5 + k]) - pts[j * 5 + k], 2);
      for (int k = 0; k < 2; ++k) proj += std::pow(r.projected[i * 2 + k] - r.projected[j * 2 + k], 2);
      CHECK(std::sqrt(proj) == doctest::Approx(std::sqrt(full)).epsilon(1e-5));
    }
  }
}

TEST_CASE("matches a Jacobi eigendecomposition") {
  std::mt19937_64 gen(16);
  std::normal_distribution<double> z;
  const std::size_t n = 200, d = 16;
  std::vector<float> pts(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) pts[i * d + k] = static_cast<float>(z(gen) * (1.0 + k * 0.3));
  }
  std::vector<double> as_double(pts.begin(), pts.end());
  const auto eig = oracle::jacobi(oracle::covariance(as_double, d), d);
  double trace = 0;
  for (double x : eig.values) trace += x;

  const PcaResult r = pca_project(pts, d, d);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(r.explained_ratio[c] == doctest::Approx(eig.values[c] / trace).epsilon(1e-8));
    CHECK(std::abs(dot(&r.directions[c * d], eig.vectors[c].data(), d)) ==
          doctest::Approx(1.0).epsilon(1e-8));
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      CHECK(dot(&r.directions[a * d], &r.directions[b * d], d) ==
            doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
    }
    if (a > 0) CHECK(r.explained_ratio[a] <= r.explained_ratio[a - 1]);
  }
  double total = 0;
  for (double x : r.explained_variance) total += x;
  CHECK(total == doctest::Approx(trace).epsilon(1e-6));
  double ratios = 0;
  for (double x : r.explained_ratio) ratios += x;
  CHECK(ratios == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("signs are fixed and input is checked") {
  std::mt19937_64 gen(3);
  std::normal_distribution<float> z;
  std::vector<float> pts(40 * 4);
  for (auto& x : pts) x = z(gen);
  const PcaResult r = pca_project(pts, 4, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const double* dir = &r.directions[c * 4];
    const auto biggest = std::max_element(dir, dir + 4, [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(*biggest > 0);
  }
  CHECK_THROWS_AS(pca_project(pts, 3, 1), UsageError);
  CHECK_THROWS_AS(pca_project(std::vector<float>{1, 2}, 2, 1), UsageError);
  CHECK_THROWS_AS(pca_project(pts, 4, 5), UsageError);
  CHECK_THROWS_AS(pca_project(pts, 4, 0), UsageError);
}

}
