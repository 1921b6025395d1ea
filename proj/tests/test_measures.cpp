#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mvmv/measures.hpp"
#include "mvmv/rng.hpp"

using namespace mvmv;
using namespace mvmv::measures;

namespace {

EmpiricalMeasure random_measure(rng::NormalStream& stream, int d, int n, bool equal,
                                double spread = 1.0, double shift = 0.0) {
  EmpiricalMeasure mu;
  mu.dim = d;
  mu.points.resize(static_cast<std::size_t>(n) * d);
  for (auto& p : mu.points) p = shift + stream.normal(spread);
  if (equal) {
    mu.weights.assign(n, 1.0 / n);
    double s = 0.0;
    for (int i = 0; i < n - 1; ++i) s += mu.weights[i];
    mu.weights.back() = 1.0 - s;
  } else {
    mu.weights.resize(n);
    double s = 0.0;
    for (auto& w : mu.weights) {
      w = 0.1 + stream.uniform();
      s += w;
    }
    for (auto& w : mu.weights) w /= s;
    double s2 = std::accumulate(mu.weights.begin(), mu.weights.end() - 1, 0.0);
    mu.weights.back() = 1.0 - s2;
  }
  return mu;
}

// Equal-weight exact cost by enumerating all assignments (n <= 8).
double brute_force_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  const int n = a.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::max();
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
      double c = 0.0;
      for (int k = 0; k < a.dim; ++k) {
        const double diff = a.point(i)[k] - b.point(perm[i])[k];
        c += diff * diff;
      }
      cost += c;
    }
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / n);
}

EmpiricalMeasure embed_on_axis(const EmpiricalMeasure& one_d) {
  EmpiricalMeasure mu;
  mu.dim = 2;
  mu.weights = one_d.weights;
  mu.points.resize(static_cast<std::size_t>(one_d.size()) * 2);
  for (int i = 0; i < one_d.size(); ++i) {
    mu.points[2 * static_cast<std::size_t>(i)] = one_d.points[i];
    mu.points[2 * static_cast<std::size_t>(i) + 1] = 0.0;
  }
  return mu;
}

EmpiricalMeasure scaled(const EmpiricalMeasure& mu, double s) {
  EmpiricalMeasure out = mu;
  for (auto& p : out.points) p *= s;
  return out;
}

}  // namespace

TEST_CASE("distance between point masses is the point distance") {
  std::vector<double> a{1.0, 2.0}, b{4.0, 6.0};
  REQUIRE(std::abs(w2(dirac(a), dirac(b)) - 5.0) < 1e-12);
}

TEST_CASE("two-atom measures on the line match the monotone coupling") {
  auto mu = equal_weight(1, std::vector<double>{0.0, 1.0});
  auto nu = equal_weight(1, std::vector<double>{0.0, 2.0});
  REQUIRE(std::abs(w2(mu, nu) - std::sqrt(0.5)) < 1e-12);
}

TEST_CASE("second moment of simple measures") {
  std::vector<double> p{3.0, 4.0};
  REQUIRE(second_moment(dirac(p)) == 25.0);
  auto u = equal_weight(1, std::vector<double>{-1.0, 1.0});
  REQUIRE(second_moment(u) == 1.0);
  REQUIRE(measures::norm2(u) == 1.0);
}

TEST_CASE("distance to a point mass matches the closed form") {
  rng::NormalStream stream(21, rng::StreamTag::probes);
  for (int d : {1, 2, 3}) {
    for (int rep = 0; rep < 50; ++rep) {
      auto mu = random_measure(stream, d, 6, false);
      std::vector<double> x(d);
      for (auto& v : x) v = stream.normal(1.5);
      REQUIRE(std::abs(w2_to_dirac(mu, x) - w2(mu, dirac(x))) < 1e-12);
    }
  }
}

TEST_CASE("exact routes agree with assignment enumeration") {
  rng::NormalStream stream(22, rng::StreamTag::probes);
  for (int d : {1, 2, 3}) {
    for (int n : {2, 4, 7}) {
      for (int rep = 0; rep < 20; ++rep) {
        auto mu = random_measure(stream, d, n, true);
        auto nu = random_measure(stream, d, n, true, 1.3, 0.4);
        REQUIRE(std::abs(w2(mu, nu) - brute_force_w2(mu, nu)) < 1e-9);
      }
    }
  }
}

TEST_CASE("transport simplex agrees with the sorted line route") {
  // Embedding a line configuration into the plane switches the tier from the
  // sorted route to the simplex without changing the value.
  rng::NormalStream stream(23, rng::StreamTag::probes);
  for (int rep = 0; rep < 25; ++rep) {
    auto mu1 = random_measure(stream, 1, 5, false);
    auto nu1 = random_measure(stream, 1, 7, false, 1.1, 0.3);
    const W2Info info = w2_info(embed_on_axis(mu1), embed_on_axis(nu1));
    REQUIRE(info.method == W2Info::Method::exact_simplex);
    REQUIRE(std::abs(info.value - w2(mu1, nu1)) < 1e-9);
  }
}

TEST_CASE("entropic route approximates the exact value and reports itself") {
  rng::NormalStream stream(24, rng::StreamTag::probes);
  const int n = 80;
  EmpiricalMeasure mu1, nu1;
  mu1.dim = nu1.dim = 1;
  for (int i = 0; i < n; ++i) {
    mu1.points.push_back(stream.uniform(0.0, 1.0));
    nu1.points.push_back(stream.uniform(2.0, 3.0));
  }
  mu1.weights.assign(n, 1.0 / n);
  nu1.weights.assign(n, 1.0 / n);
  const double exact = w2(mu1, nu1);  // sorted route on the line

  const W2Info info = w2_info(embed_on_axis(mu1), embed_on_axis(nu1));
  REQUIRE(info.method == W2Info::Method::sinkhorn);
  REQUIRE(info.regularization > 0.0);
  REQUIRE(info.iterations > 0);
  REQUIRE(info.marginal_error < 1e-8);
  REQUIRE(info.value >= exact * (1.0 - 1e-6));  // entropic plan cost dominates
  REQUIRE(info.value <= exact * 1.02);
}

TEST_CASE("distance is symmetric and satisfies the triangle inequality") {
  rng::NormalStream stream(25, rng::StreamTag::probes);
  for (int d : {1, 2}) {
    for (int rep = 0; rep < 30; ++rep) {
      auto mu = random_measure(stream, d, 5, false);
      auto nu = random_measure(stream, d, 6, false, 1.2, 0.5);
      auto rho = random_measure(stream, d, 4, false, 0.8, -0.3);
      const double ab = w2(mu, nu), ba = w2(nu, mu);
      REQUIRE(std::abs(ab - ba) < 1e-10);
      REQUIRE(w2(mu, rho) <= w2(mu, nu) + w2(nu, rho) + 1e-9);
      REQUIRE(w2(mu, mu) < 1e-9);
    }
  }
}

TEST_CASE("distance scales covariantly with a dilation") {
  rng::NormalStream stream(26, rng::StreamTag::probes);
  for (double s : {-2.0, 0.5, 3.0}) {
    auto mu1 = random_measure(stream, 1, 10, false);
    auto nu1 = random_measure(stream, 1, 8, false, 1.4, 0.2);
    REQUIRE(std::abs(w2(scaled(mu1, s), scaled(nu1, s)) - std::abs(s) * w2(mu1, nu1)) < 1e-9);

    auto mu2 = random_measure(stream, 2, 8, true);
    auto nu2 = random_measure(stream, 2, 8, true, 0.9, 0.1);
    REQUIRE(std::abs(w2(scaled(mu2, s), scaled(nu2, s)) - std::abs(s) * w2(mu2, nu2)) < 1e-9);

    auto mu3 = random_measure(stream, 2, 5, false);
    auto nu3 = random_measure(stream, 2, 7, false, 1.2, -0.4);
    REQUIRE(std::abs(w2(scaled(mu3, s), scaled(nu3, s)) - std::abs(s) * w2(mu3, nu3)) < 1e-9);
  }
  // The entropic tier keeps covariance because its regularization is pinned
  // to the cost scale.
  auto mu = random_measure(stream, 2, 70, true);
  auto nu = random_measure(stream, 2, 70, true, 1.1, 0.6);
  const double base = w2(mu, nu);
  const double dil = w2(scaled(mu, 2.5), scaled(nu, 2.5));
  REQUIRE(std::abs(dil - 2.5 * base) < 1e-6 * std::max(1.0, dil));
}

TEST_CASE("malformed measures are rejected") {
  EmpiricalMeasure bad;
  bad.dim = 1;
  bad.points = {0.0, 1.0};
  bad.weights = {0.6, 0.6};  // sums to 1.2
  REQUIRE_THROWS(validate(bad));
  bad.weights = {1.5, -0.5};
  REQUIRE_THROWS(validate(bad));
  bad.weights = {0.5};  // length mismatch
  REQUIRE_THROWS(validate(bad));
  EmpiricalMeasure empty;
  empty.dim = 1;
  REQUIRE_THROWS(validate(empty));

  EmpiricalMeasure other;
  other.dim = 2;
  other.points = {0.0, 0.0};
  other.weights = {1.0};
  auto fine = equal_weight(1, std::vector<double>{0.0});
  REQUIRE_THROWS(w2(fine, other));  // dimension mismatch
}

TEST_CASE("mean accumulates weighted atoms") {
  auto mu = equal_weight(1, std::vector<double>{0.0, 2.0});
  std::vector<double> m(1);
  mean(mu, m);
  REQUIRE(m[0] == 1.0);
}
