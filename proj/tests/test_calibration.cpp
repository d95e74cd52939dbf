#include <cmath>
#include <limits>

#include "doctest.h"
#include "hfmf/calibration.hpp"
#include "hfmf/errors.hpp"
#include "hfmf/rng.hpp"
#include "test_support.hpp"

using namespace hfmf;
using testing::ece_oracle;

namespace {

double sigma(double s) { return 1.0 / (1.0 + std::exp(-s)); }

struct Sample {
  std::vector<double> z;
  std::vector<int> y;
};

// Labels drawn from sigma(a z + b).
Sample generative(std::size_t n, double a, double b, Rng& rng) {
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.normal(0.0, 2.0);
    s.z.push_back(z);
    s.y.push_back(rng.uniform() < sigma(a * z + b) ? 1 : 0);
  }
  return s;
}

}  // namespace

TEST_CASE("apply_platt examples and properties") {
  CHECK(apply_platt(0.0, {1.0, 0.0}) == 0.5);
  CHECK(apply_platt(123.0, {0.0, 0.0}) == 0.5);
  CHECK(std::abs(apply_platt(std::log(3.0), {1.0, 0.0}) - 0.75) < 1e-15);
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const PlattParams p{rng.uniform(0.01, 5.0), rng.normal(), 0, 0};
    const double z1 = rng.normal(0, 3), z2 = z1 + rng.uniform(1e-6, 2.0);
    const double p1 = apply_platt(z1, p), p2 = apply_platt(z2, p);
    CHECK(p1 > 0.0);
    CHECK(p1 < 1.0);
    CHECK(p2 > p1);
  }
}

TEST_CASE("calibration with A > 0 never flips the decision of a zero-intercept map") {
  // With B = 0 the decision boundary stays at z = 0.
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const double z = rng.normal(0, 3);
    const double p = apply_platt(z, {rng.uniform(0.1, 4.0), 0.0, 0, 0});
    CHECK((p >= 0.5) == (z >= 0.0));
  }
}

TEST_CASE("fit_platt recovers the generating parameters") {
  Rng rng(3);
  const Sample s = generative(10000, 2.0, -1.0, rng);
  const PlattParams p = fit_platt(s.z, s.y);
  CHECK(std::abs(p.A - 2.0) < 0.1);
  CHECK(std::abs(p.B + 1.0) < 0.1);
  CHECK(p.final_nll >= 0.0);
  CHECK(std::isfinite(p.A));
  CHECK(std::isfinite(p.B));
}

TEST_CASE("fit_platt never exceeds the identity NLL (optimizer dominance)") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Sample s = generative(500, 1.0, 0.0, rng);
    const PlattParams p = fit_platt(s.z, s.y);
    CHECK(p.final_nll <= platt_nll(s.z, s.y, 1.0, 0.0));
    CHECK(p.final_nll == platt_nll(s.z, s.y, p.A, p.B));
  }
}

TEST_CASE("fit_platt matches a grid-search oracle's best NLL within 1e-4") {
  Rng rng(4);
  const Sample s = generative(400, 1.5, 0.5, rng);
  const PlattParams p = fit_platt(s.z, s.y);
  double best = std::numeric_limits<double>::infinity(), ba = 0, bb = 0;
  for (double a = -1.0; a <= 5.0; a += 0.05)
    for (double b = -3.0; b <= 3.0; b += 0.05) {
      const double v = platt_nll(s.z, s.y, a, b);
      if (v < best) best = v, ba = a, bb = b;
    }
  for (double a = ba - 0.05; a <= ba + 0.05; a += 0.001)
    for (double b = bb - 0.05; b <= bb + 0.05; b += 0.001) best = std::min(best, platt_nll(s.z, s.y, a, b));
  CHECK(std::abs(p.final_nll - best) < 1e-4);
  CHECK(p.final_nll <= best + 1e-12);
}

TEST_CASE("fit_platt rejects single-class labels and bad input") {
  const std::vector<double> z = {0.1, 0.5, -0.3};
  CHECK_THROWS_AS(fit_platt(z, std::vector<int>{1, 1, 1}), DegenerateInputError);
  CHECK_THROWS_AS(fit_platt(z, std::vector<int>{0, 0, 0}), DegenerateInputError);
  CHECK_THROWS_AS(fit_platt(std::vector<double>{1.0}, std::vector<int>{1}), ContractError);
  CHECK_THROWS_AS(fit_platt(z, std::vector<int>{0, 1}), DimensionError);
}

TEST_CASE("fit_platt terminates on separable data without increasing the NLL") {
  const std::vector<double> z = {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0};
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  const PlattParams p = fit_platt(z, y);
  CHECK(p.final_nll <= platt_nll(z, y, 1.0, 0.0));
  CHECK(p.A > 1.0);
  CHECK(p.iterations <= 10000);
}

TEST_CASE("ece examples") {
  const std::vector<double> perfect = {1.0, 0.0, 1.0, 0.0};
  CHECK(ece(perfect, std::vector<int>{1, 0, 1, 0}, 15) == 0.0);
  const std::vector<double> p = {0.9, 0.9, 0.1, 0.1};
  CHECK(std::abs(ece(p, std::vector<int>{1, 0, 0, 0}, 1) - 0.15) < 1e-12);
  CHECK_THROWS_AS(ece(std::vector<double>{}, std::vector<int>{}, 15), ContractError);
}

TEST_CASE("ece equals a brute-force binning oracle exactly") {
  Rng rng(5);
  std::vector<double> p(1000);
  std::vector<int> y(1000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform();
    y[i] = rng.uniform() < p[i] ? 1 : 0;
  }
  // exact bin-edge hits
  p[0] = 0.5, p[1] = 1.0, p[2] = 0.0, p[3] = 0.75, p[4] = 0.8;
  for (int bins : {2, 15, 500}) {
    CAPTURE(bins);
    CHECK(ece(p, y, bins) == ece_oracle(p, y, bins));
  }
}

TEST_CASE("reliability table: single bin, counts, exact recomputation, invariances") {
  Rng rng(6);
  std::vector<double> p(300);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform();
    y[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  const ReliabilityTable one = reliability_table(p, y, 1);
  std::size_t correct = 0;
  double conf = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    correct += (p[i] >= 0.5 ? 1 : 0) == y[i];
    conf += std::max(p[i], 1.0 - p[i]);
  }
  CHECK(one.bins[0].count == 300);
  CHECK(std::abs(one.bins[0].accuracy - correct / 300.0) < 1e-15);
  CHECK(std::abs(one.bins[0].confidence - conf / 300.0) < 1e-12);

  for (int bins : {2, 15, 500}) {
    const ReliabilityTable t = reliability_table(p, y, bins);
    std::size_t total = 0;
    for (const auto& b : t.bins) {
      total += b.count;
      CHECK(b.accuracy >= 0.0);
      CHECK(b.accuracy <= 1.0);
      CHECK(b.confidence <= 1.0);
      if (b.count == 0) CHECK(b.accuracy == 0.0);
    }
    CHECK(total == 300);
    CHECK(t.ece() == ece(p, y, bins));

    // duplicate the sample set; reverse its order
    std::vector<double> p2(p.rbegin(), p.rend());
    std::vector<int> y2(y.rbegin(), y.rend());
    p2.insert(p2.end(), p.begin(), p.end());
    y2.insert(y2.end(), y.begin(), y.end());
    CHECK(std::abs(ece(p2, y2, bins) - ece(p, y, bins)) < 1e-12);
    const double e = ece(p, y, bins);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
}

TEST_CASE("reliability CSV layout") {
  const std::vector<double> p = {0.9, 0.2};
  const std::string csv = reliability_csv(reliability_table(p, std::vector<int>{1, 0}, 2));
  CHECK(csv.rfind("bin_lo,bin_hi,count,accuracy,confidence\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
