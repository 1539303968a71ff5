#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mrs/trend_basis.hpp"

using namespace mrs;
using Catch::Approx;

TEST_CASE("Haar filter is the two-tap average") {
  const auto f = daubechies_filters(1);
  REQUIRE(f.h.size() == 2);
  CHECK(f.h[0] == Approx(1.0 / std::sqrt(2.0)).margin(1e-15));
  CHECK(f.h[1] == Approx(1.0 / std::sqrt(2.0)).margin(1e-15));
}

TEST_CASE("Daubechies tables satisfy the orthonormality identities") {
  for (int p = 1; p <= 10; ++p) {
    const auto f = daubechies_filters(p);
    const std::size_t N = f.h.size();
    REQUIRE(N == static_cast<std::size_t>(2 * p));
    double sum = 0.0;
    for (double v : f.h) sum += v;
    CHECK(std::abs(sum - std::sqrt(2.0)) < 1e-12);
    for (std::size_t m = 0; 2 * m < N; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k + 2 * m < N; ++k) acc += f.h[k] * f.h[k + 2 * m];
      CHECK(std::abs(acc - (m == 0 ? 1.0 : 0.0)) < 1e-12);
    }
    for (std::size_t j = 0; j < N; ++j) {
      const double sign = (j % 2 == 0) ? 1.0 : -1.0;
      CHECK(f.g[j] == sign * f.h[N - 1 - j]);
    }
    // p vanishing moments of the high-pass filter.
    for (int m = 0; m < p; ++m) {
      double moment = 0.0;
      double scale = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        moment += f.g[j] * std::pow(static_cast<double>(j), m);
        scale += std::abs(f.g[j]) * std::pow(static_cast<double>(j), m);
      }
      CHECK(std::abs(moment) < 1e-10 * scale);
    }
  }
}

TEST_CASE("order 8 high-pass sign follows (-1)^j h_{N-1-j}") {
  const auto f = daubechies_filters(8);
  CHECK(f.g[0] == f.h[15]);
  CHECK(f.g[1] == -f.h[14]);
}

TEST_CASE("unsupported wavelet orders are rejected") {
  CHECK_THROWS_AS(daubechies_filters(0), ConfigError);
  CHECK_THROWS_AS(daubechies_filters(11), ConfigError);
}

TEST_CASE("padding plan closed forms") {
  SECTION("default wavelet configuration") {
    const auto plan = padding_plan(2342, 8, 8);
    CHECK(plan.front == 3570);
    CHECK(plan.back == 3802);
    CHECK(plan.q == 24);
    CHECK(plan.L == 9714);
    CHECK(plan.level_sizes.front() == 9714);
    CHECK(plan.level_sizes.back() == 24);
  }
  SECTION("Haar one level has no spill") {
    const auto plan = padding_plan(256, 1, 1);
    CHECK(plan.front == 0);
    CHECK(plan.q == 128);
    CHECK(plan.L == 256);
    CHECK(plan.back == 0);
  }
  SECTION("hand-evaluated small plan") {
    // front = 2*7*3 = 42, q = ceil(142/4) = 36, L = 42 + 4*36 = 186, back = 44
    const auto plan = padding_plan(100, 8, 2);
    CHECK(plan.front == 42);
    CHECK(plan.q == 36);
    CHECK(plan.L == 186);
    CHECK(plan.back == 44);
  }
  SECTION("level sizes decrease to q and total length adds up") {
    for (int T : {10, 57, 300, 1000, 2342}) {
      for (int p : {1, 2, 4, 8}) {
        for (int J : {1, 3, 6}) {
          const auto plan = padding_plan(T, p, J);
          CHECK(plan.front + T + plan.back == plan.L);
          CHECK(plan.back >= 0);
          REQUIRE(plan.level_sizes.size() == static_cast<std::size_t>(J + 1));
          for (int j = 0; j < J; ++j) CHECK(plan.level_sizes[j + 1] < plan.level_sizes[j]);
          CHECK(plan.level_sizes[J] == plan.q);
        }
      }
    }
  }
}

TEST_CASE("symmetric padding reflects without repeating the edge point") {
  PaddingPlan plan;
  plan.T = 3;
  plan.front = 2;
  plan.back = 1;
  plan.L = 6;
  const std::vector<double> x{1, 2, 3};
  CHECK(symmetric_pad(x, plan) == std::vector<double>{3, 2, 1, 2, 3, 2});

  SECTION("tiles when the pad exceeds the series") {
    PaddingPlan wide = plan;
    wide.front = 5;
    wide.back = 5;
    wide.L = 13;
    CHECK(symmetric_pad(x, wide) == std::vector<double>{2, 1, 2, 3, 2, 1, 2, 3, 2, 1, 2, 3, 2});
  }
  SECTION("constant stays constant") {
    const auto p = padding_plan(50, 4, 3);
    const std::vector<double> c(50, 7.5);
    for (double v : symmetric_pad(c, p)) CHECK(v == 7.5);
  }
  SECTION("no padding is the identity") {
    const auto p = padding_plan(256, 1, 1);
    std::vector<double> y(256);
    for (int i = 0; i < 256; ++i) y[i] = i * 0.5;
    CHECK(symmetric_pad(y, p) == y);
  }
}

TEST_CASE("Haar design matrix") {
  const auto plan = padding_plan(4, 1, 1);
  const auto W = wavelet_design(plan, daubechies_filters(1));
  REQUIRE(W.rows() == 4);
  REQUIRE(W.cols() == 2);
  const double a = 1.0 / std::sqrt(2.0);
  Eigen::MatrixXd expected(4, 2);
  expected << a, 0, a, 0, 0, a, 0, a;
  CHECK((W - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("wavelet design for the default configuration") {
  const auto plan = padding_plan(2342, 8, 8);
  const auto filters = daubechies_filters(8);
  const Eigen::MatrixXd W = wavelet_design(plan, filters);
  REQUIRE(W.rows() == 9714);
  REQUIRE(W.cols() == 24);

  SECTION("columns are orthonormal") {
    const Eigen::MatrixXd G = W.transpose() * W;
    CHECK((G - Eigen::MatrixXd::Identity(24, 24)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("smoother is idempotent") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Eigen::VectorXd v(W.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n01(rng);
    const Eigen::VectorXd once = W * (W.transpose() * v);
    const Eigen::VectorXd twice = W * (W.transpose() * once);
    CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("constants are reproduced on observation rows") {
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(W.rows(), 3.25);
    const Eigen::VectorXd fit = W * (W.transpose() * c);
    const auto obs = (fit - c).segment(plan.front, plan.T);
    CHECK(obs.cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("polynomials up to degree p-1 are reproduced on interior rows") {
    const double half = plan.L / 2.0;
    for (int deg = 0; deg <= 7; ++deg) {
      Eigen::VectorXd f(W.rows());
      for (Eigen::Index r = 0; r < f.size(); ++r) f(r) = std::pow((r - half) / half, deg);
      const Eigen::VectorXd fit = W * (W.transpose() * f);
      CHECK((fit - f).segment(plan.front, plan.T).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SECTION("filter bank equals least squares") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(W);
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<double> x(2342);
      double level = 50.0;
      for (double& v : x) v = (level += n01(rng));
      const auto padded = symmetric_pad(x, plan);
      const auto a = wavelet_coefficients(padded, plan, filters);
      const Eigen::VectorXd ls = qr.solve(Eigen::Map<const Eigen::VectorXd>(padded.data(), plan.L));
      REQUIRE(a.size() == 24);
      for (int c = 0; c < 24; ++c) CHECK(std::abs(a[c] - ls(c)) < 1e-8);
    }
  }
}

TEST_CASE("spline basis construction") {
  SECTION("default knot count") { CHECK(default_knot_count(2342, 180.0) == 13); }

  SECTION("partition of unity on and between observation times") {
    const auto d = spline_design(2342);
    CHECK(d.C.cols() == 17);
    for (Eigen::Index t = 0; t < d.C.rows(); ++t) CHECK(std::abs(d.C.row(t).sum() - 1.0) < 1e-10);
    for (double x = -1.0; x <= 2343.0; x += 7.3) {
      double s = 0.0;
      for (double v : d.basis.evaluate(x)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-10);
    }
  }

  SECTION("exactly k+2 functions are retained") {
    for (int T : {50, 400, 2342}) {
      const auto d = spline_design(T);
      const int k = static_cast<int>(d.basis.knots.size());
      int kept = 0;
      for (bool b : d.retained) kept += b;
      CHECK(kept == k + 2);
      CHECK_FALSE(d.retained.front());
      CHECK_FALSE(d.retained.back());
    }
  }

  SECTION("two knots reproduce cubics") {
    const int T = 120;
    const auto d = spline_design(T, 180.0, 2);
    const Eigen::MatrixXd C = d.retained_columns();
    REQUIRE(C.cols() == 4);
    Eigen::VectorXd y(T);
    for (int t = 0; t < T; ++t) y(t) = std::pow(t / 60.0 - 1.0, 3) - 0.5 * t / 60.0 + 2.0;
    const Eigen::VectorXd coef = C.colPivHouseholderQr().solve(y);
    CHECK((C * coef - y).cwiseAbs().maxCoeff() < 1e-6);
  }

  SECTION("fitted curves are C2 across knots") {
    const auto basis = make_spline_basis({0.0, 10.0, 20.0, 30.0, 40.0});
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::vector<double> coef(static_cast<std::size_t>(basis.function_count()));
    for (double& c : coef) c = n01(rng);
    auto f = [&](double x) {
      const auto b = basis.evaluate(x);
      double s = 0.0;
      for (std::size_t i = 0; i < b.size(); ++i) s += coef[i] * b[i];
      return s;
    };
    for (double eta : {10.0, 20.0, 30.0}) {
      double prev_d1 = 0.0, prev_d2 = 0.0;
      for (int level = 0; level < 4; ++level) {
        const double h = 0.1 / std::pow(4.0, level);
        const double left1 = (f(eta) - f(eta - h)) / h;
        const double right1 = (f(eta + h) - f(eta)) / h;
        const double left2 = (f(eta) - 2 * f(eta - h) + f(eta - 2 * h)) / (h * h);
        const double right2 = (f(eta + 2 * h) - 2 * f(eta + h) + f(eta)) / (h * h);
        const double d1 = std::abs(right1 - left1);
        const double d2 = std::abs(right2 - left2);
        if (level > 0) {
          CHECK(d1 < prev_d1 * 0.3 + 1e-9);
          CHECK(d2 < prev_d2 * 0.3 + 1e-6);
        }
        prev_d1 = d1;
        prev_d2 = d2;
      }
      CHECK(prev_d1 < 1e-2);
    }
  }

  SECTION("non-increasing knots are rejected") {
    CHECK_THROWS_AS(make_spline_basis({0.0, 1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(make_spline_basis({0.0}), ConfigError);
    CHECK_THROWS_AS(spline_design(100, 180.0, 1), ConfigError);
  }
}

TEST_CASE("weekly dummy matrix") {
  CHECK(weekly_design(7, 0).isApprox(Eigen::MatrixXd::Identity(7, 7)));
  const auto M14 = weekly_design(14, 0);
  CHECK(M14.topRows(7).isApprox(Eigen::MatrixXd::Identity(7, 7)));
  CHECK(M14.bottomRows(7).isApprox(Eigen::MatrixXd::Identity(7, 7)));
  const auto M = weekly_design(30, 3);
  CHECK(M(0, 3) == 1.0);
  CHECK(M(4, 0) == 1.0);
  for (Eigen::Index t = 0; t < M.rows(); ++t) CHECK(M.row(t).sum() == 1.0);
}

TEST_CASE("combined design matrices") {
  SECTION("spline") {
    TrendOptions opt;
    opt.kind = TrendKind::spline;
    const auto d = build_design(opt, 2342, 1);
    CHECK(d.Z.rows() == 2342);
    CHECK(d.columns() == 7 + 15);
    CHECK(d.n_longterm == 15);
    for (int t = 0; t < 2342; ++t) CHECK(d.obs_rows[t] == t);
    const Eigen::MatrixXd Zo = d.observed();
    for (Eigen::Index t = 0; t < Zo.rows(); ++t) {
      CHECK(Zo.row(t).head(7).sum() == 1.0);
      CHECK(std::abs(Zo.row(t).tail(15).sum() - 1.0) < 1e-10);
    }
  }
  SECTION("wavelet") {
    TrendOptions opt;
    opt.kind = TrendKind::wavelet;
    const auto d = build_design(opt, 2342, 2);
    CHECK(d.Z.rows() == 9714);
    CHECK(d.columns() == 31);
    CHECK(d.obs_rows.front() == 3570);
    CHECK(d.obs_rows.back() == 3570 + 2341);
    const Eigen::MatrixXd Zo = d.observed();
    const Eigen::MatrixXd M = weekly_design(2342, 2);
    CHECK((Zo.leftCols(7) - M).cwiseAbs().maxCoeff() == 0.0);
    // Weekly columns are 0/1 and padded like the data.
    for (Eigen::Index r = 0; r < d.Z.rows(); ++r) {
      CHECK(d.Z.row(r).head(7).sum() == 1.0);
    }
    const auto plan = padding_plan(2342, 8, 8);
    std::vector<double> col(2342);
    for (int t = 0; t < 2342; ++t) col[t] = M(t, 4);
    const auto padded = symmetric_pad(col, plan);
    for (Eigen::Index r = 0; r < d.Z.rows(); ++r) CHECK(d.Z(r, 4) == padded[r]);
  }
  SECTION("weekly only") {
    TrendOptions opt;
    opt.kind = TrendKind::weekly_only;
    const auto d = build_design(opt, 40, 6);
    CHECK(d.Z.isApprox(weekly_design(40, 6)));
    CHECK(d.n_longterm == 0);
  }
}
