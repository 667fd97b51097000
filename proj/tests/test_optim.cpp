#include <gtest/gtest.h>

#include <random>

#include "knnue/calibration/temperature.hpp"
#include "knnue/optim.hpp"
#include "oracles.hpp"

using namespace knnue;
using optim::BoundedProblem;

namespace {

BoundedProblem box(std::size_t dim, double lo, double hi, optim::Objective f) {
    BoundedProblem p;
    p.dim = dim;
    p.lower.assign(dim, lo);
    p.upper.assign(dim, hi);
    p.objective = std::move(f);
    return p;
}

double rosenbrock(std::span<const double> x) {
    return 100.0 * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]) + (1.0 - x[0]) * (1.0 - x[0]);
}

}  // namespace

TEST(Minimize, BoundActiveOptimumSitsOnTheBound) {
    auto p = box(1, 0.0, 2.0, [](std::span<const double> x) { return (x[0] - 3.0) * (x[0] - 3.0); });
    const auto r = optim::minimize_bounded(p, std::vector<double>{0.5});
    EXPECT_EQ(r.x[0], 2.0);
    EXPECT_TRUE(r.converged) << r.message;
    EXPECT_DOUBLE_EQ(r.f, 1.0);
    // Multiplier sign: at the upper bound the gradient must point outward (negative).
    EXPECT_LT(optim::finite_diff_grad(p.objective, r.x)[0], 0.0);
}

TEST(Minimize, LowerBoundPinnedCoordinateWithInteriorOther) {
    auto p = box(2, 0.0, 10.0, [](std::span<const double> x) {
        return (x[0] + 1.0) * (x[0] + 1.0) + (x[1] - 4.0) * (x[1] - 4.0);
    });
    const auto r = optim::minimize_bounded(p, std::vector<double>{5.0, 5.0});
    EXPECT_EQ(r.x[0], 0.0);
    EXPECT_NEAR(r.x[1], 4.0, 1e-6);
}

TEST(Minimize, RosenbrockReachesOneOne) {
    auto p = box(2, -5.0, 5.0, rosenbrock);
    p.max_iterations = 2000;
    const auto r = optim::minimize_bounded(p, std::vector<double>{-1.2, 1.0});
    EXPECT_NEAR(r.x[0], 1.0, 1e-6);
    EXPECT_NEAR(r.x[1], 1.0, 1e-6);
}

TEST(Minimize, RosenbrockWithAnalyticGradient) {
    auto p = box(2, -5.0, 5.0, rosenbrock);
    p.max_iterations = 2000;
    p.gradient = [](std::span<const double> x, std::span<double> g) {
        g[0] = -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]);
        g[1] = 200.0 * (x[1] - x[0] * x[0]);
    };
    const auto r = optim::minimize_bounded(p, std::vector<double>{3.0, -4.0});
    EXPECT_NEAR(r.x[0], 1.0, 1e-6);
    EXPECT_NEAR(r.x[1], 1.0, 1e-6);
}

TEST(Minimize, SpdQuadraticMatchesClosedFormProperty) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 5;
        // A = M M^T + n I, f(x) = x^T A x + b^T x, optimum -A^{-1} b / 2.
        std::vector<double> m(n * n), a(n * n, 0.0), b(n);
        for (auto& v : m) v = g(rng);
        for (auto& v : b) v = g(rng);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t k = 0; k < n; ++k) a[i * n + j] += m[i * n + k] * m[j * n + k];
                if (i == j) a[i * n + j] += static_cast<double>(n);
            }
        auto f = [&](std::span<const double> x) {
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                v += b[i] * x[i];
                for (std::size_t j = 0; j < n; ++j) v += x[i] * a[i * n + j] * x[j];
            }
            return v;
        };
        auto p = box(n, -100.0, 100.0, f);
        p.gradient = [&](std::span<const double> x, std::span<double> grad) {
            for (std::size_t i = 0; i < n; ++i) {
                grad[i] = b[i];
                for (std::size_t j = 0; j < n; ++j) grad[i] += 2.0 * a[i * n + j] * x[j];
            }
        };
        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = -b[i] / 2.0;
        const auto want = oracle::solve(a, rhs);
        const auto r = optim::minimize_bounded(p, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r.x[i], want[i], 1e-8) << "trial " << trial;
    }
}

TEST(Minimize, IteratesStayFeasibleAndObjectiveNeverIncreases) {
    std::vector<std::vector<double>> probes;
    auto p = box(2, -1.0, 0.5, [&](std::span<const double> x) {
        probes.emplace_back(x.begin(), x.end());
        return rosenbrock(x);
    });
    const auto r = optim::minimize_bounded(p, std::vector<double>{-1.0, -1.0});
    for (const auto& x : probes) {
        for (std::size_t i = 0; i < 2; ++i) {
            ASSERT_GE(x[i], -1.0);
            ASSERT_LE(x[i], 0.5);
        }
    }
    for (std::size_t i = 1; i < r.trace.size(); ++i) ASSERT_LE(r.trace[i], r.trace[i - 1]);
    EXPECT_LE(r.f, r.trace.front());
}

TEST(Minimize, IsDeterministic) {
    auto p = box(2, -5.0, 5.0, rosenbrock);
    const auto a = optim::minimize_bounded(p, std::vector<double>{-1.2, 1.0});
    const auto b = optim::minimize_bounded(p, std::vector<double>{-1.2, 1.0});
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Minimize, StartOutsideBoxIsClippedAndFlagged) {
    auto p = box(1, 0.0, 2.0, [](std::span<const double> x) { return (x[0] - 1.0) * (x[0] - 1.0); });
    const auto r = optim::minimize_bounded(p, std::vector<double>{7.0});
    EXPECT_TRUE(r.start_clipped);
    EXPECT_EQ(r.trace.front(), 1.0);
    EXPECT_NEAR(r.x[0], 1.0, 1e-7);
    EXPECT_FALSE(optim::minimize_bounded(p, std::vector<double>{0.3}).start_clipped);
}

TEST(Minimize, NanObjectiveAbortsWithLastFeasibleIterate) {
    auto p = box(1, 0.0, 10.0, [](std::span<const double> x) {
        return x[0] > 1.0 ? std::numeric_limits<double>::quiet_NaN() : (x[0] - 5.0) * (x[0] - 5.0);
    });
    const auto r = optim::minimize_bounded(p, std::vector<double>{0.0});
    EXPECT_TRUE(r.aborted_nan);
    EXPECT_FALSE(r.converged);
    EXPECT_TRUE(std::isfinite(r.f));
    EXPECT_LE(r.x[0], 1.0);
    EXPECT_EQ(r.f, (r.x[0] - 5.0) * (r.x[0] - 5.0));
}

TEST(Minimize, NanAtStartAborts) {
    auto p = box(1, 0.0, 1.0, [](std::span<const double>) { return std::numeric_limits<double>::quiet_NaN(); });
    const auto r = optim::minimize_bounded(p, std::vector<double>{0.5});
    EXPECT_TRUE(r.aborted_nan);
    EXPECT_EQ(r.x, std::vector<double>{0.5});
}

TEST(Minimize, RejectsBadProblems) {
    auto p = box(1, 0.0, 1.0, [](std::span<const double> x) { return x[0]; });
    p.upper[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(optim::minimize_bounded(p, std::vector<double>{0.5}), Error);
    p.upper[0] = -1.0;
    EXPECT_THROW(optim::minimize_bounded(p, std::vector<double>{0.5}), Error);
    p.upper[0] = 1.0;
    p.pgtol = 0.0;
    EXPECT_THROW(optim::minimize_bounded(p, std::vector<double>{0.5}), Error);
    p.pgtol = 1e-8;
    EXPECT_THROW(optim::minimize_bounded(p, std::vector<double>{0.5, 0.5}), Error);
}

TEST(Minimize, PinnedCoordinateWithEqualBoundsNeverMoves) {
    auto p = box(2, -3.0, 3.0, [](std::span<const double> x) { return (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1] * x[1]; });
    p.lower[1] = p.upper[1] = 0.25;
    const auto r = optim::minimize_bounded(p, std::vector<double>{0.0, 0.25});
    EXPECT_EQ(r.x[1], 0.25);
    EXPECT_NEAR(r.x[0], 1.0, 1e-7);
}

TEST(MinimizeTrace, SerializesToJson) {
    auto p = box(1, 0.0, 2.0, [](std::span<const double> x) { return (x[0] - 3.0) * (x[0] - 3.0); });
    const auto j = optim::minimize_bounded(p, std::vector<double>{0.0}).trace_json();
    EXPECT_EQ(j.at("x")[0], 2.0);
    EXPECT_TRUE(j.at("trace").is_array());
}

TEST(FiniteDiff, SquareAtThree) {
    const auto g = optim::finite_diff_grad([](std::span<const double> x) { return x[0] * x[0]; }, std::vector<double>{3.0});
    EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, LinearIsExact) {
    const std::vector<double> c{2.5, -1.0, 0.125};
    auto f = [&](std::span<const double> x) { return c[0] * x[0] + c[1] * x[1] + c[2] * x[2] + 4.0; };
    const auto g = optim::finite_diff_grad(f, std::vector<double>{0.3, -0.7, 1.1});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], c[i], 1e-9);
}

TEST(FiniteDiff, TemperatureNllMatchesAnalyticGradient) {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> g(0.0f, 3.0f);
    std::vector<EvalRecord> dev(200);
    for (auto& r : dev) {
        r.logits = {g(rng), g(rng), g(rng), g(rng)};
        r.gold = static_cast<std::int32_t>(rng() % 4);
    }
    const std::span<const EvalRecord> recs = dev;
    for (double t : {1.0, 0.5, 2.7}) {
        const auto fd = optim::finite_diff_grad([&](std::span<const double> x) { return calib::ts_nll(recs, x[0]); },
                                                std::vector<double>{t});
        // Independent derivative of mean NLL wrt T: mean over records of (z_gold - E_p[z]) / T^2.
        double want = 0.0;
        for (const auto& r : dev) {
            std::vector<double> z(r.logits.begin(), r.logits.end());
            std::vector<double> scaled(z);
            for (auto& v : scaled) v /= t;
            const auto p = oracle::softmax(scaled);
            double ez = 0.0;
            for (std::size_t c = 0; c < z.size(); ++c) ez += p[c] * z[c];
            want += (z[static_cast<std::size_t>(r.gold)] - ez) / (t * t);
        }
        want /= static_cast<double>(dev.size());
        EXPECT_NEAR(fd[0], want, 1e-4 * std::abs(want)) << "T=" << t;
        EXPECT_NEAR(calib::ts_nll_gradient(recs, t), want, 1e-10 * std::max(1.0, std::abs(want)));
    }
}

TEST(FiniteDiff, NanObjectiveThrows) {
    EXPECT_THROW(optim::finite_diff_grad([](std::span<const double>) { return std::nan(""); }, std::vector<double>{1.0}),
                 Error);
}

TEST(GridRefine, OneDimensionalConvexWithinOneCell) {
    const double lo = -2.0, hi = 5.0;
    const int pts = 15;
    const auto x = optim::grid_refine([](std::span<const double> v) { return (v[0] - 1.37) * (v[0] - 1.37); },
                                      std::vector<double>{lo}, std::vector<double>{hi}, pts);
    EXPECT_LE(std::abs(x[0] - 1.37), (hi - lo) / (pts - 1));
}

TEST(GridRefine, ConstantObjectivePicksFirstPoint) {
    const auto x = optim::grid_refine([](std::span<const double>) { return 3.0; }, std::vector<double>{1.0, -2.0, 0.0},
                                      std::vector<double>{4.0, 2.0, 1.0}, 3);
    EXPECT_EQ(x, (std::vector<double>{1.0, -2.0, 0.0}));
}

TEST(GridRefine, VisitsEveryPointOfFourDimensionalGrid) {
    int calls = 0;
    const auto x = optim::grid_refine(
        [&](std::span<const double> v) {
            ++calls;
            return std::abs(v[0] - 1) + std::abs(v[1]) + std::abs(v[2] - 2) + std::abs(v[3] + 1);
        },
        std::vector<double>{0, 0, 0, -1}, std::vector<double>{2, 2, 2, 1}, 3);
    EXPECT_EQ(calls, 81);
    EXPECT_EQ(x, (std::vector<double>{1, 0, 2, -1}));
}

TEST(GridRefine, CapsDimensionAndPointCount) {
    auto f = [](std::span<const double>) { return 0.0; };
    EXPECT_THROW(optim::grid_refine(f, std::vector<double>(5, 0.0), std::vector<double>(5, 1.0), 2), Error);
    EXPECT_THROW(optim::grid_refine(f, std::vector<double>(1, 0.0), std::vector<double>(1, 1.0), 1), Error);
}
