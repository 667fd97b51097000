#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knnue/core.hpp"

namespace knnue::optim {

using Objective = std::function<double(std::span<const double>)>;
using Gradient = std::function<void(std::span<const double>, std::span<double>)>;

/// Box-constrained minimization problem. When `gradient` is empty, central differences
/// with step `fd_step` are used (one-sided next to a bound so the objective is never
/// evaluated outside the box).
struct BoundedProblem {
    std::size_t dim = 0;
    Objective objective;
    Gradient gradient;
    std::vector<double> lower;
    std::vector<double> upper;
    double fd_step = 1e-5;
    int max_iterations = 500;
    double pgtol = 1e-8;
    double ftol = 1e-15;
    int history = 10;

    void validate() const {
        require(dim > 0, ErrorKind::invalid_argument, "problem dimension must be positive");
        require(static_cast<bool>(objective), ErrorKind::invalid_argument, "missing objective");
        require(lower.size() == dim && upper.size() == dim, ErrorKind::dimension_mismatch, "bounds length");
        for (std::size_t i = 0; i < dim; ++i) {
            require(std::isfinite(lower[i]) && std::isfinite(upper[i]), ErrorKind::non_finite,
                    "non-finite bound in dim " + std::to_string(i));
            require(lower[i] <= upper[i], ErrorKind::invalid_argument, "lower > upper in dim " + std::to_string(i));
        }
        require(fd_step > 0 && pgtol > 0 && ftol >= 0 && history > 0 && max_iterations > 0,
                ErrorKind::invalid_argument, "tolerances must be positive");
    }
};

struct MinimizeResult {
    std::vector<double> x;
    double f = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    bool converged = false;
    bool start_clipped = false;
    bool aborted_nan = false;
    std::string message;
    std::vector<double> trace;  // objective value of each accepted iterate, starting at x0

    nlohmann::json trace_json() const {
        return {{"x", x}, {"f", f}, {"iterations", iterations}, {"converged", converged},
                {"message", message}, {"trace", trace}};
    }
};

/// Component-wise central differences: (f(x + h e_i) - f(x - h e_i)) / 2h.
inline std::vector<double> finite_diff_grad(const Objective& objective, std::span<const double> x, double h = 1e-5) {
    require(all_finite(x), ErrorKind::non_finite, "finite_diff_grad: non-finite x");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = objective(probe);
        probe[i] = x[i] - h;
        const double fm = objective(probe);
        probe[i] = x[i];
        require(std::isfinite(fp) && std::isfinite(fm), ErrorKind::non_finite, "finite_diff_grad: objective is NaN");
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline void project(std::span<double> x, const std::vector<double>& lo, const std::vector<double>& hi) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
}

// Bound-aware differences: central where both probes are feasible, one-sided otherwise.
inline void box_fd_grad(const BoundedProblem& p, std::span<const double> x, std::span<double> grad) {
    std::vector<double> probe(x.begin(), x.end());
    const double h = p.fd_step;
    for (std::size_t i = 0; i < p.dim; ++i) {
        const double up = std::min(x[i] + h, p.upper[i]);
        const double dn = std::max(x[i] - h, p.lower[i]);
        if (up == dn) {
            grad[i] = 0.0;
            continue;
        }
        probe[i] = up;
        const double fp = p.objective(probe);
        probe[i] = dn;
        const double fm = p.objective(probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (up - dn);
    }
}

}  // namespace detail

/// L-BFGS with gradient projection for box constraints.
///
/// Each iteration fixes the active set (coordinates at a bound whose gradient pushes
/// outward), takes a two-loop L-BFGS direction on the free coordinates, and runs a
/// projected backtracking line search with an Armijo sufficient-decrease test. Every
/// iterate is exactly feasible and the objective never increases between accepted
/// iterates. Converges when the projected-gradient infinity norm drops below pgtol.
inline MinimizeResult minimize_bounded(const BoundedProblem& problem, std::span<const double> x0) {
    problem.validate();
    require(x0.size() == problem.dim, ErrorKind::dimension_mismatch, "x0 length");
    require(all_finite(x0), ErrorKind::non_finite, "x0 has non-finite entries");

    const std::size_t n = problem.dim;
    const auto& lo = problem.lower;
    const auto& hi = problem.upper;

    MinimizeResult result;
    std::vector<double> x(x0.begin(), x0.end());
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] < lo[i] || x[i] > hi[i]) result.start_clipped = true;
    }
    detail::project(x, lo, hi);

    auto eval_grad = [&](std::span<const double> at, std::span<double> g) {
        if (problem.gradient) {
            problem.gradient(at, g);
        } else {
            detail::box_fd_grad(problem, at, g);
        }
    };

    double f = problem.objective(x);
    result.x = x;
    result.f = f;
    result.trace.push_back(f);
    if (!std::isfinite(f)) {
        result.aborted_nan = true;
        result.message = "objective is not finite at the starting point";
        return result;
    }

    std::vector<double> g(n), g_new(n), d(n), x_new(n), step(n);
    eval_grad(x, g);

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> memory;

    auto projected_grad_norm = [&](const std::vector<double>& at, const std::vector<double>& grad) {
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double moved = std::clamp(at[i] - grad[i], lo[i], hi[i]) - at[i];
            norm = std::max(norm, std::abs(moved));
        }
        return norm;
    };

    for (int iter = 0; iter < problem.max_iterations; ++iter) {
        result.iterations = iter;
        if (!all_finite(g)) {
            result.aborted_nan = true;
            result.message = "gradient is not finite";
            return result;
        }
        if (projected_grad_norm(x, g) < problem.pgtol) {
            result.converged = true;
            result.message = "projected gradient below tolerance";
            return result;
        }

        std::vector<bool> active(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            active[i] = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) || lo[i] == hi[i];
        }

        // Two-loop recursion on the masked gradient.
        for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : g[i];
        std::vector<double> alphas(memory.size());
        for (std::size_t k = memory.size(); k-- > 0;) {
            alphas[k] = memory[k].rho * detail::dot(memory[k].s, d);
            for (std::size_t i = 0; i < n; ++i) d[i] -= alphas[k] * memory[k].y[i];
        }
        if (!memory.empty()) {
            const auto& last = memory.back();
            const double gamma = detail::dot(last.s, last.y) / detail::dot(last.y, last.y);
            for (auto& v : d) v *= gamma;
        }
        for (std::size_t k = 0; k < memory.size(); ++k) {
            const double beta = memory[k].rho * detail::dot(memory[k].y, d);
            for (std::size_t i = 0; i < n; ++i) d[i] += (alphas[k] - beta) * memory[k].s[i];
        }
        for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : -d[i];

        if (detail::dot(d, g) >= 0.0) {
            memory.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : -g[i];
        }

        double t = 1.0;
        if (memory.empty()) {
            double dmax = 0.0;
            for (double v : d) dmax = std::max(dmax, std::abs(v));
            if (dmax > 0.0) t = std::min(1.0, 1.0 / dmax);
        }

        bool accepted = false;
        double f_new = f;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + t * d[i];
            detail::project(x_new, lo, hi);
            for (std::size_t i = 0; i < n; ++i) step[i] = x_new[i] - x[i];
            const double decrease = detail::dot(g, step);
            if (std::all_of(step.begin(), step.end(), [](double v) { return v == 0.0; })) break;
            f_new = problem.objective(x_new);
            if (std::isnan(f_new)) {
                result.aborted_nan = true;
                result.message = "objective returned NaN; keeping the last feasible iterate";
                return result;
            }
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * decrease && decrease < 0.0) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }

        if (!accepted) {
            if (!memory.empty()) {
                memory.clear();
                continue;
            }
            result.converged = projected_grad_norm(x, g) < std::sqrt(problem.pgtol);
            result.message = "line search could not decrease the objective";
            return result;
        }

        eval_grad(x_new, g_new);
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        const double sy = detail::dot(s, y);
        if (sy > 1e-12 * detail::dot(y, y) && sy > 0.0) {
            memory.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (memory.size() > static_cast<std::size_t>(problem.history)) memory.pop_front();
        } else {
            // Non-positive curvature: stale pairs would mis-scale the next step.
            memory.clear();
        }

        const double f_old = f;
        x = x_new;
        g = g_new;
        f = f_new;
        result.x = x;
        result.f = f;
        result.trace.push_back(f);

        if (std::abs(f_old - f) <= problem.ftol * std::max({std::abs(f_old), std::abs(f), 1.0}) &&
            projected_grad_norm(x, g) < std::sqrt(problem.pgtol)) {
            result.converged = true;
            result.iterations = iter + 1;
            result.message = "relative objective change below ftol";
            return result;
        }
    }
    result.iterations = problem.max_iterations;
    result.message = "iteration limit reached";
    return result;
}

/// Evaluates the objective on a uniform grid (points_per_dim per axis, bounds inclusive)
/// and returns the best point; the first point in lexicographic order wins ties.
inline std::vector<double> grid_refine(const Objective& objective, std::span<const double> lower,
                                       std::span<const double> upper, int points_per_dim) {
    const std::size_t dim = lower.size();
    require(dim >= 1 && dim <= 4, ErrorKind::invalid_argument, "grid_refine supports 1..4 dimensions");
    require(upper.size() == dim, ErrorKind::dimension_mismatch, "bounds length");
    require(points_per_dim >= 2, ErrorKind::invalid_argument, "points_per_dim must be >= 2");

    std::vector<int> idx(dim, 0);
    std::vector<double> point(dim), best;
    double best_f = std::numeric_limits<double>::infinity();
    while (true) {
        for (std::size_t i = 0; i < dim; ++i) {
            point[i] = lower[i] + (upper[i] - lower[i]) * idx[i] / (points_per_dim - 1);
        }
        const double f = objective(point);
        if (std::isfinite(f) && (best.empty() || f < best_f)) {
            best_f = f;
            best = point;
        }
        std::size_t axis = dim;
        while (axis-- > 0) {
            if (++idx[axis] < points_per_dim) break;
            idx[axis] = 0;
        }
        if (axis == static_cast<std::size_t>(-1)) break;
    }
    require(!best.empty(), ErrorKind::non_finite, "grid_refine: objective not finite anywhere on the grid");
    return best;
}

}  // namespace knnue::optim
