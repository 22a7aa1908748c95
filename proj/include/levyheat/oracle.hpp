#pragma once

#include <cmath>
#include <vector>

#include "levyheat/conv_calculus.hpp"

namespace levyheat {

struct XGrid {
    double x0 = 0.0;
    double dx = 1.0;
    int nx = 1;
    double x(int j) const { return x0 + j * dx; }
};

namespace detail {

// (1/dx) ∫ D_s(y)² ℓ(y/dx − j) dy at every node, D_s = p_s * u0; geometric panels around atoms.
inline void hat_averaged_sq(const KernelModel& k, const FiniteMeasure& u0, double s, const XGrid& g, double* out) {
    const double ws = kernel_width(k, s);
    const double R = reach_factor(k) * ws;
    const double inv = 1.0 / k.scale(s);
    const bool atoms_only = !u0.density();
    auto D = [&](double y) {
        if (!atoms_only) return heat_convolve(k, u0, s, y);
        double v = 0.0;
        for (const auto& a : u0.atoms()) v += a.m * k.unit_q((y - a.y) * inv) * inv;
        return v;
    };
    const auto& gl = quad::legendre<4>();
    std::vector<double> b;
    for (int j = 0; j < g.nx; ++j) {
        const double xj = g.x(j);
        double acc = 0.0;
        for (int half = 0; half < 2; ++half) {
            const double lo = half == 0 ? xj - g.dx : xj, hi = lo + g.dx;
            b.assign({lo, hi});
            for (const auto& a : u0.atoms())
                if (a.y > lo - R && a.y < hi + R && ws < 4.0 * g.dx) {
                    quad::add_geometric_breaks(b, a.y, ws, 2.0 * g.dx);
                }
            for (auto& v : b) v = std::clamp(v, lo, hi);
            const auto bb = quad::refine_breaks(b, 0.0);
            for (std::size_t p = 0; p + 1 < bb.size(); ++p) {
                const double c = 0.5 * (bb[p] + bb[p + 1]), h = 0.5 * (bb[p + 1] - bb[p]);
                if (!(h > 0.0)) continue;
                for (unsigned i = 0; i < 4; ++i) {
                    const double y = c + h * gl.x[i];
                    const double d = D(y);
                    const double hat = 1.0 - std::abs(y - xj) / g.dx;
                    acc += h * gl.w[i] * hat * d * d;
                }
            }
        }
        out[j] = acc / g.dx;
    }
}

}  // namespace detail

// Nodes suited to the oracle: geometric from 10⁻³ t_max, spacing ≤ t_max/50, through `probes`.
inline std::vector<double> oracle_time_nodes(double t_max, std::vector<double> probes = {}) {
    return graded_time_nodes(1e-3 * t_max, t_max, 0.1, t_max / 50.0, std::move(probes));
}

// A = p² ⊛ (p_• * u0)² on the grid: direct graded quadrature in s against hat averages of the
// square, so narrow early-time profiles keep their exact mass.
inline SpaceTimeGrid heat_sq_grid(const KernelModel& k, const FiniteMeasure& u0, const std::vector<double>& t,
                                  const XGrid& g) {
    auto A = SpaceTimeGrid::zeros(t, g.x0, g.dx, g.nx);
    const P2Convolver pc(k, {t.front()}, g.dx, g.nx);
    const double reach = k.kind() == KernelKind::Brownian ? 7.0 : 40.0;
    std::vector<double> s, w, rb, D2(static_cast<std::size_t>(g.nx)), W;
    for (int n = 0; n < A.nt(); ++n) {
        detail::s_nodes(0.0, t[std::size_t(n)], true, true, k.grading(), s, w, rb);
        for (std::size_t q = 0; q < s.size(); ++q) {
            if (!(s[q] > 0.0) || !(rb[q] > 0.0)) continue;
            detail::hat_averaged_sq(k, u0, s[q], g, D2.data());
            const int K = std::min(g.nx - 1, int(std::ceil(reach * detail::kernel_width(k, rb[q]) / g.dx)));
            W.assign(std::size_t(K) + 1, 0.0);
            pc.hat_weights(rb[q], K, W.data());
            for (auto& v : W) v *= w[q];
            pc.apply(W, D2.data(), A.row(n));
        }
    }
    return A;
}

namespace detail {

// f = D² + λ² g with g = A + λ² p² ⊛ g, A from heat_sq_grid; g is marched forward by product
// integration (implicit last panel solved by fixed point), held at g(t_0) on (0, t_0).
inline SpaceTimeGrid second_moment_single_grid(const KernelModel& k, const FiniteMeasure& u0, double lambda,
                                               const std::vector<double>& t, const XGrid& xg) {
    auto f = SpaceTimeGrid::zeros(t, xg.x0, xg.dx, xg.nx);
    for (int n = 0; n < f.nt(); ++n)
        for (int j = 0; j < xg.nx; ++j) {
            const double d = heat_convolve(k, u0, t[std::size_t(n)], xg.x(j));
            f(n, j) = d * d;
        }
    const double l2 = lambda * lambda;
    if (l2 == 0.0) return f;
    const auto A = heat_sq_grid(k, u0, t, xg);
    const P2Convolver pc(k, t, xg.dx, xg.nx);
    const std::size_t nx = std::size_t(xg.nx);
    std::vector<double> g(t.size() * nx, 0.0), known(nx), next(nx);
    for (int n = 0; n < f.nt(); ++n) {
        const auto st = pc.row_stencils(n, true);
        std::fill(known.begin(), known.end(), 0.0);
        for (int m = 0; m < n; ++m) pc.apply(st[std::size_t(m)], g.data() + std::size_t(m) * nx, known.data());
        double* gn = g.data() + std::size_t(n) * nx;
        const double* an = A.row(n);
        for (std::size_t j = 0; j < nx; ++j) gn[j] = an[j] + l2 * known[j];
        for (int it = 0; it < 200; ++it) {
            std::fill(next.begin(), next.end(), 0.0);
            pc.apply(st[std::size_t(n)], gn, next.data());
            double change = 0.0, size = 0.0;
            for (std::size_t j = 0; j < nx; ++j) {
                const double v = an[j] + l2 * (known[j] + next[j]);
                change = std::max(change, std::abs(v - gn[j]));
                size = std::max(size, std::abs(v));
                gn[j] = v;
            }
            if (change <= 1e-15 * size) break;
            if (it == 199) fail(ErrorCode::DivergentResolvent, "oracle fixed point did not converge on the last panel");
        }
        for (std::size_t j = 0; j < nx; ++j) f.row(n)[j] += l2 * gn[j];
    }
    return f;
}

}  // namespace detail

// Second moment f of the linear equation, f = (p_t * u0)² + λ² p² ⊛ f, on the given nodes. The
// hat basis errs by O(dx²); one Richardson step against the grid with nodes halved removes it.
inline SpaceTimeGrid pam_second_moment_oracle(const KernelModel& k, const FiniteMeasure& u0, double lambda,
                                              const std::vector<double>& t, const XGrid& xg, bool richardson = true) {
    if (t.empty() || !(t.front() > 0.0) || xg.nx < 2 || !(xg.dx > 0.0))
        fail(ErrorCode::GridMismatch, "oracle needs positive increasing times and an x grid of >= 2 nodes");
    for (std::size_t n = 1; n < t.size(); ++n)
        if (!(t[n] > t[n - 1])) fail(ErrorCode::GridMismatch, "oracle times must increase strictly");
    auto f = detail::second_moment_single_grid(k, u0, lambda, t, xg);
    if (!richardson || lambda == 0.0) return f;
    const XGrid fine{xg.x0, 0.5 * xg.dx, 2 * xg.nx - 1};
    const auto ff = detail::second_moment_single_grid(k, u0, lambda, t, fine);
    for (int n = 0; n < f.nt(); ++n)
        for (int j = 0; j < xg.nx; ++j) f(n, j) = (4.0 * ff(n, 2 * j) - f(n, j)) / 3.0;
    return f;
}

}  // namespace levyheat
