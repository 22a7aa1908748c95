#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "levyheat/error.hpp"
#include "levyheat/levy_kernel.hpp"
#include "levyheat/measure.hpp"
#include "levyheat/quadrature.hpp"

namespace levyheat {

// v(t_n, x_j) on increasing nodes t_0 > 0 and a uniform grid x_j = x0 + j dx; row-major.
struct SpaceTimeGrid {
    std::vector<double> t;
    double x0 = 0.0;
    double dx = 1.0;
    int nx = 1;
    std::vector<double> v;

    static SpaceTimeGrid zeros(std::vector<double> t, double x0, double dx, int nx) {
        SpaceTimeGrid g;
        g.t = std::move(t);
        g.x0 = x0;
        g.dx = dx;
        g.nx = nx;
        g.v.assign(g.t.size() * std::size_t(nx), 0.0);
        g.validate();
        return g;
    }

    template <class F>
    static SpaceTimeGrid sample(std::vector<double> t, double x0, double dx, int nx, F&& f) {
        auto g = zeros(std::move(t), x0, dx, nx);
        for (int n = 0; n < g.nt(); ++n)
            for (int j = 0; j < nx; ++j) g(n, j) = f(g.t[std::size_t(n)], g.x(j));
        return g;
    }

    int nt() const { return int(t.size()); }
    double x(int j) const { return x0 + j * dx; }
    double& operator()(int n, int j) { return v[std::size_t(n) * std::size_t(nx) + std::size_t(j)]; }
    double operator()(int n, int j) const { return v[std::size_t(n) * std::size_t(nx) + std::size_t(j)]; }
    double* row(int n) { return v.data() + std::size_t(n) * std::size_t(nx); }
    const double* row(int n) const { return v.data() + std::size_t(n) * std::size_t(nx); }

    void validate() const {
        if (t.empty() || nx < 1 || !(dx > 0.0) || v.size() != t.size() * std::size_t(nx))
            fail(ErrorCode::GridMismatch, "space-time grid shape is inconsistent");
        if (!(t[0] > 0.0)) fail(ErrorCode::GridMismatch, "space-time grid needs t_0 > 0");
        for (std::size_t n = 1; n < t.size(); ++n)
            if (!(t[n] > t[n - 1])) fail(ErrorCode::GridMismatch, "time nodes must increase strictly");
    }

    bool same_mesh(const SpaceTimeGrid& o) const {
        return t == o.t && x0 == o.x0 && dx == o.dx && nx == o.nx;
    }
};

// Nodes from t0 to t_max with local spacing ≈ min(h_max, ρ t), passing through every point of `must`.
inline std::vector<double> graded_time_nodes(double t0, double t_max, double rho, double h_max,
                                             std::vector<double> must = {}) {
    require(t0 > 0.0 && t_max > t0 && rho > 0.0 && h_max > 0.0, "graded_time_nodes: need 0 < t0 < t_max, ρ, h > 0");
    const double ts = std::max(h_max / rho, t0);
    auto phi = [&](double t) {
        if (t <= ts) return std::log(t / t0) / rho;
        return std::log(ts / t0) / rho + (t - ts) / h_max;
    };
    auto phi_inv = [&](double u) {
        const double us = std::log(ts / t0) / rho;
        if (u <= us) return t0 * std::exp(rho * u);
        return ts + (u - us) * h_max;
    };
    must.push_back(t0);
    must.push_back(t_max);
    std::sort(must.begin(), must.end());
    must.erase(std::unique(must.begin(), must.end()), must.end());
    std::vector<double> out{must.front()};
    for (std::size_t i = 0; i + 1 < must.size(); ++i) {
        const double a = must[i], b = must[i + 1];
        require(a >= t0 && b <= t_max, "graded_time_nodes: required point outside [t0, t_max]");
        const double pa = phi(a), pb = phi(b);
        const int n = std::max(1, int(std::ceil(pb - pa - 1e-9)));
        for (int k = 1; k < n; ++k) out.push_back(phi_inv(pa + (pb - pa) * k / n));
        out.push_back(b);
    }
    return out;
}

namespace detail {

// Spatial scale of p_r: 1/p_r(0).
inline double kernel_width(const KernelModel& k, double r) { return 1.0 / k.density0(r); }

// Multiples of kernel_width beyond which p² contributions are dropped.
inline double reach_factor(const KernelModel& k) { return k.kind() == KernelKind::Brownian ? 10.0 : 60.0; }

// Row of grid data at time tau: log-log between nodes, mass power law below t_0.
inline void interp_row(const SpaceTimeGrid& g, double tau, double* out) {
    const auto& t = g.t;
    const int N = g.nt();
    if (N == 1) {
        std::copy(g.row(0), g.row(0) + g.nx, out);
        return;
    }
    if (tau < t[0]) {
        // shape frozen at t_0, amplitude following the power law of the row mass
        double m0 = 0.0, m1 = 0.0;
        for (int j = 0; j < g.nx; ++j) {
            m0 += std::abs(g.row(0)[j]);
            m1 += std::abs(g.row(1)[j]);
        }
        const double e = (m0 > 0.0 && m1 > 0.0) ? std::log(m1 / m0) / std::log(t[1] / t[0]) : 0.0;
        const double c = std::pow(tau / t[0], e);
        for (int j = 0; j < g.nx; ++j) out[j] = c * g.row(0)[j];
        return;
    }
    int n;
    if (tau <= t[0])
        n = 0;
    else if (tau >= t[std::size_t(N - 1)])
        n = N - 2;
    else
        n = int(std::upper_bound(t.begin(), t.end(), tau) - t.begin()) - 1;
    const double ta = t[std::size_t(n)], tb = t[std::size_t(n + 1)];
    const double* a = g.row(n);
    const double* b = g.row(n + 1);
    const double lw = std::log(tau / ta) / std::log(tb / ta);
    const double w = (tau - ta) / (tb - ta);
    for (int j = 0; j < g.nx; ++j) {
        if (a[j] > 0.0 && b[j] > 0.0)
            out[j] = a[j] * std::exp(lw * std::log(b[j] / a[j]));
        else
            out[j] = (1 - w) * a[j] + w * b[j];
    }
}

// Nodes, weights and exact distances b − s of ∫_a^b ds with optional grading m at either end.
inline void s_nodes(double a, double b, bool grade_lo, bool grade_hi, double m, std::vector<double>& s,
                    std::vector<double>& w, std::vector<double>& rb) {
    s.clear();
    w.clear();
    rb.clear();
    const auto& r = quad::legendre<16>();
    auto graded = [&](double origin, double len, double dir) {
        constexpr int panels = 3;
        for (int p = 0; p < panels; ++p) {
            const double lo = double(p) / panels, hi = double(p + 1) / panels;
            for (unsigned i = 0; i < 16; ++i) {
                const double v = 0.5 * (lo + hi) + 0.5 * (hi - lo) * r.x[i];
                const double dv = 0.5 * (hi - lo) * r.w[i];
                const double d = len * std::pow(v, m);
                s.push_back(origin + dir * d);
                rb.push_back(dir > 0 ? b - (origin + d) : d);
                w.push_back(dv * m * len * std::pow(v, m - 1.0));
            }
        }
    };
    const double L = b - a;
    if (grade_lo && grade_hi) {
        graded(a, 0.5 * L, 1.0);
        graded(b, 0.5 * L, -1.0);
    } else if (grade_lo) {
        graded(a, L, 1.0);
    } else if (grade_hi) {
        graded(b, L, -1.0);
    } else {
        for (int p = 0; p < 2; ++p) {
            const double lo = a + L * p / 2, hi = a + L * (p + 1) / 2;
            for (unsigned i = 0; i < 16; ++i) {
                s.push_back(0.5 * (lo + hi) + 0.5 * (hi - lo) * r.x[i]);
                rb.push_back(b - s.back());
                w.push_back(0.5 * (hi - lo) * r.w[i]);
            }
        }
    }
}

}  // namespace detail

// (f ⊛ g)(t, x) = ∫_0^t ds Σ_j dx f(t−s, x − x_j) g(s, x_j) with trapezoid weights in x; with
// nx == 1 the time-only convolution ∫_0^t f(t−s) g(s) ds. Both grids must share one mesh; the
// s-integral is graded at both ends and the grids are interpolated log-log in time.
inline SpaceTimeGrid st_convolve(const SpaceTimeGrid& f, const SpaceTimeGrid& g) {
    f.validate();
    g.validate();
    if (!f.same_mesh(g)) fail(ErrorCode::GridMismatch, "st_convolve: operands live on different meshes");
    auto out = SpaceTimeGrid::zeros(f.t, f.x0, f.dx, f.nx);
    const int nx = f.nx;
    std::vector<double> s, w, rb, fr(static_cast<std::size_t>(nx)), gr(static_cast<std::size_t>(nx));
    for (int n = 0; n < f.nt(); ++n) {
        const double t = f.t[std::size_t(n)];
        detail::s_nodes(0.0, t, true, true, 2.0, s, w, rb);
        double* o = out.row(n);
        for (std::size_t q = 0; q < s.size(); ++q) {
            detail::interp_row(f, rb[q], fr.data());
            detail::interp_row(g, s[q], gr.data());
            if (nx == 1) {
                o[0] += w[q] * fr[0] * gr[0];
                continue;
            }
            const double shift = -f.x0 / f.dx;
            for (int i = 0; i < nx; ++i) {
                double acc = 0.0;
                for (int j = 0; j < nx; ++j) {
                    const double u = (i - j) + shift;
                    if (u < 0.0 || u > nx - 1) continue;
                    const int k = std::min(int(u), nx - 2);
                    const double a = u - k;
                    const double fv = (1 - a) * fr[std::size_t(k)] + a * fr[std::size_t(k + 1)];
                    const double tw = (j == 0 || j == nx - 1) ? 0.5 : 1.0;
                    acc += tw * fv * gr[std::size_t(j)];
                }
                o[i] += w[q] * f.dx * acc;
            }
        }
    }
    return out;
}

struct LemmaPP {
    double lower = 0.0;  // p_t(0) ∫_0^t p_r(0) dr
    double mid = 0.0;    // ∫_0^t p_{t−s}(0) p_s(0) ds
    double upper = 0.0;  // 2Θ p_t(0) ∫_0^t p_r(0) dr
    bool holds(double rel = 1e-9) const { return lower <= mid * (1 + rel) && mid <= upper * (1 + rel); }
};

inline LemmaPP check_lemma_pp(const KernelModel& k, double t, double theta) {
    require(t > 0.0, "check_lemma_pp requires t > 0");
    std::vector<double> s, w, rb;
    detail::s_nodes(0.0, t, true, true, k.grading(), s, w, rb);
    double mid = 0.0;
    for (std::size_t q = 0; q < s.size(); ++q) mid += w[q] * k.density0(rb[q]) * k.density0(s[q]);
    LemmaPP r;
    r.lower = k.density0(t) * k.int_p0(t);
    r.mid = mid;
    r.upper = 2.0 * theta * r.lower;
    return r;
}

inline LemmaPP check_lemma_pp(const KernelModel& k, double t) { return check_lemma_pp(k, t, theta_estimate(k).value); }

namespace detail {

// Partition of the y-line resolving p_r(x − ·)² against (p_s * u0)².
inline std::vector<double> sq_breaks(const KernelModel& k, const FiniteMeasure& u0, double s, double r, double x) {
    const double ws = kernel_width(k, s), wr = kernel_width(k, r);
    const double R = reach_factor(k) * std::max(ws, wr);
    std::vector<double> b;
    double lo = x, hi = x;
    for (const auto& a : u0.atoms()) {
        quad::add_geometric_breaks(b, a.y, ws, R);
        lo = std::min(lo, a.y);
        hi = std::max(hi, a.y);
    }
    quad::add_geometric_breaks(b, x, wr, R);
    if (u0.density()) {
        const auto& g = u0.density()->grid;
        quad::add_geometric_breaks(b, g.front(), ws, R);
        quad::add_geometric_breaks(b, g.back(), ws, R);
        lo = std::min(lo, g.front());
        hi = std::max(hi, g.back());
        double hmin = g.back() - g.front();
        for (std::size_t i = 0; i + 1 < g.size(); ++i) hmin = std::min(hmin, g[i + 1] - g[i]);
        if (ws < 4.0 * hmin) b.insert(b.end(), g.begin(), g.end());
    }
    lo -= R;
    hi += R;
    for (auto& v : b) v = std::clamp(v, lo, hi);
    return quad::refine_breaks(std::move(b), std::max(ws, wr));
}

}  // namespace detail

// ∫_{s_lo}^{s_hi} ds ∫ dy p_{t−s}(x − y)² (p_s * u0)(y)², with s_hi < 0 meaning t.
inline double heat_sq_conv(const KernelModel& k, const FiniteMeasure& u0, double t, double x, double s_lo = 0.0,
                           double s_hi = -1.0) {
    if (s_hi < 0.0) s_hi = t;
    require(t > 0.0 && 0.0 <= s_lo && s_lo < s_hi && s_hi <= t, "heat_sq_conv: need 0 <= s_lo < s_hi <= t");
    std::vector<double> s, w, rb;
    detail::s_nodes(s_lo, s_hi, s_lo == 0.0, s_hi == t, k.grading(), s, w, rb);
    double total = 0.0;
    for (std::size_t q = 0; q < s.size(); ++q) {
        const double sq = s[q], r = (t - s_hi) + rb[q];
        if (!(sq > 0.0) || !(r > 0.0)) continue;
        const auto b = detail::sq_breaks(k, u0, sq, r, x);
        const double inner = quad::composite<8>(
            [&](double y) {
                const double p = k.density(r, x - y), d = heat_convolve(k, u0, sq, y);
                return p * p * d * d;
            },
            b);
        total += w[q] * inner;
    }
    return total;
}

// Star powers G⁽⁰⁾_t = p_t², G⁽ⁿ⁾ = p² ⊛ G⁽ⁿ⁻¹⁾ of a scaling kernel. Self-similarity
// G⁽ⁿ⁾_t(x) = t^n (σ_t/σ_1)^{-(n+2)} G⁽ⁿ⁾_1(x σ_1/σ_t), σ_t the kernel scale, reduces each
// power to a one-variable even profile, tabulated on y ≥ 0.
class StarProfiles {
public:
    StarProfiles(const KernelModel& k, int n_max) : k_(k), n_max_(n_max) {
        if (!k.scaling()) fail(ErrorCode::NotApplicable, "star profiles need a scaling kernel");
        require(n_max >= 0 && n_max <= 8, "star profiles support powers 0..8");
        s1_ = k.scale(1.0);
        gauss_ = k.kind() == KernelKind::Brownian;
        const double du = 0.05, u1 = 8.0, umax = gauss_ ? 30.0 : 400.0;
        n_uni_ = int(std::lround(u1 / du)) + 1;
        for (int i = 0; i < n_uni_; ++i) y_.push_back(s1_ * du * i);
        for (double u = u1 * 1.04; u < umax * 1.04; u *= 1.04) y_.push_back(s1_ * u);
        dy_ = s1_ * du;
        tab_.resize(std::size_t(n_max) + 1);
        for (double y : y_) tab_[0].push_back(k.density(1.0, y) * k.density(1.0, y));
        std::vector<double> s, w, rb;
        detail::s_nodes(0.0, 1.0, true, true, k.grading(), s, w, rb);
        for (int n = 1; n <= n_max; ++n) {
            for (double y : y_) {
                double total = 0.0;
                for (std::size_t q = 0; q < s.size(); ++q) {
                    const double sq = s[q], r = rb[q];
                    if (!(sq > 0.0) || !(r > 0.0)) continue;
                    const double ws = detail::kernel_width(k, sq), wr = detail::kernel_width(k, r);
                    const double R = detail::reach_factor(k) * std::max(ws, wr);
                    std::vector<double> b;
                    quad::add_geometric_breaks(b, 0.0, ws, R);
                    quad::add_geometric_breaks(b, y, wr, R);
                    const auto bb = quad::refine_breaks(std::move(b), 4.0 * std::max(ws, wr));
                    total += w[q] * quad::composite<8>(
                                        [&](double eta) {
                                            const double p = k.density(r, y - eta);
                                            return p * p * value(n - 1, sq, eta);
                                        },
                                        bb);
                }
                tab_[std::size_t(n)].push_back(total);
            }
        }
    }

    int n_max() const { return n_max_; }

    // G⁽ⁿ⁾_t(x).
    double value(int n, double t, double x) const {
        require(n >= 0 && n <= n_max_ && t > 0.0, "star profile index or time out of range");
        const double rho = s1_ / k_.scale(t);
        return std::pow(t, n) * std::pow(rho, n + 2) * profile(n, std::abs(x) * rho);
    }

private:
    double profile(int n, double y) const {
        const auto& v = tab_[std::size_t(n)];
        if (y < y_[std::size_t(n_uni_ - 2)]) {
            // Catmull–Rom on the uniform part; evenness supplies the point left of 0
            const double u = y / dy_;
            const int i = std::min(int(u), n_uni_ - 3);
            const double a = u - i;
            auto at = [&](int j) { return v[std::size_t(std::abs(j))]; };
            const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
            return p1 + 0.5 * a * (p2 - p0 + a * (2 * p0 - 5 * p1 + 4 * p2 - p3 + a * (3 * (p1 - p2) + p3 - p0)));
        }
        const std::size_t N = y_.size();
        if (y >= y_[N - 1]) {
            if (gauss_ || !(v[N - 1] > 0.0 && v[N - 2] > 0.0)) return 0.0;
            const double e = std::log(v[N - 1] / v[N - 2]) / std::log(y_[N - 1] / y_[N - 2]);
            return v[N - 1] * std::pow(y / y_[N - 1], e);
        }
        const std::size_t j = std::size_t(std::upper_bound(y_.begin(), y_.end(), y) - y_.begin()) - 1;
        if (!(v[j] > 0.0 && v[j + 1] > 0.0)) return 0.0;
        const double a = std::log(y / y_[j]) / std::log(y_[j + 1] / y_[j]);
        return v[j] * std::exp(a * std::log(v[j + 1] / v[j]));
    }

    KernelModel k_;
    int n_max_;
    double s1_ = 1.0, dy_ = 0.0;
    bool gauss_ = false;
    int n_uni_ = 0;
    std::vector<double> y_;
    std::vector<std::vector<double>> tab_;
};

inline std::shared_ptr<const StarProfiles> star_profiles(const KernelModel& k, int n_max) {
    return std::make_shared<const StarProfiles>(k, n_max);
}

struct StarCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds(double margin = 1.0) const { return lhs <= rhs * margin; }
};

// n-fold p² ⊛ ... ⊛ (p_• * u0)² against (2Θ∫_0^t p_r(0)dr)^n p_t(0) (p_t * u0)(x). For n ≥ 2 the
// initial measure must be a single atom (self-similar profiles).
inline StarCheck check_lemma_star2(const KernelModel& k, const FiniteMeasure& u0, int n, double t, double x,
                                   double theta, const StarProfiles* prof = nullptr) {
    require(n >= 1 && n <= 4 && t > 0.0, "check_lemma_star2: need 1 <= n <= 4 and t > 0");
    StarCheck c;
    c.rhs = std::pow(2.0 * theta * k.int_p0(t), n) * k.density0(t) * heat_convolve(k, u0, t, x);
    if (n == 1 && !prof) {
        c.lhs = heat_sq_conv(k, u0, t, x);
        return c;
    }
    if (u0.density() || u0.atoms().size() != 1)
        fail(ErrorCode::NotApplicable, "iterated star powers beyond the first need a single-atom initial measure");
    std::shared_ptr<const StarProfiles> own;
    if (!prof || prof->n_max() < n) {
        own = star_profiles(k, n);
        prof = own.get();
    }
    const auto& a = u0.atoms().front();
    c.lhs = a.m * a.m * prof->value(n, t, x - a.y);
    return c;
}

// n-fold p² ⊛ ... ⊛ p² (n factors) against (2Θ∫_0^t p_r(0)dr)^{n−1} p_t(0) p_t(x).
inline StarCheck check_lemma_star(const KernelModel& k, int n, double t, double x, double theta,
                                  const StarProfiles* prof = nullptr) {
    require(n >= 1 && n <= 5 && t > 0.0, "check_lemma_star: need 1 <= n <= 5 and t > 0");
    if (n == 1) {
        const double p = k.density(t, x);
        return StarCheck{p * p, k.density0(t) * p};
    }
    return check_lemma_star2(k, FiniteMeasure::delta(), n - 1, t, x, theta, prof);
}

// Product integration of (p² ⊛ F)(t_n, x_i) for F given on time nodes t_0 < ... and a uniform
// x grid: F piecewise linear in s between nodes and in y between grid points (hat basis), so
// every row is a sum of symmetric spatial stencils applied to the rows F_m.
class P2Convolver {
public:
    P2Convolver(const KernelModel& k, std::vector<double> t, double dx, int nx)
        : k_(k), t_(std::move(t)), dx_(dx), nx_(nx) {
        if (!k.scaling()) fail(ErrorCode::NotApplicable, "product-integration convolver needs a scaling kernel");
        require(dx > 0.0 && nx >= 1 && !t_.empty() && t_[0] > 0.0, "P2Convolver: invalid mesh");
        for (std::size_t n = 1; n < t_.size(); ++n) require(t_[n] > t_[n - 1], "P2Convolver: times must increase");
        reach_ = k.kind() == KernelKind::Brownian ? 7.0 : 40.0;
        // ∫|z| p_r(z)² dz does not depend on r for a scaling kernel
        std::vector<double> b;
        quad::add_geometric_breaks(b, 0.0, detail::kernel_width(k, 1.0), 1e4 * detail::kernel_width(k, 1.0));
        for (auto& v : b) v = std::max(v, 0.0);
        b = quad::refine_breaks(std::move(b), 0.0);
        abs_moment_ = 2.0 * quad::composite<12>(
                                [&](double z) {
                                    const double p = k.density(1.0, z);
                                    return z * p * p;
                                },
                                b);
    }

    const std::vector<double>& times() const { return t_; }
    double dx() const { return dx_; }
    int nx() const { return nx_; }

    // W_r(j) = ∫ p_r(z)² ℓ(z/dx − j) dz, ℓ the unit hat on [−1, 1], for j = 0..K.
    void hat_weights(double r, int K, double* out) const {
        const double w = detail::kernel_width(k_, r);
        if (w < dx_ / 64.0) {
            std::fill(out, out + K + 1, 0.0);
            out[0] = k_.density0(2.0 * r) - abs_moment_ / dx_;
            if (K >= 1) out[1] = 0.5 * abs_moment_ / dx_;
            return;
        }
        const int sub = std::max(1, int(std::ceil(4.0 * dx_ / w)));
        if (w >= 8.0 * dx_)
            hat_weights_rule<2>(r, K, 1, out);
        else
            hat_weights_rule<4>(r, K, sub, out);
    }

    // Stencils of row n: st[m][j] multiplies F_m(i ± j). With `layer`, F is held at F_0 on (0, t_0).
    std::vector<std::vector<double>> row_stencils(int n, bool layer) const {
        require(n >= 0 && n < int(t_.size()), "P2Convolver: row out of range");
        std::vector<std::vector<double>> st(std::size_t(n) + 1);
        const double tn = t_[std::size_t(n)];
        std::vector<double> W;
        auto add = [&](int m, double c, double r) {
            if (c == 0.0) return;
            const int K = std::min(nx_ - 1, int(std::ceil(reach_ * detail::kernel_width(k_, r) / dx_)));
            auto& s = st[std::size_t(m)];
            if (int(s.size()) < K + 1) s.resize(std::size_t(K) + 1, 0.0);
            W.resize(std::size_t(K) + 1);
            hat_weights(r, K, W.data());
            for (int j = 0; j <= K; ++j) s[std::size_t(j)] += c * W[std::size_t(j)];
        };
        // ∫ over r ∈ [r_lo, r_hi] of φ(r) W_r; graded when r_lo = 0, geometric panels otherwise
        auto integrate = [&](double r_lo, double r_hi, auto&& basis) {
            if (r_lo <= 0.0) {
                const auto& g = quad::legendre<12>();
                const double m = k_.grading();
                for (int p = 0; p < 2; ++p)
                    for (unsigned i = 0; i < 12; ++i) {
                        const double v = 0.25 + 0.25 * (2 * p) + 0.25 * g.x[i];
                        const double dv = 0.25 * g.w[i];
                        const double r = r_hi * std::pow(v, m);
                        basis(r, dv * m * r_hi * std::pow(v, m - 1.0));
                    }
                return;
            }
            const auto& g = quad::legendre<6>();
            double a = r_lo;
            while (a < r_hi) {
                const double b = std::min(r_hi, 3.0 * a);
                for (unsigned i = 0; i < 6; ++i) basis(0.5 * (a + b) + 0.5 * (b - a) * g.x[i], 0.5 * (b - a) * g.w[i]);
                a = b;
            }
        };
        for (int m = 0; m < n; ++m) {
            const double a = t_[std::size_t(m)], b = t_[std::size_t(m + 1)], h = b - a;
            integrate(tn - b, tn - a, [&](double r, double wt) {
                const double s = tn - r;
                add(m, wt * (b - s) / h, r);
                add(m + 1, wt * (s - a) / h, r);
            });
        }
        if (layer) integrate(tn - t_[0], tn, [&](double r, double wt) { add(0, wt, r); });
        return st;
    }

    // out += stencil ⋆ f (zero outside the grid).
    void apply(const std::vector<double>& st, const double* f, double* out) const {
        const int K = int(st.size()) - 1;
        for (int i = 0; i < nx_; ++i) {
            double acc = st.empty() ? 0.0 : st[0] * f[i];
            const int jmax = std::min(K, std::max(i, nx_ - 1 - i));
            for (int j = 1; j <= jmax; ++j) {
                double v = 0.0;
                if (i - j >= 0) v += f[i - j];
                if (i + j < nx_) v += f[i + j];
                acc += st[std::size_t(j)] * v;
            }
            out[i] += acc;
        }
    }

    // (p² ⊛ F) on the whole mesh; F must have t.size() × nx entries.
    std::vector<double> convolve(const std::vector<double>& F, bool layer) const {
        if (F.size() != t_.size() * std::size_t(nx_)) fail(ErrorCode::GridMismatch, "P2Convolver: input shape");
        std::vector<double> out(F.size(), 0.0);
        for (int n = 0; n < int(t_.size()); ++n) {
            const auto st = row_stencils(n, layer);
            for (int m = 0; m <= n; ++m)
                apply(st[std::size_t(m)], F.data() + std::size_t(m) * std::size_t(nx_), out.data() + std::size_t(n) * std::size_t(nx_));
        }
        return out;
    }

private:
    template <unsigned N>
    void hat_weights_rule(double r, int K, int sub, double* out) const {
        const auto& g = quad::legendre<N>();
        const double sc = k_.scale(r), inv = 1.0 / sc;
        for (int j = 0; j <= K; ++j) {
            double acc = 0.0;
            for (int half = (j == 0 ? 1 : 0); half < 2; ++half) {
                // half 0: z ∈ [(j−1)dx, j dx] rising, half 1: [j dx, (j+1)dx] falling
                for (int p = 0; p < sub; ++p) {
                    const double a = double(p) / sub, b = double(p + 1) / sub;
                    for (unsigned i = 0; i < N; ++i) {
                        const double u = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
                        const double z = dx_ * (half == 0 ? (j - 1 + u) : (j + u));
                        const double hat = half == 0 ? u : 1.0 - u;
                        const double pz = k_.unit_q(z * inv) * inv;
                        acc += 0.5 * (b - a) * g.w[i] * hat * pz * pz;
                    }
                }
            }
            out[j] = (j == 0 ? 2.0 : 1.0) * acc * dx_;
        }
    }

    KernelModel k_;
    std::vector<double> t_;
    double dx_;
    int nx_;
    double reach_ = 7.0;
    double abs_moment_ = 0.0;
};

}  // namespace levyheat
