#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "levyheat/solver.hpp"

namespace levyheat {

struct BoundVerdict {
    std::string claim_id;
    double lhs = 0.0, rhs = 0.0, std_error = 0.0;
    bool pass = false;
    std::map<std::string, std::string> metadata;
};

namespace detail {

inline std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

struct LineFit {
    double slope = 0.0, std_error = 0.0;
};

// Ordinary least squares slope; std_error propagates independent errors sy of the ordinates.
inline LineFit fit_slope(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& sy) {
    const std::size_t n = x.size();
    if (n < 3) fail(ErrorCode::InsufficientRange, "a slope fit needs at least 3 points");
    const double xm = quad::pairwise_sum(x) / double(n), ym = quad::pairwise_sum(y) / double(n);
    std::vector<double> sxx(n), sxy(n);
    for (std::size_t i = 0; i < n; ++i) {
        sxx[i] = (x[i] - xm) * (x[i] - xm);
        sxy[i] = (x[i] - xm) * (y[i] - ym);
    }
    const double Sxx = quad::pairwise_sum(sxx);
    if (!(Sxx > 0.0)) fail(ErrorCode::InsufficientRange, "a slope fit needs distinct abscissae");
    LineFit f;
    f.slope = quad::pairwise_sum(sxy) / Sxx;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::pow((x[i] - xm) / Sxx * sy[i], 2);
    f.std_error = std::sqrt(quad::pairwise_sum(v));
    return f;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t h = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(h), v.end());
    const double hi = v[h];
    if (v.size() % 2) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + std::ptrdiff_t(h)));
}

// Odd cell count so that a cell centre sits at x = 0.
inline int odd_cells(double L, double dx) {
    const int n = std::max(3, int(std::ceil(2.0 * L / dx)));
    return n % 2 ? n : n + 1;
}

}  // namespace detail

// pass ⇔ lhs ≤ rhs + 3·std_error; NaN never passes.
inline BoundVerdict make_verdict(std::string claim_id, double lhs, double rhs, double std_error,
                                 std::map<std::string, std::string> metadata = {}) {
    BoundVerdict v{std::move(claim_id), lhs, rhs, std_error, false, std::move(metadata)};
    v.pass = lhs <= rhs + 3.0 * std_error;
    return v;
}

// ---- probe sampling ----

struct ProbeSamples {
    std::vector<double> t, x;  // lattice times and cell centres actually probed
    std::vector<std::int64_t> rows;
    std::vector<int> cols;
    double dx = 0.0;
    std::vector<std::vector<double>> values;  // values[r][a·x.size() + b] = u at (t[a], x[b])
    std::size_t index(std::size_t a, std::size_t b) const { return a * x.size() + b; }
};

// Step index i with t_i = t; GridMismatch unless t is a lattice time.
inline std::int64_t lattice_row(const Lattice& lat, double t) {
    const auto i = std::int64_t(std::llround(t / lat.dt));
    if (i < 1 || i > lat.nt || std::abs(lat.t(i) - t) > 1e-9 * lat.t_end())
        fail(ErrorCode::GridMismatch, "probe time " + detail::num(t) + " is not a lattice time");
    return i;
}

// Cell whose centre is nearest to x.
inline int lattice_col(const Lattice& lat, double x) {
    const auto j = std::llround((x - lat.x0()) / lat.dx());
    if (j < 0 || j >= lat.nx) fail(ErrorCode::GridMismatch, "probe point " + detail::num(x) + " lies outside [-L, L]");
    return int(j);
}

inline ProbeSamples sample_probes(const MildStepper& st, const std::vector<std::uint64_t>& seeds,
                                  const std::vector<double>& t_probe, const std::vector<double>& x_probe,
                                  int threads = replica_threads()) {
    const auto& lat = st.lattice();
    ProbeSamples s;
    s.dx = lat.dx();
    for (double t : t_probe) {
        s.rows.push_back(lattice_row(lat, t));
        s.t.push_back(lat.t(s.rows.back()));
    }
    for (double x : x_probe) {
        s.cols.push_back(lattice_col(lat, x));
        s.x.push_back(lat.x(s.cols.back()));
    }
    const std::int64_t last = s.rows.empty() ? 0 : *std::max_element(s.rows.begin(), s.rows.end());
    s.values = run_replicas(seeds.size(), [&](std::size_t r) {
        std::vector<double> v(s.t.size() * s.x.size());
        auto state = st.initial_state();
        st.advance(noise_rows(lat, seeds[r]), state, last, [&](std::int64_t i, const double* u) {
            for (std::size_t a = 0; a < s.rows.size(); ++a)
                if (s.rows[a] == i)
                    for (std::size_t b = 0; b < s.cols.size(); ++b) v[s.index(a, b)] = u[s.cols[b]];
        });
        return v;
    }, threads);
    return s;
}

// Statistics of f(u) across replicas, probe by probe.
template <class F>
std::vector<SampleStats> probe_stats(const ProbeSamples& s, F&& f) {
    std::vector<SampleStats> out;
    std::vector<double> col(s.values.size());
    for (std::size_t p = 0; p < s.t.size() * s.x.size(); ++p) {
        for (std::size_t r = 0; r < s.values.size(); ++r) col[r] = f(s.values[r][p]);
        out.push_back(sample_stats(col));
    }
    return out;
}

// E|u_t(x)|^k with standard errors; bounds left at zero.
inline MomentTable moment_table(const ProbeSamples& s, const std::vector<double>& k_list) {
    MomentTable m;
    for (double k : k_list) {
        const auto st = probe_stats(s, [k](double u) { return std::pow(std::abs(u), k); });
        for (std::size_t a = 0; a < s.t.size(); ++a)
            for (std::size_t b = 0; b < s.x.size(); ++b) {
                const auto& q = st[s.index(a, b)];
                m.rows.push_back({s.t[a], s.x[b], int(k), q.mean, q.std_error, 0.0, 0.0});
            }
    }
    return m;
}

// E|u|¹ = p_t * u0 for nonnegative solutions, by quadrature only.
inline std::vector<MomentRow> mean_rows(const KernelModel& k, const FiniteMeasure& u0, double t,
                                        const std::vector<double>& xs) {
    std::vector<MomentRow> out;
    for (double x : xs) out.push_back({t, x, 1, heat_convolve(k, u0, t, x), 0.0, 0.0, 0.0});
    return out;
}

// ---- moment bounds ----

struct MomentBoundModel {
    KernelModel kernel;
    FiniteMeasure u0;
    double lip = 1.0;
    double theta = 1.0;

    // γ(k), with γ = 0 when Lip = 0
    double gamma(double k) const {
        auto it = gamma_cache.find(k);
        if (it != gamma_cache.end()) return it->second;
        const double g = lip > 0.0 ? gamma_k(kernel, k, lip) : 0.0;
        gamma_cache.emplace(k, g);
        return g;
    }
    // e^{(1+ε)γ(k)t}(1 + p_t(0)(p_t*u0)(x))^{k/2}, the bound without C_ε^k
    double shape(double t, double x, double k, double eps) const {
        const double d = heat_convolve(kernel, u0, t, x);
        return std::exp((1.0 + eps) * gamma(k) * t) * std::pow(1.0 + kernel.density0(t) * d, 0.5 * k);
    }
    // first-iterate horizon 𝔤((32Θ[1 ∨ k Lip²])^{−1})
    double h1_horizon(double k) const { return g_eval(kernel, 1.0 / (32.0 * theta * std::max(1.0, k * lip * lip))); }
    // (4[1 ∨ √k Lip])^k (u0(ℝ) p_t(0)(p_t*u0)(x))^{k/2} inside the horizon, +∞ beyond
    double h1_bound(double t, double x, double k) const {
        if (t > h1_horizon(k)) return std::numeric_limits<double>::infinity();
        const double d = heat_convolve(kernel, u0, t, x);
        return std::pow(4.0 * std::max(1.0, std::sqrt(k) * lip), k) *
               std::pow(u0.total_mass() * kernel.density0(t) * d, 0.5 * k);
    }

    mutable std::map<double, double> gamma_cache;
};

inline MomentBoundModel moment_bound_model(const KernelModel& k, const FiniteMeasure& u0, const SigmaSpec& sigma) {
    return {k, u0, sigma.lip(), theta_estimate(k).value, {}};
}

// Smallest C with estimate ≤ C^k·shape on every row.
inline double calibrate_c_eps(const MomentTable& train, const MomentBoundModel& m, double eps) {
    double c = 0.0;
    for (const auto& r : train.rows)
        c = std::max(c, std::pow(std::max(r.estimate, 0.0) / m.shape(r.t, r.x, r.k, eps), 1.0 / r.k));
    return c;
}

inline void fill_bounds(MomentTable& table, const MomentBoundModel& m, double c_eps, double eps) {
    for (auto& r : table.rows) {
        r.bound_exist_unique = std::pow(c_eps, r.k) * m.shape(r.t, r.x, r.k, eps);
        r.bound_h1 = m.h1_bound(r.t, r.x, r.k);
    }
}

// One verdict per row: E|u_t(x)|^k ≤ C_ε^k e^{(1+ε)γ(k)t}(1 + p_t(0)(p_t*u0)(x))^{k/2}. Rows whose
// bound exceeds 10³ times the estimate are flagged "vacuous".
inline std::vector<BoundVerdict> check_exist_unique_bound(const MomentTable& moments, const MomentBoundModel& m,
                                                          double c_eps, double eps) {
    std::vector<BoundVerdict> out;
    for (const auto& r : moments.rows) {
        const double rhs = std::pow(c_eps, r.k) * m.shape(r.t, r.x, r.k, eps);
        const bool vacuous = rhs > 1e3 * (std::abs(r.estimate) + 3.0 * r.std_error);
        out.push_back(make_verdict("exist_unique_bound", r.estimate, rhs, r.std_error,
                                   {{"t", detail::num(r.t)},
                                    {"x", detail::num(r.x)},
                                    {"k", std::to_string(r.k)},
                                    {"c_eps", detail::num(c_eps)},
                                    {"eps", detail::num(eps)},
                                    {"vacuous", vacuous ? "true" : "false"}}));
    }
    return out;
}

// ---- small-t scaling ----

struct SmallTOptions {
    int nt = 32;
    double cells_per_scale = 4.0;  // Δx = scale(t)/cells_per_scale
    double reach = 10.0;           // L = support radius + reach·scale(t)
    SolverOptions solver{};
    int threads = replica_threads();
};

struct SmallTScan {
    std::vector<double> t, value, std_error, dx;  // value = t^{1/α} max_x ‖u_t(x)‖_k
    double exponent = 0.0;                        // slope of log value against log t
};

inline SmallTScan small_t_scan(const KernelModel& k, const FiniteMeasure& u0, const SigmaSpec& sigma,
                               const std::vector<double>& t_dyadic, double kk, const std::vector<std::uint64_t>& seeds,
                               const SmallTOptions& opt = {}) {
    if (!k.scaling() || !(k.alpha() > 1.0)) fail(ErrorCode::NotApplicable, "small-t scan needs a stable index in (1, 2]");
    require(kk >= 1.0, "small-t scan: moment order must be >= 1");
    require(t_dyadic.size() >= 2, "small-t scan needs at least two times");
    for (std::size_t i = 0; i < t_dyadic.size(); ++i) {
        require(t_dyadic[i] > 0.0, "small-t scan: times must be positive");
        if (i) require(t_dyadic[i] < t_dyadic[i - 1], "small-t scan: times must decrease");
    }
    require(sigma.is_zero() || !seeds.empty(), "small-t scan needs seeds for a nonzero σ");
    const bool quiet = sigma.is_zero();
    SmallTScan out;
    std::vector<double> lx, ly, ls;
    for (double t : t_dyadic) {
        const double s = k.scale(t);
        const double dx = s / opt.cells_per_scale;
        const double L = u0.support_radius() + opt.reach * s;
        const int nx = detail::odd_cells(L, dx);
        const Lattice lat{0.5 * nx * dx, nx, t / opt.nt, opt.nt};
        std::vector<std::vector<double>> rows;
        if (quiet) {
            // u = p_t * u0 exactly; no lattice dynamics needed
            rows.assign(1, std::vector<double>(static_cast<std::size_t>(nx)));
            for (int j = 0; j < nx; ++j) rows[0][std::size_t(j)] = std::pow(std::abs(heat_convolve(k, u0, t, lat.x(j))), kk);
        } else {
            const MildStepper st(k, u0, sigma, lat, opt.solver);
            rows = run_replicas(seeds.size(), [&](std::size_t r) {
                std::vector<double> p(static_cast<std::size_t>(nx));
                auto state = st.initial_state();
                st.advance(noise_rows(lat, seeds[r]), state, lat.nt, [&](std::int64_t i, const double* u) {
                    if (i == lat.nt)
                        for (int j = 0; j < nx; ++j) p[std::size_t(j)] = std::pow(std::abs(u[j]), kk);
                });
                return p;
            }, opt.threads);
        }
        SampleStats best;
        for (int j = 0; j < nx; ++j) {
            const auto q = sample_stats(column(rows, std::size_t(j)));
            if (j == 0 || q.mean > best.mean) best = q;
        }
        const double f = std::pow(t, 1.0 / k.alpha());
        const double norm = std::pow(best.mean, 1.0 / kk);
        const double se = best.mean > 0.0 ? norm * best.std_error / (kk * best.mean) : 0.0;
        out.t.push_back(t);
        out.value.push_back(f * norm);
        out.std_error.push_back(f * se);
        out.dx.push_back(lat.dx());
        lx.push_back(std::log(t));
        ly.push_back(std::log(f * norm));
        ls.push_back(norm > 0.0 ? se / norm : 0.0);
    }
    out.exponent = lx.size() >= 3 ? detail::fit_slope(lx, ly, ls).slope : (ly[1] - ly[0]) / (lx[1] - lx[0]);
    return out;
}

// ---- spatial tail decay ----

struct TailFit {
    double slope = 0.0, std_error = 0.0;  // of log E|u_t(x)|^k against x²
    double x_lo = 0.0, x_hi = 0.0;
    int points = 0;
};

// Rows share t and k; the fit uses |x| ≥ 2K, and needs max|x| ≥ 2K + 5√t.
inline TailFit tail_decay_fit(const std::vector<MomentRow>& rows, double K) {
    require(!rows.empty() && K >= 0.0, "tail fit needs rows and a support radius");
    const double t = rows.front().t;
    const int k = rows.front().k;
    double xmax = 0.0;
    for (const auto& r : rows) {
        if (r.t != t || r.k != k) fail(ErrorCode::InvalidArgument, "tail fit rows must share t and k");
        xmax = std::max(xmax, std::abs(r.x));
    }
    if (xmax < 2.0 * K + 5.0 * std::sqrt(t))
        fail(ErrorCode::InsufficientRange, "tail fit needs max|x| >= 2K + 5 sqrt(t)");
    std::vector<double> x2, y, sy;
    TailFit f;
    f.x_lo = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
        if (std::abs(r.x) < 2.0 * K || !(r.estimate > 0.0)) continue;
        x2.push_back(r.x * r.x);
        y.push_back(std::log(r.estimate));
        sy.push_back(r.std_error / r.estimate);
        f.x_lo = std::min(f.x_lo, std::abs(r.x));
        f.x_hi = std::max(f.x_hi, std::abs(r.x));
    }
    const auto l = detail::fit_slope(x2, y, sy);
    f.slope = l.slope;
    f.std_error = l.std_error;
    f.points = int(x2.size());
    return f;
}

// ---- modulus of continuity ----

struct ModulusStats {
    int j = 0;
    double mean = 0.0, std_error = 0.0;  // over replicas of the sup quotient
    double dx = 0.0;
    std::size_t pairs = 0;
};

// Replica rows of u_t on the lattice (row r = one noise realization).
inline std::vector<std::vector<double>> field_rows(const MildStepper& st, const std::vector<std::uint64_t>& seeds,
                                                   double t, int threads = replica_threads()) {
    const auto& lat = st.lattice();
    const auto row = lattice_row(lat, t);
    return run_replicas(seeds.size(), [&](std::size_t r) {
        std::vector<double> out;
        auto state = st.initial_state();
        st.advance(noise_rows(lat, seeds[r]), state, row, [&](std::int64_t i, const double* u) {
            if (i == row) out.assign(u, u + lat.nx);
        });
        return out;
    }, threads);
}

// E over replicas of sup_{j ≤ x < x′ < j+1} |u(x) − u(x′)|²/|x − x′|^{1−ε}, all centre pairs in the interval.
inline ModulusStats modulus_estimate(const std::vector<std::vector<double>>& rows, const Lattice& lat, int j,
                                     double eps) {
    require(eps > 0.0 && eps < 1.0, "modulus: ε must lie in (0, 1)");
    std::vector<int> cols;
    for (int c = 0; c < lat.nx; ++c)
        if (lat.x(c) >= j && lat.x(c) < j + 1) cols.push_back(c);
    if (cols.size() < 2) fail(ErrorCode::InsufficientRange, "modulus: interval holds fewer than two cells");
    std::vector<double> sup(rows.size(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t a = 0; a < cols.size(); ++a)
            for (std::size_t b = a + 1; b < cols.size(); ++b) {
                const double d = rows[r][std::size_t(cols[a])] - rows[r][std::size_t(cols[b])];
                const double h = (cols[b] - cols[a]) * lat.dx();
                sup[r] = std::max(sup[r], d * d / std::pow(h, 1.0 - eps));
            }
    const auto s = sample_stats(sup);
    return {j, s.mean, s.std_error, lat.dx(), cols.size() * (cols.size() - 1) / 2};
}

// ---- sup boundedness ----

struct SupScanOptions {
    double dx = 12.0 / 256.0;
    int nt = 512;
    SolverOptions solver{};
    int threads = replica_threads();
};

struct SupScanRow {
    double L = 0.0;
    double median = 0.0;  // over seeds of the lattice max of u_t on |x| ≤ L
    double dx = 0.0;
};

// One run on [−L_max − margin, L_max + margin] per seed; windowed sups share the realization.
inline std::vector<SupScanRow> nochaos_sup_scan(const KernelModel& k, const FiniteMeasure& u0, const SigmaSpec& sigma,
                                                double t, const std::vector<double>& L_list,
                                                const std::vector<std::uint64_t>& seeds, const SupScanOptions& opt = {}) {
    if (k.kind() != KernelKind::Brownian) fail(ErrorCode::NotApplicable, "sup scan is stated for the Brownian kernel");
    require(std::isfinite(u0.support_radius()), "sup scan needs compactly supported initial data");
    require(!L_list.empty() && t > 0.0, "sup scan needs windows and t > 0");
    const double Lmax = *std::max_element(L_list.begin(), L_list.end());
    const double L = Lmax + u0.support_radius() + 10.0 * k.scale(t);
    const int nx = detail::odd_cells(L, opt.dx);
    const Lattice lat{0.5 * nx * opt.dx, nx, t / opt.nt, opt.nt};
    require(sigma.is_zero() || !seeds.empty(), "sup scan needs seeds for a nonzero σ");
    const MildStepper st(k, u0, sigma, lat, opt.solver);
    const std::vector<std::uint64_t> use = sigma.is_zero() ? std::vector<std::uint64_t>{0} : seeds;
    const auto rows = field_rows(st, use, lat.t_end(), opt.threads);
    std::vector<SupScanRow> out;
    for (double w : L_list) {
        std::vector<double> sups;
        for (const auto& r : rows) {
            double m = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < nx; ++j)
                if (std::abs(lat.x(j)) <= w) m = std::max(m, r[std::size_t(j)]);
            sups.push_back(m);
        }
        out.push_back({w, detail::median(sups), lat.dx()});
    }
    return out;
}

// ---- growth rates ----

struct LyapunovFit {
    double rate = 0.0, std_error = 0.0;
    double rate_lower = 0.0, rate_upper = 0.0;  // rate ∓ 3·std_error
    double t_lo = 0.0, t_hi = 0.0;
};

// Least-squares rate of log E|u_t(x)|^k in t over rows sharing x and k.
inline LyapunovFit lyapunov_fit(const std::vector<MomentRow>& rows, const SigmaSpec& sigma) {
    if (!(sigma.lower_lip() > 0.0)) fail(ErrorCode::NotApplicable, "growth rates need σ with linear growth (lower Lip > 0)");
    require(!rows.empty(), "growth fit needs rows");
    std::vector<double> t, y, sy;
    for (const auto& r : rows) {
        if (r.x != rows.front().x || r.k != rows.front().k) fail(ErrorCode::InvalidArgument, "growth fit rows must share x and k");
        if (!(r.estimate > 0.0)) fail(ErrorCode::InvalidArgument, "growth fit needs positive moments");
        t.push_back(r.t);
        y.push_back(std::log(r.estimate));
        sy.push_back(r.std_error / r.estimate);
    }
    const auto l = detail::fit_slope(t, y, sy);
    LyapunovFit f;
    f.rate = l.slope;
    f.std_error = l.std_error;
    f.rate_lower = l.slope - 3.0 * l.std_error;
    f.rate_upper = l.slope + 3.0 * l.std_error;
    f.t_lo = *std::min_element(t.begin(), t.end());
    f.t_hi = *std::max_element(t.begin(), t.end());
    if (std::abs(f.rate) * (f.t_hi - f.t_lo) < 1.0)
        fail(ErrorCode::InsufficientRange, "growth fit spans less than one e-folding");
    return f;
}

// ---- positivity ----

// σ ≡ 0 scheme error per time level: entry i − 1 is max_j |(P^{i−1} ⋆ D_1)_j − D_i(x_j)|, i = 1..nt.
inline std::vector<double> noiseless_scheme_errors(const MildStepper& st) {
    const auto& lat = st.lattice();
    const std::size_t nx = std::size_t(lat.nx);
    auto ws = st.workspace();
    std::vector<double> z(st.d_node(1), st.d_node(1) + nx), next(nx), zero(nx, 0.0);
    std::vector<double> err(std::size_t(lat.nt), 0.0);
    for (std::int64_t i = 1; i < lat.nt; ++i) {
        st.step(ws, i, z.data(), zero.data(), zero.data(), next.data());
        z.swap(next);
        const double* d = st.d_node(i + 1);
        for (std::size_t j = 0; j < nx; ++j) err[std::size_t(i)] = std::max(err[std::size_t(i)], std::abs(z[j] - d[j]));
    }
    return err;
}

inline double noiseless_scheme_error(const MildStepper& st) {
    const auto e = noiseless_scheme_errors(st);
    return *std::max_element(e.begin(), e.end());
}

// ε_num per time level: factor × that level's σ ≡ 0 scheme error.
inline std::vector<double> positivity_tolerances(const MildStepper& st, double factor = 10.0) {
    auto e = noiseless_scheme_errors(st);
    for (auto& v : e) v *= factor;
    return e;
}

inline double positivity_tolerance(const MildStepper& st, double factor = 10.0) {
    return factor * noiseless_scheme_error(st);
}

struct PositivityRefinement {
    double eps_num = 0.0;      // largest level tolerance on the coarse lattice
    double eps_num_end = 0.0;  // coarse tolerance at t_end
    double fraction_coarse = 0.0, fraction_fine = 0.0;
    std::int64_t count_coarse = 0, count_fine = 0;
    double min_coarse = 0.0, min_fine = 0.0;
    Lattice fine{};
};

// Fraction of cells below their level's −ε_num on `coarse` and on the lattice with Δt halved and Δx
// divided by √2, which keeps p_Δt(0)·Δx fixed for Brownian scaling. Each lattice is held to its own
// σ ≡ 0 scheme error.
inline PositivityRefinement positivity_refinement(const KernelModel& k, const FiniteMeasure& u0, const SigmaSpec& sigma,
                                                  const Lattice& coarse, const std::vector<std::uint64_t>& seeds,
                                                  double factor = 10.0, const SolverOptions& opt = {},
                                                  int threads = replica_threads()) {
    PositivityRefinement out;
    out.fine = {coarse.L, int(std::lround(coarse.nx * std::sqrt(2.0))), 0.5 * coarse.dt, 2 * coarse.nt};
    auto scan = [&](const Lattice& lat, std::int64_t& count, double& frac, double& mn, bool first) {
        const MildStepper st(k, u0, sigma, lat, opt);
        const auto eps = positivity_tolerances(st, factor);
        if (first) {
            out.eps_num = *std::max_element(eps.begin(), eps.end());
            out.eps_num_end = eps.back();
        }
        const auto per = run_replicas(seeds.size(), [&](std::size_t r) {
            const auto s = positivity_scan(st.evolve(noise_rows(lat, seeds[r]), seeds[r]), eps);
            return std::vector<double>{double(s.violation_count), s.min_value};
        }, threads);
        count = 0;
        mn = 0.0;
        for (const auto& p : per) {
            count += std::int64_t(p[0]);
            mn = std::min(mn, p[1]);
        }
        frac = double(count) / (double(seeds.size()) * double(lat.nt) * double(lat.nx));
    };
    scan(coarse, out.count_coarse, out.fraction_coarse, out.min_coarse, true);
    scan(out.fine, out.count_fine, out.fraction_fine, out.min_fine, false);
    return out;
}

}  // namespace levyheat
