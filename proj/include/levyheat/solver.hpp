#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "levyheat/conv_calculus.hpp"
#include "levyheat/noise.hpp"

namespace levyheat {

class SigmaSpec {
public:
    enum class Kind { Linear, SaturatingLinear, Custom };

    static SigmaSpec linear(double lambda) {
        require(std::isfinite(lambda), "sigma: λ must be finite");
        SigmaSpec s;
        s.kind_ = Kind::Linear;
        s.lambda_ = lambda;
        s.lip_ = std::abs(lambda);
        s.lower_lip_ = std::abs(lambda);
        return s;
    }

    // σ(x) = λ c tanh(x / c): slope λ at 0, |σ| < |λ| c.
    static SigmaSpec saturating(double lambda, double cap) {
        require(std::isfinite(lambda) && cap > 0.0 && std::isfinite(cap), "sigma: need finite λ and cap > 0");
        SigmaSpec s;
        s.kind_ = Kind::SaturatingLinear;
        s.lambda_ = lambda;
        s.cap_ = cap;
        s.lip_ = std::abs(lambda);
        s.lower_lip_ = 0.0;
        return s;
    }

    // Piecewise linear through (x_i, y_i), continued linearly with the end slopes.
    static SigmaSpec custom(std::vector<double> x, std::vector<double> y) {
        require(x.size() == y.size() && x.size() >= 2, "sigma: table needs >= 2 matching samples");
        for (std::size_t i = 0; i < x.size(); ++i) {
            require(std::isfinite(x[i]) && std::isfinite(y[i]), "sigma: table must be finite");
            if (i) require(x[i] > x[i - 1], "sigma: table abscissae must increase");
        }
        SigmaSpec s;
        s.kind_ = Kind::Custom;
        s.x_ = std::move(x);
        s.y_ = std::move(y);
        double lip = 0.0;
        for (std::size_t i = 0; i + 1 < s.x_.size(); ++i)
            lip = std::max(lip, std::abs((s.y_[i + 1] - s.y_[i]) / (s.x_[i + 1] - s.x_[i])));
        require(s(0.0) == 0.0, "sigma: table must give σ(0) = 0 exactly");
        s.lip_ = lip;
        double low = std::min(std::abs(s.end_slope(false)), std::abs(s.end_slope(true)));
        for (std::size_t i = 0; i < s.x_.size(); ++i)
            if (s.x_[i] != 0.0) low = std::min(low, std::abs(s.y_[i] / s.x_[i]));
        s.lower_lip_ = low;
        return s;
    }

    Kind kind() const { return kind_; }
    double lambda() const { return lambda_; }
    double cap() const { return cap_; }
    double lip() const { return lip_; }
    double lower_lip() const { return lower_lip_; }
    const std::vector<double>& table_x() const { return x_; }
    const std::vector<double>& table_y() const { return y_; }
    bool is_zero() const {
        if (kind_ == Kind::Custom) return std::all_of(y_.begin(), y_.end(), [](double v) { return v == 0.0; });
        return lambda_ == 0.0;
    }

    double operator()(double v) const {
        switch (kind_) {
        case Kind::Linear: return lambda_ * v;
        case Kind::SaturatingLinear: return lambda_ * cap_ * std::tanh(v / cap_);
        case Kind::Custom: break;
        }
        const std::size_t n = x_.size();
        if (v <= x_[0]) return y_[0] + end_slope(false) * (v - x_[0]);
        if (v >= x_[n - 1]) return y_[n - 1] + end_slope(true) * (v - x_[n - 1]);
        const std::size_t i = std::size_t(std::upper_bound(x_.begin(), x_.end(), v) - x_.begin()) - 1;
        const double w = (v - x_[i]) / (x_[i + 1] - x_[i]);
        return w == 0.0 ? y_[i] : y_[i] + w * (y_[i + 1] - y_[i]);
    }

private:
    double end_slope(bool right) const {
        const std::size_t n = x_.size();
        return right ? (y_[n - 1] - y_[n - 2]) / (x_[n - 1] - x_[n - 2]) : (y_[1] - y_[0]) / (x_[1] - x_[0]);
    }

    Kind kind_ = Kind::Linear;
    double lambda_ = 0.0, cap_ = 0.0, lip_ = 0.0, lower_lip_ = 0.0;
    std::vector<double> x_, y_;
};

inline nlohmann::json sigma_to_json(const SigmaSpec& s) {
    switch (s.kind()) {
    case SigmaSpec::Kind::Linear: return {{"kind", "linear"}, {"lambda", s.lambda()}};
    case SigmaSpec::Kind::SaturatingLinear: return {{"kind", "saturating"}, {"lambda", s.lambda()}, {"cap", s.cap()}};
    case SigmaSpec::Kind::Custom: break;
    }
    return {{"kind", "custom"}, {"x", s.table_x()}, {"y", s.table_y()}};
}

inline SigmaSpec sigma_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "linear") return SigmaSpec::linear(j.at("lambda").get<double>());
    if (kind == "saturating") return SigmaSpec::saturating(j.at("lambda").get<double>(), j.at("cap").get<double>());
    if (kind == "custom")
        return SigmaSpec::custom(j.at("x").get<std::vector<double>>(), j.at("y").get<std::vector<double>>());
    fail(ErrorCode::ConfigInvalid, "unknown sigma kind '" + kind + "'");
}

// Cells [−L + j dx, −L + (j+1) dx), j < nx, and steps [i dt, (i+1) dt), i < nt.
struct Lattice {
    double L = 1.0;
    int nx = 2;
    double dt = 1.0;
    int nt = 1;

    double dx() const { return 2.0 * L / nx; }
    double x0() const { return -L + 0.5 * dx(); }
    double x(int j) const { return x0() + j * dx(); }
    double t(std::int64_t i) const { return double(i) * dt; }
    double t_end() const { return t(nt); }

    void validate() const {
        require(L > 0.0 && std::isfinite(L), "lattice: L must be positive");
        require(nx >= 2 && nt >= 1, "lattice: need nx >= 2 and nt >= 1");
        require(dt > 0.0 && std::isfinite(dt), "lattice: dt must be positive");
    }
};

struct SolverOptions {
    // mass of p_{t_end} * u0 allowed outside [−L, L]
    double truncation_tol = 1e-8;
    // warn when p_dt(0) dx exceeds this
    double refinement_limit = 0.5;
    // spectral kernels are tapered from rolloff·π/dx to π/dx; 1 disables the taper
    double rolloff = 1.0;
    // D is evaluated at t + time_shift, i.e. the start p_shift * u0
    double time_shift = 0.0;
    std::int64_t max_cells = std::int64_t(1) << 27;
};

enum class Scheme { Picard, TimeStep };

struct FieldLattice {
    SpaceTimeGrid grid;  // rows t_1..t_nt at cell centres
    Scheme scheme = Scheme::TimeStep;
    int picard_n = 0;
    std::uint64_t seed = 0;
    double truncation_L = 0.0;
};

// Restart point: Z = u − D at t_step.
struct EvolveState {
    std::int64_t step = 0;
    std::vector<double> z;
};

namespace detail {

inline double smooth_step(double u) {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    const double a = std::exp(-1.0 / u), b = std::exp(-1.0 / (1.0 - u));
    return a / (a + b);
}

inline int fft_size(int n) {
    for (int m = n;; ++m) {
        int r = m;
        for (int f : {2, 3, 5})
            while (r % f == 0) r /= f;
        if (r == 1) return m;
    }
}

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};
template <class T>
using FftwBuf = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuf<T> fftw_buffer(std::size_t n) {
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
    if (!p) fail(ErrorCode::AllocationLimit, "fftw_malloc failed");
    std::memset(static_cast<void*>(p), 0, sizeof(T) * n);
    return FftwBuf<T>(p);
}

// σ-argument contribution of the deterministic part: sign-free RMS of D over a space-time cell.
// D = A + R with A from atoms (possibly narrower than a cell) and R from the density part.
inline double cell_rms(const KernelModel& k, const FiniteMeasure& u0, double s0, double s1, bool from_origin,
                       double a, double b) {
    const auto& atoms = u0.atoms();
    double avgA = 0.0, avgA2 = 0.0;
    if (!atoms.empty()) {
        std::vector<double> s, w;
        if (from_origin) {
            const auto& gl = quad::legendre<8>();
            const double m = k.grading(), T = s1 - s0;
            for (int p = 0; p < 4; ++p)
                for (unsigned q = 0; q < 8; ++q) {
                    const double v = 0.125 * (2 * p + 1 + gl.x[q]);
                    s.push_back(s0 + T * std::pow(v, m));
                    w.push_back(0.125 * gl.w[q] * m * T * std::pow(v, m - 1.0));
                }
        } else {
            const auto& gl = quad::legendre<4>();
            for (unsigned q = 0; q < 4; ++q) {
                s.push_back(0.5 * (s0 + s1) + 0.5 * (s1 - s0) * gl.x[q]);
                w.push_back(0.5 * (s1 - s0) * gl.w[q]);
            }
        }
        const auto& gy = quad::legendre<4>();
        std::vector<double> br;
        const double dx = b - a;
        for (std::size_t q = 0; q < s.size(); ++q) {
            if (!(s[q] > 0.0)) continue;
            const double ws = kernel_width(k, s[q]);
            const double inv = 1.0 / k.scale(s[q]);
            br.assign({a, b});
            if (ws < 4.0 * dx) {
                const double R = reach_factor(k) * ws;
                for (const auto& at : atoms)
                    if (at.y > a - R && at.y < b + R) quad::add_geometric_breaks(br, at.y, ws, 2.0 * dx);
                for (auto& v : br) v = std::clamp(v, a, b);
                br = quad::refine_breaks(br, 0.0);
            }
            double s1y = 0.0, s2y = 0.0;
            for (std::size_t p = 0; p + 1 < br.size(); ++p) {
                const double c = 0.5 * (br[p] + br[p + 1]), h = 0.5 * (br[p + 1] - br[p]);
                if (!(h > 0.0)) continue;
                for (unsigned i = 0; i < 4; ++i) {
                    const double y = c + h * gy.x[i];
                    double A = 0.0;
                    for (const auto& at : atoms) A += at.m * k.unit_q((y - at.y) * inv) * inv;
                    s1y += h * gy.w[i] * A;
                    s2y += h * gy.w[i] * A * A;
                }
            }
            avgA += w[q] * s1y;
            avgA2 += w[q] * s2y;
        }
        const double vol = (s1 - s0) * dx;
        avgA /= vol;
        avgA2 /= vol;
    }
    const double R = u0.density() ? heat_convolve_density(k, u0, 0.5 * (s0 + s1), 0.5 * (a + b)) : 0.0;
    return std::sqrt(avgA2 + 2.0 * R * avgA + R * R);
}

}  // namespace detail

// Lattice propagator P (symbol e^{−dt Ψ}) and one-step noise kernel K with |K̂|² = (1 − e^{−2dtΨ})/(2dtΨ),
// so that Σ_m K(m)² dt dx = ∫_0^dt ‖p_r‖²_{L²} dr restricted to the lattice band. Stored as the
// spectra of their zero-padded real-space stencils, scaled by 1/N for the unnormalized inverse.
class LatticeKernels {
public:
    LatticeKernels(const KernelModel& k, const Lattice& lat, double rolloff) {
        require(rolloff > 0.0 && rolloff <= 1.0, "lattice kernels: rolloff must lie in (0, 1]");
        nx_ = lat.nx;
        n_ = detail::fft_size(2 * nx_);
        const double dx = lat.dx(), dt = lat.dt;
        int M = 1;
        while (M < 8 * nx_) M *= 2;
        const double xiN = std::acos(-1.0) / dx;
        auto spec = detail::fftw_buffer<fftw_complex>(std::size_t(M / 2 + 1));
        auto real = detail::fftw_buffer<double>(std::size_t(M));
        fftw_plan inv = fftw_plan_dft_c2r_1d(M, spec.get(), real.get(), FFTW_ESTIMATE);
        auto stencil = [&](bool noise) {
            for (int q = 0; q <= M / 2; ++q) {
                const double xi = 2.0 * xiN * q / M;
                const double w = rolloff < 1.0 ? detail::smooth_step((xiN - xi) / ((1.0 - rolloff) * xiN)) : 1.0;
                auto f = [&](double z) {
                    const double a = dt * k.psi(z);
                    if (!noise) return std::exp(-a);
                    return a > 0.0 ? -std::expm1(-2.0 * a) / (2.0 * a) : 1.0;
                };
                double v = f(xi);
                if (noise) v = std::sqrt(v);
                spec[q][0] = w * v;
                spec[q][1] = 0.0;
            }
            fftw_execute(inv);
            std::vector<double> st(std::size_t(2 * nx_ - 1));
            const double scale = noise ? 1.0 / (M * dx) : 1.0 / M;
            for (int m = -(nx_ - 1); m <= nx_ - 1; ++m) st[std::size_t(m + nx_ - 1)] = real[std::size_t((m + M) % M)] * scale;
            return st;
        };
        p_stencil_ = stencil(false);
        k_stencil_ = stencil(true);
        fftw_destroy_plan(inv);

        auto pad = detail::fftw_buffer<double>(std::size_t(n_));
        auto out = detail::fftw_buffer<fftw_complex>(std::size_t(n_ / 2 + 1));
        fftw_plan fwd = fftw_plan_dft_r2c_1d(n_, pad.get(), out.get(), FFTW_ESTIMATE);
        auto spectrum = [&](const std::vector<double>& st) {
            std::fill(pad.get(), pad.get() + n_, 0.0);
            for (int m = -(nx_ - 1); m <= nx_ - 1; ++m) pad[std::size_t((m + n_) % n_)] = st[std::size_t(m + nx_ - 1)];
            fftw_execute(fwd);
            std::vector<std::complex<double>> h(std::size_t(n_ / 2 + 1));
            for (int q = 0; q <= n_ / 2; ++q) h[std::size_t(q)] = std::complex<double>(out[q][0], out[q][1]) / double(n_);
            return h;
        };
        p_hat_ = spectrum(p_stencil_);
        k_hat_ = spectrum(k_stencil_);
        fftw_destroy_plan(fwd);
    }

    int nx() const { return nx_; }
    int fft_n() const { return n_; }
    // offsets −(nx−1)..nx−1
    const std::vector<double>& p_stencil() const { return p_stencil_; }
    const std::vector<double>& k_stencil() const { return k_stencil_; }
    const std::vector<std::complex<double>>& p_hat() const { return p_hat_; }
    const std::vector<std::complex<double>>& k_hat() const { return k_hat_; }

private:
    int nx_ = 0, n_ = 0;
    std::vector<double> p_stencil_, k_stencil_;
    std::vector<std::complex<double>> p_hat_, k_hat_;
};

// Noise increments by absolute step index.
using NoiseRows = std::function<void(std::int64_t, double*)>;

inline NoiseRows noise_rows(const NoiseLattice& n) {
    return [&n](std::int64_t i, double* out) {
        const std::int64_t r = i - n.row_offset();
        if (r < 0 || r >= n.nt()) fail(ErrorCode::OffsetOutOfRange, "noise lattice does not cover step " + std::to_string(i));
        n.row(r, out);
    };
}

inline NoiseRows noise_rows(const Lattice& lat, std::uint64_t seed) {
    const CounterNoise c{lat.dt, lat.dx(), lat.nx, seed, 0};
    return [c](std::int64_t i, double* out) { c.row(i, out); };
}

// Kernel-exact time stepping of the mild form with u = D + Z, D = p_• * u0 evaluated exactly:
//   Z_{i+1} = P ⋆ Z_i + K ⋆ (σ(D̄_i + Z_i) ΔW_i),
// D̄_i the cell RMS of D over step i. Zero field outside [−L, L].
class MildStepper {
public:
    struct Workspace {
        detail::FftwBuf<double> a, b;
        detail::FftwBuf<fftw_complex> fa, fb;
        std::vector<double> dw, u;
    };

    MildStepper(KernelModel k, FiniteMeasure u0, SigmaSpec sigma, Lattice lat, SolverOptions opt = {})
        : k_(std::move(k)), u0_(std::move(u0)), sigma_(std::move(sigma)), lat_(lat), opt_(opt),
          ker_((lat.validate(), k_), lat, opt.rolloff) {
        require(opt_.time_shift >= 0.0, "time_shift must be nonnegative");
        const std::int64_t cells = std::int64_t(lat_.nt) * lat_.nx;
        if (cells > opt_.max_cells / 2) fail(ErrorCode::AllocationLimit, "nt*nx exceeds the configured cell budget");
        outside_ = mass_outside(k_, u0_, lat_.t_end() + opt_.time_shift, lat_.L);
        if (outside_ > opt_.truncation_tol * u0_.total_mass())
            fail(ErrorCode::TruncationTooSmall, "mass " + std::to_string(outside_) + " of p_t*u0 lies outside [-L, L]");
        const double cell_mass = k_.density0(lat_.dt) * lat_.dx();
        if (cell_mass > opt_.refinement_limit)
            warnings_.push_back("p_dt(0)*dx = " + std::to_string(cell_mass) + " exceeds " +
                                std::to_string(opt_.refinement_limit));
        const std::size_t nx = std::size_t(lat_.nx);
        d_node_.resize(std::size_t(lat_.nt) * nx);
        d_eff_.resize(std::size_t(lat_.nt) * nx);
        const double sh = opt_.time_shift, dx = lat_.dx();
        for (int i = 0; i < lat_.nt; ++i)
            for (int j = 0; j < lat_.nx; ++j) {
                const double a = -lat_.L + j * dx;
                d_node_[std::size_t(i) * nx + std::size_t(j)] = heat_convolve(k_, u0_, lat_.t(i + 1) + sh, lat_.x(j));
                d_eff_[std::size_t(i) * nx + std::size_t(j)] =
                    detail::cell_rms(k_, u0_, lat_.t(i) + sh, lat_.t(i + 1) + sh, i == 0 && sh == 0.0, a, a + dx);
            }
        auto ws = workspace();
        const int n = ker_.fft_n();
        fwd_ = Plan(fftw_plan_dft_r2c_1d(n, ws.a.get(), ws.fa.get(), FFTW_ESTIMATE));
        inv_ = Plan(fftw_plan_dft_c2r_1d(n, ws.fa.get(), ws.a.get(), FFTW_ESTIMATE));
    }

    const KernelModel& kernel() const { return k_; }
    const FiniteMeasure& initial() const { return u0_; }
    const SigmaSpec& sigma() const { return sigma_; }
    const Lattice& lattice() const { return lat_; }
    const SolverOptions& options() const { return opt_; }
    const LatticeKernels& kernels() const { return ker_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    double truncation_mass() const { return outside_; }
    // D at t_i, i = 1..nt
    const double* d_node(std::int64_t i) const { return d_node_.data() + std::size_t(i - 1) * std::size_t(lat_.nx); }
    // σ argument of D over step i = 0..nt−1
    const double* d_eff(std::int64_t i) const { return d_eff_.data() + std::size_t(i) * std::size_t(lat_.nx); }

    Workspace workspace() const {
        const std::size_t n = std::size_t(ker_.fft_n());
        return {detail::fftw_buffer<double>(n), detail::fftw_buffer<double>(n),
                detail::fftw_buffer<fftw_complex>(n / 2 + 1), detail::fftw_buffer<fftw_complex>(n / 2 + 1),
                std::vector<double>(std::size_t(lat_.nx)), std::vector<double>(std::size_t(lat_.nx))};
    }

    // z_out = P ⋆ z_prop + K ⋆ (σ(D̄_i + z_arg) dw); z_prop may be null (zero field).
    void step(Workspace& ws, std::int64_t i, const double* z_prop, const double* z_arg, const double* dw,
              double* z_out) const {
        const int n = ker_.fft_n(), nx = lat_.nx;
        const double* de = d_eff(i);
        const auto& ph = ker_.p_hat();
        const auto& kh = ker_.k_hat();
        for (int j = 0; j < nx; ++j) ws.b[j] = sigma_(de[j] + z_arg[j]) * dw[j];
        fftw_execute_dft_r2c(fwd_.get(), ws.b.get(), ws.fb.get());
        if (z_prop) {
            std::copy(z_prop, z_prop + nx, ws.a.get());
            std::fill(ws.a.get() + nx, ws.a.get() + n, 0.0);
            fftw_execute_dft_r2c(fwd_.get(), ws.a.get(), ws.fa.get());
            for (int q = 0; q <= n / 2; ++q) {
                const double ar = ws.fa[q][0], ai = ws.fa[q][1], br = ws.fb[q][0], bi = ws.fb[q][1];
                const double pr = ph[std::size_t(q)].real(), pi = ph[std::size_t(q)].imag();
                const double kr = kh[std::size_t(q)].real(), ki = kh[std::size_t(q)].imag();
                ws.fa[q][0] = pr * ar - pi * ai + kr * br - ki * bi;
                ws.fa[q][1] = pr * ai + pi * ar + kr * bi + ki * br;
            }
        } else {
            for (int q = 0; q <= n / 2; ++q) {
                const double br = ws.fb[q][0], bi = ws.fb[q][1];
                const double kr = kh[std::size_t(q)].real(), ki = kh[std::size_t(q)].imag();
                ws.fa[q][0] = kr * br - ki * bi;
                ws.fa[q][1] = kr * bi + ki * br;
            }
        }
        fftw_execute_dft_c2r(inv_.get(), ws.fa.get(), ws.a.get());
        std::copy(ws.a.get(), ws.a.get() + nx, z_out);
    }

    EvolveState initial_state() const { return {0, std::vector<double>(std::size_t(lat_.nx), 0.0)}; }

    // Advances `steps` steps; sink(i, u) receives u at t_i for each new row.
    template <class Sink>
    void advance(const NoiseRows& noise, EvolveState& st, std::int64_t steps, Workspace& ws, Sink&& sink) const {
        require(st.z.size() == std::size_t(lat_.nx), "evolve state has the wrong width");
        if (st.step < 0 || st.step + steps > lat_.nt) fail(ErrorCode::OffsetOutOfRange, "evolve past the lattice horizon");
        std::vector<double> next(std::size_t(lat_.nx));
        const bool quiet = sigma_.is_zero();
        for (std::int64_t s = 0; s < steps; ++s) {
            const std::int64_t i = st.step;
            if (!quiet) {
                noise(i, ws.dw.data());
                step(ws, i, i == 0 ? nullptr : st.z.data(), st.z.data(), ws.dw.data(), next.data());
                st.z.swap(next);
            }
            st.step = i + 1;
            const double* d = d_node(st.step);
            for (int j = 0; j < lat_.nx; ++j) ws.u[std::size_t(j)] = d[j] + st.z[std::size_t(j)];
            sink(st.step, ws.u.data());
        }
    }

    template <class Sink>
    void advance(const NoiseRows& noise, EvolveState& st, std::int64_t steps, Sink&& sink) const {
        auto ws = workspace();
        advance(noise, st, steps, ws, std::forward<Sink>(sink));
    }

    FieldLattice empty_field(Scheme scheme, int picard_n, std::uint64_t seed) const {
        std::vector<double> t(std::size_t(lat_.nt));
        for (int i = 0; i < lat_.nt; ++i) t[std::size_t(i)] = lat_.t(i + 1);
        return {SpaceTimeGrid::zeros(std::move(t), lat_.x(0), lat_.dx(), lat_.nx), scheme, picard_n, seed, lat_.L};
    }

    FieldLattice evolve(const NoiseRows& noise, std::uint64_t seed = 0) const {
        auto f = empty_field(Scheme::TimeStep, 0, seed);
        auto st = initial_state();
        advance(noise, st, lat_.nt, [&](std::int64_t i, const double* u) {
            std::copy(u, u + lat_.nx, f.grid.row(int(i - 1)));
        });
        return f;
    }

    // u^{(0)}, ..., u^{(n_max)} on one noise realization; u^{(0)} ≡ 0, u^{(1)} = D.
    std::vector<FieldLattice> picard_iterates(const NoiseRows& noise, int n_max, std::uint64_t seed = 0) const {
        require(n_max >= 0, "Picard stage must be >= 0");
        const std::size_t nx = std::size_t(lat_.nx), nt = std::size_t(lat_.nt);
        std::vector<FieldLattice> out;
        out.push_back(empty_field(Scheme::Picard, 0, seed));
        if (n_max == 0) return out;
        std::vector<double> dw(nt * nx), prev((nt + 1) * nx, 0.0), cur((nt + 1) * nx, 0.0);
        if (n_max >= 2 && !sigma_.is_zero())
            for (std::size_t i = 0; i < nt; ++i) noise(std::int64_t(i), dw.data() + i * nx);
        auto ws = workspace();
        for (int m = 1; m <= n_max; ++m) {
            // Z^{(m)} from σ(D̄ + Z^{(m−1)}); Z^{(1)} = 0 since σ(u^{(0)}) = σ(0) = 0
            if (m >= 2 && !sigma_.is_zero())
                for (std::size_t i = 0; i < nt; ++i)
                    step(ws, std::int64_t(i), i == 0 ? nullptr : cur.data() + i * nx, prev.data() + i * nx,
                         dw.data() + i * nx, cur.data() + (i + 1) * nx);
            auto f = empty_field(Scheme::Picard, m, seed);
            for (std::size_t i = 1; i <= nt; ++i) {
                const double* d = d_node(std::int64_t(i));
                for (std::size_t j = 0; j < nx; ++j) f.grid.row(int(i - 1))[j] = d[j] + cur[i * nx + j];
            }
            out.push_back(std::move(f));
            prev.swap(cur);
        }
        return out;
    }

private:
    struct PlanDel {
        void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
    };
    using Plan = std::unique_ptr<fftw_plan_s, PlanDel>;

    KernelModel k_;
    FiniteMeasure u0_;
    SigmaSpec sigma_;
    Lattice lat_;
    SolverOptions opt_;
    LatticeKernels ker_;
    std::vector<std::string> warnings_;
    double outside_ = 0.0;
    std::vector<double> d_node_, d_eff_;
    Plan fwd_, inv_;
};

inline Lattice lattice_of(const NoiseLattice& n, double t_end) {
    const int nt = int(std::lround(t_end / n.dt()));
    if (nt < 1 || std::abs(nt * n.dt() - t_end) > 1e-9 * t_end)
        fail(ErrorCode::GridMismatch, "t_end is not a whole number of noise steps");
    if (n.row_offset() != 0 || nt > n.nt()) fail(ErrorCode::GridMismatch, "noise lattice does not cover [0, t_end]");
    return {0.5 * n.dx() * double(n.nx()), int(n.nx()), n.dt(), nt};
}

inline FieldLattice evolve(const KernelModel& k, const FiniteMeasure& u0, const SigmaSpec& sigma,
                           const NoiseLattice& noise, double t_end, const SolverOptions& opt = {}) {
    const MildStepper st(k, u0, sigma, lattice_of(noise, t_end), opt);
    return st.evolve(noise_rows(noise), noise.seed());
}

struct PicardOptions {
    // moment order whose horizon 𝔗ₖ bounds the lattice
    double k = 2.0;
    // Θ; estimated when ≤ 0
    double theta = 0.0;
    bool enforce_horizon = true;
};

inline double picard_horizon(const KernelModel& k, const SigmaSpec& sigma, const PicardOptions& p) {
    const double theta = p.theta > 0.0 ? p.theta : theta_estimate(k).value;
    return frak_T(k, p.k, sigma.lip(), theta);
}

inline FieldLattice picard_iterate(const KernelModel& k, const FiniteMeasure& u0, const SigmaSpec& sigma,
                                   const NoiseLattice& noise, int n, const PicardOptions& p = {},
                                   const SolverOptions& opt = {}) {
    const double t_end = noise.dt() * double(noise.nt());
    if (p.enforce_horizon) {
        const double T = picard_horizon(k, sigma, p);
        if (t_end > T * (1.0 + 1e-12))
            fail(ErrorCode::HorizonExceeded,
                 "lattice horizon " + std::to_string(t_end) + " exceeds T_k = " + std::to_string(T));
    }
    const MildStepper st(k, u0, sigma, lattice_of(noise, t_end), opt);
    return std::move(st.picard_iterates(noise_rows(noise), n, noise.seed()).back());
}

// Minimum over the lattice and number of cells below −eps_num.
struct PositivityScan {
    double min_value = 0.0;
    std::int64_t violation_count = 0;
};

inline PositivityScan positivity_scan(const FieldLattice& f, double eps_num = 0.0) {
    PositivityScan r{f.grid.v.empty() ? 0.0 : f.grid.v.front(), 0};
    for (double v : f.grid.v) {
        r.min_value = std::min(r.min_value, v);
        if (v < -eps_num) ++r.violation_count;
    }
    return r;
}

// Row i is held to −eps_rows[i].
inline PositivityScan positivity_scan(const FieldLattice& f, const std::vector<double>& eps_rows) {
    require(eps_rows.size() == std::size_t(f.grid.nt()), "positivity_scan needs one tolerance per time level");
    PositivityScan r{f.grid.v.empty() ? 0.0 : f.grid.v.front(), 0};
    for (int n = 0; n < f.grid.nt(); ++n) {
        const double* row = f.grid.row(n);
        for (int j = 0; j < f.grid.nx; ++j) {
            r.min_value = std::min(r.min_value, row[j]);
            if (row[j] < -eps_rows[std::size_t(n)]) ++r.violation_count;
        }
    }
    return r;
}

// LEVYHEAT_THREADS caps the replica threads; default is the hardware concurrency.
inline int replica_threads() {
    if (const char* e = std::getenv("LEVYHEAT_THREADS")) {
        const int n = std::atoi(e);
        if (n >= 1) return n;
    }
    return std::max(1, int(std::thread::hardware_concurrency()));
}

// results[r] = f(r) for r < n, computed on up to `threads` threads; the result order (and so any
// reduction over it) does not depend on the thread count.
template <class F>
auto run_replicas(std::size_t n, F&& f, int threads = replica_threads()) {
    using R = decltype(f(std::size_t(0)));
    std::vector<R> out(n);
    const std::size_t T = std::min<std::size_t>(std::size_t(std::max(1, threads)), std::max<std::size_t>(n, 1));
    if (T <= 1) {
        for (std::size_t r = 0; r < n; ++r) out[r] = f(r);
        return out;
    }
    std::vector<std::exception_ptr> err(T);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < T; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t r = w; r < n; r += T) out[r] = f(r);
            } catch (...) {
                err[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : err)
        if (e) std::rethrow_exception(e);
    return out;
}

struct SampleStats {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

// Mean and standard error by fixed-order pairwise sums.
inline SampleStats sample_stats(const std::vector<double>& v) {
    SampleStats s;
    s.n = v.size();
    if (v.empty()) return s;
    s.mean = quad::pairwise_sum(v) / double(v.size());
    if (v.size() < 2) return s;
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = (v[i] - s.mean) * (v[i] - s.mean);
    s.std_error = std::sqrt(quad::pairwise_sum(d) / double(v.size() - 1) / double(v.size()));
    return s;
}

// Column c of per-replica feature vectors.
inline std::vector<double> column(const std::vector<std::vector<double>>& rows, std::size_t c) {
    std::vector<double> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out[r] = rows[r].at(c);
    return out;
}

struct MomentRow {
    double t = 0.0, x = 0.0;
    int k = 1;
    double estimate = 0.0, std_error = 0.0;
    double bound_exist_unique = 0.0, bound_h1 = 0.0;
};

struct MomentTable {
    std::vector<MomentRow> rows;
};

namespace detail {

// (1/2π) ∫_ℝ W(ξ) (1 − e^{−εΨ})² / (β + 2Ψ) dξ for even W, with W → w_inf beyond the head, where Ψ is a
// pure power and (1 − e^{−εΨ})² = 1 to double precision.
template <class W>
double stability_xi_integral(const KernelModel& k, double eps, double beta, W&& weight, double w_inf,
                             double span) {
    const double a = k.tail_exponent();
    if (a <= 1.0) fail(ErrorCode::DivergentResolvent, "stability integral diverges for tail exponent <= 1");
    auto root = [&](double level) {
        double x = 1.0;
        while (k.psi(x) > level && x > 1e-300) x *= 0.5;
        while (k.psi(x) < level && std::isfinite(x)) x *= 2.0;
        return x;
    };
    double X = 64.0 * root(0.5 * beta);
    if (eps > 0.0) X = std::max(X, root(40.0 / eps));
    // cross terms of W oscillate with period ≥ 2π/span and are dropped beyond X
    if (span > 0.0) X = std::max(X, root(1e6 * span));
    if (!k.scaling()) X = std::max(X, k.table_xi().back());
    std::vector<double> b{0.0};
    for (int j = 60; j >= 0; --j) b.push_back(std::ldexp(X, -j));
    if (!k.scaling())
        for (double x : k.table_xi())
            if (x < X) b.push_back(x);
    b = quad::refine_breaks(b, span > 0.0 ? 0.5 / span : 0.0);
    auto f = [&](double xi) {
        const double p = k.psi(xi);
        const double g = -std::expm1(-eps * p);
        return weight(xi) * g * g / (beta + 2.0 * p);
    };
    const double head = quad::composite<20>(f, b);
    const double kk = 1.0 / (a - 1.0), cX = 2.0 * k.psi(X);
    auto g = [&](double w) { return kk * X / (beta * std::pow(w, kk + 1.0) + cX); };
    std::vector<double> bw{0.0};
    for (int j = 40; j >= 0; --j) bw.push_back(std::ldexp(1.0, -j));
    const double tail = eps > 0.0 ? w_inf * quad::composite<20>(g, bw) : 0.0;
    return (head + tail) / std::acos(-1.0);
}

}  // namespace detail

// ∫_0^∞ e^{−βt} ‖p_t * u0 − p_{t+ε} * u0‖²_{L²} dt by Plancherel.
inline double stability_deterministic(const KernelModel& k, const FiniteMeasure& u0, double eps, double beta) {
    require(eps >= 0.0 && beta > 0.0, "stability: need ε >= 0 and β > 0");
    double w_inf = 0.0, lo = 0.0, hi = 0.0;
    for (const auto& a : u0.atoms()) {
        w_inf += a.m * a.m;
        lo = std::min(lo, a.y);
        hi = std::max(hi, a.y);
    }
    const bool point = u0.atoms().size() == 1 && !u0.density();
    const double span = point ? 0.0 : std::max(hi - lo, 2.0 * u0.support_radius());
    return detail::stability_xi_integral(
                     k, eps, beta, [&](double xi) { return point ? w_inf : std::norm(fourier_u0(u0, xi)); }, w_inf, span);
}

// The same quantity by quadrature in x and t.
inline double stability_deterministic_direct(const KernelModel& k, const FiniteMeasure& u0, double eps, double beta) {
    require(eps >= 0.0 && beta > 0.0, "stability: need ε >= 0 and β > 0");
    if (eps == 0.0) return 0.0;
    const double R = u0.support_radius();
    auto g = [&](double t) {
        const double w = k.scale(t), Xout = R + 40.0 * k.scale(t + eps) + 4.0 * w;
        std::vector<double> b{-Xout, Xout};
        for (const auto& a : u0.atoms()) quad::add_geometric_breaks(b, a.y, w, Xout);
        if (u0.density()) {
            const auto& gr = u0.density()->grid;
            const int n = std::max(1, int(std::ceil((gr.back() - gr.front()) / std::max(w, 0.01 * R))));
            for (int i = 0; i <= std::min(n, 400); ++i) b.push_back(gr.front() + (gr.back() - gr.front()) * i / std::min(n, 400));
        }
        for (auto& v : b) v = std::clamp(v, -Xout, Xout);
        b = quad::refine_breaks(b, 0.0);
        return quad::composite<10>([&](double x) {
            const double d = heat_convolve(k, u0, t, x) - heat_convolve(k, u0, t + eps, x);
            return d * d;
        }, b);
    };
    auto h = [&](double t) { return std::exp(-beta * t) * g(t); };
    const double t1 = std::min(eps, 1.0 / beta);
    double s = quad::graded_origin<10>(h, t1, k.grading(), 4);
    const double t_max = 60.0 / beta;
    for (double a = t1; a < t_max; a *= 2.0) s += quad::panel<10>(h, a, std::min(2.0 * a, t_max));
    return s;
}

// [u0(ℝ)]²/π ∫ (1 − e^{−εΨ})²/(β + 2Ψ) dξ.
inline double stability_bound(const KernelModel& k, const FiniteMeasure& u0, double eps, double beta) {
    require(eps >= 0.0 && beta > 0.0, "stability: need ε >= 0 and β > 0");
    const double m2 = u0.total_mass() * u0.total_mass();
    return 2.0 * detail::stability_xi_integral(k, eps, beta, [&](double) { return m2; }, m2, 0.0);
}

struct StabilityOptions {
    double t_max = 2.0;
    int nt = 1024;
    double L = 0.0;  // 0 picks support radius + 10·scale(t_max + max ε)
    int nx = 256;
    SolverOptions solver{};
    int threads = replica_threads();
};

struct StabilityRow {
    double eps = 0.0;
    double distance = 0.0, std_error = 0.0;
    double deterministic = 0.0, deterministic_direct = 0.0;
    double stochastic = 0.0;
    // e^{−β t_max}/β times the last integrand row: size of the truncated time tail if it stopped growing
    double tail_estimate = 0.0;
    double bound = 0.0;
};

// ∫e^{−βt}dt ∫dx E|u_t − U^{(ε)}_t|² with U^{(ε)} started from p_ε * u0 on the same noise. The
// deterministic part is exact; the stochastic part E‖Z − Z^{(ε)}‖² is Monte Carlo on [0, t_max].
inline std::vector<StabilityRow> stability_compare(const KernelModel& k, const FiniteMeasure& u0,
                                                   const SigmaSpec& sigma, const std::vector<double>& eps_list,
                                                   double beta, const std::vector<std::uint64_t>& seeds,
                                                   const StabilityOptions& opt = {}) {
    require(!eps_list.empty() && beta > 0.0, "stability_compare: need ε values and β > 0");
    for (double e : eps_list) require(e > 0.0, "stability_compare: ε must be positive");
    if (!sigma.is_zero() && sigma.lip() * sigma.lip() * upsilon_eval(k, beta) > 0.5)
        fail(ErrorCode::InvalidArgument, "β is not admissible: Lip²·Υ(β) > 1/2");
    std::vector<StabilityRow> out;
    for (double e : eps_list) {
        StabilityRow r;
        r.eps = e;
        r.deterministic = stability_deterministic(k, u0, e, beta);
        r.deterministic_direct = stability_deterministic_direct(k, u0, e, beta);
        r.bound = stability_bound(k, u0, e, beta);
        r.distance = r.deterministic;
        out.push_back(r);
    }
    if (sigma.is_zero() || seeds.empty()) return out;
    const double e_max = *std::max_element(eps_list.begin(), eps_list.end());
    const double L = opt.L > 0.0 ? opt.L : u0.support_radius() + 10.0 * k.scale(opt.t_max + e_max);
    const Lattice lat{L, opt.nx, opt.t_max / opt.nt, opt.nt};
    const MildStepper base(k, u0, sigma, lat, opt.solver);
    std::vector<std::unique_ptr<MildStepper>> shifted;
    for (double e : eps_list) {
        auto o = opt.solver;
        o.time_shift = e;
        shifted.push_back(std::make_unique<MildStepper>(k, u0, sigma, lat, o));
    }
    const std::size_t ne = eps_list.size(), nx = std::size_t(lat.nx);
    const auto per = run_replicas(seeds.size(), [&](std::size_t r) {
        const auto noise = noise_rows(lat, seeds[r]);
        std::vector<double> z(std::size_t(lat.nt) * nx);
        auto s = base.initial_state();
        base.advance(noise, s, lat.nt, [&](std::int64_t i, const double* u) {
            const double* d = base.d_node(i);
            for (std::size_t j = 0; j < nx; ++j) z[std::size_t(i - 1) * nx + j] = u[j] - d[j];
        });
        std::vector<double> v(2 * ne);
        for (std::size_t e = 0; e < ne; ++e) {
            const auto& st = *shifted[e];
            auto se = st.initial_state();
            std::vector<double> rows(std::size_t(lat.nt));
            st.advance(noise, se, lat.nt, [&](std::int64_t i, const double* u) {
                const double* d = st.d_node(i);
                const double* zb = z.data() + std::size_t(i - 1) * nx;
                double acc = 0.0;
                for (std::size_t j = 0; j < nx; ++j) {
                    const double diff = zb[j] - (u[j] - d[j]);
                    acc += diff * diff;
                }
                rows[std::size_t(i - 1)] = acc * lat.dx();
            });
            // trapezoid in t with Z_0 = Z^{(ε)}_0 = 0
            std::vector<double> wrow(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                wrow[i] = std::exp(-beta * lat.t(std::int64_t(i + 1))) * rows[i] * lat.dt * (i + 1 == rows.size() ? 0.5 : 1.0);
            v[2 * e] = quad::pairwise_sum(wrow);
            v[2 * e + 1] = rows.back();
        }
        return v;
    }, opt.threads);
    for (std::size_t e = 0; e < ne; ++e) {
        const auto st = sample_stats(column(per, 2 * e));
        out[e].stochastic = st.mean;
        out[e].std_error = st.std_error;
        out[e].distance = out[e].deterministic + st.mean;
        out[e].tail_estimate = std::exp(-beta * opt.t_max) / beta * sample_stats(column(per, 2 * e + 1)).mean;
    }
    return out;
}

}  // namespace levyheat
