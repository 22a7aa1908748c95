#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "levyheat/error.hpp"
#include "levyheat/quadrature.hpp"

namespace levyheat {

struct QuadratureSpec {
    double cutoff_xi = 0.0;  // 0 selects Ξ(t) from exp(-tΨ(Ξ)) = tol/10
    int nodes = 4096;        // baseline nodes on [0, Ξ]
    double tol = 1e-12;
};

enum class KernelKind { Brownian, Stable, TabulatedPsi };

inline const char* kernel_kind_name(KernelKind k) {
    switch (k) {
    case KernelKind::Brownian: return "brownian";
    case KernelKind::Stable: return "stable";
    case KernelKind::TabulatedPsi: return "tabulated";
    }
    return "?";
}

namespace detail {

constexpr double kPi = std::numbers::pi;
constexpr unsigned kGL = 16;

// Panel breakpoints for ∫_0^Ξ of an oscillating integrand with a possible cusp at 0.
inline std::vector<double> fourier_breaks(double Xi, double x, int nodes, bool cusp) {
    const double osc = std::abs(x) * Xi / kPi;
    const double m = std::max<double>(std::max(1, nodes / int(kGL)), std::ceil(osc) + 1.0);
    if (m > 4.0e5) fail(ErrorCode::QuadratureUnderresolved, "oscillation |x|Ξ too large for panel budget");
    const int M = int(m);
    const double h = Xi / M;
    std::vector<double> b;
    b.reserve(M + 48);
    b.push_back(0.0);
    if (cusp)
        for (int j = 40; j >= 1; --j) b.push_back(std::ldexp(h, -j));
    for (int i = 1; i <= M; ++i) b.push_back(h * i);
    return b;
}

// Standardized symmetric stable density q(z) = (1/π)∫_0^∞ cos(zη) e^{-η^α} dη,
// tabulated with cubic Hermite interpolation; Q1 = ∫_0^z q, Q2 = ∫_0^z u q(u) du.
class UnitDensity {
public:
    static constexpr double kDz = 1.0 / 128.0;
    static constexpr double kZmax = 40.0;

    explicit UnitDensity(double alpha) : alpha_(alpha), gaussian_(alpha == 2.0) {
        if (gaussian_) return;
        const int n = int(std::lround(kZmax / kDz));
        q_.resize(n + 1);
        dq_.resize(n + 1);
        const double L = -std::log(1e-16);
        const double Xi = std::pow(L, 1.0 / alpha);
        const auto breaks = fourier_breaks(Xi, kZmax, 4096, alpha < 2.0);
        std::vector<double> eta, wE;
        const auto& r = quad::legendre<kGL>();
        for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
            const double a = breaks[p], b = breaks[p + 1], c = 0.5 * (a + b), h = 0.5 * (b - a);
            for (unsigned i = 0; i < kGL; ++i) {
                const double e = c + h * r.x[i];
                eta.push_back(e);
                wE.push_back(h * r.w[i] * std::exp(-std::pow(e, alpha)) / kPi);
            }
        }
        for (int k = 0; k <= n; ++k) {
            const double z = k * kDz;
            double s0 = 0.0, s1 = 0.0;
            for (std::size_t i = 0; i < eta.size(); ++i) {
                const double ph = z * eta[i];
                s0 += wE[i] * std::cos(ph);
                s1 -= wE[i] * eta[i] * std::sin(ph);
            }
            q_[k] = s0;
            dq_[k] = s1;
        }
        Q1_.assign(n + 1, 0.0);
        Q2_.assign(n + 1, 0.0);
        for (int k = 0; k < n; ++k) {
            Q1_[k + 1] = Q1_[k] + segment_q1(k, 1.0);
            Q2_[k + 1] = Q2_[k] + segment_q2(k, 1.0);
        }
        series_.clear();
        if (alpha < 2.0)
            for (int k = 1; k <= 6; ++k) {
                const double c = (k % 2 ? 1.0 : -1.0) * std::tgamma(alpha * k + 1.0) / std::tgamma(k + 1.0) *
                                 std::sin(kPi * alpha * k / 2.0) / kPi;
                series_.push_back(c);
            }
    }

    double alpha() const { return alpha_; }

    double q(double z) const {
        z = std::abs(z);
        if (gaussian_) return std::exp(-0.25 * z * z) / (2.0 * std::sqrt(kPi));
        if (z >= kZmax) return tail_q(z);
        const int i = std::min(int(z / kDz), int(q_.size()) - 2);
        const double tau = (z - i * kDz) / kDz;
        const double t2 = tau * tau, t3 = t2 * tau;
        return (2 * t3 - 3 * t2 + 1) * q_[i] + (t3 - 2 * t2 + tau) * kDz * dq_[i] + (-2 * t3 + 3 * t2) * q_[i + 1] +
               (t3 - t2) * kDz * dq_[i + 1];
    }

    // ∫_0^z q, odd in z.
    double Q1(double z) const {
        const double a = std::abs(z);
        double v;
        if (gaussian_) {
            v = 0.5 * std::erf(0.5 * a);
        } else if (a >= kZmax) {
            v = Q1_.back();
            for (std::size_t k = 0; k < series_.size(); ++k) {
                const double p = alpha_ * (k + 1);
                v += series_[k] * (std::pow(kZmax, -p) - std::pow(a, -p)) / p;
            }
        } else {
            const int i = std::min(int(a / kDz), int(q_.size()) - 2);
            v = Q1_[i] + segment_q1(i, (a - i * kDz) / kDz);
        }
        return z < 0 ? -v : v;
    }

    // ∫_0^z u q(u) du, even in z.
    double Q2(double z) const {
        const double a = std::abs(z);
        if (gaussian_) return -std::expm1(-0.25 * a * a) / std::sqrt(kPi);
        if (a >= kZmax) {
            double v = Q2_.back();
            for (std::size_t k = 0; k < series_.size(); ++k) {
                const double p = alpha_ * (k + 1) - 1.0;
                v += series_[k] * (std::pow(kZmax, -p) - std::pow(a, -p)) / p;
            }
            return v;
        }
        const int i = std::min(int(a / kDz), int(q_.size()) - 2);
        return Q2_[i] + segment_q2(i, (a - i * kDz) / kDz);
    }

    // ∫_z^∞ q and ∫_z^∞ u q(u) du for z ≥ 0, without cancellation for the Gaussian.
    double upper_Q1(double z) const {
        if (gaussian_) return 0.5 * std::erfc(0.5 * z);
        return 0.5 - Q1(z);
    }
    double upper_Q2(double z) const {
        if (gaussian_) return std::exp(-0.25 * z * z) / std::sqrt(kPi);
        return Q2(1e300) - Q2(z);
    }

private:
    double tail_q(double z) const {
        // Horner in w = z^{-α}: Σ_k c_k w^{k+1} / z
        const double w = std::pow(z, -alpha_);
        double v = 0.0;
        for (std::size_t k = series_.size(); k-- > 0;) v = (v + series_[k]) * w;
        return std::max(v / z, 0.0);
    }
    double segment_q1(int i, double tau) const {
        const double t2 = tau * tau, t3 = t2 * tau, t4 = t3 * tau;
        return kDz * (q_[i] * (t4 / 2 - t3 + tau) + kDz * dq_[i] * (t4 / 4 - 2 * t3 / 3 + t2 / 2) +
                      q_[i + 1] * (-t4 / 2 + t3) + kDz * dq_[i + 1] * (t4 / 4 - t3 / 3));
    }
    double segment_q2(int i, double tau) const {
        if (tau <= 0.0) return 0.0;
        const double a = i * kDz, b = a + tau * kDz;
        return quad::panel<4>([&](double u) { return u * q(u); }, a, b);
    }

    double alpha_;
    bool gaussian_;
    std::vector<double> q_, dq_, Q1_, Q2_, series_;
};

inline std::shared_ptr<const UnitDensity> unit_density(double alpha) {
    static std::mutex mu;
    static std::map<double, std::shared_ptr<const UnitDensity>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(alpha);
    if (it != cache.end()) return it->second;
    auto d = std::make_shared<const UnitDensity>(alpha);
    cache.emplace(alpha, d);
    return d;
}

}  // namespace detail

class KernelModel {
public:
    static KernelModel brownian(double kappa, QuadratureSpec q = {}) {
        require(kappa > 0.0 && std::isfinite(kappa), "brownian viscosity must be positive");
        KernelModel m(KernelKind::Brownian, q);
        m.kappa_ = kappa;
        m.alpha_ = 2.0;
        m.cscale_ = kappa / 2.0;
        m.init_scaling();
        return m;
    }

    static KernelModel stable(double alpha, double kappa, QuadratureSpec q = {}) {
        require(kappa > 0.0 && std::isfinite(kappa), "stable viscosity must be positive");
        require(alpha > 0.0 && alpha <= 2.0, "stable index must lie in (0, 2]");
        if (alpha <= 1.0) fail(ErrorCode::DivergentResolvent, "stable index must exceed 1");
        KernelModel m(KernelKind::Stable, q);
        m.kappa_ = kappa;
        m.alpha_ = alpha;
        m.cscale_ = kappa;
        m.init_scaling();
        return m;
    }

    // Ψ sampled at increasing ξ ≥ 0; symmetric extension, linear interpolation,
    // power-law extrapolation from the last two samples.
    static KernelModel tabulated(std::vector<double> xi, std::vector<double> psi, QuadratureSpec q = {}) {
        require(xi.size() == psi.size() && xi.size() >= 2, "tabulated Ψ needs at least two (ξ, Ψ) pairs");
        for (std::size_t i = 0; i < xi.size(); ++i) {
            require(xi[i] >= 0.0 && std::isfinite(xi[i]), "tabulated ξ must be finite and nonnegative");
            require(psi[i] >= 0.0 && std::isfinite(psi[i]), "tabulated Ψ must be finite and nonnegative");
            if (i) require(xi[i] > xi[i - 1], "tabulated ξ must be strictly increasing");
        }
        KernelModel m(KernelKind::TabulatedPsi, q);
        const std::size_t n = xi.size();
        require(psi[n - 1] > 0.0 && psi[n - 2] > 0.0 && xi[n - 2] > 0.0, "tabulated Ψ tail must be positive");
        m.tail_a_ = std::log(psi[n - 1] / psi[n - 2]) / std::log(xi[n - 1] / xi[n - 2]);
        m.tail_c_ = psi[n - 1] / std::pow(xi[n - 1], m.tail_a_);
        require(m.tail_a_ > 0.0, "tabulated Ψ must grow at infinity (∫exp(-tΨ) finite)");
        m.xi_ = std::move(xi);
        m.psi_ = std::move(psi);
        m.alpha_ = m.tail_a_;
        return m;
    }

    KernelKind kind() const { return kind_; }
    double kappa() const { return kappa_; }
    // Stability index; for tabulated kernels the extrapolated tail exponent of Ψ.
    double alpha() const { return alpha_; }
    const QuadratureSpec& quadrature() const { return quad_; }
    bool scaling() const { return kind_ != KernelKind::TabulatedPsi; }
    const std::vector<double>& table_xi() const { return xi_; }
    const std::vector<double>& table_psi() const { return psi_; }

    double psi(double xi) const {
        const double a = std::abs(xi);
        if (kind_ != KernelKind::TabulatedPsi) return cscale_ * std::pow(a, alpha_);
        if (a >= xi_.back()) return tail_c_ * std::pow(a, tail_a_);
        if (a <= xi_.front()) return psi_.front();
        const auto it = std::upper_bound(xi_.begin(), xi_.end(), a);
        const std::size_t j = std::size_t(it - xi_.begin());
        const double w = (a - xi_[j - 1]) / (xi_[j] - xi_[j - 1]);
        return (1.0 - w) * psi_[j - 1] + w * psi_[j];
    }

    // Ψ(ξ) ~ c|ξ|^a as ξ → ∞.
    double tail_exponent() const { return kind_ == KernelKind::TabulatedPsi ? tail_a_ : alpha_; }

    // For scaling kernels p_t(x) = q(x/s)/s with s = (c t)^{1/α}.
    double scale(double t) const { return std::pow(cscale_ * t, 1.0 / alpha_); }

    // Ξ(t): exp(-tΨ(Ξ)) ≤ tol/10.
    double cutoff(double t) const {
        const double L = -std::log(quad_.tol / 10.0);
        if (quad_.cutoff_xi > 0.0) {
            if (std::exp(-t * psi(quad_.cutoff_xi)) > quad_.tol)
                fail(ErrorCode::QuadratureUnderresolved, "exp(-tΨ(Ξ)) exceeds tol at t=" + std::to_string(t));
            return quad_.cutoff_xi;
        }
        if (scaling()) return std::pow(L / (cscale_ * t), 1.0 / alpha_);
        double Xi = xi_.back();
        if (t * psi(Xi) >= L) {
            std::size_t j = xi_.size() - 1;
            while (j > 0 && t * psi_[j - 1] >= L) --j;
            return xi_[j];
        }
        while (t * psi(Xi) < L) {
            Xi *= 2.0;
            if (!std::isfinite(Xi)) fail(ErrorCode::QuadratureUnderresolved, "no finite cutoff Ξ");
        }
        return Xi;
    }

    // Direct Fourier inversion (1/π)∫_0^Ξ cos(xξ) e^{-tΨ(ξ)} dξ.
    double p_fourier(double t, double x) const {
        require(t > 0.0, "p_t requires t > 0");
        const double Xi = cutoff(t);
        const auto b = detail::fourier_breaks(Xi, x, quad_.nodes, needs_cusp());
        auto f = [&](double xi) { return std::cos(x * xi) * std::exp(-t * psi(xi)); };
        return quad::composite<detail::kGL>(f, b) / detail::kPi;
    }

    // p_t(x); interpolated unit density for scaling kernels, Fourier inversion otherwise.
    double density(double t, double x) const {
        if (!scaling()) return p_fourier(t, x);
        require(t > 0.0, "p_t requires t > 0");
        const double s = scale(t);
        return unit_->q(x / s) / s;
    }
    double density0(double t) const { return density(t, 0.0); }

    // Unit profile of a scaling kernel: p_t(x) = q(x/σ)/σ with σ = scale(t).
    double unit_q(double z) const { return unit_->q(z); }

    // ∫_0^z p_t(u) du (odd in z).
    double cdf0(double t, double z) const {
        if (scaling()) return unit_->Q1(z / scale(t));
        const double Xi = cutoff(t);
        const auto b = detail::fourier_breaks(Xi, z, quad_.nodes, true);
        auto f = [&](double xi) {
            const double s = xi * z;
            const double sinc = std::abs(s) < 1e-8 ? z : std::sin(s) / xi;
            return sinc * std::exp(-t * psi(xi));
        };
        return quad::composite<detail::kGL>(f, b) / detail::kPi;
    }

    // ∫_0^z u p_t(u) du (even in z).
    double moment0(double t, double z) const {
        if (scaling()) {
            const double s = scale(t);
            return s * unit_->Q2(z / s);
        }
        const double Xi = cutoff(t);
        const auto b = detail::fourier_breaks(Xi, z, quad_.nodes, true);
        auto f = [&](double xi) {
            const double s = xi * z;
            double v;
            if (std::abs(s) < 1e-4)
                v = z * z / 2.0 - xi * xi * z * z * z * z / 8.0;
            else
                v = (z * std::sin(s)) / xi + (std::cos(s) - 1.0) / (xi * xi);
            return v * std::exp(-t * psi(xi));
        };
        return quad::composite<detail::kGL>(f, b) / detail::kPi;
    }

    // ∫_z^∞ p_t and ∫_z^∞ u p_t(u) du for z ≥ 0.
    double upper_cdf0(double t, double z) const {
        if (scaling()) return unit_->upper_Q1(z / scale(t));
        return 0.5 - cdf0(t, z);
    }
    double upper_moment0(double t, double z) const {
        if (scaling()) {
            const double s = scale(t);
            return s * unit_->upper_Q2(z / s);
        }
        fail(ErrorCode::NotApplicable, "first-moment tail of a tabulated kernel");
    }

    // Grading exponent m for r = t v^m in ∫_0^t p_r(0) dr.
    double grading() const {
        const double a = tail_exponent();
        if (a <= 1.0) return 4.0;
        return std::min(a / (a - 1.0), 8.0);
    }

    // ∫_0^t p_r(0) dr; +∞ when the small-r singularity is not integrable.
    double int_p0(double t) const {
        if (tail_exponent() <= 1.0) return std::numeric_limits<double>::infinity();
        return quad::graded_origin<20>([&](double r) { return density0(r); }, t, grading(), scaling() ? 1 : 4);
    }

private:
    KernelModel(KernelKind k, QuadratureSpec q) : kind_(k), quad_(q) {
        require(q.nodes > 0 && q.tol > 0.0 && q.cutoff_xi >= 0.0, "invalid quadrature spec");
    }
    void init_scaling() { unit_ = detail::unit_density(alpha_); }
    bool needs_cusp() const { return !(kind_ == KernelKind::Brownian); }

    KernelKind kind_;
    QuadratureSpec quad_;
    double kappa_ = 0.0, alpha_ = 2.0, cscale_ = 1.0;
    double tail_a_ = 0.0, tail_c_ = 0.0;
    std::vector<double> xi_, psi_;
    std::shared_ptr<const detail::UnitDensity> unit_;
};

inline double psi_eval(const KernelModel& m, double xi) { return m.psi(xi); }

inline double p_eval(const KernelModel& m, double t, double x) { return m.p_fourier(t, x); }

struct ThetaEstimate {
    double value = 1.0;
    double t_argmax = 0.0;
    std::optional<std::string> warning;
};

// Log grid on [1e-4, 1e4], 33 points per decade.
inline std::vector<double> default_theta_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 8 * 33; ++i) g.push_back(std::pow(10.0, -4.0 + i / 33.0));
    return g;
}

// Grid maximum of p_{t/2}(0)/p_t(0): a lower estimate of Θ.
inline ThetaEstimate theta_estimate(const KernelModel& m, const std::vector<double>& t_grid = default_theta_grid()) {
    require(!t_grid.empty(), "theta_estimate needs a nonempty t grid");
    ThetaEstimate r;
    r.value = 0.0;
    for (double t : t_grid) {
        require(t > 0.0, "theta_estimate grid must be positive");
        const double v = m.p_fourier(t / 2.0, 0.0) / m.p_fourier(t, 0.0);
        if (v > r.value) {
            r.value = v;
            r.t_argmax = t;
        }
    }
    if (m.kind() == KernelKind::TabulatedPsi)
        r.warning = "finite Ψ table: Θ is a grid maximum and cannot be certified finite";
    return r;
}

// Υ(β) = (1/2π)∫ dξ/(β+2Ψ(ξ)).
inline double upsilon_eval(const KernelModel& m, double beta) {
    require(beta > 0.0, "upsilon requires beta > 0");
    const double a = m.tail_exponent();
    if (a <= 1.0) fail(ErrorCode::DivergentResolvent, "∫dξ/(β+2Ψ) diverges for tail exponent " + std::to_string(a));
    auto f = [&](double xi) { return 1.0 / (beta + 2.0 * m.psi(xi)); };
    // crossover scale where 2Ψ ≈ β
    double xb;
    if (m.scaling())
        xb = std::pow(beta / (2.0 * m.psi(1.0)), 1.0 / a);
    else {
        xb = m.table_xi().back();
        while (xb > 1e-300 && 2.0 * m.psi(xb) > beta) xb *= 0.5;
        while (2.0 * m.psi(xb) < beta && std::isfinite(xb)) xb *= 2.0;
    }
    double X1 = 64.0 * xb;
    if (!m.scaling()) X1 = std::max(X1, m.table_xi().back());
    std::vector<double> b{0.0};
    for (int j = 60; j >= -6; --j) b.push_back(std::ldexp(X1, -j - 6));
    if (!m.scaling()) {
        for (double x : m.table_xi())
            if (x < X1) b.push_back(x);
        std::sort(b.begin(), b.end());
        b.erase(std::unique(b.begin(), b.end()), b.end());
    }
    double head = quad::composite<20>(f, b);
    // tail beyond X1 where Ψ = cξ^a exactly; ξ = X1 w^{-k}, k = 1/(a-1) makes the integrand smooth
    const double k = 1.0 / (a - 1.0);
    const double cX = 2.0 * m.psi(X1);
    auto g = [&](double w) { return k * X1 / (beta * std::pow(w, k + 1.0) + cX); };
    std::vector<double> bw{0.0};
    for (int j = 40; j >= 0; --j) bw.push_back(std::ldexp(1.0, -j));
    const double tail = quad::composite<20>(g, bw);
    return (head + tail) / detail::kPi;
}

// |Υ(β) − ½∫_0^∞ e^{-βt/2} p_t(0) dt| with p_t(0) from direct Fourier inversion.
inline double resolvent_identity_check(const KernelModel& m, double beta) {
    require(beta > 0.0, "resolvent check requires beta > 0");
    const double T1 = 2.0 / beta;
    auto f = [&](double t) { return std::exp(-0.5 * beta * t) * m.p_fourier(t, 0.0); };
    double s = quad::graded_origin<20>(f, T1, m.grading(), 4);
    std::vector<double> b;
    for (int i = 0; i <= 40; ++i) b.push_back(T1 + i * (2.0 / beta));
    s += quad::composite<20>(f, b);
    return std::abs(upsilon_eval(m, beta) - 0.5 * s);
}

namespace detail {

template <class F>
double solve_increasing(F f, double lo, double hi) {
    auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-13 * std::max(std::abs(a), std::abs(b)); };
    std::uintmax_t it = 200;
    auto r = boost::math::tools::toms748_solve(f, lo, hi, tol, it);
    return 0.5 * (r.first + r.second);
}

}  // namespace detail

// γ(k) = inf{β > 0 : Υ(2β/k) < 1/(4k Lip²)}.
inline double gamma_k(const KernelModel& m, double k, double lip) {
    require(k >= 2.0, "gamma_k requires k >= 2");
    require(lip > 0.0, "gamma_k requires Lip > 0");
    const double thr = 1.0 / (4.0 * k * lip * lip);
    auto h = [&](double beta) { return thr - upsilon_eval(m, 2.0 * beta / k); };
    double lo = 1.0, hi = 1.0;
    while (h(hi) <= 0.0) {
        hi *= 2.0;
        if (hi > 1e300) fail(ErrorCode::NoRoot, "Υ stays above 1/(4k Lip²)");
    }
    while (h(lo) > 0.0) {
        lo *= 0.5;
        if (lo < 1e-300) return 0.0;
    }
    if (hi == 1.0) hi = 2.0 * lo;
    if (lo == 1.0) lo = 0.5 * hi;
    return detail::solve_increasing(h, lo, hi);
}

// 𝔤(a) = inf{t > 0 : ∫_0^t p_r(0) dr ≥ a}; +∞ if the integral saturates below a.
inline double g_eval(const KernelModel& m, double a) {
    require(a > 0.0, "g_eval requires a > 0");
    if (!std::isfinite(m.int_p0(1.0))) return 0.0;
    auto h = [&](double t) { return m.int_p0(t) - a; };
    double lo = 1.0, hi = 1.0;
    while (h(hi) < 0.0) {
        hi *= 2.0;
        if (hi > 1e12) return std::numeric_limits<double>::infinity();
    }
    while (h(lo) >= 0.0) {
        lo *= 0.5;
        if (lo < 1e-300) return 0.0;
    }
    if (hi == 1.0) hi = 2.0 * lo;
    if (lo == 1.0) lo = 0.5 * hi;
    return detail::solve_increasing(h, lo, hi);
}

// 𝔗ₖ = 𝔤((32kΘ[1∨Lip²])^{-1}).
inline double frak_T(const KernelModel& m, double k, double lip, double theta) {
    return g_eval(m, 1.0 / (32.0 * k * theta * std::max(1.0, lip * lip)));
}

struct KernelFunctionals {
    KernelModel model;
    double lip = 1.0;
    double theta = 1.0;
    std::optional<std::string> theta_warning;

    double upsilon(double beta) const { return upsilon_eval(model, beta); }
    double gamma(double k) const { return gamma_k(model, k, lip); }
    double g(double a) const { return g_eval(model, a); }
    double frak_T(double k) const { return levyheat::frak_T(model, k, lip, theta); }
};

inline KernelFunctionals functionals(const KernelModel& m, double lip) {
    const auto th = theta_estimate(m);
    return KernelFunctionals{m, lip, th.value, th.warning};
}

}  // namespace levyheat
