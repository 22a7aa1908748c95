#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

#include "json.hpp"
#include "levyheat/error.hpp"
#include "levyheat/levy_kernel.hpp"

namespace levyheat {

struct Atom {
    double y = 0.0;
    double m = 0.0;
};

// Nonnegative function sampled on an increasing grid, linear between samples, zero outside.
struct DensityPart {
    std::vector<double> grid;
    std::vector<double> values;
};

class FiniteMeasure {
public:
    FiniteMeasure(std::vector<Atom> atoms, std::optional<DensityPart> density = std::nullopt,
                  std::optional<double> support_radius = std::nullopt, std::optional<double> declared_mass = std::nullopt)
        : atoms_(std::move(atoms)), density_(std::move(density)) {
        double mass = 0.0, reach = 0.0;
        for (const auto& a : atoms_) {
            require(std::isfinite(a.y), "atom location must be finite");
            require(a.m > 0.0 && std::isfinite(a.m), "atom mass must be positive and finite");
            mass += a.m;
            reach = std::max(reach, std::abs(a.y));
        }
        if (density_) {
            const auto& g = density_->grid;
            const auto& v = density_->values;
            require(g.size() == v.size() && g.size() >= 2, "density needs matching grid and values (>= 2 samples)");
            for (std::size_t i = 0; i < g.size(); ++i) {
                require(std::isfinite(g[i]) && std::isfinite(v[i]), "density samples must be finite");
                require(v[i] >= 0.0, "density must be nonnegative");
                if (i) require(g[i] > g[i - 1], "density grid must be strictly increasing");
            }
            for (std::size_t i = 0; i + 1 < g.size(); ++i) mass += 0.5 * (v[i] + v[i + 1]) * (g[i + 1] - g[i]);
            reach = std::max({reach, std::abs(g.front()), std::abs(g.back())});
        }
        require(mass > 0.0 && std::isfinite(mass), "total mass must be positive and finite");
        total_mass_ = mass;
        if (declared_mass)
            require(std::abs(*declared_mass - mass) <= 1e-10 * mass, "declared total mass disagrees with atoms + density");
        if (support_radius) {
            const double K = *support_radius;
            require(K >= 0.0, "support radius must be nonnegative");
            for (const auto& a : atoms_) require(std::abs(a.y) <= K, "atom outside declared support radius");
            if (density_)
                for (std::size_t i = 0; i < density_->grid.size(); ++i)
                    require(std::abs(density_->grid[i]) <= K || density_->values[i] == 0.0,
                            "density does not vanish outside declared support radius");
            support_radius_ = K;
        } else {
            support_radius_ = reach;
        }
    }

    static FiniteMeasure delta(double mass = 1.0, double at = 0.0) { return FiniteMeasure({Atom{at, mass}}); }

    const std::vector<Atom>& atoms() const { return atoms_; }
    const std::optional<DensityPart>& density() const { return density_; }
    double total_mass() const { return total_mass_; }
    double support_radius() const { return support_radius_; }

    FiniteMeasure scaled(double c) const {
        require(c > 0.0, "scale factor must be positive");
        auto atoms = atoms_;
        for (auto& a : atoms) a.m *= c;
        auto dens = density_;
        if (dens)
            for (auto& v : dens->values) v *= c;
        return FiniteMeasure(std::move(atoms), std::move(dens), support_radius_);
    }

private:
    std::vector<Atom> atoms_;
    std::optional<DensityPart> density_;
    double total_mass_ = 0.0;
    double support_radius_ = 0.0;
};

// Σ m_i p_t(x − y_i).
inline double heat_convolve_atoms(const KernelModel& k, const FiniteMeasure& u0, double t, double x) {
    double s = 0.0;
    for (const auto& a : u0.atoms()) s += a.m * k.density(t, x - a.y);
    return s;
}

// ∫ p_t(x − y) ρ(y) dy, exact for the piecewise-linear ρ given the kernel antiderivatives.
inline double heat_convolve_density(const KernelModel& k, const FiniteMeasure& u0, double t, double x) {
    if (!u0.density()) return 0.0;
    const auto& g = u0.density()->grid;
    const auto& v = u0.density()->values;
    // ∫_{zb}^{za} p and ∫_{zb}^{za} u p(u) du, through upper tails when both ends share a sign
    auto pieces = [&](double zb, double za, double& m0, double& m1) {
        if (k.scaling() && zb >= 0.0) {
            m0 = k.upper_cdf0(t, zb) - k.upper_cdf0(t, za);
            m1 = k.upper_moment0(t, zb) - k.upper_moment0(t, za);
        } else if (k.scaling() && za <= 0.0) {
            m0 = k.upper_cdf0(t, -za) - k.upper_cdf0(t, -zb);
            m1 = -(k.upper_moment0(t, -za) - k.upper_moment0(t, -zb));
        } else {
            m0 = k.cdf0(t, za) - k.cdf0(t, zb);
            m1 = k.moment0(t, za) - k.moment0(t, zb);
        }
    };
    double s = 0.0;
    if (k.scaling()) {
        // H0(z) = ∫_{−∞}^z p − [z ≥ 0], M1(z) = ∫_{−∞}^z u p(u) du, from upper tails at each node once
        auto H0 = [&](double z) { return z >= 0.0 ? -k.upper_cdf0(t, z) : k.upper_cdf0(t, -z); };
        auto M1 = [&](double z) { return -k.upper_moment0(t, std::abs(z)); };
        std::size_t cached = g.size();
        double h0c = 0.0, m1c = 0.0;
        for (std::size_t i = 0; i + 1 < g.size(); ++i) {
            if (v[i] == 0.0 && v[i + 1] == 0.0) continue;
            const double za = x - g[i], zb = x - g[i + 1];
            const double h0a = cached == i ? h0c : H0(za), m1a = cached == i ? m1c : M1(za);
            h0c = H0(zb);
            m1c = M1(zb);
            cached = i + 1;
            const double m0 = h0a - h0c + (za >= 0.0 && zb < 0.0 ? 1.0 : 0.0);
            const double slope = (v[i + 1] - v[i]) / (g[i + 1] - g[i]);
            s += (v[i] + slope * (x - g[i])) * m0 - slope * (m1a - m1c);
        }
        return std::max(s, 0.0);
    }
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        const double slope = (v[i + 1] - v[i]) / (g[i + 1] - g[i]);
        if (v[i] == 0.0 && v[i + 1] == 0.0) continue;
        double m0, m1;
        pieces(x - g[i + 1], x - g[i], m0, m1);
        // ρ(x − z) = c0 − slope·z on this panel
        const double c0 = v[i] + slope * (x - g[i]);
        s += c0 * m0 - slope * m1;
    }
    return std::max(s, 0.0);
}

// (p_t * u0)(x).
inline double heat_convolve(const KernelModel& k, const FiniteMeasure& u0, double t, double x) {
    require(t > 0.0, "heat_convolve requires t > 0");
    return heat_convolve_atoms(k, u0, t, x) + heat_convolve_density(k, u0, t, x);
}

// Mass of p_t * u0 outside [−L, L].
inline double mass_outside(const KernelModel& k, const FiniteMeasure& u0, double t, double L) {
    auto out = [&](double y) { return std::max(0.0, 1.0 - k.cdf0(t, L - y) - k.cdf0(t, L + y)); };
    double s = 0.0;
    for (const auto& a : u0.atoms()) s += a.m * out(a.y);
    if (u0.density()) {
        const auto& g = u0.density()->grid;
        const auto& v = u0.density()->values;
        for (std::size_t i = 0; i + 1 < g.size(); ++i)
            s += quad::panel<4>(
                [&](double y) {
                    const double w = (y - g[i]) / (g[i + 1] - g[i]);
                    return ((1 - w) * v[i] + w * v[i + 1]) * out(y);
                },
                g[i], g[i + 1]);
    }
    return s;
}

// û0(ξ) = ∫ e^{iξy} u0(dy).
inline std::complex<double> fourier_u0(const FiniteMeasure& u0, double xi) {
    using C = std::complex<double>;
    C s = 0.0;
    for (const auto& a : u0.atoms()) s += a.m * std::exp(C(0.0, xi * a.y));
    if (!u0.density()) return s;
    const auto& g = u0.density()->grid;
    const auto& v = u0.density()->values;
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        const double a = g[i], b = g[i + 1], h = b - a;
        const double slope = (v[i + 1] - v[i]) / h;
        if (std::abs(xi * h) < 1e-3) {
            s += quad::panel<8>([&](double y) { return (v[i] + slope * (y - a)) * std::cos(xi * y); }, a, b);
            s += C(0.0, quad::panel<8>([&](double y) { return (v[i] + slope * (y - a)) * std::sin(xi * y); }, a, b));
            continue;
        }
        const C Ea = std::exp(C(0.0, xi * a)), Eb = std::exp(C(0.0, xi * b)), ix = C(0.0, xi);
        const C I0 = (Eb - Ea) / ix;
        const C I1 = h * Eb / ix - (Eb - Ea) / (ix * ix);
        s += v[i] * I0 + slope * I1;
    }
    return s;
}

// a·δ0 plus a unit-mass centred Gaussian density (standard deviation 1/2), whose
// transform e^{-ξ²/8} is positive and below 1e-21 for |ξ| ≥ 20.
inline FiniteMeasure make_positive_definite_example(double a) {
    require(a > 0.0, "atom mass must be positive");
    constexpr double sd = 0.5, R = 3.0, h = 0.01;
    const int n = int(std::lround(2 * R / h));
    DensityPart d;
    for (int i = 0; i <= n; ++i) {
        const double y = -R + i * h;
        d.grid.push_back(y);
        d.values.push_back((i == 0 || i == n) ? 0.0 : std::exp(-y * y / (2 * sd * sd)));
    }
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += 0.5 * (d.values[i] + d.values[i + 1]) * h;
    for (auto& v : d.values) v /= m;
    return FiniteMeasure({Atom{0.0, a}}, std::move(d), R);
}

inline nlohmann::json measure_to_json(const FiniteMeasure& u0) {
    nlohmann::json j;
    j["atoms"] = nlohmann::json::array();
    for (const auto& a : u0.atoms()) j["atoms"].push_back({a.y, a.m});
    if (u0.density()) j["density"] = {{"grid", u0.density()->grid}, {"values", u0.density()->values}};
    if (std::isfinite(u0.support_radius()))
        j["support_radius"] = u0.support_radius();
    else
        j["support_radius"] = "inf";
    return j;
}

inline FiniteMeasure measure_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::ConfigInvalid, "measure must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "atoms" && it.key() != "density" && it.key() != "support_radius" && it.key() != "total_mass")
            fail(ErrorCode::ConfigInvalid, "unknown measure field '" + it.key() + "'");
    try {
        std::vector<Atom> atoms;
        if (j.contains("atoms"))
            for (const auto& a : j.at("atoms")) {
                if (!a.is_array() || a.size() != 2) fail(ErrorCode::ConfigInvalid, "atoms entries must be [y, m]");
                atoms.push_back(Atom{a[0].get<double>(), a[1].get<double>()});
            }
        std::optional<DensityPart> dens;
        if (j.contains("density") && !j.at("density").is_null()) {
            DensityPart d;
            d.grid = j.at("density").at("grid").get<std::vector<double>>();
            d.values = j.at("density").at("values").get<std::vector<double>>();
            dens = std::move(d);
        }
        std::optional<double> K;
        if (j.contains("support_radius")) {
            const auto& k = j.at("support_radius");
            if (k.is_string()) {
                if (k.get<std::string>() != "inf") fail(ErrorCode::ConfigInvalid, "support_radius must be a number or \"inf\"");
                K = std::numeric_limits<double>::infinity();
            } else {
                K = k.get<double>();
            }
        }
        std::optional<double> declared;
        if (j.contains("total_mass")) declared = j.at("total_mass").get<double>();
        return FiniteMeasure(std::move(atoms), std::move(dens), K, declared);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("measure: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::ConfigInvalid, e.what());
        throw;
    }
}

}  // namespace levyheat
