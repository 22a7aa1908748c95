#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "levyheat/levy_kernel.hpp"

using namespace levyheat;

namespace {

constexpr double kPi = std::numbers::pi;

// Independent oracles.
double gauss_density(double var, double x) { return std::exp(-x * x / (2 * var)) / std::sqrt(2 * kPi * var); }
double cauchy_density(double t, double x) { return t / (kPi * (t * t + x * x)); }

KernelModel cauchy_tabulated() {
    std::vector<double> xi, psi;
    for (int i = 0; i <= 400; ++i) {
        const double v = 0.05 * i;
        xi.push_back(v);
        psi.push_back(v);
    }
    return KernelModel::tabulated(xi, psi);
}

}  // namespace

TEST(Psi, ClosedForms) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_DOUBLE_EQ(psi_eval(b, 2.0), 2.0);
    EXPECT_DOUBLE_EQ(psi_eval(b, -2.0), 2.0);
    const auto s = KernelModel::stable(1.5, 1.0);
    EXPECT_DOUBLE_EQ(psi_eval(s, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(psi_eval(s, -3.0), psi_eval(s, 3.0));
}

TEST(Psi, StableIndexAtMostOneRejected) {
    try {
        (void)KernelModel::stable(1.0, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DivergentResolvent);
    }
}

TEST(Density, BrownianGoldenValues) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_NEAR(p_eval(b, 1.0, 0.0), 0.3989422804, 1e-10);
    EXPECT_NEAR(p_eval(b, 1.0, 1.0), 0.2419707245, 1e-10);
    for (double t : {1e-3, 0.1, 2.0, 50.0})
        for (double x : {0.0, 0.3, 1.7, 4.0}) EXPECT_NEAR(p_eval(b, t, x), gauss_density(t, x), 1e-10 / std::sqrt(t));
}

TEST(Density, CauchyThroughTable) {
    const auto c = cauchy_tabulated();
    EXPECT_NEAR(p_eval(c, 1.0, 0.0), 0.3183098862, 1e-9);
    EXPECT_NEAR(p_eval(c, 1.0, 2.0), cauchy_density(1.0, 2.0), 1e-9);
}

TEST(Density, ViscosityScaling) {
    const auto b = KernelModel::brownian(2.5);
    EXPECT_NEAR(p_eval(b, 0.4, 0.7), gauss_density(2.5 * 0.4, 0.7), 1e-11);
}

TEST(Density, TableMatchesFourier) {
    for (double alpha : {1.2, 1.5, 1.8, 2.0}) {
        const auto m = KernelModel::stable(alpha, 1.0);
        for (double t : {1e-3, 0.05, 1.0, 20.0})
            for (double x : {0.0, 0.01, 0.2, 1.0, 3.0, 10.0}) {
                const double ref = p_eval(m, t, x);
                EXPECT_NEAR(m.density(t, x), ref, 1e-10 * m.density0(t)) << alpha << " " << t << " " << x;
            }
    }
}

TEST(Density, TableSeriesContinuity) {
    for (double alpha : {1.2, 1.5, 1.8}) {
        const auto m = KernelModel::stable(alpha, 1.0);
        const double z = detail::UnitDensity::kZmax;
        EXPECT_NEAR(m.density(1.0, z - 1e-9), m.density(1.0, z + 1e-9), 1e-9 * m.density(1.0, z));
        EXPECT_NEAR(m.density(1.0, 45.0), p_eval(m, 1.0, 45.0), 1e-6 * m.density(1.0, 45.0));
    }
}

TEST(Density, CdfAndMoment) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_NEAR(b.cdf0(1.0, 1.0), 0.5 * std::erf(1.0 / std::sqrt(2.0)), 1e-12);
    // ∫_0^z u φ(u) du = (1 - e^{-z²/2})/√(2π)
    EXPECT_NEAR(b.moment0(1.0, 1.3), (1 - std::exp(-1.3 * 1.3 / 2)) / std::sqrt(2 * kPi), 1e-12);
    const auto s = KernelModel::stable(1.5, 1.0);
    EXPECT_NEAR(s.cdf0(1.0, 1e4), 0.5, 1e-6);
    const auto c = cauchy_tabulated();
    EXPECT_NEAR(c.cdf0(1.0, 1.0), std::atan(1.0) / kPi, 1e-8);
}

TEST(Density, PropertiesOnGrid) {
    for (const auto& m : {KernelModel::brownian(1.0), KernelModel::stable(1.5, 1.0), KernelModel::stable(1.2, 0.5)}) {
        double prev0 = INFINITY;
        for (double t : {1e-3, 1e-2, 0.1, 1.0, 10.0}) {
            const double p0 = p_eval(m, t, 0.0);
            EXPECT_LE(p0, prev0);
            prev0 = p0;
            for (double x : {0.05, 0.5, 2.0, 8.0}) EXPECT_LE(p_eval(m, t, x), p0 * (1 + 1e-12));
            // unit mass: 2∫_0^∞ p_t
            EXPECT_NEAR(2 * m.cdf0(t, 1e9), 1.0, 1e-6);
        }
    }
}

TEST(Density, ChapmanKolmogorovAndL2) {
    for (const auto& m : {KernelModel::brownian(1.0), KernelModel::stable(1.5, 1.0)}) {
        const double s = 0.3, t = 0.8;
        for (double x : {0.0, 0.9}) {
            auto f = [&](double y) { return m.density(s, y) * m.density(t - s, x - y); };
            std::vector<double> br;
            quad::add_geometric_breaks(br, 0.0, 0.1, 4000.0);
            quad::add_geometric_breaks(br, x, 0.1, 4000.0);
            const double ck = quad::composite<20>(f, quad::refine_breaks(br, 0.05 * 1e3));
            EXPECT_NEAR(ck, p_eval(m, t, x), 2e-6 * p_eval(m, t, 0.0));
        }
        auto g = [&](double y) { return m.density(t, y) * m.density(t, y); };
        std::vector<double> br;
        quad::add_geometric_breaks(br, 0.0, 0.1, 4000.0);
        EXPECT_NEAR(quad::composite<20>(g, quad::refine_breaks(br, 50.0)), p_eval(m, 2 * t, 0.0), 1e-6);
    }
}

TEST(Theta, ClosedForms) {
    EXPECT_NEAR(theta_estimate(KernelModel::brownian(1.0)).value, std::sqrt(2.0), 1e-6);
    EXPECT_NEAR(theta_estimate(KernelModel::stable(1.5, 1.0)).value, std::pow(2.0, 2.0 / 3.0), 1e-4);
    EXPECT_NEAR(theta_estimate(KernelModel::stable(2.0, 1.0)).value, std::sqrt(2.0), 1e-6);
    EXPECT_FALSE(theta_estimate(KernelModel::brownian(1.0)).warning.has_value());
}

TEST(Theta, TabulatedCarriesWarning) {
    const auto r = theta_estimate(cauchy_tabulated());
    EXPECT_TRUE(r.warning.has_value());
    EXPECT_GE(r.value, 1.0);
}

TEST(Upsilon, BrownianClosedForm) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_NEAR(upsilon_eval(b, 4.0), 0.25, 1e-10);
    EXPECT_NEAR(upsilon_eval(b, 1.0), 0.5, 1e-10);
    for (double beta : {0.25, 16.0, 1e-3, 1e3}) EXPECT_NEAR(upsilon_eval(b, beta), 0.5 / std::sqrt(beta), 1e-10);
}

TEST(Upsilon, StableScaling) {
    const auto s = KernelModel::stable(1.5, 1.0);
    const double c1 = upsilon_eval(s, 1.0);
    for (double beta : {10.0, 100.0}) EXPECT_NEAR(upsilon_eval(s, beta) * std::cbrt(beta) / c1, 1.0, 1e-4);
    // (1/π) β^{1/α-1} (2κ)^{-1/α} (π/α)/sin(π/α)
    const double a = 1.5;
    EXPECT_NEAR(c1, std::pow(2.0, -1 / a) / (a * std::sin(kPi / a)), 1e-10);
}

TEST(Upsilon, StrictlyDecreasing) {
    const auto s = KernelModel::stable(1.2, 1.0);
    double prev = INFINITY;
    for (double beta = 0.01; beta < 1e3; beta *= 3) {
        const double v = upsilon_eval(s, beta);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(Upsilon, CauchyDiverges) {
    try {
        (void)upsilon_eval(cauchy_tabulated(), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DivergentResolvent);
    }
}

TEST(Resolvent, Identity) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_LT(resolvent_identity_check(b, 1.0), 1e-6);
    EXPECT_LT(resolvent_identity_check(b, 4.0), 1e-6);
    EXPECT_LT(resolvent_identity_check(KernelModel::stable(1.5, 1.0), 1.0), 1e-4);
}

TEST(Gamma, BrownianClosedForm) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_NEAR(gamma_k(b, 2, 1.0), 16.0, 1e-6 * 16);
    EXPECT_NEAR(gamma_k(b, 3, 1.0), 54.0, 1e-6 * 54);
    for (double k : {2.0, 3.0, 4.0})
        for (double lip : {0.5, 1.0, 2.0}) {
            const double ref = 2 * k * k * k * std::pow(lip, 4);
            EXPECT_NEAR(gamma_k(b, k, lip), ref, 1e-6 * ref);
        }
}

TEST(Gamma, StableFourthPowerLaw) {
    const auto s = KernelModel::stable(1.5, 1.0);
    const double c2 = gamma_k(s, 2, 1.0) / 16.0;
    for (double k : {4.0, 8.0}) EXPECT_NEAR(gamma_k(s, k, 1.0) / std::pow(k, 4) / c2, 1.0, 1e-3);
}

TEST(Gamma, MonotoneInKAndLip) {
    const auto s = KernelModel::stable(1.8, 0.7);
    EXPECT_LE(gamma_k(s, 2, 1.0), gamma_k(s, 2.5, 1.0));
    EXPECT_LE(gamma_k(s, 2.5, 1.0), gamma_k(s, 4, 1.0));
    EXPECT_LE(gamma_k(s, 3, 0.5), gamma_k(s, 3, 0.6));
}

TEST(GFunction, BrownianClosedForm) {
    const auto b = KernelModel::brownian(1.0);
    EXPECT_NEAR(g_eval(b, 1.0), kPi / 2, 1e-8 * kPi / 2);
    EXPECT_NEAR(g_eval(b, 0.01), kPi / 2 * 1e-4, 1e-8 * kPi / 2 * 1e-4);
    EXPECT_NEAR(b.int_p0(2.0), std::sqrt(4.0 / kPi), 1e-12);
}

TEST(GFunction, MonotoneAndHorizonsShrink) {
    const auto s = KernelModel::stable(1.5, 1.0);
    EXPECT_LT(g_eval(s, 0.1), g_eval(s, 0.2));
    const double theta = theta_estimate(s).value;
    for (double lip : {0.5, 1.0, 3.0})
        for (int k = 2; k < 6; ++k) EXPECT_LT(frak_T(s, k + 1, lip, theta), frak_T(s, k, lip, theta));
}

TEST(GFunction, FrakTBrownian) {
    const auto b = KernelModel::brownian(1.0);
    // 𝔗₂ = 𝔤(1/(64√2)) = (π/2)(64√2)^{-2}
    const double a = 1 / (64 * std::sqrt(2.0));
    EXPECT_NEAR(frak_T(b, 2, 1.0, std::sqrt(2.0)), kPi / 2 * a * a, 1e-12);
}

TEST(Quadrature, UnderresolvedCutoff) {
    QuadratureSpec q;
    q.cutoff_xi = 6.0;
    const auto b = KernelModel::brownian(1.0, q);
    EXPECT_NO_THROW((void)p_eval(b, 2.0, 0.0));
    try {
        (void)p_eval(b, 0.1, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::QuadratureUnderresolved);
    }
}
