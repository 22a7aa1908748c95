#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "levyheat/measure.hpp"

using namespace levyheat;

namespace {

constexpr double kPi = std::numbers::pi;

FiniteMeasure mixed_measure() {
    DensityPart d;
    for (int i = 0; i <= 80; ++i) {
        const double y = -1.0 + 0.025 * i;
        d.grid.push_back(y);
        d.values.push_back(0.3 * (1 - y * y));
    }
    return FiniteMeasure({Atom{-0.5, 0.7}, Atom{0.25, 1.1}}, d, 1.0);
}

}  // namespace

TEST(Measure, Invariants) {
    const auto u = mixed_measure();
    // trapezoid of 0.3(1-y²) on [-1,1] at h = 0.025: 0.4 - 0.3·h²·2/6... computed independently
    double dens = 0.0;
    for (int i = 0; i < 80; ++i) {
        const double a = -1 + 0.025 * i, b = a + 0.025;
        dens += 0.5 * 0.025 * (0.3 * (1 - a * a) + 0.3 * (1 - b * b));
    }
    EXPECT_NEAR(u.total_mass(), 1.8 + dens, 1e-14);
    EXPECT_DOUBLE_EQ(u.support_radius(), 1.0);
    EXPECT_THROW(FiniteMeasure({Atom{2.0, 1.0}}, std::nullopt, 1.0), Error);
    EXPECT_THROW(FiniteMeasure({Atom{0.0, -1.0}}), Error);
    EXPECT_THROW(FiniteMeasure({Atom{0.0, 1.0}}, std::nullopt, std::nullopt, 1.5), Error);
}

TEST(Measure, DeltaGoldenValues) {
    const auto b = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    EXPECT_NEAR(heat_convolve(b, d, 1.0, 0.0), 0.3989422804, 1e-10);
    const auto d2 = FiniteMeasure::delta(2.0);
    for (double t : {0.01, 0.5, 3.0})
        for (double x : {0.0, 0.4, 2.5}) EXPECT_DOUBLE_EQ(heat_convolve(b, d2, t, x), 2 * heat_convolve(b, d, t, x));
}

TEST(Measure, DensityPartAgainstDirectQuadrature) {
    const auto u = mixed_measure();
    for (const auto& k : {KernelModel::brownian(1.0), KernelModel::stable(1.5, 1.0)})
        for (double t : {0.002, 1.0})
            for (double x : {-1.3, 0.6, 4.0}) {
                const auto& g = u.density()->grid;
                const auto& v = u.density()->values;
                double ref = 0.0;
                for (std::size_t i = 0; i + 1 < g.size(); ++i)
                    for (int j = 0; j < 4; ++j) {
                        const double a = g[i] + (g[i + 1] - g[i]) * j / 4, c = a + (g[i + 1] - g[i]) / 4;
                        ref += quad::panel<12>(
                            [&](double y) {
                                const double w = (y - g[i]) / (g[i + 1] - g[i]);
                                return p_eval(k, t, x - y) * ((1 - w) * v[i] + w * v[i + 1]);
                            },
                            a, c);
                    }
                EXPECT_NEAR(heat_convolve_density(k, u, t, x), ref, 1e-9 * (1 + ref)) << t << " " << x;
            }
}

TEST(Measure, BoundedByPeakTimesMass) {
    const auto u = mixed_measure();
    for (const auto& k : {KernelModel::brownian(0.5), KernelModel::stable(1.2, 1.0)})
        for (double t : {1e-3, 0.1, 2.0})
            for (double x = -3; x <= 3; x += 0.37)
                EXPECT_LE(heat_convolve(k, u, t, x), k.density0(t) * u.total_mass() * (1 + 1e-12));
}

TEST(Measure, MassConservation) {
    const auto u = mixed_measure();
    for (const auto& k : {KernelModel::brownian(1.0), KernelModel::stable(1.5, 1.0)})
        for (double t : {0.01, 0.3}) {
            const double L = 30.0;
            std::vector<double> br;
            quad::add_geometric_breaks(br, -0.5, std::sqrt(t) / 4, L);
            quad::add_geometric_breaks(br, 0.25, std::sqrt(t) / 4, L);
            for (double y = -1; y <= 1; y += 0.025) br.push_back(y);
            for (auto& b : br) b = std::clamp(b, -L, L);
            const auto bb = quad::refine_breaks(br, 0.05);
            const double inside = quad::composite<8>([&](double x) { return heat_convolve(k, u, t, x); }, bb);
            EXPECT_NEAR(inside + mass_outside(k, u, t, L), u.total_mass(), 1e-8);
        }
}

TEST(Measure, SemigroupThroughSmoothedDensity) {
    const auto k = KernelModel::brownian(1.0);
    const auto u = mixed_measure();
    const double t = 0.2, s = 0.3;
    DensityPart d;
    for (int i = 0; i <= 6000; ++i) {
        const double y = -7.5 + 0.0025 * i;
        d.grid.push_back(y);
        d.values.push_back(heat_convolve(k, u, t, y));
    }
    const FiniteMeasure smoothed({}, d);
    // linear interpolation of the smoothed density costs O(h²)
    for (double x : {0.0, 0.8, -2.0}) {
        const double ref = heat_convolve(k, u, t + s, x);
        EXPECT_NEAR(heat_convolve(k, smoothed, s, x), ref, 1e-5 * ref);
    }
}

TEST(Measure, BrownianTailEnvelope) {
    const auto k = KernelModel::brownian(1.0);
    const auto u = mixed_measure();
    const double K = u.support_radius();
    for (double t : {0.1, 0.5, 2.0}) {
        const double c = u.total_mass() * std::exp(K * K / (2 * t)) / std::sqrt(2 * kPi * t);
        for (double x = 2 * K; x <= 2 * K + 10; x += 0.5) {
            EXPECT_LE(heat_convolve(k, u, t, x), c * std::exp(-x * x / (4 * t)));
            EXPECT_LE(heat_convolve(k, u, t, -x), c * std::exp(-x * x / (4 * t)));
        }
    }
}

TEST(Measure, FourierTransform) {
    const auto d = FiniteMeasure::delta();
    for (double xi : {0.0, 1.0, -7.0}) {
        EXPECT_DOUBLE_EQ(fourier_u0(d, xi).real(), 1.0);
        EXPECT_DOUBLE_EQ(fourier_u0(d, xi).imag(), 0.0);
    }
    const auto u = mixed_measure();
    EXPECT_NEAR(std::abs(fourier_u0(u, 0.0)), u.total_mass(), 1e-13);
    for (double xi : {0.3, 2.0, 11.0, 140.0}) EXPECT_LE(std::abs(fourier_u0(u, xi)), u.total_mass() * (1 + 1e-13));
    // piecewise-linear hat 1-|y| on [-1,1]: sinc²(ξ/2)
    DensityPart hat{{-1.0, 0.0, 1.0}, {0.0, 1.0, 0.0}};
    const FiniteMeasure h({}, hat);
    for (double xi : {1e-5, 0.5, 3.0}) {
        const double sc = std::sin(xi / 2) / (xi / 2);
        EXPECT_NEAR(fourier_u0(h, xi).real(), sc * sc, 1e-9);
    }
}

TEST(Measure, PositiveDefiniteExample) {
    const auto u1 = make_positive_definite_example(1.0);
    EXPECT_NEAR(u1.total_mass(), 2.0, 1e-12);
    const auto u05 = make_positive_definite_example(0.5);
    EXPECT_NEAR(fourier_u0(u05, 0.0).real(), 1.5, 1e-12);
    for (double xi = 20; xi <= 400; xi *= 1.7) {
        const auto z = fourier_u0(u05, xi);
        EXPECT_GE(z.real(), 0.5 - 1e-8);
        EXPECT_NEAR(z.imag(), 0.0, 1e-12);
    }
    // transform of the density part stays nonnegative everywhere
    for (double xi = 0; xi < 20; xi += 0.25) EXPECT_GE(fourier_u0(u05, xi).real() - 0.5, -1e-8);
}

TEST(Measure, JsonRoundTrip) {
    const auto u = mixed_measure();
    const auto v = measure_from_json(measure_to_json(u));
    EXPECT_DOUBLE_EQ(v.total_mass(), u.total_mass());
    EXPECT_EQ(v.atoms().size(), 2u);
    const auto j = nlohmann::json::parse(R"({"atoms":[[0,1]],"support_radius":0})");
    EXPECT_DOUBLE_EQ(measure_from_json(j).total_mass(), 1.0);
    try {
        (void)measure_from_json(nlohmann::json::parse(R"({"atoms":[[0,1]],"bogus":1})"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    }
}
