#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "levyheat/oracle.hpp"

using namespace levyheat;

namespace {

constexpr double kPi = std::numbers::pi;

double brownian_p(double t, double x) { return std::exp(-x * x / (2 * t)) / std::sqrt(2 * kPi * t); }

// κ = 1 Brownian δ0: f = Σ_n λ^{2n} a_n t^{(n−1)/2} p_{t/2}(x), a_0 = 1/(2√π), a_n = a_{n−1} B(1/2, n/2)/(2√π).
double brownian_series(double lambda, double t, double x) {
    double a = 1 / (2 * std::sqrt(kPi)), s = 0, l = 1;
    for (int n = 0; n < 80; ++n) {
        if (n) a *= std::beta(0.5, 0.5 * n) / (2 * std::sqrt(kPi));
        s += l * a * std::pow(t, 0.5 * (n - 1));
        l *= lambda * lambda;
    }
    return s * brownian_p(t / 2, x);
}

std::size_t index_of(const std::vector<double>& t, double v) {
    return std::size_t(std::find(t.begin(), t.end(), v) - t.begin());
}

}  // namespace

TEST(Oracle, NoInteractionIsSquaredHeat) {
    const auto k = KernelModel::stable(1.5, 1.0);
    const FiniteMeasure u({Atom{0.3, 0.5}}, DensityPart{{-1.0, 0.0, 1.0}, {0.0, 1.0, 0.0}});
    const auto t = oracle_time_nodes(0.4);
    const XGrid g{-2.0, 0.1, 41};
    const auto f = pam_second_moment_oracle(k, u, 0.0, t, g);
    for (int n = 0; n < f.nt(); n += 7)
        for (int j = 0; j < g.nx; j += 5) {
            const double d = heat_convolve(k, u, t[std::size_t(n)], g.x(j));
            EXPECT_EQ(f(n, j), d * d);
        }
}

TEST(Oracle, BrownianDeltaSeries) {
    const auto k = KernelModel::brownian(1.0);
    const auto t = oracle_time_nodes(0.5, {0.125, 0.25});
    const XGrid g{-3.0, 1.0 / 16, 97};
    for (double lambda : {0.5, 1.0}) {
        const auto f = pam_second_moment_oracle(k, FiniteMeasure::delta(), lambda, t, g);
        for (double tt : {0.125, 0.25, 0.5})
            for (int j = 48; j <= 64; j += 4) {
                const double ex = brownian_series(lambda, tt, g.x(j));
                EXPECT_NEAR(f(int(index_of(t, tt)), j), ex, (std::abs(g.x(j)) <= 0.5 ? 1e-4 : 5e-4) * ex) << lambda << " " << tt << " " << g.x(j);
            }
    }
}

TEST(Oracle, SmallCouplingMatchesPointwiseStarPower) {
    // (f − D²)/λ² → p² ⊛ D² + O(λ²), the latter by nested pointwise quadrature
    const auto k = KernelModel::stable(1.5, 1.0);
    const auto d = FiniteMeasure::delta();
    const double lambda = 0.05;
    const auto t = oracle_time_nodes(0.5, {0.25});
    const XGrid g{-4.0, 0.125, 65};
    const auto f = pam_second_moment_oracle(k, d, lambda, t, g);
    for (double tt : {0.25, 0.5})
        for (int j : {32, 36, 40}) {
            const double D = heat_convolve(k, d, tt, g.x(j));
            const double first = (f(int(index_of(t, tt)), j) - D * D) / (lambda * lambda);
            const double ref = heat_sq_conv(k, d, tt, g.x(j));
            EXPECT_NEAR(first, ref, 3e-3 * ref) << tt << " " << g.x(j);
        }
}

TEST(Oracle, StableDeltaAgainstStarProfileSeries) {
    const auto k = KernelModel::stable(1.5, 1.0);
    const double lambda = 0.4;
    const StarProfiles prof(k, 4);
    const auto t = oracle_time_nodes(0.5);
    const XGrid g{-4.0, 0.125, 65};
    const auto f = pam_second_moment_oracle(k, FiniteMeasure::delta(), lambda, t, g);
    const int n = f.nt() - 1;
    for (int j : {32, 36, 40}) {
        double s = 0.0, l = 1.0;
        for (int m = 0; m <= 4; ++m, l *= lambda * lambda) s += l * prof.value(m, 0.5, g.x(j));
        EXPECT_NEAR(f(n, j), s, 1e-3 * s) << g.x(j);
    }
}

TEST(Oracle, RejectsBadGrids) {
    const auto k = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    for (const auto& t : {std::vector<double>{}, std::vector<double>{0.0, 0.1}, std::vector<double>{0.2, 0.1}}) {
        try {
            (void)pam_second_moment_oracle(k, d, 1.0, t, XGrid{-1, 0.1, 21});
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
        }
    }
}
