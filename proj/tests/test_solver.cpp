#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "levyheat/oracle.hpp"
#include "levyheat/solver.hpp"

using namespace levyheat;

namespace {

constexpr double kPi = std::numbers::pi;

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Io;
}

}  // namespace

TEST(Sigma, ZeroAtOriginAndLipschitz) {
    const std::vector<SigmaSpec> all = {SigmaSpec::linear(1.3), SigmaSpec::saturating(-0.7, 2.0),
                                        SigmaSpec::custom({-2, -1, 0, 1, 3}, {-1.0, -0.2, 0.0, 0.9, 1.0})};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-10, 10);
    for (const auto& s : all) {
        EXPECT_EQ(s(0.0), 0.0);
        for (int i = 0; i < 2000; ++i) {
            const double a = U(rng), b = U(rng);
            EXPECT_LE(std::abs(s(a) - s(b)), s.lip() * std::abs(a - b) * (1 + 1e-12) + 1e-15);
        }
        const auto r = sigma_from_json(sigma_to_json(s));
        for (double x : {-5.0, -0.3, 0.0, 0.7, 4.0}) EXPECT_EQ(r(x), s(x));
    }
    EXPECT_DOUBLE_EQ(all[2].lip(), 0.9);
    EXPECT_DOUBLE_EQ(all[2].lower_lip(), 0.05);
    EXPECT_EQ(all[1].lower_lip(), 0.0);
    EXPECT_THROW(SigmaSpec::custom({-1, 1}, {0.0, 1.0}), Error);
    EXPECT_EQ(code_of([] { sigma_from_json({{"kind", "cubic"}}); }), ErrorCode::ConfigInvalid);
}

TEST(LatticeKernels, MassAndOneStepVariance) {
    // Σ P = 1 up to the stencil tails beyond ±(nx−1) cells;
    // Σ K² dt dx = (1/2π) ∫_{|ξ|<π/dx} (1 − e^{−2dtΨ})/(2Ψ) dξ
    for (const auto& k : {KernelModel::brownian(1.0), KernelModel::stable(1.5, 0.8)}) {
        const Lattice lat{4.0, 128, 0.002, 1};
        const LatticeKernels K(k, lat, 1.0);
        double sp = 0.0, sk = 0.0;
        for (double v : K.p_stencil()) sp += v;
        for (double v : K.k_stencil()) sk += v * v;
        EXPECT_NEAR(sp, 1.0, 5e-5);
        const double xiN = kPi / lat.dx();
        std::vector<double> br;
        for (int i = 0; i <= 64; ++i) br.push_back(xiN * i / 64);
        const double exact =
            quad::composite<16>([&](double xi) {
                const double p = k.psi(xi);
                return xi == 0.0 ? lat.dt : -std::expm1(-2 * lat.dt * p) / (2 * p);
            }, br) / kPi;
        EXPECT_NEAR(sk * lat.dt * lat.dx(), exact, 1e-6 * exact);
    }
}

TEST(Solver, NoiselessIsHeatFlowExactly) {
    const auto k = KernelModel::stable(1.5, 1.0);
    const FiniteMeasure u({Atom{-0.5, 1.0}, Atom{0.25, 2.0}});
    const auto n = sample_noise(0.01, 0.1, 20, 80, 9);
    SolverOptions o;
    o.truncation_tol = 1e-1;
    const auto f = evolve(k, u, SigmaSpec::linear(0.0), n, 0.2, o);
    for (int i = 0; i < f.grid.nt(); i += 3)
        for (int j = 0; j < 80; j += 7) EXPECT_EQ(f.grid(i, j), heat_convolve(k, u, f.grid.t[std::size_t(i)], f.grid.x(j)));
    PicardOptions po;
    po.enforce_horizon = false;
    const auto p3 = picard_iterate(k, u, SigmaSpec::linear(0.0), n, 3, po, o);
    EXPECT_EQ(p3.grid.v, f.grid.v);
    const auto ps = positivity_scan(f);
    EXPECT_GE(ps.min_value, 0.0);
    EXPECT_EQ(ps.violation_count, 0);
}

TEST(Solver, PicardStartsAtZeroThenHeat) {
    const auto k = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    const auto n = sample_noise(1e-5, 0.005, 8, 80, 3);
    const auto s = SigmaSpec::linear(1.0);
    SolverOptions o;
    o.refinement_limit = 10.0;
    const auto p0 = picard_iterate(k, d, s, n, 0, {}, o);
    for (double v : p0.grid.v) EXPECT_EQ(v, 0.0);
    const auto p1 = picard_iterate(k, d, s, n, 1, {}, o);
    for (int i = 0; i < p1.grid.nt(); ++i)
        for (int j = 0; j < 80; ++j) EXPECT_EQ(p1.grid(i, j), heat_convolve(k, d, p1.grid.t[std::size_t(i)], p1.grid.x(j)));
    // the causal recursion is reached after nt + 1 stages
    const MildStepper st(k, d, s, lattice_of(n, n.dt() * 8), o);
    const auto it = st.picard_iterates(noise_rows(n), 9);
    EXPECT_EQ(it.back().grid.v, st.evolve(noise_rows(n)).grid.v);
    EXPECT_EQ(code_of([&] { picard_iterate(k, d, s, sample_noise(1e-3, 0.005, 8, 80, 3), 2, {}, o); }),
              ErrorCode::HorizonExceeded);
}

TEST(Solver, RestartWithShiftedNoiseIsBitExact) {
    const auto k = KernelModel::brownian(1.0);
    const FiniteMeasure u({Atom{0.0, 1.0}}, DensityPart{{-1.0, 0.0, 1.0}, {0.0, 0.5, 0.0}});
    const Lattice lat{5.0, 100, 0.005, 40};
    const MildStepper st(k, u, SigmaSpec::saturating(1.5, 2.0), lat);
    const auto n = sample_noise(lat.dt, lat.dx(), lat.nt, lat.nx, 77);
    const auto straight = st.evolve(noise_rows(n));
    auto s = st.initial_state();
    std::vector<double> rows;
    auto keep = [&](std::int64_t, const double* v) { rows.insert(rows.end(), v, v + lat.nx); };
    st.advance(noise_rows(n), s, 17, keep);
    const auto tail = shift_noise(n, 17);
    st.advance(noise_rows(tail), s, lat.nt - 17, keep);
    EXPECT_EQ(rows, straight.grid.v);
    // counter-based noise gives the same field without a materialized lattice
    EXPECT_EQ(st.evolve(noise_rows(lat, 77)).grid.v, straight.grid.v);
}

TEST(Solver, MassDoublingIsPathwiseExact) {
    const auto k = KernelModel::stable(1.5, 1.0);
    const Lattice lat{6.0, 96, 0.004, 50};
    SolverOptions o;
    o.truncation_tol = 0.2;
    const MildStepper a(k, FiniteMeasure::delta(1.0), SigmaSpec::linear(1.0), lat, o);
    const MildStepper b(k, FiniteMeasure::delta(2.0), SigmaSpec::linear(1.0), lat, o);
    const auto fa = a.evolve(noise_rows(lat, 11)), fb = b.evolve(noise_rows(lat, 11));
    for (std::size_t i = 0; i < fa.grid.v.size(); ++i) ASSERT_EQ(fb.grid.v[i], 2.0 * fa.grid.v[i]);
}

TEST(Solver, Truncation) {
    const auto k = KernelModel::brownian(1.0);
    EXPECT_EQ(code_of([&] { MildStepper(k, FiniteMeasure::delta(), SigmaSpec::linear(1.0), Lattice{1.0, 20, 0.01, 50}); }),
              ErrorCode::TruncationTooSmall);
    const MildStepper ok(k, FiniteMeasure::delta(), SigmaSpec::linear(1.0), Lattice{6.0, 60, 0.05, 10});
    EXPECT_LT(ok.truncation_mass(), 1e-8);
    EXPECT_TRUE(ok.warnings().empty());
}

TEST(Solver, MeanAndSecondMomentAgainstOracle) {
    // E u = p_t * δ0 exactly; E u² against the deterministic Volterra oracle, both within 3 SE
    // (the lattice scheme's own bias, about −1% here, is well inside that)
    const auto k = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    const Lattice lat{4.0, 128, 0.25 / 128, 128};
    const MildStepper st(k, d, SigmaSpec::linear(1.0), lat);
    const std::vector<int> rows = {64, 128};
    const std::vector<int> cols = {64, 66, 70, 76};
    const auto per = run_replicas(2000, [&](std::size_t r) {
        std::vector<double> v;
        auto s = st.initial_state();
        st.advance(noise_rows(lat, 1000 + r), s, lat.nt, [&](std::int64_t i, const double* u) {
            if (std::find(rows.begin(), rows.end(), int(i)) == rows.end()) return;
            for (int j : cols) {
                v.push_back(u[j]);
                v.push_back(u[j] * u[j]);
            }
        });
        return v;
    });
    const auto t = oracle_time_nodes(lat.t(128), {lat.t(64)});
    const XGrid g{lat.x(32), lat.dx(), 65};
    const auto f = pam_second_moment_oracle(k, d, 1.0, t, g);
    std::size_t c = 0;
    for (int i : rows)
        for (int j : cols) {
            const auto m1 = sample_stats(column(per, c++)), m2 = sample_stats(column(per, c++));
            const double exact = heat_convolve(k, d, lat.t(i), lat.x(j));
            EXPECT_NEAR(m1.mean, exact, 3 * m1.std_error) << i << " " << j;
            const int n = int(std::find(t.begin(), t.end(), lat.t(i)) - t.begin());
            const double orc = f(n, j - 32);
            EXPECT_NEAR(m2.mean, orc, 3 * m2.std_error) << i << " " << j;
            EXPECT_LT(m2.std_error, 0.1 * orc);
        }
}

TEST(Solver, ReplicaOrderIndependentOfThreads) {
    const auto k = KernelModel::brownian(1.0);
    const Lattice lat{4.0, 64, 0.01, 20};
    const MildStepper st(k, FiniteMeasure::delta(), SigmaSpec::linear(1.0), lat);
    auto f = [&](std::size_t r) {
        auto s = st.initial_state();
        double last = 0.0;
        st.advance(noise_rows(lat, r), s, lat.nt, [&](std::int64_t, const double* u) { last = u[32]; });
        return std::vector<double>{last};
    };
    const auto a = run_replicas(37, f, 1), b = run_replicas(37, f, 4);
    EXPECT_EQ(a, b);
    EXPECT_EQ(sample_stats(column(a, 0)).mean, sample_stats(column(b, 0)).mean);
}

TEST(Solver, PicardDifferencesContract) {
    // E|u^{(n+1)} − u^{(n)}|² at (𝔗₂/2, 0) falls by at least half per stage
    const auto k = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    const auto s = SigmaSpec::linear(1.0);
    const double T = picard_horizon(k, s, {});
    const Lattice lat{0.25, 100, 0.5 * T / 16, 16};
    SolverOptions o;
    o.refinement_limit = 1e9;
    const MildStepper st(k, d, s, lat, o);
    const auto per = run_replicas(200, [&](std::size_t r) {
        const auto it = st.picard_iterates(noise_rows(lat, r), 5);
        std::vector<double> v;
        for (int n = 1; n < 5; ++n) {
            const double diff = it[std::size_t(n + 1)].grid(15, 49) - it[std::size_t(n)].grid(15, 49);
            v.push_back(diff * diff);
        }
        return v;
    });
    for (int n = 0; n + 1 < 4; ++n) {
        const auto a = sample_stats(column(per, std::size_t(n))), b = sample_stats(column(per, std::size_t(n + 1)));
        EXPECT_GT(a.mean, 0.0);
        EXPECT_LE(b.mean, 0.5 * a.mean + 3 * (b.std_error + 0.5 * a.std_error)) << n;
    }
}

TEST(Solver, DiscreteSecondMomentNearOracle) {
    // For σ(u) = λu the scheme's second moment is E u² = D² + diag C with
    // C ← P C Pᵀ + λ² K diag((D̄² + diag C) dt dx) Kᵀ; no sampling error, so this pins the bias.
    const auto k = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    const Lattice lat{4.0, 96, 0.25 / 96, 96};
    const MildStepper st(k, d, SigmaSpec::linear(1.0), lat);
    const int n = lat.nx;
    const auto& P = st.kernels().p_stencil();
    const auto& K = st.kernels().k_stencil();
    auto p = [&](int m) { return P[std::size_t(m + n - 1)]; };
    auto q = [&](int m) { return K[std::size_t(m + n - 1)]; };
    std::vector<double> C(static_cast<std::size_t>(n * n), 0.0), T(C.size()), N(C.size()), v(static_cast<std::size_t>(n));
    for (int i = 0; i < lat.nt; ++i) {
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                double s = 0.0;
                for (int c = 0; c < n; ++c) s += p(a - c) * C[std::size_t(c * n + b)];
                T[std::size_t(a * n + b)] = s;
            }
        const double* de = st.d_eff(i);
        for (int c = 0; c < n; ++c) v[std::size_t(c)] = (de[c] * de[c] + C[std::size_t(c * n + c)]) * lat.dt * lat.dx();
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                double s = 0.0, w = 0.0;
                for (int c = 0; c < n; ++c) {
                    s += T[std::size_t(a * n + c)] * p(b - c);
                    w += q(a - c) * v[std::size_t(c)] * q(b - c);
                }
                N[std::size_t(a * n + b)] = s + w;
            }
        C.swap(N);
    }
    const auto t = oracle_time_nodes(lat.t_end());
    const XGrid g{lat.x(24), lat.dx(), 49};
    const auto f = pam_second_moment_oracle(k, d, 1.0, t, g);
    for (int j = 48; j <= 60; j += 4) {
        const double dn = st.d_node(lat.nt)[j];
        const double m2 = dn * dn + C[std::size_t(j * n + j)];
        const double orc = f(f.nt() - 1, j - 24);
        EXPECT_LT(m2, orc) << j;
        EXPECT_GT(m2, 0.975 * orc) << j;
    }
}

TEST(Stability, DeterministicPartThreeWays) {
    // κ = 1 Brownian δ0: ∫e^{−βt}p_{2t+c}(0)dt = e^{βc/2} erfc(√(βc/2)) / √(4β)
    const auto b = KernelModel::brownian(1.0);
    const auto d = FiniteMeasure::delta();
    const double beta = 4.0;
    auto J = [&](double c) { return std::exp(0.5 * beta * c) * std::erfc(std::sqrt(0.5 * beta * c)) / std::sqrt(4 * beta); };
    for (double eps : {0.2, 0.05, 0.01}) {
        const double exact = J(0.0) - 2 * J(eps) + J(2 * eps);
        EXPECT_NEAR(stability_deterministic(b, d, eps, beta), exact, 1e-8 * exact) << eps;
        EXPECT_NEAR(stability_deterministic_direct(b, d, eps, beta), exact, 1e-4 * exact) << eps;
        EXPECT_NEAR(stability_bound(b, d, eps, beta), 2 * exact, 1e-8 * exact);
    }
    EXPECT_EQ(stability_bound(b, d, 0.0, beta), 0.0);
    const FiniteMeasure two({Atom{-0.3, 1.0}, Atom{0.4, 0.5}});
    for (const auto& k : {b, KernelModel::stable(1.5, 1.0)})
        for (double eps : {0.2, 0.025}) {
            const double f = stability_deterministic(k, two, eps, beta);
            EXPECT_NEAR(stability_deterministic_direct(k, two, eps, beta), f, 1e-4 * f) << eps;
            EXPECT_LE(f, stability_bound(k, two, eps, beta));
        }
}

TEST(Stability, NoiselessCompareIsDeterministic) {
    const auto b = KernelModel::brownian(1.0);
    const auto rows = stability_compare(b, FiniteMeasure::delta(), SigmaSpec::linear(0.0), {0.2, 0.1}, 4.0, {1, 2});
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.distance, r.deterministic);
        EXPECT_EQ(r.std_error, 0.0);
        EXPECT_NEAR(r.deterministic_direct, r.deterministic, 1e-4 * r.deterministic);
    }
    EXPECT_GT(rows[0].distance, rows[1].distance);
}

TEST(Stability, CoupledMonteCarloBelowBound) {
    const auto b = KernelModel::brownian(1.0);
    StabilityOptions o;
    o.t_max = 1.0;
    o.nt = 128;
    o.nx = 96;
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 24; ++s) seeds.push_back(500 + s);
    const auto rows = stability_compare(b, FiniteMeasure::delta(), SigmaSpec::linear(1.0), {0.2, 0.05}, 4.0, seeds, o);
    for (const auto& r : rows) {
        EXPECT_GT(r.stochastic, 0.0);
        EXPECT_GT(r.std_error, 0.0);
        EXPECT_LE(r.distance, r.bound);
    }
    EXPECT_GT(rows[0].distance, rows[1].distance - 2 * (rows[0].std_error + rows[1].std_error));
    EXPECT_EQ(code_of([&] { stability_compare(b, FiniteMeasure::delta(), SigmaSpec::linear(3.0), {0.1}, 1.0, seeds, o); }),
              ErrorCode::InvalidArgument);
}
