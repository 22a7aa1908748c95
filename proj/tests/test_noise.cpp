#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "levyheat/noise.hpp"

using namespace levyheat;

TEST(Philox, KnownAnswers) {
    using A = std::array<std::uint32_t, 4>;
    EXPECT_EQ(philox4x32({0, 0, 0, 0}, {0, 0}), (A{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (A{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (A{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Noise, Deterministic) {
    const auto a = sample_noise(0.01, 0.02, 30, 17, 42);
    const auto b = sample_noise(0.01, 0.02, 30, 17, 42);
    EXPECT_TRUE(a == b);
    const auto c = sample_noise(0.01, 0.02, 30, 17, 43);
    EXPECT_FALSE(a == c);
    // any cell is reproducible from (seed, i, j) alone
    const auto big = sample_noise(0.01, 0.02, 60, 17, 42);
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 17; ++j) EXPECT_EQ(a(i, j), big(i, j));
}

TEST(Noise, CellVariance) {
    const double dt = 0.003, dx = 0.07;
    const auto n = sample_noise(dt, dx, 1000, 1000, 7);
    double s = 0, s2 = 0;
    for (double v : n.increments()) {
        s += v;
        s2 += v * v;
    }
    const double N = 1e6, var = s2 / N;
    // sample variance of N iid N(0, v): sd = v√(2/N)
    EXPECT_NEAR(var, dt * dx, 3 * dt * dx * std::sqrt(2 / N));
    EXPECT_NEAR(s / N, 0.0, 3 * std::sqrt(dt * dx / N));
}

TEST(Noise, SheetCovariance) {
    // W_t(x) = Σ over [0,t]×[0,x]; Cov(W_1(1), W_{1/2}(2)) = min(1,1/2)·min(1,2) = 1/2
    const int R = 10000;
    std::vector<double> a(R), b(R);
    for (int r = 0; r < R; ++r) {
        const auto n = sample_noise(0.25, 0.5, 4, 4, 1000 + r);
        double w11 = 0, wh2 = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 2; ++j) w11 += n(i, j);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 4; ++j) wh2 += n(i, j);
        a[r] = w11;
        b[r] = wh2;
    }
    double ma = 0, mb = 0;
    for (int r = 0; r < R; ++r) {
        ma += a[r] / R;
        mb += b[r] / R;
    }
    double c = 0, c2 = 0;
    for (int r = 0; r < R; ++r) {
        const double p = (a[r] - ma) * (b[r] - mb);
        c += p;
        c2 += p * p;
    }
    c /= R;
    const double se = std::sqrt((c2 / R - c * c) / R);
    EXPECT_NEAR(c, 0.5, 3 * se);
}

TEST(Noise, IndependenceAndSignStructure) {
    const int R = 10000;
    double sab = 0, sa2 = 0, sb2 = 0, sl = 0, sr = 0, slr = 0, sl2 = 0, sr2 = 0;
    for (int r = 0; r < R; ++r) {
        const auto n = sample_noise(0.1, 0.1, 3, 6, 5000 + r);
        const double a = n(1, 2), b = n(1, 3);
        sab += a * b;
        sa2 += a * a;
        sb2 += b * b;
        // x < 0 cells are j < 3 on a lattice centred at 0
        double l = 0, rr = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                l += n(i, j);
                rr += n(i, j + 3);
            }
        sl += l;
        sr += rr;
        slr += l * rr;
        sl2 += l * l;
        sr2 += rr * rr;
    }
    const double corr = sab / std::sqrt(sa2 * sb2);
    EXPECT_LT(std::abs(corr), 4 / std::sqrt(double(R)));
    const double cov = slr / R - (sl / R) * (sr / R);
    const double clr = cov / std::sqrt((sl2 / R) * (sr2 / R));
    EXPECT_LT(std::abs(clr), 4 / std::sqrt(double(R)));
}

TEST(Noise, Shift) {
    const auto n = sample_noise(0.1, 0.2, 10, 5, 3);
    EXPECT_TRUE(shift_noise(n, 0) == n);
    const auto last = shift_noise(n, 9);
    EXPECT_EQ(last.nt(), 1);
    EXPECT_EQ(last.row_offset(), 9);
    for (int j = 0; j < 5; ++j) EXPECT_EQ(last(0, j), n(9, j));
    const auto s4 = shift_noise(shift_noise(n, 2), 2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) EXPECT_EQ(s4(i, j), n(i + 4, j));
    EXPECT_THROW(shift_noise(n, 10), Error);
    EXPECT_THROW(shift_noise(n, -1), Error);
    // lazy source with a row offset matches the materialized suffix
    const CounterNoise lazy{0.1, 0.2, 5, 3, 4};
    std::vector<double> row(5);
    lazy.row(1, row.data());
    for (int j = 0; j < 5; ++j) EXPECT_EQ(row[j], n(5, j));
}

TEST(Noise, AllocationLimit) {
    try {
        (void)sample_noise(0.1, 0.1, 1000, 1000, 1, 1000);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::AllocationLimit);
    }
}

TEST(Noise, BinaryDumpRoundTrip) {
    const auto n = sample_noise(0.125, 0.0625, 7, 9, 0x0123456789abcdefULL);
    const auto b = dump_noise(n);
    ASSERT_EQ(b.size(), 32u + 8u * 63u);
    EXPECT_EQ(b.substr(0, 4), "LHN1");
    EXPECT_EQ(static_cast<unsigned char>(b[4]), 7);
    EXPECT_EQ(static_cast<unsigned char>(b[6]), 9);
    EXPECT_EQ(static_cast<unsigned char>(b[24]), 0xef);  // little-endian seed
    const auto m = load_noise(b);
    EXPECT_TRUE(m == n);
    EXPECT_THROW(load_noise(b.substr(0, 40)), Error);
}
