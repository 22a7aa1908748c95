#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "levyheat/error.hpp"

namespace levyheat {

// Philox4x32-10 (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u, W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
        const std::uint64_t p0 = std::uint64_t(M0) * c[0], p1 = std::uint64_t(M1) * c[2];
        c = {std::uint32_t(p1 >> 32) ^ c[1] ^ k[0], std::uint32_t(p1), std::uint32_t(p0 >> 32) ^ c[3] ^ k[1],
             std::uint32_t(p0)};
        k[0] += W0;
        k[1] += W1;
    }
    return c;
}

// Two independent standard normals for the cell pair (i, 2m), (i, 2m+1).
inline std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t i, std::uint64_t m) {
    const auto r = philox4x32({std::uint32_t(i), std::uint32_t(i >> 32), std::uint32_t(m), std::uint32_t(m >> 32)},
                              {std::uint32_t(seed), std::uint32_t(seed >> 32)});
    constexpr double two53 = 9007199254740992.0;
    const double u1 = (double((std::uint64_t(r[0]) << 21) ^ (r[1] >> 11)) + 1.0) / two53;  // (0, 1]
    const double u2 = double((std::uint64_t(r[2]) << 21) ^ (r[3] >> 11)) / two53;         // [0, 1)
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    return {rad * std::cos(ang), rad * std::sin(ang)};
}

// Lazily generated increments: row i holds ΔW over [t_i, t_{i+1}) × cells.
struct CounterNoise {
    double dt = 0.0, dx = 0.0;
    std::int64_t nx = 0;
    std::uint64_t seed = 0;
    std::int64_t row_offset = 0;

    void row(std::int64_t i, double* out) const {
        const double s = std::sqrt(dt * dx);
        const std::uint64_t ia = std::uint64_t(i + row_offset);
        for (std::int64_t m = 0; 2 * m < nx; ++m) {
            const auto z = normal_pair(seed, ia, std::uint64_t(m));
            out[2 * m] = s * z[0];
            if (2 * m + 1 < nx) out[2 * m + 1] = s * z[1];
        }
    }
};

class NoiseLattice {
public:
    static constexpr std::int64_t kDefaultMaxCells = std::int64_t(1) << 27;

    NoiseLattice() = default;
    NoiseLattice(double dt, double dx, std::int64_t nt, std::int64_t nx, std::uint64_t seed, std::int64_t row_offset,
                 std::vector<double> inc)
        : dt_(dt), dx_(dx), nt_(nt), nx_(nx), seed_(seed), row_offset_(row_offset), inc_(std::move(inc)) {}

    double dt() const { return dt_; }
    double dx() const { return dx_; }
    std::int64_t nt() const { return nt_; }
    std::int64_t nx() const { return nx_; }
    std::uint64_t seed() const { return seed_; }
    // Rows dropped by shift_noise since the seeded original.
    std::int64_t row_offset() const { return row_offset_; }
    const std::vector<double>& increments() const { return inc_; }
    double operator()(std::int64_t i, std::int64_t j) const { return inc_[std::size_t(i * nx_ + j)]; }

    void row(std::int64_t i, double* out) const {
        std::memcpy(out, inc_.data() + i * nx_, sizeof(double) * std::size_t(nx_));
    }

    bool operator==(const NoiseLattice& o) const {
        return dt_ == o.dt_ && dx_ == o.dx_ && nt_ == o.nt_ && nx_ == o.nx_ && seed_ == o.seed_ && inc_ == o.inc_;
    }

private:
    double dt_ = 0.0, dx_ = 0.0;
    std::int64_t nt_ = 0, nx_ = 0;
    std::uint64_t seed_ = 0;
    std::int64_t row_offset_ = 0;
    std::vector<double> inc_;
};

inline NoiseLattice sample_noise(double dt, double dx, std::int64_t nt, std::int64_t nx, std::uint64_t seed,
                                 std::int64_t max_cells = NoiseLattice::kDefaultMaxCells) {
    require(dt > 0.0 && dx > 0.0, "noise lattice needs dt, dx > 0");
    require(nt >= 1 && nx >= 1, "noise lattice needs nt, nx >= 1");
    if (nt > max_cells / nx) fail(ErrorCode::AllocationLimit, "nt*nx exceeds the configured cell budget");
    std::vector<double> inc(std::size_t(nt * nx));
    const CounterNoise src{dt, dx, nx, seed, 0};
    for (std::int64_t i = 0; i < nt; ++i) src.row(i, inc.data() + i * nx);
    return NoiseLattice(dt, dx, nt, nx, seed, 0, std::move(inc));
}

// Suffix lattice starting at row `offset`.
inline NoiseLattice shift_noise(const NoiseLattice& n, std::int64_t offset) {
    if (offset < 0 || offset >= n.nt()) fail(ErrorCode::OffsetOutOfRange, "offset must lie in [0, nt)");
    std::vector<double> inc(n.increments().begin() + offset * n.nx(), n.increments().end());
    return NoiseLattice(n.dt(), n.dx(), n.nt() - offset, n.nx(), n.seed(), n.row_offset() + offset, std::move(inc));
}

// Binary dump: 32-byte header {"LHN1", u16 nt, u16 nx, f64 dt, f64 dx, u64 seed}, then
// row-major f64 increments; all little-endian.
namespace detail {

template <class T>
void put_le(std::string& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    buf.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const char* p) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

inline std::string dump_noise(const NoiseLattice& n) {
    require(n.nt() <= 0xFFFF && n.nx() <= 0xFFFF, "binary dump supports nt, nx <= 65535");
    std::string buf("LHN1");
    detail::put_le<std::uint16_t>(buf, std::uint16_t(n.nt()));
    detail::put_le<std::uint16_t>(buf, std::uint16_t(n.nx()));
    detail::put_le<double>(buf, n.dt());
    detail::put_le<double>(buf, n.dx());
    detail::put_le<std::uint64_t>(buf, n.seed());
    for (double v : n.increments()) detail::put_le<double>(buf, v);
    return buf;
}

inline NoiseLattice load_noise(const std::string& buf) {
    if (buf.size() < 32 || buf.compare(0, 4, "LHN1") != 0) fail(ErrorCode::Io, "not an LHN1 noise dump");
    const auto nt = detail::get_le<std::uint16_t>(buf.data() + 4);
    const auto nx = detail::get_le<std::uint16_t>(buf.data() + 6);
    const double dt = detail::get_le<double>(buf.data() + 8);
    const double dx = detail::get_le<double>(buf.data() + 16);
    const auto seed = detail::get_le<std::uint64_t>(buf.data() + 24);
    const std::size_t n = std::size_t(nt) * nx;
    if (buf.size() != 32 + 8 * n) fail(ErrorCode::Io, "noise dump size does not match its header");
    std::vector<double> inc(n);
    for (std::size_t i = 0; i < n; ++i) inc[i] = detail::get_le<double>(buf.data() + 32 + 8 * i);
    return NoiseLattice(dt, dx, nt, nx, seed, 0, std::move(inc));
}

inline void write_noise_file(const NoiseLattice& n, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::Io, "cannot open " + path);
    const auto b = dump_noise(n);
    f.write(b.data(), std::streamsize(b.size()));
    if (!f) fail(ErrorCode::Io, "write failed: " + path);
}

inline NoiseLattice read_noise_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::Io, "cannot open " + path);
    std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return load_noise(b);
}

}  // namespace levyheat
