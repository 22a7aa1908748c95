#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

namespace levyheat::quad {

// Full N-point Gauss-Legendre rule on [-1, 1], nodes ascending.
template <unsigned N>
struct Rule {
    std::array<double, N> x{};
    std::array<double, N> w{};
};

template <unsigned N>
const Rule<N>& legendre() {
    static const Rule<N> rule = [] {
        using G = boost::math::quadrature::gauss<double, N>;
        const auto& a = G::abscissa();
        const auto& wt = G::weights();
        Rule<N> r;
        // boost stores the nonnegative half, zero first when N is odd
        unsigned k = 0;
        for (std::size_t i = a.size(); i-- > 0;) {
            if (a[i] == 0.0) continue;
            r.x[k] = -a[i];
            r.w[k] = wt[i];
            ++k;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            r.x[k] = a[i];
            r.w[k] = wt[i];
            ++k;
        }
        return r;
    }();
    return rule;
}

template <unsigned N, class F>
double panel(F&& f, double a, double b) {
    const auto& r = legendre<N>();
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (unsigned i = 0; i < N; ++i) s += r.w[i] * f(c + h * r.x[i]);
    return s * h;
}

// Composite rule over consecutive breakpoints.
template <unsigned N, class F>
double composite(F&& f, const std::vector<double>& breaks) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
        if (breaks[i + 1] > breaks[i]) s += panel<N>(f, breaks[i], breaks[i + 1]);
    return s;
}

// ∫_0^T f(r) dr with r = T v^m; m > 1 flattens an r^{-1+1/m} singularity at 0.
template <unsigned N, class F>
double graded_origin(F&& f, double T, double m, int panels = 4) {
    auto g = [&](double v) { return m * T * std::pow(v, m - 1.0) * f(T * std::pow(v, m)); };
    double s = 0.0;
    for (int i = 0; i < panels; ++i) s += panel<N>(g, double(i) / panels, double(i + 1) / panels);
    return s;
}

// ∫_0^T f(s) ds graded at both endpoints (s = (T/2) v^m on each half).
template <unsigned N, class F>
double graded_both(F&& f, double T, double m, int panels = 2) {
    const double h = 0.5 * T;
    auto left = [&](double r) { return f(r); };
    auto right = [&](double r) { return f(T - r); };
    return graded_origin<N>(left, h, m, panels) + graded_origin<N>(right, h, m, panels);
}

// Node/weight list for ∫_0^T f(s) ds graded at both endpoints.
template <unsigned N>
void graded_both_nodes(double T, double m, int panels, std::vector<double>& s, std::vector<double>& w) {
    s.clear();
    w.clear();
    const auto& r = legendre<N>();
    const double h = 0.5 * T;
    for (int side = 0; side < 2; ++side)
        for (int p = 0; p < panels; ++p) {
            const double a = double(p) / panels, b = double(p + 1) / panels;
            for (unsigned i = 0; i < N; ++i) {
                const double v = 0.5 * (a + b) + 0.5 * (b - a) * r.x[i];
                const double dv = 0.5 * (b - a) * r.w[i];
                const double rr = h * std::pow(v, m);
                s.push_back(side == 0 ? rr : T - rr);
                w.push_back(dv * m * h * std::pow(v, m - 1.0));
            }
        }
}

// Sorted, de-duplicated breakpoints with every panel no wider than max_width.
inline std::vector<double> refine_breaks(std::vector<double> b, double max_width) {
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end(), [](double x, double y) { return std::abs(x - y) <= 1e-15 * (1 + std::abs(x)); }),
            b.end());
    if (!(max_width > 0.0) || b.size() < 2) return b;
    std::vector<double> out;
    out.reserve(b.size());
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
        const double a = b[i], c = b[i + 1];
        const int m = std::max(1, int(std::ceil((c - a) / max_width)));
        for (int j = 0; j < m; ++j) out.push_back(a + (c - a) * j / m);
    }
    out.push_back(b.back());
    return out;
}

// Breakpoints clustering geometrically around a centre c at scale w, out to reach.
inline void add_geometric_breaks(std::vector<double>& b, double c, double w, double reach) {
    b.push_back(c);
    for (double d = 0.25 * w; d < reach; d *= 2.0) {
        b.push_back(c - d);
        b.push_back(c + d);
    }
    b.push_back(c - reach);
    b.push_back(c + reach);
}

// Fixed-order pairwise summation.
inline double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

}  // namespace levyheat::quad
