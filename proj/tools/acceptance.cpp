#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>

#include "levyheat/experiment.hpp"

namespace fs = std::filesystem;
using namespace levyheat;

namespace {

// ---- pinned tolerances ----
constexpr double kThetaBrownianTol = 1e-6;
constexpr double kThetaStableTol = 1e-4;
constexpr double kUpsilonTol = 1e-8;
constexpr double kGammaRelTol = 1e-6;
constexpr double kPPRelTol = 0.02;
constexpr double kStarMargin = 1.01;
constexpr double kSe = 3.0;
constexpr double kOracleSmallLambda = 0.25;
constexpr double kOracleSeriesRelTol = 1e-3;
constexpr double kPicardRatio = 0.6;
constexpr double kPositivityFraction = 0.01;
constexpr double kStabilitySe = 2.0;
constexpr double kSupChange = 0.05;
constexpr double kTailRelTol = 0.02;
constexpr double kSmallTBand = 4.0;

constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char b[64];
    std::snprintf(b, sizeof b, f, v);
    return b;
}

std::string g(double v) { return fmt("%.4g", v); }

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t n) {
    std::vector<std::uint64_t> s(n);
    std::iota(s.begin(), s.end(), first);
    return s;
}

const std::vector<double>& probe_t() {
    static const std::vector<double> t{0.125, 0.25, 0.375, 0.5};
    return t;
}

const std::vector<double>& probe_x() {
    static const std::vector<double> x{0.0, 0.25, 0.5, 0.75, 1.0};
    return x;
}

// PAM δ₀ Brownian on [−6, 6], 256 cells, 512 steps to t = 0.5.
Lattice acceptance_lattice() { return {6.0, 256, 0.5 / 512, 512}; }

// ---- 1 ----
Outcome kernel_golden() {
    Outcome o{true, ""};
    const double b = theta_estimate(KernelModel::brownian(1.0)).value;
    double worst = std::abs(b - std::sqrt(2.0));
    o.pass = worst <= kThetaBrownianTol;
    double ws = 0.0;
    for (double a : {1.2, 1.5, 1.8}) ws = std::max(ws, std::abs(theta_estimate(KernelModel::stable(a, 1.0)).value - std::pow(2.0, 1.0 / a)));
    o.pass = o.pass && ws <= kThetaStableTol;
    o.detail = "|Θ−√2| = " + g(worst) + ", max stable |Θ−2^{1/α}| = " + g(ws);
    return o;
}

// ---- 2 ----
Outcome resolvent_closed_forms() {
    const auto b = KernelModel::brownian(1.0);
    double ue = 0.0, ge = 0.0;
    for (double beta : {0.25, 1.0, 4.0, 16.0}) ue = std::max(ue, std::abs(upsilon_eval(b, beta) - 1.0 / (2.0 * std::sqrt(beta))));
    for (double k : {2.0, 3.0, 4.0})
        for (double lip : {0.5, 1.0, 2.0}) {
            const double ref = 2.0 * k * k * k * std::pow(lip, 4);
            ge = std::max(ge, std::abs(gamma_k(b, k, lip) - ref) / ref);
        }
    return {ue <= kUpsilonTol && ge <= kGammaRelTol, "max |Υ−1/(2√β)| = " + g(ue) + ", max rel γ error = " + g(ge)};
}

// ---- 3 ----
Outcome convolution_triple() {
    const auto b = KernelModel::brownian(1.0);
    bool pass = true;
    double worst = 0.0;
    for (double t : {1e-3, 0.1, 1.0, 10.0}) {
        const auto r = check_lemma_pp(b, t);
        const double ref[3] = {1.0 / kPi, 0.5, 2.0 * std::sqrt(2.0) / kPi};
        const double got[3] = {r.lower, r.mid, r.upper};
        for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(got[i] - ref[i]) / ref[i]);
        pass = pass && r.lower < r.mid && r.mid < r.upper;
    }
    pass = pass && worst <= kPPRelTol;
    int rows = 0, bad = 0;
    for (const auto& r : convolution_table({KernelModel::stable(1.2, 1.0), KernelModel::stable(1.5, 1.0),
                                            KernelModel::stable(1.8, 1.0)},
                                           13)) {
        ++rows;
        bad += !(r.v.lower < r.v.mid && r.v.mid < r.v.upper);
    }
    pass = pass && bad == 0;
    return {pass, "Brownian max rel error " + g(worst) + "; stable ordering fails " + std::to_string(bad) + "/" +
                      std::to_string(rows)};
}

// ---- 4 ----
Outcome star_certification() {
    const auto d = FiniteMeasure::delta();
    int cells = 0, bad = 0;
    double worst = 0.0;
    for (const auto& k : {KernelModel::brownian(1.0), KernelModel::stable(1.5, 1.0)}) {
        const double theta = theta_estimate(k).value;
        const StarProfiles prof(k, 2);
        for (int i = 0; i < 8; ++i) {
            const double t = 1e-2 * std::pow(100.0, i / 7.0);
            for (int j = 0; j < 8; ++j) {
                const double x = 0.5 * j * k.scale(t);
                for (int n = 1; n <= 2; ++n) {
                    const auto c = check_lemma_star2(k, d, n, t, x, theta, &prof);
                    ++cells;
                    bad += !c.holds(kStarMargin);
                    worst = std::max(worst, c.lhs / c.rhs);
                }
            }
        }
    }
    return {bad == 0, std::to_string(cells) + " cells, max lhs/rhs = " + g(worst)};
}

// ---- 5, 6: one 10⁴-replica run ----
struct PamRun {
    std::unique_ptr<MildStepper> st;
    ProbeSamples s;
};

const PamRun& pam_run() {
    static const PamRun r = [] {
        PamRun p;
        p.st = std::make_unique<MildStepper>(KernelModel::brownian(1.0), FiniteMeasure::delta(), SigmaSpec::linear(1.0),
                                             acceptance_lattice());
        p.s = sample_probes(*p.st, seed_range(1, 10000), probe_t(), probe_x());
        return p;
    }();
    return r;
}

Outcome mean_identity() {
    const auto& r = pam_run();
    const auto st = probe_stats(r.s, [](double u) { return u; });
    int bad = 0;
    double worst = 0.0;
    for (std::size_t a = 0; a < r.s.t.size(); ++a)
        for (std::size_t b = 0; b < r.s.x.size(); ++b) {
            const auto& q = st[r.s.index(a, b)];
            const double z = std::abs(q.mean - heat_convolve(r.st->kernel(), r.st->initial(), r.s.t[a], r.s.x[b])) / q.std_error;
            worst = std::max(worst, z);
            bad += !(z <= kSe);
        }
    return {bad == 0, std::to_string(r.s.t.size() * r.s.x.size()) + " probes, max |mean−p_t*u0|/SE = " + g(worst)};
}

// κ = 1 Brownian δ₀: E u_t(x)² = Σ_n λ^{2n} a_n t^{(n−1)/2} p_{t/2}(x), a_0 = 1/(2√π),
// a_n = a_{n−1} B(1/2, n/2)/(2√π).
double brownian_series(double lambda, double t, double x) {
    double a = 1.0 / (2.0 * std::sqrt(kPi)), s = 0.0, l = 1.0;
    for (int n = 0; n < 200; ++n) {
        if (n) a *= std::beta(0.5, 0.5 * n) / (2.0 * std::sqrt(kPi));
        s += l * a * std::pow(t, 0.5 * (n - 1));
        l *= lambda * lambda;
    }
    return s * std::exp(-x * x / t) / std::sqrt(kPi * t);
}

Outcome oracle_equivalence() {
    const auto& r = pam_run();
    const auto& lat = r.st->lattice();
    const auto& k = r.st->kernel();
    const auto nodes = oracle_time_nodes(0.5, probe_t());
    const XGrid xg{lat.x0(), lat.dx(), lat.nx};
    auto row = [&](double t) { return int(std::find(nodes.begin(), nodes.end(), t) - nodes.begin()); };

    // λ = 0 is (p_t * u0)² exactly; small λ against the series
    const auto f0 = pam_second_moment_oracle(k, r.st->initial(), 0.0, nodes, xg);
    const auto fs = pam_second_moment_oracle(k, r.st->initial(), kOracleSmallLambda, nodes, xg);
    bool exact = true;
    double series = 0.0;
    for (std::size_t a = 0; a < r.s.t.size(); ++a)
        for (std::size_t b = 0; b < r.s.x.size(); ++b) {
            const double d = heat_convolve(k, r.st->initial(), r.s.t[a], r.s.x[b]);
            exact = exact && f0(row(r.s.t[a]), r.s.cols[b]) == d * d;
            const double ex = brownian_series(kOracleSmallLambda, r.s.t[a], r.s.x[b]);
            series = std::max(series, std::abs(fs(row(r.s.t[a]), r.s.cols[b]) - ex) / ex);
        }

    const auto f = pam_second_moment_oracle(k, r.st->initial(), 1.0, nodes, xg);
    const auto st = probe_stats(r.s, [](double u) { return u * u; });
    int bad = 0;
    double worst = 0.0, bias = 0.0;
    for (std::size_t a = 0; a < r.s.t.size(); ++a)
        for (std::size_t b = 0; b < r.s.x.size(); ++b) {
            const auto& q = st[r.s.index(a, b)];
            const double ref = f(row(r.s.t[a]), r.s.cols[b]);
            const double z = std::abs(q.mean - ref) / q.std_error;
            worst = std::max(worst, z);
            if (std::abs(q.mean - ref) / ref > std::abs(bias)) bias = (q.mean - ref) / ref;
            bad += !(z <= kSe);
        }
    const bool pass = exact && series <= kOracleSeriesRelTol && bad == 0;
    return {pass, std::string("λ=0 exact: ") + (exact ? "yes" : "no") + ", small-λ series rel error " + g(series) +
                      ", max |E u²−oracle|/SE = " + g(worst) + ", largest rel deviation " + g(bias)};
}

// ---- 7 ----
// Per replica w_n = d_{n+1} − 0.6 d_n with d_n = |u^{(n+1)} − u^{(n)}|² at (𝔗₂/2, 0); pass when E w_n ≤ 3 SE.
Outcome picard_contraction() {
    const auto k = KernelModel::brownian(1.0);
    const auto s = SigmaSpec::linear(1.0);
    const double T = picard_horizon(k, s, {});
    const Lattice lat{0.25, 101, 0.5 * T / 16, 16};
    SolverOptions o;
    o.refinement_limit = 1e9;
    const MildStepper st(k, FiniteMeasure::delta(), s, lat, o);
    const int centre = lat.nx / 2, last = lat.nt - 1;
    const auto per = run_replicas(200, [&](std::size_t r) {
        const auto it = st.picard_iterates(noise_rows(lat, 1000 + r), 6);
        std::vector<double> d;
        for (int n = 1; n <= 5; ++n) {
            const double diff = it[std::size_t(n + 1)].grid(last, centre) - it[std::size_t(n)].grid(last, centre);
            d.push_back(diff * diff);
        }
        return d;
    });
    bool pass = true;
    std::string ratios;
    for (std::size_t n = 0; n < 4; ++n) {
        std::vector<double> w(per.size());
        for (std::size_t r = 0; r < per.size(); ++r) w[r] = per[r][n + 1] - kPicardRatio * per[r][n];
        const auto sw = sample_stats(w);
        const double a = sample_stats(column(per, n)).mean, b = sample_stats(column(per, n + 1)).mean;
        pass = pass && a > 0.0 && sw.mean <= kSe * sw.std_error;
        ratios += (n ? ", " : "") + g(b / a);
    }
    return {pass, "t = " + g(lat.t_end()) + ", ratios n=1..4: " + ratios};
}

// ---- 8 ----
Outcome positivity() {
    const auto r = positivity_refinement(KernelModel::brownian(1.0), FiniteMeasure::delta(), SigmaSpec::linear(1.0),
                                         acceptance_lattice(), seed_range(1, 1000));
    const bool pass = r.fraction_coarse < kPositivityFraction && r.fraction_fine < r.fraction_coarse;
    return {pass, "fraction below −ε_num " + g(r.fraction_coarse) + " → " + g(r.fraction_fine) + " (" +
                      std::to_string(r.fine.nx) + "×" + std::to_string(r.fine.nt) + "), counts " +
                      std::to_string(r.count_coarse) + " → " + std::to_string(r.count_fine) + ", ε_num ≤ " +
                      g(r.eps_num) + ", at t_end " + g(r.eps_num_end)};
}

// ---- 9 ----
Outcome stability() {
    StabilityOptions o;
    const auto rows = stability_compare(KernelModel::brownian(1.0), FiniteMeasure::delta(), SigmaSpec::linear(1.0),
                                        {0.2, 0.1, 0.05, 0.025}, 4.0, seed_range(1, 200), o);
    bool pass = true;
    std::string d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        pass = pass && rows[i].distance <= rows[i].bound;
        if (i) pass = pass && rows[i].distance <= rows[i - 1].distance + kStabilitySe * (rows[i].std_error + rows[i - 1].std_error);
        d += (i ? ", " : "") + g(rows[i].distance) + "≤" + g(rows[i].bound);
    }
    return {pass, "β = 4, distance≤bound for ε = 0.2..0.025: " + d};
}

// ---- 10 ----
Outcome nochaos() {
    const auto rows = nochaos_sup_scan(KernelModel::brownian(1.0), FiniteMeasure::delta(), SigmaSpec::linear(1.0), 0.5,
                                       {5.0, 10.0, 20.0}, seed_range(1, 200));
    const double change = std::abs(rows[2].median - rows[1].median) / rows[1].median;
    return {change < kSupChange, "median sup " + g(rows[0].median) + ", " + g(rows[1].median) + ", " +
                                     g(rows[2].median) + "; change 10→20 = " + g(change) + ", Δx = " + g(rows[0].dx)};
}

// ---- 11 ----
Outcome tail_decay() {
    const auto k = KernelModel::brownian(1.0);
    const double t = 0.5;
    std::vector<double> xs;
    for (int j = 0; j <= 40; ++j) xs.push_back(0.1 * j);
    const auto exact = tail_decay_fit(mean_rows(k, FiniteMeasure::delta(), t, xs), 0.0);
    const double rel = std::abs(exact.slope * 2.0 * t + 1.0);
    const MildStepper st(k, FiniteMeasure::delta(), SigmaSpec::linear(1.0), acceptance_lattice());
    std::vector<double> coarse;
    for (int j = 0; j <= 16; ++j) coarse.push_back(0.25 * j);
    const auto mc = tail_decay_fit(moment_table(sample_probes(st, seed_range(1, 1000), {t}, coarse), {6.0}).rows, 0.0);
    const bool pass = rel <= kTailRelTol && mc.slope + kSe * mc.std_error < 0.0;
    return {pass, "k=1 slope " + g(exact.slope) + " (rel error " + g(rel) + "), k=6 slope " + g(mc.slope) + " ± " +
                      g(mc.std_error)};
}

// ---- 12 ----
Outcome small_t() {
    std::vector<double> t;
    for (int e = 4; e <= 10; ++e) t.push_back(std::ldexp(1.0, -e));
    bool pass = true;
    std::string d;
    for (double alpha : {1.5, 2.0}) {
        SmallTOptions o;
        o.solver.truncation_tol = 1e-2;
        const auto r = small_t_scan(KernelModel::stable(alpha, 1.0), make_positive_definite_example(1.0),
                                    SigmaSpec::linear(1.0), t, 2.0, seed_range(1, 200), o);
        double lo = INFINITY, hi = 0.0, lo_margin = INFINITY;
        for (std::size_t i = 0; i < t.size(); ++i) {
            lo = std::min(lo, r.value[i]);
            hi = std::max(hi, r.value[i]);
            lo_margin = std::min(lo_margin, r.value[i] - kSe * r.std_error[i]);
        }
        pass = pass && lo_margin > 0.0 && hi <= kSmallTBand * lo;
        d += (d.empty() ? "" : "; ") + std::string("α=") + g(alpha) + " range [" + g(lo) + ", " + g(hi) + "] ratio " + g(hi / lo);
    }
    return {pass, d};
}

// ---- 13 ----
int run_cli(const std::string& cli, const std::string& config, const fs::path& out) {
    const std::string cmd = "'" + cli + "' run '" + config + "' -o '" + out.string() + "' > /dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Outcome determinism(const std::string& cli, const std::string& config) {
    if (cli.empty()) return {false, "no --cli executable given"};
    const auto base = fs::temp_directory_path() / "levyheat_determinism";
    fs::remove_all(base);
    const auto t0 = std::chrono::steady_clock::now();
    const int a = run_cli(cli, config, base / "a");
    const double first = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const int b = run_cli(cli, config, base / "b");
    bool same = true;
    int files = 0;
    for (const char* f : {"moments.csv", "verdicts.csv"}) {
        ++files;
        same = same && fs::exists(base / "a" / f) && read_file(base / "a" / f) == read_file(base / "b" / f);
    }
    return {a == 0 && b == 0 && same, "exit codes " + std::to_string(a) + ", " + std::to_string(b) + "; " +
                                          std::to_string(files) + " CSVs " + (same ? "identical" : "differ") +
                                          "; one run " + fmt("%.1f", first) + " s"};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria, one line each"};
    std::vector<int> only;
    app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
    std::string cli_path;
    app.add_option("--cli", cli_path, "levyheat executable for the determinism criterion");
    std::string config = std::string(LEVYHEAT_SOURCE_DIR) + "/configs/pam_delta0.json";
    app.add_option("--config", config, "bundled config for the determinism criterion");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {1, "kernel golden values", kernel_golden},
        {2, "resolvent closed forms", resolvent_closed_forms},
        {3, "convolution triple and ordering", convolution_triple},
        {4, "iterated square-convolution bound", star_certification},
        {5, "mean identity", mean_identity},
        {6, "second-moment oracle equivalence", oracle_equivalence},
        {7, "Picard contraction", picard_contraction},
        {8, "positivity", positivity},
        {9, "stability in the initial datum", stability},
        {10, "no-chaos sup scan", nochaos},
        {11, "tail decay", tail_decay},
        {12, "small-t tightness", small_t},
        {13, "determinism", [&] { return determinism(cli_path, config); }},
    };
    const std::set<int> pick(only.begin(), only.end());
    int failed = 0;
    for (const auto& c : all) {
        if (!pick.empty() && !pick.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("%-4s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
