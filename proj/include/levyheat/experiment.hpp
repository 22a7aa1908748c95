#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fftw3.h>
#include <json.hpp>

#include "levyheat/analysis.hpp"
#include "levyheat/config.hpp"
#include "levyheat/oracle.hpp"

namespace levyheat {

inline constexpr const char* version = "1.0.0";

// ---- RFC-4180 CSV ----

namespace csv {

inline std::string field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

inline std::string number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return detail::num(v);
}

inline std::string line(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + field(cells[i]);
    return out + "\r\n";
}

// Records of an RFC-4180 document; quoted fields may hold commas, quotes and line breaks.
inline std::vector<std::vector<std::string>> parse(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cur;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = any = true;
        } else if (c == ',') {
            row.push_back(std::move(cur));
            cur.clear();
            any = true;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !cur.empty()) {
                row.push_back(std::move(cur));
                rows.push_back(std::move(row));
            }
            cur.clear();
            row.clear();
            any = false;
        } else {
            cur += c;
            any = true;
        }
    }
    if (quoted) fail(ErrorCode::Io, "csv: unterminated quoted field");
    if (any || !cur.empty()) {
        row.push_back(std::move(cur));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace csv

inline std::string moments_csv(const MomentTable& m) {
    std::string out = csv::line({"t", "x", "k", "estimate", "std_error", "bound_exist_unique", "bound_h1"});
    for (const auto& r : m.rows)
        out += csv::line({csv::number(r.t), csv::number(r.x), std::to_string(r.k), csv::number(r.estimate),
                          csv::number(r.std_error), csv::number(r.bound_exist_unique), csv::number(r.bound_h1)});
    return out;
}

inline std::string verdicts_csv(const std::vector<BoundVerdict>& v) {
    std::string out = csv::line({"claim_id", "lhs", "rhs", "std_error", "pass"});
    for (const auto& b : v)
        out += csv::line({b.claim_id, csv::number(b.lhs), csv::number(b.rhs), csv::number(b.std_error),
                          b.pass ? "true" : "false"});
    return out;
}

inline nlohmann::json verdicts_json(const std::vector<BoundVerdict>& v) {
    auto out = nlohmann::json::array();
    for (const auto& b : v)
        out.push_back({{"claim_id", b.claim_id},
                       {"lhs", csv::number(b.lhs)},
                       {"rhs", csv::number(b.rhs)},
                       {"std_error", csv::number(b.std_error)},
                       {"pass", b.pass},
                       {"metadata", b.metadata}});
    return out;
}

// Long format: one row per moment and bound kind.
inline std::string report_csv(const std::vector<std::vector<std::string>>& moments) {
    if (moments.empty()) fail(ErrorCode::Io, "moments.csv is empty");
    const auto& h = moments.front();
    auto col = [&](const std::string& name) {
        const auto it = std::find(h.begin(), h.end(), name);
        if (it == h.end()) fail(ErrorCode::Io, "moments.csv lacks column '" + name + "'");
        return std::size_t(it - h.begin());
    };
    const std::size_t t = col("t"), x = col("x"), k = col("k"), e = col("estimate"), se = col("std_error"),
                      b1 = col("bound_exist_unique"), b2 = col("bound_h1");
    std::string out = csv::line({"t", "x", "k", "estimate", "std_error", "bound", "bound_kind"});
    for (std::size_t r = 1; r < moments.size(); ++r) {
        const auto& row = moments[r];
        if (row.size() != h.size()) fail(ErrorCode::Io, "moments.csv row " + std::to_string(r) + " has a wrong width");
        out += csv::line({row[t], row[x], row[k], row[e], row[se], row[b1], "exist_unique"});
        out += csv::line({row[t], row[x], row[k], row[e], row[se], row[b2], "h1"});
    }
    return out;
}

// ---- file output ----

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot read '" + p.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write '" + p.string() + "'");
    out << text;
    out.flush();
    if (!out) fail(ErrorCode::Io, "write to '" + p.string() + "' failed");
}

inline void make_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec || !std::filesystem::is_directory(p)) fail(ErrorCode::Io, "cannot create directory '" + p.string() + "'");
}

// ---- claims ----

struct RunResult {
    MomentTable moments;
    std::vector<BoundVerdict> verdicts;
    std::vector<std::string> warnings;
    nlohmann::json claims = nlohmann::json::object();  // per-claim summary values

    bool all_pass() const {
        return std::all_of(verdicts.begin(), verdicts.end(), [](const BoundVerdict& v) { return v.pass; });
    }
};

class Experiment {
public:
    Experiment(ExperimentConfig c, int threads = replica_threads()) : c_(std::move(c)), threads_(threads) {}

    const ExperimentConfig& config() const { return c_; }

    RunResult run() {
        RunResult out;
        if (c_.claims.empty()) return out;
        for (const auto& id : c_.claims) {
            if (id == "mean_identity") mean_identity(out);
            else if (id == "second_moment_oracle") second_moment_oracle(out);
            else if (id == "exist_unique_bound") exist_unique_bound(out);
            else if (id == "h1_bound") h1_bound(out);
            else if (id == "positivity") positivity(out);
            else if (id == "tail_decay") tail_decay(out);
            else if (id == "nochaos_sup") nochaos_sup(out);
            else fail(ErrorCode::ConfigInvalid, "unknown claim '" + id + "'");
        }
        out.moments = table();
        if (calibrated_) fill_bounds(out.moments, bound_model(), c_eps_, c_.claim.eps);
        else
            for (auto& r : out.moments.rows) r.bound_h1 = bound_model().h1_bound(r.t, r.x, r.k);
        for (const auto& w : stepper().warnings()) out.warnings.push_back(w);
        return out;
    }

    const MildStepper& stepper() {
        if (!stepper_) stepper_ = std::make_unique<MildStepper>(c_.kernel, c_.u0, c_.sigma, c_.lattice, c_.solver);
        return *stepper_;
    }

    const ProbeSamples& probes() {
        if (!probes_) probes_ = std::make_unique<ProbeSamples>(sample_probes(stepper(), c_.seeds, c_.t_probe, c_.x_probe, threads_));
        return *probes_;
    }

    MomentTable table() {
        if (c_.seeds.empty()) fail(ErrorCode::ConfigInvalid, "moments need at least one seed");
        return moment_table(probes(), c_.k_list);
    }

private:
    const MomentBoundModel& bound_model() {
        if (!bounds_) bounds_ = std::make_unique<MomentBoundModel>(moment_bound_model(c_.kernel, c_.u0, c_.sigma));
        return *bounds_;
    }

    static std::map<std::string, std::string> at(double t, double x) {
        return {{"t", detail::num(t)}, {"x", detail::num(x)}};
    }

    // E u = p_t * u0 exactly, since the stochastic part has mean zero.
    void mean_identity(RunResult& out) {
        const auto& s = probes();
        const auto st = probe_stats(s, [](double u) { return u; });
        for (std::size_t a = 0; a < s.t.size(); ++a)
            for (std::size_t b = 0; b < s.x.size(); ++b) {
                const double exact = heat_convolve(c_.kernel, c_.u0, s.t[a], s.x[b]);
                const auto& q = st[s.index(a, b)];
                auto m = at(s.t[a], s.x[b]);
                m["estimate"] = detail::num(q.mean);
                m["exact"] = detail::num(exact);
                out.verdicts.push_back(make_verdict("mean_identity", std::abs(q.mean - exact), 0.0, q.std_error, m));
            }
    }

    void second_moment_oracle(RunResult& out) {
        if (c_.sigma.kind() != SigmaSpec::Kind::Linear)
            fail(ErrorCode::NotApplicable, "the second-moment oracle needs a linear σ");
        const auto& s = probes();
        const auto& lat = c_.lattice;
        const auto nodes = oracle_time_nodes(*std::max_element(s.t.begin(), s.t.end()), s.t);
        const XGrid xg{lat.x0(), lat.dx(), lat.nx};
        const auto f = pam_second_moment_oracle(c_.kernel, c_.u0, c_.sigma.lambda(), nodes, xg);
        const auto st = probe_stats(s, [](double u) { return u * u; });
        for (std::size_t a = 0; a < s.t.size(); ++a) {
            const auto n = std::size_t(std::find(nodes.begin(), nodes.end(), s.t[a]) - nodes.begin());
            if (n == nodes.size()) fail(ErrorCode::GridMismatch, "oracle nodes miss a probe time");
            for (std::size_t b = 0; b < s.x.size(); ++b) {
                const double ref = f(int(n), s.cols[b]);
                const auto& q = st[s.index(a, b)];
                auto m = at(s.t[a], s.x[b]);
                m["estimate"] = detail::num(q.mean);
                m["oracle"] = detail::num(ref);
                out.verdicts.push_back(make_verdict("second_moment_oracle", std::abs(q.mean - ref), 0.0, q.std_error, m));
            }
        }
    }

    // C_ε is fitted on the even-indexed probe times and checked on the odd ones (on x when only
    // one time is probed).
    void exist_unique_bound(RunResult& out) {
        const auto all = table();
        const auto& s = probes();
        const bool by_t = s.t.size() >= 2;
        if (!by_t && s.x.size() < 2) fail(ErrorCode::InsufficientRange, "calibration needs two probe times or points");
        MomentTable train, check;
        for (const auto& r : all.rows) {
            const auto pos = by_t ? std::find(s.t.begin(), s.t.end(), r.t) - s.t.begin()
                                  : std::find(s.x.begin(), s.x.end(), r.x) - s.x.begin();
            (pos % 2 == 0 ? train : check).rows.push_back(r);
        }
        c_eps_ = calibrate_c_eps(train, bound_model(), c_.claim.eps);
        calibrated_ = true;
        auto v = check_exist_unique_bound(check, bound_model(), c_eps_, c_.claim.eps);
        int vacuous = 0;
        for (auto& b : v) {
            vacuous += b.metadata.at("vacuous") == "true";
            out.verdicts.push_back(std::move(b));
        }
        if (vacuous) out.warnings.push_back("exist_unique_bound: " + std::to_string(vacuous) + " vacuous rows");
        out.claims["exist_unique_bound"] = {{"c_eps", c_eps_}, {"eps", c_.claim.eps}, {"train_rows", train.rows.size()}};
    }

    void h1_bound(RunResult& out) {
        const auto all = table();
        int used = 0;
        for (const auto& r : all.rows) {
            if (r.t > bound_model().h1_horizon(r.k)) continue;
            auto m = at(r.t, r.x);
            m["k"] = std::to_string(r.k);
            out.verdicts.push_back(make_verdict("h1_bound", r.estimate, bound_model().h1_bound(r.t, r.x, r.k), r.std_error, m));
            ++used;
        }
        if (!used) fail(ErrorCode::NotApplicable, "no probe time lies inside the first-iterate horizon");
    }

    void positivity(RunResult& out) {
        const auto p = positivity_refinement(c_.kernel, c_.u0, c_.sigma, c_.lattice, c_.seeds,
                                             c_.claim.positivity_factor, c_.solver, threads_);
        const std::map<std::string, std::string> m{{"eps_num", detail::num(p.eps_num)},
                                                   {"eps_num_end", detail::num(p.eps_num_end)},
                                                   {"count_coarse", std::to_string(p.count_coarse)},
                                                   {"count_fine", std::to_string(p.count_fine)},
                                                   {"min_coarse", detail::num(p.min_coarse)},
                                                   {"min_fine", detail::num(p.min_fine)}};
        out.verdicts.push_back(make_verdict("positivity", p.fraction_coarse, c_.claim.positivity_max_fraction, 0.0, m));
        out.verdicts.push_back(make_verdict("positivity_refinement", p.fraction_fine, p.fraction_coarse, 0.0, m));
        out.claims["positivity"] = {{"eps_num", p.eps_num},
                                    {"eps_num_end", p.eps_num_end},
                                    {"fraction_coarse", p.fraction_coarse},
                                    {"fraction_fine", p.fraction_fine},
                                    {"fine_nx", p.fine.nx},
                                    {"fine_nt", p.fine.nt}};
    }

    // k = 1 slope against the Gaussian rate −1/(2κt) to 2 %; the MC slope of moment tail_k below
    // zero by 3 standard errors.
    void tail_decay(RunResult& out) {
        if (c_.kernel.kind() != KernelKind::Brownian) fail(ErrorCode::NotApplicable, "tail decay is stated for the Brownian kernel");
        const double t = c_.claim.tail_t.value_or(c_.lattice.t_end());
        const double K = c_.u0.support_radius();
        if (!std::isfinite(K)) fail(ErrorCode::NotApplicable, "tail decay needs compactly supported initial data");
        const double hi = std::min(c_.lattice.L - c_.lattice.dx(), 2.0 * K + 6.0 * std::sqrt(c_.kernel.kappa() * t));
        std::vector<double> xs;
        for (int j = 0; j <= 16; ++j) xs.push_back(2.0 * K + (hi - 2.0 * K) * j / 16.0);
        const auto exact = tail_decay_fit(mean_rows(c_.kernel, c_.u0, t, xs), K);
        const double rate = -1.0 / (2.0 * c_.kernel.kappa() * t);
        out.verdicts.push_back(make_verdict("tail_decay_mean", std::abs(exact.slope / rate - 1.0), 0.02, 0.0,
                                            {{"t", detail::num(t)}, {"slope", detail::num(exact.slope)},
                                             {"rate", detail::num(rate)}}));
        const auto s = sample_probes(stepper(), c_.seeds, {t}, xs, threads_);
        const auto mc = tail_decay_fit(moment_table(s, {double(c_.claim.tail_k)}).rows, K);
        out.verdicts.push_back(make_verdict("tail_decay_moment", mc.slope + 3.0 * mc.std_error, 0.0, 0.0,
                                            {{"t", detail::num(t)}, {"k", std::to_string(c_.claim.tail_k)},
                                             {"slope", detail::num(mc.slope)}, {"slope_se", detail::num(mc.std_error)}}));
        out.claims["tail_decay"] = {{"mean_slope", exact.slope}, {"moment_slope", mc.slope},
                                    {"moment_slope_se", mc.std_error}};
    }

    void nochaos_sup(RunResult& out) {
        auto L = c_.claim.nochaos_L;
        std::sort(L.begin(), L.end());
        SupScanOptions o;
        o.dx = c_.lattice.dx();
        o.nt = c_.lattice.nt;
        o.solver = c_.solver;
        o.threads = threads_;
        const auto rows = nochaos_sup_scan(c_.kernel, c_.u0, c_.sigma, c_.lattice.t_end(), L, c_.seeds, o);
        const auto& a = rows[rows.size() - 2];
        const auto& b = rows.back();
        const double change = std::abs(b.median - a.median) / a.median;
        out.verdicts.push_back(make_verdict("nochaos_sup", change, c_.claim.nochaos_max_change, 0.0,
                                            {{"L_from", detail::num(a.L)}, {"L_to", detail::num(b.L)},
                                             {"median_from", detail::num(a.median)},
                                             {"median_to", detail::num(b.median)}, {"dx", detail::num(b.dx)}}));
        auto j = nlohmann::json::array();
        for (const auto& r : rows) j.push_back({{"L", r.L}, {"median", r.median}, {"dx", r.dx}});
        out.claims["nochaos_sup"] = j;
    }

    ExperimentConfig c_;
    int threads_;
    std::unique_ptr<MildStepper> stepper_;
    std::unique_ptr<ProbeSamples> probes_;
    std::unique_ptr<MomentBoundModel> bounds_;
    double c_eps_ = 0.0;
    bool calibrated_ = false;
};

// ---- run directory ----

inline nlohmann::json manifest(const ExperimentConfig& c, const RunResult& r) {
    const auto& lat = c.lattice;
    return {{"config_hash", config_hash(c.raw)},
            {"config", c.raw},
            {"versions",
             {{"levyheat", version},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"fftw", std::string(fftw_version)},
              {"compiler", std::string(__VERSION__)}}},
            {"seeds", c.seeds},
            {"lattice", {{"L", lat.L}, {"nx", lat.nx}, {"dx", lat.dx()}, {"dt", lat.dt}, {"nt", lat.nt}}},
            {"claims", c.claims},
            {"claim_results", r.claims},
            {"all_pass", r.all_pass()},
            {"warnings", r.warnings}};
}

// Writes manifest.json, plus moments.csv, verdicts.csv and verdicts.json when claims were selected.
inline void write_run(const std::filesystem::path& dir, const ExperimentConfig& c, const RunResult& r) {
    make_dir(dir);
    write_file(dir / "manifest.json", manifest(c, r).dump(2) + "\n");
    if (c.claims.empty()) return;
    write_file(dir / "moments.csv", moments_csv(r.moments));
    write_file(dir / "verdicts.csv", verdicts_csv(r.verdicts));
    write_file(dir / "verdicts.json", verdicts_json(r.verdicts).dump(2) + "\n");
}

// ---- simulate ----

// Field snapshots of the first `snapshot_replicas` seeds at `snapshot_t` (default t_end):
// columns seed, t, x, u.
inline std::string snapshots_csv(Experiment& e) {
    const auto& c = e.config();
    const auto& st = e.stepper();
    const auto& lat = c.lattice;
    std::vector<double> ts = c.outputs.snapshot_t.empty() ? std::vector<double>{lat.t_end()} : c.outputs.snapshot_t;
    std::vector<std::int64_t> rows;
    for (double t : ts) rows.push_back(lattice_row(lat, t));
    const std::int64_t last = *std::max_element(rows.begin(), rows.end());
    const std::size_t n = std::min<std::size_t>(c.seeds.size(), std::size_t(std::max(0, c.outputs.snapshot_replicas)));
    std::string out = csv::line({"seed", "t", "x", "u"});
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<std::vector<double>> snap(rows.size());
        auto state = st.initial_state();
        st.advance(noise_rows(lat, c.seeds[r]), state, last, [&](std::int64_t i, const double* u) {
            for (std::size_t a = 0; a < rows.size(); ++a)
                if (rows[a] == i) snap[a].assign(u, u + lat.nx);
        });
        for (std::size_t a = 0; a < rows.size(); ++a)
            for (int j = 0; j < lat.nx; ++j)
                out += csv::line({std::to_string(c.seeds[r]), csv::number(lat.t(rows[a])), csv::number(lat.x(j)),
                                  csv::number(snap[a][std::size_t(j)])});
    }
    return out;
}

inline void write_simulation(const std::filesystem::path& dir, Experiment& e) {
    const auto& c = e.config();
    make_dir(dir);
    write_file(dir / "snapshots.csv", snapshots_csv(e));
    if (!c.seeds.empty()) write_file(dir / "moments.csv", moments_csv(e.table()));
    if (c.outputs.noise_dump) {
        const std::size_t n = std::min<std::size_t>(c.seeds.size(), std::size_t(std::max(0, c.outputs.snapshot_replicas)));
        const auto& lat = c.lattice;
        for (std::size_t r = 0; r < n; ++r)
            write_noise_file(sample_noise(lat.dt, lat.dx(), lat.nt, lat.nx, c.seeds[r]),
                             (dir / ("noise_" + std::to_string(c.seeds[r]) + ".bin")).string());
    }
}

// ---- convolution inequality table ----

struct ConvolutionRow {
    std::string kernel;
    double t = 0.0;
    LemmaPP v;
};

// p_t(0)∫p_r(0)dr ≤ ∫p_{t−s}(0)p_s(0)ds ≤ 2Θ p_t(0)∫p_r(0)dr on a log grid of t in [1e−3, 10].
inline std::vector<ConvolutionRow> convolution_table(const std::vector<KernelModel>& kernels, int points = 9) {
    std::vector<ConvolutionRow> out;
    for (const auto& k : kernels) {
        const double theta = theta_estimate(k).value;
        std::string name = kernel_kind_name(k.kind());
        if (k.kind() == KernelKind::Stable) name += "(" + detail::num(k.alpha()) + ")";
        for (int i = 0; i < points; ++i) {
            const double t = 1e-3 * std::pow(1e4, double(i) / (points - 1));
            out.push_back({name, t, check_lemma_pp(k, t, theta)});
        }
    }
    return out;
}

inline std::string convolution_csv(const std::vector<ConvolutionRow>& rows) {
    std::string out = csv::line({"kernel", "t", "lower", "mid", "upper", "pass"});
    for (const auto& r : rows)
        out += csv::line({r.kernel, csv::number(r.t), csv::number(r.v.lower), csv::number(r.v.mid),
                          csv::number(r.v.upper), r.v.holds() ? "true" : "false"});
    return out;
}

// ---- kernel functionals ----

// {theta, upsilon(β), gamma(k), g(a), frak_T(k)}; errors become {"error": "..."}.
inline nlohmann::json kernel_info(const KernelModel& k, double lip, const std::vector<double>& beta,
                                  const std::vector<double>& k_list, const std::vector<double>& a_list) {
    const auto f = functionals(k, lip);
    nlohmann::json j{{"kernel", kernel_to_json(k)}, {"lip", lip}, {"theta", f.theta}, {"beta", beta},
                     {"k", k_list},                 {"a", a_list}};
    if (f.theta_warning) j["theta_warning"] = *f.theta_warning;
    auto ups = nlohmann::json::array(), gam = nlohmann::json::array(), g = nlohmann::json::array(),
         T = nlohmann::json::array();
    for (double b : beta) ups.push_back(f.upsilon(b));
    for (double kk : k_list) {
        gam.push_back(f.gamma(kk));
        T.push_back(f.frak_T(kk));
    }
    for (double a : a_list) g.push_back(f.g(a));
    j["upsilon"] = ups;
    j["gamma"] = gam;
    j["g"] = g;
    j["frak_T"] = T;
    return j;
}

}  // namespace levyheat
