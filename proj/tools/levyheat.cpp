#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "levyheat/experiment.hpp"

namespace fs = std::filesystem;
using namespace levyheat;

namespace {

enum Exit { Ok = 0, Runtime = 1, ClaimFailed = 2, ConfigBad = 64, IoBad = 74 };

int exit_for(ErrorCode c) {
    if (c == ErrorCode::ConfigInvalid) return ConfigBad;
    if (c == ErrorCode::Io) return IoBad;
    return Runtime;
}

// Diagnostics are one line each.
int report_error(const std::string& what, int code) {
    std::string line = what;
    for (auto& ch : line)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "levyheat: " << line << "\n";
    return code;
}

template <class F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        return report_error(e.what(), exit_for(e.code()));
    } catch (const nlohmann::json::exception& e) {
        return report_error(std::string("config invalid: ") + e.what(), ConfigBad);
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error(std::string("io error: ") + e.what(), IoBad);
    } catch (const std::bad_alloc&) {
        return report_error("allocation failed", Runtime);
    } catch (const std::exception& e) {
        return report_error(e.what(), Runtime);
    }
}

int threads_or_default(int t) { return t > 0 ? t : replica_threads(); }

fs::path run_dir(const ExperimentConfig& c, const std::string& override_dir) {
    return override_dir.empty() ? fs::path(c.output_dir) : fs::path(override_dir);
}

int cmd_run(const std::string& path, const std::string& out_dir, int threads) {
    return guarded([&] {
        auto c = load_config(path);
        const fs::path dir = run_dir(c, out_dir);
        Experiment e(c, threads_or_default(threads));
        const auto r = e.run();
        write_run(dir, c, r);
        for (const auto& w : r.warnings) std::cerr << "levyheat: warning: " << w << "\n";
        return r.all_pass() ? Ok : ClaimFailed;
    });
}

int cmd_verify(const std::string& target, const std::string& kernel_json, int points, int threads) {
    return guarded([&] {
        if (target == "convolution") {
            std::vector<KernelModel> ks;
            if (!kernel_json.empty()) {
                try {
                    ks.push_back(kernel_from_json(nlohmann::json::parse(kernel_json)));
                } catch (const nlohmann::json::parse_error& e) {
                    fail(ErrorCode::ConfigInvalid, std::string("kernel is not valid JSON: ") + e.what());
                }
            } else {
                ks = {KernelModel::brownian(1.0), KernelModel::stable(1.2, 1.0), KernelModel::stable(1.5, 1.0),
                      KernelModel::stable(1.8, 1.0)};
            }
            const auto rows = convolution_table(ks, points);
            std::cout << convolution_csv(rows);
            for (const auto& r : rows)
                if (!r.v.holds()) return int(ClaimFailed);
            return int(Ok);
        }
        Experiment e(load_config(target), threads_or_default(threads));
        const auto r = e.run();
        std::cout << verdicts_csv(r.verdicts);
        return r.all_pass() ? int(Ok) : int(ClaimFailed);
    });
}

int cmd_report(const std::string& dir, const std::string& out) {
    return guarded([&] {
        const auto text = report_csv(csv::parse(read_file(fs::path(dir) / "moments.csv")));
        if (out.empty())
            std::cout << text;
        else
            write_file(out, text);
        return int(Ok);
    });
}

int cmd_simulate(const std::string& path, const std::string& out_dir, int threads) {
    return guarded([&] {
        auto c = load_config(path);
        Experiment e(c, threads_or_default(threads));
        write_simulation(run_dir(c, out_dir), e);
        for (const auto& w : e.stepper().warnings()) std::cerr << "levyheat: warning: " << w << "\n";
        return int(Ok);
    });
}

// Inline JSON is a kernel spec, optionally carrying "lip", "beta", "k" and "a"; flags override.
int cmd_kernel(const std::string& text, double lip, std::vector<double> beta, std::vector<double> k,
               std::vector<double> a) {
    nlohmann::json out;
    int code = Ok;
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_object()) fail(ErrorCode::ConfigInvalid, "kernel spec must be a JSON object");
        auto take = [&](const char* key, std::vector<double>& dst, std::vector<double> dflt) {
            if (j.contains(key)) {
                if (dst.empty()) dst = j.at(key).get<std::vector<double>>();
                j.erase(key);
            }
            if (dst.empty()) dst = std::move(dflt);
        };
        take("beta", beta, {1.0});
        take("k", k, {2.0});
        take("a", a, {0.01});
        if (j.contains("lip")) {
            if (std::isnan(lip)) lip = j.at("lip").get<double>();
            j.erase("lip");
        }
        if (std::isnan(lip)) lip = 1.0;
        if (!j.contains("kind")) fail(ErrorCode::ConfigInvalid, "kernel spec needs a 'kind'");
        // Validate like a config kernel so unknown fields are rejected.
        nlohmann::json probe{{"kernel", j},
                             {"u0", {{"atoms", {{0.0, 1.0}}}}},
                             {"sigma", {{"kind", "linear"}, {"lambda", 0.0}}},
                             {"grid", {{"dt", 1.0}, {"dx", 1.0}, {"L", 1.0}, {"t_end", 1.0}}},
                             {"seeds", nlohmann::json::array()}};
        if (auto e = schema::config_validator().first_error(probe)) fail(ErrorCode::ConfigInvalid, *e);
        out = kernel_info(kernel_from_json(j), lip, beta, k, a);
    } catch (const Error& e) {
        out = {{"error", e.what()}};
        code = exit_for(e.code());
    } catch (const nlohmann::json::exception& e) {
        out = {{"error", std::string("config invalid: ") + e.what()}};
        code = ConfigBad;
    }
    std::cout << out.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"levyheat: moment simulation and bound verification for the stochastic heat equation"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "replica threads (default LEVYHEAT_THREADS or hardware concurrency)");

    std::string run_cfg, run_out;
    auto* run = app.add_subcommand("run", "run the claims of a config and write a run directory");
    run->add_option("config", run_cfg, "config JSON")->required();
    run->add_option("-o,--output-dir", run_out, "overrides output_dir");

    std::string ver_target, ver_kernel;
    int ver_points = 9;
    auto* verify = app.add_subcommand("verify", "print the verdict CSV of a config, or of 'convolution'");
    verify->add_option("target", ver_target, "config JSON or the word 'convolution'")->required();
    verify->add_option("--kernel", ver_kernel, "kernel JSON for 'convolution' (default: Brownian and stable 1.2/1.5/1.8)");
    verify->add_option("--points", ver_points, "log-grid points in t for 'convolution'")->check(CLI::Range(2, 1000));

    std::string rep_dir, rep_out;
    auto* report = app.add_subcommand("report", "long-format CSV of moments and bounds from a run directory");
    report->add_option("run_dir", rep_dir, "run directory")->required();
    report->add_option("-o,--output", rep_out, "file to write instead of stdout");

    std::string sim_cfg, sim_out;
    auto* simulate = app.add_subcommand("simulate", "write field snapshots and moments for a config");
    simulate->add_option("config", sim_cfg, "config JSON")->required();
    simulate->add_option("-o,--output-dir", sim_out, "overrides output_dir");

    std::string ker_json;
    double ker_lip = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> ker_beta, ker_k, ker_a;
    auto* kernel = app.add_subcommand("kernel", "print kernel functionals as JSON");
    kernel->add_option("spec", ker_json, "inline kernel JSON")->required();
    kernel->add_option("--lip", ker_lip, "Lipschitz constant of σ");
    kernel->add_option("--beta", ker_beta, "β values for Υ")->delimiter(',');
    kernel->add_option("--k", ker_k, "moment orders for γ and 𝔗")->delimiter(',');
    kernel->add_option("--a", ker_a, "levels for 𝔤")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : ConfigBad;
    }

    if (*run) return cmd_run(run_cfg, run_out, threads);
    if (*verify) return cmd_verify(ver_target, ver_kernel, ver_points, threads);
    if (*report) return cmd_report(rep_dir, rep_out);
    if (*simulate) return cmd_simulate(sim_cfg, sim_out, threads);
    if (*kernel) return cmd_kernel(ker_json, ker_lip, ker_beta, ker_k, ker_a);
    return Runtime;
}
