#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "levyheat/config_schema.hpp"
#include "levyheat/levy_kernel.hpp"
#include "levyheat/measure.hpp"
#include "levyheat/solver.hpp"

namespace levyheat {

namespace schema {

// Checks a document against the JSON Schema keywords used by the published config schema:
// type, required, properties, additionalProperties (false only), items, minItems, maxItems,
// minLength, enum, const, minimum, maximum, exclusiveMinimum, oneOf and local "#/$defs/" refs.
class Validator {
public:
    explicit Validator(nlohmann::json root) : root_(std::move(root)) {}

    // First violation as "<json pointer>: <reason>", or nothing.
    std::optional<std::string> first_error(const nlohmann::json& doc) const { return check(root_, doc, ""); }

private:
    static std::string where(const std::string& path) { return path.empty() ? "/" : path; }

    static bool is_type(const nlohmann::json& v, const std::string& t) {
        if (t == "object") return v.is_object();
        if (t == "array") return v.is_array();
        if (t == "string") return v.is_string();
        if (t == "boolean") return v.is_boolean();
        if (t == "null") return v.is_null();
        if (t == "number") return v.is_number();
        if (t == "integer") {
            if (v.is_number_integer()) return true;
            if (!v.is_number_float()) return false;
            const double d = v.get<double>();
            return std::isfinite(d) && d == std::floor(d);
        }
        return false;
    }

    const nlohmann::json& resolve(const nlohmann::json& s) const {
        const std::string ref = s.at("$ref").get<std::string>();
        const std::string prefix = "#/$defs/";
        if (ref.rfind(prefix, 0) != 0) fail(ErrorCode::ConfigInvalid, "schema: unsupported $ref " + ref);
        return root_.at("$defs").at(ref.substr(prefix.size()));
    }

    std::optional<std::string> check(const nlohmann::json& s, const nlohmann::json& v, const std::string& path) const {
        if (s.contains("$ref")) return check(resolve(s), v, path);
        if (s.contains("oneOf")) {
            if (auto e = check_one_of(s.at("oneOf"), v, path)) return e;
        }
        if (s.contains("type") && !is_type(v, s.at("type").get<std::string>()))
            return where(path) + ": expected " + s.at("type").get<std::string>();
        if (s.contains("const") && v != s.at("const")) return where(path) + ": must equal " + s.at("const").dump();
        if (s.contains("enum")) {
            bool found = false;
            std::string allowed;
            for (const auto& e : s.at("enum")) {
                found = found || v == e;
                allowed += (allowed.empty() ? "" : ", ") + e.dump();
            }
            if (!found) return where(path) + ": " + v.dump() + " is not one of " + allowed;
        }
        if (v.is_number()) {
            const double d = v.get<double>();
            if (!std::isfinite(d)) return where(path) + ": must be finite";
            if (s.contains("minimum") && d < s.at("minimum").get<double>())
                return where(path) + ": must be >= " + s.at("minimum").dump();
            if (s.contains("maximum") && d > s.at("maximum").get<double>())
                return where(path) + ": must be <= " + s.at("maximum").dump();
            if (s.contains("exclusiveMinimum") && !(d > s.at("exclusiveMinimum").get<double>()))
                return where(path) + ": must be > " + s.at("exclusiveMinimum").dump();
        }
        if (v.is_string() && s.contains("minLength") && v.get<std::string>().size() < s.at("minLength").get<std::size_t>())
            return where(path) + ": string too short";
        if (v.is_array()) {
            if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>())
                return where(path) + ": needs at least " + s.at("minItems").dump() + " items";
            if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>())
                return where(path) + ": allows at most " + s.at("maxItems").dump() + " items";
            if (s.contains("items"))
                for (std::size_t i = 0; i < v.size(); ++i)
                    if (auto e = check(s.at("items"), v[i], path + "/" + std::to_string(i))) return e;
        }
        if (v.is_object()) {
            if (s.contains("required"))
                for (const auto& r : s.at("required"))
                    if (!v.contains(r.get<std::string>()))
                        return where(path) + ": missing required field '" + r.get<std::string>() + "'";
            const bool closed = s.contains("additionalProperties") && s.at("additionalProperties") == false;
            for (auto it = v.begin(); it != v.end(); ++it) {
                const bool known = s.contains("properties") && s.at("properties").contains(it.key());
                if (known) {
                    if (auto e = check(s.at("properties").at(it.key()), it.value(), path + "/" + it.key())) return e;
                } else if (closed) {
                    return where(path) + ": unknown field '" + it.key() + "'";
                }
            }
        }
        return std::nullopt;
    }

    // Exactly one branch must match. Branches discriminated by a "kind" const report the matching
    // branch's error, or the list of kinds when none matches.
    std::optional<std::string> check_one_of(const nlohmann::json& branches, const nlohmann::json& v,
                                            const std::string& path) const {
        int matches = 0;
        std::vector<std::string> errors, kinds;
        std::optional<std::size_t> same_kind;
        for (std::size_t b = 0; b < branches.size(); ++b) {
            const auto& br = branches[b].contains("$ref") ? resolve(branches[b]) : branches[b];
            auto e = check(br, v, path);
            if (!e) ++matches;
            errors.push_back(e.value_or(""));
            if (br.contains("properties") && br.at("properties").contains("kind") &&
                br.at("properties").at("kind").contains("const")) {
                const auto& k = br.at("properties").at("kind").at("const");
                kinds.push_back(k.get<std::string>());
                if (v.is_object() && v.contains("kind") && v.at("kind") == k) same_kind = b;
            }
        }
        if (matches == 1) return std::nullopt;
        if (matches > 1) return where(path) + ": matches more than one allowed form";
        if (same_kind) return errors[*same_kind];
        if (!kinds.empty() && v.is_object()) {
            std::string list;
            for (const auto& k : kinds) list += (list.empty() ? "" : ", ") + k;
            if (!v.contains("kind")) return where(path) + ": missing 'kind' (one of " + list + ")";
            return where(path + "/kind") + ": unknown kind " + v.at("kind").dump() + " (expected one of " + list + ")";
        }
        return where(path) + ": matches no allowed form (" + errors.front() + ")";
    }

    nlohmann::json root_;
};

inline const Validator& config_validator() {
    static const Validator v(nlohmann::json::parse(config_schema_text));
    return v;
}

}  // namespace schema

inline nlohmann::json kernel_to_json(const KernelModel& k) {
    switch (k.kind()) {
    case KernelKind::Brownian: return {{"kind", "brownian"}, {"kappa", k.kappa()}};
    case KernelKind::Stable: return {{"kind", "stable"}, {"alpha", k.alpha()}, {"kappa", k.kappa()}};
    case KernelKind::TabulatedPsi: break;
    }
    return {{"kind", "tabulated"}, {"xi", k.table_xi()}, {"psi", k.table_psi()}};
}

// Errors other than DivergentResolvent surface as ConfigInvalid.
inline KernelModel kernel_from_json(const nlohmann::json& j) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        const double kappa = j.value("kappa", 1.0);
        if (kind == "brownian") return KernelModel::brownian(kappa);
        if (kind == "stable") return KernelModel::stable(j.at("alpha").get<double>(), kappa);
        if (kind == "tabulated")
            return KernelModel::tabulated(j.at("xi").get<std::vector<double>>(), j.at("psi").get<std::vector<double>>());
        fail(ErrorCode::ConfigInvalid, "unknown kernel kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("kernel: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::ConfigInvalid, e.what());
        throw;
    }
}

struct ClaimOptions {
    double eps = 0.1;
    double positivity_factor = 10.0;
    double positivity_max_fraction = 0.01;
    std::optional<double> tail_t;
    int tail_k = 6;
    std::vector<double> nochaos_L{5.0, 10.0, 20.0};
    double nochaos_max_change = 0.05;
};

struct OutputOptions {
    std::vector<double> snapshot_t;
    int snapshot_replicas = 1;
    bool noise_dump = false;
};

inline const std::vector<std::string>& known_claims() {
    static const std::vector<std::string> c{"mean_identity", "second_moment_oracle", "exist_unique_bound", "h1_bound",
                                            "positivity",    "tail_decay",           "nochaos_sup"};
    return c;
}

struct ExperimentConfig {
    nlohmann::json raw;
    KernelModel kernel = KernelModel::brownian(1.0);
    FiniteMeasure u0 = FiniteMeasure::delta();
    SigmaSpec sigma = SigmaSpec::linear(0.0);
    Lattice lattice;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> claims;
    std::vector<double> k_list{2.0};
    std::vector<double> t_probe, x_probe{0.0};
    SolverOptions solver;
    ClaimOptions claim;
    OutputOptions outputs;
    std::string output_dir = "levyheat_run";
};

namespace detail {

// n with n·step = span to 1e-9 relative.
inline int whole_count(double span, double step, const std::string& what) {
    const double r = span / step;
    const double n = std::round(r);
    if (!(n >= 1.0) || std::abs(r - n) > 1e-9 * n || n > 1e9)
        fail(ErrorCode::ConfigInvalid, what + " must be a whole multiple of its step");
    return int(n);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    if (auto e = schema::config_validator().first_error(j)) fail(ErrorCode::ConfigInvalid, *e);
    ExperimentConfig c;
    c.raw = j;
    try {
        c.kernel = kernel_from_json(j.at("kernel"));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::DivergentResolvent) fail(ErrorCode::ConfigInvalid, e.what());
        throw;
    }
    c.u0 = measure_from_json(j.at("u0"));
    try {
        c.sigma = sigma_from_json(j.at("sigma"));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::ConfigInvalid, e.what());
        throw;
    }
    const auto& g = j.at("grid");
    c.lattice.L = g.at("L").get<double>();
    c.lattice.nx = detail::whole_count(2.0 * c.lattice.L, g.at("dx").get<double>(), "grid: 2L");
    c.lattice.dt = g.at("dt").get<double>();
    c.lattice.nt = detail::whole_count(g.at("t_end").get<double>(), c.lattice.dt, "grid: t_end");
    if (c.lattice.nx < 2) fail(ErrorCode::ConfigInvalid, "grid: need at least two cells");

    const auto& s = j.at("seeds");
    if (s.is_array()) {
        c.seeds = s.get<std::vector<std::uint64_t>>();
    } else {
        const auto first = s.at("first").get<std::uint64_t>();
        const auto count = s.at("count").get<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) c.seeds.push_back(first + i);
    }
    if (j.contains("claims")) c.claims = j.at("claims").get<std::vector<std::string>>();

    c.t_probe = {c.lattice.t_end()};
    if (j.contains("moments")) {
        const auto& m = j.at("moments");
        if (m.contains("k")) c.k_list = m.at("k").get<std::vector<double>>();
        if (m.contains("t")) c.t_probe = m.at("t").get<std::vector<double>>();
        if (m.contains("x")) c.x_probe = m.at("x").get<std::vector<double>>();
    }
    if (j.contains("solver")) {
        const auto& o = j.at("solver");
        c.solver.truncation_tol = o.value("truncation_tol", c.solver.truncation_tol);
        c.solver.refinement_limit = o.value("refinement_limit", c.solver.refinement_limit);
        c.solver.rolloff = o.value("rolloff", c.solver.rolloff);
    }
    if (j.contains("claim_options")) {
        const auto& o = j.at("claim_options");
        c.claim.eps = o.value("eps", c.claim.eps);
        c.claim.positivity_factor = o.value("positivity_factor", c.claim.positivity_factor);
        c.claim.positivity_max_fraction = o.value("positivity_max_fraction", c.claim.positivity_max_fraction);
        if (o.contains("tail_t")) c.claim.tail_t = o.at("tail_t").get<double>();
        c.claim.tail_k = o.value("tail_k", c.claim.tail_k);
        if (o.contains("nochaos_L")) c.claim.nochaos_L = o.at("nochaos_L").get<std::vector<double>>();
        c.claim.nochaos_max_change = o.value("nochaos_max_change", c.claim.nochaos_max_change);
    }
    if (j.contains("outputs")) {
        const auto& o = j.at("outputs");
        if (o.contains("snapshot_t")) c.outputs.snapshot_t = o.at("snapshot_t").get<std::vector<double>>();
        c.outputs.snapshot_replicas = o.value("snapshot_replicas", c.outputs.snapshot_replicas);
        c.outputs.noise_dump = o.value("noise_dump", c.outputs.noise_dump);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Hash of the canonical (sorted-key, compact) config text.
inline std::string config_hash(const nlohmann::json& j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

}  // namespace levyheat
