#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "expression.hpp"

namespace massgrid {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& s, const std::string& what) {
    const char* c = s.c_str();
    char* end = nullptr;
    double v = std::strtod(c, &end);
    if (end == c || *end != '\0')
        throw ConfigError("bad number for " + what + ": '" + s + "'");
    return v;
}

inline std::vector<double> parse_number_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_number(item, what));
    }
    if (out.empty()) throw ConfigError("empty list for " + what);
    return out;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += fmt(v[i]);
    }
    return s;
}

} // namespace detail

/// Sections -> (key -> value). '#' and ';' start comments; keys are unique
/// per section; values run to end of line.
using IniMap = std::map<std::string, std::map<std::string, std::string>>;

inline IniMap parse_ini(const std::string& text) {
    IniMap ini;
    std::string section;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            ini[section];
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        if (!ini[section].emplace(key, val).second)
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key +
                              "' in [" + section + "]");
    }
    return ini;
}

/// Typed experiment configuration. Unset numeric fields keep the documented
/// defaults; normalization (applied by parse_config) re-serializes the
/// expressions canonically and fills the defaults, so serialize-then-parse is
/// the identity on normalized configs.
struct ExperimentConfig {
    // [manifold]
    int n = 3;
    std::vector<int> N_list{32};
    double L = 1.0;
    std::vector<double> p; // empty => center of the box
    // [metric]
    std::string phi = "const(0)";
    double r_flat = 0.0; // 0 => L/4
    // [potential]
    std::string f = "const(0)";
    std::string phi_family = "const(0)";
    // [kernel]
    double delta = 0.0; // 0 => r_flat/2
    // [solver]
    double tol = 1e-10;
    double eigen_tol = 1e-9;
    // [experiment]
    std::string experiment = "mass";
    std::vector<double> a_values;
    double a_max = 1e6;
    double domain_radius = 0.0; // dirichlet: ball radius; 0 => complement of supp(phi_family)
    double ramp_tol = 1e-3;
    std::vector<double> rho_values;
    std::string u_conf = ""; // blowup/conformal factor (optional)
    std::uint64_t seed = 42;
    // [output]
    std::string csv = "";
    std::string json = "";
};

inline void normalize_config(ExperimentConfig& c) {
    if (c.n < 3 || c.n > kMaxDim) throw ConfigError("n must be 3, 4, or 5");
    if (!(c.L > 0.0)) throw ConfigError("L must be positive");
    if (c.N_list.empty()) throw ConfigError("N list must not be empty");
    for (int N : c.N_list)
        if (N < 16 || N % 2) throw ConfigError("each N must be even and >= 16");
    if (c.p.empty()) c.p.assign(c.n, 0.5 * c.L);
    if (int(c.p.size()) != c.n) throw ConfigError("p must have n coordinates");
    if (c.r_flat == 0.0) c.r_flat = 0.25 * c.L;
    if (c.delta == 0.0) c.delta = 0.5 * c.r_flat;
    c.phi = serialize(parse_expression(c.phi));
    c.f = serialize(parse_expression(c.f));
    c.phi_family = serialize(parse_expression(c.phi_family));
    if (!c.u_conf.empty()) c.u_conf = serialize(parse_expression(c.u_conf));
    static const char* known[] = {"mass",     "family",      "eigen",  "dirichlet",
                                  "blowup",   "convergence", "verify"};
    bool ok = false;
    for (const char* k : known) ok = ok || c.experiment == k;
    if (!ok) throw ConfigError("unknown experiment '" + c.experiment + "'");
}

inline ExperimentConfig config_from_ini(const IniMap& ini) {
    ExperimentConfig c;
    auto get = [&](const std::string& sec, const std::string& key) -> const std::string* {
        auto s = ini.find(sec);
        if (s == ini.end()) return nullptr;
        auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    };
    // strict key check
    static const std::map<std::string, std::vector<std::string>> schema = {
        {"manifold", {"n", "N", "L", "p"}},
        {"metric", {"phi", "r_flat"}},
        {"potential", {"f", "phi_family"}},
        {"kernel", {"delta"}},
        {"solver", {"tol", "eigen_tol"}},
        {"experiment",
         {"name", "a_values", "a_max", "domain_radius", "ramp_tol", "rho_values", "u_conf",
          "seed"}},
        {"output", {"csv", "json"}},
    };
    for (const auto& [sec, kv] : ini) {
        auto it = schema.find(sec);
        if (it == schema.end()) throw ConfigError("unknown section [" + sec + "]");
        for (const auto& [key, val] : kv) {
            bool ok = false;
            for (const auto& k : it->second) ok = ok || k == key;
            if (!ok) throw ConfigError("unknown key '" + key + "' in [" + sec + "]");
        }
    }
    if (const auto* v = get("manifold", "n")) c.n = int(detail::parse_number(*v, "n"));
    if (const auto* v = get("manifold", "N")) {
        c.N_list.clear();
        for (double d : detail::parse_number_list(*v, "N")) c.N_list.push_back(int(d));
    }
    if (const auto* v = get("manifold", "L")) c.L = detail::parse_number(*v, "L");
    if (const auto* v = get("manifold", "p")) c.p = detail::parse_number_list(*v, "p");
    if (const auto* v = get("metric", "phi")) c.phi = *v;
    if (const auto* v = get("metric", "r_flat")) c.r_flat = detail::parse_number(*v, "r_flat");
    if (const auto* v = get("potential", "f")) c.f = *v;
    if (const auto* v = get("potential", "phi_family")) c.phi_family = *v;
    if (const auto* v = get("kernel", "delta")) c.delta = detail::parse_number(*v, "delta");
    if (const auto* v = get("solver", "tol")) c.tol = detail::parse_number(*v, "tol");
    if (const auto* v = get("solver", "eigen_tol"))
        c.eigen_tol = detail::parse_number(*v, "eigen_tol");
    if (const auto* v = get("experiment", "name")) c.experiment = *v;
    if (const auto* v = get("experiment", "a_values"))
        c.a_values = detail::parse_number_list(*v, "a_values");
    if (const auto* v = get("experiment", "a_max")) c.a_max = detail::parse_number(*v, "a_max");
    if (const auto* v = get("experiment", "domain_radius"))
        c.domain_radius = detail::parse_number(*v, "domain_radius");
    if (const auto* v = get("experiment", "ramp_tol"))
        c.ramp_tol = detail::parse_number(*v, "ramp_tol");
    if (const auto* v = get("experiment", "rho_values"))
        c.rho_values = detail::parse_number_list(*v, "rho_values");
    if (const auto* v = get("experiment", "u_conf")) c.u_conf = *v;
    if (const auto* v = get("experiment", "seed"))
        c.seed = std::uint64_t(detail::parse_number(*v, "seed"));
    if (const auto* v = get("output", "csv")) c.csv = *v;
    if (const auto* v = get("output", "json")) c.json = *v;
    normalize_config(c);
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    return config_from_ini(parse_ini(text));
}

inline std::string serialize_config(const ExperimentConfig& c) {
    using detail::fmt;
    using detail::fmt_list;
    std::string s;
    s += "[manifold]\n";
    s += "n = " + std::to_string(c.n) + "\n";
    s += "N = ";
    for (std::size_t i = 0; i < c.N_list.size(); ++i)
        s += (i ? "," : "") + std::to_string(c.N_list[i]);
    s += "\n";
    s += "L = " + fmt(c.L) + "\n";
    s += "p = " + fmt_list(c.p) + "\n";
    s += "[metric]\n";
    s += "phi = " + c.phi + "\n";
    s += "r_flat = " + fmt(c.r_flat) + "\n";
    s += "[potential]\n";
    s += "f = " + c.f + "\n";
    s += "phi_family = " + c.phi_family + "\n";
    s += "[kernel]\n";
    s += "delta = " + fmt(c.delta) + "\n";
    s += "[solver]\n";
    s += "tol = " + fmt(c.tol) + "\n";
    s += "eigen_tol = " + fmt(c.eigen_tol) + "\n";
    s += "[experiment]\n";
    s += "name = " + c.experiment + "\n";
    if (!c.a_values.empty()) s += "a_values = " + fmt_list(c.a_values) + "\n";
    s += "a_max = " + fmt(c.a_max) + "\n";
    if (c.domain_radius != 0.0) s += "domain_radius = " + fmt(c.domain_radius) + "\n";
    s += "ramp_tol = " + fmt(c.ramp_tol) + "\n";
    if (!c.rho_values.empty()) s += "rho_values = " + fmt_list(c.rho_values) + "\n";
    if (!c.u_conf.empty()) s += "u_conf = " + c.u_conf + "\n";
    s += "seed = " + std::to_string(c.seed) + "\n";
    if (!c.csv.empty() || !c.json.empty()) {
        s += "[output]\n";
        if (!c.csv.empty()) s += "csv = " + c.csv + "\n";
        if (!c.json.empty()) s += "json = " + c.json + "\n";
    }
    return s;
}

} // namespace massgrid
