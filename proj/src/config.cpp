#include "stallkit/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "stallkit/errors.hpp"
#include "stallkit/workload.hpp"

namespace stallkit {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& why)
{
    throw ConfigError(key + ": " + why);
}

double number(const json& j, const std::string& key)
{
    if (!j.is_number())
        fail(key, "expected a number");
    const double x = j.get<double>();
    if (!std::isfinite(x))
        fail(key, "not finite");
    return x;
}

double get_or(const json& obj, const char* name, double dflt, const std::string& path)
{
    return obj.contains(name) ? number(obj.at(name), path + "." + name) : dflt;
}

void flatten(const json& j, std::vector<double>& out, const std::string& key)
{
    if (j.is_array())
        for (const auto& x : j)
            flatten(x, out, key);
    else
        out.push_back(number(j, key));
}

// A scalar broadcasts to n entries; arrays (possibly nested) must flatten to n.
std::vector<double> vec(const json& obj, const char* name, int n, const std::string& path)
{
    const std::string key = path + "." + name;
    if (!obj.contains(name))
        fail(key, "missing");
    const json& j = obj.at(name);
    std::vector<double> out;
    if (j.is_number())
        return std::vector<double>(n, number(j, key));
    flatten(j, out, key);
    if (static_cast<int>(out.size()) != n)
        fail(key, "expected " + std::to_string(n) + " entries, got " + std::to_string(out.size()));
    return out;
}

std::vector<int> ivec(const json& obj, const char* name, int n, const std::string& path)
{
    std::vector<int> out;
    for (double x : vec(obj, name, n, path)) {
        if (x != std::floor(x) || x < 1)
            fail(path + "." + name, "stream counts must be positive integers");
        out.push_back(static_cast<int>(x));
    }
    return out;
}

int count(const json& obj, const char* name, const std::string& path)
{
    if (!obj.contains(name))
        fail(path + "." + name, "missing");
    const double x = number(obj.at(name), path + "." + name);
    if (x != std::floor(x) || x < 1)
        fail(path + "." + name, "must be a positive integer");
    return static_cast<int>(x);
}

bool flag_or(const json& obj, const char* name, bool dflt, const std::string& path)
{
    if (!obj.contains(name))
        return dflt;
    if (!obj.at(name).is_boolean())
        fail(path + "." + name, "expected true or false");
    return obj.at(name).get<bool>();
}

std::string str_or(const json& obj, const char* name, const std::string& dflt, const std::string& path)
{
    if (!obj.contains(name))
        return dflt;
    if (!obj.at(name).is_string())
        fail(path + "." + name, "expected a string");
    return obj.at(name).get<std::string>();
}

// Zipf popularity with an independent rank permutation per router.
std::vector<double> zipf_rates(int r, const std::vector<double>& totals, double s, std::uint64_t seed)
{
    const int R = static_cast<int>(totals.size());
    std::vector<double> w(r);
    for (int k = 0; k < r; ++k)
        w[k] = std::pow(k + 1.0, -s);
    const double z = std::accumulate(w.begin(), w.end(), 0.0);
    std::mt19937_64 rng(seed);
    std::vector<double> out(static_cast<size_t>(r) * R);
    for (int l = 0; l < R; ++l) {
        std::vector<int> perm(r);
        std::iota(perm.begin(), perm.end(), 0);
        if (l > 0)
            std::shuffle(perm.begin(), perm.end(), rng);
        for (int k = 0; k < r; ++k)
            out[perm[k] * R + l] = totals[l] * w[k] / z;
    }
    return out;
}

void parse_topology(const json& tj, const std::string& base_dir, ExperimentConfig& cfg)
{
    const std::string P = "topology";
    if (!tj.is_object())
        fail(P, "expected a section");
    SystemTopology& t = cfg.topo;
    t.num_servers = count(tj, "num_servers", P);
    t.num_edge_routers = count(tj, "num_edge_routers", P);
    t.tau = get_or(tj, "tau", 1.0, P);
    t.startup_delay = get_or(tj, "startup_delay", 0.0, P);
    const int m = t.m(), R = t.R();

    double rate_mul = 1.0, time_mul = 1.0;
    if (tj.contains("units")) {
        const json& u = tj.at("units");
        const std::string ru = str_or(u, "rate", "1/s", P + ".units");
        const std::string tu = str_or(u, "time", "s", P + ".units");
        if (ru == "1/ms")
            rate_mul = 1000.0;
        else if (ru != "1/s")
            fail(P + ".units.rate", "expected '1/s' or '1/ms'");
        if (tu == "ms")
            time_mul = 1e-3;
        else if (tu != "s")
            fail(P + ".units.time", "expected 's' or 'ms'");
    }

    if (tj.contains("segments")) {
        std::vector<double> seg;
        flatten(tj.at("segments"), seg, P + ".segments");
        for (double x : seg) {
            if (x != std::floor(x) || x < 1)
                fail(P + ".segments", "chunk counts must be positive integers");
            t.segments.push_back(static_cast<int>(x));
        }
    } else if (tj.contains("catalog_file")) {
        std::filesystem::path p = tj.at("catalog_file").get<std::string>();
        if (p.is_relative())
            p = std::filesystem::path(base_dir) / p;
        t.segments = load_catalog(p.string(), t.tau).segments;
    } else if (tj.contains("catalog")) {
        const json& c = tj.at("catalog");
        const std::string Q = P + ".catalog";
        t.segments = gen_catalog(count(c, "num_files", Q), get_or(c, "pareto_shape", 2.0, Q),
                                 get_or(c, "pareto_scale", 300.0, Q), t.tau,
                                 static_cast<std::uint64_t>(get_or(c, "seed", 1, Q)))
                         .segments;
    } else {
        fail(P, "needs one of 'segments', 'catalog_file' or 'catalog'");
    }
    t.num_files = static_cast<int>(t.segments.size());
    const int r = t.r();
    double chunks = 0;
    for (int L : t.segments)
        chunks += L;
    cfg.total_video_s = chunks * t.tau;

    std::vector<double> dc = vec(tj, "streams_dc", m, P);
    for (double x : dc)
        if (x != std::floor(x) || x < 1)
            fail(P + ".streams_dc", "stream counts must be positive integers");
    t.streams_dc.assign(dc.begin(), dc.end());
    t.streams_edge = ivec(tj, "streams_edge", m * R, P);

    t.base_rate_dc = vec(tj, "base_rate_dc", m, P);
    t.base_rate_edge = vec(tj, "base_rate_edge", m * R, P);
    t.shift_dc = vec(tj, "shift_dc", m, P);
    t.shift_edge = vec(tj, "shift_edge", m * R, P);
    for (auto* v : {&t.base_rate_dc, &t.base_rate_edge})
        for (double& x : *v)
            x *= rate_mul;
    for (auto* v : {&t.shift_dc, &t.shift_edge})
        for (double& x : *v)
            x *= time_mul;

    if (tj.contains("server_capacity_fraction")) {
        const double f = number(tj.at("server_capacity_fraction"), P + ".server_capacity_fraction");
        t.server_capacity.assign(m, std::floor(f * chunks));
    } else {
        t.server_capacity = vec(tj, "server_capacity", m, P);
    }
    if (tj.contains("edge_capacity_fraction")) {
        const double f = number(tj.at("edge_capacity_fraction"), P + ".edge_capacity_fraction");
        t.edge_capacity.assign(R, f * cfg.total_video_s);
    } else {
        t.edge_capacity = vec(tj, "edge_capacity", R, P);
    }
    t.violation_budget = vec(tj, "violation_budget", R, P);

    if (tj.contains("arrivals")) {
        const json& a = tj.at("arrivals");
        const std::string Q = P + ".arrivals";
        std::vector<double> totals = vec(a, "router_totals", R, Q);
        for (double& x : totals)
            x *= rate_mul;
        t.arrival_rate = zipf_rates(r, totals, get_or(a, "zipf", 0.8, Q),
                                    static_cast<std::uint64_t>(get_or(a, "seed", 1, Q)));
    } else {
        t.arrival_rate = vec(tj, "arrival_rate", r * R, P);
        for (double& x : t.arrival_rate)
            x *= rate_mul;
    }
    t.finalize();
}

void parse_init(const json& j, InitSpec& s)
{
    const std::string P = "init";
    for (auto [name, flag, val] : {std::tuple{"h", &s.auto_h, &s.h}, std::tuple{"g", &s.auto_g, &s.g}}) {
        if (!j.contains(name))
            continue;
        const json& x = j.at(name);
        if (x.is_string()) {
            if (x.get<std::string>() != "auto")
                fail(P + "." + name, "expected a number or \"auto\"");
            *flag = true;
        } else {
            *val = number(x, P + "." + name);
            *flag = false;
        }
    }
    s.omega = get_or(j, "omega", s.omega, P);
}

void parse_optimizer(const json& j, OptimizerConfig& o)
{
    const std::string P = "optimizer";
    o.tau_pi = get_or(j, "tau_pi", o.tau_pi, P);
    o.tau_h = get_or(j, "tau_h", o.tau_h, P);
    o.tau_w = get_or(j, "tau_w", o.tau_w, P);
    o.tau_L = get_or(j, "tau_L", o.tau_L, P);
    o.tau_omega = get_or(j, "tau_omega", o.tau_omega, P);
    o.gamma0 = get_or(j, "gamma0", o.gamma0, P);
    o.gamma_decay = get_or(j, "gamma_decay", o.gamma_decay, P);
    o.max_halvings = static_cast<int>(get_or(j, "max_halvings", o.max_halvings, P));
    o.max_outer_iters = static_cast<int>(get_or(j, "max_outer_iters", o.max_outer_iters, P));
    o.tol = get_or(j, "tol", o.tol, P);
    o.slack = get_or(j, "slack", o.slack, P);
    o.theta = get_or(j, "theta", o.theta, P);
    o.sigma = get_or(j, "sigma", o.sigma, P);
    o.inner_iters = static_cast<int>(get_or(j, "inner_iters", o.inner_iters, P));
    o.inner_tol = get_or(j, "inner_tol", o.inner_tol, P);
    o.block_iters = static_cast<int>(get_or(j, "block_iters", o.block_iters, P));
    o.fd_step = get_or(j, "fd_step", o.fd_step, P);
    const std::string fm = str_or(j, "exponent_follow", "clamp", P);
    if (fm == "clamp")
        o.follow = ExponentFollow::clamp;
    else if (fm == "scale")
        o.follow = ExponentFollow::scale;
    else if (fm == "refit")
        o.follow = ExponentFollow::refit;
    else
        fail(P + ".exponent_follow", "expected 'clamp', 'scale' or 'refit'");
    o.feas.margin = get_or(j, "feas_margin", o.feas.margin, P);
    const std::string g = str_or(j, "gradient", "finite_diff", P);
    if (g == "finite_diff")
        o.grad = GradMode::finite_diff;
    else if (g == "analytic")
        o.grad = GradMode::analytic;
    else
        fail(P + ".gradient", "expected 'finite_diff' or 'analytic'");
    try {
        o.baseline = parse_baseline(str_or(j, "baseline", "none", P));
    } catch (const ConfigError& e) {
        fail(P + ".baseline", e.what());
    }
}

void parse_simulation(const json& j, ExperimentConfig& cfg)
{
    const std::string P = "simulation";
    SimOptions& s = cfg.sim;
    PolicyParams& p = cfg.policy;
    try {
        p.kind = parse_policy(str_or(j, "policy", "ttl", P));
    } catch (const ConfigError& e) {
        fail(P + ".policy", e.what());
    }
    p.q = get_or(j, "q", p.q, P);
    p.k = static_cast<int>(get_or(j, "k", p.k, P));
    p.window = static_cast<int>(get_or(j, "window", p.window, P));
    p.c_grid = static_cast<int>(get_or(j, "c_grid", p.c_grid, P));
    s.horizon = get_or(j, "horizon", s.horizon, P);
    s.warmup_frac = get_or(j, "warmup", s.warmup_frac, P);
    s.queue_bound = static_cast<std::size_t>(get_or(j, "queue_bound", double(s.queue_bound), P));
    s.deterministic_service = flag_or(j, "deterministic_service", false, P);
    const std::string tm = str_or(j, "ttl_mode", "fixed", P);
    if (tm == "fixed")
        s.ttl_mode = TtlMode::fixed;
    else if (tm == "exponential")
        s.ttl_mode = TtlMode::exponential;
    else
        fail(P + ".ttl_mode", "expected 'fixed' or 'exponential'");
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& x : j.at("seeds"))
            cfg.seeds.push_back(static_cast<std::uint64_t>(number(x, P + ".seeds")));
    }
    if (s.warmup_frac < 0 || s.warmup_frac >= 1)
        fail(P + ".warmup", "must be in [0, 1)");
    if (p.q < 0 || p.q > 1)
        fail(P + ".q", "must be in [0, 1]");
    if (p.k < 1)
        fail(P + ".k", "must be >= 1");
}

}  // namespace

std::string fnv1a_hex(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_config(const json& j, const std::string& base_dir)
{
    if (!j.is_object())
        throw ConfigError("config: expected a top-level object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const char* known[] = {"topology", "init", "optimizer", "bounds", "simulation", "sweep", "name"};
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
            std::end(known))
            throw ConfigError("config: unknown section '" + it.key() + "'");
    }
    ExperimentConfig cfg;
    if (!j.contains("topology"))
        throw ConfigError("topology: missing");
    parse_topology(j.at("topology"), base_dir, cfg);
    if (j.contains("init"))
        parse_init(j.at("init"), cfg.init);
    if (j.contains("optimizer"))
        parse_optimizer(j.at("optimizer"), cfg.opt);
    cfg.opt.validate();
    if (j.contains("bounds") && j.at("bounds").contains("sigma_grid")) {
        cfg.sigma_grid.clear();
        flatten(j.at("bounds").at("sigma_grid"), cfg.sigma_grid, "bounds.sigma_grid");
    }
    cfg.sim.sigma_grid = cfg.sigma_grid;
    if (j.contains("simulation"))
        parse_simulation(j.at("simulation"), cfg);
    cfg.policy.tau = cfg.topo.tau;
    cfg.raw = j;
    cfg.hash = fnv1a_hex(j.dump());
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_config(j, dir.empty() ? "." : dir.string());
}

DecisionVariables initial_vars(const ExperimentConfig& cfg)
{
    InitOptions io;
    io.omega = cfg.init.omega;
    io.h = cfg.init.h;
    io.g = cfg.init.g;
    DecisionVariables v = uniform_init(cfg.topo, io, cfg.opt.feas);
    if (cfg.opt.baseline != Baseline::none) {
        apply_baseline(cfg.topo, v, cfg.opt.baseline);
        v = project_feasible(v, cfg.topo, cfg.opt.feas);
    }
    if (cfg.init.auto_h || cfg.init.auto_g)
        v = tune_exponents(cfg.topo, v, cfg.opt.sigma, cfg.init.auto_h, cfg.init.auto_g);
    return v;
}

json vars_to_json(const DecisionVariables& v)
{
    return json{{"pi", v.pi},       {"p", v.p},         {"q", v.q},   {"w_d", v.w_d},
                {"w_dbar", v.w_dbar}, {"w_e", v.w_e},   {"L", v.L},   {"omega", v.omega},
                {"h", v.h},         {"g", v.g}};
}

DecisionVariables vars_from_json(const json& j, const SystemTopology& t)
{
    DecisionVariables v = zero_vars(t);
    auto read = [&](const char* name, std::vector<double>& dst) {
        if (!j.contains(name))
            throw ConfigError(std::string("vars.") + name + ": missing");
        std::vector<double> x;
        flatten(j.at(name), x, std::string("vars.") + name);
        if (x.size() != dst.size())
            throw ConfigError(std::string("vars.") + name + ": expected " + std::to_string(dst.size()) +
                              " entries, got " + std::to_string(x.size()));
        dst = std::move(x);
    };
    read("pi", v.pi);
    read("p", v.p);
    read("q", v.q);
    read("w_d", v.w_d);
    read("w_dbar", v.w_dbar);
    read("w_e", v.w_e);
    read("L", v.L);
    read("omega", v.omega);
    read("h", v.h);
    read("g", v.g);
    return v;
}

void save_vars(const std::string& path, const DecisionVariables& v, const std::string& config_hash)
{
    json j = vars_to_json(v);
    j["config_hash"] = config_hash;
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write vars file '" + path + "'");
    out << j.dump(1) << "\n";
    if (!out)
        throw ConfigError("write failed for '" + path + "'");
}

DecisionVariables load_vars(const std::string& path, const SystemTopology& t)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open vars file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("vars file '" + path + "': " + e.what());
    }
    return vars_from_json(j, t);
}

SweepAxis parse_axis(const std::string& name)
{
    static const std::pair<const char*, SweepAxis> tab[] = {
        {"arrival_scale", SweepAxis::arrival_scale}, {"bandwidth_scale", SweepAxis::bandwidth_scale},
        {"epsilon", SweepAxis::epsilon},             {"capacity_ratio", SweepAxis::capacity_ratio},
        {"theta", SweepAxis::theta},                 {"sigma", SweepAxis::sigma}};
    for (const auto& [n, a] : tab)
        if (name == n)
            return a;
    throw ConfigError("unknown sweep axis '" + name +
                      "' (expected arrival_scale, bandwidth_scale, epsilon, capacity_ratio, theta, sigma)");
}

std::string axis_name(SweepAxis a)
{
    switch (a) {
    case SweepAxis::arrival_scale: return "arrival_scale";
    case SweepAxis::bandwidth_scale: return "bandwidth_scale";
    case SweepAxis::epsilon: return "epsilon";
    case SweepAxis::capacity_ratio: return "capacity_ratio";
    case SweepAxis::theta: return "theta";
    case SweepAxis::sigma: return "sigma";
    }
    return "?";
}

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis a, double x)
{
    ExperimentConfig c = base;
    SystemTopology& t = c.topo;
    auto positive = [&] {
        if (!(x > 0))
            throw ConfigError(axis_name(a) + ": value must be > 0");
    };
    switch (a) {
    case SweepAxis::arrival_scale:
        positive();
        for (double& r : t.arrival_rate)
            r *= x;
        break;
    case SweepAxis::bandwidth_scale:
        positive();
        for (double& r : t.base_rate_dc)
            r *= x;
        for (double& r : t.base_rate_edge)
            r *= x;
        break;
    case SweepAxis::epsilon:
        if (!(x > 0 && x < 1))
            throw ConfigError("epsilon: value must be in (0, 1)");
        std::fill(t.violation_budget.begin(), t.violation_budget.end(), x);
        break;
    case SweepAxis::capacity_ratio:
        positive();
        std::fill(t.edge_capacity.begin(), t.edge_capacity.end(), x * c.total_video_s);
        break;
    case SweepAxis::theta:
        if (x < 0 || x > 1)
            throw ConfigError("theta: value must be in [0, 1]");
        c.opt.theta = x;
        break;
    case SweepAxis::sigma:
        if (x < 0)
            throw ConfigError("sigma: value must be >= 0");
        c.opt.sigma = x;
        break;
    }
    t.finalize();
    return c;
}

}  // namespace stallkit
