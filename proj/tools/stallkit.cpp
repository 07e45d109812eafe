#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <omp.h>

#include <CLI11.hpp>

#include "stallkit/bounds.hpp"
#include "stallkit/config.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/optimizer.hpp"
#include "stallkit/policies.hpp"
#include "stallkit/simulator.hpp"
#include "stallkit/sweep.hpp"
#include "stallkit/workload.hpp"

using namespace stallkit;

namespace {

struct Common {
    std::string config, out = "-", vars, baseline = "none", sigma_grid, policy, seeds;
    double theta = -1, sigma = -1, horizon = -1;
    int max_iters = -1;
    bool sigma_grid_set = false;
};

std::vector<double> parse_list(const std::string& s, const char* flag)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.find_first_not_of(" \t") == std::string::npos)
            continue;
        try {
            size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (tok.find_first_not_of(" \t", used) != std::string::npos)
                throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + ": cannot parse '" + tok + "'");
        }
    }
    return out;
}

// "N" means seeds 1..N; a comma list is taken literally
std::vector<std::uint64_t> parse_seeds(const std::string& s)
{
    const auto xs = parse_list(s, "--seeds");
    std::vector<std::uint64_t> out;
    if (xs.size() == 1 && s.find(',') == std::string::npos) {
        if (xs[0] < 0)
            throw ConfigError("--seeds: must be >= 0");
        for (long k = 1; k <= static_cast<long>(xs[0]); ++k)
            out.push_back(k);
    } else {
        for (double x : xs)
            out.push_back(static_cast<std::uint64_t>(x));
    }
    return out;
}

ExperimentConfig load(const Common& c)
{
    ExperimentConfig cfg = load_config(c.config);
    if (c.theta >= 0)
        cfg.opt.theta = c.theta;
    if (c.sigma >= 0)
        cfg.opt.sigma = c.sigma;
    if (c.max_iters >= 0)
        cfg.opt.max_outer_iters = c.max_iters;
    if (c.sigma_grid_set) {
        cfg.sigma_grid = parse_list(c.sigma_grid, "--sigma-grid");
        cfg.sim.sigma_grid = cfg.sigma_grid;
    }
    if (!c.policy.empty())
        cfg.policy.kind = parse_policy(c.policy);
    if (c.horizon >= 0)
        cfg.sim.horizon = c.horizon;
    if (!c.seeds.empty())
        cfg.seeds = parse_seeds(c.seeds);
    cfg.opt.baseline = parse_baseline(c.baseline);
    cfg.opt.validate();
    return cfg;
}

DecisionVariables vars_for(const ExperimentConfig& cfg, const Common& c)
{
    DecisionVariables v = c.vars.empty() ? initial_vars(cfg) : load_vars(c.vars, cfg.topo);
    if (cfg.opt.baseline != Baseline::none) {
        v = project_feasible(v, cfg.topo, cfg.opt.feas);
        apply_baseline(cfg.topo, v, cfg.opt.baseline);
    }
    return project_feasible(v, cfg.topo, cfg.opt.feas);
}

class Output {
public:
    explicit Output(const std::string& path) : path_(path)
    {
        if (path != "-") {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_)
                throw ConfigError("cannot write '" + path + "'");
        }
    }
    std::ostream& os() { return file_ ? *file_ : std::cout; }
    void close()
    {
        os().flush();
        if (!os())
            throw ConfigError("write failed for '" + path_ + "'");
    }

private:
    std::string path_;
    std::unique_ptr<std::ofstream> file_;
};

void stamp(std::ostream& os, const ExperimentConfig& cfg, const std::string& seed)
{
    os << "# config_hash=" << cfg.hash << " seed=" << seed << '\n';
}

std::string seed_list(const std::vector<std::uint64_t>& s)
{
    std::string out;
    for (size_t k = 0; k < s.size(); ++k)
        out += (k ? ";" : "") + std::to_string(s[k]);
    return out.empty() ? "none" : out;
}

PolicyKind policy_for_baseline(Baseline b, PolicyKind fallback)
{
    switch (b) {
    case Baseline::lru: return PolicyKind::lru;
    case Baseline::adaptsize: return PolicyKind::adaptsize;
    case Baseline::qlru: return PolicyKind::qlru;
    case Baseline::klru: return PolicyKind::klru;
    case Baseline::krandom: return PolicyKind::krandom;
    default: return fallback;
    }
}

int cmd_bounds(const Common& c, bool weighted)
{
    const ExperimentConfig cfg = load(c);
    const DecisionVariables v = vars_for(cfg, c);
    std::string why;
    if (!nonlinear_feasible(cfg.topo, v, cfg.opt.feas, &why))
        throw InfeasibleVars("vars infeasible for this config: " + why);
    const BoundReport rep = bound_report(cfg.topo, v, cfg.sigma_grid);
    Output out(c.out);
    stamp(out.os(), cfg, "none");
    if (weighted) {
        out.os() << "sigma,weighted_sdtp\n";
        out.os().precision(12);
        for (size_t k = 0; k < rep.sigma_grid.size(); ++k)
            out.os() << rep.sigma_grid[k] << ',' << rep.weighted_sdtp[k] << '\n';
    } else {
        write_bound_csv(rep, out.os());
    }
    out.close();
    for (const auto& d : rep.diagnostics)
        std::cerr << "note: " << d << '\n';
    return 0;
}

int cmd_optimize(const Common& c, const std::string& vars_out)
{
    const ExperimentConfig cfg = load(c);
    const DecisionVariables init =
        c.vars.empty() ? initial_vars(cfg) : load_vars(c.vars, cfg.topo);
    const OptResult res = alternate(cfg.topo, init, cfg.opt);
    Output out(c.out);
    stamp(out.os(), cfg, "none");
    write_trace_csv(res.trace, out.os());
    out.close();
    if (!vars_out.empty())
        save_vars(vars_out, res.vars, cfg.hash);
    for (const auto& d : res.trace.diagnostics)
        std::cerr << "note: " << d << '\n';
    std::cerr << "objective " << res.trace.objective.front() << " -> " << res.trace.objective.back()
              << (res.trace.converged ? " (converged)" : " (iteration cap)") << '\n';
    return 0;
}

int cmd_simulate(const Common& c, const std::string& trace_path)
{
    ExperimentConfig cfg = load(c);
    if (cfg.seeds.empty())
        throw ConfigError("--seeds: at least one seed is required");
    cfg.policy.kind = policy_for_baseline(cfg.opt.baseline, cfg.policy.kind);
    const DecisionVariables v = vars_for(cfg, c);
    std::unique_ptr<RequestTrace> trace;
    if (!trace_path.empty()) {
        trace = std::make_unique<RequestTrace>(load_trace(trace_path, cfg.topo.r(), cfg.topo.R()));
    } else if (!(cfg.sim.horizon > 0)) {
        throw ConfigError("--horizon: synthetic traces need a positive horizon");
    }
    const auto runs = run_seeds(cfg.topo, v, cfg.policy, trace.get(), cfg.seeds, cfg.sim);
    Output out(c.out);
    stamp(out.os(), cfg, seed_list(cfg.seeds));
    write_metrics_csv(summarize(runs), out.os());
    out.close();
    return 0;
}

int cmd_sweep(const Common& c, const std::string& axis_s, const std::string& values_s, bool reoptimize,
              bool simulate, int refine)
{
    const ExperimentConfig base = load(c);
    const SweepAxis axis = parse_axis(axis_s);
    const auto values = parse_list(values_s, "--values");
    if (values.empty())
        throw ConfigError("--values: empty range");
    if (simulate && base.seeds.empty())
        throw ConfigError("--seeds: at least one seed is required");
    if (simulate && !(base.sim.horizon > 0))
        throw ConfigError("--horizon: synthetic traces need a positive horizon");

    Output out(c.out);
    stamp(out.os(), base, simulate ? seed_list(base.seeds) : "none");
    out.os() << axis_name(axis)
             << ",objective,weighted_sdtp,weighted_msd,iterations,converged,miss_rate,miss_rate_se\n";
    out.os().precision(12);

    const DecisionVariables first = vars_for(base, c);
    SweepOptions so;
    so.reoptimize = reoptimize;
    if (refine >= 0)
        so.refine_passes = refine;
    const auto pts = run_sweep(base, axis, values, &first, so);
    for (const auto& p : pts) {
        out.os() << p.value << ',' << p.objective << ',' << p.sdtp << ',' << p.msd << ',' << p.iterations
                 << ',' << (p.converged ? 1 : 0) << ',';
        if (simulate) {
            const ExperimentConfig cfg = apply_axis(base, axis, p.value);
            PolicyParams pp = cfg.policy;
            pp.kind = policy_for_baseline(cfg.opt.baseline, pp.kind);
            const SeedSummary s = summarize(run_seeds(cfg.topo, p.vars, pp, nullptr, cfg.seeds, cfg.sim));
            out.os() << s.miss_rate << ',' << s.miss_rate_se << '\n';
        } else {
            out.os() << ",\n";
        }
    }
    out.close();
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    if (const char* th = std::getenv("STALLKIT_THREADS")) {
        const int n = std::atoi(th);
        if (n < 1) {
            std::cerr << "error: STALLKIT_THREADS must be a positive integer\n";
            return 2;
        }
        omp_set_num_threads(n);
    }

    CLI::App app{"stallkit: stall-duration bounds, optimization and simulation for two-tier video CDNs"};
    app.require_subcommand(1);
    Common c;
    auto common = [&](CLI::App* s) {
        s->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        s->add_option("--out", c.out, "output CSV path, - for stdout");
        s->add_option("--vars", c.vars, "decision variables file");
        s->add_option("--baseline", c.baseline, "none|pea|psp|pec|chf|lru|adaptsize|qlru|klru|krandom");
        s->add_option("--theta", c.theta, "tail weight in [0,1]");
        s->add_option("--sigma", c.sigma, "σ used by the objective");
        s->add_option("--sigma-grid", c.sigma_grid, "comma-separated σ values")
            ->each([&](const std::string&) { c.sigma_grid_set = true; });
    };

    auto* b = app.add_subcommand("bounds", "analytic bounds per file and router");
    common(b);
    bool weighted = false;
    b->add_flag("--weighted", weighted, "emit weighted SDTP per σ instead of per-file rows");

    auto* o = app.add_subcommand("optimize", "alternating block optimization");
    common(o);
    std::string vars_out;
    o->add_option("--vars-out", vars_out, "write optimized variables here");
    o->add_option("--max-iters", c.max_iters, "outer iteration cap");

    auto* s = app.add_subcommand("simulate", "discrete-event simulation over seeds");
    common(s);
    std::string trace_path;
    s->add_option("--policy", c.policy, "ttl|lru|qlru|klru|krandom|adaptsize");
    s->add_option("--trace", trace_path, "request trace CSV (synthetic Poisson if absent)");
    s->add_option("--seeds", c.seeds, "N for seeds 1..N, or a comma list");
    s->add_option("--horizon", c.horizon, "synthetic trace length, seconds");

    auto* w = app.add_subcommand("sweep", "re-optimize and evaluate along one axis");
    common(w);
    std::string axis, values;
    bool no_reopt = false, sim = false;
    w->add_option("--axis", axis, "arrival_scale|bandwidth_scale|epsilon|capacity_ratio|theta|sigma")
        ->required();
    w->add_option("--values", values, "comma-separated axis values")->required();
    w->add_flag("--no-reoptimize", no_reopt, "evaluate the initial point only");
    w->add_flag("--simulate", sim, "add simulated miss rate per point");
    int refine = -1;
    w->add_option("--refine-passes", refine, "restart passes from the other sweep points");
    w->add_option("--policy", c.policy, "edge policy for --simulate");
    w->add_option("--seeds", c.seeds, "N for seeds 1..N, or a comma list");
    w->add_option("--horizon", c.horizon, "synthetic trace length, seconds");
    w->add_option("--max-iters", c.max_iters, "outer iteration cap");

    CLI11_PARSE(app, argc, argv);

    try {
        if (b->parsed())
            return cmd_bounds(c, weighted);
        if (o->parsed())
            return cmd_optimize(c, vars_out);
        if (s->parsed())
            return cmd_simulate(c, trace_path);
        return cmd_sweep(c, axis, values, !no_reopt, sim, refine);
    } catch (const ParseError& e) {
        std::cerr << "error: parse: " << e.what() << '\n';
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
    }
    return 2;
}
