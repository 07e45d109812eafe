#include "stallkit/sweep.hpp"

#include <cmath>
#include <optional>

#include "stallkit/bounds.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/optimizer.hpp"

namespace stallkit {

namespace {

void evaluate(const ExperimentConfig& cfg, SweepPoint& p)
{
    p.objective = objective(cfg.topo, p.vars, cfg.opt);
    const WeightedBounds wb = weighted_bounds(cfg.topo, p.vars, cfg.opt.sigma);
    p.sdtp = wb.sdtp;
    p.msd = wb.msd;
}

// Optimized (or projected) point started from v; nullopt if v cannot be
// made feasible under cfg.
std::optional<SweepPoint> solve(const ExperimentConfig& cfg, double value, const DecisionVariables& v,
                                bool reoptimize)
{
    SweepPoint p{value, {}};
    try {
        if (reoptimize) {
            OptResult res = alternate(cfg.topo, v, cfg.opt);
            p.vars = std::move(res.vars);
            p.iterations = static_cast<int>(res.trace.objective.size()) - 1;
            p.converged = res.trace.converged;
        } else {
            p.vars = project_feasible(v, cfg.topo, cfg.opt.feas);
            if (!nonlinear_feasible(cfg.topo, p.vars, cfg.opt.feas))
                return std::nullopt;
        }
    } catch (const NoFeasiblePoint&) {
        return std::nullopt;
    } catch (const NoProgress&) {
        // already stationary for every block
        p.vars = project_feasible(v, cfg.topo, cfg.opt.feas);
        p.iterations = 1;
    }
    evaluate(cfg, p);
    if (!std::isfinite(p.objective))
        return std::nullopt;
    return p;
}

}  // namespace

std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                  const std::vector<double>& values, const DecisionVariables* init,
                                  const SweepOptions& opt)
{
    if (values.empty())
        throw ConfigError("sweep: empty value list");
    std::vector<ExperimentConfig> cfgs;
    for (double x : values)
        cfgs.push_back(apply_axis(base, axis, x));

    std::vector<SweepPoint> pts;
    for (size_t k = 0; k < values.size(); ++k) {
        std::optional<SweepPoint> p;
        if (!pts.empty())
            p = solve(cfgs[k], values[k], pts.back().vars, opt.reoptimize);
        if (!p)
            p = solve(cfgs[k], values[k], init ? *init : initial_vars(cfgs[k]), opt.reoptimize);
        if (!p)
            throw NoFeasiblePoint("sweep: no feasible point at " + axis_name(axis) + " = " +
                                  std::to_string(values[k]));
        pts.push_back(std::move(*p));
    }

    for (int pass = 0; pass < opt.refine_passes; ++pass) {
        bool changed = false;
        for (size_t k = 0; k < pts.size(); ++k) {
            const ExperimentConfig& cfg = cfgs[k];
            std::optional<DecisionVariables> best;
            double fbest = pts[k].objective;
            for (size_t j = 0; j < pts.size(); ++j) {
                if (j == k)
                    continue;
                DecisionVariables v = project_feasible(pts[j].vars, cfg.topo, cfg.opt.feas);
                if (!nonlinear_feasible(cfg.topo, v, cfg.opt.feas))
                    continue;
                const double f = objective(cfg.topo, v, cfg.opt);
                if (f < fbest) {
                    fbest = f;
                    best = std::move(v);
                }
            }
            if (!best)
                continue;
            std::optional<SweepPoint> p = solve(cfg, values[k], *best, opt.reoptimize);
            if (!p || !(p->objective < pts[k].objective)) {
                p = SweepPoint{values[k], std::move(*best)};
                evaluate(cfg, *p);
            }
            p->restarts = pts[k].restarts + 1;
            pts[k] = std::move(*p);
            changed = true;
        }
        if (!changed)
            break;
    }

    // every point takes the best of the final pool under its own config, so
    // along the θ axis the reported (SDTP, MSD) pairs form a monotone frontier
    const std::vector<SweepPoint> pool = pts;
    for (size_t k = 0; k < pts.size(); ++k) {
        const ExperimentConfig& cfg = cfgs[k];
        for (size_t j = 0; j < pool.size(); ++j) {
            if (j == k)
                continue;
            if (!nonlinear_feasible(cfg.topo, pool[j].vars, cfg.opt.feas))
                continue;
            if (!(objective(cfg.topo, pool[j].vars, cfg.opt) < pts[k].objective))
                continue;
            SweepPoint p = pool[j];
            p.value = values[k];
            p.restarts = pts[k].restarts;
            evaluate(cfg, p);
            pts[k] = std::move(p);
        }
    }
    return pts;
}

}  // namespace stallkit
