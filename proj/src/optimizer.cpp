#include "stallkit/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>

#include "stallkit/ad.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/policies.hpp"

namespace stallkit {

std::string block_name(Block b)
{
    switch (b) {
    case Block::pi_tilde: return "pi_tilde";
    case Block::h: return "h";
    case Block::w: return "w";
    case Block::L: return "L";
    case Block::omega: return "omega";
    }
    return "?";
}

Baseline parse_baseline(const std::string& s)
{
    static const std::pair<const char*, Baseline> names[] = {
        {"none", Baseline::none}, {"pea", Baseline::pea},   {"psp", Baseline::psp},
        {"pec", Baseline::pec},   {"chf", Baseline::chf},   {"lru", Baseline::lru},
        {"adaptsize", Baseline::adaptsize}, {"qlru", Baseline::qlru}, {"klru", Baseline::klru},
        {"krandom", Baseline::krandom}};
    for (const auto& [n, b] : names)
        if (s == n)
            return b;
    throw ConfigError("unknown baseline '" + s +
                      "' (none, pea, psp, pec, chf, lru, adaptsize, qlru, klru, krandom)");
}

std::string baseline_name(Baseline b)
{
    switch (b) {
    case Baseline::none: return "none";
    case Baseline::pea: return "pea";
    case Baseline::psp: return "psp";
    case Baseline::pec: return "pec";
    case Baseline::chf: return "chf";
    case Baseline::lru: return "lru";
    case Baseline::adaptsize: return "adaptsize";
    case Baseline::qlru: return "qlru";
    case Baseline::klru: return "klru";
    case Baseline::krandom: return "krandom";
    }
    return "?";
}

double OptimizerConfig::tau_of(Block b) const
{
    switch (b) {
    case Block::pi_tilde: return tau_pi;
    case Block::h: return tau_h;
    case Block::w: return tau_w;
    case Block::L: return tau_L;
    case Block::omega: return tau_omega;
    }
    return 1.0;
}

void OptimizerConfig::validate() const
{
    auto need = [](bool ok, const char* what) {
        if (!ok)
            throw ConfigError(std::string("optimizer: ") + what);
    };
    need(tau_pi > 0 && tau_h > 0 && tau_w > 0 && tau_L > 0 && tau_omega > 0,
         "prox weights must be > 0");
    need(gamma0 > 0 && gamma0 <= 1, "gamma0 must lie in (0,1]");
    need(gamma_decay > 0 && gamma_decay < 1, "gamma_decay must lie in (0,1)");
    need(max_halvings >= 0, "max_halvings must be >= 0");
    need(max_outer_iters >= 0, "max_outer_iters must be >= 0");
    need(tol > 0, "tol must be > 0");
    need(theta >= 0 && theta <= 1, "theta must lie in [0,1]");
    need(sigma >= 0, "sigma must be >= 0");
    need(inner_iters >= 1, "inner_iters must be >= 1");
    need(block_iters >= 1, "block_iters must be >= 1");
    need(fd_step > 0, "fd_step must be > 0");
}

void write_trace_csv(const OptTrace& tr, std::ostream& os)
{
    os << "iteration,objective,block,delta,wall_ms\n";
    os.precision(15);
    if (!tr.objective.empty())
        os << 0 << ',' << tr.objective[0] << ",init,0,0\n";
    for (const auto& r : tr.steps)
        os << r.iteration << ',' << r.objective << ',' << block_name(r.block) << ',' << r.delta
           << ',' << r.wall_ms << '\n';
}

double objective(const SystemTopology& t, const DecisionVariables& v, const OptimizerConfig& cfg)
{
    return weighted_objective(t, v, cfg.sigma, cfg.theta, cfg.exec);
}

namespace {

template <class V, class F>
void for_block(V& v, Block b, F&& f)
{
    switch (b) {
    case Block::pi_tilde: f(v.pi); f(v.p); f(v.q); break;
    case Block::h: f(v.h); f(v.g); break;
    case Block::w: f(v.w_d); f(v.w_dbar); f(v.w_e); break;
    case Block::L: f(v.L); break;
    case Block::omega: f(v.omega); break;
    }
}

std::vector<std::vector<double>*> block_fields(DecisionVariables& v, Block b)
{
    std::vector<std::vector<double>*> out;
    for_block(v, b, [&](std::vector<double>& f) { out.push_back(&f); });
    return out;
}

double lower_bound(Block b, const FeasOptions& f) { return b == Block::h ? f.margin : 0.0; }

void clamp_exponents(DecisionVariables& v, const std::vector<double>& caps, double lo)
{
    for (size_t i = 0; i < caps.size(); ++i) {
        const double hi = std::max(caps[i], lo);
        v.h[i] = std::clamp(v.h[i], lo, hi);
        v.g[i] = std::clamp(v.g[i], lo, hi);
    }
}

// Scales router l's TTLs down until the capacity-violation budget holds.
void fit_capacity(const SystemTopology& t, DecisionVariables& v, int l, double tol)
{
    const double eps = t.violation_budget[l];
    if (capacity_violation_prob(t, v, l) <= eps)
        return;
    std::vector<double> base(t.r());
    for (int i = 0; i < t.r(); ++i)
        base[i] = v.omega[t.omega_index(i, l)];
    auto set = [&](double s) {
        for (int i = 0; i < t.r(); ++i)
            v.omega[t.omega_index(i, l)] = s * base[i];
    };
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 100 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        set(mid);
        (capacity_violation_prob(t, v, l) <= eps ? lo : hi) = mid;
    }
    set(lo);
}

}  // namespace

std::vector<double> block_coords(const DecisionVariables& v, Block b)
{
    std::vector<double> x;
    for_block(v, b, [&](const std::vector<double>& f) { x.insert(x.end(), f.begin(), f.end()); });
    return x;
}

void set_block_coords(DecisionVariables& v, Block b, const std::vector<double>& x)
{
    size_t k = 0;
    for_block(v, b, [&](std::vector<double>& f) {
        std::copy(x.begin() + k, x.begin() + k + f.size(), f.begin());
        k += f.size();
    });
}

bool nonlinear_feasible(const SystemTopology& t, const DecisionVariables& v, const FeasOptions& f,
                        std::string* why)
{
    auto fail = [&](const std::string& s) {
        if (why)
            *why = s;
        return false;
    };
    if (auto bad = check_invariants(t, v, f))
        return fail(*bad);
    const StreamParams sp = derive_stream_params(t, v, f);
    const double top = 1.0 - f.margin;
    for (int s = 0; s < t.num_d_streams(); ++s)
        if (!(sp.rho_d[s] < top) || !(sp.rho_dbar[s] < top))
            return fail("d stream " + std::to_string(s) + " load too high");
    for (int s = 0; s < t.num_e_streams(); ++s)
        if (!(sp.rho_e[s] < top))
            return fail("e stream " + std::to_string(s) + " load too high");
    const std::vector<double> caps = exponent_caps(t, sp, f.margin);
    for (int i = 0; i < t.r(); ++i) {
        if (!(caps[i] > f.margin))
            return fail("no exponent satisfies the MGF conditions for file " + std::to_string(i));
        if (v.h[i] > caps[i] || v.g[i] > caps[i])
            return fail("exponent of file " + std::to_string(i) + " above its cap");
    }
    for (int l = 0; l < t.R(); ++l)
        if (capacity_violation_prob(t, v, l) > t.violation_budget[l] + f.tol)
            return fail("edge capacity violation above budget at router " + std::to_string(l));
    return true;
}

void project_block(const SystemTopology& t, DecisionVariables& v, Block b, const FeasOptions& f)
{
    switch (b) {
    case Block::pi_tilde: project_pi_tilde(t, v); break;
    case Block::w: project_weights(t, v); break;
    case Block::L: project_placement(t, v); break;
    case Block::h: {
        for (auto* x : {&v.h, &v.g})
            for (double& e : *x)
                e = std::max(e, f.margin);
        const StreamParams sp = derive_stream_params(t, v, f);
        clamp_exponents(v, exponent_caps(t, sp, f.margin), f.margin);
        break;
    }
    case Block::omega:
        for (double& w : v.omega)
            w = std::max(w, 0.0);
        for (int l = 0; l < t.R(); ++l)
            fit_capacity(t, v, l, 1e-12);
        break;
    }
}

PgdResult projected_gradient(const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                             const std::function<void(std::vector<double>&)>& project,
                             std::vector<double> x, double step, int max_iters, double tol)
{
    project(x);
    for (int it = 1; it <= max_iters; ++it) {
        const std::vector<double> g = grad(x);
        std::vector<double> y(x.size());
        for (size_t k = 0; k < x.size(); ++k)
            y[k] = x[k] - step * g[k];
        project(y);
        double diff = 0, scale = 1;
        for (size_t k = 0; k < x.size(); ++k) {
            diff = std::max(diff, std::fabs(y[k] - x[k]));
            scale = std::max(scale, std::fabs(y[k]));
        }
        x = std::move(y);
        if (diff <= tol * scale)
            return {std::move(x), it, true};
    }
    return {std::move(x), max_iters, false};
}

namespace {

std::vector<double> gradient_fd(const SystemTopology& t, const DecisionVariables& v, Block b,
                                const OptimizerConfig& cfg)
{
    const std::vector<double> x = block_coords(v, b);
    const int n = static_cast<int>(x.size());
    const double lo = lower_bound(b, cfg.feas);
    const double f0 = weighted_objective(t, v, cfg.sigma, cfg.theta, Exec::serial);
    if (!std::isfinite(f0))
        throw ConstraintViolated("objective is not finite at the gradient base point");
    std::vector<double> g(n, 0.0);
    std::vector<int> bad(n, 0);

#pragma omp parallel
    {
        DecisionVariables w = v;
        const auto fields = block_fields(w, b);
        auto coord = [&](int k) -> double& {
            for (auto* f : fields) {
                if (k < static_cast<int>(f->size()))
                    return (*f)[k];
                k -= static_cast<int>(f->size());
            }
            return (*fields.back())[0];
        };
        auto eval = [&](int k, double xk) {
            double& c = coord(k);
            const double keep = c;
            c = xk;
            const double r = weighted_objective(t, w, cfg.sigma, cfg.theta, Exec::serial);
            c = keep;
            return r;
        };
#pragma omp for schedule(dynamic, 8)
        for (int k = 0; k < n; ++k) {
            const double d = cfg.fd_step * std::max(1.0, std::fabs(x[k]));
            const bool down_ok = x[k] - d >= lo;
            const double fp = eval(k, x[k] + d);
            const double fm = down_ok ? eval(k, x[k] - d) : NAN;
            if (std::isfinite(fp) && std::isfinite(fm))
                g[k] = (fp - fm) / (2 * d);
            else if (std::isfinite(fp))
                g[k] = (fp - f0) / d;
            else if (std::isfinite(fm))
                g[k] = (f0 - fm) / d;
            else
                bad[k] = 1;
        }
    }
    for (int k = 0; k < n; ++k)
        if (bad[k])
            throw ConstraintViolated("finite-difference probes leave the feasible region in block " +
                                     block_name(b) + " at coordinate " + std::to_string(k));
    return g;
}

std::vector<double> gradient_tape(const SystemTopology& t, const DecisionVariables& v, Block b,
                                  const OptimizerConfig& cfg)
{
    ad::TapeScope scope;
    BasicVars<ad::Var> vv;
    auto lift = [](const std::vector<double>& src, std::vector<ad::Var>& dst) {
        dst.assign(src.begin(), src.end());
    };
    lift(v.pi, vv.pi);
    lift(v.p, vv.p);
    lift(v.q, vv.q);
    lift(v.w_d, vv.w_d);
    lift(v.w_dbar, vv.w_dbar);
    lift(v.w_e, vv.w_e);
    lift(v.L, vv.L);
    lift(v.omega, vv.omega);
    lift(v.h, vv.h);
    lift(v.g, vv.g);
    std::vector<int> ids;
    for_block(vv, b, [&](std::vector<ad::Var>& f) {
        for (auto& x : f) {
            x = ad::Var::independent(x.v);
            ids.push_back(x.i);
        }
    });
    const ad::Var f = detail::objective<ad::Var>(t, vv, cfg.sigma, cfg.theta);
    if (!std::isfinite(f.v))
        throw ConstraintViolated("objective is not finite at the gradient base point");
    std::vector<double> g(ids.size(), 0.0);
    if (f.i < 0)
        return g;
    const std::vector<double> adj = scope.tape().adjoints(f.i);
    for (size_t k = 0; k < ids.size(); ++k)
        g[k] = adj[ids[k]];
    return g;
}

}  // namespace

std::vector<double> gradient(const SystemTopology& t, const DecisionVariables& v, Block b,
                             const OptimizerConfig& cfg)
{
    return cfg.grad == GradMode::analytic ? gradient_tape(t, v, b, cfg) : gradient_fd(t, v, b, cfg);
}

DecisionVariables surrogate_step(const SystemTopology& t, const DecisionVariables& v, Block b,
                                 const OptimizerConfig& cfg, double* gamma_used)
{
    if (gamma_used)
        *gamma_used = 0.0;
    const std::vector<double> x0 = block_coords(v, b);
    const std::vector<double> g = gradient(t, v, b, cfg);
    if (std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; }))
        return v;

    const double tau = cfg.tau_of(b);
    DecisionVariables work = v;
    auto project = [&](std::vector<double>& x) {
        set_block_coords(work, b, x);
        project_block(t, work, b, cfg.feas);
        x = block_coords(work, b);
    };
    auto surrogate_grad = [&](const std::vector<double>& x) {
        std::vector<double> s(x.size());
        for (size_t k = 0; k < x.size(); ++k)
            s[k] = g[k] + tau * (x[k] - x0[k]);
        return s;
    };
    const PgdResult pr =
        projected_gradient(surrogate_grad, project, x0, 1.0 / tau, cfg.inner_iters, cfg.inner_tol);
    const std::vector<double>& xhat = pr.x;
    if (xhat == x0)
        return v;

    const double f0 = objective(t, v, cfg);
    std::vector<double> caps0;
    if (b != Block::h && cfg.follow == ExponentFollow::scale)
        caps0 = exponent_caps(t, derive_stream_params(t, v, cfg.feas), cfg.feas.margin);
    double gamma = cfg.gamma0;
    for (int k = 0; k <= cfg.max_halvings; ++k, gamma *= cfg.gamma_decay) {
        std::vector<double> x(x0.size());
        for (size_t c = 0; c < x.size(); ++c)
            x[c] = x0[c] + gamma * (xhat[c] - x0[c]);
        DecisionVariables cand = v;
        set_block_coords(cand, b, x);
        std::optional<DecisionVariables> alt;
        if (b != Block::h) {
            // other blocks move the exponent caps; pull h, g back inside
            if (check_invariants(t, cand, cfg.feas))
                continue;
            const StreamParams sp = derive_stream_params(t, cand, cfg.feas);
            const std::vector<double> caps = exponent_caps(t, sp, cfg.feas.margin);
            if (cfg.follow == ExponentFollow::scale) {
                alt = cand;
                for (int i = 0; i < t.r(); ++i)
                    if (std::isfinite(caps[i]) && std::isfinite(caps0[i]) && caps0[i] > 0) {
                        alt->h[i] *= caps[i] / caps0[i];
                        alt->g[i] *= caps[i] / caps0[i];
                    }
                clamp_exponents(*alt, caps, cfg.feas.margin);
            }
            clamp_exponents(cand, caps, cfg.feas.margin);
            if (cfg.follow == ExponentFollow::refit)
                alt = tune_exponents(t, cand, cfg.sigma, cfg.theta > 0, cfg.theta < 1);
        }
        if (!nonlinear_feasible(t, cand, cfg.feas))
            continue;
        double f1 = objective(t, cand, cfg);
        if (alt && nonlinear_feasible(t, *alt, cfg.feas)) {
            const double f2 = objective(t, *alt, cfg);
            if (f2 < f1) {
                cand = std::move(*alt);
                f1 = f2;
            }
        }
        if (std::isfinite(f1) && f1 <= f0) {
            if (gamma_used)
                *gamma_used = gamma;
            return cand;
        }
    }
    std::ostringstream os;
    os << "block " << block_name(b) << ": no step size in [" << gamma << ", " << cfg.gamma0
       << "] decreases the objective " << f0;
    throw LineSearchFailed(os.str());
}

std::vector<Block> apply_baseline(const SystemTopology& t, DecisionVariables& v, Baseline b)
{
    std::vector<Block> blocks(std::begin(kBlockOrder), std::end(kBlockOrder));
    auto drop = [&](Block x) { blocks.erase(std::find(blocks.begin(), blocks.end(), x)); };
    auto uniform_pq = [&] {
        for (int i = 0; i < t.r(); ++i)
            for (int l = 0; l < t.R(); ++l)
                for (int j = 0; j < t.m(); ++j) {
                    for (int nu = 0; nu < t.e_count(j, l); ++nu)
                        v.p[t.p_index(i, j, l, nu)] = 1.0 / t.e_count(j, l);
                    for (int q = 0; q < t.d_count(j); ++q)
                        v.q[t.q_index(i, j, l, q)] = 1.0 / t.d_count(j);
                }
    };
    switch (b) {
    case Baseline::none:
        break;
    case Baseline::pea:
        uniform_pq();
        for (int i = 0; i < t.r(); ++i)
            for (int l = 0; l < t.R(); ++l)
                for (int j = 0; j < t.m(); ++j)
                    v.pi[t.pi_index(i, j, l)] = 1.0 / t.m();
        drop(Block::pi_tilde);
        break;
    case Baseline::psp:
        uniform_pq();
        for (int l = 0; l < t.R(); ++l) {
            double tot = 0;
            for (int j = 0; j < t.m(); ++j)
                tot += t.base_rate_edge[j * t.R() + l];
            for (int i = 0; i < t.r(); ++i)
                for (int j = 0; j < t.m(); ++j)
                    v.pi[t.pi_index(i, j, l)] = t.base_rate_edge[j * t.R() + l] / tot;
        }
        drop(Block::pi_tilde);
        break;
    case Baseline::pec:
        v.L = placement_equal(t);
        drop(Block::L);
        break;
    case Baseline::chf:
        v.L = placement_hottest(t);
        drop(Block::L);
        break;
    case Baseline::lru:
    case Baseline::adaptsize:
    case Baseline::qlru:
    case Baseline::klru:
    case Baseline::krandom:
        v.L = placement_hottest(t);
        drop(Block::L);
        drop(Block::omega);
        break;
    }
    return blocks;
}

OptResult alternate(const SystemTopology& t, const DecisionVariables& init,
                    const OptimizerConfig& cfg)
{
    cfg.validate();
    OptResult res;
    DecisionVariables v = project_feasible(init, t, cfg.feas);
    const std::vector<Block> blocks = apply_baseline(t, v, cfg.baseline);
    v = project_feasible(v, t, cfg.feas);
    std::string why;
    if (!nonlinear_feasible(t, v, cfg.feas, &why))
        throw NoFeasiblePoint("initial point: " + why);

    double f = objective(t, v, cfg);
    if (!std::isfinite(f))
        throw NoFeasiblePoint("objective is not finite at the initial point");
    res.trace.objective.push_back(f);

    using clock = std::chrono::steady_clock;
    // backtracking for each block starts a little above its last accepted step
    std::vector<double> gamma_start(std::size(kBlockOrder), cfg.gamma0);
    for (int it = 1; it <= cfg.max_outer_iters; ++it) {
        const double f_start = f;
        bool failed = false;
        for (Block b : blocks) {
            const auto t0 = clock::now();
            double gamma = 0;
            DecisionVariables next = v;
            double fn = f;
            double& g_start = gamma_start[static_cast<int>(b)];
            for (int k = 0; k < cfg.block_iters; ++k) {
                double g = 0;
                try {
                    OptimizerConfig local = cfg;
                    local.gamma0 = g_start;
                    DecisionVariables cand = surrogate_step(t, next, b, local, &g);
                    if (g > 0)
                        g_start = std::min(cfg.gamma0, 4.0 * g);
                    const double fc = objective(t, cand, cfg);
                    const double drop = fn - fc;
                    next = std::move(cand);
                    fn = fc;
                    if (g > 0)
                        gamma = g;
                    if (g == 0 || drop < cfg.tol * std::fabs(fn))
                        break;
                } catch (const LineSearchFailed& e) {
                    g_start = cfg.gamma0;
                    failed = failed || k == 0;
                    if (k == 0)
                        res.trace.diagnostics.push_back("iteration " + std::to_string(it) + ": " + e.what());
                    break;
                } catch (const ConstraintViolated& e) {
                    res.trace.diagnostics.push_back("iteration " + std::to_string(it) + ": " + e.what());
                    break;
                }
            }
            const double ms =
                std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            res.trace.steps.push_back({it, b, fn, f - fn, ms, gamma});
            v = std::move(next);
            f = fn;
        }
        res.trace.objective.push_back(f);
        if (it == 1 && failed && !(f < f_start))
            throw NoProgress("first iteration found no decreasing step in any block");
        const double rel = (f_start - f) / std::max(std::fabs(f_start), 1e-300);
        if (rel < cfg.tol) {
            res.trace.converged = true;
            break;
        }
    }
    res.vars = std::move(v);
    return res;
}

}  // namespace stallkit
