// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "../oracles.hpp"
#include "stallkit/bounds.hpp"
#include "stallkit/config.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/optimizer.hpp"
#include "stallkit/policies.hpp"
#include "stallkit/queueing.hpp"
#include "stallkit/simulator.hpp"
#include "stallkit/sweep.hpp"
#include "stallkit/workload.hpp"

using namespace stallkit;

namespace {

const std::string kRef = std::string(STALLKIT_SOURCE_DIR) + "/configs/reference.json";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// optimized reference variables, shared by several criteria
struct Reference {
    ExperimentConfig cfg;
    OptResult res;
    double seconds = 0;
};

const Reference& reference()
{
    static const Reference r = [] {
        Reference x;
        x.cfg = load_config(kRef);
        const auto t0 = Clock::now();
        x.res = alternate(x.cfg.topo, initial_vars(x.cfg), x.cfg.opt);
        x.seconds = seconds_since(t0);
        return x;
    }();
    return r;
}

// ---------------------------------------------------------------- 1

// largest t at which pk_waiting_mgf is defined, by bisection on the domain
double pk_domain(const StreamQueue& q)
{
    double lo = 0, hi = q.service.rate;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        try {
            const double x = pk_waiting_mgf(q, mid);
            (std::isfinite(x) && x > 0 ? lo : hi) = mid;
        } catch (const Error&) {
            hi = mid;
        }
    }
    return lo;
}

Outcome mgf_oracle()
{
    const auto t0 = Clock::now();
    oracle::Rng rng(20240601);
    std::uniform_real_distribution<double> U(0, 1);
    const int N = 1000000;
    int checks = 0, bad = 0;
    double worst = 0;
    auto compare = [&](double want, const std::vector<double>& s) {
        double m = 0, m2 = 0;
        for (double x : s) {
            m += x;
            m2 += x * x;
        }
        m /= s.size();
        const double se = std::sqrt(std::max(0.0, m2 / s.size() - m * m) / s.size());
        const double z = std::fabs(want - m) / se;
        worst = std::max(worst, z);
        ++checks;
        bad += !(z <= 3.0);
    };
    for (int p = 0; p < 10; ++p) {
        oracle::Mix mx;
        mx.alpha = 0.5 + 3.0 * U(rng);
        mx.eta = 0.3 * U(rng);
        const int K = 1 + p % 3;
        double tot = 0;
        for (int k = 0; k < K; ++k) {
            mx.w.push_back(0.2 + U(rng));
            mx.n.push_back(1 + static_cast<int>(4 * U(rng)));
            tot += mx.w.back();
        }
        for (double& w : mx.w)
            w /= tot;
        const double rho = 0.2 + 0.5 * U(rng);
        mx.lam = rho / mx.mean();
        const StreamQueue q = mx.queue();

        // exponents up to a quarter of each domain keep e^{tX} light-tailed
        const double tp = pk_domain(q);
        std::vector<double> xe(N), xb(N), xw(N);
        for (int k = 0; k < N; ++k) {
            xe[k] = oracle::shifted_exp(rng, mx.alpha, mx.eta);
            xb[k] = oracle::batch_service(rng, mx);
            xw[k] = oracle::pk_wait(rng, mx);
        }
        int nmax = 0;
        for (int n : mx.n)
            nmax = std::max(nmax, n);
        std::vector<double> s(N);
        for (int j = 1; j <= 5; ++j) {
            const double frac = 0.05 * j;
            const double te = frac * mx.alpha, tb = frac * mx.alpha / nmax, tw = frac * tp;
            for (int k = 0; k < N; ++k)
                s[k] = std::exp(te * xe[k]);
            compare(mgf_shifted_exp(q.service, te), s);
            for (int k = 0; k < N; ++k)
                s[k] = std::exp(tb * xb[k]);
            compare(batch_service_mgf(q, tb), s);
            for (int k = 0; k < N; ++k)
                s[k] = std::exp(tw * xw[k]);
            compare(pk_waiting_mgf(q, tw), s);
        }
    }
    const double secs = seconds_since(t0);
    return {bad == 0 && secs < 60,
            fmt("%.0f/%.0f comparisons within 3 se (max |z| %.2f), %.1f s", checks - bad, checks,
                worst, secs)};
}

// ---------------------------------------------------------------- 2

Outcome pk_mean()
{
    oracle::Mix mx{1.5, 0.2, 0, {0.5, 0.3, 0.2}, {1, 2, 4}};
    mx.lam = 0.5 / mx.mean();
    const auto w = simulate_stream_waits(mx.queue(), 1000000, 77);
    double s = 0;
    for (double x : w)
        s += x;
    const double got = s / w.size();
    const double want = mx.lam * mx.second_moment() / (2 * (1 - mx.rho()));
    const double rel = std::fabs(got - want) / want;
    return {rel <= 0.02, fmt("mean wait %.5f vs P-K %.5f, rel err %.4f (rho %.2f)", got, want, rel,
                             mx.rho())};
}

// ---------------------------------------------------------------- 3

double max_load(const SystemTopology& t, const DecisionVariables& v)
{
    const StreamParams sp = derive_stream_params(t, v);
    double m = 0;
    for (const auto* r : {&sp.rho_d, &sp.rho_dbar, &sp.rho_e})
        for (double x : *r)
            m = std::max(m, x);
    return m;
}

// whole-chunk placement, random TTL windows and server preferences
DecisionVariables random_integral_vars(const SystemTopology& t, oracle::Rng& rng)
{
    DecisionVariables v = uniform_init(t);
    for (int j = 0; j < t.m(); ++j) {
        double left = t.server_capacity[j];
        for (int i = 0; i < t.r(); ++i) {
            const double take = std::min<double>(t.segments[i], std::floor(left));
            v.L[t.L_index(j, i)] = take;
            left -= take;
        }
    }
    std::uniform_real_distribution<double> U(0, 1);
    for (double& w : v.omega)
        w = 40 * U(rng);
    for (double& x : v.pi)
        x = 0.2 + U(rng);
    return project_feasible(v, t);
}

Outcome bound_dominance()
{
    const auto t0 = Clock::now();
    oracle::Rng rng(31337);
    const std::vector<double> sigmas = {0, 2, 4, 8, 16};
    int instances = 0, bad = 0, attempts = 0;
    double min_gap = INFINITY;
    std::string first_bad;
    while (instances < 24 && attempts < 200) {
        ++attempts;
        SystemTopology t = oracle::random_topology(rng, 10);
        DecisionVariables v;
        try {
            v = random_integral_vars(t, rng);
            // thin the arrivals until every stream is at or below 0.8
            for (int k = 0; k < 40 && max_load(t, v) > 0.8; ++k) {
                for (double& l : t.arrival_rate)
                    l *= 0.8;
                t.finalize();
            }
            if (max_load(t, v) > 0.8)
                continue;
        } catch (const Error&) {
            continue;
        }
        const double total = std::accumulate(t.arrival_rate.begin(), t.arrival_rate.end(), 0.0);
        SimOptions so;
        so.horizon = 1e4 / total;
        so.warmup_frac = 0.1;
        so.sigma_grid = sigmas;
        Metrics m;
        std::vector<double> bound(sigmas.size());
        double msd = 0;
        try {
            m = run(t, v, {}, gen_poisson_trace(t, so.horizon, 1000 + attempts), 1000 + attempts, so);
            for (size_t k = 0; k < sigmas.size(); ++k) {
                const DecisionVariables tv = tune_exponents(t, v, sigmas[k], true, k == 0);
                bound[k] = weighted_bounds(t, tv, sigmas[k], false).sdtp;
                if (k == 0)
                    msd = weighted_bounds(t, tv, sigmas[k], true).msd;
            }
        } catch (const Error&) {
            continue;
        }
        ++instances;
        // at σ=0 every request counts (se 0) and the κ-weighted sum of clamped
        // bounds is 1 only up to rounding
        const double round_slack = 1e-12;
        bool ok = true;
        for (size_t k = 0; k < sigmas.size(); ++k) {
            const double gap = bound[k] - (m.sdtp[k] - 3 * m.sdtp_se[k]);
            min_gap = std::min(min_gap, gap);
            ok = ok && gap >= -round_slack;
        }
        const double mgap = msd - (m.mean_stall - 3 * m.mean_stall_se);
        ok = ok && mgap >= -round_slack;
        if (!ok) {
            ++bad;
            if (first_bad.empty())
                first_bad = fmt(" first failure at attempt %.0f", attempts);
        }
    }
    const double secs = seconds_since(t0);
    return {instances >= 20 && bad == 0 && secs < 300,
            fmt("%.0f instances, %.0f violations, min SDTP margin %.3g, %.1f s", instances, bad,
                min_gap, secs) +
                first_bad};
}

// ---------------------------------------------------------------- 4

Outcome golden_recursion()
{
    SystemTopology t = oracle::tiny_topology(1, {3}, 1e-6);
    t.tau = 2;
    t.startup_delay = 1;
    t.shift_edge = {3};
    t.finalize();
    const DecisionVariables v = uniform_init(t);
    SimOptions o;
    o.warmup_frac = 0;
    o.edge_cache = false;
    o.deterministic_service = true;
    RequestTrace tr;
    tr.records = {{0, 0, 0}};
    const double g3 = run(t, v, {}, tr, 1, o).stalls.at(0);
    t.shift_edge = {1};
    t.finalize();
    const double g1 = run(t, v, {}, tr, 1, o).stalls.at(0);
    return {g3 == 4.0 && g1 == 0.0, fmt("D=3g gives %.17g s, D=g gives %.17g s", g3, g1)};
}

// ---------------------------------------------------------------- 5

Outcome optimizer_convergence()
{
    const Reference& r = reference();
    const auto& obj = r.res.trace.objective;
    bool monotone = true;
    for (size_t k = 1; k < obj.size(); ++k)
        monotone = monotone && obj[k] <= obj[k - 1] + 1e-9;
    const int iters = static_cast<int>(obj.size()) - 1;
    const double last_rel =
        obj.size() >= 2 ? (obj[obj.size() - 2] - obj.back()) / std::fabs(obj[obj.size() - 2]) : 0;
    const bool ok = monotone && r.res.trace.converged && iters <= 20 && last_rel < 1e-4;
    return {ok, fmt("%.6f -> %.6f in %.0f iterations (last rel decrease %.2e), ", obj.front(),
                    obj.back(), iters, last_rel) +
                    (monotone ? "monotone" : "NOT monotone") + fmt(", %.1f s", r.seconds)};
}

// ---------------------------------------------------------------- 6

Outcome capacity_invariant()
{
    const Reference& r = reference();
    const SystemTopology& t = r.cfg.topo;
    DecisionVariables v = r.res.vars;
    // long windows keep the TTL cache under pressure
    std::fill(v.omega.begin(), v.omega.end(), 5000.0);
    const double total = std::accumulate(t.arrival_rate.begin(), t.arrival_rate.end(), 0.0);
    SimOptions o;
    o.horizon = 1e6 / total;
    o.warmup_frac = 0;
    o.occupancy_samples = 1;
    const RequestTrace tr = gen_poisson_trace(t, o.horizon, 606);
    std::string detail;
    bool ok = true;
    for (auto k : {PolicyKind::ttl, PolicyKind::lru, PolicyKind::qlru, PolicyKind::klru,
                   PolicyKind::krandom, PolicyKind::adaptsize}) {
        PolicyParams p = r.cfg.policy;
        p.kind = k;
        const Metrics m = run(t, v, p, tr, 606, o);
        ok = ok && m.capacity_violations == 0 && m.capacity_checks >= 1000000 - 5000;
        detail += policy_name(k) + fmt(" %.0f/%.0f ", m.capacity_violations, m.capacity_checks);
    }
    return {ok, fmt("%.0f requests; violations/checks: ", double(tr.records.size())) + detail};
}

// ---------------------------------------------------------------- 7

Outcome thinning_law()
{
    SystemTopology t = oracle::tiny_topology(5, {1, 1, 1, 1, 1}, 0.0);
    t.arrival_rate = {0.05, 0.1, 0.15, 0.2, 0.25};
    t.finalize();
    DecisionVariables v = uniform_init(t);
    const std::vector<double> omega = {20, 8, 6, 3, 2};
    v.omega = omega;
    SimOptions o;
    o.horizon = 1e6;
    const RequestTrace tr = gen_poisson_trace(t, o.horizon, 4242);
    double worst = 0;
    int bad = 0;
    for (auto mode : {TtlMode::fixed, TtlMode::exponential}) {
        o.ttl_mode = mode;
        const Metrics m = run(t, v, {}, tr, 4242, o);
        for (int i = 0; i < t.r(); ++i) {
            const double lam = t.arrival_rate[i];
            const double p = mode == TtlMode::fixed ? std::exp(-lam * omega[i])
                                                    : (1 / omega[i]) / (1 / omega[i] + lam);
            const double n = double(m.pair_requests[i]);
            const double got = m.pair_misses[i] / n;
            const double z = std::fabs(got - p) / std::sqrt(p * (1 - p) / n);
            worst = std::max(worst, z);
            bad += !(z <= 3);
        }
    }
    return {bad == 0, fmt("10 file/mode checks, %.0f outside 3 se, max |z| %.2f", bad, worst)};
}

// ---------------------------------------------------------------- 8

Outcome convexity()
{
    oracle::Rng rng(88);
    std::uniform_real_distribution<double> U(0, 1);
    double worst = INFINITY;
    int probes = 0;
    for (; probes < 100; ++probes) {
        oracle::Mix mx{0.5 + 3 * U(rng), 0.3 * U(rng), 0, {0.4, 0.6},
                       {1 + static_cast<int>(3 * U(rng)), 1 + static_cast<int>(5 * U(rng))}};
        mx.lam = (0.1 + 0.8 * U(rng)) / mx.mean();
        StreamQueue q = mx.queue();
        // Λ(B(h) - 1) - h, the MGF-existence constraint in <= 0 form
        auto c = [&](const StreamQueue& s, double h) {
            return s.agg_rate * (batch_service_mgf(s, h) - 1) - h;
        };
        const int nmax = std::max(mx.n[0], mx.n[1]);
        const double hmax = 0.9 * mx.alpha;
        const double h = (0.05 + 0.85 * U(rng)) * hmax / nmax;
        const double dh = 1e-3 * h;
        const double d2h = c(q, h + dh) - 2 * c(q, h) + c(q, h - dh);
        // in α with h fixed, over α > h
        const double a = mx.alpha, da = 1e-3 * (a - h);
        StreamQueue qp = q, qm = q;
        qp.service.rate = a + da;
        qm.service.rate = a - da;
        const double d2a = c(qp, h) - 2 * c(q, h) + c(qm, h);
        worst = std::min({worst, d2h, d2a});
    }
    return {worst >= -1e-8, fmt("%.0f probes in h and alpha, min second difference %.3e", probes,
                                worst)};
}

// ---------------------------------------------------------------- 9

double norm(const std::vector<double>& x)
{
    return std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
}

Outcome gradient_agreement()
{
    int probes = 0, bad = 0;
    double worst = 0;
    for (std::uint64_t seed = 1; probes < 50 && seed < 200; ++seed) {
        oracle::Rng gen(seed);
        SystemTopology t = oracle::random_topology(gen, 6);
        for (double& l : t.arrival_rate)
            l *= 0.2;
        t.finalize();
        DecisionVariables v;
        try {
            v = tune_exponents(t, uniform_init(t), 2.0);
        } catch (const Error&) {
            continue;
        }
        OptimizerConfig c;
        c.theta = 0.5;
        c.sigma = 2.0;
        for (Block b : kBlockOrder) {
            if (probes >= 50)
                break;
            c.grad = GradMode::analytic;
            const auto ga = gradient(t, v, b, c);
            c.grad = GradMode::finite_diff;
            const auto gf = gradient(t, v, b, c);
            const double scale = norm(gf);
            // below this the central differences are mostly rounding noise
            if (!(scale > 1e-5))
                continue;
            std::vector<double> d(ga.size());
            for (size_t k = 0; k < d.size(); ++k)
                d[k] = ga[k] - gf[k];
            const double rel = norm(d) / scale;
            worst = std::max(worst, rel);
            bad += !(rel <= 1e-4);
            ++probes;
        }
    }
    return {probes >= 50 && bad == 0,
            fmt("%.0f block-gradient probes, %.0f above 1e-4, max rel diff %.2e", probes, bad, worst)};
}

// ---------------------------------------------------------------- 10

Outcome paper_trends()
{
    const auto t0 = Clock::now();
    const Reference& r = reference();
    std::string detail;
    bool ok = true;

    // optimized weighted SDTP under bandwidth scaling
    {
        const std::vector<double> xs = {1.0, 1.25, 1.5, 1.75, 2.0, 2.25};
        const auto pts = run_sweep(r.cfg, SweepAxis::bandwidth_scale, xs, &r.res.vars);
        bool mono = true;
        for (size_t k = 1; k < pts.size(); ++k)
            mono = mono && pts[k].sdtp <= pts[k - 1].sdtp + 1e-9;
        ok = ok && mono;
        detail += fmt("bandwidth x1..x2.25 SDTP %.4f..%.4f ", pts.front().sdtp, pts.back().sdtp) +
                  (mono ? "non-increasing" : "NOT monotone");
    }

    // simulated edge miss rate against edge capacity, same traces at every point
    {
        const std::vector<double> ratios = {0.05, 0.1, 0.15, 0.2, 0.3, 0.5};
        std::vector<double> miss, se;
        PolicyParams p = r.cfg.policy;
        p.kind = PolicyKind::lru;
        SimOptions o = r.cfg.sim;
        o.horizon = 4e6;
        for (double x : ratios) {
            const ExperimentConfig c = apply_axis(r.cfg, SweepAxis::capacity_ratio, x);
            const SeedSummary s =
                summarize(run_seeds(c.topo, r.res.vars, p, nullptr, {1, 2, 3, 4}, o));
            miss.push_back(s.miss_rate);
            se.push_back(s.miss_rate_se);
        }
        bool mono = true;
        for (size_t k = 1; k < miss.size(); ++k)
            mono = mono && miss[k] <= miss[k - 1];
        ok = ok && mono;
        detail += fmt("; LRU miss rate %.3f..%.3f over capacity ratio 0.05..0.5 ", miss.front(),
                      miss.back()) +
                  (mono ? "non-increasing" : "NOT monotone");
    }

    // full optimization against the restricted baselines
    {
        detail += fmt("; full %.4f vs", r.res.trace.objective.back());
        for (auto b : {Baseline::pea, Baseline::psp, Baseline::pec, Baseline::chf}) {
            ExperimentConfig c = r.cfg;
            c.opt.baseline = b;
            const OptResult res = alternate(c.topo, initial_vars(c), c.opt);
            const double fb = res.trace.objective.back();
            ok = ok && r.res.trace.objective.back() <= fb + 1e-9;
            detail += " " + baseline_name(b) + fmt(" %.4f", fb);
        }
    }

    // θ sweep frontier: SDTP non-increasing, MSD non-decreasing in θ
    {
        const std::vector<double> th = {0, 0.5, 0.9, 0.99, 1};
        SweepOptions so;
        so.refine_passes = 1;
        const auto pts = run_sweep(r.cfg, SweepAxis::theta, th, &r.res.vars, so);
        bool mono = true;
        for (size_t k = 1; k < pts.size(); ++k)
            mono = mono && pts[k].sdtp <= pts[k - 1].sdtp + 1e-12 &&
                   pts[k].msd >= pts[k - 1].msd - 1e-12;
        ok = ok && mono;
        detail += fmt("; theta 0..1 SDTP %.4f..%.4f MSD %.3f..%.3f ", pts.front().sdtp,
                      pts.back().sdtp, pts.front().msd, pts.back().msd) +
                  (mono ? "monotone" : "NOT monotone");
    }
    detail += fmt(", %.1f s", seconds_since(t0));
    return {ok, detail};
}

}  // namespace

int main()
{
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"MGF oracle", mgf_oracle},
        {"P-K mean wait", pk_mean},
        {"bound dominance", bound_dominance},
        {"golden recursion", golden_recursion},
        {"optimizer monotonicity and convergence", optimizer_convergence},
        {"edge capacity invariant", capacity_invariant},
        {"TTL thinning law", thinning_law},
        {"constraint convexity", convexity},
        {"gradient agreement", gradient_agreement},
        {"qualitative trends", paper_trends},
    };
    int failed = 0, n = 0;
    for (const auto& [name, fn] : criteria) {
        ++n;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed;
}
