#include "stallkit/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "stallkit/errors.hpp"

namespace stallkit {

using Engine = detail::BoundEngine<double>;

EdgeRecursionConsts edge_recursion_consts(double lambda, double omega, double h, double sigma,
                                          double startup_delay, double L, double tau)
{
    EdgeRecursionConsts k;
    const double a = std::exp(-lambda * omega);
    const double c = -std::expm1(-lambda * omega);
    k.b = lambda == 0.0 ? 1.0 : 1.0 - lambda / (lambda + h) * -std::expm1(-(lambda + h) * omega);
    k.c_tilde = c / k.b;
    k.a_tilde = a / k.b;
    k.c_bar = k.c_tilde * std::exp(-h * sigma);
    k.a_bar = k.a_tilde * std::exp(-h * (sigma + startup_delay + (L - 1.0) * tau));
    return k;
}

namespace {

std::string stream_name(const char* kind, int j, int l, int k)
{
    std::ostringstream os;
    os << kind << "-stream (server " << j << ", router " << l << ", index " << k << ")";
    return os.str();
}

// Throws ConstraintViolated if some stream reachable from (i,l) has no MGF at x.
void require_exponent(const SystemTopology& t, const Engine& eng, int l, double x)
{
    double W, lm;
    auto check = [&](const Engine::Stream& s, const char* kind, int j, int k) {
        if (!(s.rho < 1.0))
            throw ConstraintViolated(stream_name(kind, j, l, k) + " unstable: load " +
                                     std::to_string(s.rho));
        if (!(x < s.alpha))
            throw ConstraintViolated(stream_name(kind, j, l, k) + ": exponent " + std::to_string(x) +
                                     " not below rate " + std::to_string(s.alpha));
        if (!eng.waiting(s, x, W, lm))
            throw ConstraintViolated(stream_name(kind, j, l, k) +
                                     ": waiting-time MGF pole at exponent " + std::to_string(x));
    };
    for (int j = 0; j < t.m(); ++j) {
        for (int nu = 0; nu < t.e_count(j, l); ++nu)
            check(eng.e(t.e_stream(j, l, nu)), "e", j, nu);
        for (int b = 0; b < t.d_count(j); ++b) {
            check(eng.d(t.d_stream(j, l, b)), "d", j, b);
            check(eng.dbar(t.d_stream(j, l, b)), "dbar", j, b);
        }
    }
}

void require_vars(const SystemTopology& t, const DecisionVariables& v)
{
    if (auto bad = check_invariants(t, v))
        throw InfeasibleVars(*bad);
}

}  // namespace

double sdtp_bound(const SystemTopology& t, const DecisionVariables& v, int i, int l, double sigma)
{
    require_vars(t, v);
    const Engine eng(t, v);
    require_exponent(t, eng, l, v.h[i]);
    return eng.sdtp(i, l, sigma);
}

double msd_bound(const SystemTopology& t, const DecisionVariables& v, int i, int l)
{
    require_vars(t, v);
    const Engine eng(t, v);
    require_exponent(t, eng, l, v.g[i]);
    return eng.msd(i, l);
}

double ttfc_bound(const SystemTopology& t, const DecisionVariables& v, int i, int l)
{
    require_vars(t, v);
    const Engine eng(t, v);
    require_exponent(t, eng, l, 1.0);
    return eng.ttfc(i, l);
}

double sdtp_bound_explicit(const SystemTopology& t, const DecisionVariables& v, int i, int l,
                           double sigma)
{
    const StreamParams sp = derive_stream_params(t, v);
    const double h = v.h[i];
    const int L = t.segments[i];
    const EdgeRecursionConsts ec =
        edge_recursion_consts(t.lambda(i, l), v.omega[t.omega_index(i, l)], h, sigma,
                              t.startup_delay, L, t.tau);
    Accum<double> total;
    for (int j = 0; j < t.m(); ++j) {
        const double Lr = v.L[t.L_index(j, i)];
        const int Lc = static_cast<int>(std::lround(Lr));
        if (std::fabs(Lr - Lc) > 1e-9)
            throw ConstraintViolated("explicit SDTP sum needs integral placement");
        Accum<double> inner;
        for (int nu = 0; nu < t.e_count(j, l); ++nu)
            for (int b = 0; b < t.d_count(j); ++b) {
                const double pq = v.p[t.p_index(i, j, l, nu)] * v.q[t.q_index(i, j, l, b)];
                const StreamQueue& qe = sp.e[t.e_stream(j, l, nu)];
                const StreamQueue& qd = sp.d[t.d_stream(j, l, b)];
                const StreamQueue& qb = sp.dbar[t.d_stream(j, l, b)];
                for (int w = 1; w <= L; ++w) {
                    const double mgf = w <= Lc ? download_mgf_cached(qe, w, h)
                                               : tandem_chunk_mgf_bound(qd, qb, Lc, w, h);
                    // ā e^{h(L-w)τ} written without the overflowing prefactor
                    const double coef =
                        ec.a_tilde * std::exp(-h * (sigma + t.startup_delay + (w - 1) * t.tau));
                    inner.add(pq * coef * mgf);
                }
            }
        total.add(v.pi[t.pi_index(i, j, l)] *
                  (ec.c_bar + ec.a_tilde * std::exp(-h * sigma) + inner.get()));
    }
    return total.get();
}

double capacity_violation_prob(const SystemTopology& t, const DecisionVariables& v, int l)
{
    Accum<double> mu, var;
    for (int i = 0; i < t.r(); ++i) {
        const double x = t.lambda(i, l) * v.omega[t.omega_index(i, l)];
        const double a = std::exp(-x);
        const double size = t.tau * t.segments[i];
        mu.add(size * -std::expm1(-x));
        var.add(size * size * a * -std::expm1(-x));
    }
    const double C = t.edge_capacity[l];
    const double s2 = var.get();
    if (s2 <= 0.0)
        return mu.get() <= C ? 0.0 : 1.0;
    return normal_q((C - mu.get()) / std::sqrt(s2));
}

double weighted_objective(const SystemTopology& t, const DecisionVariables& v, double sigma,
                          double theta, Exec exec)
{
    if (exec == Exec::serial)
        return detail::objective<double>(t, v, sigma, theta);

    const Engine eng(t, v);
    const double total = t.mean_lambda() * t.r() * t.R();
    const int P = t.r() * t.R();
    std::vector<double> terms(P, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < P; ++k) {
        const int i = k / t.R(), l = k % t.R();
        if (t.lambda(i, l) > 0)
            terms[k] = eng.pair_term(i, l, sigma, theta);
    }
    Accum<double> acc;
    for (int k = 0; k < P; ++k) {
        const double lam = t.lambda(k / t.R(), k % t.R());
        if (lam <= 0)
            continue;
        if (!std::isfinite(terms[k]))
            return Engine::inf();
        acc.add(lam / total * terms[k]);
    }
    return acc.get();
}

WeightedBounds weighted_bounds(const SystemTopology& t, const DecisionVariables& v, double sigma,
                               bool with_msd)
{
    const Engine eng(t, v);
    const double total = t.mean_lambda() * t.r() * t.R();
    Accum<double> s, m;
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l) {
            const double lam = t.lambda(i, l);
            if (lam <= 0)
                continue;
            s.add(lam / total * std::min(1.0, eng.sdtp(i, l, sigma)));
            if (with_msd)
                m.add(lam / total * eng.msd(i, l));
        }
    return {s.get(), m.get()};
}

BoundReport bound_report(const SystemTopology& t, const DecisionVariables& v,
                         const std::vector<double>& sigma_grid)
{
    require_vars(t, v);
    BoundReport rep;
    rep.sigma_grid = sigma_grid;
    rep.weighted_sdtp.assign(sigma_grid.size(), 0.0);
    const Engine eng(t, v);
    const double total = t.mean_lambda() * t.r() * t.R();

    bool integral = true;
    for (double x : v.L)
        integral = integral && std::fabs(x - std::round(x)) < 1e-9;

    Accum<double> wm, wt;
    bool msd_inf = false, ttfc_inf = false;
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l) {
            const double kappa = total > 0 ? t.lambda(i, l) / total : 0.0;
            const double msd = eng.msd(i, l);
            const double ttfc = eng.ttfc(i, l);
            if (kappa > 0) {
                wm.add(kappa * msd);
                wt.add(kappa * ttfc);
                msd_inf = msd_inf || !std::isfinite(msd);
                ttfc_inf = ttfc_inf || !std::isfinite(ttfc);
            }
            for (size_t k = 0; k < sigma_grid.size(); ++k) {
                double raw = eng.sdtp(i, l, sigma_grid[k]);
                if (integral && std::isfinite(raw) && t.segments[i] <= 256) {
                    const double ex = sdtp_bound_explicit(t, v, i, l, sigma_grid[k]);
                    if (std::fabs(raw - ex) > 1e-8 * std::fabs(ex)) {
                        ++rep.explicit_fallbacks;
                        std::ostringstream os;
                        os << "file " << i << " router " << l << " sigma " << sigma_grid[k]
                           << ": closed form " << raw << " vs explicit " << ex;
                        rep.diagnostics.push_back(os.str());
                        raw = ex;
                    }
                }
                const bool feasible = std::isfinite(raw) && std::isfinite(msd);
                const double clamped = std::isfinite(raw) ? std::clamp(raw, 0.0, 1.0) : 1.0;
                rep.rows.push_back({i, l, sigma_grid[k], raw, clamped, msd, ttfc, feasible});
                rep.weighted_sdtp[k] += kappa * clamped;
            }
        }
    const double inf = std::numeric_limits<double>::infinity();
    rep.weighted_msd = msd_inf ? inf : wm.get();
    rep.weighted_ttfc = ttfc_inf ? inf : wt.get();
    return rep;
}

void write_bound_csv(const BoundReport& rep, std::ostream& os)
{
    os << "file,router,sigma,sdtp_bound,msd_bound,ttfc_bound,feasible_flag\n";
    os.precision(12);
    for (const auto& r : rep.rows)
        os << r.file << ',' << r.router << ',' << r.sigma << ',' << r.sdtp << ',' << r.msd << ','
           << r.ttfc << ',' << (r.feasible ? 1 : 0) << '\n';
}

namespace {

// minimise f over [lo, hi] on a log grid followed by golden-section refinement
template <class F>
double argmin_log(F&& f, double lo, double hi)
{
    const int N = 40;
    const double a = std::log(lo), b = std::log(hi);
    int best = N;
    double fb = f(hi);
    for (int k = 0; k < N; ++k) {
        const double fx = f(std::exp(a + (b - a) * k / N));
        if (fx < fb) {
            fb = fx;
            best = k;
        }
    }
    double x0 = a + (b - a) * std::max(best - 1, 0) / N;
    double x1 = a + (b - a) * std::min(best + 1, N) / N;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = x1 - gr * (x1 - x0), d = x0 + gr * (x1 - x0);
    double fc = f(std::exp(c)), fd = f(std::exp(d));
    for (int it = 0; it < 60; ++it) {
        if (fc < fd) {
            x1 = d;
            d = c;
            fd = fc;
            c = x1 - gr * (x1 - x0);
            fc = f(std::exp(c));
        } else {
            x0 = c;
            c = d;
            fc = fd;
            d = x0 + gr * (x1 - x0);
            fd = f(std::exp(d));
        }
    }
    const double xm = std::exp(0.5 * (x0 + x1));
    return f(xm) <= fb ? xm : std::exp(a + (b - a) * best / N);
}

}  // namespace

DecisionVariables tune_exponents(const SystemTopology& t, const DecisionVariables& v0, double sigma,
                                 bool tune_h, bool tune_g)
{
    DecisionVariables v = v0;
    const StreamParams sp = derive_stream_params(t, v);
    const double margin = FeasOptions{}.margin;
    const Engine eng(t, v);
    for (int i = 0; i < t.r(); ++i) {
        const double cap = mgf_exponent_cap(t, v, sp, i, margin);
        if (!std::isfinite(cap) || !(cap > margin))
            continue;
        const double lo = std::max(margin, cap * 1e-6);
        if (tune_h) {
            v.h[i] = argmin_log(
                [&](double x) {
                    v.h[i] = x;
                    double s = 0;
                    for (int l = 0; l < t.R(); ++l)
                        if (t.lambda(i, l) > 0)
                            s += t.lambda(i, l) * eng.sdtp(i, l, sigma);
                    return std::isfinite(s) ? s : 1e300;
                },
                lo, cap);
        }
        if (tune_g) {
            v.g[i] = argmin_log(
                [&](double x) {
                    v.g[i] = x;
                    double s = 0;
                    for (int l = 0; l < t.R(); ++l)
                        if (t.lambda(i, l) > 0)
                            s += t.lambda(i, l) * eng.msd(i, l);
                    return std::isfinite(s) ? s : 1e300;
                },
                lo, cap);
        }
    }
    return v;
}

}  // namespace stallkit
