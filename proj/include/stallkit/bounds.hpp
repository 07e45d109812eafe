#pragma once

#include <cmath>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "stallkit/model.hpp"
#include "stallkit/numeric.hpp"

namespace stallkit {

struct EdgeRecursionConsts {
    double c_bar = 0;
    double a_tilde = 1;
    double a_bar = 1;
    double c_tilde = 0;
    double b = 1;
};

EdgeRecursionConsts edge_recursion_consts(double lambda, double omega, double h, double sigma,
                                          double startup_delay, double L, double tau);

// Raw (unclamped) bounds. Throw ConstraintViolated when an MGF-existence or
// stability condition fails at the file's exponent.
double sdtp_bound(const SystemTopology& t, const DecisionVariables& v, int i, int l, double sigma);
double msd_bound(const SystemTopology& t, const DecisionVariables& v, int i, int l);
double ttfc_bound(const SystemTopology& t, const DecisionVariables& v, int i, int l);

// Same quantity as sdtp_bound, summed chunk by chunk from the queueing
// primitives. Needs integral placement.
double sdtp_bound_explicit(const SystemTopology& t, const DecisionVariables& v, int i, int l,
                           double sigma);

double capacity_violation_prob(const SystemTopology& t, const DecisionVariables& v, int l);

enum class Exec { serial, parallel };

double weighted_objective(const SystemTopology& t, const DecisionVariables& v, double sigma,
                          double theta, Exec exec = Exec::parallel);

struct WeightedBounds {
    double sdtp = 0;  // Σ κ min(1, sdtp)
    double msd = 0;   // Σ κ msd
};
WeightedBounds weighted_bounds(const SystemTopology& t, const DecisionVariables& v, double sigma,
                               bool with_msd = true);

struct BoundRow {
    int file, router;
    double sigma;
    double sdtp_raw, sdtp, msd, ttfc;
    bool feasible;
};

struct BoundReport {
    std::vector<double> sigma_grid;
    std::vector<BoundRow> rows;
    std::vector<double> weighted_sdtp;  // per sigma
    double weighted_msd = 0;
    double weighted_ttfc = 0;
    int explicit_fallbacks = 0;
    std::vector<std::string> diagnostics;
};

BoundReport bound_report(const SystemTopology& t, const DecisionVariables& v,
                         const std::vector<double>& sigma_grid);
void write_bound_csv(const BoundReport& rep, std::ostream& os);

// Picks h_i (and g_i) minimising the file's weighted raw SDTP (MSD) bound
// over the feasible exponent interval, other variables fixed.
DecisionVariables tune_exponents(const SystemTopology& t, const DecisionVariables& v, double sigma,
                                 bool tune_h = true, bool tune_g = true);

namespace detail {

using std::exp;
using std::expm1;
using std::log;

// Closed-form bound evaluation over a generic scalar (double or tape Var).
template <class T>
class BoundEngine {
public:
    struct Stream {
        T alpha, eta, lam, rho;
        std::vector<T> c, n;  // per-file thinned rate and batch length
    };

    BoundEngine(const SystemTopology& t, const BasicVars<T>& v) : t_(t), v_(v)
    {
        const int D = t.num_d_streams(), E = t.num_e_streams();
        d_.resize(D);
        dbar_.resize(D);
        e_.resize(E);
        std::vector<T> thin(t.r() * t.R());
        for (int i = 0; i < t.r(); ++i)
            for (int l = 0; l < t.R(); ++l)
                thin[i * t.R() + l] = exp(-t.lambda(i, l) * v.omega[t.omega_index(i, l)]);
        for (int j = 0; j < t.m(); ++j)
            for (int l = 0; l < t.R(); ++l) {
                const int jl = j * t.R() + l;
                for (int b = 0; b < t.d_count(j); ++b) {
                    const int s = t.d_stream(j, l, b);
                    Stream& sd = d_[s];
                    Stream& sb = dbar_[s];
                    sd.alpha = v.w_d[s] * t.base_rate_dc[j];
                    sd.eta = T(t.shift_dc[j]);
                    sb.alpha = v.w_dbar[s] * t.base_rate_edge[jl];
                    sb.eta = T(t.shift_edge[jl]);
                    for (int i = 0; i < t.r(); ++i) {
                        const double li = t.lambda(i, l);
                        if (li <= 0)
                            continue;
                        sd.c.push_back(li * v.pi[t.pi_index(i, j, l)] * v.q[t.q_index(i, j, l, b)] *
                                       thin[i * t.R() + l]);
                        sd.n.push_back(t.segments[i] - v.L[t.L_index(j, i)]);
                    }
                    finish(sd);
                    sb.c = sd.c;
                    sb.n = sd.n;
                    finish(sb);
                }
                for (int nu = 0; nu < t.e_count(j, l); ++nu) {
                    const int s = t.e_stream(j, l, nu);
                    Stream& se = e_[s];
                    se.alpha = v.w_e[s] * t.base_rate_edge[jl];
                    se.eta = T(t.shift_edge[jl]);
                    for (int i = 0; i < t.r(); ++i) {
                        const double li = t.lambda(i, l);
                        if (li <= 0)
                            continue;
                        se.c.push_back(li * v.pi[t.pi_index(i, j, l)] *
                                       v.p[t.p_index(i, j, l, nu)] * thin[i * t.R() + l]);
                        se.n.push_back(v.L[t.L_index(j, i)]);
                    }
                    finish(se);
                }
            }
    }

    const Stream& d(int s) const { return d_[s]; }
    const Stream& dbar(int s) const { return dbar_[s]; }
    const Stream& e(int s) const { return e_[s]; }

    // P-K waiting MGF at x and log M(x); false when the MGF does not exist
    bool waiting(const Stream& s, const T& x, T& W, T& logm) const
    {
        if (!(value(x) < value(s.alpha)) || !(value(s.rho) < 1.0))
            return false;
        logm = kernel::log_mgf(s.alpha, s.eta, x);
        if (s.c.empty()) {
            W = T(1.0);
            return true;
        }
        Accum<T> acc;
        for (size_t k = 0; k < s.c.size(); ++k)
            acc.add(s.c[k] * expm1(s.n[k] * logm));
        const T den = x - acc.get();
        if (!(value(den) > 0.0))
            return false;
        W = (1.0 - s.rho) * x / den;
        return true;
    }

    // Σ_ν p δ^(e) + Σ_β q (δ^(d̄) + δ^(d,d̄)) with the e^{x L τ} prefactor removed
    bool delta_sum(int i, int j, int l, const T& x, const T& Lfile, T& out) const
    {
        const double tau = t_.tau;
        T Lc = v_.L[t_.L_index(j, i)];
        if (value(Lc) > value(Lfile))
            Lc = Lfile;
        const T n = Lfile - Lc;
        Accum<T> acc;
        T W, lm;
        for (int nu = 0; nu < t_.e_count(j, l); ++nu) {
            const Stream& s = e_[t_.e_stream(j, l, nu)];
            if (!waiting(s, x, W, lm))
                return false;
            acc.add(v_.p[t_.p_index(i, j, l, nu)] * W * kernel::geom_sum(lm - x * tau, Lc));
        }
        const T shift = exp(-x * Lc * tau);
        for (int b = 0; b < t_.d_count(j); ++b) {
            const int s = t_.d_stream(j, l, b);
            T Wd, lmd, Wb, lmb;
            if (!waiting(d_[s], x, Wd, lmd) || !waiting(dbar_[s], x, Wb, lmb))
                return false;
            const T ub = lmb - x * tau, ud = lmd - x * tau;
            const T term = Wb * kernel::geom_sum(ub, n) +
                           Wd * exp(lmb) * kernel::double_geom_sum(ud, ub, n);
            acc.add(v_.q[t_.q_index(i, j, l, b)] * shift * term);
        }
        out = acc.get();
        return true;
    }

    struct Edge {
        T c_tilde, a_tilde;
    };
    Edge edge(int i, int l, const T& x) const
    {
        const double lam = t_.lambda(i, l);
        const T& om = v_.omega[t_.omega_index(i, l)];
        const T a = exp(-lam * om);
        const T b = 1.0 - lam / (lam + x) * (1.0 - exp(-(lam + x) * om));
        return {(1.0 - a) / b, a / b};
    }

    static T inf() { return T(std::numeric_limits<double>::infinity()); }

    T sdtp(int i, int l, double sigma) const
    {
        const T& h = v_.h[i];
        const Edge ec = edge(i, l, h);
        const T K = ec.a_tilde * exp(-h * (sigma + t_.startup_delay - t_.tau));
        const T head = (ec.c_tilde + ec.a_tilde) * exp(-h * sigma);
        const T Lf = T(double(t_.segments[i]));
        Accum<T> acc;
        for (int j = 0; j < t_.m(); ++j) {
            T ds;
            if (!delta_sum(i, j, l, h, Lf, ds))
                return inf();
            acc.add(v_.pi[t_.pi_index(i, j, l)] * (head + K * ds));
        }
        return acc.get();
    }

    T mean_bound(int i, int l, const T& g, double startup, const T& Lf) const
    {
        const Edge ec = edge(i, l, g);
        const T K = ec.a_tilde * exp(-g * (startup - t_.tau));
        Accum<T> acc;
        for (int j = 0; j < t_.m(); ++j) {
            T ds;
            if (!delta_sum(i, j, l, g, Lf, ds))
                return inf();
            acc.add(v_.pi[t_.pi_index(i, j, l)] * (1.0 + ec.c_tilde + ec.a_tilde + K * ds));
        }
        return log(acc.get()) / g;
    }

    T msd(int i, int l) const
    {
        return mean_bound(i, l, v_.g[i], t_.startup_delay, T(double(t_.segments[i])));
    }

    T ttfc(int i, int l) const { return mean_bound(i, l, T(1.0), 0.0, T(1.0)); }

    // θ min(1, sdtp) + (1-θ) msd for one (file, router) pair
    T pair_term(int i, int l, double sigma, double theta) const
    {
        T out = T(0.0);
        if (theta > 0.0) {
            const T s = sdtp(i, l, sigma);
            out = out + theta * (value(s) < 1.0 ? s : T(1.0));
        }
        if (theta < 1.0)
            out = out + (1.0 - theta) * msd(i, l);
        return out;
    }

private:
    static void finish(Stream& s)
    {
        Accum<T> lam, work;
        for (size_t k = 0; k < s.c.size(); ++k) {
            lam.add(s.c[k]);
            work.add(s.c[k] * s.n[k]);
        }
        s.lam = lam.get();
        s.rho = value(s.lam) == 0.0 ? T(0.0) : work.get() * (s.eta + 1.0 / s.alpha);
    }

    const SystemTopology& t_;
    const BasicVars<T>& v_;
    std::vector<Stream> d_, dbar_, e_;
};

// weighted objective over a generic scalar, serial
template <class T>
T objective(const SystemTopology& t, const BasicVars<T>& v, double sigma, double theta)
{
    const BoundEngine<T> eng(t, v);
    const double total = t.mean_lambda() * t.r() * t.R();
    Accum<T> acc;
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l) {
            const double lam = t.lambda(i, l);
            if (lam <= 0)
                continue;
            const T term = eng.pair_term(i, l, sigma, theta);
            if (!std::isfinite(value(term)))
                return BoundEngine<T>::inf();
            acc.add(lam / total * term);
        }
    return acc.get();
}

}  // namespace detail

}  // namespace stallkit
