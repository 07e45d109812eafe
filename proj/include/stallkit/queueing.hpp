#pragma once

#include <cmath>
#include <vector>

#include "stallkit/ad.hpp"

namespace stallkit {

struct ShiftedExp {
    double rate = 1.0;   // α, 1/s
    double shift = 0.0;  // η, s
};

struct BatchTerm {
    double weight;
    double batch_len;  // chunks; real-valued while placement is relaxed
};

struct StreamQueue {
    ShiftedExp service;
    double agg_rate = 0.0;  // Λ
    std::vector<BatchTerm> batch_mix;
};

double mgf_shifted_exp(const ShiftedExp& s, double t);
double batch_service_mgf(const StreamQueue& q, double t);
double load_intensity(const StreamQueue& q);
double pk_waiting_mgf(const StreamQueue& q, double t);
double download_mgf_cached(const StreamQueue& q, int g, double t);

// Upper bound on E[exp(t D^(v))] for chunk v > L_cached served over the
// datacenter queue `dc` followed by the server-to-edge queue `dbar`.
double tandem_chunk_mgf_bound(const StreamQueue& dc, const StreamQueue& dbar,
                              int L_cached, int v, double t);

namespace kernel {

using std::exp;
using std::expm1;
using std::fabs;
using std::log;
using std::log1p;

// log of α e^{ηt} / (α - t)
template <class T>
T log_mgf(const T& alpha, const T& eta, const T& t)
{
    return eta * t - log1p(-t / alpha);
}

// Σ_{b=1}^{n} e^{b u}, analytic in real n
template <class T>
T geom_sum(const T& u, const T& n)
{
    if (fabs(value(u)) < 1e-8)
        return n + u * n * (n + 1.0) * 0.5 + u * u * n * (n + 1.0) * (2.0 * n + 1.0) / 12.0;
    return exp(u) * expm1(n * u) / expm1(u);
}

// d/du of geom_sum, i.e. Σ b e^{b u}
template <class T>
T geom_sum_deriv(const T& u, const T& n)
{
    if (fabs(value(n) * value(u)) < 1e-3 && fabs(value(u)) < 1e-3) {
        const T s1 = n * (n + 1.0) * 0.5;
        const T s2 = n * (n + 1.0) * (2.0 * n + 1.0) / 6.0;
        return s1 + u * s2 + u * u * 0.5 * s1 * s1;
    }
    const T b = expm1(u);
    return exp(u) / b * (n * exp(n * u) - expm1(n * u) / b);
}

// Σ_{a=1}^{n} Σ_{b=1}^{a} x^b y^{a-b} with x = e^{lx}, y = e^{ly}
template <class T>
T double_geom_sum(const T& lx, const T& ly, const T& n)
{
    const T d = lx - ly;
    if (fabs(value(d)) < 1e-8) {
        const T m = (lx + ly) * 0.5;
        return exp(lx - m) * geom_sum_deriv(m, n);
    }
    return exp(lx - ly) * (geom_sum(lx, n) - geom_sum(ly, n)) / expm1(d);
}

// (1-ρ) t / (t - excess), excess = Λ(B(t) - 1)
template <class T>
T pk_from_excess(const T& rho, const T& t, const T& excess)
{
    return (1.0 - rho) * t / (t - excess);
}

}  // namespace kernel

}  // namespace stallkit
