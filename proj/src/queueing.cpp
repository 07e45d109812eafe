#include "stallkit/queueing.hpp"

#include <string>

#include "stallkit/errors.hpp"
#include "stallkit/numeric.hpp"

namespace stallkit {

namespace {

void check_pole(const ShiftedExp& s, double t)
{
    if (!(t < s.rate))
        throw MgfUndefined("t=" + std::to_string(t) + " is not below rate " + std::to_string(s.rate));
}

// Λ (B(t) - 1), accurate for small t
double excess(const StreamQueue& q, double t)
{
    const double lm = kernel::log_mgf(q.service.rate, q.service.shift, t);
    Accum<double> acc;
    for (const auto& b : q.batch_mix)
        acc.add(b.weight * std::expm1(b.batch_len * lm));
    return q.agg_rate * acc.get();
}

}  // namespace

double mgf_shifted_exp(const ShiftedExp& s, double t)
{
    check_pole(s, t);
    return s.rate * std::exp(s.shift * t) / (s.rate - t);
}

double batch_service_mgf(const StreamQueue& q, double t)
{
    check_pole(q.service, t);
    if (q.batch_mix.empty())
        return 1.0;
    const double lm = kernel::log_mgf(q.service.rate, q.service.shift, t);
    Accum<double> acc;
    for (const auto& b : q.batch_mix)
        acc.add(b.weight * std::exp(b.batch_len * lm));
    return acc.get();
}

double load_intensity(const StreamQueue& q)
{
    Accum<double> acc;
    for (const auto& b : q.batch_mix)
        acc.add(b.weight * b.batch_len);
    return q.agg_rate * acc.get() * (q.service.shift + 1.0 / q.service.rate);
}

double pk_waiting_mgf(const StreamQueue& q, double t)
{
    const double rho = load_intensity(q);
    if (rho >= 1.0)
        throw Unstable("load " + std::to_string(rho) + " >= 1");
    check_pole(q.service, t);
    if (t == 0.0)
        return 1.0;
    const double ex = excess(q, t);
    // for t < 0 both numerator and denominator are negative
    if (!((t - ex) * t > 0.0))
        throw MgfUndefined("waiting-time MGF pole: t - Λ(B(t)-1) <= 0 at t=" + std::to_string(t));
    return kernel::pk_from_excess(rho, t, ex);
}

double download_mgf_cached(const StreamQueue& q, int g, double t)
{
    return pk_waiting_mgf(q, t) * std::pow(mgf_shifted_exp(q.service, t), g);
}

double tandem_chunk_mgf_bound(const StreamQueue& dc, const StreamQueue& dbar, int L_cached,
                              int v, double t)
{
    if (v < L_cached + 1)
        throw ConstraintViolated("tandem bound needs v > L_cached");
    const double wd = pk_waiting_mgf(dc, t);
    const double wdb = pk_waiting_mgf(dbar, t);
    const double md = mgf_shifted_exp(dc.service, t);
    const double mdb = mgf_shifted_exp(dbar.service, t);
    Accum<double> acc;
    acc.add(wdb * std::pow(mdb, v - L_cached));
    for (int w = L_cached + 1; w <= v; ++w)
        acc.add(wd * std::pow(md, w - L_cached) * std::pow(mdb, v - w + 1));
    return acc.get();
}

}  // namespace stallkit
