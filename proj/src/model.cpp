#include "stallkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "stallkit/errors.hpp"
#include "stallkit/numeric.hpp"

namespace stallkit {

namespace {

std::string idx(std::initializer_list<int> ids)
{
    std::string s = "[";
    for (int v : ids) {
        if (s.size() > 1)
            s += ",";
        s += std::to_string(v);
    }
    return s + "]";
}

void need(bool ok, const std::string& what)
{
    if (!ok)
        throw ConfigError(what);
}

double plain_sum(const double* x, int n)
{
    double s = 0.0;
    for (int k = 0; k < n; ++k)
        s += x[k];
    return s;
}

}  // namespace

void SystemTopology::finalize()
{
    need(num_servers >= 1 && num_edge_routers >= 1 && num_files >= 1, "all counts must be >= 1");
    const auto m_ = static_cast<size_t>(m()), R_ = static_cast<size_t>(R()),
               r_ = static_cast<size_t>(r());
    need(segments.size() == r_, "segments must have num_files entries");
    for (int L : segments)
        need(L >= 1, "segments L_i must be >= 1");
    need(tau > 0, "tau must be > 0");
    need(startup_delay >= 0, "startup_delay must be >= 0");
    need(streams_dc.size() == m_, "streams_dc must have num_servers entries");
    need(streams_edge.size() == m_ * R_, "streams_edge must have num_servers*num_edge_routers entries");
    for (int d : streams_dc)
        need(d >= 1, "streams_dc entries must be >= 1");
    for (int e : streams_edge)
        need(e >= 1, "streams_edge entries must be >= 1");
    need(base_rate_dc.size() == m_ && shift_dc.size() == m_, "base_rate_dc/shift_dc size mismatch");
    need(base_rate_edge.size() == m_ * R_ && shift_edge.size() == m_ * R_,
         "base_rate_edge/shift_edge size mismatch");
    for (double a : base_rate_dc)
        need(a > 0, "base_rate_dc must be > 0");
    for (double a : base_rate_edge)
        need(a > 0, "base_rate_edge must be > 0");
    for (double s : shift_dc)
        need(s >= 0, "shift_dc must be >= 0");
    for (double s : shift_edge)
        need(s >= 0, "shift_edge must be >= 0");
    need(server_capacity.size() == m_, "server_capacity must have num_servers entries");
    for (double c : server_capacity)
        need(c >= 0, "server_capacity must be >= 0");
    need(edge_capacity.size() == R_, "edge_capacity must have num_edge_routers entries");
    for (double c : edge_capacity)
        need(c > 0, "edge_capacity must be > 0");
    need(violation_budget.size() == R_, "violation_budget must have num_edge_routers entries");
    for (double e : violation_budget)
        need(e > 0 && e < 1, "violation_budget must lie in (0,1)");
    need(arrival_rate.size() == r_ * R_, "arrival_rate must have num_files*num_edge_routers entries");
    for (double l : arrival_rate)
        need(l >= 0 && std::isfinite(l), "arrival_rate must be finite and >= 0");

    e_off_.assign(m_ * R_, 0);
    d_off_.assign(m_ * R_, 0);
    e_server_.clear();
    e_router_.clear();
    d_server_.clear();
    d_router_.clear();
    e_total_ = d_total_ = 0;
    for (int j = 0; j < m(); ++j)
        for (int l = 0; l < R(); ++l) {
            e_off_[j * R() + l] = e_total_;
            d_off_[j * R() + l] = d_total_;
            for (int k = 0; k < e_count(j, l); ++k) {
                e_server_.push_back(j);
                e_router_.push_back(l);
            }
            for (int k = 0; k < d_count(j); ++k) {
                d_server_.push_back(j);
                d_router_.push_back(l);
            }
            e_total_ += e_count(j, l);
            d_total_ += d_count(j);
        }
}

double SystemTopology::mean_lambda() const
{
    return std::accumulate(arrival_rate.begin(), arrival_rate.end(), 0.0) /
           static_cast<double>(arrival_rate.size());
}

DecisionVariables zero_vars(const SystemTopology& t)
{
    DecisionVariables v;
    v.pi.assign(t.r() * t.m() * t.R(), 0.0);
    v.p.assign(t.r() * t.num_e_streams(), 0.0);
    v.q.assign(t.r() * t.num_d_streams(), 0.0);
    v.w_d.assign(t.num_d_streams(), 0.0);
    v.w_dbar.assign(t.num_d_streams(), 0.0);
    v.w_e.assign(t.num_e_streams(), 0.0);
    v.L.assign(t.m() * t.r(), 0.0);
    v.omega.assign(t.r() * t.R(), 0.0);
    v.h.assign(t.r(), 0.0);
    v.g.assign(t.r(), 0.0);
    return v;
}

std::optional<std::string> check_invariants(const SystemTopology& t, const DecisionVariables& v,
                                            const FeasOptions& opt)
{
    const double tol = opt.tol;
    const DecisionVariables z = zero_vars(t);
    bool sized = true;
    {
        std::vector<size_t> a, b;
        v.for_each_field([&](const auto& f) { a.push_back(f.size()); });
        z.for_each_field([&](const auto& f) { b.push_back(f.size()); });
        sized = a == b;
    }
    if (!sized)
        return "variable arrays do not match the topology dimensions";
    bool finite = true;
    v.for_each_field([&](const auto& f) {
        for (double x : f)
            finite = finite && std::isfinite(x);
    });
    if (!finite)
        return "non-finite variable";

    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l) {
            double s = 0;
            for (int j = 0; j < t.m(); ++j) {
                const double x = v.pi[t.pi_index(i, j, l)];
                if (x < -tol)
                    return "pi" + idx({i, j, l}) + " < 0";
                s += x;
            }
            if (std::fabs(s - 1.0) > tol * t.m() + 1e-12)
                return "sum_j pi" + idx({i, -1, l}) + " != 1";
            for (int j = 0; j < t.m(); ++j) {
                double sp = 0, sq = 0;
                for (int nu = 0; nu < t.e_count(j, l); ++nu) {
                    const double x = v.p[t.p_index(i, j, l, nu)];
                    if (x < -tol)
                        return "p" + idx({i, j, nu, l}) + " < 0";
                    sp += x;
                }
                for (int b = 0; b < t.d_count(j); ++b) {
                    const double x = v.q[t.q_index(i, j, l, b)];
                    if (x < -tol)
                        return "q" + idx({i, j, b, l}) + " < 0";
                    sq += x;
                }
                if (std::fabs(sp - 1.0) > tol * t.e_count(j, l) + 1e-12)
                    return "sum_nu p" + idx({i, j, l}) + " != 1";
                if (std::fabs(sq - 1.0) > tol * t.d_count(j) + 1e-12)
                    return "sum_beta q" + idx({i, j, l}) + " != 1";
            }
        }

    for (int j = 0; j < t.m(); ++j)
        for (int l = 0; l < t.R(); ++l) {
            double sd = 0, sf = 0;
            for (int b = 0; b < t.d_count(j); ++b) {
                const int s = t.d_stream(j, l, b);
                if (v.w_d[s] < -tol || v.w_dbar[s] < -tol)
                    return "w_d/w_dbar" + idx({j, b, l}) + " < 0";
                sd += v.w_d[s];
                sf += v.w_dbar[s];
            }
            for (int nu = 0; nu < t.e_count(j, l); ++nu) {
                const int s = t.e_stream(j, l, nu);
                if (v.w_e[s] < -tol)
                    return "w_e" + idx({j, nu, l}) + " < 0";
                sf += v.w_e[s];
            }
            if (sd > 1.0 + tol)
                return "sum_beta w_d" + idx({j, l}) + " > 1";
            if (sf > 1.0 + tol)
                return "sum w_dbar + sum w_e" + idx({j, l}) + " > 1";
        }

    for (int j = 0; j < t.m(); ++j) {
        double s = 0;
        for (int i = 0; i < t.r(); ++i) {
            const double x = v.L[t.L_index(j, i)];
            if (x < -tol || x > t.segments[i] + tol)
                return "L" + idx({j, i}) + " outside [0, L_i]";
            s += x;
        }
        if (s > t.server_capacity[j] + tol * std::max(1.0, t.server_capacity[j]))
            return "sum_i L" + idx({j}) + " exceeds server capacity";
    }
    for (int k = 0; k < t.r() * t.R(); ++k)
        if (v.omega[k] < 0)
            return "omega" + idx({k / t.R(), k % t.R()}) + " < 0";
    for (int i = 0; i < t.r(); ++i) {
        if (!(v.h[i] > 0))
            return "h" + idx({i}) + " <= 0";
        if (!(v.g[i] > 0))
            return "g" + idx({i}) + " <= 0";
    }
    return std::nullopt;
}

StreamParams derive_stream_params(const SystemTopology& t, const DecisionVariables& v,
                                  const FeasOptions& opt)
{
    if (auto bad = check_invariants(t, v, opt))
        throw InfeasibleVars(*bad);

    StreamParams sp;
    const int D = t.num_d_streams(), E = t.num_e_streams();
    sp.d.resize(D);
    sp.dbar.resize(D);
    sp.e.resize(E);

    for (int j = 0; j < t.m(); ++j)
        for (int l = 0; l < t.R(); ++l) {
            for (int b = 0; b < t.d_count(j); ++b) {
                const int s = t.d_stream(j, l, b);
                StreamQueue& qd = sp.d[s];
                StreamQueue& qb = sp.dbar[s];
                qd.service = {v.w_d[s] * t.base_rate_dc[j], t.shift_dc[j]};
                qb.service = {v.w_dbar[s] * t.base_rate_edge[j * t.R() + l],
                              t.shift_edge[j * t.R() + l]};
                Accum<double> lam;
                std::vector<BatchTerm> mix;
                for (int i = 0; i < t.r(); ++i) {
                    const double li = t.lambda(i, l);
                    const double c = li * v.pi[t.pi_index(i, j, l)] * v.q[t.q_index(i, j, l, b)] *
                                     std::exp(-li * v.omega[t.omega_index(i, l)]);
                    if (c <= 0)
                        continue;
                    mix.push_back({c, t.segments[i] - v.L[t.L_index(j, i)]});
                    lam.add(c);
                }
                const double Lam = lam.get();
                for (auto& b2 : mix)
                    b2.weight /= Lam;
                qd.agg_rate = qb.agg_rate = Lam;
                qd.batch_mix = mix;
                qb.batch_mix = std::move(mix);
            }
            for (int nu = 0; nu < t.e_count(j, l); ++nu) {
                const int s = t.e_stream(j, l, nu);
                StreamQueue& qe = sp.e[s];
                qe.service = {v.w_e[s] * t.base_rate_edge[j * t.R() + l],
                              t.shift_edge[j * t.R() + l]};
                Accum<double> lam;
                for (int i = 0; i < t.r(); ++i) {
                    const double li = t.lambda(i, l);
                    const double c = li * v.pi[t.pi_index(i, j, l)] * v.p[t.p_index(i, j, l, nu)] *
                                     std::exp(-li * v.omega[t.omega_index(i, l)]);
                    if (c <= 0)
                        continue;
                    qe.batch_mix.push_back({c, v.L[t.L_index(j, i)]});
                    lam.add(c);
                }
                qe.agg_rate = lam.get();
                for (auto& b2 : qe.batch_mix)
                    b2.weight /= qe.agg_rate;
            }
        }

    auto rho = [](const StreamQueue& q) {
        if (q.agg_rate == 0.0)
            return 0.0;
        if (!(q.service.rate > 0))
            return std::numeric_limits<double>::infinity();
        return load_intensity(q);
    };
    for (int s = 0; s < D; ++s) {
        sp.rho_d.push_back(rho(sp.d[s]));
        sp.rho_dbar.push_back(rho(sp.dbar[s]));
    }
    for (int s = 0; s < E; ++s)
        sp.rho_e.push_back(rho(sp.e[s]));
    return sp;
}

namespace {

// sup{t in [0, α-δ] : t - Λ(B(t)-1) >= δ t}
double stream_cap(const StreamQueue& q, double rho, double margin)
{
    const double hi = q.service.rate - margin;
    if (!(hi > 0))
        return 0.0;
    if (q.agg_rate == 0.0 || q.batch_mix.empty())
        return hi;
    if (rho >= 1.0 - margin)
        return 0.0;
    auto ok = [&](double t) {
        const double lm = kernel::log_mgf(q.service.rate, q.service.shift, t);
        Accum<double> acc;
        for (const auto& b : q.batch_mix)
            acc.add(b.weight * std::expm1(b.batch_len * lm));
        return t - q.agg_rate * acc.get() >= margin * t;
    };
    if (ok(hi))
        return hi;
    double lo = 0.0, up = hi;
    for (int it = 0; it < 80 && up - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + up);
        (ok(mid) ? lo : up) = mid;
    }
    return lo;
}

std::vector<double> router_caps(const SystemTopology& t, const StreamParams& sp, double margin)
{
    std::vector<double> cap(t.R(), std::numeric_limits<double>::infinity());
    for (int s = 0; s < t.num_d_streams(); ++s) {
        const int l = t.d_stream_router(s);
        cap[l] = std::min({cap[l], stream_cap(sp.d[s], sp.rho_d[s], margin),
                           stream_cap(sp.dbar[s], sp.rho_dbar[s], margin)});
    }
    for (int s = 0; s < t.num_e_streams(); ++s) {
        const int l = t.e_stream_router(s);
        cap[l] = std::min(cap[l], stream_cap(sp.e[s], sp.rho_e[s], margin));
    }
    return cap;
}

double file_cap(const SystemTopology& t, const std::vector<double>& caps, int i)
{
    double c = std::numeric_limits<double>::infinity();
    for (int l = 0; l < t.R(); ++l)
        if (t.lambda(i, l) > 0)
            c = std::min(c, caps[l]);
    return c;
}

}  // namespace

double mgf_exponent_cap(const SystemTopology& t, const DecisionVariables&, const StreamParams& sp,
                        int i, double margin)
{
    return file_cap(t, router_caps(t, sp, margin), i);
}

void project_simplex(double* x, int n, double total)
{
    bool inside = true;
    for (int k = 0; k < n; ++k)
        inside = inside && x[k] >= 0;
    if (inside && std::fabs(plain_sum(x, n) - total) <= 1e-12 * std::max(1.0, total))
        return;
    std::vector<double> u(x, x + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0, theta = 0;
    for (int k = 0; k < n; ++k) {
        cum += u[k];
        const double th = (cum - total) / (k + 1);
        if (u[k] - th > 0)
            theta = th;
    }
    for (int k = 0; k < n; ++k)
        x[k] = std::max(x[k] - theta, 0.0);
}

void project_capped_simplex(double* x, int n, double budget)
{
    for (int k = 0; k < n; ++k)
        x[k] = std::max(x[k], 0.0);
    if (plain_sum(x, n) <= budget)
        return;
    project_simplex(x, n, budget);
    // the threshold step can leave the sum a few ulps above the budget
    const double s = plain_sum(x, n);
    if (s > budget)
        for (int k = 0; k < n; ++k)
            x[k] *= budget / s;
}

void project_box_budget(double* x, const double* upper, int n, double budget)
{
    std::vector<double> y(x, x + n);
    auto fill = [&](double mu) {
        for (int k = 0; k < n; ++k)
            x[k] = std::clamp(y[k] - mu, 0.0, upper[k]);
        return plain_sum(x, n);
    };
    if (fill(0.0) <= budget)
        return;
    double lo = 0.0, hi = *std::max_element(y.begin(), y.end());
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        (fill(mid) > budget ? lo : hi) = mid;
    }
    fill(hi);
}

void project_pi_tilde(const SystemTopology& t, DecisionVariables& v)
{
    std::vector<double> row(t.m());
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l) {
            for (int j = 0; j < t.m(); ++j)
                row[j] = v.pi[t.pi_index(i, j, l)];
            project_simplex(row.data(), t.m());
            for (int j = 0; j < t.m(); ++j) {
                v.pi[t.pi_index(i, j, l)] = row[j];
                project_simplex(&v.p[t.p_index(i, j, l, 0)], t.e_count(j, l));
                project_simplex(&v.q[t.q_index(i, j, l, 0)], t.d_count(j));
            }
        }
}

void project_weights(const SystemTopology& t, DecisionVariables& v)
{
    std::vector<double> row;
    for (int j = 0; j < t.m(); ++j)
        for (int l = 0; l < t.R(); ++l) {
            const int d0 = t.d_stream(j, l, 0), e0 = t.e_stream(j, l, 0);
            const int nd = t.d_count(j), ne = t.e_count(j, l);
            project_capped_simplex(&v.w_d[d0], nd);
            row.assign(v.w_dbar.begin() + d0, v.w_dbar.begin() + d0 + nd);
            row.insert(row.end(), v.w_e.begin() + e0, v.w_e.begin() + e0 + ne);
            project_capped_simplex(row.data(), nd + ne);
            std::copy(row.begin(), row.begin() + nd, v.w_dbar.begin() + d0);
            std::copy(row.begin() + nd, row.end(), v.w_e.begin() + e0);
        }
}

void project_placement(const SystemTopology& t, DecisionVariables& v)
{
    std::vector<double> upper(t.segments.begin(), t.segments.end());
    for (int j = 0; j < t.m(); ++j)
        project_box_budget(&v.L[t.L_index(j, 0)], upper.data(), t.r(), t.server_capacity[j]);
}

std::vector<double> exponent_caps(const SystemTopology& t, const StreamParams& sp, double margin)
{
    const std::vector<double> caps = router_caps(t, sp, margin);
    std::vector<double> out(t.r());
    for (int i = 0; i < t.r(); ++i)
        out[i] = file_cap(t, caps, i);
    return out;
}

DecisionVariables project_feasible(const DecisionVariables& in, const SystemTopology& t,
                                   const FeasOptions& opt)
{
    DecisionVariables v = in;
    {
        const DecisionVariables z = zero_vars(t);
        std::vector<size_t> a, b;
        v.for_each_field([&](const auto& f) { a.push_back(f.size()); });
        z.for_each_field([&](const auto& f) { b.push_back(f.size()); });
        if (a != b)
            throw InfeasibleVars("variable arrays do not match the topology dimensions");
    }
    v.for_each_field([](auto& f) {
        for (double& x : f)
            if (!std::isfinite(x))
                x = 0.0;
    });

    project_pi_tilde(t, v);
    project_weights(t, v);
    project_placement(t, v);

    for (double& w : v.omega)
        w = std::max(w, 0.0);

    const double lo = opt.margin;
    for (int i = 0; i < t.r(); ++i) {
        v.h[i] = std::max(v.h[i], lo);
        v.g[i] = std::max(v.g[i], lo);
    }

    const StreamParams sp = derive_stream_params(t, v, opt);
    for (int s = 0; s < t.num_d_streams(); ++s)
        if (sp.rho_d[s] >= 1.0 - opt.margin || sp.rho_dbar[s] >= 1.0 - opt.margin)
            throw NoFeasiblePoint("d/dbar stream " + idx({t.d_stream_server(s), t.d_stream_router(s)}) +
                                  " has load >= 1 after projection");
    for (int s = 0; s < t.num_e_streams(); ++s)
        if (sp.rho_e[s] >= 1.0 - opt.margin)
            throw NoFeasiblePoint("e stream " + idx({t.e_stream_server(s), t.e_stream_router(s)}) +
                                  " has load >= 1 after projection");

    const std::vector<double> caps = exponent_caps(t, sp, opt.margin);
    for (int i = 0; i < t.r(); ++i) {
        const double c = caps[i];
        if (!(c > lo))
            throw NoFeasiblePoint("no MGF exponent satisfies the existence conditions for file " +
                                  std::to_string(i));
        v.h[i] = std::min(v.h[i], c);
        v.g[i] = std::min(v.g[i], c);
    }
    return v;
}

DecisionVariables uniform_init(const SystemTopology& t, const InitOptions& opt,
                               const FeasOptions& fopt)
{
    DecisionVariables v = zero_vars(t);
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l)
            for (int j = 0; j < t.m(); ++j) {
                v.pi[t.pi_index(i, j, l)] = 1.0 / t.m();
                for (int nu = 0; nu < t.e_count(j, l); ++nu)
                    v.p[t.p_index(i, j, l, nu)] = 1.0 / t.e_count(j, l);
                for (int b = 0; b < t.d_count(j); ++b)
                    v.q[t.q_index(i, j, l, b)] = 1.0 / t.d_count(j);
            }
    for (int j = 0; j < t.m(); ++j)
        for (int l = 0; l < t.R(); ++l) {
            for (int b = 0; b < t.d_count(j); ++b) {
                v.w_d[t.d_stream(j, l, b)] = 1.0 / t.d_count(j);
                v.w_dbar[t.d_stream(j, l, b)] = 0.5 / t.d_count(j);
            }
            for (int nu = 0; nu < t.e_count(j, l); ++nu)
                v.w_e[t.e_stream(j, l, nu)] = 0.5 / t.e_count(j, l);
        }
    const double total = std::accumulate(t.segments.begin(), t.segments.end(), 0.0);
    for (int j = 0; j < t.m(); ++j) {
        const double frac = std::min(1.0, t.server_capacity[j] / total);
        for (int i = 0; i < t.r(); ++i)
            v.L[t.L_index(j, i)] = t.segments[i] * frac;
    }
    std::fill(v.omega.begin(), v.omega.end(), opt.omega);
    std::fill(v.h.begin(), v.h.end(), opt.h);
    std::fill(v.g.begin(), v.g.end(), opt.g);
    return project_feasible(v, t, fopt);
}

}  // namespace stallkit
