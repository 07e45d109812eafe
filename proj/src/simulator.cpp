#include "stallkit/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "stallkit/errors.hpp"
#include "stallkit/numeric.hpp"

namespace stallkit {

namespace {

using Rng = std::mt19937_64;

// One FIFO stream. Requests are fed in arrival order, so each job's chunk
// completions follow from the Lindley recursion at arrival time.
class Fifo {
public:
    Fifo(double rate, double shift, StreamStats* st, std::string name)
        : rate_(rate), shift_(shift), st_(st), name_(std::move(name))
    {
    }

    double sample(Rng& rng, bool det) const
    {
        if (!(rate_ > 0))
            throw UnstableDetected(name_ + " has zero bandwidth but receives traffic");
        return det ? shift_ : shift_ + std::exponential_distribution<double>(rate_)(rng);
    }

    void admit(double now, std::size_t bound)
    {
        while (!done_.empty() && done_.front() <= now)
            done_.pop_front();
        if (done_.size() >= bound) {
            std::ostringstream os;
            os << name_ << ": " << done_.size() << " jobs queued at t=" << now
               << " (bound " << bound << ")";
            throw UnstableDetected(os.str());
        }
    }

    // n consecutive chunks of a job arriving at `now`; appends absolute completions
    double serve(double now, int n, Rng& rng, bool det, std::size_t bound, bool measured,
                 std::vector<double>& out)
    {
        admit(now, bound);
        double t = std::max(now, free_);
        const double wait = t - now;
        for (int g = 0; g < n; ++g) {
            const double y = sample(rng, det);
            st_->busy += y;
            t += y;
            out.push_back(t);
        }
        free_ = t;
        done_.push_back(t);
        ++st_->jobs;
        if (measured) {
            st_->wait_sum += wait;
            st_->wait_sq += wait * wait;
            st_->arrivals.push_back(now);
        }
        return wait;
    }

    // server-to-edge leg of the tandem path: chunk g starts once chunk g-1 has
    // left this stream and chunk g has left the datacenter stream
    void serve_after(double now, const std::vector<double>& ready, Rng& rng, bool det,
                     std::size_t bound, bool measured, std::vector<double>& out)
    {
        admit(now, bound);
        double prev = free_;
        if (measured && !ready.empty()) {
            const double wait = std::max(0.0, free_ - ready.front());
            st_->wait_sum += wait;
            st_->wait_sq += wait * wait;
        }
        for (double e : ready) {
            const double y = sample(rng, det);
            st_->busy += y;
            prev = std::max(prev, e) + y;
            out.push_back(prev);
        }
        free_ = prev;
        done_.push_back(prev);
        ++st_->jobs;
    }

private:
    double rate_, shift_;
    double free_ = 0;
    std::deque<double> done_;
    StreamStats* st_;
    std::string name_;
};

int draw(Rng& rng, const double* w, int n)
{
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0;
    for (int k = 0; k < n; ++k) {
        acc += w[k];
        if (u < acc)
            return k;
    }
    for (int k = n - 1; k >= 0; --k)
        if (w[k] > 0)
            return k;
    return n - 1;
}

struct MeanSe {
    double mean, se;
};

MeanSe mean_se(const std::vector<double>& x)
{
    if (x.empty())
        return {0, 0};
    Accum<double> s, s2;
    for (double v : x)
        s.add(v);
    const double mu = s.get() / x.size();
    for (double v : x)
        s2.add((v - mu) * (v - mu));
    const double var = x.size() > 1 ? s2.get() / (x.size() - 1) : 0.0;
    return {mu, std::sqrt(var / x.size())};
}

}  // namespace

void playback(const std::vector<double>& D, double ds, double tau, std::vector<double>& T,
              double& stall)
{
    T.resize(D.size());
    for (size_t g = 0; g < D.size(); ++g)
        T[g] = g == 0 ? std::max(ds, D[0]) : std::max(T[g - 1] + tau, D[g]);
    stall = D.empty() ? 0.0 : std::max(0.0, T.back() - ds - (D.size() - 1.0) * tau);
}

Metrics run(const SystemTopology& t, const DecisionVariables& v, const PolicyParams& policy,
            const RequestTrace& trace, std::uint64_t seed, const SimOptions& opt)
{
    if (auto bad = check_invariants(t, v))
        throw InfeasibleVars(*bad);
    if (trace.records.empty())
        throw NoSamples("empty request trace");

    Metrics m;
    m.horizon = opt.horizon > 0 ? opt.horizon : trace.records.back().time;
    m.measure_from = opt.warmup_frac * m.horizon;
    m.sigma_grid = opt.sigma_grid;
    m.pair_requests.assign(t.r() * t.R(), 0);
    m.pair_misses.assign(t.r() * t.R(), 0);
    m.e.resize(t.num_e_streams());
    m.d.resize(t.num_d_streams());
    m.dbar.resize(t.num_d_streams());

    std::vector<Fifo> es, ds, dbs;
    for (int s = 0; s < t.num_e_streams(); ++s) {
        const int j = t.e_stream_server(s), l = t.e_stream_router(s);
        es.emplace_back(v.w_e[s] * t.base_rate_edge[j * t.R() + l], t.shift_edge[j * t.R() + l],
                        &m.e[s], "e stream " + std::to_string(s));
    }
    for (int s = 0; s < t.num_d_streams(); ++s) {
        const int j = t.d_stream_server(s), l = t.d_stream_router(s);
        ds.emplace_back(v.w_d[s] * t.base_rate_dc[j], t.shift_dc[j], &m.d[s],
                        "d stream " + std::to_string(s));
        dbs.emplace_back(v.w_dbar[s] * t.base_rate_edge[j * t.R() + l], t.shift_edge[j * t.R() + l],
                         &m.dbar[s], "dbar stream " + std::to_string(s));
    }

    const std::vector<double> Lint = placement_from_vars(t, v);
    std::vector<double> sizes(t.r());
    for (int i = 0; i < t.r(); ++i)
        sizes[i] = t.tau * t.segments[i];
    PolicyParams pp = policy;
    pp.tau = t.tau;
    std::vector<EdgeCacheState> caches;
    for (int l = 0; l < t.R(); ++l)
        caches.emplace_back(t.edge_capacity[l], sizes, pp);
    // chunk availability at the edge of the fetch that filled each cache slot
    std::vector<std::vector<std::vector<double>>> avail(t.R(), std::vector<std::vector<double>>(t.r()));

    Rng rng(seed);
    PolicyRng prng(seed ^ 0x9e3779b97f4a7c15ULL);
    const double sample_dt = m.horizon / std::max(opt.occupancy_samples, 1);
    double next_sample = 0;

    std::vector<double> D, T, chunks, ready, pi_row(t.m());
    long id = 0;
    for (const Request& rq : trace.records) {
        if (rq.time > m.horizon)
            break;
        if (rq.file < 0 || rq.file >= t.r())
            throw UnknownFileId("request for file " + std::to_string(rq.file));
        if (rq.router < 0 || rq.router >= t.R())
            throw ConfigError("request for router " + std::to_string(rq.router));
        const double now = rq.time;
        const int i = rq.file, l = rq.router;
        const bool measured = now >= m.measure_from;
        ++m.requests;

        PolicyDecision dec;
        bool bypass = !opt.edge_cache;
        if (!bypass) {
            EdgeCacheState& c = caches[l];
            double ttl = v.omega[t.omega_index(i, l)];
            if (opt.ttl_mode == TtlMode::exponential)
                ttl = ttl > 0 ? std::exponential_distribution<double>(1.0 / ttl)(rng) : 0.0;
            try {
                dec = on_request(c, pp, i, now, ttl, prng);
            } catch (const FileTooLarge&) {
                bypass = true;
                ++m.too_large;
            }
            for (int f : dec.evictions)
                avail[l][f].clear();
            ++m.capacity_checks;
            if (c.used > c.capacity)
                ++m.capacity_violations;
            m.max_occupancy_ratio = std::max(m.max_occupancy_ratio, c.used / c.capacity);
            if (measured && now >= next_sample) {
                double live = 0;
                for (const auto& [f, e] : c.resident)
                    if (pp.kind != PolicyKind::ttl || e.expiry >= now)
                        live += e.size;
                m.occupancy.push_back({now, l, c.used, live});
                next_sample = now + sample_dt;
            }
        }

        const int L = t.segments[i];
        D.clear();
        ServedFrom from = ServedFrom::cdn;
        int server = -1;
        if (!bypass && dec.hit) {
            const auto& a = avail[l][i];
            bool pending = false;
            for (int g = 0; g < L; ++g) {
                const double x = g < static_cast<int>(a.size()) ? std::max(0.0, a[g] - now) : 0.0;
                pending = pending || x > 0;
                D.push_back(x);
            }
            from = pending ? ServedFrom::edge_join : ServedFrom::edge_hit;
        } else {
            // π has stride R over servers
            for (int jj = 0; jj < t.m(); ++jj)
                pi_row[jj] = v.pi[t.pi_index(i, jj, l)];
            const int j = draw(rng, pi_row.data(), t.m());
            server = j;
            const int nu = draw(rng, &v.p[t.p_index(i, j, l, 0)], t.e_count(j, l));
            const int beta = draw(rng, &v.q[t.q_index(i, j, l, 0)], t.d_count(j));
            const int Lc = static_cast<int>(std::lround(Lint[t.L_index(j, i)]));
            const bool det = opt.deterministic_service;
            chunks.clear();
            if (Lc > 0)
                es[t.e_stream(j, l, nu)].serve(now, Lc, rng, det, opt.queue_bound, measured, chunks);
            if (L - Lc > 0) {
                const int s = t.d_stream(j, l, beta);
                ready.clear();
                ds[s].serve(now, L - Lc, rng, det, opt.queue_bound, measured, ready);
                dbs[s].serve_after(now, ready, rng, det, opt.queue_bound, measured, chunks);
            }
            for (double x : chunks)
                D.push_back(x - now);
            if (!bypass && dec.admitted)
                avail[l][i] = chunks;
        }

        double stall;
        playback(D, t.startup_delay, t.tau, T, stall);
        const double ttfc = D.empty() ? 0.0 : D[0];
        if (measured) {
            ++m.measured;
            ++m.pair_requests[i * t.R() + l];
            switch (from) {
            case ServedFrom::edge_hit: ++m.edge_hits; break;
            case ServedFrom::edge_join: ++m.edge_joins; break;
            case ServedFrom::cdn:
                ++m.cdn;
                ++m.pair_misses[i * t.R() + l];
                break;
            }
            m.stalls.push_back(stall);
            m.ttfcs.push_back(ttfc);
        }
        if (opt.keep_records)
            m.records.push_back({id, i, l, server, now, D, T, stall, ttfc, from});
        ++id;
    }

    if (m.measured == 0)
        throw NoSamples("no requests after the warm-up window");
    for (double s : m.sigma_grid) {
        const Estimate e = measure_sdtp(m, s);
        m.sdtp.push_back(e.value);
        m.sdtp_se.push_back(e.stderr_);
    }
    const MeanSe st = mean_se(m.stalls), tf = mean_se(m.ttfcs);
    m.mean_stall = st.mean;
    m.mean_stall_se = st.se;
    m.ttfc_mean = tf.mean;
    m.ttfc_se = tf.se;
    m.miss_rate = double(m.cdn) / m.measured;
    for (const auto& s : m.e)
        m.util_e.push_back(s.busy / m.horizon);
    for (const auto& s : m.d)
        m.util_d.push_back(s.busy / m.horizon);
    for (const auto& s : m.dbar)
        m.util_dbar.push_back(s.busy / m.horizon);
    return m;
}

Estimate measure_sdtp(const Metrics& m, double sigma)
{
    if (m.stalls.empty())
        throw NoSamples("no completed playbacks");
    long k = 0;
    for (double g : m.stalls)
        k += g >= sigma;
    const double n = static_cast<double>(m.stalls.size());
    const double p = k / n;
    return {p, std::sqrt(p * (1 - p) / n)};
}

std::vector<PoissonDiag> poisson_check(const Metrics& m, long min_arrivals)
{
    std::vector<PoissonDiag> out;
    auto one = [&](const char* kind, int s, const std::vector<double>& a) {
        if (static_cast<long>(a.size()) < std::max(min_arrivals, 2L))
            return;
        std::vector<double> gaps(a.size() - 1);
        for (size_t k = 1; k < a.size(); ++k)
            gaps[k - 1] = a[k] - a[k - 1];
        const MeanSe g = mean_se(gaps);
        const double sd = g.se * std::sqrt(double(gaps.size()));
        // counts in windows holding ten arrivals on average
        const double w = 10 * g.mean;
        double disp = NAN;
        if (w > 0) {
            const double t0 = a.front();
            const int nw = static_cast<int>((a.back() - t0) / w);
            if (nw >= 2) {
                std::vector<double> cnt(nw, 0.0);
                for (double x : a) {
                    const int k = static_cast<int>((x - t0) / w);
                    if (k < nw)
                        cnt[k] += 1;
                }
                const MeanSe c = mean_se(cnt);
                const double var = c.se * c.se * nw;
                disp = c.mean > 0 ? var / c.mean : NAN;
            }
        }
        out.push_back({kind, s, static_cast<long>(a.size()), g.mean, g.mean > 0 ? sd / g.mean : NAN,
                       disp});
    };
    for (size_t s = 0; s < m.e.size(); ++s)
        one("e", static_cast<int>(s), m.e[s].arrivals);
    for (size_t s = 0; s < m.d.size(); ++s)
        one("d", static_cast<int>(s), m.d[s].arrivals);
    return out;
}

std::vector<double> simulate_stream_waits(const StreamQueue& q, long jobs, std::uint64_t seed,
                                          bool det)
{
    Rng rng(seed);
    StreamStats st;
    Fifo f(q.service.rate, q.service.shift, &st, "stream");
    std::vector<double> waits, out;
    waits.reserve(jobs);
    double now = 0;
    std::exponential_distribution<double> gap(q.agg_rate);
    std::vector<double> w(q.batch_mix.size());
    for (size_t k = 0; k < w.size(); ++k)
        w[k] = q.batch_mix[k].weight;
    for (long n = 0; n < jobs; ++n) {
        now += gap(rng);
        const int k = draw(rng, w.data(), static_cast<int>(w.size()));
        const int chunks = static_cast<int>(std::lround(q.batch_mix[k].batch_len));
        out.clear();
        waits.push_back(f.serve(now, chunks, rng, det, static_cast<std::size_t>(-1), false, out));
    }
    return waits;
}

std::vector<Metrics> run_seeds(const SystemTopology& t, const DecisionVariables& v,
                               const PolicyParams& policy, const RequestTrace* trace,
                               const std::vector<std::uint64_t>& seeds, const SimOptions& opt)
{
    if (seeds.empty())
        throw ConfigError("at least one seed is required");
    if (!trace && !(opt.horizon > 0))
        throw ConfigError("synthetic traces need a horizon > 0");
    const int n = static_cast<int>(seeds.size());
    std::vector<Metrics> out(n);
    std::vector<std::string> err(n);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n; ++k) {
        try {
            if (trace) {
                out[k] = run(t, v, policy, *trace, seeds[k], opt);
            } else {
                const RequestTrace tr = gen_poisson_trace(t, opt.horizon, seeds[k]);
                out[k] = run(t, v, policy, tr, seeds[k], opt);
            }
        } catch (const std::exception& e) {
            err[k] = e.what();
        }
    }
    for (int k = 0; k < n; ++k)
        if (!err[k].empty())
            throw UnstableDetected("seed " + std::to_string(seeds[k]) + ": " + err[k]);
    return out;
}

SeedSummary summarize(const std::vector<Metrics>& runs)
{
    if (runs.empty())
        throw NoSamples("no runs to summarise");
    SeedSummary s;
    s.seeds = static_cast<int>(runs.size());
    s.sigma_grid = runs[0].sigma_grid;
    auto across = [&](auto get, auto get_se, double& mean, double& se) {
        std::vector<double> x;
        for (const auto& m : runs)
            x.push_back(get(m));
        const MeanSe r = mean_se(x);
        mean = r.mean;
        se = runs.size() > 1 ? r.se : get_se(runs[0]);
    };
    for (size_t k = 0; k < s.sigma_grid.size(); ++k) {
        double mu, se;
        across([&](const Metrics& m) { return m.sdtp[k]; },
               [&](const Metrics& m) { return m.sdtp_se[k]; }, mu, se);
        s.sdtp.push_back(mu);
        s.sdtp_se.push_back(se);
    }
    across([](const Metrics& m) { return m.mean_stall; },
           [](const Metrics& m) { return m.mean_stall_se; }, s.mean_stall, s.mean_stall_se);
    across([](const Metrics& m) { return m.ttfc_mean; }, [](const Metrics& m) { return m.ttfc_se; },
           s.ttfc, s.ttfc_se);
    across([](const Metrics& m) { return m.miss_rate; },
           [](const Metrics& m) {
               return std::sqrt(m.miss_rate * (1 - m.miss_rate) / std::max<long>(m.measured, 1));
           },
           s.miss_rate, s.miss_rate_se);
    for (const auto& m : runs)
        s.capacity_violations += m.capacity_violations;
    return s;
}

void write_metrics_csv(const SeedSummary& s, std::ostream& os)
{
    os << "metric,sigma,value,stderr,seeds\n";
    os.precision(12);
    for (size_t k = 0; k < s.sigma_grid.size(); ++k)
        os << "sdtp," << s.sigma_grid[k] << ',' << s.sdtp[k] << ',' << s.sdtp_se[k] << ','
           << s.seeds << '\n';
    os << "mean_stall,," << s.mean_stall << ',' << s.mean_stall_se << ',' << s.seeds << '\n';
    os << "ttfc,," << s.ttfc << ',' << s.ttfc_se << ',' << s.seeds << '\n';
    os << "miss_rate,," << s.miss_rate << ',' << s.miss_rate_se << ',' << s.seeds << '\n';
    os << "capacity_violations,," << s.capacity_violations << ",0," << s.seeds << '\n';
}

}  // namespace stallkit
