#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../oracles.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/simulator.hpp"

using namespace stallkit;

namespace {

// E[(Y - k)^+] for Y = eta + Exp(a)
double excess(double a, double eta, double k)
{
    return k <= eta ? eta + 1.0 / a - k : std::exp(-a * (k - eta)) / a;
}

// E[Γ] for two chunks served back to back on an idle stream with shifted
// exponential chunk times, by quadrature over the first chunk.
double two_chunk_stall(double a, double eta, double ds, double tau)
{
    auto inner = [&](double y) {
        const double A = std::max(0.0, y - ds);
        return A + excess(a, eta, ds + tau + A - y);
    };
    // substitute y = eta + x/a, density e^{-x}
    const int n = 20000;
    const double hi = 60.0, h = hi / n;
    double s = 0;
    for (int k = 0; k <= n; ++k) {
        const double x = k * h;
        const double w = (k == 0 || k == n) ? 1 : (k % 2 ? 4 : 2);
        s += w * std::exp(-x) * inner(eta + x / a);
    }
    return s * h / 3;
}

RequestTrace spaced(int n, double gap, int file = 0)
{
    RequestTrace tr;
    for (int k = 0; k < n; ++k)
        tr.records.push_back({k * gap, file, 0});
    return tr;
}

SimOptions quiet()
{
    SimOptions o;
    o.warmup_frac = 0;
    o.edge_cache = false;
    return o;
}

}  // namespace

TEST_SUITE("simulator")
{
    TEST_CASE("playback recursion")
    {
        std::vector<double> T;
        double stall;
        playback({3, 6, 9}, 1, 2, T, stall);
        CHECK(T == std::vector<double>{3, 6, 9});
        CHECK(stall == 4.0);
        playback({1, 2, 3}, 1, 2, T, stall);
        CHECK(T == std::vector<double>{1, 3, 5});
        CHECK(stall == 0.0);
        playback({}, 1, 2, T, stall);
        CHECK(stall == 0.0);
    }

    TEST_CASE("deterministic service end to end")
    {
        SystemTopology t = oracle::tiny_topology(1, {3}, 1e-6);
        t.tau = 2;
        t.startup_delay = 1;
        t.shift_edge = {3};
        t.finalize();
        DecisionVariables v = uniform_init(t);
        REQUIRE(v.L[0] == 3);
        SimOptions o = quiet();
        o.deterministic_service = true;
        o.keep_records = true;
        Metrics m = run(t, v, {}, spaced(1, 1), 1, o);
        REQUIRE(m.records.size() == 1);
        CHECK(m.records[0].D == std::vector<double>{3, 6, 9});
        CHECK(m.stalls[0] == 4.0);

        t.shift_edge = {1};
        t.finalize();
        m = run(t, v, {}, spaced(1, 1), 1, o);
        CHECK(m.stalls[0] == 0.0);
    }

    TEST_CASE("idle system stall matches quadrature")
    {
        SystemTopology t = oracle::tiny_topology(1, {2}, 1e-6);
        t.startup_delay = 0.3;
        t.tau = 0.4;
        t.finalize();
        const DecisionVariables v = uniform_init(t);
        const double a = 0.5 * t.base_rate_edge[0], eta = t.shift_edge[0];
        const Metrics m = run(t, v, {}, spaced(100000, 1e3), 7, quiet());
        const auto sd = oracle::mc_mean(static_cast<int>(m.stalls.size()),
                                        [&, k = size_t{0}]() mutable { return m.stalls[k++]; });
        const double want = two_chunk_stall(a, eta, t.startup_delay, t.tau);
        CHECK(std::fabs(sd.mean - want) <= 3 * sd.se);
        CHECK(m.mean_stall == doctest::Approx(sd.mean).epsilon(1e-12));
    }

    TEST_CASE("records satisfy the playback invariants")
    {
        oracle::Rng gen(4);
        const SystemTopology t = oracle::random_topology(gen, 6);
        const DecisionVariables v = uniform_init(t);
        SimOptions o;
        o.horizon = 5000;
        o.keep_records = true;
        o.warmup_frac = 0;
        const Metrics m = run(t, v, {}, gen_poisson_trace(t, o.horizon, 3), 3, o);
        REQUIRE(!m.records.empty());
        for (const auto& r : m.records) {
            REQUIRE(r.T.size() == r.D.size());
            if (r.D.empty())
                continue;
            CHECK(r.T[0] == std::max(t.startup_delay, r.D[0]));
            for (size_t g = 1; g < r.T.size(); ++g)
                CHECK(r.T[g] == std::max(r.T[g - 1] + t.tau, r.D[g]));
            CHECK(r.stall >= 0);
            CHECK(r.ttfc == r.D[0]);
        }
        CHECK(m.edge_hits + m.edge_joins + m.cdn == m.measured);
    }

    TEST_CASE("edge join reuses the in-flight download")
    {
        SystemTopology t = oracle::tiny_topology(1, {4}, 1e-6);
        t.finalize();
        DecisionVariables v = uniform_init(t);
        v.omega[0] = 100;
        SimOptions o;
        o.warmup_frac = 0;
        o.keep_records = true;
        RequestTrace tr;
        tr.records = {{0, 0, 0}, {0.5, 0, 0}, {500, 0, 0}};
        const Metrics m = run(t, v, {}, tr, 2, o);
        REQUIRE(m.records.size() == 3);
        CHECK(m.records[0].from == ServedFrom::cdn);
        const auto& j = m.records[1];
        // the copy completes after 4 chunks of at least 0.1 s each
        CHECK(j.from == ServedFrom::edge_join);
        for (size_t g = 0; g < j.D.size(); ++g)
            CHECK(j.D[g] == doctest::Approx(std::max(0.0, m.records[0].D[g] - 0.5)));
        CHECK(m.records[2].from == ServedFrom::cdn);  // expired at 100.5
    }

    TEST_CASE("measure_sdtp counts")
    {
        Metrics m;
        CHECK_THROWS_AS(measure_sdtp(m, 1), NoSamples);
        m.stalls = {0, 2, 4, 6};
        const Estimate e = measure_sdtp(m, 3);
        CHECK(e.value == 0.5);
        CHECK(e.stderr_ == doctest::Approx(0.25));
        m.stalls = {0, 0, 0};
        CHECK(measure_sdtp(m, 1).value == 0.0);
        m.stalls = {0, 0.1, 0, 3};
        CHECK(measure_sdtp(m, 1e-12).value == 0.5);
    }

    TEST_CASE("deterministic for a fixed seed")
    {
        oracle::Rng gen(11);
        const SystemTopology t = oracle::random_topology(gen, 6);
        const DecisionVariables v = uniform_init(t);
        SimOptions o;
        o.horizon = 20000;
        const RequestTrace tr = gen_poisson_trace(t, o.horizon, 5);
        const Metrics a = run(t, v, {}, tr, 5, o), b = run(t, v, {}, tr, 5, o);
        CHECK(a.stalls == b.stalls);
        CHECK(a.ttfcs == b.ttfcs);
        CHECK(a.miss_rate == b.miss_rate);
        const auto runs = run_seeds(t, v, {}, nullptr, {1, 2}, o);
        const auto again = run_seeds(t, v, {}, nullptr, {1, 2}, o);
        CHECK(runs[1].stalls == again[1].stalls);
        CHECK(runs[0].stalls != runs[1].stalls);
    }

    TEST_CASE("forwarded arrivals look Poisson")
    {
        SystemTopology t = oracle::tiny_topology(2, {2, 3}, 0.05);
        t.finalize();
        DecisionVariables v = uniform_init(t);
        v.L = {1, 1};
        SimOptions o;
        o.horizon = 2e5;
        const Metrics m = run(t, v, {}, gen_poisson_trace(t, o.horizon, 8), 8, o);
        const auto diag = poisson_check(m, 100);
        REQUIRE(diag.size() == 2);
        for (const auto& d : diag) {
            CHECK(d.cv >= 0.9);
            CHECK(d.cv <= 1.1);
        }
        CHECK(poisson_check(Metrics{}).empty());
    }

    TEST_CASE("stream waits follow P-K")
    {
        oracle::Mix mx{2.0, 0.1, 0, {0.6, 0.4}, {1, 3}};
        mx.lam = 0.5 / mx.mean();
        const auto w = simulate_stream_waits(mx.queue(), 400000, 3);
        double s = 0;
        for (double x : w)
            s += x;
        const double want = mx.lam * mx.second_moment() / (2 * (1 - 0.5));
        CHECK(s / w.size() == doctest::Approx(want).epsilon(0.03));
    }

    TEST_CASE("ttl thinning")
    {
        SystemTopology t = oracle::tiny_topology(1, {1}, 0.1);
        t.finalize();
        DecisionVariables v = uniform_init(t);
        v.omega[0] = 5;
        SimOptions o;
        o.horizon = 2e5;
        const Metrics m = run(t, v, {}, gen_poisson_trace(t, o.horizon, 6), 6, o);
        const double p = std::exp(-0.1 * 5), n = double(m.measured);
        CHECK(std::fabs(m.miss_rate - p) <= 3 * std::sqrt(p * (1 - p) / n));
        CHECK(m.capacity_violations == 0);
    }

    TEST_CASE("error paths")
    {
        SystemTopology t = oracle::tiny_topology(1, {2}, 0.1);
        DecisionVariables v = uniform_init(t);
        CHECK_THROWS_AS(run(t, v, {}, RequestTrace{}, 1, {}), NoSamples);
        CHECK_THROWS_AS(run(t, v, {}, spaced(3, 1, 4), 1, quiet()), UnknownFileId);
        DecisionVariables bad = v;
        bad.pi[0] = 2;
        CHECK_THROWS_AS(run(t, bad, {}, spaced(3, 1), 1, quiet()), InfeasibleVars);
        SimOptions o;
        CHECK_THROWS_AS(run_seeds(t, v, {}, nullptr, {}, o), ConfigError);
        CHECK_THROWS_AS(run_seeds(t, v, {}, nullptr, {1}, o), ConfigError);

        // a trace far above the configured rate trips the queue bound
        SimOptions ho = quiet();
        ho.queue_bound = 1000;
        CHECK_THROWS_AS(run(t, v, {}, spaced(5000, 0.01), 1, ho), UnstableDetected);
    }

    TEST_CASE("summary across seeds")
    {
        Metrics a, b;
        a.sigma_grid = b.sigma_grid = {0};
        a.sdtp = {0.2};
        b.sdtp = {0.4};
        a.sdtp_se = b.sdtp_se = {0.01};
        a.miss_rate = 0.5;
        b.miss_rate = 0.7;
        a.measured = b.measured = 10;
        const SeedSummary s = summarize({a, b});
        CHECK(s.sdtp[0] == doctest::Approx(0.3));
        CHECK(s.sdtp_se[0] == doctest::Approx(0.1));
        CHECK(s.miss_rate == doctest::Approx(0.6));
        CHECK(s.seeds == 2);
        CHECK_THROWS_AS(summarize({}), NoSamples);
    }
}
