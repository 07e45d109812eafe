#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/queueing.hpp"

using namespace stallkit;

TEST_SUITE("queueing")
{
    TEST_CASE("shifted exponential MGF")
    {
        const ShiftedExp s{2.0, 0.5};
        CHECK(mgf_shifted_exp(s, 0.0) == 1.0);
        CHECK(mgf_shifted_exp(s, 1.0) == doctest::Approx(3.29744254140025629).epsilon(1e-14));
        CHECK_THROWS_AS(mgf_shifted_exp(s, 2.0), MgfUndefined);
    }

    TEST_CASE("batch service MGF")
    {
        StreamQueue q{{2.0, 0.0}, 1.0, {{0.5, 1.0}, {0.5, 2.0}}};
        CHECK(batch_service_mgf(q, 1.0) == doctest::Approx(3.0).epsilon(1e-14));
        CHECK(batch_service_mgf(q, 0.0) == 1.0);
        StreamQueue one{{3.0, 0.2}, 1.0, {{1.0, 1.0}}};
        CHECK(batch_service_mgf(one, 0.7) ==
              doctest::Approx(mgf_shifted_exp(one.service, 0.7)).epsilon(1e-14));
    }

    TEST_CASE("load intensity")
    {
        StreamQueue q{{2.0, 0.5}, 0.0, {{1.0, 5.0}}};
        CHECK(load_intensity(q) == 0.0);
        q.agg_rate = 0.1;
        CHECK(load_intensity(q) == doctest::Approx(0.5).epsilon(1e-14));

        StreamQueue m{{1.7, 0.3}, 0.2, {{0.3, 2.0}, {0.7, 4.0}}};
        const double e = 1e-6;
        const double fd = m.agg_rate * (batch_service_mgf(m, e) - batch_service_mgf(m, -e)) / (2 * e);
        CHECK(load_intensity(m) == doctest::Approx(fd).epsilon(1e-6));
    }

    TEST_CASE("P-K waiting MGF")
    {
        StreamQueue idle{{2.0, 0.1}, 0.0, {{1.0, 3.0}}};
        CHECK(pk_waiting_mgf(idle, 1.2) == doctest::Approx(1.0).epsilon(1e-15));

        // M/M/1: P(W=0)=1-ρ, else Exp(μ-λ)
        StreamQueue mm1{{1.0, 0.0}, 0.3, {{1.0, 1.0}}};
        for (double t : {0.1, 0.3, 0.5, 0.65}) {
            const double ref = 0.7 + 0.3 * 0.7 / (0.7 - t);
            CHECK(pk_waiting_mgf(mm1, t) == doctest::Approx(ref).epsilon(1e-12));
        }
        const double e = 1e-5;
        const double mean = (pk_waiting_mgf(mm1, e) - pk_waiting_mgf(mm1, -e)) / (2 * e);
        CHECK(mean == doctest::Approx(0.3 * 2.0 / (2 * 0.7)).epsilon(1e-6));

        StreamQueue hot{{1.0, 0.0}, 1.05, {{1.0, 1.0}}};
        CHECK_THROWS_AS(pk_waiting_mgf(hot, 0.1), Unstable);
        CHECK_THROWS_AS(pk_waiting_mgf(mm1, 0.8), MgfUndefined);
    }

    TEST_CASE("download MGF of cached chunks")
    {
        StreamQueue q{{2.0, 0.0}, 0.0, {{1.0, 3.0}}};
        CHECK(download_mgf_cached(q, 1, 0.4) == doctest::Approx(mgf_shifted_exp(q.service, 0.4)));
        CHECK(download_mgf_cached(q, 3, 1.0) == doctest::Approx(8.0).epsilon(1e-14));
    }

    TEST_CASE("download MGF matches M/G/1 Monte Carlo")
    {
        oracle::Rng rng(11);
        const oracle::Mix mx{2.5, 0.2, 0.15, {0.4, 0.6}, {1, 3}};
        const StreamQueue q = mx.queue();
        const int g = 2;
        const double t = 0.3;
        auto est = oracle::mc_mean(200000, [&] {
            double d = oracle::pk_wait(rng, mx);
            for (int k = 0; k < g; ++k)
                d += oracle::shifted_exp(rng, mx.alpha, mx.eta);
            return std::exp(t * d);
        });
        CHECK(std::fabs(download_mgf_cached(q, g, t) - est.mean) < 3 * est.se);
    }

    TEST_CASE("tandem bound closed cases")
    {
        StreamQueue d{{3.0, 0.1}, 0.0, {{1.0, 2.0}}};
        StreamQueue b{{2.0, 0.2}, 0.0, {{1.0, 2.0}}};
        const double t = 0.5;
        const double md = mgf_shifted_exp(d.service, t), mb = mgf_shifted_exp(b.service, t);
        CHECK(tandem_chunk_mgf_bound(d, b, 2, 3, t) == doctest::Approx(mb + md * mb).epsilon(1e-14));
        CHECK(tandem_chunk_mgf_bound(d, b, 1, 4, 1e-9) == doctest::Approx(4.0).epsilon(1e-6));
        CHECK_THROWS_AS(tandem_chunk_mgf_bound(d, b, 3, 3, t), ConstraintViolated);
    }

    TEST_CASE("tandem bound dominates the max-recursion")
    {
        oracle::Rng rng(5);
        const oracle::Mix dm{2.0, 0.1, 0.12, {0.5, 0.5}, {1, 2}};
        const oracle::Mix bm{2.5, 0.1, 0.12, {0.5, 0.5}, {1, 2}};
        const int Lc = 1;
        for (int v : {2, 3}) {
            const double t = 0.25;
            auto est = oracle::mc_mean(100000, [&] {
                double e = oracle::pk_wait(rng, dm);
                double D = oracle::pk_wait(rng, bm);
                for (int g = Lc + 1; g <= v; ++g) {
                    e += oracle::shifted_exp(rng, dm.alpha, dm.eta);
                    D = std::max(D, e) + oracle::shifted_exp(rng, bm.alpha, bm.eta);
                }
                return std::exp(t * D);
            });
            CHECK(tandem_chunk_mgf_bound(dm.queue(), bm.queue(), Lc, v, t) >= est.mean - 3 * est.se);
        }
    }

    TEST_CASE("MGF shape properties")
    {
        oracle::Rng rng(3);
        std::uniform_real_distribution<double> U(0, 1);
        for (int it = 0; it < 50; ++it) {
            const oracle::Mix mx{0.5 + 3 * U(rng), 0.3 * U(rng), 0.0, {0.3, 0.7}, {1, 1 + it % 4}};
            oracle::Mix m2 = mx;
            m2.lam = 0.8 * U(rng) / mx.mean();
            const StreamQueue q = m2.queue();
            double prev_pk = 1.0, prev_m = 1.0;
            for (int k = 1; k <= 20; ++k) {
                const double t = mx.alpha * 0.02 * k;
                double pk;
                try {
                    pk = pk_waiting_mgf(q, t);
                } catch (const MgfUndefined&) {
                    break;
                }
                const double m = mgf_shifted_exp(q.service, t);
                CHECK(m >= 1.0);
                CHECK(m > prev_m);
                CHECK(pk >= 1.0);
                CHECK(pk > prev_pk);
                CHECK(download_mgf_cached(q, 3, t) >= download_mgf_cached(q, 2, t));
                prev_pk = pk;
                prev_m = m;
            }
            CHECK(mgf_shifted_exp(q.service, 1e-12) == doctest::Approx(1.0));
            CHECK(pk_waiting_mgf(q, 1e-12) == doctest::Approx(1.0));
        }
    }

    TEST_CASE("geometric sums against term-by-term loops")
    {
        oracle::Rng rng(9);
        std::uniform_real_distribution<double> U(-1, 1);
        auto loop1 = [](double u, int n) {
            long double s = 0;
            for (int b = 1; b <= n; ++b)
                s += std::exp((long double)b * u);
            return double(s);
        };
        auto loop2 = [](double lx, double ly, int n) {
            long double s = 0;
            for (int a = 1; a <= n; ++a)
                for (int b = 1; b <= a; ++b)
                    s += std::exp((long double)b * lx + (long double)(a - b) * ly);
            return double(s);
        };
        for (int it = 0; it < 300; ++it) {
            const int n = 1 + it % 40;
            const double scale = std::pow(10.0, -12.0 + 12.0 * (U(rng) + 1) / 2);
            const double u = 0.3 * U(rng) * scale;
            CHECK(kernel::geom_sum(u, double(n)) == doctest::Approx(loop1(u, n)).epsilon(1e-10));
            const double gap = (it % 3 == 0) ? 0.0 : U(rng) * std::pow(10.0, -14.0 + it % 14);
            const double ly = u + gap;
            CHECK(kernel::double_geom_sum(u, ly, double(n)) ==
                  doctest::Approx(loop2(u, ly, n)).epsilon(1e-8));
        }
        CHECK(kernel::geom_sum(0.0, 0.0) == 0.0);
        CHECK(kernel::double_geom_sum(0.1, -0.2, 0.0) == 0.0);
    }

    TEST_CASE("geometric-sum derivative matches finite differences")
    {
        for (double n : {0.5, 1.0, 3.7, 40.0})
            for (double u : {-0.3, -1e-4, 1e-7, 0.0, 2e-3, 0.2}) {
                const double e = 1e-6;
                const double fd =
                    (kernel::geom_sum(u + e, n) - kernel::geom_sum(u - e, n)) / (2 * e);
                CHECK(kernel::geom_sum_deriv(u, n) == doctest::Approx(fd).epsilon(1e-6));
            }
    }
}
