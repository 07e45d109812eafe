#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "../oracles.hpp"
#include "stallkit/errors.hpp"
#include "stallkit/workload.hpp"

using namespace stallkit;
namespace fs = std::filesystem;

namespace {

fs::path write_tmp(const std::string& name, const std::string& body)
{
    const fs::path p = fs::temp_directory_path() / ("stallkit_wl_" + name);
    std::ofstream(p) << body;
    return p;
}

}  // namespace

TEST_SUITE("workload")
{
    TEST_CASE("lengths round up to whole chunks")
    {
        CHECK(round_to_chunks(301.2, 8) == 304.0);
        CHECK(round_to_chunks(304.0, 8) == 304.0);
        CHECK(round_to_chunks(8.0000000001, 8) == 8.0);
        CHECK(round_to_chunks(0.5, 8) == 8.0);
    }

    TEST_CASE("catalog lengths")
    {
        const Catalog c = gen_catalog(2000, 2.0, 300, 8, 3);
        REQUIRE(c.segments.size() == 2000);
        int min_L = 1 << 30;
        for (size_t i = 0; i < c.segments.size(); ++i) {
            CHECK(c.length_s[i] == doctest::Approx(8.0 * c.segments[i]));
            CHECK(c.length_s[i] < 3600 + 8);
            min_L = std::min(min_L, c.segments[i]);
        }
        // Pareto support starts at the scale, 300 s -> 38 chunks
        CHECK(min_L >= 38);
        CHECK(min_L <= 40);

        const Catalog again = gen_catalog(2000, 2.0, 300, 8, 3);
        CHECK(again.length_s == c.length_s);
        CHECK_THROWS_AS(gen_catalog(5, 1.0, 300, 8, 1), ConfigError);
        CHECK_THROWS_AS(gen_catalog(5, 2.0, 4000, 8, 1), ConfigError);
    }

    TEST_CASE("poisson trace counts")
    {
        SystemTopology t = oracle::tiny_topology(1, {3}, 0.01455);
        const double T = 1e6;
        const RequestTrace tr = gen_poisson_trace(t, T, 9);
        const double mu = 0.01455 * T;
        CHECK(std::fabs(double(tr.records.size()) - mu) <= 3 * std::sqrt(mu));
        CHECK(std::is_sorted(tr.records.begin(), tr.records.end(),
                             [](const Request& a, const Request& b) { return a.time < b.time; }));
        CHECK(tr.records.back().time < T);

        t.arrival_rate = {0.0};
        CHECK(gen_poisson_trace(t, 100, 1).records.empty());
        CHECK_THROWS_AS(gen_poisson_trace(t, 0, 1), ConfigError);
    }

    TEST_CASE("poisson trace splits by pair")
    {
        SystemTopology t = oracle::tiny_topology(2, {1, 1}, 0.0);
        t.arrival_rate = {0.3, 0.1};
        const RequestTrace tr = gen_poisson_trace(t, 2e4, 4);
        long n0 = 0, n1 = 0;
        for (const Request& r : tr.records)
            (r.file == 0 ? n0 : n1) += 1;
        CHECK(std::fabs(n0 - 6000.0) <= 3 * std::sqrt(6000.0));
        CHECK(std::fabs(n1 - 2000.0) <= 3 * std::sqrt(2000.0));
    }

    TEST_CASE("load_trace")
    {
        const auto ok = write_tmp("ok.csv", "time_s,file_id,router_id\n0.5,0,0\n1.5,2,1\n\n2.0,1,0\n");
        const RequestTrace tr = load_trace(ok.string(), 3, 2);
        REQUIRE(tr.records.size() == 3);
        CHECK(tr.records[1].file == 2);
        CHECK(tr.records[1].router == 1);
        CHECK(tr.length_s.empty());

        const auto bad = write_tmp("bad.csv", "time_s,file_id,router_id\n0.5,0,0\n1.0,x,0\n");
        try {
            load_trace(bad.string(), 3);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 3);
        }

        const auto order = write_tmp("order.csv", "time_s,file_id,router_id\n2,0,0\n1,0,0\n");
        CHECK_THROWS_AS(load_trace(order.string(), 3), ParseError);
        const auto unknown = write_tmp("unk.csv", "time_s,file_id,router_id\n0,7,0\n");
        CHECK_THROWS_AS(load_trace(unknown.string(), 3), UnknownFileId);
        const auto head = write_tmp("head.csv", "t,f,r\n0,0,0\n");
        CHECK_THROWS_AS(load_trace(head.string(), 3), ParseError);
        const auto router = write_tmp("router.csv", "time_s,file_id,router_id\n0,0,5\n");
        CHECK_THROWS_AS(load_trace(router.string(), 3, 2), ParseError);

        const auto lens =
            write_tmp("lens.csv", "time_s,file_id,router_id,length_s\n0,1,0,40\n1,1,0,40\n");
        const RequestTrace tl = load_trace(lens.string(), 0);
        REQUIRE(tl.length_s.size() == 2);
        CHECK(tl.length_s[1] == 40);
        const auto clash =
            write_tmp("clash.csv", "time_s,file_id,router_id,length_s\n0,1,0,40\n1,1,0,41\n");
        CHECK_THROWS_AS(load_trace(clash.string(), 0), ParseError);
        CHECK_THROWS_AS(load_trace("/nonexistent/trace.csv", 3), ConfigError);
    }

    TEST_CASE("load_catalog")
    {
        const auto ok = write_tmp("cat.csv", "file_id,length_s\n1,17\n0,301.2\n");
        const Catalog c = load_catalog(ok.string(), 8);
        REQUIRE(c.segments.size() == 2);
        CHECK(c.segments[0] == 38);
        CHECK(c.length_s[0] == 304);
        CHECK(c.segments[1] == 3);

        const auto gap = write_tmp("gap.csv", "file_id,length_s\n0,10\n2,10\n");
        CHECK_THROWS_AS(load_catalog(gap.string(), 8), ConfigError);
        const auto neg = write_tmp("neg.csv", "file_id,length_s\n0,-1\n");
        CHECK_THROWS_AS(load_catalog(neg.string(), 8), ParseError);
    }
}
