#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stallkit/model.hpp"
#include "stallkit/policies.hpp"
#include "stallkit/workload.hpp"

namespace stallkit {

enum class ServedFrom { edge_hit, edge_join, cdn };
enum class TtlMode { fixed, exponential };

struct PlaybackRecord {
    long id;
    int file, router, server = -1;
    double arrival;
    std::vector<double> D, T;  // relative to arrival
    double stall, ttfc;
    ServedFrom from;
};

struct SimOptions {
    double horizon = 0;  // 0: time of the last request
    double warmup_frac = 0.1;
    bool deterministic_service = false;
    std::size_t queue_bound = 100000;  // jobs per stream before UnstableDetected
    TtlMode ttl_mode = TtlMode::fixed;
    std::vector<double> sigma_grid = {0, 2, 4, 8, 16};
    bool keep_records = false;
    bool edge_cache = true;  // false: every request goes to the servers
    int occupancy_samples = 2000;
};

struct StreamStats {
    double busy = 0;
    long jobs = 0;
    double wait_sum = 0, wait_sq = 0;
    std::vector<double> arrivals;  // measured forwarded arrivals
};

struct Metrics {
    std::vector<double> sigma_grid, sdtp, sdtp_se;
    double mean_stall = 0, mean_stall_se = 0;
    double ttfc_mean = 0, ttfc_se = 0;
    long requests = 0, measured = 0;
    long edge_hits = 0, edge_joins = 0, cdn = 0, too_large = 0;
    double miss_rate = 0;
    std::vector<long> pair_requests, pair_misses;  // measured, index i*R + l
    std::vector<StreamStats> e, d, dbar;
    std::vector<double> util_e, util_d, util_dbar;
    // (time, router, reserved seconds, live seconds)
    struct Occupancy {
        double time;
        int router;
        double reserved, live;
    };
    std::vector<Occupancy> occupancy;
    double max_occupancy_ratio = 0;
    long capacity_checks = 0, capacity_violations = 0;
    std::vector<double> stalls, ttfcs;  // measured
    std::vector<PlaybackRecord> records;
    double horizon = 0, measure_from = 0;
};

// Playback recursion on download times relative to the request.
void playback(const std::vector<double>& D, double startup_delay, double tau, std::vector<double>& T,
              double& stall);

Metrics run(const SystemTopology& t, const DecisionVariables& v, const PolicyParams& policy,
            const RequestTrace& trace, std::uint64_t seed, const SimOptions& opt = {});

struct Estimate {
    double value, stderr_;
};
Estimate measure_sdtp(const Metrics& m, double sigma);

struct PoissonDiag {
    std::string kind;  // "e" or "d"
    int stream;
    long n;
    double mean_gap, cv, dispersion;
};
std::vector<PoissonDiag> poisson_check(const Metrics& m, long min_arrivals = 2);

// Waiting times of `jobs` Poisson arrivals at one FIFO batch-service stream,
// served by the same code path as the full simulator.
std::vector<double> simulate_stream_waits(const StreamQueue& q, long jobs, std::uint64_t seed,
                                          bool deterministic = false);

// Independent runs over seeds (synthetic Poisson traces when `trace` is null).
std::vector<Metrics> run_seeds(const SystemTopology& t, const DecisionVariables& v,
                               const PolicyParams& policy, const RequestTrace* trace,
                               const std::vector<std::uint64_t>& seeds, const SimOptions& opt);

struct SeedSummary {
    std::vector<double> sigma_grid, sdtp, sdtp_se;
    double mean_stall = 0, mean_stall_se = 0;
    double ttfc = 0, ttfc_se = 0;
    double miss_rate = 0, miss_rate_se = 0;
    long capacity_violations = 0;
    int seeds = 0;
};
SeedSummary summarize(const std::vector<Metrics>& runs);
void write_metrics_csv(const SeedSummary& s, std::ostream& os);

}  // namespace stallkit
