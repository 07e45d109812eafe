#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stallkit/model.hpp"

namespace stallkit {

struct Catalog {
    std::vector<double> length_s;  // rounded up to a multiple of τ
    std::vector<int> segments;     // L_i = length / τ
};

struct Request {
    double time;
    int file;
    int router;
};

struct RequestTrace {
    std::vector<Request> records;
    std::vector<double> length_s;  // per file; empty if the trace carries none
};

// Video length rounded up to a whole number of chunks, in seconds.
double round_to_chunks(double length_s, double tau);

// Pareto(shape, scale) lengths in seconds, redrawn until below one hour, then
// rounded up to a multiple of τ.
Catalog gen_catalog(int r, double shape, double scale, double tau, std::uint64_t seed);

// Independent Poisson streams per (file, router), merged in time order.
RequestTrace gen_poisson_trace(const SystemTopology& t, double horizon, std::uint64_t seed);

// `file_id,length_s` CSV.
Catalog load_catalog(const std::string& path, double tau);

// `time_s,file_id,router_id[,length_s]` CSV. File ids are checked against
// `catalog_size` (or num_files when the lengths come from the trace itself);
// router ids against `num_routers` when positive.
RequestTrace load_trace(const std::string& path, int catalog_size, int num_routers = 0);

}  // namespace stallkit
