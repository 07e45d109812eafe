#pragma once

#include <cstdint>
#include <deque>
#include <list>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "stallkit/model.hpp"

namespace stallkit {

enum class PolicyKind { ttl, lru, qlru, klru, krandom, adaptsize };

PolicyKind parse_policy(const std::string& name);
std::string policy_name(PolicyKind k);

struct PolicyParams {
    PolicyKind kind = PolicyKind::ttl;
    double q = 0.67;     // qLRU admission probability
    int k = 6;           // kLRU / kRandom ladder depth (k-1 virtual caches)
    int window = 1000;   // adaptSize retune period, requests
    int c_grid = 32;     // adaptSize candidate count
    double tau = 1.0;    // chunk length, lower end of the adaptSize grid
};

using PolicyRng = std::mt19937_64;

// The uniform draw the randomised policies consume, one per decision.
inline double policy_uniform(PolicyRng& rng)
{
    return double(rng() >> 11) * 0x1.0p-53;
}

struct PolicyDecision {
    bool hit = false;
    bool join_inflight = false;  // set by the simulator when the resident copy is still downloading
    std::vector<int> evictions;
    bool admitted = false;
};

// Edge cache of one router. Sizes are seconds of video (τ L_i).
struct EdgeCacheState {
    struct Entry {
        double size = 0;
        double last_request = 0;
        double expiry = 0;    // TTL policy: last_request + ω
        double progress = 0;  // seconds of video already at the edge
    };

    double capacity = 0;
    std::vector<double> sizes;  // per file
    double used = 0;
    std::unordered_map<int, Entry> resident;

    std::set<std::pair<double, int>> expiry_order;  // TTL
    std::list<int> lru;                             // front = most recent
    std::unordered_map<int, std::list<int>::iterator> lru_pos;

    // kLRU / kRandom virtual caches: metadata only, LRU ordered
    struct Ladder {
        double used = 0;
        std::list<int> order;
        std::unordered_map<int, std::list<int>::iterator> pos;
    };
    std::vector<Ladder> ladders;

    // adaptSize
    double c = 0;
    std::deque<std::pair<double, int>> window;  // (time, file)
    std::unordered_map<int, int> window_counts;
    int since_retune = 0;

    EdgeCacheState() = default;
    EdgeCacheState(double capacity, std::vector<double> sizes, const PolicyParams& p = {});

    bool contains(int f) const { return resident.count(f) != 0; }
};

// Each throws FileTooLarge (state untouched) when the file alone exceeds the capacity.
PolicyDecision ttl_on_request(EdgeCacheState& s, int file, double now, double ttl);
PolicyDecision lru_on_request(EdgeCacheState& s, int file, double now, PolicyRng& rng);
PolicyDecision qlru_on_request(EdgeCacheState& s, int file, double now, PolicyRng& rng, double q);
PolicyDecision klru_on_request(EdgeCacheState& s, int file, double now, PolicyRng& rng, int k);
PolicyDecision krandom_on_request(EdgeCacheState& s, int file, double now, PolicyRng& rng, int k);
PolicyDecision adaptsize_on_request(EdgeCacheState& s, int file, double now, PolicyRng& rng,
                                    const PolicyParams& p);

// Dispatches on p.kind; `ttl` is only used by the TTL policy.
PolicyDecision on_request(EdgeCacheState& s, const PolicyParams& p, int file, double now,
                          double ttl, PolicyRng& rng);

// Estimated object hit ratio of size-aware probabilistic admission with
// parameter c, under an LRU characteristic-time approximation.
double adaptsize_hit_ratio(const std::vector<double>& rates, const std::vector<double>& sizes,
                           double capacity, double c);

// Placements return L_{j,i} in L_index order, Σ_i L_{j,i} <= C_j.
std::vector<double> placement_equal(const SystemTopology& t);
std::vector<double> placement_hottest(const SystemTopology& t);
std::vector<double> placement_from_vars(const SystemTopology& t, const DecisionVariables& v);

}  // namespace stallkit
