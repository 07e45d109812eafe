#include "stallkit/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stallkit/errors.hpp"

namespace stallkit {

PolicyKind parse_policy(const std::string& name)
{
    if (name == "ttl")
        return PolicyKind::ttl;
    if (name == "lru")
        return PolicyKind::lru;
    if (name == "qlru")
        return PolicyKind::qlru;
    if (name == "klru")
        return PolicyKind::klru;
    if (name == "krandom")
        return PolicyKind::krandom;
    if (name == "adaptsize")
        return PolicyKind::adaptsize;
    throw ConfigError("unknown policy '" + name + "' (ttl, lru, qlru, klru, krandom, adaptsize)");
}

std::string policy_name(PolicyKind k)
{
    switch (k) {
    case PolicyKind::ttl: return "ttl";
    case PolicyKind::lru: return "lru";
    case PolicyKind::qlru: return "qlru";
    case PolicyKind::klru: return "klru";
    case PolicyKind::krandom: return "krandom";
    case PolicyKind::adaptsize: return "adaptsize";
    }
    return "?";
}

EdgeCacheState::EdgeCacheState(double cap, std::vector<double> sz, const PolicyParams& p)
    : capacity(cap), sizes(std::move(sz))
{
    if (p.kind == PolicyKind::klru || p.kind == PolicyKind::krandom)
        ladders.resize(std::max(p.k - 1, 0));
    c = capacity;
}

namespace {

void check_size(const EdgeCacheState& s, int f)
{
    if (s.sizes[f] > s.capacity)
        throw FileTooLarge("file " + std::to_string(f) + " needs " + std::to_string(s.sizes[f]) +
                           " s of edge cache, capacity is " + std::to_string(s.capacity));
}

void erase(EdgeCacheState& s, int f, PolicyDecision& d)
{
    auto it = s.resident.find(f);
    s.used -= it->second.size;
    s.expiry_order.erase({it->second.expiry, f});
    if (auto p = s.lru_pos.find(f); p != s.lru_pos.end()) {
        s.lru.erase(p->second);
        s.lru_pos.erase(p);
    }
    s.resident.erase(it);
    d.evictions.push_back(f);
    if (s.resident.empty())
        s.used = 0;  // drop accumulated rounding
}

void insert(EdgeCacheState& s, int f, double now, double expiry)
{
    EdgeCacheState::Entry e;
    e.size = s.sizes[f];
    e.last_request = now;
    e.expiry = expiry;
    s.resident[f] = e;
    s.used += e.size;
    s.expiry_order.insert({expiry, f});
    s.lru.push_front(f);
    s.lru_pos[f] = s.lru.begin();
}

void touch(EdgeCacheState& s, int f, double now)
{
    auto& e = s.resident[f];
    e.last_request = now;
    auto p = s.lru_pos[f];
    s.lru.splice(s.lru.begin(), s.lru, p);
}

bool fits(const EdgeCacheState& s, double size) { return s.used + size <= s.capacity; }

// LRU admission with eviction from the back of the recency list
void admit_lru(EdgeCacheState& s, int f, double now, PolicyDecision& d)
{
    while (!fits(s, s.sizes[f]))
        erase(s, s.lru.back(), d);
    insert(s, f, now, now);
    d.admitted = true;
}

void admit_random(EdgeCacheState& s, int f, double now, PolicyRng& rng, PolicyDecision& d)
{
    while (!fits(s, s.sizes[f])) {
        std::vector<int> ids(s.lru.begin(), s.lru.end());
        std::sort(ids.begin(), ids.end());
        const auto k = static_cast<size_t>(policy_uniform(rng) * ids.size());
        erase(s, ids[std::min(k, ids.size() - 1)], d);
    }
    insert(s, f, now, now);
    d.admitted = true;
}

void ladder_remove(EdgeCacheState::Ladder& L, const std::vector<double>& sizes, int f)
{
    auto p = L.pos.find(f);
    L.order.erase(p->second);
    L.pos.erase(p);
    L.used -= sizes[f];
    if (L.order.empty())
        L.used = 0;
}

void ladder_insert(EdgeCacheState::Ladder& L, const std::vector<double>& sizes, double cap, int f)
{
    while (L.used + sizes[f] > cap)
        ladder_remove(L, sizes, L.order.back());
    L.order.push_front(f);
    L.pos[f] = L.order.begin();
    L.used += sizes[f];
}

// Walks file f one level up the virtual ladder; true when it reaches the real cache.
bool climb(EdgeCacheState& s, int f)
{
    const int n = static_cast<int>(s.ladders.size());
    int level = -1;
    for (int k = n - 1; k >= 0; --k)
        if (s.ladders[k].pos.count(f)) {
            level = k;
            break;
        }
    if (level >= 0)
        ladder_remove(s.ladders[level], s.sizes, f);
    if (level + 1 >= n)
        return true;
    ladder_insert(s.ladders[level + 1], s.sizes, s.capacity, f);
    return false;
}

PolicyDecision k_ladder(EdgeCacheState& s, int f, double now, PolicyRng& rng, bool random)
{
    check_size(s, f);
    PolicyDecision d;
    if (s.contains(f)) {
        touch(s, f, now);
        d.hit = true;
        return d;
    }
    if (climb(s, f)) {
        if (random)
            admit_random(s, f, now, rng, d);
        else
            admit_lru(s, f, now, d);
    }
    return d;
}

}  // namespace

PolicyDecision ttl_on_request(EdgeCacheState& s, int f, double now, double ttl)
{
    check_size(s, f);
    PolicyDecision d;
    auto it = s.resident.find(f);
    if (it != s.resident.end() && now <= it->second.expiry) {
        s.expiry_order.erase({it->second.expiry, f});
        it->second.expiry = now + ttl;
        s.expiry_order.insert({it->second.expiry, f});
        touch(s, f, now);
        d.hit = true;
        return d;
    }
    // expired copies of other files go first
    while (!s.expiry_order.empty() && s.expiry_order.begin()->first < now) {
        const int g = s.expiry_order.begin()->second;
        if (g == f) {
            // the requested file's own stale copy keeps its slot; look past it
            auto nx = std::next(s.expiry_order.begin());
            if (nx == s.expiry_order.end() || nx->first >= now)
                break;
            erase(s, nx->second, d);
            continue;
        }
        erase(s, g, d);
    }
    if (it != s.resident.end()) {
        s.expiry_order.erase({it->second.expiry, f});
        it->second.expiry = now + ttl;
        it->second.progress = 0;
        s.expiry_order.insert({it->second.expiry, f});
        touch(s, f, now);
        d.admitted = true;
        return d;
    }
    while (!fits(s, s.sizes[f]))
        erase(s, s.expiry_order.begin()->second, d);
    insert(s, f, now, now + ttl);
    d.admitted = true;
    return d;
}

PolicyDecision lru_on_request(EdgeCacheState& s, int f, double now, PolicyRng&)
{
    check_size(s, f);
    PolicyDecision d;
    if (s.contains(f)) {
        touch(s, f, now);
        d.hit = true;
        return d;
    }
    admit_lru(s, f, now, d);
    return d;
}

PolicyDecision qlru_on_request(EdgeCacheState& s, int f, double now, PolicyRng& rng, double q)
{
    check_size(s, f);
    PolicyDecision d;
    if (s.contains(f)) {
        touch(s, f, now);
        d.hit = true;
        return d;
    }
    if (policy_uniform(rng) < q)
        admit_lru(s, f, now, d);
    return d;
}

PolicyDecision klru_on_request(EdgeCacheState& s, int f, double now, PolicyRng& rng, int)
{
    return k_ladder(s, f, now, rng, false);
}

PolicyDecision krandom_on_request(EdgeCacheState& s, int f, double now, PolicyRng& rng, int)
{
    return k_ladder(s, f, now, rng, true);
}

double adaptsize_hit_ratio(const std::vector<double>& rates, const std::vector<double>& sizes,
                           double capacity, double c)
{
    const size_t n = rates.size();
    std::vector<double> adm(n);
    double total_rate = 0, admitted_size = 0;
    for (size_t k = 0; k < n; ++k) {
        adm[k] = std::exp(-sizes[k] / c);
        total_rate += rates[k];
        if (adm[k] > 0 && rates[k] > 0)
            admitted_size += sizes[k];
    }
    if (total_rate <= 0)
        return 0.0;
    auto hit = [&](size_t k, double T) {
        const double x = adm[k] * std::expm1(rates[k] * T);
        return std::isfinite(x) ? x / (1.0 + x) : 1.0;
    };
    double T = INFINITY;
    if (admitted_size > capacity) {
        auto occ = [&](double T) {
            double s = 0;
            for (size_t k = 0; k < n; ++k)
                s += sizes[k] * hit(k, T);
            return s;
        };
        double lo = 1e-12, hi = 1.0;
        while (occ(hi) < capacity && hi < 1e300)
            hi *= 4;
        for (int it = 0; it < 200; ++it) {
            const double mid = std::sqrt(lo * hi);
            (occ(mid) < capacity ? lo : hi) = mid;
        }
        T = lo;
    }
    double h = 0;
    for (size_t k = 0; k < n; ++k)
        h += rates[k] * (std::isinf(T) ? (adm[k] > 0 ? 1.0 : 0.0) : hit(k, T));
    return h / total_rate;
}

namespace {

void adaptsize_retune(EdgeCacheState& s, const PolicyParams& p)
{
    const double span = s.window.back().first - s.window.front().first;
    if (!(span > 0))
        return;
    std::vector<double> rates, sizes;
    for (const auto& [f, cnt] : s.window_counts) {
        rates.push_back(cnt / span);
        sizes.push_back(s.sizes[f]);
    }
    const double lo = std::max(p.tau, 1e-9);
    const double hi = std::max(lo, std::accumulate(s.sizes.begin(), s.sizes.end(), 0.0));
    double best_c = s.c, best = -1;
    const int N = std::max(p.c_grid, 2);
    for (int k = 0; k < N; ++k) {
        const double c = lo * std::pow(hi / lo, double(k) / (N - 1));
        const double ohr = adaptsize_hit_ratio(rates, sizes, s.capacity, c);
        if (ohr > best + 1e-12) {
            best = ohr;
            best_c = c;
        }
    }
    s.c = best_c;
}

}  // namespace

PolicyDecision adaptsize_on_request(EdgeCacheState& s, int f, double now, PolicyRng& rng,
                                    const PolicyParams& p)
{
    check_size(s, f);
    s.window.push_back({now, f});
    ++s.window_counts[f];
    if (static_cast<int>(s.window.size()) > p.window) {
        const int old = s.window.front().second;
        s.window.pop_front();
        if (--s.window_counts[old] == 0)
            s.window_counts.erase(old);
    }
    if (++s.since_retune >= p.window) {
        s.since_retune = 0;
        adaptsize_retune(s, p);
    }
    PolicyDecision d;
    if (s.contains(f)) {
        touch(s, f, now);
        d.hit = true;
        return d;
    }
    if (policy_uniform(rng) < std::exp(-s.sizes[f] / s.c))
        admit_lru(s, f, now, d);
    return d;
}

PolicyDecision on_request(EdgeCacheState& s, const PolicyParams& p, int file, double now,
                          double ttl, PolicyRng& rng)
{
    switch (p.kind) {
    case PolicyKind::ttl: return ttl_on_request(s, file, now, ttl);
    case PolicyKind::lru: return lru_on_request(s, file, now, rng);
    case PolicyKind::qlru: return qlru_on_request(s, file, now, rng, p.q);
    case PolicyKind::klru: return klru_on_request(s, file, now, rng, p.k);
    case PolicyKind::krandom: return krandom_on_request(s, file, now, rng, p.k);
    case PolicyKind::adaptsize: return adaptsize_on_request(s, file, now, rng, p);
    }
    return {};
}

std::vector<double> placement_equal(const SystemTopology& t)
{
    std::vector<double> L(t.m() * t.r());
    for (int j = 0; j < t.m(); ++j) {
        const double share = std::floor(t.server_capacity[j] / t.r());
        for (int i = 0; i < t.r(); ++i)
            L[t.L_index(j, i)] = std::min<double>(t.segments[i], share);
    }
    return L;
}

std::vector<double> placement_hottest(const SystemTopology& t)
{
    std::vector<int> order(t.r());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> heat(t.r(), 0.0);
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l)
            heat[i] += t.lambda(i, l);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return heat[a] > heat[b]; });
    std::vector<double> L(t.m() * t.r(), 0.0);
    for (int j = 0; j < t.m(); ++j) {
        double left = t.server_capacity[j];
        for (int i : order)
            if (t.segments[i] <= left) {
                L[t.L_index(j, i)] = t.segments[i];
                left -= t.segments[i];
            }
    }
    return L;
}

std::vector<double> placement_from_vars(const SystemTopology& t, const DecisionVariables& v)
{
    std::vector<double> L(t.m() * t.r());
    for (int j = 0; j < t.m(); ++j) {
        std::vector<std::pair<double, int>> rem;
        double used = 0;
        for (int i = 0; i < t.r(); ++i) {
            const double x = std::clamp(v.L[t.L_index(j, i)], 0.0, double(t.segments[i]));
            const double b = std::floor(x + 1e-9);
            L[t.L_index(j, i)] = b;
            used += b;
            if (x - b >= 0.5 && b < t.segments[i])
                rem.push_back({x - b, i});
        }
        std::stable_sort(rem.begin(), rem.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        double budget = std::floor(t.server_capacity[j] + 1e-9) - used;
        for (const auto& [frac, i] : rem) {
            if (budget < 1)
                break;
            L[t.L_index(j, i)] += 1;
            budget -= 1;
        }
    }
    return L;
}

}  // namespace stallkit
