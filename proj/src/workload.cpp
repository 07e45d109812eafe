#include "stallkit/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "stallkit/errors.hpp"

namespace stallkit {

double round_to_chunks(double length_s, double tau)
{
    // guard against 304.0000000001 / 8 style noise before the ceiling
    const double q = length_s / tau;
    const double r = std::round(q);
    return (std::fabs(q - r) < 1e-9 ? r : std::ceil(q)) * tau;
}

Catalog gen_catalog(int r, double shape, double scale, double tau, std::uint64_t seed)
{
    if (!(shape > 1) || !(scale > 0) || !(tau > 0) || r < 0)
        throw ConfigError("gen_catalog needs shape > 1, scale > 0, tau > 0");
    if (scale >= 3600)
        throw ConfigError("gen_catalog: scale must be below the one-hour cut");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Catalog c;
    for (int i = 0; i < r; ++i) {
        double x;
        do {
            x = scale * std::pow(1.0 - U(rng), -1.0 / shape);
        } while (!(x < 3600.0));
        const double len = round_to_chunks(x, tau);
        c.length_s.push_back(len);
        c.segments.push_back(static_cast<int>(std::lround(len / tau)));
    }
    return c;
}

RequestTrace gen_poisson_trace(const SystemTopology& t, double horizon, std::uint64_t seed)
{
    if (!(horizon > 0))
        throw ConfigError("horizon must be > 0");
    std::mt19937_64 rng(seed);
    RequestTrace tr;
    for (int i = 0; i < t.r(); ++i)
        for (int l = 0; l < t.R(); ++l) {
            const double lam = t.lambda(i, l);
            if (!(lam > 0))
                continue;
            std::exponential_distribution<double> gap(lam);
            for (double x = gap(rng); x < horizon; x += gap(rng))
                tr.records.push_back({x, i, l});
        }
    std::sort(tr.records.begin(), tr.records.end(), [](const Request& a, const Request& b) {
        if (a.time != b.time)
            return a.time < b.time;
        return a.file != b.file ? a.file < b.file : a.router < b.router;
    });
    return tr;
}

namespace {

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        const auto a = cell.find_first_not_of(" \t\r");
        const auto b = cell.find_last_not_of(" \t\r");
        out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
    }
    if (!line.empty() && line.back() == ',')
        out.push_back("");
    return out;
}

double to_double(const std::string& s, size_t line, const char* what)
{
    double x = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(x))
        throw ParseError(line, std::string("bad ") + what + " '" + s + "'");
    return x;
}

long to_int(const std::string& s, size_t line, const char* what)
{
    long x = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError(line, std::string("bad ") + what + " '" + s + "'");
    return x;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r") == std::string::npos; }

std::ifstream open(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open '" + path + "'");
    return in;
}

}  // namespace

Catalog load_catalog(const std::string& path, double tau)
{
    std::ifstream in = open(path);
    std::string line;
    size_t n = 0;
    std::vector<std::pair<long, double>> rows;
    while (std::getline(in, line)) {
        ++n;
        if (blank(line))
            continue;
        const auto f = split(line);
        if (n == 1 && !f.empty() && f[0] == "file_id") {
            if (f.size() != 2 || f[1] != "length_s")
                throw ParseError(n, "expected header 'file_id,length_s'");
            continue;
        }
        if (f.size() != 2)
            throw ParseError(n, "expected 2 fields, got " + std::to_string(f.size()));
        const long id = to_int(f[0], n, "file_id");
        const double len = to_double(f[1], n, "length_s");
        if (id < 0)
            throw ParseError(n, "negative file_id");
        if (!(len > 0))
            throw ParseError(n, "length_s must be > 0");
        rows.push_back({id, len});
    }
    std::sort(rows.begin(), rows.end());
    Catalog c;
    for (size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].first != static_cast<long>(k))
            throw ConfigError("catalog '" + path + "' must list file ids 0..r-1 exactly once");
        const double len = round_to_chunks(rows[k].second, tau);
        c.length_s.push_back(len);
        c.segments.push_back(static_cast<int>(std::lround(len / tau)));
    }
    return c;
}

RequestTrace load_trace(const std::string& path, int catalog_size, int num_routers)
{
    std::ifstream in = open(path);
    std::string line;
    size_t n = 0;
    if (!std::getline(in, line))
        throw ParseError(1, "empty trace");
    ++n;
    const auto head = split(line);
    const bool with_len = head.size() == 4 && head[3] == "length_s";
    if (head.size() < 3 || head[0] != "time_s" || head[1] != "file_id" || head[2] != "router_id" ||
        (head.size() == 4 && !with_len) || head.size() > 4)
        throw ParseError(1, "expected header 'time_s,file_id,router_id[,length_s]'");

    RequestTrace tr;
    double last = -INFINITY;
    while (std::getline(in, line)) {
        ++n;
        if (blank(line))
            continue;
        const auto f = split(line);
        if (f.size() != head.size())
            throw ParseError(n, "expected " + std::to_string(head.size()) + " fields, got " +
                                    std::to_string(f.size()));
        const double time = to_double(f[0], n, "time_s");
        const long file = to_int(f[1], n, "file_id");
        const long router = to_int(f[2], n, "router_id");
        if (time < last)
            throw ParseError(n, "timestamp " + f[0] + " earlier than the previous record");
        if (file < 0)
            throw ParseError(n, "negative file_id");
        if (catalog_size > 0 && file >= catalog_size)
            throw UnknownFileId("line " + std::to_string(n) + ": file id " + std::to_string(file) +
                                " not in catalog of " + std::to_string(catalog_size) + " files");
        if (router < 0 || (num_routers > 0 && router >= num_routers))
            throw ParseError(n, "router_id " + f[2] + " out of range");
        if (with_len) {
            const double len = to_double(f[3], n, "length_s");
            if (!(len > 0))
                throw ParseError(n, "length_s must be > 0");
            if (tr.length_s.size() <= static_cast<size_t>(file))
                tr.length_s.resize(file + 1, 0.0);
            double& slot = tr.length_s[file];
            if (slot != 0.0 && slot != len)
                throw ParseError(n, "conflicting length_s for file " + f[1]);
            slot = len;
        }
        last = time;
        tr.records.push_back({time, static_cast<int>(file), static_cast<int>(router)});
    }
    return tr;
}

}  // namespace stallkit
