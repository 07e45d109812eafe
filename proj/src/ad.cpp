#include "stallkit/ad.hpp"

namespace stallkit::ad {

Tape*& Tape::active()
{
    thread_local Tape* t = nullptr;
    return t;
}

std::vector<double> Tape::adjoints(int out) const
{
    std::vector<double> adj(nodes.size(), 0.0);
    if (out < 0)
        return adj;
    adj[out] = 1.0;
    for (int k = out; k >= 0; --k) {
        const double g = adj[k];
        if (g == 0.0)
            continue;
        const Node& n = nodes[k];
        if (n.a >= 0)
            adj[n.a] += g * n.da;
        if (n.b >= 0)
            adj[n.b] += g * n.db;
    }
    return adj;
}

TapeScope::TapeScope() : prev_(Tape::active())
{
    tape_.nodes.reserve(1 << 16);
    Tape::active() = &tape_;
}

TapeScope::~TapeScope() { Tape::active() = prev_; }

}  // namespace stallkit::ad
