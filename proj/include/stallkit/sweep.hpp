#pragma once

#include <iosfwd>
#include <vector>

#include "stallkit/config.hpp"

namespace stallkit {

struct SweepPoint {
    double value;
    DecisionVariables vars;
    double objective = 0, sdtp = 0, msd = 0;
    int iterations = 0;
    bool converged = true;
    int restarts = 0;  // restarts that improved this point
};

struct SweepOptions {
    bool reoptimize = true;
    // after the warm-started pass, re-optimize each point from whichever other
    // point scores best under its config, while that beats its own optimum
    int refine_passes = 5;
};

// One point per value, in the given order, each warm-started from the
// previous optimum. `init` (if given) seeds the first point. After the
// restart passes each point is replaced by the best of all final points
// under its own config.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                  const std::vector<double>& values, const DecisionVariables* init,
                                  const SweepOptions& opt = {});

}  // namespace stallkit
