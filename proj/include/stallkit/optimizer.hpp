#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "stallkit/bounds.hpp"
#include "stallkit/model.hpp"

namespace stallkit {

enum class Block { pi_tilde, h, w, L, omega };
inline constexpr Block kBlockOrder[] = {Block::pi_tilde, Block::h, Block::w, Block::L, Block::omega};
std::string block_name(Block b);

enum class GradMode { finite_diff, analytic };
enum class ExponentFollow { clamp, scale, refit };

enum class Baseline { none, pea, psp, pec, chf, lru, adaptsize, qlru, klru, krandom };
Baseline parse_baseline(const std::string& name);
std::string baseline_name(Baseline b);

struct OptimizerConfig {
    // proximal weights τ per block
    double tau_pi = 1.0, tau_h = 1.0, tau_w = 1.0, tau_L = 1.0, tau_omega = 1.0;
    double gamma0 = 0.9;
    double gamma_decay = 0.5;
    int max_halvings = 30;
    int max_outer_iters = 20;
    double tol = 1e-4;     // relative objective decrease
    double slack = 1e-9;   // allowed increase per accepted step
    double theta = 1.0;    // weight of the tail term
    double sigma = 10.0;   // σ_s in the tail term
    int inner_iters = 100;
    // surrogate steps per block per outer iteration; a block stops early once
    // its own relative decrease drops below tol
    int block_iters = 1;
    // How h, g follow their caps when another block moves them: clamp only,
    // rescale by the cap ratio, or re-fit per file. The better of the
    // clamped and followed candidate is kept.
    ExponentFollow follow = ExponentFollow::clamp;
    double inner_tol = 1e-12;
    GradMode grad = GradMode::finite_diff;
    double fd_step = 1e-6;
    Baseline baseline = Baseline::none;
    FeasOptions feas;
    Exec exec = Exec::parallel;

    double tau_of(Block b) const;
    void validate() const;
};

struct TraceRow {
    int iteration;
    Block block;
    double objective;  // after the step
    double delta;      // objective decrease
    double wall_ms;
    double gamma;      // accepted step, 0 if the block stayed put
};

struct OptTrace {
    std::vector<double> objective;  // [0] = initial, then one per outer iteration
    std::vector<TraceRow> steps;
    bool converged = false;
    std::vector<std::string> diagnostics;
};

void write_trace_csv(const OptTrace& tr, std::ostream& os);

struct OptResult {
    DecisionVariables vars;
    OptTrace trace;
};

// Objective used by the optimizer: θ Σκ min(1, SDTP) + (1-θ) Σκ MSD.
double objective(const SystemTopology& t, const DecisionVariables& v, const OptimizerConfig& cfg);

// Feasible beyond the linear constraints: loads below 1-δ, exponents inside
// their caps, edge capacity violation within budget.
bool nonlinear_feasible(const SystemTopology& t, const DecisionVariables& v, const FeasOptions& f,
                        std::string* why = nullptr);

// Flat gradient over the block's coordinates, in block_coords order.
std::vector<double> gradient(const SystemTopology& t, const DecisionVariables& v, Block b,
                             const OptimizerConfig& cfg);
std::vector<double> block_coords(const DecisionVariables& v, Block b);
void set_block_coords(DecisionVariables& v, Block b, const std::vector<double>& x);

// Projection of a block onto its linear constraint set (plus exponent box for
// the h block, capacity-violation budget for the ω block).
void project_block(const SystemTopology& t, DecisionVariables& v, Block b, const FeasOptions& f);

// argmin over the projection set of a smooth function, by projected gradient.
struct PgdResult {
    std::vector<double> x;
    int iterations;
    bool converged;
};
PgdResult projected_gradient(const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                             const std::function<void(std::vector<double>&)>& project,
                             std::vector<double> x0, double step, int max_iters, double tol);

// One proximal-linear step on block b. Throws LineSearchFailed if the
// surrogate minimiser differs from v but no step size decreases the objective.
DecisionVariables surrogate_step(const SystemTopology& t, const DecisionVariables& v, Block b,
                                 const OptimizerConfig& cfg, double* gamma_used = nullptr);

// Applies the baseline's frozen values to v and returns the blocks left free.
std::vector<Block> apply_baseline(const SystemTopology& t, DecisionVariables& v, Baseline b);

OptResult alternate(const SystemTopology& t, const DecisionVariables& init,
                    const OptimizerConfig& cfg);

}  // namespace stallkit
