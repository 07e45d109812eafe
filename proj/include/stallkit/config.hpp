#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stallkit/model.hpp"
#include "stallkit/optimizer.hpp"
#include "stallkit/policies.hpp"
#include "stallkit/simulator.hpp"

namespace stallkit {

struct InitSpec {
    bool auto_h = false, auto_g = false;
    double h = 0.01, g = 0.01;
    double omega = 0.0;
};

struct ExperimentConfig {
    SystemTopology topo;
    InitSpec init;
    OptimizerConfig opt;
    std::vector<double> sigma_grid = {0, 2, 4, 8, 16, 32};
    PolicyParams policy;
    SimOptions sim;
    std::vector<std::uint64_t> seeds = {1};
    double total_video_s = 0;  // Σ τ L_i, the base of edge capacity ratios
    nlohmann::json raw;
    std::string hash;  // FNV-1a of the canonical JSON dump
};

enum class SweepAxis { arrival_scale, bandwidth_scale, epsilon, capacity_ratio, theta, sigma };
SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis a);

// Copy of base with one sweep coordinate applied. Scales are relative to base.
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis a, double value);

ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

// uniform_init with the configured baseline applied, then the per-file
// exponent search where the config asks for it
DecisionVariables initial_vars(const ExperimentConfig& cfg);

nlohmann::json vars_to_json(const DecisionVariables& v);
DecisionVariables vars_from_json(const nlohmann::json& j, const SystemTopology& t);
void save_vars(const std::string& path, const DecisionVariables& v, const std::string& config_hash);
DecisionVariables load_vars(const std::string& path, const SystemTopology& t);

std::string fnv1a_hex(const std::string& s);

}  // namespace stallkit
