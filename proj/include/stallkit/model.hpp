#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stallkit/queueing.hpp"

namespace stallkit {

struct SystemTopology {
    int num_servers = 1;       // m
    int num_edge_routers = 1;  // R
    int num_files = 1;         // r
    std::vector<int> segments;  // L_i
    double tau = 1.0;
    double startup_delay = 0.0;

    std::vector<int> streams_dc;    // d_j
    std::vector<int> streams_edge;  // e_{j,l}, index j*R + l
    std::vector<double> base_rate_dc, shift_dc;      // per j
    std::vector<double> base_rate_edge, shift_edge;  // per (j,l)
    std::vector<double> server_capacity;   // C_j, segments
    std::vector<double> edge_capacity;     // C_{l,e}, seconds of video
    std::vector<double> violation_budget;  // eps_l
    std::vector<double> arrival_rate;      // lambda_{i,l}, index i*R + l

    // Validates invariants and builds the stream index tables. Must be
    // called after the fields are populated and before any other use.
    void finalize();

    int m() const { return num_servers; }
    int R() const { return num_edge_routers; }
    int r() const { return num_files; }

    double lambda(int i, int l) const { return arrival_rate[i * R() + l]; }
    int e_count(int j, int l) const { return streams_edge[j * R() + l]; }
    int d_count(int j) const { return streams_dc[j]; }

    // global stream ids: e-streams 0..E-1, d (and mirrored dbar) streams 0..D-1
    int e_stream(int j, int l, int nu) const { return e_off_[j * R() + l] + nu; }
    int d_stream(int j, int l, int beta) const { return d_off_[j * R() + l] + beta; }
    int num_e_streams() const { return e_total_; }
    int num_d_streams() const { return d_total_; }
    int e_stream_server(int s) const { return e_server_[s]; }
    int e_stream_router(int s) const { return e_router_[s]; }
    int d_stream_server(int s) const { return d_server_[s]; }
    int d_stream_router(int s) const { return d_router_[s]; }

    int pi_index(int i, int j, int l) const { return (i * m() + j) * R() + l; }
    int p_index(int i, int j, int l, int nu) const { return i * e_total_ + e_stream(j, l, nu); }
    int q_index(int i, int j, int l, int beta) const { return i * d_total_ + d_stream(j, l, beta); }
    int L_index(int j, int i) const { return j * r() + i; }
    int omega_index(int i, int l) const { return i * R() + l; }

    // mean arrival rate over all (i,l) pairs
    double mean_lambda() const;

private:
    std::vector<int> e_off_, d_off_;
    std::vector<int> e_server_, e_router_, d_server_, d_router_;
    int e_total_ = 0, d_total_ = 0;
};

template <class T>
struct BasicVars {
    std::vector<T> pi;      // π_{i,j,l}
    std::vector<T> p;       // p_{i,j,ν,l}
    std::vector<T> q;       // q_{i,j,β,l}
    std::vector<T> w_d;     // w^(d)_{j,β,l}
    std::vector<T> w_dbar;  // w^(d̄)_{j,β,l}
    std::vector<T> w_e;     // w^(e)_{j,ν,l}
    std::vector<T> L;       // L_{j,i}
    std::vector<T> omega;   // ω_{i,l}
    std::vector<T> h;       // h_i
    std::vector<T> g;       // g_i

    template <class F>
    void for_each_field(F&& f)
    {
        f(pi); f(p); f(q); f(w_d); f(w_dbar); f(w_e); f(L); f(omega); f(h); f(g);
    }
    template <class F>
    void for_each_field(F&& f) const
    {
        f(pi); f(p); f(q); f(w_d); f(w_dbar); f(w_e); f(L); f(omega); f(h); f(g);
    }
};

using DecisionVariables = BasicVars<double>;

struct StreamParams {
    // per d-stream id (dbar mirrors d)
    std::vector<StreamQueue> d, dbar;
    // per e-stream id
    std::vector<StreamQueue> e;
    std::vector<double> rho_d, rho_dbar, rho_e;
};

struct FeasOptions {
    double margin = 1e-6;  // δ_feas
    double tol = 1e-9;     // slack for equality/budget checks
};

DecisionVariables zero_vars(const SystemTopology& topo);

// First violated DecisionVariables invariant, if any.
std::optional<std::string> check_invariants(const SystemTopology& topo, const DecisionVariables& v,
                                            const FeasOptions& opt = {});

StreamParams derive_stream_params(const SystemTopology& topo, const DecisionVariables& v,
                                  const FeasOptions& opt = {});

// Largest exponent t with t <= α_s - δ and t - Λ_s(B_s(t) - 1) >= δ t over the
// streams reachable by file i; +inf if file i has no traffic.
double mgf_exponent_cap(const SystemTopology& topo, const DecisionVariables& v,
                        const StreamParams& sp, int i, double margin = 1e-6);

// Per-file exponent caps (mgf_exponent_cap for every file).
std::vector<double> exponent_caps(const SystemTopology& topo, const StreamParams& sp,
                                  double margin = 1e-6);

// Linear-constraint projections of single variable blocks, in place.
void project_pi_tilde(const SystemTopology& topo, DecisionVariables& v);
void project_weights(const SystemTopology& topo, DecisionVariables& v);
void project_placement(const SystemTopology& topo, DecisionVariables& v);

DecisionVariables project_feasible(const DecisionVariables& v, const SystemTopology& topo,
                                   const FeasOptions& opt = {});

struct InitOptions {
    double omega = 0.0;
    double h = 0.01;
    double g = 0.01;
};

DecisionVariables uniform_init(const SystemTopology& topo, const InitOptions& opt = {},
                               const FeasOptions& fopt = {});

// Euclidean projections on contiguous ranges.
void project_simplex(double* x, int n, double total = 1.0);
void project_capped_simplex(double* x, int n, double budget = 1.0);
void project_box_budget(double* x, const double* upper, int n, double budget);

}  // namespace stallkit
