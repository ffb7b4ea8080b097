#pragma once

#include "mgtcom/sampling.hpp"
#include "mgtcom/tensor.hpp"

#include <cstdint>
#include <vector>

namespace mgtcom {

// Normal-Wishart prior over Gaussian components plus the process
// concentration. Built from the data being clustered so the prior expected
// covariance tracks the dataset covariance (scaled by sigma_scale).
struct NWPrior {
    Eigen::VectorXd mu0;
    double kappa = 1.0;
    double nu = 0.0;  // degrees of freedom, >= d + 1
    Matrix psi0;
    double alpha = 10.0;  // concentration
    double sigma_scale = 0.05;

    int dim() const { return static_cast<int>(mu0.size()); }
    void validate() const;

    // mu0 = column mean of Z; psi0 = sigma_scale * Cov(Z) * max(nu-d-1, 1),
    // ridge-regularized to stay positive definite. nu = d + nu_offset.
    static NWPrior from_data(const Matrix& Z, double alpha, double kappa, double nu_offset,
                             double sigma_scale);
};

// One Gaussian component with its mixing weight and member count.
struct GaussComp {
    double pi = 0.0;
    Eigen::VectorXd mu;
    Matrix sigma;
    std::size_t n = 0;
};

// Mixture state: top-level components, two sub-components per cluster
// (split candidates), hard assignments, and the convergence bookkeeping
// for the converge -> propose -> done loop.
struct ClusterState {
    enum class Phase { Converging, Proposal, Done };

    struct Cluster {
        GaussComp comp;
        GaussComp sub[2];
    };

    std::vector<Cluster> clusters;
    std::vector<int> z;              // per data row
    std::vector<std::uint8_t> subz;  // 0/1 within the assigned cluster
    Phase phase = Phase::Converging;
    std::vector<double> bound_history;  // most recent last, capped at 6

    std::size_t K() const { return clusters.size(); }
    void push_bound(double b);
    void check(std::size_t rows) const;  // invariant assertions
};

// K-means++ seeding plus Lloyd iterations; component parameters from
// cluster scatter; sub-components by principal-axis median split.
ClusterState kmeans_init(const Matrix& Z, int k_init, SamplerRng& rng);

// Hard assignment step: z_i = argmax_k log pi_k + log N(Z_i; mu_k, sigma_k),
// ties to the lower index; sub-assignments updated the same way within the
// assigned cluster.
void e_step(const Matrix& Z, ClusterState& state, const NWPrior& prior);

// Conjugate posterior update per cluster and sub-cluster from the current
// assignments; empty clusters removed; pi_k proportional to N_k + alpha/K.
// A sub-cluster left empty is re-seeded by a principal-axis split.
void m_step(const Matrix& Z, ClusterState& state, const NWPrior& prior);

// Convergence monitor: sum over points of the log responsibility of the
// assigned component, plus Dirichlet and Normal-Wishart normalizer deltas,
// evaluated for the top-level mixture and the sub-cluster mixtures and
// summed.
double lower_bound(const Matrix& Z, const ClusterState& state, const NWPrior& prior);

// Marginal likelihood of rows under the prior (all-in-one-component),
// log domain. Exposed for tests.
double nw_log_marginal(const Matrix& Z, const std::vector<int>& rows, const NWPrior& prior);

// Hard assignment of arbitrary rows to the state's components (same rule
// as e_step, no mutation). Used to label nodes outside the fitted set.
std::vector<int> assign_rows(const Matrix& Z, const ClusterState& state);

// Split cluster k into its two sub-clusters with Metropolis-Hastings
// acceptance on the conjugate marginal-likelihood ratio. Returns true and
// updates state (fresh sub-clusters included) on acceptance.
bool propose_split(const Matrix& Z, ClusterState& state, std::size_t k, const NWPrior& prior,
                   SamplerRng& rng);

// Reciprocal-ratio merge of clusters k1, k2; on acceptance the old
// clusters become the merged cluster's sub-clusters.
bool propose_merge(const Matrix& Z, ClusterState& state, std::size_t k1, std::size_t k2,
                   const NWPrior& prior, SamplerRng& rng);

// Resumable driver: up to steps rounds, each either one EM sweep
// (Converging) or one proposal round (Proposal). Oscillating or stalled
// lower bound moves Converging -> Proposal; a proposal round with no
// acceptance ends at Done. Pass a state to resume, none to start from
// k-means.
ClusterState run_clustering(const Matrix& Z, const NWPrior& prior, int steps, SamplerRng& rng,
                            const ClusterState* resume = nullptr, int k_init = 2);

}  // namespace mgtcom
