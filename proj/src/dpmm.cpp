#include "mgtcom/dpmm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace mgtcom {

namespace {

constexpr double kLogTiny = -690.0;  // ~log(1e-300)

double safe_log(double x) { return x > 1e-300 ? std::log(x) : kLogTiny; }

// Ridge that keeps covariance/scale matrices positive definite on
// degenerate (collinear or tiny) data.
void regularize_spd(Matrix& s) {
    double d = static_cast<double>(s.rows());
    double eps = 1e-6 * s.trace() / d + 1e-12;
    s.diagonal().array() += eps;
}

double logdet_of_llt(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::LLT<Matrix> safe_llt(const Matrix& sigma, const char* what) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() == Eigen::Success) return llt;
    Matrix fixed = sigma;
    regularize_spd(fixed);
    llt.compute(fixed);
    if (llt.info() != Eigen::Success) {
        // escalate the ridge until the factorization goes through
        double bump = std::max(1e-8, 1e-6 * fixed.trace() / fixed.rows());
        for (int tries = 0; tries < 60 && llt.info() != Eigen::Success; ++tries) {
            fixed.diagonal().array() += bump;
            bump *= 10.0;
            llt.compute(fixed);
        }
        std::cerr << "warning: " << what << " required heavy regularization\n";
    }
    return llt;
}

// log N(Z_i; mu, sigma) for every row, vectorized through one Cholesky.
Eigen::VectorXd log_gauss_rows(const Matrix& Z, const Eigen::VectorXd& mu, const Matrix& sigma) {
    const auto n = Z.rows();
    const double d = static_cast<double>(Z.cols());
    auto llt = safe_llt(sigma, "covariance");
    double logdet = logdet_of_llt(llt);
    Matrix centered = Z.rowwise() - mu.transpose();
    // quad_i = (x_i - mu)^T Sigma^-1 (x_i - mu) via L^-1 (x - mu)
    Matrix w = llt.matrixL().solve(centered.transpose());
    Eigen::VectorXd quad = w.colwise().squaredNorm().transpose();
    return (-0.5 * (d * std::log(2.0 * M_PI) + logdet)) * Eigen::VectorXd::Ones(n) - 0.5 * quad;
}

double lgamma_multi(double a, int d) {
    double out = 0.25 * d * (d - 1) * std::log(M_PI);
    for (int j = 1; j <= d; ++j) out += std::lgamma(a + 0.5 * (1.0 - j));
    return out;
}

// Wishart-side normalizer used in the bound and marginal likelihood:
// (nu d / 2) ln 2 + ln Gamma_d(nu/2) - (nu/2) ln |Psi|.
double log_wishart_c(const Matrix& psi, double nu) {
    int d = static_cast<int>(psi.rows());
    auto llt = safe_llt(psi, "scale matrix");
    double logdet = logdet_of_llt(llt);
    return 0.5 * nu * d * std::log(2.0) + lgamma_multi(0.5 * nu, d) - 0.5 * nu * logdet;
}

struct Posterior {
    double kappa_n, nu_n;
    Eigen::VectorXd mu_n;
    Matrix psi_n;
};

struct Moments {
    std::size_t n = 0;
    Eigen::VectorXd mean;
    Matrix scatter;  // centered
};

Moments moments_of(const Matrix& Z, const std::vector<int>& rows) {
    Moments m;
    m.n = rows.size();
    int d = static_cast<int>(Z.cols());
    if (m.n == 0) {
        m.mean = Eigen::VectorXd::Zero(d);
        m.scatter = Matrix::Zero(d, d);
        return m;
    }
    Matrix x(static_cast<Eigen::Index>(m.n), d);
    for (std::size_t i = 0; i < m.n; ++i) x.row(static_cast<Eigen::Index>(i)) = Z.row(rows[i]);
    m.mean = x.colwise().mean().transpose();
    Matrix c = x.rowwise() - m.mean.transpose();
    m.scatter = c.transpose() * c;
    return m;
}

Posterior posterior_of(const Moments& m, const NWPrior& prior) {
    Posterior p;
    double n = static_cast<double>(m.n);
    p.kappa_n = prior.kappa + n;
    p.nu_n = prior.nu + n;
    p.mu_n = (prior.kappa * prior.mu0 + n * m.mean) / p.kappa_n;
    Eigen::VectorXd dm = m.mean - prior.mu0;
    p.psi_n = prior.psi0 + m.scatter + (prior.kappa * n / p.kappa_n) * (dm * dm.transpose());
    return p;
}

// Point-estimate component from a posterior; count and weight set later.
GaussComp comp_from_posterior(const Posterior& p, int d) {
    GaussComp c;
    c.mu = p.mu_n;
    double denom = std::max(p.nu_n - d - 1.0, 1.0);
    c.sigma = p.psi_n / denom;
    regularize_spd(c.sigma);
    return c;
}

// Median split along the principal axis of the members' covariance.
// Returns one flag per member; both sides nonempty whenever n >= 2.
std::vector<std::uint8_t> principal_split(const Matrix& Z, const std::vector<int>& rows) {
    std::vector<std::uint8_t> side(rows.size(), 0);
    if (rows.size() < 2) return side;
    Moments m = moments_of(Z, rows);
    Matrix cov = m.scatter / static_cast<double>(rows.size());
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    Eigen::VectorXd axis = es.eigenvectors().col(cov.rows() - 1);  // largest eigenvalue
    std::vector<double> proj(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        proj[i] = (Z.row(rows[i]).transpose() - m.mean).dot(axis);
    }
    std::vector<double> sorted = proj;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    double median = sorted[sorted.size() / 2];
    std::size_t hi = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        side[i] = proj[i] >= median ? 1 : 0;
        hi += side[i];
    }
    if (hi == 0 || hi == rows.size()) {
        // all projections equal: fall back to index parity
        for (std::size_t i = 0; i < rows.size(); ++i) side[i] = i % 2;
    }
    return side;
}

std::vector<std::vector<int>> members_by_cluster(const ClusterState& s) {
    std::vector<std::vector<int>> rows(s.K());
    for (std::size_t i = 0; i < s.z.size(); ++i) rows[static_cast<std::size_t>(s.z[i])].push_back(static_cast<int>(i));
    return rows;
}

// Scatter-based parameters used by k-means init and sub-cluster reseeding.
GaussComp ml_comp(const Matrix& Z, const std::vector<int>& rows) {
    Moments m = moments_of(Z, rows);
    GaussComp c;
    c.n = m.n;
    c.mu = m.mean;
    c.sigma = m.n > 0 ? Matrix(m.scatter / static_cast<double>(m.n)) : Matrix::Zero(Z.cols(), Z.cols());
    regularize_spd(c.sigma);
    return c;
}

void reseed_subclusters(const Matrix& Z, ClusterState& s, std::size_t k,
                        const std::vector<int>& rows) {
    auto side = principal_split(Z, rows);
    std::vector<int> left, right;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.subz[static_cast<std::size_t>(rows[i])] = side[i];
        (side[i] ? right : left).push_back(rows[i]);
    }
    s.clusters[k].sub[0] = ml_comp(Z, left);
    s.clusters[k].sub[1] = ml_comp(Z, right);
    double total = static_cast<double>(rows.size());
    s.clusters[k].sub[0].pi = total > 0 ? left.size() / total : 0.5;
    s.clusters[k].sub[1].pi = total > 0 ? right.size() / total : 0.5;
}

double log_dirichlet_b(const std::vector<double>& a) {
    double sum = 0, out = 0;
    for (double x : a) {
        out += std::lgamma(x);
        sum += x;
    }
    return out - std::lgamma(sum);
}

}  // namespace

void NWPrior::validate() const {
    int d = dim();
    if (d <= 0) throw std::invalid_argument("prior: dimension must be positive");
    if (kappa <= 0) throw std::invalid_argument("prior: kappa must be positive");
    if (nu < d + 1) throw std::invalid_argument("prior: nu must be at least d + 1");
    if (alpha <= 0) throw std::invalid_argument("prior: alpha must be positive");
    if (psi0.rows() != d || psi0.cols() != d) throw std::invalid_argument("prior: psi0 shape");
    Eigen::LLT<Matrix> llt(psi0);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("prior: psi0 must be positive definite");
    }
}

NWPrior NWPrior::from_data(const Matrix& Z, double alpha, double kappa, double nu_offset,
                           double sigma_scale) {
    if (Z.rows() < 1) throw std::invalid_argument("prior: need at least one data row");
    int d = static_cast<int>(Z.cols());
    NWPrior p;
    p.alpha = alpha;
    p.kappa = kappa;
    p.nu = d + nu_offset;
    p.sigma_scale = sigma_scale;
    p.mu0 = Z.colwise().mean().transpose();
    Matrix c = Z.rowwise() - p.mu0.transpose();
    Matrix cov = (c.transpose() * c) / static_cast<double>(Z.rows());
    // expected covariance under the prior is psi0 / (nu - d - 1); the
    // factor is floored at 1 so the default nu = d + 1 stays usable
    double factor = std::max(p.nu - d - 1.0, 1.0);
    p.psi0 = sigma_scale * cov * factor;
    // ridge only when the scaled covariance is not safely positive
    // definite, so the exact construction survives where it can
    Eigen::LLT<Matrix> llt(p.psi0);
    bool ok = llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0.0;
    if (!ok) regularize_spd(p.psi0);
    p.validate();
    return p;
}

void ClusterState::push_bound(double b) {
    bound_history.push_back(b);
    if (bound_history.size() > 6) bound_history.erase(bound_history.begin());
}

void ClusterState::check(std::size_t rows) const {
    if (z.size() != rows || subz.size() != rows) {
        throw std::logic_error("cluster state: assignment size mismatch");
    }
    std::vector<std::size_t> counts(K(), 0);
    double pi_sum = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (z[i] < 0 || static_cast<std::size_t>(z[i]) >= K()) {
            throw std::logic_error("cluster state: assignment out of range");
        }
        if (subz[i] > 1) throw std::logic_error("cluster state: bad sub-assignment");
        ++counts[static_cast<std::size_t>(z[i])];
    }
    for (std::size_t k = 0; k < K(); ++k) {
        if (clusters[k].comp.n != counts[k]) {
            throw std::logic_error("cluster state: member count mismatch");
        }
        pi_sum += clusters[k].comp.pi;
    }
    if (K() > 0 && std::abs(pi_sum - 1.0) > 1e-9) {
        throw std::logic_error("cluster state: weights do not sum to 1");
    }
}

ClusterState kmeans_init(const Matrix& Z, int k_init, SamplerRng& rng) {
    const auto n = Z.rows();
    if (k_init < 1) throw std::invalid_argument("k-means: k must be >= 1");
    if (n < k_init) throw std::invalid_argument("k-means: fewer rows than clusters");

    // k-means++ seeding
    std::vector<Eigen::VectorXd> centers;
    centers.push_back(Z.row(static_cast<Eigen::Index>(rng.uniform_index(n))).transpose());
    Eigen::VectorXd d2 = (Z.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k_init) {
        double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0) {
            double target = rng.uniform01() * total, acc = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.uniform_index(n));
        }
        centers.push_back(Z.row(pick).transpose());
        d2 = d2.cwiseMin((Z.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
    }

    // Lloyd iterations
    std::vector<int> z(n, 0);
    for (int it = 0; it < 100; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double bd = (Z.row(i).transpose() - centers[0]).squaredNorm();
            for (std::size_t k = 1; k < centers.size(); ++k) {
                double dd = (Z.row(i).transpose() - centers[k]).squaredNorm();
                if (dd < bd) {
                    bd = dd;
                    best = static_cast<int>(k);
                }
            }
            if (z[i] != best) {
                z[i] = best;
                changed = true;
            }
        }
        std::vector<Eigen::VectorXd> sums(centers.size(), Eigen::VectorXd::Zero(Z.cols()));
        std::vector<std::size_t> counts(centers.size(), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(z[i])] += Z.row(i).transpose();
            ++counts[static_cast<std::size_t>(z[i])];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (counts[k] > 0) centers[k] = sums[k] / static_cast<double>(counts[k]);
        }
        if (!changed && it > 0) break;
    }

    // compact away empty clusters
    std::vector<int> remap(centers.size(), -1);
    std::vector<std::size_t> counts(centers.size(), 0);
    for (int zi : z) ++counts[static_cast<std::size_t>(zi)];
    int next = 0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
        if (counts[k] > 0) remap[k] = next++;
    }
    ClusterState s;
    s.z.resize(n);
    s.subz.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) s.z[i] = remap[static_cast<std::size_t>(z[i])];
    s.clusters.resize(static_cast<std::size_t>(next));

    auto rows = members_by_cluster(s);
    for (std::size_t k = 0; k < s.K(); ++k) {
        s.clusters[k].comp = ml_comp(Z, rows[k]);
        s.clusters[k].comp.pi = static_cast<double>(rows[k].size()) / static_cast<double>(n);
        reseed_subclusters(Z, s, k, rows[k]);
    }
    return s;
}

void e_step(const Matrix& Z, ClusterState& s, const NWPrior&) {
    const auto n = Z.rows();
    const auto K = s.K();
    if (K == 0) throw std::invalid_argument("e-step: no clusters");
    Matrix logp(n, static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
        logp.col(static_cast<Eigen::Index>(k)) =
            log_gauss_rows(Z, s.clusters[k].comp.mu, s.clusters[k].comp.sigma).array() +
            safe_log(s.clusters[k].comp.pi);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (logp(i, static_cast<Eigen::Index>(k)) > logp(i, best)) {
                best = static_cast<int>(k);
            }
        }
        s.z[static_cast<std::size_t>(i)] = best;
    }
    // sub-assignments within each cluster
    auto rows = members_by_cluster(s);
    for (std::size_t k = 0; k < K; ++k) {
        if (rows[k].empty()) continue;
        Matrix x(static_cast<Eigen::Index>(rows[k].size()), Z.cols());
        for (std::size_t i = 0; i < rows[k].size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = Z.row(rows[k][i]);
        }
        const auto& c = s.clusters[k];
        Eigen::VectorXd l0 = log_gauss_rows(x, c.sub[0].mu, c.sub[0].sigma).array() +
                             safe_log(c.sub[0].pi);
        Eigen::VectorXd l1 = log_gauss_rows(x, c.sub[1].mu, c.sub[1].sigma).array() +
                             safe_log(c.sub[1].pi);
        for (std::size_t i = 0; i < rows[k].size(); ++i) {
            auto ii = static_cast<Eigen::Index>(i);
            s.subz[static_cast<std::size_t>(rows[k][i])] = l1(ii) > l0(ii) ? 1 : 0;
        }
    }
}

std::vector<int> assign_rows(const Matrix& Z, const ClusterState& s) {
    const auto n = Z.rows();
    const auto K = s.K();
    if (K == 0) throw std::invalid_argument("assign_rows: no clusters");
    Matrix logp(n, static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
        logp.col(static_cast<Eigen::Index>(k)) =
            log_gauss_rows(Z, s.clusters[k].comp.mu, s.clusters[k].comp.sigma).array() +
            safe_log(s.clusters[k].comp.pi);
    }
    std::vector<int> out(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (logp(i, static_cast<Eigen::Index>(k)) > logp(i, best)) {
                best = static_cast<int>(k);
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

void m_step(const Matrix& Z, ClusterState& s, const NWPrior& prior) {
    const int d = static_cast<int>(Z.cols());
    auto rows = members_by_cluster(s);

    // drop empty clusters, compacting assignments
    std::vector<int> remap(s.K(), -1);
    int next = 0;
    for (std::size_t k = 0; k < s.K(); ++k) {
        if (!rows[k].empty()) remap[k] = next++;
    }
    if (next == 0) throw std::logic_error("m-step: all clusters empty");
    if (static_cast<std::size_t>(next) != s.K()) {
        std::vector<ClusterState::Cluster> kept(static_cast<std::size_t>(next));
        std::vector<std::vector<int>> kept_rows(static_cast<std::size_t>(next));
        for (std::size_t k = 0; k < s.K(); ++k) {
            if (remap[k] >= 0) {
                kept[static_cast<std::size_t>(remap[k])] = std::move(s.clusters[k]);
                kept_rows[static_cast<std::size_t>(remap[k])] = std::move(rows[k]);
            }
        }
        s.clusters = std::move(kept);
        rows = std::move(kept_rows);
        for (auto& zi : s.z) zi = remap[static_cast<std::size_t>(zi)];
    }

    const auto K = s.K();
    double alpha_k = prior.alpha / static_cast<double>(K);
    double pi_norm = 0;
    for (std::size_t k = 0; k < K; ++k) {
        Moments m = moments_of(Z, rows[k]);
        Posterior p = posterior_of(m, prior);
        GaussComp comp = comp_from_posterior(p, d);
        comp.n = m.n;
        comp.pi = static_cast<double>(m.n) + alpha_k;
        pi_norm += comp.pi;
        s.clusters[k].comp = std::move(comp);
    }
    for (std::size_t k = 0; k < K; ++k) s.clusters[k].comp.pi /= pi_norm;

    // sub-cluster posteriors; reseed degenerate splits
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<int> left, right;
        for (int i : rows[k]) {
            (s.subz[static_cast<std::size_t>(i)] ? right : left).push_back(i);
        }
        if (left.empty() || right.empty()) {
            reseed_subclusters(Z, s, k, rows[k]);
            left.clear();
            right.clear();
            for (int i : rows[k]) {
                (s.subz[static_cast<std::size_t>(i)] ? right : left).push_back(i);
            }
        }
        double sub_alpha = prior.alpha / 2.0;
        double norm = static_cast<double>(rows[k].size()) + prior.alpha;
        const std::vector<int>* sides[2] = {&left, &right};
        for (int j = 0; j < 2; ++j) {
            Moments m = moments_of(Z, *sides[j]);
            Posterior p = posterior_of(m, prior);
            GaussComp comp = comp_from_posterior(p, d);
            comp.n = m.n;
            comp.pi = (static_cast<double>(m.n) + sub_alpha) / norm;
            s.clusters[k].sub[j] = std::move(comp);
        }
    }
}

namespace {

// Shared by lower_bound for the top mixture and each sub-mixture: sum of
// assigned-component log responsibilities + Dirichlet normalizer delta +
// Wishart normalizer delta.
double mixture_bound(const Matrix& Z, const std::vector<std::vector<int>>& members,
                     const std::vector<const GaussComp*>& comps, double dirichlet_prior,
                     const NWPrior& prior) {
    const auto K = comps.size();
    double out = 0;

    // log responsibilities of the assigned component, over member union
    std::vector<int> all;
    for (const auto& m : members) all.insert(all.end(), m.begin(), m.end());
    if (!all.empty()) {
        Matrix x(static_cast<Eigen::Index>(all.size()), Z.cols());
        for (std::size_t i = 0; i < all.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = Z.row(all[i]);
        }
        Matrix logits(static_cast<Eigen::Index>(all.size()), static_cast<Eigen::Index>(K));
        for (std::size_t k = 0; k < K; ++k) {
            logits.col(static_cast<Eigen::Index>(k)) =
                log_gauss_rows(x, comps[k]->mu, comps[k]->sigma).array() +
                safe_log(comps[k]->pi);
        }
        // row index -> owning component
        std::vector<int> owner(all.size());
        {
            std::size_t at = 0;
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t j = 0; j < members[k].size(); ++j) owner[at++] = static_cast<int>(k);
            }
        }
        for (std::size_t i = 0; i < all.size(); ++i) {
            auto ii = static_cast<Eigen::Index>(i);
            double mx = logits.row(ii).maxCoeff();
            double lse = mx + std::log((logits.row(ii).array() - mx).exp().sum());
            out += logits(ii, owner[i]) - lse;
        }
    }

    // Dirichlet normalizer delta
    std::vector<double> a_prior(K, dirichlet_prior), a_post(K);
    for (std::size_t k = 0; k < K; ++k) {
        a_post[k] = dirichlet_prior + static_cast<double>(members[k].size());
    }
    out += log_dirichlet_b(a_post) - log_dirichlet_b(a_prior);

    // Wishart normalizer delta
    double c0 = log_wishart_c(prior.psi0, prior.nu);
    for (std::size_t k = 0; k < K; ++k) {
        Posterior p = posterior_of(moments_of(Z, members[k]), prior);
        out += log_wishart_c(p.psi_n, p.nu_n) - c0;
    }
    return out;
}

}  // namespace

double lower_bound(const Matrix& Z, const ClusterState& s, const NWPrior& prior) {
    auto rows = members_by_cluster(s);
    std::vector<const GaussComp*> comps;
    for (const auto& c : s.clusters) comps.push_back(&c.comp);
    double top = mixture_bound(Z, rows, comps, prior.alpha / static_cast<double>(s.K()), prior);

    double sub = 0;
    for (std::size_t k = 0; k < s.K(); ++k) {
        if (rows[k].empty()) continue;
        std::vector<std::vector<int>> halves(2);
        for (int i : rows[k]) {
            halves[s.subz[static_cast<std::size_t>(i)]].push_back(i);
        }
        std::vector<const GaussComp*> sc{&s.clusters[k].sub[0], &s.clusters[k].sub[1]};
        sub += mixture_bound(Z, halves, sc, prior.alpha / 2.0, prior);
    }
    return top + sub;
}

double nw_log_marginal(const Matrix& Z, const std::vector<int>& rows, const NWPrior& prior) {
    if (rows.empty()) return 0.0;
    const int d = static_cast<int>(Z.cols());
    double n = static_cast<double>(rows.size());
    Posterior p = posterior_of(moments_of(Z, rows), prior);
    return -0.5 * n * d * std::log(2.0 * M_PI) + log_wishart_c(p.psi_n, p.nu_n) -
           log_wishart_c(prior.psi0, prior.nu) +
           0.5 * d * (std::log(prior.kappa) - std::log(p.kappa_n));
}

bool propose_split(const Matrix& Z, ClusterState& s, std::size_t k, const NWPrior& prior,
                   SamplerRng& rng) {
    if (k >= s.K()) throw std::out_of_range("split: bad cluster index");
    std::vector<int> all, left, right;
    for (std::size_t i = 0; i < s.z.size(); ++i) {
        if (static_cast<std::size_t>(s.z[i]) == k) {
            all.push_back(static_cast<int>(i));
            (s.subz[i] ? right : left).push_back(static_cast<int>(i));
        }
    }
    if (left.size() < 2 || right.size() < 2) return false;

    double log_h = std::log(prior.alpha) + std::lgamma(static_cast<double>(left.size())) +
                   nw_log_marginal(Z, left, prior) +
                   std::lgamma(static_cast<double>(right.size())) +
                   nw_log_marginal(Z, right, prior) -
                   std::lgamma(static_cast<double>(all.size())) - nw_log_marginal(Z, all, prior);
    double u = std::max(rng.uniform01(), 1e-300);
    if (std::log(u) >= log_h) return false;

    std::size_t knew = s.K();
    s.clusters.emplace_back();
    for (int i : right) s.z[static_cast<std::size_t>(i)] = static_cast<int>(knew);
    reseed_subclusters(Z, s, k, left);
    reseed_subclusters(Z, s, knew, right);
    m_step(Z, s, prior);
    return true;
}

bool propose_merge(const Matrix& Z, ClusterState& s, std::size_t k1, std::size_t k2,
                   const NWPrior& prior, SamplerRng& rng) {
    if (k1 == k2 || k1 >= s.K() || k2 >= s.K()) {
        throw std::out_of_range("merge: bad cluster pair");
    }
    if (k1 > k2) std::swap(k1, k2);
    std::vector<int> a, b, merged;
    for (std::size_t i = 0; i < s.z.size(); ++i) {
        if (static_cast<std::size_t>(s.z[i]) == k1) {
            a.push_back(static_cast<int>(i));
            merged.push_back(static_cast<int>(i));
        } else if (static_cast<std::size_t>(s.z[i]) == k2) {
            b.push_back(static_cast<int>(i));
            merged.push_back(static_cast<int>(i));
        }
    }
    if (a.empty() || b.empty()) return false;

    double log_split = std::log(prior.alpha) + std::lgamma(static_cast<double>(a.size())) +
                       nw_log_marginal(Z, a, prior) + std::lgamma(static_cast<double>(b.size())) +
                       nw_log_marginal(Z, b, prior) -
                       std::lgamma(static_cast<double>(merged.size())) -
                       nw_log_marginal(Z, merged, prior);
    double u = std::max(rng.uniform01(), 1e-300);
    if (std::log(u) >= -log_split) return false;

    // old clusters become the merged cluster's sub-clusters
    for (int i : a) s.subz[static_cast<std::size_t>(i)] = 0;
    for (int i : b) {
        s.subz[static_cast<std::size_t>(i)] = 1;
        s.z[static_cast<std::size_t>(i)] = static_cast<int>(k1);
    }
    s.clusters.erase(s.clusters.begin() + static_cast<std::ptrdiff_t>(k2));
    for (auto& zi : s.z) {
        if (static_cast<std::size_t>(zi) > k2) --zi;
    }
    m_step(Z, s, prior);
    return true;
}

namespace {

bool bound_oscillating(const std::vector<double>& h) {
    if (h.size() < 5) return false;
    double d1 = h[h.size() - 4] - h[h.size() - 5];
    double d2 = h[h.size() - 3] - h[h.size() - 4];
    double d3 = h[h.size() - 2] - h[h.size() - 3];
    double d4 = h[h.size() - 1] - h[h.size() - 2];
    double tol = 1e-6 * std::max(std::abs(h.back()), 1e-12);
    bool alternating = d1 * d2 < 0 && d2 * d3 < 0 && d3 * d4 < 0;
    bool stalled = std::abs(d4) <= tol;
    // a measurable drop means a sub-cluster got reseeded after collapsing —
    // steady EM never decreases the bound, so treat it as the oscillation cue
    bool dropped = d4 < -tol;
    return alternating || stalled || dropped;
}

}  // namespace

ClusterState run_clustering(const Matrix& Z, const NWPrior& prior, int steps, SamplerRng& rng,
                            const ClusterState* resume, int k_init) {
    if (steps < 1) throw std::invalid_argument("clustering: steps must be >= 1");
    prior.validate();
    ClusterState s = resume ? *resume : kmeans_init(Z, k_init, rng);

    for (int step = 0; step < steps; ++step) {
        if (s.phase == ClusterState::Phase::Done) break;
        if (s.phase == ClusterState::Phase::Converging) {
            e_step(Z, s, prior);
            m_step(Z, s, prior);
            s.push_bound(lower_bound(Z, s, prior));
            if (bound_oscillating(s.bound_history)) s.phase = ClusterState::Phase::Proposal;
        } else {  // Proposal
            bool any = false;
            std::size_t k0 = s.K();
            for (std::size_t k = 0; k < k0 && k < s.K(); ++k) {
                if (propose_split(Z, s, k, prior, rng)) any = true;
            }
            if (!any && s.K() >= 2) {
                // candidate pairs: up to 3 nearest-mean partners per cluster
                std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
                for (std::size_t i = 0; i < s.K(); ++i) {
                    std::vector<std::pair<double, std::size_t>> near;
                    for (std::size_t j = 0; j < s.K(); ++j) {
                        if (j == i) continue;
                        near.emplace_back(
                            (s.clusters[i].comp.mu - s.clusters[j].comp.mu).squaredNorm(), j);
                    }
                    std::sort(near.begin(), near.end());
                    for (std::size_t t = 0; t < near.size() && t < 3; ++t) {
                        std::size_t a = std::min(i, near[t].second);
                        std::size_t b = std::max(i, near[t].second);
                        pairs.emplace_back(near[t].first, a, b);
                    }
                }
                std::sort(pairs.begin(), pairs.end());
                pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
                for (const auto& [dist, a, b] : pairs) {
                    (void)dist;
                    if (propose_merge(Z, s, a, b, prior, rng)) {
                        any = true;
                        break;  // indices shifted; stop this round
                    }
                }
            }
            if (any) {
                s.phase = ClusterState::Phase::Converging;
                s.bound_history.clear();
            } else {
                s.phase = ClusterState::Phase::Done;
            }
        }
    }
    return s;
}

}  // namespace mgtcom
