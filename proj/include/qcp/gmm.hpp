#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>

#include "qcp/common.hpp"

namespace qcp::gmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct GaussianComponent {
    double prior = 1.0;
    VectorXd mean;
    MatrixXd cov;
};

/// Mixture of full-covariance Gaussians over the joint (state, action, Q) space.
/// The layout convention everywhere in this library: state features first,
/// the scalar action encoding next, the Q value last.
struct MixtureModel {
    std::vector<GaussianComponent> components;

    int component_count() const { return static_cast<int>(components.size()); }
    int dim() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }

    /// Checks the structural invariants: priors sum to one, every covariance
    /// is symmetric positive definite.
    void validate() const {
        require(!components.empty(), "MixtureModel: K must be >= 1");
        double prior_sum = 0.0;
        for (const auto& c : components) {
            require(c.prior > 0.0 && c.prior <= 1.0, "MixtureModel: prior out of (0,1]");
            require(c.mean.size() == dim(), "MixtureModel: inconsistent mean dimension");
            require(c.cov.rows() == dim() && c.cov.cols() == dim(),
                    "MixtureModel: inconsistent covariance dimension");
            require((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() < 1e-9,
                    "MixtureModel: covariance not symmetric");
            Eigen::LLT<MatrixXd> llt(c.cov);
            require(llt.info() == Eigen::Success, "MixtureModel: covariance not positive definite");
            prior_sum += c.prior;
        }
        require(std::abs(prior_sum - 1.0) <= 1e-9, "MixtureModel: priors must sum to 1");
    }
};

/// Log density of the mixture at x.
inline double log_density(const MixtureModel& model, const VectorXd& x) {
    const int dim = model.dim();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(model.components.size());
    for (const auto& c : model.components) {
        Eigen::LLT<MatrixXd> llt(c.cov);
        const VectorXd centered = x - c.mean;
        const VectorXd half = llt.matrixL().solve(centered);
        double logdet = 0.0;
        for (int i = 0; i < dim; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
        const double term = std::log(c.prior) -
                            0.5 * (dim * std::log(2.0 * M_PI) + logdet + half.squaredNorm());
        terms.push_back(term);
        best = std::max(best, term);
    }
    if (!std::isfinite(best)) return best;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

// ---------------------------------------------------------------------------
// k-means initialization
// ---------------------------------------------------------------------------

struct KMeansResult {
    MatrixXd centroids;            // K x G
    std::vector<int> assignments;  // one per data row
    double distortion = 0.0;       // sum of squared distances to assigned centroid
};

/// Lloyd's algorithm. Empty clusters are re-seeded from the point farthest
/// from its assigned centroid.
inline KMeansResult kmeans_init(const MatrixXd& data, int k, Rng& rng, int max_iter = 100) {
    const int n = static_cast<int>(data.rows());
    if (n < k) throw insufficient_data_error("kmeans_init: fewer points than clusters");
    require(k >= 1, "kmeans_init: K must be >= 1");

    // Seed from k distinct data points.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    KMeansResult result;
    result.centroids.resize(k, data.cols());
    for (int c = 0; c < k; ++c) result.centroids.row(c) = data.row(order[static_cast<std::size_t>(c)]);
    result.assignments.assign(static_cast<std::size_t>(n), 0);

    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        result.distortion = 0.0;
        std::vector<double> worst_dist(static_cast<std::size_t>(k), -1.0);
        std::vector<int> worst_point(static_cast<std::size_t>(k), -1);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (data.row(i) - result.centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (data.row(i) - result.centroids.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (result.assignments[static_cast<std::size_t>(i)] != best) changed = true;
            result.assignments[static_cast<std::size_t>(i)] = best;
            result.distortion += best_d;
            if (best_d > worst_dist[static_cast<std::size_t>(best)]) {
                worst_dist[static_cast<std::size_t>(best)] = best_d;
                worst_point[static_cast<std::size_t>(best)] = i;
            }
        }

        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        MatrixXd sums = MatrixXd::Zero(k, data.cols());
        for (int i = 0; i < n; ++i) {
            const int c = result.assignments[static_cast<std::size_t>(i)];
            counts[static_cast<std::size_t>(c)]++;
            sums.row(c) += data.row(i);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // Re-seed from the globally farthest point.
                int far_point = -1;
                double far_dist = -1.0;
                for (int c2 = 0; c2 < k; ++c2) {
                    if (worst_point[static_cast<std::size_t>(c2)] >= 0 &&
                        worst_dist[static_cast<std::size_t>(c2)] > far_dist) {
                        far_dist = worst_dist[static_cast<std::size_t>(c2)];
                        far_point = worst_point[static_cast<std::size_t>(c2)];
                    }
                }
                result.centroids.row(c) = data.row(far_point);
                changed = true;
            } else {
                result.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            }
        }
        if (!changed && iter > 0) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Expectation-Maximization
// ---------------------------------------------------------------------------

struct EmOptions {
    double reg = 1e-6;       // added to every covariance diagonal each M-step
    double tol = 1e-6;       // |Δ log-likelihood| stopping threshold
    int max_iter = 200;
    int kmeans_restarts = 5;
};

struct FitResult {
    MixtureModel model;
    std::vector<double> loglik_history;  // one entry per E-step, non-decreasing
};

namespace detail {

/// Fills logp (N x K) with log(prior_k) + log N(x_i; mu_k, cov_k); returns false
/// if any covariance fails its Cholesky factorization.
inline bool component_log_densities(const MatrixXd& data, const MixtureModel& model, MatrixXd& logp) {
    const int n = static_cast<int>(data.rows());
    const int dim = static_cast<int>(data.cols());
    logp.resize(n, model.component_count());
    for (int k = 0; k < model.component_count(); ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        Eigen::LLT<MatrixXd> llt(c.cov);
        if (llt.info() != Eigen::Success) return false;
        double logdet = 0.0;
        for (int i = 0; i < dim; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
        MatrixXd centered = data.rowwise() - c.mean.transpose();
        // L^-1 * centered^T, column per data point.
        MatrixXd half = llt.matrixL().solve(centered.transpose());
        logp.col(k) = -0.5 * (half.colwise().squaredNorm().transpose().array() + dim * std::log(2.0 * M_PI) + logdet) +
                      std::log(c.prior);
    }
    return true;
}

inline double log_sum_exp_rows(const MatrixXd& logp, VectorXd& lse) {
    const int n = static_cast<int>(logp.rows());
    lse.resize(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double m = logp.row(i).maxCoeff();
        const double s = (logp.row(i).array() - m).exp().sum();
        lse(i) = m + std::log(s);
        total += lse(i);
    }
    return total;
}

}  // namespace detail

/// Fits a K-component Gaussian mixture by EM, initialized from the best of
/// several k-means runs. The log-likelihood history is non-decreasing up to
/// numerical slack; every covariance carries a reg * I ridge.
inline FitResult fit_em(const MatrixXd& data, int k, Rng& rng, const EmOptions& opts = {}) {
    const int n = static_cast<int>(data.rows());
    const int dim = static_cast<int>(data.cols());
    if (n < k) throw insufficient_data_error("fit_em: fewer points than components");
    require(k >= 1, "fit_em: K must be >= 1");
    require(opts.reg > 0.0, "fit_em: reg must be positive");

    FitResult result;

    // Degenerate dataset: all points identical. Collapse to one component.
    const VectorXd data_mean = data.colwise().mean();
    const double spread = (data.rowwise() - data_mean.transpose()).cwiseAbs().maxCoeff();
    if (spread == 0.0) {
        GaussianComponent c;
        c.prior = 1.0;
        c.mean = data_mean;
        c.cov = MatrixXd::Identity(dim, dim) * opts.reg;
        result.model.components.push_back(std::move(c));
        MatrixXd logp;
        detail::component_log_densities(data, result.model, logp);
        VectorXd lse;
        result.loglik_history.push_back(detail::log_sum_exp_rows(logp, lse));
        return result;
    }

    KMeansResult best_init;
    double best_distortion = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, opts.kmeans_restarts); ++r) {
        KMeansResult init = kmeans_init(data, k, rng);
        if (init.distortion < best_distortion) {
            best_distortion = init.distortion;
            best_init = std::move(init);
        }
    }

    // Initial parameters from the k-means partition.
    MixtureModel model;
    model.components.resize(static_cast<std::size_t>(k));
    const MatrixXd global_centered = data.rowwise() - data_mean.transpose();
    const MatrixXd global_cov = global_centered.transpose() * global_centered / n;
    for (int c = 0; c < k; ++c) {
        auto& comp = model.components[static_cast<std::size_t>(c)];
        std::vector<int> members;
        for (int i = 0; i < n; ++i) {
            if (best_init.assignments[static_cast<std::size_t>(i)] == c) members.push_back(i);
        }
        comp.prior = std::max(1e-6, static_cast<double>(members.size()) / n);
        comp.mean = best_init.centroids.row(c).transpose();
        if (members.size() >= 2) {
            MatrixXd cov = MatrixXd::Zero(dim, dim);
            for (int i : members) {
                const VectorXd d = data.row(i).transpose() - comp.mean;
                cov.noalias() += d * d.transpose();
            }
            comp.cov = cov / static_cast<double>(members.size());
        } else {
            comp.cov = global_cov;
        }
        comp.cov += MatrixXd::Identity(dim, dim) * opts.reg;
    }
    {
        double prior_sum = 0.0;
        for (const auto& c : model.components) prior_sum += c.prior;
        for (auto& c : model.components) c.prior /= prior_sum;
    }

    MatrixXd logp;
    VectorXd lse;
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        if (!detail::component_log_densities(data, model, logp)) break;
        const double ll = detail::log_sum_exp_rows(logp, lse);
        result.loglik_history.push_back(ll);
        if (std::isfinite(prev_ll) && std::abs(ll - prev_ll) < opts.tol) break;
        prev_ll = ll;

        // Responsibilities.
        MatrixXd resp = (logp.colwise() - lse).array().exp();

        // M-step.
        for (int c = 0; c < k; ++c) {
            const double nk = resp.col(c).sum();
            auto& comp = model.components[static_cast<std::size_t>(c)];
            if (nk < 1e-10) continue;  // leave a starved component untouched
            comp.prior = nk / n;
            comp.mean = (resp.col(c).transpose() * data).transpose() / nk;
            MatrixXd centered = data.rowwise() - comp.mean.transpose();
            MatrixXd weighted = centered.array().colwise() * resp.col(c).array();
            comp.cov = weighted.transpose() * centered / nk;
            comp.cov += MatrixXd::Identity(dim, dim) * opts.reg;
        }
        double prior_sum = 0.0;
        for (const auto& c : model.components) prior_sum += c.prior;
        for (auto& c : model.components) c.prior /= prior_sum;
    }

    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------
// BIC model selection
// ---------------------------------------------------------------------------

/// Free parameters of a K-component full-covariance mixture in G dimensions.
inline long bic_parameter_count(int k, int dim) {
    return static_cast<long>(k - 1) + static_cast<long>(k) * dim +
           static_cast<long>(k) * dim * (dim + 1) / 2;
}

/// Fits every candidate K on a training split and keeps the model with the
/// lowest BIC on the held-out split. Candidates that cannot be fit (too few
/// training points for their parameter count) are skipped.
inline FitResult select_k(const MatrixXd& data, const std::vector<int>& candidates,
                          double test_fraction, Rng& rng, const EmOptions& opts = {}) {
    require(!candidates.empty(), "select_k: no candidates");
    require(test_fraction > 0.0 && test_fraction < 1.0, "select_k: test_fraction in (0,1) required");
    const int n = static_cast<int>(data.rows());
    const int dim = static_cast<int>(data.cols());
    const int n_test = std::max(1, static_cast<int>(std::lround(n * test_fraction)));
    const int n_train = n - n_test;
    if (n_train < 1) throw insufficient_data_error("select_k: not enough data to split");

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    MatrixXd train(n_train, dim), test(n_test, dim);
    for (int i = 0; i < n_train; ++i) train.row(i) = data.row(order[static_cast<std::size_t>(i)]);
    for (int i = 0; i < n_test; ++i) test.row(i) = data.row(order[static_cast<std::size_t>(n_train + i)]);

    std::optional<FitResult> best;
    double best_bic = std::numeric_limits<double>::infinity();
    for (int k : candidates) {
        if (n_train < k || n_train < bic_parameter_count(k, dim)) continue;
        FitResult fit;
        try {
            fit = fit_em(train, k, rng, opts);
        } catch (const insufficient_data_error&) {
            continue;
        }
        double ll_test = 0.0;
        for (int i = 0; i < n_test; ++i) {
            ll_test += log_density(fit.model, test.row(i).transpose());
        }
        const double bic = -2.0 * ll_test + bic_parameter_count(k, dim) * std::log(static_cast<double>(n_test));
        if (bic < best_bic) {
            best_bic = bic;
            best = std::move(fit);
        }
    }
    if (!best) throw insufficient_data_error("select_k: every candidate failed");
    return std::move(*best);
}

// ---------------------------------------------------------------------------
// Gaussian Mixture Regression
// ---------------------------------------------------------------------------

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
};

/// Conditional view of a mixture: the last dimension is the regressed value,
/// everything before it is the (state, action) query block. Precomputes the
/// per-component inverse input covariance, regression vector and conditional
/// variance so that queries are cheap.
class GmrPredictor {
public:
    explicit GmrPredictor(MixtureModel model) : model_(std::move(model)) {
        model_.validate();
        const int g = model_.dim();
        require(g >= 2, "GmrPredictor: need at least one input dimension plus the value");
        input_dim_ = g - 1;
        for (const auto& c : model_.components) {
            Pre p;
            const MatrixXd cov_xx = c.cov.topLeftCorner(input_dim_, input_dim_);
            const VectorXd cov_xq = c.cov.topRightCorner(input_dim_, 1);
            Eigen::LLT<MatrixXd> llt(cov_xx);
            require(llt.info() == Eigen::Success, "GmrPredictor: input covariance block not SPD");
            p.inv_xx = llt.solve(MatrixXd::Identity(input_dim_, input_dim_));
            double logdet = 0.0;
            for (int i = 0; i < input_dim_; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
            p.log_norm = std::log(c.prior) - 0.5 * (input_dim_ * std::log(2.0 * M_PI) + logdet);
            p.regression = p.inv_xx * cov_xq;
            p.cond_var = c.cov(input_dim_, input_dim_) - cov_xq.dot(p.regression);
            if (p.cond_var < 0.0) p.cond_var = 0.0;
            p.mean_x = c.mean.head(input_dim_);
            p.mean_q = c.mean(input_dim_);
            p.quad_aa = p.inv_xx(input_dim_ - 1, input_dim_ - 1);
            pre_.push_back(std::move(p));
        }
    }

    const MixtureModel& model() const { return model_; }
    int input_dim() const { return input_dim_; }

    /// Conditional mean and variance of the value given the full input query.
    Prediction predict(const VectorXd& query) const {
        require(query.size() == input_dim_, "predict: query dimension mismatch");
        const int k = static_cast<int>(pre_.size());
        std::vector<double> logw(static_cast<std::size_t>(k));
        std::vector<double> cond_mean(static_cast<std::size_t>(k));
        double max_logw = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const auto& p = pre_[static_cast<std::size_t>(c)];
            const VectorXd v = query - p.mean_x;
            logw[static_cast<std::size_t>(c)] = p.log_norm - 0.5 * v.dot(p.inv_xx * v);
            cond_mean[static_cast<std::size_t>(c)] = p.mean_q + p.regression.dot(v);
            max_logw = std::max(max_logw, logw[static_cast<std::size_t>(c)]);
        }
        return combine(logw, cond_mean, max_logw);
    }

    /// Evaluates the regression at [state; a] for every a in 0..n_actions-1.
    /// The action occupies the last input coordinate, so the per-component
    /// quadratic form is a quadratic polynomial in a and the whole sweep
    /// needs only one matrix-vector product per component.
    std::vector<Prediction> predict_actions(const std::vector<double>& state, int n_actions) const {
        require(static_cast<int>(state.size()) == input_dim_ - 1,
                "predict_actions: state dimension mismatch");
        require(n_actions >= 1, "predict_actions: need at least one action");
        const int k = static_cast<int>(pre_.size());
        std::vector<Prediction> out(static_cast<std::size_t>(n_actions));
        std::vector<double> q0(static_cast<std::size_t>(k)), q1(static_cast<std::size_t>(k));
        std::vector<double> m0(static_cast<std::size_t>(k));
        std::vector<double> logw(static_cast<std::size_t>(k)), cond_mean(static_cast<std::size_t>(k));
        VectorXd v0(input_dim_);
        for (int c = 0; c < k; ++c) {
            const auto& p = pre_[static_cast<std::size_t>(c)];
            for (int i = 0; i < input_dim_ - 1; ++i) v0(i) = state[static_cast<std::size_t>(i)] - p.mean_x(i);
            v0(input_dim_ - 1) = -p.mean_x(input_dim_ - 1);
            const VectorXd pv = p.inv_xx * v0;
            q0[static_cast<std::size_t>(c)] = v0.dot(pv);
            q1[static_cast<std::size_t>(c)] = pv(input_dim_ - 1);
            m0[static_cast<std::size_t>(c)] = p.mean_q + p.regression.dot(v0);
        }
        for (int a = 0; a < n_actions; ++a) {
            const double av = static_cast<double>(a);
            double max_logw = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const auto& p = pre_[static_cast<std::size_t>(c)];
                const double quad = q0[static_cast<std::size_t>(c)] + 2.0 * av * q1[static_cast<std::size_t>(c)] +
                                    av * av * p.quad_aa;
                logw[static_cast<std::size_t>(c)] = p.log_norm - 0.5 * quad;
                cond_mean[static_cast<std::size_t>(c)] =
                    m0[static_cast<std::size_t>(c)] + av * p.regression(input_dim_ - 1);
                max_logw = std::max(max_logw, logw[static_cast<std::size_t>(c)]);
            }
            out[static_cast<std::size_t>(a)] = combine(logw, cond_mean, max_logw);
        }
        return out;
    }

private:
    struct Pre {
        MatrixXd inv_xx;
        VectorXd regression;  // inv_xx * cov_xq
        VectorXd mean_x;
        double mean_q = 0.0;
        double cond_var = 0.0;
        double log_norm = 0.0;  // log prior + Gaussian normalizer over the input block
        double quad_aa = 0.0;   // e_a^T inv_xx e_a, filled after inv_xx exists
    };

    Prediction combine(const std::vector<double>& logw, const std::vector<double>& cond_mean,
                       double max_logw) const {
        Prediction out;
        if (!std::isfinite(max_logw)) {
            // Query is infinitely unlikely under every component; fall back to
            // the prior-weighted blend.
            double mean = 0.0, second = 0.0;
            for (std::size_t c = 0; c < pre_.size(); ++c) {
                const double w = model_.components[c].prior;
                mean += w * cond_mean[c];
                second += w * (pre_[c].cond_var + cond_mean[c] * cond_mean[c]);
            }
            out.mean = mean;
            out.variance = std::max(0.0, second - mean * mean);
            return out;
        }
        double total = 0.0, mean = 0.0, second = 0.0;
        for (std::size_t c = 0; c < pre_.size(); ++c) {
            const double w = std::exp(logw[c] - max_logw);
            total += w;
            mean += w * cond_mean[c];
            second += w * (pre_[c].cond_var + cond_mean[c] * cond_mean[c]);
        }
        mean /= total;
        second /= total;
        const double raw_var = second - mean * mean;
        if (raw_var < -1e-6) throw std::logic_error("GmrPredictor: conditional variance underflow");
        out.mean = mean;
        out.variance = std::max(0.0, raw_var);
        return out;
    }

    MixtureModel model_;
    int input_dim_ = 0;
    std::vector<Pre> pre_;
};

/// One-shot regression query against a model; builds the predictor internally.
inline Prediction predict(const MixtureModel& model, const VectorXd& query) {
    return GmrPredictor(model).predict(query);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Plain-text snapshot: header line, then per component the prior, the mean
/// and the row-major covariance. Doubles are printed with enough digits to
/// round-trip exactly.
inline void save_model(const MixtureModel& model, std::ostream& os) {
    char buf[64];
    os << "qcp-gmm 1\n" << model.component_count() << ' ' << model.dim() << '\n';
    for (const auto& c : model.components) {
        std::snprintf(buf, sizeof(buf), "%.17g", c.prior);
        os << buf << '\n';
        for (int i = 0; i < model.dim(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", c.mean(i));
            os << buf << (i + 1 == model.dim() ? '\n' : ' ');
        }
        for (int r = 0; r < model.dim(); ++r) {
            for (int col = 0; col < model.dim(); ++col) {
                std::snprintf(buf, sizeof(buf), "%.17g", c.cov(r, col));
                os << buf << (col + 1 == model.dim() ? '\n' : ' ');
            }
        }
    }
}

inline MixtureModel load_model(std::istream& is) {
    std::string magic;
    int version = 0;
    is >> magic >> version;
    require(magic == "qcp-gmm" && version == 1, "load_model: unrecognized header");
    int k = 0, dim = 0;
    is >> k >> dim;
    require(k >= 1 && dim >= 1, "load_model: bad dimensions");
    MixtureModel model;
    model.components.resize(static_cast<std::size_t>(k));
    for (auto& c : model.components) {
        is >> c.prior;
        c.mean.resize(dim);
        for (int i = 0; i < dim; ++i) is >> c.mean(i);
        c.cov.resize(dim, dim);
        for (int r = 0; r < dim; ++r)
            for (int col = 0; col < dim; ++col) is >> c.cov(r, col);
    }
    require(static_cast<bool>(is), "load_model: truncated input");
    return model;
}

}  // namespace qcp::gmm
