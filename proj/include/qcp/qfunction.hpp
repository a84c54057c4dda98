#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <unordered_map>

#include "qcp/game.hpp"
#include "qcp/gmm.hpp"

namespace qcp {

/// One regression target produced by a search episode, together with the
/// transition that generated it.
struct Sample {
    GameState state;
    int action_id = 0;
    double q_target = 0.0;
    double reward = 0.0;
    GameState next_state;
};

/// Append-only pool of samples for a single agent. Every aggregate call
/// records an offset mark, so the batch boundaries remain recoverable.
class AggregatedDataset {
public:
    void aggregate(const std::vector<Sample>& batch) {
        samples_.insert(samples_.end(), batch.begin(), batch.end());
        marks_.push_back(samples_.size());
    }

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    const std::vector<Sample>& samples() const { return samples_; }
    std::vector<Sample>& samples_mutable() { return samples_; }
    const std::vector<std::size_t>& marks() const { return marks_; }

    /// Rows are [state..., action_id, q_target].
    gmm::MatrixXd to_matrix(int feature_count) const {
        gmm::MatrixXd data(static_cast<long>(samples_.size()), feature_count + 2);
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const Sample& s = samples_[i];
            require(static_cast<int>(s.state.features.size()) == feature_count,
                    "AggregatedDataset: sample feature size mismatch");
            for (int f = 0; f < feature_count; ++f) {
                data(static_cast<long>(i), f) = s.state.features[static_cast<std::size_t>(f)];
            }
            data(static_cast<long>(i), feature_count) = static_cast<double>(s.action_id);
            data(static_cast<long>(i), feature_count + 1) = s.q_target;
        }
        return data;
    }

private:
    std::vector<Sample> samples_;
    std::vector<std::size_t> marks_;
};

struct QFitOptions {
    int components = 5;                 // fixed mixture size unless select_components
    bool select_components = false;     // pick K by held-out BIC instead
    std::vector<int> candidates = {2, 3, 4, 5, 6, 7, 8};
    double test_fraction = 0.25;
    double reg_scale = 1e-6;            // ridge relative to the data variance scale
    double tol = 1e-6;
    int max_iter = 200;
    int kmeans_restarts = 5;
    int min_sample_multiplier = 3;      // refit needs multiplier * K * (G+1) samples
};

/// Minimum dataset size before a fit is attempted.
inline std::size_t min_fit_samples(const QFitOptions& opts, int feature_count) {
    const int g = feature_count + 2;
    int k = opts.components;
    if (opts.select_components) {
        k = *std::min_element(opts.candidates.begin(), opts.candidates.end());
    }
    return static_cast<std::size_t>(opts.min_sample_multiplier) * static_cast<std::size_t>(k) *
           static_cast<std::size_t>(g + 1);
}

namespace detail {

struct StateKeyHash {
    std::size_t operator()(const std::vector<double>& v) const {
        return static_cast<std::size_t>(feature_hash(v));
    }
};

}  // namespace detail

/// Q(s, a) estimator backed by Gaussian mixture regression over rows
/// [state..., action, q]. Before the first successful fit it reports a flat
/// prior: mean 0 and variance sigma0 for every query. Per-state predictions
/// across all actions are memoized; the cache is dropped on refit.
class QApproximator {
public:
    QApproximator(int feature_count, int action_count, double sigma0 = 1.0)
        : feature_count_(feature_count), action_count_(action_count), sigma0_(sigma0) {
        require(feature_count >= 1, "QApproximator: feature_count must be >= 1");
        require(action_count >= 1, "QApproximator: action_count must be >= 1");
        require(sigma0 > 0.0, "QApproximator: sigma0 must be positive");
    }

    QApproximator(const QApproximator& other)
        : feature_count_(other.feature_count_),
          action_count_(other.action_count_),
          sigma0_(other.sigma0_),
          predictor_(other.predictor_) {}

    QApproximator& operator=(const QApproximator& other) {
        feature_count_ = other.feature_count_;
        action_count_ = other.action_count_;
        sigma0_ = other.sigma0_;
        predictor_ = other.predictor_;
        cache_.clear();
        return *this;
    }

    int feature_count() const { return feature_count_; }
    int action_count() const { return action_count_; }
    bool fitted() const { return predictor_.has_value(); }

    gmm::Prediction predict(const std::vector<double>& state, int action_id) const {
        require(action_id >= 0 && action_id < action_count_, "predict: action out of range");
        return predict_all(state)[static_cast<std::size_t>(action_id)];
    }

    /// Predictions for every action at this state, cached by exact feature match.
    const std::vector<gmm::Prediction>& predict_all(const std::vector<double>& state) const {
        require(static_cast<int>(state.size()) == feature_count_, "predict_all: state size mismatch");
        auto it = cache_.find(state);
        if (it != cache_.end()) return it->second;
        std::vector<gmm::Prediction> preds;
        if (predictor_) {
            preds = predictor_->predict_actions(state, action_count_);
        } else {
            preds.assign(static_cast<std::size_t>(action_count_), gmm::Prediction{0.0, sigma0_});
        }
        if (cache_.size() >= kMaxCacheEntries) cache_.clear();
        return cache_.emplace(state, std::move(preds)).first->second;
    }

    double max_value(const std::vector<double>& state) const {
        const auto& preds = predict_all(state);
        double best = preds.front().mean;
        for (const auto& p : preds) best = std::max(best, p.mean);
        return best;
    }

    int best_action(const std::vector<double>& state) const {
        const auto& preds = predict_all(state);
        int best = 0;
        for (int a = 1; a < action_count_; ++a) {
            if (preds[static_cast<std::size_t>(a)].mean > preds[static_cast<std::size_t>(best)].mean) best = a;
        }
        return best;
    }

    /// Fits the mixture to the aggregated samples. Undersized datasets and
    /// fit failures degrade to the flat-prior state instead of aborting;
    /// failures are reported on `warn` when provided.
    bool refit(const AggregatedDataset& dataset, const QFitOptions& opts, Rng& rng,
               std::ostream* warn = nullptr) {
        if (dataset.size() < min_fit_samples(opts, feature_count_)) {
            predictor_.reset();
            cache_.clear();
            return false;
        }
        const gmm::MatrixXd data = dataset.to_matrix(feature_count_);

        gmm::EmOptions em;
        em.tol = opts.tol;
        em.max_iter = opts.max_iter;
        em.kmeans_restarts = opts.kmeans_restarts;
        const gmm::VectorXd col_mean = data.colwise().mean();
        const double mean_var =
            (data.rowwise() - col_mean.transpose()).array().square().colwise().mean().mean();
        em.reg = opts.reg_scale * std::max(1.0, mean_var);

        try {
            gmm::FitResult fit;
            if (opts.select_components) {
                fit = gmm::select_k(data, opts.candidates, opts.test_fraction, rng, em);
            } else {
                fit = gmm::fit_em(data, opts.components, rng, em);
            }
            predictor_.emplace(std::move(fit.model));
            cache_.clear();
            return true;
        } catch (const std::exception& e) {
            if (warn) *warn << "refit degraded to flat prior: " << e.what() << '\n';
            predictor_.reset();
            cache_.clear();
            return false;
        }
    }

    const gmm::MixtureModel* model() const { return predictor_ ? &predictor_->model() : nullptr; }

    /// Installs an externally fitted mixture (dimension = features + action + value).
    void set_model(const gmm::MixtureModel& model) {
        require(model.dim() == feature_count_ + 2, "set_model: dimension mismatch");
        predictor_.emplace(model);
        cache_.clear();
    }

    void save(std::ostream& os) const {
        os << "qcp-qfn 1\n" << feature_count_ << ' ' << action_count_ << ' ';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", sigma0_);
        os << buf << ' ' << (predictor_ ? 1 : 0) << '\n';
        if (predictor_) gmm::save_model(predictor_->model(), os);
    }

    static QApproximator load(std::istream& is) {
        std::string magic;
        int version = 0;
        is >> magic >> version;
        require(magic == "qcp-qfn" && version == 1, "QApproximator::load: unrecognized header");
        int features = 0, actions = 0, has_model = 0;
        double sigma0 = 1.0;
        is >> features >> actions >> sigma0 >> has_model;
        require(static_cast<bool>(is), "QApproximator::load: truncated input");
        QApproximator q(features, actions, sigma0);
        if (has_model) q.predictor_.emplace(gmm::load_model(is));
        return q;
    }

private:
    static constexpr std::size_t kMaxCacheEntries = 1u << 20;

    int feature_count_;
    int action_count_;
    double sigma0_;
    std::optional<gmm::GmrPredictor> predictor_;
    mutable std::unordered_map<std::vector<double>, std::vector<gmm::Prediction>, detail::StateKeyHash>
        cache_;
};

/// One-step temporal-difference regression target:
///   q = Q(s,a) + alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))
/// with the bootstrap term dropped at terminal states.
inline double q_target(const QApproximator& qhat, const std::vector<double>& state, int action_id,
                       double reward, const std::vector<double>& next_state, bool next_terminal,
                       double alpha, double gamma) {
    const double current = qhat.predict(state, action_id).mean;
    const double bootstrap = next_terminal ? 0.0 : qhat.max_value(next_state);
    return current + alpha * (reward + gamma * bootstrap - current);
}

/// Recomputes every stored target with the one-step update against the given
/// approximator. Each sample keeps its observed transition (r, s'), so older
/// targets track the current value estimates instead of staying frozen at the
/// values they were collected under; repeated refresh-and-fit rounds move the
/// whole dataset toward the update rule's fixed point.
inline void refresh_q_targets(AggregatedDataset& data, const QApproximator& qhat, double alpha,
                              double gamma) {
    for (Sample& s : data.samples_mutable()) {
        s.q_target = q_target(qhat, s.state.features, s.action_id, s.reward,
                              s.next_state.features, s.next_state.terminal, alpha, gamma);
    }
}

/// Uniformly random choice among the exactly-tied best actions. With an
/// unfitted approximator every action ties, so this degenerates to the
/// uniform random policy.
inline int greedy_action(const QApproximator& qhat, const GameState& state, Rng& rng) {
    const auto& preds = qhat.predict_all(state.features);
    double best = preds.front().mean;
    for (const auto& p : preds) best = std::max(best, p.mean);
    int ties = 0;
    int chosen = 0;
    for (int a = 0; a < qhat.action_count(); ++a) {
        if (preds[static_cast<std::size_t>(a)].mean == best) {
            ++ties;
            if (uniform_index(rng, ties) == 0) chosen = a;
        }
    }
    return chosen;
}

/// Greedy choice with a state-hash-seeded tie-break: the same state always
/// resolves to the same action, so the induced policy is a fixed function of
/// the state. Used to model the other agents' frozen policies inside a search,
/// where per-visit re-randomization would turn them into stochastic policies.
inline int greedy_action_deterministic(const QApproximator& qhat, const GameState& state) {
    const auto& preds = qhat.predict_all(state.features);
    double best = preds.front().mean;
    for (const auto& p : preds) best = std::max(best, p.mean);
    std::vector<int> ties;
    for (int a = 0; a < qhat.action_count(); ++a) {
        if (preds[static_cast<std::size_t>(a)].mean == best) ties.push_back(a);
    }
    Rng tie_rng(mix_seed(feature_hash(state.features), 0x9e3779b97f4a7c15ULL));
    return ties[static_cast<std::size_t>(uniform_index(tie_rng, static_cast<int>(ties.size())))];
}

inline int epsilon_greedy_action(const QApproximator& qhat, const GameState& state, double epsilon,
                                 Rng& rng) {
    if (uniform_unit(rng) < epsilon) return uniform_index(rng, qhat.action_count());
    return greedy_action(qhat, state, rng);
}

inline Policy make_greedy_policy(const QApproximator& qhat) {
    return [&qhat](const GameState& state, Rng& rng) { return greedy_action(qhat, state, rng); };
}

inline Policy make_epsilon_greedy_policy(const QApproximator& qhat, double epsilon) {
    return [&qhat, epsilon](const GameState& state, Rng& rng) {
        return epsilon_greedy_action(qhat, state, epsilon, rng);
    };
}

// ---------------------------------------------------------------------------
// Dataset snapshots
// ---------------------------------------------------------------------------

/// Text dump for offline inspection. One sample per line: state features,
/// action id, q_target, reward, next-state features. Terminal flags are not
/// stored; a reloaded dataset is for analysis, not resumed training.
inline void save_dataset(const AggregatedDataset& dataset, int feature_count, std::ostream& os) {
    os << "qcp-dataset 1\n" << dataset.size() << ' ' << feature_count << '\n';
    char buf[64];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (const Sample& s : dataset.samples()) {
        require(static_cast<int>(s.state.features.size()) == feature_count &&
                    static_cast<int>(s.next_state.features.size()) == feature_count,
                "save_dataset: sample feature size mismatch");
        for (double f : s.state.features) {
            emit(f);
            os << ' ';
        }
        os << s.action_id << ' ';
        emit(s.q_target);
        os << ' ';
        emit(s.reward);
        for (double f : s.next_state.features) {
            os << ' ';
            emit(f);
        }
        os << '\n';
    }
}

inline AggregatedDataset load_dataset(std::istream& is) {
    std::string magic;
    int version = 0;
    is >> magic >> version;
    require(magic == "qcp-dataset" && version == 1, "load_dataset: unrecognized header");
    std::size_t count = 0;
    int feature_count = 0;
    is >> count >> feature_count;
    require(static_cast<bool>(is) && feature_count >= 1, "load_dataset: bad dimensions");
    std::vector<Sample> batch(count);
    for (Sample& s : batch) {
        s.state.features.resize(static_cast<std::size_t>(feature_count));
        s.next_state.features.resize(static_cast<std::size_t>(feature_count));
        for (double& f : s.state.features) is >> f;
        is >> s.action_id >> s.q_target >> s.reward;
        for (double& f : s.next_state.features) is >> f;
        require(static_cast<bool>(is), "load_dataset: truncated row");
    }
    AggregatedDataset out;
    out.aggregate(batch);
    return out;
}

}  // namespace qcp
