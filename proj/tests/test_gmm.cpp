#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "oracle.hpp"
#include "qcp/gmm.hpp"

using namespace qcp;
using namespace qcp::testing;
using gmm::MatrixXd;
using gmm::VectorXd;

namespace {

/// Draws n points from N(mean, cov) via the Cholesky factor.
MatrixXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, int n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::LLT<MatrixXd> llt(cov);
    const MatrixXd l = llt.matrixL();
    MatrixXd out(n, mean.size());
    VectorXd z(mean.size());
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < mean.size(); ++d) z(d) = normal(rng);
        out.row(i) = (mean + l * z).transpose();
    }
    return out;
}

/// Draws a full joint sample from the mixture.
VectorXd sample_from(const gmm::MixtureModel& model, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    std::size_t pick = model.components.size() - 1;
    for (std::size_t c = 0; c < model.components.size(); ++c) {
        if (u < model.components[c].prior) {
            pick = c;
            break;
        }
        u -= model.components[c].prior;
    }
    const auto& comp = model.components[pick];
    return sample_gaussian(comp.mean, comp.cov, 1, rng).row(0).transpose();
}

}  // namespace

TEST_CASE("kmeans_init basics") {
    Rng rng(11);

    SECTION("K=1 centroid is the sample mean") {
        const MatrixXd data = sample_gaussian(VectorXd::Constant(3, 2.0),
                                              MatrixXd::Identity(3, 3), 50, rng);
        const gmm::KMeansResult r = gmm::kmeans_init(data, 1, rng);
        const VectorXd mean = data.colwise().mean();
        CHECK((r.centroids.row(0).transpose() - mean).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("two well-separated clouds are split with pure assignments") {
        MatrixXd data(60, 2);
        data.topRows(30) = sample_gaussian(VectorXd::Constant(2, 0.0), MatrixXd::Identity(2, 2), 30, rng);
        data.bottomRows(30) =
            sample_gaussian(VectorXd::Constant(2, 100.0), MatrixXd::Identity(2, 2), 30, rng);
        const gmm::KMeansResult r = gmm::kmeans_init(data, 2, rng);
        // Each centroid lies inside one cloud's bounding box and assignments
        // are pure: all first-half rows share one label, the rest the other.
        const int first = r.assignments[0];
        for (int i = 0; i < 30; ++i) CHECK(r.assignments[static_cast<std::size_t>(i)] == first);
        for (int i = 30; i < 60; ++i) CHECK(r.assignments[static_cast<std::size_t>(i)] == 1 - first);
        for (int c = 0; c < 2; ++c) {
            const double x = r.centroids(c, 0);
            CHECK((x < 50.0) == (c == first));
        }
    }

    SECTION("K = |data| gives zero distortion") {
        const MatrixXd data = sample_gaussian(VectorXd::Zero(2), MatrixXd::Identity(2, 2), 8, rng);
        const gmm::KMeansResult r = gmm::kmeans_init(data, 8, rng);
        CHECK(r.distortion == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("fewer points than clusters is an error") {
        const MatrixXd data = MatrixXd::Zero(2, 2);
        CHECK_THROWS_AS(gmm::kmeans_init(data, 3, rng), insufficient_data_error);
    }
}

TEST_CASE("fit_em recovers a single Gaussian") {
    Rng rng(13);
    VectorXd mean(2);
    mean << 1.5, -0.5;
    MatrixXd cov(2, 2);
    cov << 2.0, 0.3, 0.3, 1.0;
    const int n = 10000;
    const MatrixXd data = sample_gaussian(mean, cov, n, rng);
    const gmm::FitResult fit = gmm::fit_em(data, 1, rng);
    REQUIRE(fit.model.component_count() == 1);
    for (int d = 0; d < 2; ++d) {
        const double se = std::sqrt(cov(d, d) / n);
        CHECK(std::abs(fit.model.components[0].mean(d) - mean(d)) < 3.0 * se);
    }
}

TEST_CASE("fit_em log-likelihood is monotone on arbitrary data") {
    Rng rng(17);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        MatrixXd data(40, 3);
        for (int i = 0; i < data.rows(); ++i) {
            for (int j = 0; j < data.cols(); ++j) data(i, j) = unif(rng);
        }
        const gmm::FitResult fit = gmm::fit_em(data, 3, rng);
        for (std::size_t i = 1; i < fit.loglik_history.size(); ++i) {
            CHECK(fit.loglik_history[i] >= fit.loglik_history[i - 1] - 1e-9);
        }
    }
}

TEST_CASE("fit_em recovers mixture proportions") {
    Rng rng(19);
    MatrixXd data(1000, 2);
    data.topRows(300) = sample_gaussian(VectorXd::Constant(2, 0.0), MatrixXd::Identity(2, 2), 300, rng);
    data.bottomRows(700) =
        sample_gaussian(VectorXd::Constant(2, 30.0), MatrixXd::Identity(2, 2), 700, rng);
    const gmm::FitResult fit = gmm::fit_em(data, 2, rng);
    REQUIRE(fit.model.component_count() == 2);
    double small = std::min(fit.model.components[0].prior, fit.model.components[1].prior);
    CHECK(small == Catch::Approx(0.3).margin(0.05));
}

TEST_CASE("fit_em collapses identical points to a regularized point mass") {
    Rng rng(23);
    const MatrixXd data = VectorXd::Constant(3, 4.0).transpose().replicate(20, 1);
    gmm::EmOptions opts;
    opts.reg = 1e-6;
    const gmm::FitResult fit = gmm::fit_em(data, 3, rng, opts);
    REQUIRE(fit.model.component_count() == 1);
    CHECK((fit.model.components[0].mean - VectorXd::Constant(3, 4.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((fit.model.components[0].cov - opts.reg * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("select_k picks the generating component count") {
    int hits = 0;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(static_cast<std::uint64_t>(100 + seed));
        MatrixXd data(400, 2);
        data.topRows(200) =
            sample_gaussian(VectorXd::Constant(2, 0.0), MatrixXd::Identity(2, 2), 200, rng);
        data.bottomRows(200) =
            sample_gaussian(VectorXd::Constant(2, 12.0), MatrixXd::Identity(2, 2), 200, rng);
        const gmm::FitResult fit = gmm::select_k(data, {1, 2, 3}, 0.25, rng);
        if (fit.model.component_count() == 2) ++hits;
    }
    CHECK(hits >= 8);
}

TEST_CASE("select_k trivial and degenerate candidate sets") {
    Rng rng(29);
    const MatrixXd data = sample_gaussian(VectorXd::Zero(2), MatrixXd::Identity(2, 2), 50, rng);

    SECTION("single candidate is taken") {
        const gmm::FitResult fit = gmm::select_k(data, {1}, 0.25, rng);
        CHECK(fit.model.component_count() == 1);
    }

    SECTION("candidates needing more parameters than points are skipped") {
        // 16 points, 12 training: K=3 in 2-D needs 2+6+9=17 parameters.
        const MatrixXd small = data.topRows(16);
        const gmm::FitResult fit = gmm::select_k(small, {1, 3}, 0.25, rng);
        CHECK(fit.model.component_count() == 1);
    }

    SECTION("all candidates failing is an error") {
        const MatrixXd tiny = data.topRows(4);
        CHECK_THROWS_AS(gmm::select_k(tiny, {30}, 0.25, rng), insufficient_data_error);
    }
}

TEST_CASE("regression collapses correctly for one component") {
    SECTION("zero cross-covariance ignores the query") {
        gmm::MixtureModel model;
        gmm::GaussianComponent c;
        c.prior = 1.0;
        c.mean = VectorXd::Zero(3);
        c.mean(2) = 7.0;
        c.cov = MatrixXd::Identity(3, 3);
        c.cov(2, 2) = 2.5;
        model.components.push_back(c);
        for (const double x : {-3.0, 0.0, 5.0}) {
            VectorXd q(2);
            q << x, -x;
            const gmm::Prediction p = gmm::predict(model, q);
            CHECK(p.mean == Catch::Approx(7.0).margin(1e-12));
            CHECK(p.variance == Catch::Approx(2.5).margin(1e-12));
        }
    }

    SECTION("hand-computed 2-D conditional") {
        gmm::MixtureModel model;
        gmm::GaussianComponent c;
        c.prior = 1.0;
        c.mean = VectorXd::Zero(2);
        c.cov = MatrixXd(2, 2);
        c.cov << 1.0, 0.5, 0.5, 1.0;
        model.components.push_back(c);
        VectorXd q(1);
        q << 2.0;
        const gmm::Prediction p = gmm::predict(model, q);
        CHECK(p.mean == Catch::Approx(1.0).margin(1e-12));
        CHECK(p.variance == Catch::Approx(0.75).margin(1e-12));
    }
}

TEST_CASE("regression agrees with the numerical-integration oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 1 + uniform_index(rng, 4);
        const int g = 2 + uniform_index(rng, 4);
        const gmm::MixtureModel model = random_model(k, g, rng);
        const gmm::GmrPredictor predictor(model);
        for (int t = 0; t < 5; ++t) {
            const VectorXd joint = sample_from(model, rng);
            const VectorXd query = joint.head(g - 1);
            std::vector<double> oracle_query(query.data(), query.data() + query.size());
            const gmm::Prediction p = predictor.predict(query);
            const OracleResult o = gmr_oracle(model, oracle_query);
            CHECK(p.mean == Catch::Approx(o.mean).margin(1e-4));
            CHECK(p.variance == Catch::Approx(o.variance).margin(1e-4));
        }
    }
}

TEST_CASE("predict is pure and the action fast path matches the generic path") {
    Rng rng(37);
    const gmm::MixtureModel model = random_model(3, 4, rng);
    const gmm::GmrPredictor predictor(model);
    const std::vector<double> state = {0.3, -1.1};

    const auto per_action = predictor.predict_actions(state, 5);
    REQUIRE(per_action.size() == 5);
    for (int a = 0; a < 5; ++a) {
        VectorXd query(3);
        query << state[0], state[1], static_cast<double>(a);
        const gmm::Prediction direct = predictor.predict(query);
        CHECK(per_action[static_cast<std::size_t>(a)].mean == Catch::Approx(direct.mean).margin(1e-9));
        CHECK(per_action[static_cast<std::size_t>(a)].variance ==
              Catch::Approx(direct.variance).margin(1e-9));
        const gmm::Prediction again = predictor.predict(query);
        CHECK(direct.mean == again.mean);          // bitwise
        CHECK(direct.variance == again.variance);  // bitwise
    }
}

TEST_CASE("model serialization round-trips bitwise") {
    Rng rng(41);
    const gmm::MixtureModel model = random_model(2, 3, rng);
    std::stringstream buffer;
    gmm::save_model(model, buffer);
    const gmm::MixtureModel loaded = gmm::load_model(buffer);
    REQUIRE(loaded.component_count() == model.component_count());
    for (int c = 0; c < model.component_count(); ++c) {
        const auto& a = model.components[static_cast<std::size_t>(c)];
        const auto& b = loaded.components[static_cast<std::size_t>(c)];
        CHECK(a.prior == b.prior);
        CHECK(a.mean == b.mean);
        CHECK(a.cov == b.cov);
    }
}
