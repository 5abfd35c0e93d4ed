#include "cmidps/score_model.hpp"

#include "cmidps/errors.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace cmidps {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Per-evaluation state of the diffused mixture at (x, t): responsibilities,
// per-component scores and covariance factors. Component k of p_t has mean
// sqrt(abar_t) * mu_k and covariance abar_t * C_k + (1 - abar_t) * I.
struct MixtureEval {
    double logp = 0.0;
    Eigen::VectorXd resp;                        // gamma_k
    std::vector<Eigen::VectorXd> comp_score;     // g_k = -S_k^{-1} (x - m_k)
    std::vector<Eigen::LLT<Eigen::MatrixXd>> llt;  // factors of S_k
    Eigen::VectorXd score;                       // sum_k gamma_k g_k
};

MixtureEval eval_mixture(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                         const Eigen::VectorXd& x, int t) {
    const int d = prior.dim();
    if (x.size() != d) throw ShapeError("mixture evaluation: x has wrong dimension");
    const double abar = schedule.alpha_bar(t);
    const double sq_abar = std::sqrt(abar);
    const int K = prior.n_components();

    MixtureEval ev;
    ev.resp.resize(K);
    ev.comp_score.resize(static_cast<std::size_t>(K));
    ev.llt.resize(static_cast<std::size_t>(K));

    Eigen::VectorXd log_terms(K);
    for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd S = abar * prior.covariances()[static_cast<std::size_t>(k)] +
                            (1.0 - abar) * Eigen::MatrixXd::Identity(d, d);
        ev.llt[static_cast<std::size_t>(k)].compute(S);
        if (ev.llt[static_cast<std::size_t>(k)].info() != Eigen::Success)
            throw FactorizationError("diffused component covariance " + std::to_string(k) +
                                     " is not positive definite");
        const Eigen::VectorXd dev = x - sq_abar * prior.means()[static_cast<std::size_t>(k)];
        const Eigen::VectorXd solved = ev.llt[static_cast<std::size_t>(k)].solve(dev);
        ev.comp_score[static_cast<std::size_t>(k)] = -solved;
        double logdet = 0.0;
        const auto& L = ev.llt[static_cast<std::size_t>(k)].matrixLLT();
        for (int i = 0; i < d; ++i) logdet += std::log(L(i, i));
        logdet *= 2.0;
        log_terms[k] = std::log(prior.weights()[k]) -
                       0.5 * (d * kLog2Pi + logdet + dev.dot(solved));
    }

    const double m = log_terms.maxCoeff();
    const double lse = m + std::log((log_terms.array() - m).exp().sum());
    ev.logp = lse;
    ev.resp = (log_terms.array() - lse).exp();

    ev.score = Eigen::VectorXd::Zero(d);
    for (int k = 0; k < K; ++k)
        ev.score += ev.resp[k] * ev.comp_score[static_cast<std::size_t>(k)];
    return ev;
}

Eigen::MatrixXd mixture_hessian(const MixtureEval& ev, int d) {
    // H = sum_k gamma_k (H_k + g_k g_k') - s s', with H_k = -S_k^{-1}.
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
    const int K = static_cast<int>(ev.resp.size());
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    for (int k = 0; k < K; ++k) {
        const auto& g = ev.comp_score[static_cast<std::size_t>(k)];
        H -= ev.resp[k] * ev.llt[static_cast<std::size_t>(k)].solve(I);
        H += ev.resp[k] * g * g.transpose();
    }
    H -= ev.score * ev.score.transpose();
    return 0.5 * (H + H.transpose());
}

}  // namespace

// --- ScoreModel defaults ---

Eigen::MatrixXd ScoreModel::hessian(const Eigen::VectorXd&, int) const {
    throw CapabilityError("score model does not provide a dense Hessian");
}

Eigen::VectorXd ScoreModel::hvp(const Eigen::VectorXd& x, int t,
                                const Eigen::VectorXd& v) const {
    if (!has_dense_hessian())
        throw CapabilityError("score model provides neither hvp nor a dense Hessian");
    return hessian(x, t) * v;
}

Eigen::VectorXd ScoreModel::third_bilinear_grad(const Eigen::VectorXd&, int,
                                                const Eigen::VectorXd&,
                                                const Eigen::VectorXd&) const {
    throw CapabilityError(
        "score model lacks third-order derivatives and no finite-difference fallback "
        "was configured");
}

Tensor3 ScoreModel::dense_third_tensor(const Eigen::VectorXd& x, int t,
                                       int dense_limit) const {
    const int d = dim();
    if (d > dense_limit)
        throw DenseLimitError("dense third tensor requested for d = " + std::to_string(d) +
                              " above limit " + std::to_string(dense_limit));
    if (!has_third_order())
        throw CapabilityError("score model lacks third-order derivatives");
    Tensor3 out(d);
    for (int i = 0; i < d; ++i) {
        const Eigen::VectorXd ei = Eigen::VectorXd::Unit(d, i);
        for (int j = 0; j <= i; ++j) {
            const Eigen::VectorXd tij = third_bilinear_grad(x, t, ei, Eigen::VectorXd::Unit(d, j));
            for (int k = 0; k < d; ++k) {
                out(i, j, k) = tij[k];
                out(j, i, k) = tij[k];
            }
        }
    }
    return out;
}

// --- GaussianMixturePrior ---

GaussianMixturePrior::GaussianMixturePrior(Eigen::VectorXd weights,
                                           std::vector<Eigen::VectorXd> means,
                                           std::vector<Eigen::MatrixXd> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    const int K = static_cast<int>(weights_.size());
    if (K == 0) throw ConfigError("mixture needs at least one component");
    if (static_cast<int>(means_.size()) != K || static_cast<int>(covs_.size()) != K)
        throw ShapeError("mixture weights/means/covariances count mismatch");
    if ((weights_.array() <= 0.0).any())
        throw ConfigError("mixture weights must be positive");
    if (std::abs(weights_.sum() - 1.0) > 1e-12)
        throw ConfigError("mixture weights must sum to 1 within 1e-12");
    dim_ = static_cast<int>(means_[0].size());
    cov_chols_.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        if (means_[static_cast<std::size_t>(k)].size() != dim_)
            throw ShapeError("mixture mean " + std::to_string(k) + " has wrong dimension");
        const auto& C = covs_[static_cast<std::size_t>(k)];
        if (C.rows() != dim_ || C.cols() != dim_)
            throw ShapeError("mixture covariance " + std::to_string(k) + " has wrong shape");
        Eigen::LLT<Eigen::MatrixXd> llt(C);
        if (llt.info() != Eigen::Success)
            throw FactorizationError("mixture covariance " + std::to_string(k) +
                                     " is not positive definite");
        cov_chols_.push_back(llt.matrixL());
    }
}

GaussianMixturePrior GaussianMixturePrior::standard_normal(int dim) {
    Eigen::VectorXd w(1);
    w << 1.0;
    return GaussianMixturePrior(w, {Eigen::VectorXd::Zero(dim)},
                                {Eigen::MatrixXd::Identity(dim, dim)});
}

Eigen::VectorXd GaussianMixturePrior::sample(RngStream& rng) const {
    const double u = rng.uniform();
    int k = 0;
    double acc = 0.0;
    for (; k < n_components() - 1; ++k) {
        acc += weights_[k];
        if (u < acc) break;
    }
    return means_[static_cast<std::size_t>(k)] +
           cov_chols_[static_cast<std::size_t>(k)] * rng.normal_vec(dim_);
}

// --- free-function mixture derivatives ---

double gmm_log_density(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                       const Eigen::VectorXd& x, int t) {
    return eval_mixture(prior, schedule, x, t).logp;
}

Eigen::VectorXd gmm_score(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                          const Eigen::VectorXd& x, int t) {
    return eval_mixture(prior, schedule, x, t).score;
}

Eigen::MatrixXd gmm_hessian(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                            const Eigen::VectorXd& x, int t) {
    return mixture_hessian(eval_mixture(prior, schedule, x, t), prior.dim());
}

// --- GmmScoreModel ---

GmmScoreModel::GmmScoreModel(GaussianMixturePrior prior, NoiseSchedule schedule)
    : prior_(std::move(prior)), schedule_(std::move(schedule)) {}

double GmmScoreModel::log_density(const Eigen::VectorXd& x, int t) const {
    return gmm_log_density(prior_, schedule_, x, t);
}

Eigen::VectorXd GmmScoreModel::score(const Eigen::VectorXd& x, int t) const {
    return gmm_score(prior_, schedule_, x, t);
}

Eigen::MatrixXd GmmScoreModel::hessian(const Eigen::VectorXd& x, int t) const {
    return gmm_hessian(prior_, schedule_, x, t);
}

Eigen::VectorXd GmmScoreModel::hvp(const Eigen::VectorXd& x, int t,
                                   const Eigen::VectorXd& v) const {
    if (v.size() != dim()) throw ShapeError("hvp: v has wrong dimension");
    const MixtureEval ev = eval_mixture(prior_, schedule_, x, t);
    Eigen::VectorXd out = -ev.score * ev.score.dot(v);
    for (int k = 0; k < prior_.n_components(); ++k) {
        const auto& g = ev.comp_score[static_cast<std::size_t>(k)];
        out += ev.resp[k] * (-ev.llt[static_cast<std::size_t>(k)].solve(v) + g * g.dot(v));
    }
    return out;
}

Eigen::VectorXd GmmScoreModel::third_bilinear_grad(const Eigen::VectorXd& x, int t,
                                                   const Eigen::VectorXd& u,
                                                   const Eigen::VectorXd& v) const {
    const int d = dim();
    if (u.size() != d || v.size() != d)
        throw ShapeError("third_bilinear_grad: direction has wrong dimension");
    // Constant Hessian: the third derivative vanishes identically.
    if (prior_.n_components() == 1) return Eigen::VectorXd::Zero(d);

    const MixtureEval ev = eval_mixture(prior_, schedule_, x, t);

    // w = sum_k gamma_k [ (u'B_k v)(g_k - s) + (g_k'v) H_k u + (u'g_k) H_k v ]
    //     - (s'v) H u - (u's) H v,   B_k = H_k + g_k g_k',  H_k = -S_k^{-1}.
    Eigen::VectorXd Hu = -ev.score * ev.score.dot(u);
    Eigen::VectorXd Hv = -ev.score * ev.score.dot(v);
    std::vector<Eigen::VectorXd> Hk_u(static_cast<std::size_t>(prior_.n_components()));
    std::vector<Eigen::VectorXd> Hk_v(static_cast<std::size_t>(prior_.n_components()));
    for (int k = 0; k < prior_.n_components(); ++k) {
        const auto& g = ev.comp_score[static_cast<std::size_t>(k)];
        Hk_u[static_cast<std::size_t>(k)] = -ev.llt[static_cast<std::size_t>(k)].solve(u);
        Hk_v[static_cast<std::size_t>(k)] = -ev.llt[static_cast<std::size_t>(k)].solve(v);
        Hu += ev.resp[k] * (Hk_u[static_cast<std::size_t>(k)] + g * g.dot(u));
        Hv += ev.resp[k] * (Hk_v[static_cast<std::size_t>(k)] + g * g.dot(v));
    }

    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    for (int k = 0; k < prior_.n_components(); ++k) {
        const auto& g = ev.comp_score[static_cast<std::size_t>(k)];
        const double uBv = u.dot(Hk_v[static_cast<std::size_t>(k)]) + u.dot(g) * g.dot(v);
        w += ev.resp[k] * (uBv * (g - ev.score) +
                           g.dot(v) * Hk_u[static_cast<std::size_t>(k)] +
                           u.dot(g) * Hk_v[static_cast<std::size_t>(k)]);
    }
    w -= ev.score.dot(v) * Hu;
    w -= ev.score.dot(u) * Hv;
    return w;
}

Tensor3 GmmScoreModel::dense_third_tensor(const Eigen::VectorXd& x, int t,
                                          int dense_limit) const {
    const int d = dim();
    if (d > dense_limit)
        throw DenseLimitError("dense third tensor requested for d = " + std::to_string(d) +
                              " above limit " + std::to_string(dense_limit));
    Tensor3 out(d);
    if (prior_.n_components() == 1) return out;  // exactly zero

    const MixtureEval ev = eval_mixture(prior_, schedule_, x, t);
    const int K = prior_.n_components();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);

    std::vector<Eigen::MatrixXd> Hk(static_cast<std::size_t>(K));
    std::vector<Eigen::MatrixXd> Bk(static_cast<std::size_t>(K));
    Eigen::MatrixXd H = -ev.score * ev.score.transpose();
    for (int k = 0; k < K; ++k) {
        const auto& g = ev.comp_score[static_cast<std::size_t>(k)];
        Hk[static_cast<std::size_t>(k)] = -ev.llt[static_cast<std::size_t>(k)].solve(I);
        Bk[static_cast<std::size_t>(k)] =
            Hk[static_cast<std::size_t>(k)] + g * g.transpose();
        H += ev.resp[k] * Bk[static_cast<std::size_t>(k)];
    }

    // T_{:,:,m} = sum_k gamma_k [ (g_{k,m} - s_m) B_k
    //                             + H_k(:,m) g_k' + g_k H_k(:,m)' ]
    //             - H(:,m) s' - s H(:,m)'.
    for (int m = 0; m < d; ++m) {
        Eigen::MatrixXd& slice = out.slice[static_cast<std::size_t>(m)];
        for (int k = 0; k < K; ++k) {
            const auto& g = ev.comp_score[static_cast<std::size_t>(k)];
            const Eigen::VectorXd hcol = Hk[static_cast<std::size_t>(k)].col(m);
            slice += ev.resp[k] * ((g[m] - ev.score[m]) * Bk[static_cast<std::size_t>(k)] +
                                   hcol * g.transpose() + g * hcol.transpose());
        }
        const Eigen::VectorXd hcol = H.col(m);
        slice -= hcol * ev.score.transpose();
        slice -= ev.score * hcol.transpose();
    }
    return out;
}

// --- FiniteDiffScoreModel ---

FiniteDiffScoreModel::FiniteDiffScoreModel(int dim, ScoreFn base_score, double h)
    : dim_(dim), base_(std::move(base_score)), h_(h) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
}

FiniteDiffScoreModel finite_diff_wrap(int dim, ScoreFn base_score, double h) {
    return FiniteDiffScoreModel(dim, std::move(base_score), h);
}

Eigen::VectorXd FiniteDiffScoreModel::score(const Eigen::VectorXd& x, int t) const {
    return base_(x, t);
}

Eigen::VectorXd FiniteDiffScoreModel::hvp(const Eigen::VectorXd& x, int t,
                                          const Eigen::VectorXd& v) const {
    const double n = v.norm();
    if (n == 0.0) return Eigen::VectorXd::Zero(dim_);
    const Eigen::VectorXd dir = v / n;
    return n / (2.0 * h_) * (base_(x + h_ * dir, t) - base_(x - h_ * dir, t));
}

Eigen::MatrixXd FiniteDiffScoreModel::hessian(const Eigen::VectorXd& x, int t) const {
    Eigen::MatrixXd H(dim_, dim_);
    for (int j = 0; j < dim_; ++j)
        H.col(j) = hvp(x, t, Eigen::VectorXd::Unit(dim_, j));
    return 0.5 * (H + H.transpose());
}

Eigen::VectorXd FiniteDiffScoreModel::third_bilinear_grad(const Eigen::VectorXd& x, int t,
                                                          const Eigen::VectorXd& u,
                                                          const Eigen::VectorXd& v) const {
    // By full symmetry of the third derivative,
    // [tbg]_m = d/de [ H(x + e v) u ]_m at e = 0; nested central differences.
    const double n = v.norm();
    if (n == 0.0 || u.norm() == 0.0) return Eigen::VectorXd::Zero(dim_);
    const Eigen::VectorXd dir = v / n;
    return n / (2.0 * h_) * (hvp(x + h_ * dir, t, u) - hvp(x - h_ * dir, t, u));
}

// --- Tweedie denoising ---

Eigen::VectorXd tweedie_denoise(const ScoreModel& model, const NoiseSchedule& schedule,
                                const Eigen::VectorXd& x_t, int t) {
    const double abar = schedule.alpha_bar(t);
    return (x_t + (1.0 - abar) * model.score(x_t, t)) / std::sqrt(abar);
}

}  // namespace cmidps
