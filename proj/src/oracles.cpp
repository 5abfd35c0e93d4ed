#include "cmidps/oracles.hpp"

#include "cmidps/errors.hpp"

#include <cmath>
#include <limits>

namespace cmidps {

GaussianDist conjugate_gaussian_posterior(const GaussianDist& prior,
                                          const LinearOperator& a,
                                          const NoiseModel& noise,
                                          const Eigen::VectorXd& y) {
    const int d = static_cast<int>(prior.mean.size());
    if (prior.cov.rows() != d || prior.cov.cols() != d)
        throw ShapeError("conjugate posterior: prior mean/cov mismatch");
    if (a.in_dim() != d) throw ShapeError("conjugate posterior: operator input dim");
    if (y.size() != a.out_dim()) throw ShapeError("conjugate posterior: y dimension");

    Eigen::LLT<Eigen::MatrixXd> prior_llt(prior.cov);
    if (prior_llt.info() != Eigen::Success)
        throw FactorizationError("conjugate posterior: prior covariance not SPD");

    const Eigen::MatrixXd a_dense = a.to_dense();
    const Eigen::MatrixXd prior_prec = prior_llt.solve(Eigen::MatrixXd::Identity(d, d));
    Eigen::MatrixXd precision = prior_prec + noise.quadratic_form(a_dense);
    precision = 0.5 * (precision + precision.transpose());

    Eigen::LLT<Eigen::MatrixXd> post_llt(precision);
    if (post_llt.info() != Eigen::Success)
        throw FactorizationError("conjugate posterior: posterior precision not SPD");

    GaussianDist post;
    post.cov = post_llt.solve(Eigen::MatrixXd::Identity(d, d));
    post.cov = 0.5 * (post.cov + post.cov.transpose());
    Eigen::VectorXd rhs = prior_llt.solve(prior.mean);
    if (a.out_dim() > 0) rhs += a_dense.transpose() * noise.solve(y);
    post.mean = post_llt.solve(rhs);
    return post;
}

McMoments mc_posterior_moments(const std::function<Eigen::VectorXd(RngStream&)>& prior_sampler,
                               const NoiseSchedule& schedule, const Eigen::VectorXd& x_t,
                               int t, int n_samples, RngStream& rng) {
    if (n_samples < 1000)
        throw ConfigError("mc_posterior_moments needs at least 1000 samples");
    const double abar = schedule.alpha_bar(t);
    const double sq_abar = std::sqrt(abar);
    const double var = 1.0 - abar;
    const int d = static_cast<int>(x_t.size());

    std::vector<Eigen::VectorXd> draws(static_cast<std::size_t>(n_samples));
    Eigen::VectorXd logw(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        draws[static_cast<std::size_t>(i)] = prior_sampler(rng);
        const Eigen::VectorXd dev = x_t - sq_abar * draws[static_cast<std::size_t>(i)];
        logw[i] = -0.5 * dev.squaredNorm() / var;
    }
    const double m = logw.maxCoeff();
    Eigen::VectorXd w = (logw.array() - m).exp();
    w /= w.sum();

    McMoments out;
    out.mean = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n_samples; ++i)
        out.mean += w[i] * draws[static_cast<std::size_t>(i)];
    out.cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n_samples; ++i) {
        const Eigen::VectorXd dev = draws[static_cast<std::size_t>(i)] - out.mean;
        out.cov += w[i] * dev * dev.transpose();
    }
    out.effective_sample_size = 1.0 / w.squaredNorm();
    out.unreliable = out.effective_sample_size < 50.0;
    return out;
}

Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x, xm = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        xp[k] = x[k] + h;
        xm[k] = x[k] - h;
        g[k] = (f(xp) - f(xm)) / (2.0 * h);
        xp[k] = x[k];
        xm[k] = x[k];
    }
    return g;
}

namespace {

Eigen::VectorXd clamp01(const Eigen::VectorXd& v) {
    return v.array().max(0.0).min(1.0);
}

double ssim_truncated_window(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                             int width, int height) {
    // 11-tap Gaussian window, sigma 1.5; truncated and renormalized at the
    // borders so any image size is well defined.
    constexpr int kHalf = 5;
    constexpr double kSigma = 1.5;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;

    Eigen::VectorXd g(2 * kHalf + 1);
    for (int i = -kHalf; i <= kHalf; ++i)
        g[i + kHalf] = std::exp(-0.5 * i * i / (kSigma * kSigma));

    double total = 0.0;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            double wsum = 0.0, mua = 0.0, mub = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (int dr = -kHalf; dr <= kHalf; ++dr) {
                const int rr = r + dr;
                if (rr < 0 || rr >= height) continue;
                for (int dc = -kHalf; dc <= kHalf; ++dc) {
                    const int cc = c + dc;
                    if (cc < 0 || cc >= width) continue;
                    const double w = g[dr + kHalf] * g[dc + kHalf];
                    const double va = a[rr * width + cc];
                    const double vb = b[rr * width + cc];
                    wsum += w;
                    mua += w * va;
                    mub += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            mua /= wsum;
            mub /= wsum;
            const double vara = saa / wsum - mua * mua;
            const double varb = sbb / wsum - mub * mub;
            const double covab = sab / wsum - mua * mub;
            total += ((2.0 * mua * mub + c1) * (2.0 * covab + c2)) /
                     ((mua * mua + mub * mub + c1) * (vara + varb + c2));
        }
    }
    return total / static_cast<double>(width * height);
}

}  // namespace

Metrics metrics(const Eigen::VectorXd& x_hat, const Eigen::VectorXd& x_true,
                std::optional<ImageDims> image) {
    if (x_hat.size() != x_true.size()) throw ShapeError("metrics: length mismatch");
    Metrics out;
    out.mse = (x_hat - x_true).squaredNorm() / static_cast<double>(x_hat.size());

    const Eigen::VectorXd ch = clamp01(x_hat);
    const Eigen::VectorXd ct = clamp01(x_true);
    const double mse_clamped = (ch - ct).squaredNorm() / static_cast<double>(ch.size());
    out.psnr = mse_clamped == 0.0 ? std::numeric_limits<double>::infinity()
                                  : -10.0 * std::log10(mse_clamped);

    if (image) {
        if (image->width * image->height != static_cast<int>(x_hat.size()))
            throw ShapeError("metrics: image dims do not match vector length");
        out.ssim = ssim_truncated_window(ch, ct, image->width, image->height);
    }
    return out;
}

}  // namespace cmidps
