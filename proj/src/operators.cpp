#include "cmidps/operators.hpp"

#include "cmidps/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

namespace cmidps {

Eigen::MatrixXd LinearOperator::to_dense() const {
    Eigen::MatrixXd a(out_dim(), in_dim());
    for (int j = 0; j < in_dim(); ++j)
        a.col(j) = apply(Eigen::VectorXd::Unit(in_dim(), j));
    return a;
}

namespace {

class MaskOperator : public LinearOperator {
  public:
    MaskOperator(int d, std::vector<int> idx, std::string kind)
        : d_(d), idx_(std::move(idx)), kind_(std::move(kind)) {}

    int in_dim() const override { return d_; }
    int out_dim() const override { return static_cast<int>(idx_.size()); }
    std::string kind() const override { return kind_; }
    std::vector<int> mask_indices() const override { return idx_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
        if (x.size() != d_) throw ShapeError("mask apply: wrong input dimension");
        Eigen::VectorXd y(out_dim());
        for (std::size_t j = 0; j < idx_.size(); ++j) y[static_cast<Eigen::Index>(j)] = x[idx_[j]];
        return y;
    }

    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override {
        if (y.size() != out_dim()) throw ShapeError("mask adjoint: wrong input dimension");
        Eigen::VectorXd x = Eigen::VectorXd::Zero(d_);
        for (std::size_t j = 0; j < idx_.size(); ++j) x[idx_[j]] = y[static_cast<Eigen::Index>(j)];
        return x;
    }

    Eigen::MatrixXd to_dense() const override {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(out_dim(), d_);
        for (std::size_t j = 0; j < idx_.size(); ++j) a(static_cast<Eigen::Index>(j), idx_[j]) = 1.0;
        return a;
    }

  private:
    int d_;
    std::vector<int> idx_;
    std::string kind_;
};

class BlurOperator : public LinearOperator {
  public:
    BlurOperator(int width, int height, Eigen::MatrixXd kh, Eigen::MatrixXd kv)
        : w_(width), h_(height), kh_(std::move(kh)), kv_(std::move(kv)) {}

    int in_dim() const override { return w_ * h_; }
    int out_dim() const override { return w_ * h_; }
    std::string kind() const override { return "blur"; }

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
        return pass(x, kh_, kv_);
    }

    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override {
        return pass(y, kh_.transpose(), kv_.transpose());
    }

    Eigen::MatrixXd to_dense() const override {
        // Row-major image flattening: A = Kv (x) Kh.
        Eigen::MatrixXd a(in_dim(), in_dim());
        for (int r = 0; r < h_; ++r)
            for (int c = 0; c < h_; ++c)
                a.block(r * w_, c * w_, w_, w_) = kv_(r, c) * kh_;
        return a;
    }

  private:
    Eigen::VectorXd pass(const Eigen::VectorXd& x, const Eigen::MatrixXd& kh,
                         const Eigen::MatrixXd& kv) const {
        if (x.size() != in_dim()) throw ShapeError("blur: wrong input dimension");
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const RowMat> img(x.data(), h_, w_);
        RowMat out = kv * (img * kh.transpose());
        return Eigen::Map<const Eigen::VectorXd>(out.data(), in_dim());
    }

    int w_, h_;
    Eigen::MatrixXd kh_;  // w x w horizontal 1-D convolution
    Eigen::MatrixXd kv_;  // h x h vertical 1-D convolution
};

class DownsampleOperator : public LinearOperator {
  public:
    DownsampleOperator(int width, int height, int factor)
        : w_(width), h_(height), f_(factor) {}

    int in_dim() const override { return w_ * h_; }
    int out_dim() const override { return (w_ / f_) * (h_ / f_); }
    std::string kind() const override { return "downsample"; }

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
        if (x.size() != in_dim()) throw ShapeError("downsample: wrong input dimension");
        const int ow = w_ / f_;
        Eigen::VectorXd y = Eigen::VectorXd::Zero(out_dim());
        for (int r = 0; r < h_; ++r)
            for (int c = 0; c < w_; ++c)
                y[(r / f_) * ow + (c / f_)] += x[r * w_ + c];
        return y / static_cast<double>(f_ * f_);
    }

    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override {
        if (y.size() != out_dim()) throw ShapeError("downsample adjoint: wrong input dimension");
        const int ow = w_ / f_;
        Eigen::VectorXd x(in_dim());
        for (int r = 0; r < h_; ++r)
            for (int c = 0; c < w_; ++c)
                x[r * w_ + c] = y[(r / f_) * ow + (c / f_)] / static_cast<double>(f_ * f_);
        return x;
    }

    Eigen::MatrixXd to_dense() const override {
        const int ow = w_ / f_;
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(out_dim(), in_dim());
        for (int r = 0; r < h_; ++r)
            for (int c = 0; c < w_; ++c)
                a((r / f_) * ow + (c / f_), r * w_ + c) = 1.0 / static_cast<double>(f_ * f_);
        return a;
    }

  private:
    int w_, h_, f_;
};

class DenseOperator : public LinearOperator {
  public:
    explicit DenseOperator(Eigen::MatrixXd a) : a_(std::move(a)) {}

    int in_dim() const override { return static_cast<int>(a_.cols()); }
    int out_dim() const override { return static_cast<int>(a_.rows()); }
    std::string kind() const override { return "dense"; }

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
        if (x.size() != a_.cols()) throw ShapeError("dense operator: wrong input dimension");
        return a_ * x;
    }

    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override {
        if (y.size() != a_.rows()) throw ShapeError("dense adjoint: wrong input dimension");
        return a_.transpose() * y;
    }

    Eigen::MatrixXd to_dense() const override { return a_; }

  private:
    Eigen::MatrixXd a_;
};

Eigen::VectorXd gaussian_kernel(int kernel_size, double sigma) {
    const int half = kernel_size / 2;
    Eigen::VectorXd k(kernel_size);
    for (int i = 0; i < kernel_size; ++i) {
        const double u = static_cast<double>(i - half);
        k[i] = std::exp(-0.5 * u * u / (sigma * sigma));
    }
    return k / k.sum();
}

Eigen::MatrixXd conv1d_matrix(int n, const Eigen::VectorXd& kernel) {
    // Zero-padded same-size 1-D convolution as a dense n x n matrix.
    const int half = static_cast<int>(kernel.size()) / 2;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int o = -half; o <= half; ++o) {
            const int j = i + o;
            if (j >= 0 && j < n) m(i, j) = kernel[o + half];
        }
    return m;
}

}  // namespace

// --- NoiseModel ---

NoiseModel NoiseModel::isotropic(int m, double sigma) {
    if (m < 0) throw ConfigError("noise dimension must be nonnegative");
    if (sigma < 0.0) throw ConfigError("noise sigma must be nonnegative");
    NoiseModel n;
    n.form_ = Form::scalar;
    n.dim_ = m;
    n.sigma_ = sigma;
    return n;
}

NoiseModel NoiseModel::diagonal(Eigen::VectorXd variances) {
    if ((variances.array() <= 0.0).any())
        throw ConfigError("diagonal noise variances must be positive");
    NoiseModel n;
    n.form_ = Form::diag;
    n.dim_ = static_cast<int>(variances.size());
    n.diag_ = std::move(variances);
    return n;
}

NoiseModel NoiseModel::dense(Eigen::MatrixXd cov) {
    if (cov.rows() != cov.cols()) throw ShapeError("noise covariance must be square");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw FactorizationError("noise covariance is not positive definite");
    NoiseModel n;
    n.form_ = Form::dense;
    n.dim_ = static_cast<int>(cov.rows());
    n.cov_ = std::move(cov);
    n.chol_ = llt.matrixL();
    return n;
}

void NoiseModel::require_invertible() const {
    if (form_ == Form::scalar && sigma_ == 0.0)
        throw FactorizationError("noise covariance is singular (sigma = 0)");
}

Eigen::VectorXd NoiseModel::sample(RngStream& rng) const {
    Eigen::VectorXd z = rng.normal_vec(dim_);
    switch (form_) {
        case Form::scalar: return sigma_ * z;
        case Form::diag: return diag_.array().sqrt().matrix().asDiagonal() * z;
        case Form::dense: return chol_ * z;
    }
    return z;
}

Eigen::VectorXd NoiseModel::solve(const Eigen::VectorXd& rhs) const {
    return solve(Eigen::MatrixXd(rhs)).col(0);
}

Eigen::MatrixXd NoiseModel::solve(const Eigen::MatrixXd& rhs) const {
    require_invertible();
    switch (form_) {
        case Form::scalar: return rhs / (sigma_ * sigma_);
        case Form::diag: return diag_.cwiseInverse().asDiagonal() * rhs;
        case Form::dense: {
            Eigen::MatrixXd x = chol_.triangularView<Eigen::Lower>().solve(rhs);
            return chol_.transpose().triangularView<Eigen::Upper>().solve(x);
        }
    }
    return rhs;
}

Eigen::MatrixXd NoiseModel::quadratic_form(const Eigen::MatrixXd& a_dense) const {
    if (a_dense.rows() != dim_) throw ShapeError("quadratic_form: operator rows != noise dim");
    if (dim_ == 0) return Eigen::MatrixXd::Zero(a_dense.cols(), a_dense.cols());
    const Eigen::MatrixXd m = a_dense.transpose() * solve(a_dense);
    return 0.5 * (m + m.transpose());
}

double NoiseModel::log_det() const {
    require_invertible();
    switch (form_) {
        case Form::scalar: return 2.0 * dim_ * std::log(sigma_);
        case Form::diag: return diag_.array().log().sum();
        case Form::dense: {
            double ld = 0.0;
            for (int i = 0; i < dim_; ++i) ld += std::log(chol_(i, i));
            return 2.0 * ld;
        }
    }
    return 0.0;
}

Eigen::MatrixXd NoiseModel::dense_cov() const {
    switch (form_) {
        case Form::scalar:
            return sigma_ * sigma_ * Eigen::MatrixXd::Identity(dim_, dim_);
        case Form::diag: return diag_.asDiagonal();
        case Form::dense: return cov_;
    }
    return {};
}

double NoiseModel::scalar_sigma() const {
    if (form_ != Form::scalar)
        throw ConfigError("noise model is not in scalar form");
    return sigma_;
}

// --- measurement and factories ---

Eigen::VectorXd measure(const LinearOperator& a, const NoiseModel& noise,
                        const Eigen::VectorXd& x0, RngStream& rng) {
    if (x0.size() != a.in_dim()) throw ShapeError("measure: x0 dimension != operator input");
    if (noise.dim() != a.out_dim()) throw ShapeError("measure: noise dimension != operator output");
    return a.apply(x0) + noise.sample(rng);
}

std::unique_ptr<LinearOperator> make_random_mask(int d, double keep_fraction,
                                                 RngStream& rng) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw ConfigError("keep_fraction = " + std::to_string(keep_fraction) +
                          " outside (0, 1]");
    const int m = static_cast<int>(std::ceil(keep_fraction * d));
    std::vector<int> pool(static_cast<std::size_t>(d));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < m; ++i) {
        const auto j = i + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(d - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    std::vector<int> kept(pool.begin(), pool.begin() + m);
    std::sort(kept.begin(), kept.end());
    return std::make_unique<MaskOperator>(d, std::move(kept), "mask");
}

std::unique_ptr<LinearOperator> make_mask(int d, std::vector<int> kept_indices) {
    for (std::size_t i = 0; i < kept_indices.size(); ++i) {
        if (kept_indices[i] < 0 || kept_indices[i] >= d)
            throw ConfigError("mask index out of range");
        if (i > 0 && kept_indices[i] <= kept_indices[i - 1])
            throw ConfigError("mask indices must be strictly increasing");
    }
    return std::make_unique<MaskOperator>(d, std::move(kept_indices), "mask");
}

std::unique_ptr<LinearOperator> make_identity(int d) {
    std::vector<int> idx(static_cast<std::size_t>(d));
    std::iota(idx.begin(), idx.end(), 0);
    return std::make_unique<MaskOperator>(d, std::move(idx), "mask");
}

std::unique_ptr<LinearOperator> make_box_mask(int width, int height, const BoxSpec& box) {
    if (width < 1 || height < 1) throw ConfigError("box mask: image dimensions must be positive");
    if (box.row < 0 || box.col < 0 || box.rows < 0 || box.cols < 0 ||
        box.row + box.rows > height || box.col + box.cols > width)
        throw ConfigError("box mask: box extends outside the image");
    std::vector<int> kept;
    kept.reserve(static_cast<std::size_t>(width * height));
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const bool inside = r >= box.row && r < box.row + box.rows &&
                                c >= box.col && c < box.col + box.cols;
            if (!inside) kept.push_back(r * width + c);
        }
    return std::make_unique<MaskOperator>(width * height, std::move(kept), "box_mask");
}

std::unique_ptr<LinearOperator> make_gaussian_blur(int width, int height,
                                                   int kernel_size, double sigma) {
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw ConfigError("blur kernel_size = " + std::to_string(kernel_size) +
                          " must be odd and positive");
    if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
    if (width < 1 || height < 1) throw ConfigError("blur: image dimensions must be positive");
    const Eigen::VectorXd k = gaussian_kernel(kernel_size, sigma);
    return std::make_unique<BlurOperator>(width, height, conv1d_matrix(width, k),
                                          conv1d_matrix(height, k));
}

std::unique_ptr<LinearOperator> make_downsample(int width, int height, int factor) {
    if (factor < 1) throw ConfigError("downsample factor must be >= 1");
    if (width % factor != 0 || height % factor != 0)
        throw ConfigError("downsample factor " + std::to_string(factor) +
                          " does not divide image dimensions");
    return std::make_unique<DownsampleOperator>(width, height, factor);
}

std::unique_ptr<LinearOperator> make_dense_operator(Eigen::MatrixXd a) {
    return std::make_unique<DenseOperator>(std::move(a));
}

}  // namespace cmidps
