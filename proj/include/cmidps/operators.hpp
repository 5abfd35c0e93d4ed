#pragma once

#include "cmidps/rng.hpp"

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

namespace cmidps {

/// Linear measurement map A: R^d -> R^m with explicit adjoint and a dense
/// view. Operators are immutable after construction.
class LinearOperator {
  public:
    virtual ~LinearOperator() = default;

    virtual int in_dim() const = 0;
    virtual int out_dim() const = 0;

    /// Tag: mask | box_mask | blur | downsample | dense.
    virtual std::string kind() const = 0;

    virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const = 0;

    /// Dense m x d matrix; default assembles columns via apply on basis
    /// vectors. Concrete operators override with an independent construction
    /// so dense-vs-apply consistency is a real check.
    virtual Eigen::MatrixXd to_dense() const;

    /// Kept coordinate indices for mask-type operators; empty otherwise.
    virtual std::vector<int> mask_indices() const { return {}; }
};

/// Gaussian measurement noise with covariance in scalar, diagonal, or dense
/// SPD form.
class NoiseModel {
  public:
    NoiseModel() = default;  // empty scalar form; factories build real models

    static NoiseModel isotropic(int m, double sigma);
    static NoiseModel diagonal(Eigen::VectorXd variances);
    static NoiseModel dense(Eigen::MatrixXd cov);

    int dim() const { return dim_; }

    /// Draw from N(0, Sigma_n). A zero isotropic sigma yields the zero
    /// vector (noiseless measurements) but disables solve/log_det.
    Eigen::VectorXd sample(RngStream& rng) const;

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;  // Sigma_n^{-1} rhs
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

    /// A' Sigma_n^{-1} A for a dense A (d x d result).
    Eigen::MatrixXd quadratic_form(const Eigen::MatrixXd& a_dense) const;

    double log_det() const;
    Eigen::MatrixXd dense_cov() const;
    double scalar_sigma() const;  // only for the isotropic form

  private:
    enum class Form { scalar, diag, dense };
    void require_invertible() const;

    Form form_ = Form::scalar;
    int dim_ = 0;
    double sigma_ = 0.0;
    Eigen::VectorXd diag_;
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd chol_;  // lower factor for dense form
};

/// y = A x0 + n with n ~ N(0, Sigma_n) from the given stream.
Eigen::VectorXd measure(const LinearOperator& a, const NoiseModel& noise,
                        const Eigen::VectorXd& x0, RngStream& rng);

/// Keeps ceil(keep_fraction * d) coordinates chosen uniformly without
/// replacement; extraction is in increasing index order.
std::unique_ptr<LinearOperator> make_random_mask(int d, double keep_fraction,
                                                 RngStream& rng);

/// Mask from an explicit index set (ascending, unique).
std::unique_ptr<LinearOperator> make_mask(int d, std::vector<int> kept_indices);

std::unique_ptr<LinearOperator> make_identity(int d);

struct BoxSpec {
    int row = 0;
    int col = 0;
    int rows = 0;
    int cols = 0;
};

/// Keeps the pixels outside the box, row-major. Images are row-major with
/// `height` rows of `width` pixels.
std::unique_ptr<LinearOperator> make_box_mask(int width, int height, const BoxSpec& box);

/// Separable normalized Gaussian blur with zero padding; m = d.
std::unique_ptr<LinearOperator> make_gaussian_blur(int width, int height,
                                                   int kernel_size, double sigma);

/// Block-average downsampling by an integer factor dividing both dimensions.
std::unique_ptr<LinearOperator> make_downsample(int width, int height, int factor);

std::unique_ptr<LinearOperator> make_dense_operator(Eigen::MatrixXd a);

}  // namespace cmidps
