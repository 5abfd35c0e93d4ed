#pragma once

#include <Eigen/Dense>

#include <vector>

namespace cmidps {

/// Rank-3 tensor stored as d slices along the third index:
/// slice[k](i, j) = T_{ijk}. Score-derived tensors are symmetric under all
/// index permutations, so slicing along the third index loses nothing.
struct Tensor3 {
    std::vector<Eigen::MatrixXd> slice;

    Tensor3() = default;
    explicit Tensor3(int d)
        : slice(static_cast<std::size_t>(d), Eigen::MatrixXd::Zero(d, d)) {}

    int dim() const { return static_cast<int>(slice.size()); }
    double operator()(int i, int j, int k) const {
        return slice[static_cast<std::size_t>(k)](i, j);
    }
    double& operator()(int i, int j, int k) {
        return slice[static_cast<std::size_t>(k)](i, j);
    }
};

}  // namespace cmidps
