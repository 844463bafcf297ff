#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace animator::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Node;
using Var = std::shared_ptr<Node>;

// A value in the reverse-mode graph. Nodes that do not depend on a trainable
// parameter carry no parents or closure, so inference builds no graph.
struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    double scalar() const { return value(0, 0); }
};

Var constant(Mat value);
Var param(Parameter& p);

// Accumulate d(root)/d(param) into every reachable Parameter::grad. `root`
// must be 1 x 1.
void backward(const Var& root);

// Elementwise / broadcasting arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var divide(const Var& a, const Var& b);  // both 1 x 1
Var add_row(const Var& a, const Var& row);  // row is 1 x C, broadcast over rows
Var matmul(const Var& a, const Var& b);

Var silu(const Var& a);
Var tanh(const Var& a);

// Per-row normalisation to zero mean, unit variance (no affine terms).
Var layer_norm(const Var& a, double eps = 1e-6);
// x * (1 + scale) + shift with 1 x C shift/scale broadcast over rows.
Var modulate(const Var& x, const Var& shift, const Var& scale);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count);
Var transpose(const Var& a);
// 1 x C mean over rows.
Var mean_rows(const Var& a);
// 1 x 1 mean of all elements.
Var mean_all(const Var& a);
// mean((a - target)^2) as 1 x 1.
Var mse(const Var& a, const Mat& target);

// Multi-head scaled dot-product attention. q: Nq x C, k/v: Nk x C, C divisible
// by heads. key_mask[j] == false removes key j from every softmax.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              const std::vector<bool>* key_mask = nullptr);

// Spatial rearrangements on `batch` stacked (height*width) x C row-major grids.
// im2col column order is (ky, kx, channel); patch token column order is (dy, dx, channel).
Var im2col(const Var& x, std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride,
           std::size_t pad, std::size_t batch = 1);
Var patchify(const Var& x, std::size_t height, std::size_t width, std::size_t patch, std::size_t batch = 1);
Var unpatchify(const Var& x, std::size_t height, std::size_t width, std::size_t patch, std::size_t batch = 1);

}  // namespace animator::nn
