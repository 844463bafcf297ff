#include "animator/autograd.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "animator/error.hpp"

namespace animator::nn {

namespace {

Var make(Mat value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) n->needs_grad = n->needs_grad || p->needs_grad;
    if (n->needs_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(bw);
    }
    return n;
}

template <typename Derived>
void accumulate(Node& n, const Eigen::MatrixBase<Derived>& g) {
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) {
        throw ShapeError(std::string(op) + ": " + std::to_string(a->rows()) + "x" + std::to_string(a->cols()) + " vs " +
                         std::to_string(b->rows()) + "x" + std::to_string(b->cols()));
    }
}

}  // namespace

Var constant(Mat value) { return make(std::move(value), {}, nullptr); }

Var param(Parameter& p) {
    auto n = std::make_shared<Node>();
    n->value = p.value;
    n->param = &p;
    n->needs_grad = p.trainable;
    return n;
}

void backward(const Var& root) {
    if (root->rows() != 1 || root->cols() != 1) throw ShapeError("backward root must be 1 x 1");
    if (!root->needs_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad = Mat::Ones(1, 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->grad.size() == 0) continue;
        if (n->backward) n->backward(*n);
        if (n->param) {
            if (n->param->grad.size() == 0) n->param->zero_grad();
            n->param->grad += n->grad;
        }
    }
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    return make(a->value + b->value, {a, b}, [a, b](Node& n) {
        accumulate(*a, n.grad);
        accumulate(*b, n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    return make(a->value - b->value, {a, b}, [a, b](Node& n) {
        accumulate(*a, n.grad);
        accumulate(*b, -n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    return make(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
        accumulate(*a, n.grad.cwiseProduct(b->value));
        accumulate(*b, n.grad.cwiseProduct(a->value));
    });
}

Var scale(const Var& a, double s) {
    return make(a->value * s, {a}, [a, s](Node& n) { accumulate(*a, n.grad * s); });
}

Var divide(const Var& a, const Var& b) {
    if (a->rows() != 1 || a->cols() != 1 || b->rows() != 1 || b->cols() != 1) throw ShapeError("divide: operands must be 1 x 1");
    const double x = a->scalar(), y = b->scalar();
    if (y == 0.0) throw NumericError("divide: zero denominator");
    return make(Mat::Constant(1, 1, x / y), {a, b}, [a, b, x, y](Node& n) {
        const double g = n.grad(0, 0);
        accumulate(*a, Mat::Constant(1, 1, g / y));
        accumulate(*b, Mat::Constant(1, 1, -g * x / (y * y)));
    });
}

Var add_row(const Var& a, const Var& row) {
    if (row->rows() != 1 || row->cols() != a->cols()) throw ShapeError("add_row: row vector width mismatch");
    Mat out = a->value;
    out.rowwise() += row->value.row(0);
    return make(std::move(out), {a, row}, [a, row](Node& n) {
        accumulate(*a, n.grad);
        accumulate(*row, n.grad.colwise().sum());
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a->cols() != b->rows()) {
        throw ShapeError("matmul: " + std::to_string(a->rows()) + "x" + std::to_string(a->cols()) + " * " +
                         std::to_string(b->rows()) + "x" + std::to_string(b->cols()));
    }
    Mat out = a->value * b->value;
    return make(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->needs_grad) accumulate(*a, n.grad * b->value.transpose());
        if (b->needs_grad) accumulate(*b, a->value.transpose() * n.grad);
    });
}

Var silu(const Var& a) {
    Mat sig = (1.0 + (-a->value.array()).exp()).inverse().matrix();
    Mat out = a->value.cwiseProduct(sig);
    return make(std::move(out), {a}, [a, sig](Node& n) {
        // d/dx x*sig(x) = sig * (1 + x * (1 - sig))
        Mat d = sig.array() * (1.0 + a->value.array() * (1.0 - sig.array()));
        accumulate(*a, n.grad.cwiseProduct(d));
    });
}

Var tanh(const Var& a) {
    Mat out = a->value.array().tanh().matrix();
    return make(out, {a}, [a, out](Node& n) {
        accumulate(*a, n.grad.cwiseProduct((1.0 - out.array().square()).matrix()));
    });
}

Var layer_norm(const Var& a, double eps) {
    const auto cols = static_cast<double>(a->cols());
    Mat y(a->rows(), a->cols());
    Eigen::VectorXd inv_std(a->rows());
    for (Eigen::Index r = 0; r < a->rows(); ++r) {
        const double mean = a->value.row(r).mean();
        const double var = (a->value.row(r).array() - mean).square().sum() / cols;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        y.row(r) = (a->value.row(r).array() - mean) * inv_std[r];
    }
    return make(y, {a}, [a, y, inv_std, cols](Node& n) {
        Mat dx(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            const double mdy = n.grad.row(r).sum() / cols;
            const double mdyy = n.grad.row(r).dot(y.row(r)) / cols;
            dx.row(r) = inv_std[r] * (n.grad.row(r).array() - mdy - y.row(r).array() * mdyy);
        }
        accumulate(*a, dx);
    });
}

Var modulate(const Var& x, const Var& shift, const Var& scale_row) {
    if (shift->rows() != 1 || scale_row->rows() != 1 || shift->cols() != x->cols() || scale_row->cols() != x->cols()) {
        throw ShapeError("modulate: shift/scale must be 1 x C");
    }
    Mat factor = (scale_row->value.array() + 1.0).matrix();
    Mat out = x->value;
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(factor.row(0)) + shift->value.row(0);
    return make(std::move(out), {x, shift, scale_row}, [x, shift, scale_row, factor](Node& n) {
        if (x->needs_grad) {
            Mat dx = n.grad;
            for (Eigen::Index r = 0; r < dx.rows(); ++r) dx.row(r) = dx.row(r).cwiseProduct(factor.row(0));
            accumulate(*x, dx);
        }
        accumulate(*shift, n.grad.colwise().sum());
        if (scale_row->needs_grad) accumulate(*scale_row, n.grad.cwiseProduct(x->value).colwise().sum());
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0]->cols();
    for (const auto& p : parts) {
        if (p->cols() != cols) throw ShapeError("concat_rows: column count mismatch");
        rows += p->rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p->rows()) = p->value;
        r += p->rows();
    }
    return make(std::move(out), parts, [parts](Node& n) {
        Eigen::Index r0 = 0;
        for (const auto& p : parts) {
            if (p->needs_grad) accumulate(*p, n.grad.middleRows(r0, p->rows()));
            r0 += p->rows();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const Eigen::Index rows = parts[0]->rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw ShapeError("concat_cols: row count mismatch");
        cols += p->cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p->cols()) = p->value;
        c += p->cols();
    }
    return make(std::move(out), parts, [parts](Node& n) {
        Eigen::Index c0 = 0;
        for (const auto& p : parts) {
            if (p->needs_grad) accumulate(*p, n.grad.middleCols(c0, p->cols()));
            c0 += p->cols();
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
    if (begin < 0 || count < 0 || begin + count > a->rows()) throw ShapeError("slice_rows out of range");
    return make(a->value.middleRows(begin, count), {a}, [a, begin, count](Node& n) {
        Mat g = Mat::Zero(a->rows(), a->cols());
        g.middleRows(begin, count) = n.grad;
        accumulate(*a, g);
    });
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count) {
    if (begin < 0 || count < 0 || begin + count > a->cols()) throw ShapeError("slice_cols out of range");
    return make(a->value.middleCols(begin, count), {a}, [a, begin, count](Node& n) {
        Mat g = Mat::Zero(a->rows(), a->cols());
        g.middleCols(begin, count) = n.grad;
        accumulate(*a, g);
    });
}

Var transpose(const Var& a) {
    return make(a->value.transpose(), {a}, [a](Node& n) { accumulate(*a, n.grad.transpose()); });
}

Var mean_rows(const Var& a) {
    const auto rows = a->rows();
    if (rows == 0) throw ShapeError("mean_rows of empty matrix");
    return make(a->value.colwise().mean(), {a}, [a, rows](Node& n) {
        Mat g(rows, a->cols());
        g.rowwise() = n.grad.row(0) / static_cast<double>(rows);
        accumulate(*a, g);
    });
}

Var mean_all(const Var& a) {
    const auto size = static_cast<double>(a->value.size());
    Mat out(1, 1);
    out(0, 0) = a->value.sum() / size;
    return make(std::move(out), {a}, [a, size](Node& n) {
        accumulate(*a, Mat::Constant(a->rows(), a->cols(), n.grad(0, 0) / size));
    });
}

Var mse(const Var& a, const Mat& target) {
    if (a->rows() != target.rows() || a->cols() != target.cols()) throw ShapeError("mse: shape mismatch");
    Mat diff = a->value - target;
    const auto size = static_cast<double>(diff.size());
    Mat out(1, 1);
    out(0, 0) = diff.squaredNorm() / size;
    return make(std::move(out), {a}, [a, diff, size](Node& n) { accumulate(*a, diff * (2.0 * n.grad(0, 0) / size)); });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, const std::vector<bool>* key_mask) {
    const Eigen::Index nq = q->rows(), nk = k->rows(), c = q->cols();
    if (k->cols() != c || v->cols() != c || v->rows() != nk) throw ShapeError("attention: q/k/v widths or key counts differ");
    if (heads == 0 || c % static_cast<Eigen::Index>(heads) != 0) throw ShapeError("attention: width not divisible by heads");
    if (key_mask && key_mask->size() != static_cast<std::size_t>(nk)) throw ShapeError("attention: key mask length mismatch");
    const Eigen::Index d = c / static_cast<Eigen::Index>(heads);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<Mat> probs(heads);
    Mat out(nq, c);
    for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * d;
        Mat s = (q->value.middleCols(c0, d) * k->value.middleCols(c0, d).transpose()) * inv_sqrt_d;
        if (key_mask) {
            for (Eigen::Index j = 0; j < nk; ++j) {
                if (!(*key_mask)[static_cast<std::size_t>(j)]) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
            }
        }
        for (Eigen::Index i = 0; i < nq; ++i) {
            const double m = s.row(i).maxCoeff();
            if (!std::isfinite(m)) throw NumericError("attention row has no admissible key");
            s.row(i) = (s.row(i).array() - m).exp();
            s.row(i) /= s.row(i).sum();
        }
        out.middleCols(c0, d) = s * v->value.middleCols(c0, d);
        probs[h] = std::move(s);
    }

    return make(std::move(out), {q, k, v}, [q, k, v, probs, d, inv_sqrt_d](Node& n) {
        Mat dq = Mat::Zero(q->rows(), q->cols());
        Mat dk = Mat::Zero(k->rows(), k->cols());
        Mat dv = Mat::Zero(v->rows(), v->cols());
        for (std::size_t h = 0; h < probs.size(); ++h) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * d;
            const Mat& p = probs[h];
            const auto go = n.grad.middleCols(c0, d);
            dv.middleCols(c0, d) = p.transpose() * go;
            Mat dp = go * v->value.middleCols(c0, d).transpose();
            Eigen::VectorXd rowdot = (dp.cwiseProduct(p)).rowwise().sum();
            Mat ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_sqrt_d;
            dq.middleCols(c0, d) = ds * k->value.middleCols(c0, d);
            dk.middleCols(c0, d) = ds.transpose() * q->value.middleCols(c0, d);
        }
        accumulate(*q, dq);
        accumulate(*k, dk);
        accumulate(*v, dv);
    });
}

Var im2col(const Var& x, std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride, std::size_t pad,
           std::size_t batch) {
    if (batch == 0 || static_cast<std::size_t>(x->rows()) != batch * height * width) {
        throw ShapeError("im2col: rows != batch*height*width");
    }
    if (kernel == 0 || stride == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel) {
        throw ShapeError("im2col: invalid kernel/stride/padding");
    }
    const std::size_t ho = (height + 2 * pad - kernel) / stride + 1;
    const std::size_t wo = (width + 2 * pad - kernel) / stride + 1;
    const Eigen::Index c = x->cols();
    // Source row for every (output row, kernel tap), -1 for padding.
    std::vector<long> src(batch * ho * wo * kernel * kernel, -1);
    for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox)
            for (std::size_t ky = 0; ky < kernel; ++ky)
                for (std::size_t kx = 0; kx < kernel; ++kx) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(height) || ix >= static_cast<long>(width)) continue;
                    src[(((b * ho + oy) * wo + ox) * kernel + ky) * kernel + kx] =
                        static_cast<long>(b * height * width) + iy * static_cast<long>(width) + ix;
                }
    const std::size_t taps = kernel * kernel;
    Mat out = Mat::Zero(static_cast<Eigen::Index>(batch * ho * wo), static_cast<Eigen::Index>(taps) * c);
    for (std::size_t r = 0; r < batch * ho * wo; ++r)
        for (std::size_t t = 0; t < taps; ++t) {
            const long s = src[r * taps + t];
            if (s >= 0) out.block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t) * c, 1, c) = x->value.row(s);
        }
    return make(std::move(out), {x}, [x, src, taps, c](Node& n) {
        Mat g = Mat::Zero(x->rows(), x->cols());
        const std::size_t rows = static_cast<std::size_t>(n.grad.rows());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t t = 0; t < taps; ++t) {
                const long s = src[r * taps + t];
                if (s >= 0) g.row(s) += n.grad.block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t) * c, 1, c);
            }
        accumulate(*x, g);
    });
}

namespace {

// Row permutation between (h*w) x C grids and (h/p*w/p) x (p*p*C) token rows.
// Returns, for each (token, sub-position), the source grid row.
std::vector<Eigen::Index> patch_index(std::size_t height, std::size_t width, std::size_t patch, std::size_t batch) {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
        throw ShapeError("patch " + std::to_string(patch) + " must divide " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    const std::size_t ph = height / patch, pw = width / patch;
    std::vector<Eigen::Index> idx;
    idx.reserve(batch * height * width);
    for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t Y = 0; Y < ph; ++Y)
        for (std::size_t X = 0; X < pw; ++X)
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    idx.push_back(static_cast<Eigen::Index>(b * height * width + (Y * patch + dy) * width + X * patch + dx));
    return idx;
}

void to_patches(const Mat& grid, Mat& tokens, const std::vector<Eigen::Index>& idx, std::size_t sub) {
    const Eigen::Index c = grid.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        tokens.block(static_cast<Eigen::Index>(i / sub), static_cast<Eigen::Index>(i % sub) * c, 1, c) = grid.row(idx[i]);
    }
}

void from_patches(const Mat& tokens, Mat& grid, const std::vector<Eigen::Index>& idx, std::size_t sub) {
    const Eigen::Index c = grid.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        grid.row(idx[i]) = tokens.block(static_cast<Eigen::Index>(i / sub), static_cast<Eigen::Index>(i % sub) * c, 1, c);
    }
}

}  // namespace

Var patchify(const Var& x, std::size_t height, std::size_t width, std::size_t patch, std::size_t batch) {
    if (static_cast<std::size_t>(x->rows()) != batch * height * width) throw ShapeError("patchify: rows != batch*height*width");
    auto idx = patch_index(height, width, patch, batch);
    const std::size_t sub = patch * patch;
    const Eigen::Index c = x->cols();
    Mat out(static_cast<Eigen::Index>(batch * height * width / sub), static_cast<Eigen::Index>(sub) * c);
    to_patches(x->value, out, idx, sub);
    return make(std::move(out), {x}, [x, idx, sub](Node& n) {
        Mat g(x->rows(), x->cols());
        from_patches(n.grad, g, idx, sub);
        accumulate(*x, g);
    });
}

Var unpatchify(const Var& x, std::size_t height, std::size_t width, std::size_t patch, std::size_t batch) {
    auto idx = patch_index(height, width, patch, batch);
    const std::size_t sub = patch * patch;
    if (static_cast<std::size_t>(x->rows()) * sub != batch * height * width || x->cols() % static_cast<Eigen::Index>(sub) != 0) {
        throw ShapeError("unpatchify: token grid does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    const Eigen::Index c = x->cols() / static_cast<Eigen::Index>(sub);
    Mat out(static_cast<Eigen::Index>(batch * height * width), c);
    from_patches(x->value, out, idx, sub);
    return make(std::move(out), {x}, [x, idx, sub](Node& n) {
        Mat g(x->rows(), x->cols());
        to_patches(n.grad, g, idx, sub);
        accumulate(*x, g);
    });
}

}  // namespace animator::nn
