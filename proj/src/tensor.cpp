#include "mwt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__SSE2__)
#include <immintrin.h>
#endif

namespace mwt {

void flush_denormals_to_zero() {
#if defined(__SSE2__)
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

constexpr double kGeluCoef = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);

[[noreturn]] void dim_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument("dimension error in " + op + ": " + detail);
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    }
    values.assign(numel(shape), fill);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

int Tensor::dim(int i) const {
    if (i < 0) i += static_cast<int>(shape.size());
    return shape.at(static_cast<std::size_t>(i));
}

int Tensor::last_dim() const {
    if (shape.empty()) throw std::invalid_argument("scalar tensor has no last dim");
    return shape.back();
}

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

TensorPtr make_tensor(std::vector<int> shape, double fill) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}

TensorPtr make_param(std::vector<int> shape, double fill) {
    auto t = std::make_shared<Tensor>(std::move(shape), fill);
    t->alloc_grad();
    return t;
}

bool all_finite(const Tensor& t) {
    for (double v : t.values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

TensorPtr Graph::record(TensorPtr out, std::function<void()> back) {
    // Grad buffers for intermediates are deferred to backward(); graphs that
    // only run forward (evaluation) never pay for them.
    nodes_.push_back({std::move(out), std::move(back)});
    return nodes_.back().out;
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() < 2 || b->shape.size() < 2) {
        dim_error("matmul", "operands must have rank >= 2");
    }
    const int m = a->dim(-2), k = a->dim(-1);
    const int kb = b->dim(-2), n = b->dim(-1);
    if (k != kb) {
        dim_error("matmul", "inner dims " + shape_str(a->shape) + " x " + shape_str(b->shape));
    }
    std::size_t batch_a = numel(a->shape) / static_cast<std::size_t>(m * k);
    std::size_t batch_b = numel(b->shape) / static_cast<std::size_t>(kb * n);
    const bool shared_b = b->shape.size() == 2;
    if (!shared_b && batch_a != batch_b) {
        dim_error("matmul", "batch dims differ: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }

    std::vector<int> out_shape(a->shape.begin(), a->shape.end() - 1);
    out_shape.push_back(n);
    auto out = make_tensor(std::move(out_shape));

    for (std::size_t i = 0; i < batch_a; ++i) {
        CMatMap A(a->values.data() + i * m * k, m, k);
        CMatMap B(b->values.data() + (shared_b ? 0 : i * k * n), k, n);
        MatMap C(out->values.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }

    return record(out, [a, b, out, m, k, n, batch_a, shared_b]() {
        for (std::size_t i = 0; i < batch_a; ++i) {
            CMatMap A(a->values.data() + i * m * k, m, k);
            CMatMap B(b->values.data() + (shared_b ? 0 : i * k * n), k, n);
            CMatMap dC(out->grad.data() + i * m * n, m, n);
            if (a->has_grad()) {
                MatMap dA(a->grad.data() + i * m * k, m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (b->has_grad()) {
                MatMap dB(b->grad.data() + (shared_b ? 0 : i * k * n), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        }
    });
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        dim_error("add", shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) {
        out->values[i] = a->values[i] + b->values[i];
    }
    return record(out, [a, b, out]() {
        if (a->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i];
        }
    });
}

TensorPtr Graph::add_bias(const TensorPtr& x, const TensorPtr& bias) {
    if (bias->shape.size() != 1 || bias->last_dim() != x->last_dim()) {
        dim_error("add_bias", shape_str(x->shape) + " vs " + shape_str(bias->shape));
    }
    const std::size_t h = static_cast<std::size_t>(x->last_dim());
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i) {
        out->values[i] = x->values[i] + bias->values[i % h];
    }
    return record(out, [x, bias, out, h]() {
        if (x->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
        }
        if (bias->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) bias->grad[i % h] += out->grad[i];
        }
    });
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        dim_error("mul", shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) {
        out->values[i] = a->values[i] * b->values[i];
    }
    return record(out, [a, b, out]() {
        if (a->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * b->values[i];
        }
        if (b->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i] * a->values[i];
        }
    });
}

TensorPtr Graph::scale(const TensorPtr& x, double c) {
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = x->values[i] * c;
    return record(out, [x, out, c]() {
        if (x->has_grad()) {
            for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i] * c;
        }
    });
}

TensorPtr Graph::gelu(const TensorPtr& x) {
    auto out = make_tensor(x->shape);
    const auto n = static_cast<Eigen::Index>(x->size());
    Eigen::Map<const Eigen::ArrayXd> v(x->values.data(), n);
    Eigen::Map<Eigen::ArrayXd> o(out->values.data(), n);
    o = 0.5 * v * (1.0 + (kSqrt2OverPi * (v + kGeluCoef * v.cube())).tanh());
    return record(out, [x, out, n]() {
        if (!x->has_grad()) return;
        Eigen::Map<const Eigen::ArrayXd> v(x->values.data(), n);
        Eigen::Map<const Eigen::ArrayXd> dy(out->grad.data(), n);
        Eigen::Map<Eigen::ArrayXd> dx(x->grad.data(), n);
        const Eigen::ArrayXd t = (kSqrt2OverPi * (v + kGeluCoef * v.cube())).tanh();
        const Eigen::ArrayXd d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * v.square());
        dx += dy * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t.square()) * d_inner);
    });
}

TensorPtr Graph::softmax(const TensorPtr& x) {
    const std::size_t h = static_cast<std::size_t>(x->last_dim());
    const std::size_t rows = x->size() / h;
    auto out = make_tensor(x->shape);
    for (std::size_t r = 0; r < rows; ++r) {
        Eigen::Map<const Eigen::ArrayXd> in(x->values.data() + r * h,
                                            static_cast<Eigen::Index>(h));
        Eigen::Map<Eigen::ArrayXd> o(out->values.data() + r * h,
                                     static_cast<Eigen::Index>(h));
        o = (in - in.maxCoeff()).exp();
        o /= o.sum();
    }
    return record(out, [x, out, h, rows]() {
        if (!x->has_grad()) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = out->values.data() + r * h;
            const double* dy = out->grad.data() + r * h;
            double* dx = x->grad.data() + r * h;
            double dot = 0.0;
            for (std::size_t j = 0; j < h; ++j) dot += y[j] * dy[j];
            for (std::size_t j = 0; j < h; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

TensorPtr Graph::layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                            const TensorPtr& beta, double eps) {
    const int h = x->last_dim();
    if (gamma->shape != std::vector<int>{h} || beta->shape != std::vector<int>{h}) {
        dim_error("layer_norm", "gamma/beta must be [" + std::to_string(h) + "]");
    }
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    if (!all_finite(*x)) throw std::domain_error("layer_norm: non-finite input");

    const std::size_t hs = static_cast<std::size_t>(h);
    const std::size_t rows = x->size() / hs;
    auto out = make_tensor(x->shape);
    // Saved per-row inverse std and normalized activations for backward.
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    auto xn = std::make_shared<std::vector<double>>(x->size());

    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x->values.data() + r * hs;
        double mean = 0.0;
        for (std::size_t j = 0; j < hs; ++j) mean += in[j];
        mean /= static_cast<double>(hs);
        double var = 0.0;
        for (std::size_t j = 0; j < hs; ++j) {
            const double d = in[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(hs);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        double* o = out->values.data() + r * hs;
        double* xr = xn->data() + r * hs;
        for (std::size_t j = 0; j < hs; ++j) {
            xr[j] = (in[j] - mean) * is;
            o[j] = gamma->values[j] * xr[j] + beta->values[j];
        }
    }

    return record(out, [x, gamma, beta, out, inv_std, xn, hs, rows]() {
        const double n = static_cast<double>(hs);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* dy = out->grad.data() + r * hs;
            const double* xr = xn->data() + r * hs;
            if (gamma->has_grad()) {
                for (std::size_t j = 0; j < hs; ++j) gamma->grad[j] += dy[j] * xr[j];
            }
            if (beta->has_grad()) {
                for (std::size_t j = 0; j < hs; ++j) beta->grad[j] += dy[j];
            }
            if (x->has_grad()) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t j = 0; j < hs; ++j) {
                    const double g = dy[j] * gamma->values[j];
                    sum_g += g;
                    sum_gx += g * xr[j];
                }
                double* dx = x->grad.data() + r * hs;
                const double is = (*inv_std)[r];
                for (std::size_t j = 0; j < hs; ++j) {
                    const double g = dy[j] * gamma->values[j];
                    dx[j] += is * (g - sum_g / n - xr[j] * sum_gx / n);
                }
            }
        }
    });
}

TensorPtr Graph::embed(const TensorPtr& table, const std::vector<int>& ids,
                       std::vector<int> out_shape) {
    if (table->shape.size() != 2) dim_error("embed", "table must be rank 2");
    const int vocab = table->dim(0);
    const std::size_t h = static_cast<std::size_t>(table->dim(1));
    out_shape.push_back(static_cast<int>(h));
    if (numel(out_shape) != ids.size() * h) {
        dim_error("embed", "id count does not match output shape");
    }
    for (int id : ids) {
        if (id < 0 || id >= vocab) {
            throw std::out_of_range("embed: id " + std::to_string(id) +
                                    " outside vocab of " + std::to_string(vocab));
        }
    }
    auto out = make_tensor(std::move(out_shape));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* row = table->values.data() + static_cast<std::size_t>(ids[i]) * h;
        std::copy(row, row + h, out->values.data() + i * h);
    }
    return record(out, [table, out, ids, h]() {
        if (!table->has_grad()) return;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* row = table->grad.data() + static_cast<std::size_t>(ids[i]) * h;
            const double* g = out->grad.data() + i * h;
            for (std::size_t j = 0; j < h; ++j) row[j] += g[j];
        }
    });
}

TensorPtr Graph::dropout(const TensorPtr& x, double p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (!train_mode_ || p == 0.0) {
        auto out = make_tensor(x->shape);
        out->values = x->values;
        return record(out, [x, out]() {
            if (!x->has_grad()) return;
            for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
        });
    }
    auto keep = std::make_shared<std::vector<double>>(x->size());
    const double inv_keep = 1.0 / (1.0 - p);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
        (*keep)[i] = (u(rng_) < p) ? 0.0 : inv_keep;
        out->values[i] = x->values[i] * (*keep)[i];
    }
    return record(out, [x, out, keep]() {
        if (!x->has_grad()) return;
        for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i] * (*keep)[i];
    });
}

TensorPtr Graph::reshape(const TensorPtr& x, std::vector<int> new_shape) {
    if (numel(new_shape) != x->size()) {
        dim_error("reshape", shape_str(x->shape) + " -> " + shape_str(new_shape));
    }
    auto out = make_tensor(std::move(new_shape));
    out->values = x->values;
    return record(out, [x, out]() {
        if (!x->has_grad()) return;
        for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
    });
}

TensorPtr Graph::transpose_last2(const TensorPtr& x) {
    if (x->shape.size() < 2) dim_error("transpose_last2", "rank must be >= 2");
    const std::size_t m = static_cast<std::size_t>(x->dim(-2));
    const std::size_t n = static_cast<std::size_t>(x->dim(-1));
    const std::size_t batch = x->size() / (m * n);
    std::vector<int> out_shape = x->shape;
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    auto out = make_tensor(std::move(out_shape));
    for (std::size_t b = 0; b < batch; ++b) {
        const double* in = x->values.data() + b * m * n;
        double* o = out->values.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) o[j * m + i] = in[i * n + j];
    }
    return record(out, [x, out, m, n, batch]() {
        if (!x->has_grad()) return;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = out->grad.data() + b * m * n;
            double* dx = x->grad.data() + b * m * n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += g[j * m + i];
        }
    });
}

TensorPtr Graph::swap_axes_1_2(const TensorPtr& x) {
    if (x->shape.size() != 4) dim_error("swap_axes_1_2", "rank must be 4");
    const std::size_t b = static_cast<std::size_t>(x->dim(0));
    const std::size_t s = static_cast<std::size_t>(x->dim(1));
    const std::size_t a = static_cast<std::size_t>(x->dim(2));
    const std::size_t d = static_cast<std::size_t>(x->dim(3));
    auto out = make_tensor({static_cast<int>(b), static_cast<int>(a),
                            static_cast<int>(s), static_cast<int>(d)});
    auto idx_in = [s, a, d](std::size_t bi, std::size_t si, std::size_t ai) {
        return ((bi * s + si) * a + ai) * d;
    };
    auto idx_out = [s, a, d](std::size_t bi, std::size_t si, std::size_t ai) {
        return ((bi * a + ai) * s + si) * d;
    };
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t si = 0; si < s; ++si)
            for (std::size_t ai = 0; ai < a; ++ai) {
                std::copy_n(x->values.data() + idx_in(bi, si, ai), d,
                            out->values.data() + idx_out(bi, si, ai));
            }
    return record(out, [x, out, b, s, a, d, idx_in, idx_out]() {
        if (!x->has_grad()) return;
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t si = 0; si < s; ++si)
                for (std::size_t ai = 0; ai < a; ++ai) {
                    const double* g = out->grad.data() + idx_out(bi, si, ai);
                    double* dx = x->grad.data() + idx_in(bi, si, ai);
                    for (std::size_t j = 0; j < d; ++j) dx[j] += g[j];
                }
    });
}

TensorPtr Graph::attention_mask_bias(const TensorPtr& scores,
                                     const std::vector<int>& mask) {
    if (scores->shape.size() != 4) dim_error("attention_mask_bias", "scores must be rank 4");
    const std::size_t b = static_cast<std::size_t>(scores->dim(0));
    const std::size_t s = static_cast<std::size_t>(scores->dim(3));
    if (mask.size() != b * s) dim_error("attention_mask_bias", "mask must be [B,S]");
    const std::size_t inner = scores->size() / b;  // A*S*S per batch element
    auto out = make_tensor(scores->shape);
    for (std::size_t bi = 0; bi < b; ++bi) {
        const double* in = scores->values.data() + bi * inner;
        double* o = out->values.data() + bi * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            o[i] = in[i] + (mask[bi * s + i % s] ? 0.0 : -1e9);
        }
    }
    return record(out, [scores, out]() {
        if (!scores->has_grad()) return;
        for (std::size_t i = 0; i < out->size(); ++i) scores->grad[i] += out->grad[i];
    });
}

TensorPtr Graph::select_token0(const TensorPtr& x) {
    if (x->shape.size() != 3) dim_error("select_token0", "input must be [B,S,H]");
    const std::size_t b = static_cast<std::size_t>(x->dim(0));
    const std::size_t s = static_cast<std::size_t>(x->dim(1));
    const std::size_t h = static_cast<std::size_t>(x->dim(2));
    auto out = make_tensor({static_cast<int>(b), static_cast<int>(h)});
    for (std::size_t bi = 0; bi < b; ++bi) {
        std::copy_n(x->values.data() + bi * s * h, h, out->values.data() + bi * h);
    }
    return record(out, [x, out, b, s, h]() {
        if (!x->has_grad()) return;
        for (std::size_t bi = 0; bi < b; ++bi) {
            const double* g = out->grad.data() + bi * h;
            double* dx = x->grad.data() + bi * s * h;
            for (std::size_t j = 0; j < h; ++j) dx[j] += g[j];
        }
    });
}

TensorPtr Graph::sum_all(const TensorPtr& x) {
    auto out = make_tensor(std::vector<int>{1});
    out->values[0] = std::accumulate(x->values.begin(), x->values.end(), 0.0);
    return record(out, [x, out]() {
        if (!x->has_grad()) return;
        for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0];
    });
}

TensorPtr Graph::softmax_cross_entropy(const TensorPtr& logits,
                                       const std::vector<int>& gold,
                                       int ignore_index) {
    if (logits->shape.size() != 2) dim_error("softmax_cross_entropy", "logits must be [N,C]");
    const std::size_t n = static_cast<std::size_t>(logits->dim(0));
    const std::size_t c = static_cast<std::size_t>(logits->dim(1));
    if (gold.size() != n) dim_error("softmax_cross_entropy", "gold length != batch");
    std::size_t counted = 0;
    for (int g : gold) {
        if (g == ignore_index) continue;
        if (g < 0 || g >= static_cast<int>(c)) {
            throw std::out_of_range("softmax_cross_entropy: gold id " + std::to_string(g) +
                                    " outside [0," + std::to_string(c) + ")");
        }
        ++counted;
    }
    if (counted == 0) throw std::invalid_argument("softmax_cross_entropy: all rows ignored");

    auto probs = std::make_shared<std::vector<double>>(logits->size());
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = logits->values.data() + r * c;
        double* p = probs->data() + r * c;
        const double mx = *std::max_element(in, in + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            p[j] = std::exp(in[j] - mx);
            sum += p[j];
        }
        for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
        if (gold[r] != ignore_index) {
            loss -= std::log(std::max(p[static_cast<std::size_t>(gold[r])], 1e-300));
        }
    }
    auto out = make_tensor(std::vector<int>{1});
    out->values[0] = loss / static_cast<double>(counted);

    return record(out, [logits, out, probs, gold, ignore_index, n, c, counted]() {
        if (!logits->has_grad()) return;
        const double scale = out->grad[0] / static_cast<double>(counted);
        for (std::size_t r = 0; r < n; ++r) {
            if (gold[r] == ignore_index) continue;
            const double* p = probs->data() + r * c;
            double* dl = logits->grad.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) {
                const double onehot = (static_cast<int>(j) == gold[r]) ? 1.0 : 0.0;
                dl[j] += scale * (p[j] - onehot);
            }
        }
    });
}

TensorPtr Graph::mse_loss(const TensorPtr& pred, const std::vector<double>& target) {
    if (pred->size() != target.size()) {
        dim_error("mse_loss", "pred and target lengths differ");
    }
    const double n = static_cast<double>(pred->size());
    double loss = 0.0;
    for (std::size_t i = 0; i < pred->size(); ++i) {
        const double d = pred->values[i] - target[i];
        loss += d * d;
    }
    auto out = make_tensor(std::vector<int>{1});
    out->values[0] = loss / n;
    return record(out, [pred, out, target, n]() {
        if (!pred->has_grad()) return;
        for (std::size_t i = 0; i < pred->size(); ++i) {
            pred->grad[i] += out->grad[0] * 2.0 * (pred->values[i] - target[i]) / n;
        }
    });
}

void Graph::backward(const TensorPtr& loss) {
    if (loss->size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (backward_done_) throw std::logic_error("backward: already run on this graph");
    backward_done_ = true;
    for (auto& node : nodes_) node.out->alloc_grad();
    loss->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->back();
    }
}

}  // namespace mwt
