#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace mwt {

/// 64-byte-aligned allocator for tensor storage. Eigen's vectorized kernels
/// peel differently-aligned array heads in a different order, so summation
/// rounding would otherwise depend on where the heap happened to place a
/// buffer — breaking byte-identical reruns. Fixing the alignment fixes the
/// evaluation order.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

using AlignedVec = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of 64-bit floats. `grad` is allocated only on
/// parameters and graph intermediates; constants leave it empty.
struct Tensor {
    std::vector<int> shape;
    AlignedVec values;
    AlignedVec grad;

    Tensor() = default;
    Tensor(std::vector<int> s, double fill = 0.0);

    std::size_t size() const { return values.size(); }
    bool has_grad() const { return !grad.empty(); }
    void alloc_grad() { grad.assign(values.size(), 0.0); }
    void zero_grad();
    int dim(int i) const;
    int last_dim() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape, double fill = 0.0);
TensorPtr make_param(std::vector<int> shape, double fill = 0.0);

std::size_t numel(const std::vector<int>& shape);
bool all_finite(const Tensor& t);
std::string shape_str(const std::vector<int>& shape);

/// Flushes subnormal floats to zero for the calling thread. Gradients decay
/// into the subnormal range after a few optimizer steps, and subnormal
/// arithmetic runs orders of magnitude slower on x86; flushing keeps the
/// backward pass fast with no measurable effect on training.
void flush_denormals_to_zero();

/// Recorded computation tape. Ops append nodes in topological order;
/// backward() walks them once in reverse. One backward per forward: a
/// second call without a new tape is an error.
class Graph {
public:
    explicit Graph(bool train_mode = false, std::uint64_t dropout_seed = 0)
        : train_mode_(train_mode), rng_(dropout_seed) {
        flush_denormals_to_zero();
    }

    bool train_mode() const { return train_mode_; }

    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr add_bias(const TensorPtr& x, const TensorPtr& bias);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr scale(const TensorPtr& x, double c);
    TensorPtr gelu(const TensorPtr& x);
    TensorPtr softmax(const TensorPtr& x);
    TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                         const TensorPtr& beta, double eps);
    TensorPtr embed(const TensorPtr& table, const std::vector<int>& ids,
                    std::vector<int> out_shape);
    TensorPtr dropout(const TensorPtr& x, double p);
    TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape);
    TensorPtr transpose_last2(const TensorPtr& x);
    /// [B,S,A,D] -> [B,A,S,D] and back (its own inverse on the swapped shape).
    TensorPtr swap_axes_1_2(const TensorPtr& x);
    /// Adds -1e9 to attention scores [B,A,S,S] at key positions where mask==0.
    TensorPtr attention_mask_bias(const TensorPtr& scores,
                                  const std::vector<int>& mask);
    /// x[B,S,H] -> x[:,0,:] as [B,H].
    TensorPtr select_token0(const TensorPtr& x);
    TensorPtr sum_all(const TensorPtr& x);

    /// Mean over rows with gold != ignore_index of -log softmax(row)[gold].
    TensorPtr softmax_cross_entropy(const TensorPtr& logits,
                                    const std::vector<int>& gold,
                                    int ignore_index = -1);
    TensorPtr mse_loss(const TensorPtr& pred, const std::vector<double>& target);

    void backward(const TensorPtr& loss);

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        TensorPtr out;
        std::function<void()> back;
    };

    TensorPtr record(TensorPtr out, std::function<void()> back);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
    bool train_mode_ = false;
    std::mt19937_64 rng_;
};

}  // namespace mwt
