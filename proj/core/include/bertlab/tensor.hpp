#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bertlab/error.hpp"
#include "bertlab/rng.hpp"

namespace bertlab {

class Rng;

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty means "never touched by backward"
    bool requires_grad = false;
    uint64_t id = 0;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

} // namespace detail

/// Dense row-major tensor of doubles. Value-semantic handle to a shared node;
/// nodes are immutable after creation except for gradient accumulation and
/// the optimizer's documented in-place parameter updates.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    /// Gaussian init, mean 0. Consumes numel draws from rng in row-major order.
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node()->shape; }
    int64_t numel() const { return static_cast<int64_t>(node()->data.size()); }
    int64_t rank() const { return static_cast<int64_t>(node()->shape.size()); }
    int64_t dim(int64_t i) const { return node()->shape[static_cast<size_t>(i)]; }
    uint64_t id() const { return node()->id; }

    std::span<const double> data() const { return node()->data; }
    /// In-place mutation hook for the optimizer; not for general use.
    std::span<double> mutable_data() { return node()->data; }

    bool requires_grad() const { return node()->requires_grad; }
    bool has_grad() const { return !node()->grad.empty(); }
    std::span<const double> grad() const { return node()->grad; }
    void zero_grad() { node()->grad.clear(); }

    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    detail::NodePtr node_ptr() const { return node_; }

private:
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
    detail::TensorNode* node() const {
        if (!node_) throw StateError("use of undefined tensor");
        return node_.get();
    }
    detail::NodePtr node_;

    friend class GradTape;
    friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad);

/// Reverse-mode gradient tape. Constructing one makes it the active tape;
/// ops executed while a tape is active and touching a requires_grad input
/// append one entry each. Entries are created in execution order, so every
/// entry's inputs precede its output. backward() may run once per tape.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    /// Reverse-topological accumulation from a scalar loss (seed gradient 1).
    /// Throws StateError on a second call.
    void backward(const Tensor& loss);

    size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    struct EntryInfo {
        const char* op;
        std::vector<uint64_t> input_ids;
        uint64_t output_id;
    };
    EntryInfo entry_info(size_t i) const;

    static GradTape* active();

    void record(const char* op, std::vector<uint64_t> input_ids,
                const detail::NodePtr& out, std::function<void()> pull);

private:
    struct Entry {
        const char* op;
        std::vector<uint64_t> input_ids;
        detail::NodePtr out;
        std::function<void()> pull;
    };
    std::vector<Entry> entries_;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable operations.
// ---------------------------------------------------------------------------

/// C[m×n] = A[m×k] · B[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x);

/// Elementwise sum; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);

/// x[..., d] + bias[d], broadcast over all leading dimensions. The only
/// broadcasting form in the library.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Select rows of x[n×d] by index; duplicates allowed (backward scatter-adds).
Tensor gather_rows(const Tensor& x, std::span<const int64_t> rows);

/// v[d] or v[1×d] replicated into [n×d].
Tensor repeat_row(const Tensor& v, int64_t n);

Tensor slice_cols(const Tensor& x, int64_t start, int64_t width);

Tensor concat_cols(const std::vector<Tensor>& parts);

/// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int64_t axis = -1);

/// Per-row normalization over the last dimension, then affine by gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12);

/// tanh-approximation GELU.
Tensor gelu(const Tensor& x);

/// Mean negative log-softmax over rows whose target != ignore_index.
/// Rows with the ignore target contribute zero loss and zero gradient.
/// If every row is ignored the loss is zero and *all_ignored is set.
Tensor cross_entropy(const Tensor& logits, std::span<const int64_t> targets,
                     std::optional<int64_t> ignore_index = std::nullopt,
                     bool* all_ignored = nullptr);

/// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
/// Identity when !training or p == 0. Requires 0 <= p < 1.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

/// Sum of all elements, as a scalar (shape [1]) tensor.
Tensor sum(const Tensor& x);

/// FNV-1a over the raw data bytes.
uint64_t checksum(const Tensor& t);

bool all_finite(const Tensor& t);

namespace detail {
/// C[m×n] (+)= op(A)·op(B), plain deterministic loops. trans_a/trans_b select
/// whether the stored matrix is interpreted transposed. trans_a && trans_b is
/// unsupported.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, const double* b, double* c, bool accumulate);
} // namespace detail

} // namespace bertlab
