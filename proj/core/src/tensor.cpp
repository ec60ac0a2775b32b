#include "bertlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "bertlab/rng.hpp"

namespace bertlab {

namespace {

uint64_t next_node_id() {
    static uint64_t counter = 0;
    return ++counter;
}

GradTape*& active_tape_slot() {
    static GradTape* tape = nullptr;
    return tape;
}

void check_rank(const Tensor& t, int64_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
    }
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
    if (GradTape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

std::vector<uint64_t> ids_of(std::initializer_list<const Tensor*> inputs) {
    std::vector<uint64_t> ids;
    ids.reserve(inputs.size());
    for (const Tensor* t : inputs) {
        if (t->defined()) ids.push_back(t->id());
    }
    return ids;
}

} // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->id = next_node_id();
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), value);
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (double& x : d) x = rng.next_gauss() * stddev;
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node()->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw ShapeError("at(): rank mismatch");
    int64_t flat = 0;
    size_t i = 0;
    for (int64_t v : idx) {
        if (v < 0 || v >= s[i]) throw ShapeError("at(): index out of range");
        flat = flat * s[i] + v;
        ++i;
    }
    return node()->data[static_cast<size_t>(flat)];
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

GradTape::GradTape() {
    if (active_tape_slot() != nullptr) {
        throw StateError("a gradient tape is already active; tapes do not nest");
    }
    active_tape_slot() = this;
}

GradTape::~GradTape() {
    active_tape_slot() = nullptr;
}

GradTape* GradTape::active() {
    return active_tape_slot();
}

void GradTape::record(const char* op, std::vector<uint64_t> input_ids,
                      const detail::NodePtr& out, std::function<void()> pull) {
    entries_.push_back(Entry{op, std::move(input_ids), out, std::move(pull)});
}

GradTape::EntryInfo GradTape::entry_info(size_t i) const {
    const Entry& e = entries_.at(i);
    return EntryInfo{e.op, e.input_ids, e.out->id};
}

void GradTape::backward(const Tensor& loss) {
    if (consumed_) throw StateError("backward() called on an already consumed tape");
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() requires a scalar loss");
    }
    consumed_ = true;
    loss.node_ptr()->ensure_grad()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        // Entries whose output was never reached keep an empty grad; their
        // upstream contribution is exactly zero, so they are skipped.
        if (it->out->grad.empty()) continue;
        it->pull();
    }
}

// ---------------------------------------------------------------------------
// gemm
// ---------------------------------------------------------------------------

namespace detail {

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    if (!trans_a && !trans_b) {
        // a: m×k, b: k×n
        for (int64_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (int64_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = b + kk * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        // a: m×k, b stored n×k
        for (int64_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double acc = 0.0;
                for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                crow[j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        // a stored k×m, b: k×n
        for (int64_t kk = 0; kk < k; ++kk) {
            const double* acol = a + kk * m;
            const double* brow = b + kk * n;
            for (int64_t i = 0; i < m; ++i) {
                const double av = acol[i];
                if (av == 0.0) continue;
                double* crow = c + i * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        throw StateError("gemm: trans_a && trans_b unsupported");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank(a, 2, "matmul");
    check_rank(b, 2, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<size_t>(m * n));
    detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
    Tensor y = make_tensor({m, n}, std::move(out), want_grad({&a, &b}));

    if (y.requires_grad()) {
        auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("matmul", ids_of({&a, &b}), yn, [an, bn, yn, m, n, k] {
            const double* dy = yn->grad.data();
            if (an->requires_grad) {
                // dA = dC · B^T
                detail::gemm(false, true, m, k, n, dy, bn->data.data(),
                             an->ensure_grad().data(), true);
            }
            if (bn->requires_grad) {
                // dB = A^T · dC
                detail::gemm(true, false, k, n, m, an->data.data(), dy,
                             bn->ensure_grad().data(), true);
            }
        });
    }
    return y;
}

Tensor transpose(const Tensor& x) {
    check_rank(x, 2, "transpose");
    const int64_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(static_cast<size_t>(r * c));
    const double* src = x.data().data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = src[i * c + j];
    Tensor y = make_tensor({c, r}, std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("transpose", ids_of({&x}), yn, [xn, yn, r, c] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const double* gy = yn->grad.data();
            for (int64_t j = 0; j < c; ++j)
                for (int64_t i = 0; i < r; ++i) gx[static_cast<size_t>(i * c + j)] += gy[j * r + i];
        });
    }
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    const double* bv = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Tensor y = make_tensor(a.shape(), std::move(out), want_grad({&a, &b}));

    if (y.requires_grad()) {
        auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("add", ids_of({&a, &b}), yn, [an, bn, yn] {
            const auto& gy = yn->grad;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v *= c;
    Tensor y = make_tensor(x.shape(), std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("scale", ids_of({&x}), yn, [xn, yn, c] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const auto& gy = yn->grad;
            for (size_t i = 0; i < gy.size(); ++i) gx[i] += c * gy[i];
        });
    }
    return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() < 1) throw ShapeError("add_bias: rank-0 input");
    const int64_t d = x.dim(x.rank() - 1);
    if (bias.numel() != d || bias.rank() > 2 ||
        (bias.rank() == 2 && bias.dim(0) != 1)) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match last dimension of " + shape_str(x.shape()));
    }
    const int64_t rows = x.numel() / d;
    std::vector<double> out(x.data().begin(), x.data().end());
    const double* bv = bias.data().data();
    for (int64_t i = 0; i < rows; ++i) {
        double* row = out.data() + i * d;
        for (int64_t j = 0; j < d; ++j) row[j] += bv[j];
    }
    Tensor y = make_tensor(x.shape(), std::move(out), want_grad({&x, &bias}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), bn = bias.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("add_bias", ids_of({&x, &bias}), yn, [xn, bn, yn, rows, d] {
            const auto& gy = yn->grad;
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i) {
                    const double* row = gy.data() + i * d;
                    for (int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += row[j];
                }
            }
        });
    }
    return y;
}

Tensor gather_rows(const Tensor& x, std::span<const int64_t> rows) {
    check_rank(x, 2, "gather_rows");
    const int64_t n = x.dim(0), d = x.dim(1);
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= n) {
            throw DataError("gather_rows: index " + std::to_string(rows[i]) +
                            " at position " + std::to_string(i) + " out of range [0," +
                            std::to_string(n) + ")");
        }
    }
    const int64_t k = static_cast<int64_t>(rows.size());
    if (k == 0) throw ShapeError("gather_rows: empty index list");
    std::vector<double> out(static_cast<size_t>(k * d));
    const double* src = x.data().data();
    for (int64_t i = 0; i < k; ++i) {
        std::memcpy(out.data() + i * d, src + rows[static_cast<size_t>(i)] * d,
                    sizeof(double) * static_cast<size_t>(d));
    }
    Tensor y = make_tensor({k, d}, std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        std::vector<int64_t> idx(rows.begin(), rows.end());
        GradTape::active()->record("gather_rows", ids_of({&x}), yn,
                                   [xn, yn, idx = std::move(idx), d] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const double* gy = yn->grad.data();
            for (size_t i = 0; i < idx.size(); ++i) {
                double* dst = gx.data() + idx[i] * d;
                const double* src = gy + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return y;
}

Tensor repeat_row(const Tensor& v, int64_t n) {
    if (n <= 0) throw ShapeError("repeat_row: n must be positive");
    if (v.rank() > 2 || (v.rank() == 2 && v.dim(0) != 1)) {
        throw ShapeError("repeat_row: expected [d] or [1,d], got " + shape_str(v.shape()));
    }
    const int64_t d = v.numel();
    std::vector<double> out(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * d, v.data().data(), sizeof(double) * static_cast<size_t>(d));
    }
    Tensor y = make_tensor({n, d}, std::move(out), want_grad({&v}));

    if (y.requires_grad()) {
        auto vn = v.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("repeat_row", ids_of({&v}), yn, [vn, yn, n, d] {
            if (!vn->requires_grad) return;
            auto& gv = vn->ensure_grad();
            const double* gy = yn->grad.data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j) gv[static_cast<size_t>(j)] += gy[i * d + j];
        });
    }
    return y;
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t width) {
    check_rank(x, 2, "slice_cols");
    const int64_t n = x.dim(0), d = x.dim(1);
    if (start < 0 || width <= 0 || start + width > d) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + width) + ") out of " + shape_str(x.shape()));
    }
    std::vector<double> out(static_cast<size_t>(n * width));
    const double* src = x.data().data();
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * width, src + i * d + start,
                    sizeof(double) * static_cast<size_t>(width));
    }
    Tensor y = make_tensor({n, width}, std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("slice_cols", ids_of({&x}), yn, [xn, yn, n, d, start, width] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const double* gy = yn->grad.data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < width; ++j) gx[static_cast<size_t>(i * d + start + j)] += gy[i * width + j];
        });
    }
    return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int64_t n = parts.front().dim(0);
    int64_t total = 0;
    bool grad = false;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) {
            throw ShapeError("concat_cols: row count mismatch at " + shape_str(p.shape()));
        }
        total += p.dim(1);
        if (GradTape::active() && p.requires_grad()) grad = true;
    }
    std::vector<double> out(static_cast<size_t>(n * total));
    int64_t off = 0;
    for (const Tensor& p : parts) {
        const int64_t w = p.dim(1);
        const double* src = p.data().data();
        for (int64_t i = 0; i < n; ++i) {
            std::memcpy(out.data() + i * total + off, src + i * w,
                        sizeof(double) * static_cast<size_t>(w));
        }
        off += w;
    }
    Tensor y = make_tensor({n, total}, std::move(out), grad);

    if (y.requires_grad()) {
        std::vector<detail::NodePtr> nodes;
        std::vector<uint64_t> ids;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node_ptr());
            ids.push_back(p.id());
        }
        auto yn = y.node_ptr();
        GradTape::active()->record("concat_cols", std::move(ids), yn,
                                   [nodes = std::move(nodes), yn, n, total] {
            const double* gy = yn->grad.data();
            int64_t off = 0;
            for (auto& pn : nodes) {
                const int64_t w = pn->shape[1];
                if (pn->requires_grad) {
                    auto& gp = pn->ensure_grad();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < w; ++j) gp[static_cast<size_t>(i * w + j)] += gy[i * total + off + j];
                }
                off += w;
            }
        });
    }
    return y;
}

Tensor softmax(const Tensor& x, int64_t axis) {
    const int64_t r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    }
    const Shape& s = x.shape();
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    const int64_t n = s[static_cast<size_t>(axis)];

    std::vector<double> out(x.data().begin(), x.data().end());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            double* base = out.data() + o * n * inner + in;
            double mx = base[0];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, base[i * inner]);
            double sum = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                double e = std::exp(base[i * inner] - mx);
                base[i * inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int64_t i = 0; i < n; ++i) base[i * inner] *= inv;
        }
    }
    Tensor y = make_tensor(x.shape(), std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("softmax", ids_of({&x}), yn, [xn, yn, outer, inner, n] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const double* yv = yn->data.data();
            const double* gy = yn->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (int64_t i = 0; i < n; ++i) {
                        const int64_t k = base + i * inner;
                        dot += yv[k] * gy[k];
                    }
                    for (int64_t i = 0; i < n; ++i) {
                        const int64_t k = base + i * inner;
                        gx[static_cast<size_t>(k)] += yv[k] * (gy[k] - dot);
                    }
                }
            }
        });
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const int64_t d = x.dim(x.rank() - 1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) +
                         " elements, got " + shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
    }
    const int64_t rows = x.numel() / d;
    std::vector<double> out(static_cast<size_t>(rows * d));
    std::vector<double> xhat(static_cast<size_t>(rows * d));
    std::vector<double> inv_std(static_cast<size_t>(rows));
    const double* xv = x.data().data();
    const double* gv = gamma.data().data();
    const double* bv = beta.data().data();
    for (int64_t i = 0; i < rows; ++i) {
        const double* row = xv + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = istd;
        for (int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * istd;
            xhat[static_cast<size_t>(i * d + j)] = h;
            out[static_cast<size_t>(i * d + j)] = h * gv[j] + bv[j];
        }
    }
    Tensor y = make_tensor(x.shape(), std::move(out), want_grad({&x, &gamma, &beta}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("layer_norm", ids_of({&x, &gamma, &beta}), yn,
                                   [xn, gn, bn, yn, xhat = std::move(xhat),
                                    inv_std = std::move(inv_std), rows, d] {
            const double* gy = yn->grad.data();
            const double* gv = gn->data.data();
            if (gn->requires_grad) {
                auto& gg = gn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += gy[i * d + j] * xhat[static_cast<size_t>(i * d + j)];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += gy[i * d + j];
            }
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const double dn = static_cast<double>(d);
                for (int64_t i = 0; i < rows; ++i) {
                    const double* gyr = gy + i * d;
                    const double* xh = xhat.data() + i * d;
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double t = gyr[j] * gv[j];
                        sum_g += t;
                        sum_gx += t * xh[j];
                    }
                    const double istd = inv_std[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < d; ++j) {
                        const double t = gyr[j] * gv[j];
                        gx[static_cast<size_t>(i * d + j)] +=
                            istd * (t - (sum_g + xh[j] * sum_gx) / dn);
                    }
                }
            }
        });
    }
    return y;
}

namespace {
constexpr double kGeluCoef = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);
} // namespace

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) {
        const double u = kSqrt2OverPi * (v + kGeluCoef * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    Tensor y = make_tensor(x.shape(), std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("gelu", ids_of({&x}), yn, [xn, yn] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const auto& gy = yn->grad;
            const auto& xv = xn->data;
            for (size_t i = 0; i < gy.size(); ++i) {
                const double v = xv[i];
                const double u = kSqrt2OverPi * (v + kGeluCoef * v * v * v);
                const double t = std::tanh(u);
                const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * v * v);
                const double deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                gx[i] += gy[i] * deriv;
            }
        });
    }
    return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int64_t> targets,
                     std::optional<int64_t> ignore_index, bool* all_ignored) {
    check_rank(logits, 2, "cross_entropy");
    const int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != n) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
    }
    for (int64_t i = 0; i < n; ++i) {
        const int64_t t = targets[static_cast<size_t>(i)];
        if (ignore_index && t == *ignore_index) continue;
        if (t < 0 || t >= c) {
            throw DataError("cross_entropy: target " + std::to_string(t) + " at row " +
                            std::to_string(i) + " outside [0," + std::to_string(c) + ")");
        }
    }

    // Softmax probabilities are saved for the backward pass.
    std::vector<double> probs(static_cast<size_t>(n * c));
    const double* lv = logits.data().data();
    double loss = 0.0;
    int64_t counted = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = lv + i * c;
        double* prow = probs.data() + i * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double e = std::exp(row[j] - mx);
            prow[j] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < c; ++j) prow[j] *= inv;
        const int64_t t = targets[static_cast<size_t>(i)];
        if (ignore_index && t == *ignore_index) continue;
        loss -= std::log(prow[t]);
        ++counted;
    }
    if (all_ignored) *all_ignored = (counted == 0);
    if (counted > 0) loss /= static_cast<double>(counted);

    Tensor y = make_tensor({1}, {loss}, want_grad({&logits}));

    if (y.requires_grad() && counted > 0) {
        auto ln = logits.node_ptr(), yn = y.node_ptr();
        std::vector<int64_t> tg(targets.begin(), targets.end());
        GradTape::active()->record("cross_entropy", ids_of({&logits}), yn,
                                   [ln, yn, probs = std::move(probs), tg = std::move(tg),
                                    ignore_index, counted, n, c] {
            if (!ln->requires_grad) return;
            auto& gx = ln->ensure_grad();
            const double g = yn->grad[0] / static_cast<double>(counted);
            for (int64_t i = 0; i < n; ++i) {
                const int64_t t = tg[static_cast<size_t>(i)];
                if (ignore_index && t == *ignore_index) continue;
                const double* prow = probs.data() + i * c;
                double* grow = gx.data() + i * c;
                for (int64_t j = 0; j < c; ++j) grow[j] += g * prow[j];
                grow[t] -= g;
            }
        });
    }
    return y;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;

    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(static_cast<size_t>(x.numel()));
    for (double& m : mask) m = rng.next_bernoulli(p) ? 0.0 : keep_scale;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    Tensor y = make_tensor(x.shape(), std::move(out), want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("dropout", ids_of({&x}), yn, [xn, yn, mask = std::move(mask)] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const auto& gy = yn->grad;
            for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
        });
    }
    return y;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor y = make_tensor({1}, {s}, want_grad({&x}));

    if (y.requires_grad()) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        GradTape::active()->record("sum", ids_of({&x}), yn, [xn, yn] {
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const double g = yn->grad[0];
            for (double& v : gx) v += g;
        });
    }
    return y;
}

uint64_t checksum(const Tensor& t) {
    return fnv1a64(t.data().data(), t.data().size() * sizeof(double));
}

bool all_finite(const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace bertlab
