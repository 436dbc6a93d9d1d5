#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsdrive/errors.hpp"

namespace dsdrive {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense tensor of floating-point values with an optional gradient buffer.
// Copies share storage (handle semantics) so tape closures observe gradient
// accumulation. Verification runs use S = double; S = float is the training
// speed mode.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, S value);
  static TensorT from(Shape shape, std::vector<S> data, bool requires_grad = false);
  static TensorT scalar(S value);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }
  int64_t rank() const { return static_cast<int64_t>(d_->shape.size()); }

  // Rank-2 accessors.
  int64_t rows() const;
  int64_t cols() const;

  std::span<S> values() { return d_->v; }
  std::span<const S> values() const { return d_->v; }
  S* data() { return d_->v.data(); }
  const S* data() const { return d_->v.data(); }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool v);

  // True when a gradient buffer exists (leaf parameters and tape outputs).
  bool tracked() const { return !d_->g.empty(); }
  std::span<S> grad() { return d_->g; }
  std::span<const S> grad() const { return d_->g; }
  void ensure_grad();
  void zero_grad();

  // Value of a one-element tensor.
  S item() const;

  bool same_storage(const TensorT& other) const { return d_ == other.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<S> v;
    std::vector<S> g;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

// Reverse-mode tape: ops append a backward step as they execute; backward()
// replays them in exact reverse execution order, so each recorded op
// contributes its gradients exactly once. One writer per tape; independent
// tapes may run concurrently.
template <class S>
class TapeT {
 public:
  void record(std::function<void()> backward_step) { ops_.push_back(std::move(backward_step)); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every tracked tensor.
  void backward(TensorT<S>& loss);

  std::size_t num_ops() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

using Tensor = TensorT<double>;
using Tape = TapeT<double>;

// Decoupled-weight-decay Adam. Moments are allocated lazily (zero at step 0).
template <class S>
struct AdamWState {
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;
  int64_t step = 0;
};

template <class S>
struct AdamWConfig {
  S lr = static_cast<S>(1e-4);
  S beta1 = static_cast<S>(0.9);
  S beta2 = static_cast<S>(0.999);
  S eps = static_cast<S>(1e-8);
  S weight_decay = static_cast<S>(0.0);
};

// p <- p * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps), per parameter tensor.
template <class S>
void adamw_step(std::span<TensorT<S>> params, AdamWState<S>& state, const AdamWConfig<S>& cfg);

}  // namespace dsdrive
