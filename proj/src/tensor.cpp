#include "dsdrive/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dsdrive {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

template <class S>
TensorT<S> TensorT<S>::zeros(Shape shape, bool requires_grad) {
  TensorT t;
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->v.assign(static_cast<std::size_t>(shape_numel(t.d_->shape)), S{0});
  t.d_->requires_grad = requires_grad;
  if (requires_grad) t.d_->g.assign(t.d_->v.size(), S{0});
  return t;
}

template <class S>
TensorT<S> TensorT<S>::full(Shape shape, S value) {
  TensorT t = zeros(std::move(shape));
  for (auto& x : t.d_->v) x = value;
  return t;
}

template <class S>
TensorT<S> TensorT<S>::from(Shape shape, std::vector<S> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("tensor data of length " + std::to_string(data.size()) +
                     " does not fill shape " + shape_str(shape));
  }
  TensorT t;
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->v = std::move(data);
  t.d_->requires_grad = requires_grad;
  if (requires_grad) t.d_->g.assign(t.d_->v.size(), S{0});
  return t;
}

template <class S>
TensorT<S> TensorT<S>::scalar(S value) {
  return from({1}, {value});
}

template <class S>
int64_t TensorT<S>::rows() const {
  if (rank() != 2) throw ShapeError("rows() needs a rank-2 tensor, got " + shape_str(shape()));
  return shape()[0];
}

template <class S>
int64_t TensorT<S>::cols() const {
  if (rank() != 2) throw ShapeError("cols() needs a rank-2 tensor, got " + shape_str(shape()));
  return shape()[1];
}

template <class S>
void TensorT<S>::set_requires_grad(bool v) {
  d_->requires_grad = v;
  if (v) ensure_grad();
  if (!v) d_->g.clear();
}

template <class S>
void TensorT<S>::ensure_grad() {
  if (d_->g.empty()) d_->g.assign(d_->v.size(), S{0});
}

template <class S>
void TensorT<S>::zero_grad() {
  for (auto& g : d_->g) g = S{0};
}

template <class S>
S TensorT<S>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_str(shape()));
  return d_->v[0];
}

template <class S>
void TapeT<S>::backward(TensorT<S>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.tracked()) {
    throw Error("backward on a loss that is not tracked by this tape");
  }
  loss.grad()[0] = S{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

template <class S>
void adamw_step(std::span<TensorT<S>> params, AdamWState<S>& state, const AdamWConfig<S>& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<std::size_t>(params[i].numel()), S{0});
      state.v[i].assign(static_cast<std::size_t>(params[i].numel()), S{0});
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("optimizer state holds " + std::to_string(state.m.size()) +
                     " tensors but " + std::to_string(params.size()) + " parameters were given");
  }
  state.step += 1;
  const S bc1 = S{1} - static_cast<S>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step)));
  const S bc2 = S{1} - static_cast<S>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) {
      throw ShapeError("optimizer moment " + std::to_string(i) + " has length " +
                       std::to_string(m.size()) + ", parameter has " + std::to_string(p.size()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const S gj = g.empty() ? S{0} : g[j];
      m[j] = cfg.beta1 * m[j] + (S{1} - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (S{1} - cfg.beta2) * gj * gj;
      const S m_hat = m[j] / bc1;
      const S v_hat = v[j] / bc2;
      p[j] = p[j] * (S{1} - cfg.lr * cfg.weight_decay) -
             cfg.lr * m_hat / (static_cast<S>(std::sqrt(static_cast<double>(v_hat))) + cfg.eps);
    }
  }
}

template class TensorT<double>;
template class TensorT<float>;
template class TapeT<double>;
template class TapeT<float>;
template void adamw_step<double>(std::span<TensorT<double>>, AdamWState<double>&, const AdamWConfig<double>&);
template void adamw_step<float>(std::span<TensorT<float>>, AdamWState<float>&, const AdamWConfig<float>&);

}  // namespace dsdrive
