#define EIGEN_DONT_PARALLELIZE
#include "dsdrive/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

namespace dsdrive {

AttnMask AttnMask::full(int64_t n_q, int64_t n_kv) {
  return {n_q, n_kv, std::vector<uint8_t>(static_cast<std::size_t>(n_q * n_kv), 1)};
}

AttnMask AttnMask::causal(int64_t n) {
  AttnMask m{n, n, std::vector<uint8_t>(static_cast<std::size_t>(n * n), 0)};
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j <= i; ++j) m.allow[i * n + j] = 1;
  return m;
}

AttnMask AttnMask::valid_cols(int64_t n_q, std::span<const uint8_t> valid) {
  AttnMask m{n_q, static_cast<int64_t>(valid.size()), {}};
  m.allow.resize(static_cast<std::size_t>(n_q) * valid.size());
  for (int64_t i = 0; i < n_q; ++i)
    for (std::size_t j = 0; j < valid.size(); ++j) m.allow[i * m.n_kv + j] = valid[j] ? 1 : 0;
  return m;
}

namespace ops {
namespace {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

template <class S>
void check_finite(const TensorT<S>& t, const char* op) {
  for (S x : t.values()) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NonFiniteError(std::string(op) + " produced a non-finite value");
    }
  }
}

template <class S>
bool want_grad(TapeT<S>* tape, std::initializer_list<const TensorT<S>*> inputs) {
  if (!tape) return false;
  for (const auto* t : inputs)
    if (t->tracked()) return true;
  return false;
}

template <class S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

// Rows/cols of the last axis viewed as a matrix.
template <class S>
std::pair<int64_t, int64_t> lastdim_view(const TensorT<S>& x) {
  if (x.rank() < 1) throw ShapeError("expected rank >= 1, got " + shape_str(x.shape()));
  const int64_t n = x.shape().back();
  return {x.numel() / n, n};
}

}  // namespace

template <class S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "add");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (want_grad(tape, {&a, &b})) {
    out.ensure_grad();
    tape->record([a = a, b = b, out]() mutable {
      auto og = out.grad();
      if (a.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) a.grad()[i] += og[i];
      if (b.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) b.grad()[i] += og[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> sub(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "sub");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  if (want_grad(tape, {&a, &b})) {
    out.ensure_grad();
    tape->record([a = a, b = b, out]() mutable {
      auto og = out.grad();
      if (a.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) a.grad()[i] += og[i];
      if (b.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) b.grad()[i] -= og[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  require_same_shape(a, b, "mul");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  if (want_grad(tape, {&a, &b})) {
    out.ensure_grad();
    tape->record([a = a, b = b, out]() mutable {
      auto og = out.grad();
      if (a.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) a.grad()[i] += og[i] * b.data()[i];
      if (b.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) b.grad()[i] += og[i] * a.data()[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> scale(TapeT<S>* tape, const TensorT<S>& a, S c) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
  check_finite(out, "scale");
  if (want_grad(tape, {&a})) {
    out.ensure_grad();
    tape->record([a = a, out, c]() mutable {
      auto og = out.grad();
      for (std::size_t i = 0; i < og.size(); ++i) a.grad()[i] += og[i] * c;
    });
  }
  return out;
}

template <class S>
TensorT<S> add_bias(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& bias) {
  auto [m, n] = lastdim_view(x);
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  check_finite(out, "add_bias");
  if (want_grad(tape, {&x, &bias})) {
    out.ensure_grad();
    tape->record([x = x, bias = bias, out, m, n]() mutable {
      auto og = out.grad();
      if (x.tracked())
        for (std::size_t i = 0; i < og.size(); ++i) x.grad()[i] += og[i];
      if (bias.tracked())
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) bias.grad()[j] += og[i * n + j];
    });
  }
  return out;
}

template <class S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  TensorT<S> out = TensorT<S>::zeros({m, n});
  EMap<S>(out.data(), m, n).noalias() = ECMap<S>(a.data(), m, k) * ECMap<S>(b.data(), k, n);
  check_finite(out, "matmul");
  if (want_grad(tape, {&a, &b})) {
    out.ensure_grad();
    tape->record([a = a, b = b, out, m, k, n]() mutable {
      ECMap<S> og(out.grad().data(), m, n);
      if (a.tracked())
        EMap<S>(a.grad().data(), m, k).noalias() += og * ECMap<S>(b.data(), k, n).transpose();
      if (b.tracked())
        EMap<S>(b.grad().data(), k, n).noalias() += ECMap<S>(a.data(), m, k).transpose() * og;
    });
  }
  return out;
}

template <class S>
TensorT<S> matmul_nt(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  TensorT<S> out = TensorT<S>::zeros({m, n});
  EMap<S>(out.data(), m, n).noalias() =
      ECMap<S>(a.data(), m, k) * ECMap<S>(b.data(), n, k).transpose();
  check_finite(out, "matmul_nt");
  if (want_grad(tape, {&a, &b})) {
    out.ensure_grad();
    tape->record([a = a, b = b, out, m, k, n]() mutable {
      ECMap<S> og(out.grad().data(), m, n);
      if (a.tracked())
        EMap<S>(a.grad().data(), m, k).noalias() += og * ECMap<S>(b.data(), n, k);
      if (b.tracked())
        EMap<S>(b.grad().data(), n, k).noalias() += og.transpose() * ECMap<S>(a.data(), m, k);
    });
  }
  return out;
}

template <class S>
TensorT<S> affine(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias) {
  return add_bias(tape, matmul(tape, x, w), bias);
}

template <class S>
TensorT<S> relu(TapeT<S>* tape, const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] > S{0} ? x.data()[i] : S{0};
  check_finite(out, "relu");
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out]() mutable {
      auto og = out.grad();
      for (std::size_t i = 0; i < og.size(); ++i)
        if (x.data()[i] > S{0}) x.grad()[i] += og[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> silu(TapeT<S>* tape, const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const S s = S{1} / (S{1} + static_cast<S>(std::exp(-static_cast<double>(x.data()[i]))));
    out.data()[i] = x.data()[i] * s;
  }
  check_finite(out, "silu");
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out]() mutable {
      auto og = out.grad();
      for (std::size_t i = 0; i < og.size(); ++i) {
        const S xi = x.data()[i];
        const S s = S{1} / (S{1} + static_cast<S>(std::exp(-static_cast<double>(xi))));
        x.grad()[i] += og[i] * s * (S{1} + xi * (S{1} - s));
      }
    });
  }
  return out;
}

namespace {

// Shared softmax core: rows of `allow` may be null (all allowed). Writes
// probabilities; disallowed entries are exactly 0.
template <class S>
void softmax_rows(const TensorT<S>& x, const uint8_t* allow, int64_t m, int64_t n, TensorT<S>& out,
                  const char* op) {
  for (int64_t i = 0; i < m; ++i) {
    const S* row = x.data() + i * n;
    S* prow = out.data() + i * n;
    S mx = -std::numeric_limits<S>::infinity();
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
      if (allow && !allow[i * n + j]) continue;
      any = true;
      if (row[j] > mx) mx = row[j];
    }
    if (!any) {
      throw Error(std::string(op) + ": row " + std::to_string(i) + " has no attendable entry");
    }
    S denom = S{0};
    for (int64_t j = 0; j < n; ++j) {
      if (allow && !allow[i * n + j]) {
        prow[j] = S{0};
        continue;
      }
      prow[j] = static_cast<S>(std::exp(static_cast<double>(row[j] - mx)));
      denom += prow[j];
    }
    for (int64_t j = 0; j < n; ++j) prow[j] /= denom;
  }
}

// dx_ij = p_ij * (dp_ij - sum_k dp_ik p_ik), rowwise.
template <class S>
void softmax_backward_rows(TensorT<S>& x, const TensorT<S>& out, int64_t m, int64_t n) {
  auto og = out.grad();
  for (int64_t i = 0; i < m; ++i) {
    const S* p = out.data() + i * n;
    const S* dp = og.data() + i * n;
    S dot = S{0};
    for (int64_t j = 0; j < n; ++j) dot += dp[j] * p[j];
    S* dx = x.grad().data() + i * n;
    for (int64_t j = 0; j < n; ++j) dx[j] += p[j] * (dp[j] - dot);
  }
}

}  // namespace

template <class S>
TensorT<S> softmax(TapeT<S>* tape, const TensorT<S>& x) {
  auto [m, n] = lastdim_view(x);
  if (n < 1) throw ShapeError("softmax: empty last axis in " + shape_str(x.shape()));
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  softmax_rows(x, nullptr, m, n, out, "softmax");
  check_finite(out, "softmax");
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out, m = m, n = n]() mutable { softmax_backward_rows(x, out, m, n); });
  }
  return out;
}

template <class S>
TensorT<S> masked_softmax(TapeT<S>* tape, const TensorT<S>& x, const AttnMask& mask) {
  if (x.rank() != 2 || x.rows() != mask.n_q || x.cols() != mask.n_kv) {
    throw ShapeError("masked_softmax: scores " + shape_str(x.shape()) + " do not match mask (" +
                     std::to_string(mask.n_q) + "x" + std::to_string(mask.n_kv) + ")");
  }
  const int64_t m = mask.n_q, n = mask.n_kv;
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  softmax_rows(x, mask.allow.data(), m, n, out, "masked_softmax");
  check_finite(out, "masked_softmax");
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out, m = m, n = n]() mutable { softmax_backward_rows(x, out, m, n); });
  }
  return out;
}

template <class S>
TensorT<S> rmsnorm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gain, S eps) {
  auto [m, d] = lastdim_view(x);
  if (gain.numel() != d) {
    throw ShapeError("rmsnorm: gain " + shape_str(gain.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  if (eps <= S{0}) throw Error("rmsnorm: eps must be positive");
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  std::vector<S> inv_rms(static_cast<std::size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const S* row = x.data() + i * d;
    S ms = S{0};
    for (int64_t j = 0; j < d; ++j) ms += row[j] * row[j];
    ms = ms / static_cast<S>(d) + eps;
    const S r = S{1} / static_cast<S>(std::sqrt(static_cast<double>(ms)));
    inv_rms[static_cast<std::size_t>(i)] = r;
    for (int64_t j = 0; j < d; ++j) out.data()[i * d + j] = row[j] * r * gain.data()[j];
  }
  check_finite(out, "rmsnorm");
  if (want_grad(tape, {&x, &gain})) {
    out.ensure_grad();
    tape->record([x = x, gain = gain, out, inv_rms = std::move(inv_rms), m = m, d = d]() mutable {
      auto og = out.grad();
      for (int64_t i = 0; i < m; ++i) {
        const S* row = x.data() + i * d;
        const S* dy = og.data() + i * d;
        const S r = inv_rms[static_cast<std::size_t>(i)];
        if (gain.tracked())
          for (int64_t j = 0; j < d; ++j) gain.grad()[j] += dy[j] * row[j] * r;
        if (x.tracked()) {
          S s = S{0};
          for (int64_t j = 0; j < d; ++j) s += dy[j] * gain.data()[j] * row[j];
          const S coef = r * r * r * s / static_cast<S>(d);
          for (int64_t j = 0; j < d; ++j)
            x.grad()[i * d + j] += dy[j] * gain.data()[j] * r - row[j] * coef;
        }
      }
    });
  }
  return out;
}

namespace {

// Accumulates the rotated pairs of src into dst; sign = -1 inverts the rotation.
template <class S>
void rope_apply(const S* src, S* dst, const std::vector<int64_t>& pos, const std::vector<S>& freqs,
                int64_t m, int64_t d, int sign) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < d / 2; ++j) {
      const double ang = static_cast<double>(pos[static_cast<std::size_t>(i)]) *
                         static_cast<double>(freqs[static_cast<std::size_t>(j)]) * sign;
      const S c = static_cast<S>(std::cos(ang)), s = static_cast<S>(std::sin(ang));
      const S a = src[i * d + 2 * j], b = src[i * d + 2 * j + 1];
      dst[i * d + 2 * j] += a * c - b * s;
      dst[i * d + 2 * j + 1] += a * s + b * c;
    }
  }
}

}  // namespace

template <class S>
TensorT<S> rope(TapeT<S>* tape, const TensorT<S>& x, std::span<const int64_t> positions, S base) {
  if (x.rank() != 2) throw ShapeError("rope: expected rank-2, got " + shape_str(x.shape()));
  const int64_t m = x.rows(), d = x.cols();
  if (d % 2 != 0) throw ShapeError("rope: feature dim must be even, got " + shape_str(x.shape()));
  if (static_cast<int64_t>(positions.size()) != m) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(m) + " rows");
  }
  std::vector<S> freqs(static_cast<std::size_t>(d / 2));
  for (int64_t j = 0; j < d / 2; ++j) {
    freqs[static_cast<std::size_t>(j)] = static_cast<S>(
        std::pow(static_cast<double>(base), -2.0 * static_cast<double>(j) / static_cast<double>(d)));
  }
  std::vector<int64_t> pos(positions.begin(), positions.end());
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  rope_apply(x.data(), out.data(), pos, freqs, m, d, +1);
  check_finite(out, "rope");
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out, pos = std::move(pos), freqs = std::move(freqs), m, d]() mutable {
      rope_apply(out.grad().data(), x.grad().data(), pos, freqs, m, d, -1);
    });
  }
  return out;
}

template <class S>
TensorT<S> causal_attention(TapeT<S>* tape, const TensorT<S>& q, const TensorT<S>& k,
                            const TensorT<S>& v, const AttnMask& mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows()) {
    throw ShapeError("causal_attention: incompatible q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const S inv_sqrt_d = S{1} / static_cast<S>(std::sqrt(static_cast<double>(q.cols())));
  TensorT<S> scores = scale(tape, matmul_nt(tape, q, k), inv_sqrt_d);
  TensorT<S> probs = masked_softmax(tape, scores, mask);
  return matmul(tape, probs, v);
}

template <class S>
TensorT<S> cross_entropy(TapeT<S>* tape, const TensorT<S>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be rank-2, got " + shape_str(logits.shape()));
  }
  const int64_t n = logits.rows(), vocab = logits.cols();
  if (static_cast<int64_t>(targets.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  // probs kept for the backward step
  TensorT<S> probs = TensorT<S>::zeros(logits.shape());
  softmax_rows(logits, nullptr, n, vocab, probs, "cross_entropy");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    total -= std::log(static_cast<double>(probs.data()[i * vocab + targets[i]]));
  }
  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / static_cast<double>(n)));
  check_finite(out, "cross_entropy");
  if (want_grad(tape, {&logits})) {
    out.ensure_grad();
    std::vector<int> tgt(targets.begin(), targets.end());
    tape->record([logits = logits, probs, out, tgt = std::move(tgt), n, vocab]() mutable {
      const S dl = out.grad()[0] / static_cast<S>(n);
      for (int64_t i = 0; i < n; ++i) {
        S* dst = logits.grad().data() + i * vocab;
        const S* p = probs.data() + i * vocab;
        for (int64_t j = 0; j < vocab; ++j) dst[j] += dl * p[j];
        dst[tgt[static_cast<std::size_t>(i)]] -= dl;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> l1_loss(TapeT<S>* tape, const TensorT<S>& pred, const TensorT<S>& target) {
  require_same_shape(pred, target, "l1_loss");
  const int64_t n = pred.numel();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i)
    total += std::abs(static_cast<double>(pred.data()[i] - target.data()[i]));
  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / static_cast<double>(n)));
  check_finite(out, "l1_loss");
  if (want_grad(tape, {&pred, &target})) {
    out.ensure_grad();
    tape->record([pred = pred, target = target, out, n]() mutable {
      const S dl = out.grad()[0] / static_cast<S>(n);
      for (int64_t i = 0; i < n; ++i) {
        const S diff = pred.data()[i] - target.data()[i];
        // sign(0) == 0 by convention
        const S sgn = diff > S{0} ? S{1} : (diff < S{0} ? S{-1} : S{0});
        if (pred.tracked()) pred.grad()[i] += dl * sgn;
        if (target.tracked()) target.grad()[i] -= dl * sgn;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> embedding(TapeT<S>* tape, const TensorT<S>& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank-2, got " + shape_str(table.shape()));
  }
  const int64_t vocab = table.rows(), dim = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  TensorT<S> out = TensorT<S>::zeros({n, dim});
  for (int64_t i = 0; i < n; ++i) {
    const S* src = table.data() + static_cast<int64_t>(ids[i]) * dim;
    std::copy(src, src + dim, out.data() + i * dim);
  }
  check_finite(out, "embedding");
  if (want_grad(tape, {&table})) {
    out.ensure_grad();
    std::vector<int> idv(ids.begin(), ids.end());
    tape->record([table = table, out, idv = std::move(idv), dim]() mutable {
      auto og = out.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        S* dst = table.grad().data() + static_cast<int64_t>(idv[i]) * dim;
        const S* src = og.data() + static_cast<int64_t>(i) * dim;
        for (int64_t j = 0; j < dim; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_rows(TapeT<S>* tape, const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int64_t cols = parts[0].cols();
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: part " + shape_str(p.shape()) + " does not have " +
                       std::to_string(cols) + " columns");
    }
    rows += p.rows();
  }
  TensorT<S> out = TensorT<S>::zeros({rows, cols});
  int64_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + at * cols);
    at += p.rows();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.tracked();
  if (tape && any) {
    out.ensure_grad();
    std::vector<TensorT<S>> held(parts.begin(), parts.end());
    tape->record([held = std::move(held), out, cols]() mutable {
      int64_t at = 0;
      for (auto& p : held) {
        if (p.tracked()) {
          const S* src = out.grad().data() + at * cols;
          for (int64_t i = 0; i < p.numel(); ++i) p.grad()[i] += src[i];
        }
        at += p.rows();
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_rows(TapeT<S>* tape, const TensorT<S>& x, int64_t start, int64_t n) {
  if (x.rank() != 2 || start < 0 || n < 0 || start + n > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + n) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const int64_t cols = x.cols();
  TensorT<S> out = TensorT<S>::zeros({n, cols});
  std::copy(x.data() + start * cols, x.data() + (start + n) * cols, out.data());
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out, start, cols]() mutable {
      S* dst = x.grad().data() + start * cols;
      for (int64_t i = 0; i < out.numel(); ++i) dst[i] += out.grad()[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(TapeT<S>* tape, const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t rows = parts[0].rows();
  int64_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: part " + shape_str(p.shape()) + " does not have " +
                       std::to_string(rows) + " rows");
    }
    cols += p.cols();
  }
  TensorT<S> out = TensorT<S>::zeros({rows, cols});
  int64_t at = 0;
  for (const auto& p : parts) {
    for (int64_t i = 0; i < rows; ++i) {
      std::copy(p.data() + i * p.cols(), p.data() + (i + 1) * p.cols(),
                out.data() + i * cols + at);
    }
    at += p.cols();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.tracked();
  if (tape && any) {
    out.ensure_grad();
    std::vector<TensorT<S>> held(parts.begin(), parts.end());
    tape->record([held = std::move(held), out, rows, cols]() mutable {
      int64_t at = 0;
      for (auto& p : held) {
        if (p.tracked()) {
          for (int64_t i = 0; i < rows; ++i) {
            const S* src = out.grad().data() + i * cols + at;
            S* dst = p.grad().data() + i * p.cols();
            for (int64_t j = 0; j < p.cols(); ++j) dst[j] += src[j];
          }
        }
        at += p.cols();
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_cols(TapeT<S>* tape, const TensorT<S>& x, int64_t start, int64_t n) {
  if (x.rank() != 2 || start < 0 || n < 0 || start + n > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + n) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const int64_t rows = x.rows(), cols = x.cols();
  TensorT<S> out = TensorT<S>::zeros({rows, n});
  for (int64_t i = 0; i < rows; ++i) {
    std::copy(x.data() + i * cols + start, x.data() + i * cols + start + n, out.data() + i * n);
  }
  if (want_grad(tape, {&x})) {
    out.ensure_grad();
    tape->record([x = x, out, start, rows, cols, n]() mutable {
      for (int64_t i = 0; i < rows; ++i) {
        const S* src = out.grad().data() + i * n;
        S* dst = x.grad().data() + i * cols + start;
        for (int64_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

#define DSDRIVE_INSTANTIATE_OPS(S)                                                              \
  template TensorT<S> add<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> sub<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> mul<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> scale<S>(TapeT<S>*, const TensorT<S>&, S);                                \
  template TensorT<S> add_bias<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);             \
  template TensorT<S> matmul<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);               \
  template TensorT<S> matmul_nt<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);            \
  template TensorT<S> affine<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&,                \
                                const TensorT<S>&);                                             \
  template TensorT<S> relu<S>(TapeT<S>*, const TensorT<S>&);                                    \
  template TensorT<S> silu<S>(TapeT<S>*, const TensorT<S>&);                                    \
  template TensorT<S> softmax<S>(TapeT<S>*, const TensorT<S>&);                                 \
  template TensorT<S> masked_softmax<S>(TapeT<S>*, const TensorT<S>&, const AttnMask&);         \
  template TensorT<S> rmsnorm<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&, S);           \
  template TensorT<S> rope<S>(TapeT<S>*, const TensorT<S>&, std::span<const int64_t>, S);       \
  template TensorT<S> causal_attention<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&,      \
                                          const TensorT<S>&, const AttnMask&);                  \
  template TensorT<S> cross_entropy<S>(TapeT<S>*, const TensorT<S>&, std::span<const int>);     \
  template TensorT<S> l1_loss<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);              \
  template TensorT<S> embedding<S>(TapeT<S>*, const TensorT<S>&, std::span<const int>);         \
  template TensorT<S> concat_rows<S>(TapeT<S>*, const std::vector<TensorT<S>>&);                   \
  template TensorT<S> slice_rows<S>(TapeT<S>*, const TensorT<S>&, int64_t, int64_t);            \
  template TensorT<S> concat_cols<S>(TapeT<S>*, const std::vector<TensorT<S>>&);                   \
  template TensorT<S> slice_cols<S>(TapeT<S>*, const TensorT<S>&, int64_t, int64_t);

DSDRIVE_INSTANTIATE_OPS(double)
DSDRIVE_INSTANTIATE_OPS(float)

#undef DSDRIVE_INSTANTIATE_OPS

}  // namespace ops
}  // namespace dsdrive
