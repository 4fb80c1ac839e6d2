// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <vector>

#include "pcsot/common.hpp"
#include "pcsot/rng.hpp"

namespace pcsot {

class Tape;

namespace detail {
// Grad accumulator shared by all copies of a leaf tensor. backward() adds
// into `grad`; the optimizer reads and clears it.
struct GradRecord {
  std::vector<double> grad;  // empty until first backward touches the leaf
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. Values are immutable once
// created as far as ops are concerned; `mutable_data` exists for the
// optimizer and checkpoint loader, which write between tapes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  bool empty() const { return data_ == nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int size() const { return data_ ? static_cast<int>(data_->size()) : 0; }

  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& mutable_data() { return *data_; }
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return rec_ != nullptr; }
  Tensor& set_requires_grad(bool on);
  // Accumulated gradient of this leaf; nullptr when never populated.
  const std::vector<double>* grad() const;
  void zero_grad();

  Tensor clone() const;   // deep copy, no grad record, no tape
  Tensor detach() const;  // shares data, drops tape link and grad record

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<detail::GradRecord> rec_;
  Tape* tape_ = nullptr;  // set when produced by a recorded op
  int node_ = -1;

  friend struct OpAccess;
  friend class Tape;
};

// Reverse-mode tape. Single-threaded, one backward pass per tape;
// backward clears the recorded nodes.
class Tape {
 public:
  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Scalar `loss` must have been produced under this tape's scope.
  // Populates grads of every requires_grad leaf the loss depends on,
  // then consumes the tape.
  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  static Tape* current();

  // Internal surface used by op implementations; not part of the public
  // contract of this module.
  int new_slot(int size);
  int leaf_slot(const std::shared_ptr<detail::GradRecord>& rec, int size);
  std::vector<double>& grad_of(int slot);
  bool grad_present(int slot) const;
  void record(std::function<void(Tape&)> fn);

 private:
  struct Slot {
    int size = 0;
    std::vector<double> grad;  // allocated lazily during backward
    std::shared_ptr<detail::GradRecord> leaf;  // set for leaf slots
  };

  std::vector<Slot> slots_;
  std::vector<std::function<void(Tape&)>> nodes_;
  std::unordered_map<detail::GradRecord*, int> leaf_ids_;
  bool consumed_ = false;

  friend struct OpAccess;
  friend class TapeScope;
};

// RAII activation of a tape for the current thread. Ops record onto the
// active tape whenever an input requires grad or was produced on it.
// Without an active scope all ops run eagerly with no recording.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- initializers -------------------------------------------------------

Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);
// He-style fan-in scaling for layers followed by a nonlinearity.
Tensor kaiming_normal(int fan_in, int fan_out, Rng& rng);

// ---- elementwise / broadcasting ops -------------------------------------
// Broadcasting aligns trailing dimensions; a dimension must match or be 1.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact Gaussian CDF form x * Phi(x)

// ---- matrix / shape ops --------------------------------------------------

// 2-D x 2-D, 3-D x 3-D (equal batch), or one-sided batch broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor swap01(const Tensor& x);  // rank-3 axis swap (a,b,c) -> (b,a,c)
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_rows(const std::vector<Tensor>& parts);  // 2-D, shared cols
Tensor slice_rows(const Tensor& x, int r0, int r1);    // 2-D, rows [r0,r1)
Tensor slice_cols(const Tensor& x, int c0, int c1);    // 2-D, cols [c0,c1)
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// Element gather by flat index; result shape (n, 1).
Tensor gather_flat(const Tensor& x, const std::vector<int>& idx);
// out = base; out[rows[i], :] += rows_values[i, :]
Tensor index_add_rows(const Tensor& base, const std::vector<int>& rows,
                      const Tensor& rows_values);
// rank-3 (g, k, d) -> (g, d); ties go to the lowest k index.
Tensor max_axis1(const Tensor& x);

// ---- normalizations and reductions ---------------------------------------

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor sum_all(const Tensor& x);   // -> shape {1}
Tensor mean_all(const Tensor& x);  // -> shape {1}

// ---- losses ---------------------------------------------------------------

// mean over elements of BCE(logit, label); labels are plain values in [0,1].
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& labels);
// mean Huber loss on (pred - target) with threshold delta.
Tensor huber_mean(const Tensor& pred, const Tensor& target, double delta);

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace pcsot
