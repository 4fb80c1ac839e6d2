// SPDX-License-Identifier: Apache-2.0
#include "pcsot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>

namespace pcsot {

namespace {

thread_local Tape* g_current_tape = nullptr;

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int shape_product(const std::vector<int>& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(data))) {
  for (int d : shape_) {
    if (d <= 0)
      throw DimensionError("tensor dimension must be positive, got shape " +
                           shape_str(shape_));
  }
  if (shape_product(shape_) != static_cast<int>(data_->size()))
    throw DimensionError("data length " + std::to_string(data_->size()) +
                         " does not match shape " + shape_str(shape_));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  const int n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  const int n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw DimensionError("at(): index rank mismatch");
  std::size_t off = 0;
  auto it = idx.begin();
  for (int i = 0; i < rank(); ++i, ++it) {
    off = off * static_cast<std::size_t>(shape_[static_cast<std::size_t>(i)]) +
          static_cast<std::size_t>(*it);
  }
  return (*data_)[off];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (on && !rec_) rec_ = std::make_shared<detail::GradRecord>();
  if (!on) rec_.reset();
  return *this;
}

const std::vector<double>* Tensor::grad() const {
  if (!rec_ || rec_->grad.empty()) return nullptr;
  return &rec_->grad;
}

void Tensor::zero_grad() {
  if (rec_) rec_->grad.clear();
}

Tensor Tensor::clone() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = std::make_shared<std::vector<double>>(*data_);
  return out;
}

Tensor Tensor::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

// ---- Tape -------------------------------------------------------------------

Tape::~Tape() = default;

Tape* Tape::current() { return g_current_tape; }

int Tape::new_slot(int size) {
  slots_.push_back(Slot{size, {}, nullptr});
  return static_cast<int>(slots_.size()) - 1;
}

int Tape::leaf_slot(const std::shared_ptr<detail::GradRecord>& rec, int size) {
  auto it = leaf_ids_.find(rec.get());
  if (it != leaf_ids_.end()) return it->second;
  const int id = new_slot(size);
  slots_[static_cast<std::size_t>(id)].leaf = rec;
  leaf_ids_[rec.get()] = id;
  return id;
}

std::vector<double>& Tape::grad_of(int slot) {
  auto& s = slots_[static_cast<std::size_t>(slot)];
  if (s.grad.empty()) s.grad.assign(static_cast<std::size_t>(s.size), 0.0);
  return s.grad;
}

bool Tape::grad_present(int slot) const {
  return !slots_[static_cast<std::size_t>(slot)].grad.empty();
}

void Tape::record(std::function<void(Tape&)> fn) { nodes_.push_back(std::move(fn)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward: tape already consumed");
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
  if (loss.tape_ != this || loss.node_ < 0)
    throw ContractError("backward: loss was not produced on this tape");
  grad_of(loss.node_)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
  // flush leaf slots into their shared grad records
  for (auto& [rec, id] : leaf_ids_) {
    auto& s = slots_[static_cast<std::size_t>(id)];
    if (rec->grad.empty()) rec->grad.assign(static_cast<std::size_t>(s.size), 0.0);
    if (!s.grad.empty()) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) rec->grad[i] += s.grad[i];
    }
  }
  nodes_.clear();
  slots_.clear();
  leaf_ids_.clear();
  consumed_ = true;
}

TapeScope::TapeScope(Tape& tape) : prev_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = prev_; }

// ---- op plumbing ------------------------------------------------------------

struct OpAccess {
  // Tape this op should record on, or nullptr for eager execution.
  template <typename Range>
  static Tape* tracking_tape_range(const Range& ins) {
    Tape* t = g_current_tape;
    for (const Tensor* x : ins) {
      if (x->tape_ && x->tape_->consumed())
        throw ContractError("op input belongs to a consumed tape");
      if (x->tape_ && x->tape_ != t)
        throw ContractError("op input belongs to a different tape");
    }
    if (!t || t->consumed()) return nullptr;
    for (const Tensor* x : ins) {
      if (x->tape_ == t || x->requires_grad()) return t;
    }
    return nullptr;
  }

  static Tape* tracking_tape(std::initializer_list<const Tensor*> ins) {
    return tracking_tape_range(ins);
  }

  // Slot id of an input on tape t; -1 if the input does not carry grad.
  static int input_id(Tape* t, const Tensor& x) {
    if (x.tape_ == t && x.node_ >= 0) return x.node_;
    if (x.rec_) return t->leaf_slot(x.rec_, x.size());
    return -1;
  }

  static void attach(Tensor& out, Tape* t) {
    out.tape_ = t;
    out.node_ = t->new_slot(out.size());
  }

  static int node(const Tensor& x) { return x.node_; }

  static const std::shared_ptr<std::vector<double>>& buf(const Tensor& x) {
    return x.data_;
  }
};

namespace {

Tensor make_out(std::vector<int> shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data));
}

// ---- broadcasting ----

struct Bcast {
  std::vector<int> out_shape;
  // per-output-element source flat index for each operand
  static int offset(const std::vector<int>& shape, const std::vector<int>& out_shape,
                    int out_flat) {
    const int r_out = static_cast<int>(out_shape.size());
    const int r_in = static_cast<int>(shape.size());
    int off = 0;
    int rem = out_flat;
    // walk output dims from last to first, build input offset
    int stride = 1;
    std::vector<int> idx(static_cast<std::size_t>(r_out));
    for (int i = r_out - 1; i >= 0; --i) {
      idx[static_cast<std::size_t>(i)] = rem % out_shape[static_cast<std::size_t>(i)];
      rem /= out_shape[static_cast<std::size_t>(i)];
    }
    (void)stride;
    for (int i = 0; i < r_in; ++i) {
      const int out_dim_i = i + (r_out - r_in);
      const int d = shape[static_cast<std::size_t>(i)];
      const int j = d == 1 ? 0 : idx[static_cast<std::size_t>(out_dim_i)];
      off = off * d + j;
    }
    return off;
  }
};

std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  std::vector<int> out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int da = i < r - ra ? 1 : a[static_cast<std::size_t>(i - (r - ra))];
    const int db = i < r - rb ? 1 : b[static_cast<std::size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " +
                           shape_str(b));
    out[static_cast<std::size_t>(i)] = std::max(da, db);
  }
  return out;
}

// sum `g` (laid out as out_shape) down to `shape`, writing into `dst` (+=)
void reduce_grad(const std::vector<double>& g, const std::vector<int>& out_shape,
                 const std::vector<int>& shape, std::vector<double>& dst) {
  const int n = static_cast<int>(g.size());
  for (int i = 0; i < n; ++i) {
    dst[static_cast<std::size_t>(Bcast::offset(shape, out_shape, i))] += g[i];
  }
}

bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

bool fastpath(const std::vector<int>& in, const std::vector<int>& out) {
  return in == out;
}

using BinFn = double (*)(double, double);
using BinGrad = void (*)(double a, double b, double g, double& ga, double& gb);

Tensor binary_op(const Tensor& a, const Tensor& b, BinFn f, BinGrad dfn) {
  if (a.empty() || b.empty()) throw ContractError("binary op on empty tensor");
  const auto out_shape = broadcast_shape(a.shape(), b.shape());
  const int n = shape_product(out_shape);
  std::vector<double> out(static_cast<std::size_t>(n));
  const bool fast = same_shape(a.shape(), b.shape());
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (fast) {
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(ad[static_cast<std::size_t>(i)], bd[static_cast<std::size_t>(i)]);
  } else {
    for (int i = 0; i < n; ++i) {
      const double av = ad[static_cast<std::size_t>(Bcast::offset(a.shape(), out_shape, i))];
      const double bv = bd[static_cast<std::size_t>(Bcast::offset(b.shape(), out_shape, i))];
      out[static_cast<std::size_t>(i)] = f(av, bv);
    }
  }
  Tensor result = make_out(out_shape, std::move(out));
  Tape* t = OpAccess::tracking_tape({&a, &b});
  if (t) {
    const int ia = OpAccess::input_id(t, a);
    const int ib = OpAccess::input_id(t, b);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto abuf = OpAccess::buf(a);
    auto bbuf = OpAccess::buf(b);
    auto ash = a.shape();
    auto bsh = b.shape();
    auto osh = result.shape();
    t->record([=](Tape& tp) {
      if (!tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      const int count = static_cast<int>(go.size());
      std::vector<double> ga_full, gb_full;
      if (ia >= 0) ga_full.assign(go.size(), 0.0);
      if (ib >= 0) gb_full.assign(go.size(), 0.0);
      for (int i = 0; i < count; ++i) {
        const double av = (*abuf)[static_cast<std::size_t>(fastpath(ash, osh) ? i : Bcast::offset(ash, osh, i))];
        const double bv = (*bbuf)[static_cast<std::size_t>(fastpath(bsh, osh) ? i : Bcast::offset(bsh, osh, i))];
        double ga = 0, gb = 0;
        dfn(av, bv, go[static_cast<std::size_t>(i)], ga, gb);
        if (ia >= 0) ga_full[static_cast<std::size_t>(i)] = ga;
        if (ib >= 0) gb_full[static_cast<std::size_t>(i)] = gb;
      }
      if (ia >= 0) reduce_grad(ga_full, osh, ash, tp.grad_of(ia));
      if (ib >= 0) reduce_grad(gb_full, osh, bsh, tp.grad_of(ib));
    });
  }
  return result;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& ga, double& gb) {
        ga = g * y;
        gb = g * x;
      });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd f, Bwd df) {
  if (x.empty()) throw ContractError("unary op on empty tensor");
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  Tensor result = make_out(x.shape(), std::move(out));
  Tape* t = OpAccess::tracking_tape({&x});
  if (t) {
    const int ix = OpAccess::input_id(t, x);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto xbuf = OpAccess::buf(x);
    t->record([=](Tape& tp) {
      if (ix < 0 || !tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      auto& gx = tp.grad_of(ix);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df((*xbuf)[i]);
    });
  }
  return result;
}

}  // namespace

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v * c; }, [c](double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  auto phi = [](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)); };
  return unary_op(
      x, [phi](double v) { return v * phi(v); },
      [phi](double v) {
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return phi(v) + v * pdf;
      });
}

// ---- matmul -----------------------------------------------------------------

namespace {

// C(m,n) += A(m,k) * B(k,n)
void mm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<std::ptrdiff_t>(i) * k;
    double* crow = C + static_cast<std::ptrdiff_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double a = arow[kk];
      if (a == 0.0) continue;
      const double* brow = B + static_cast<std::ptrdiff_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// out(m,k) += G(m,n) * B(k,n)^T  i.e. out[i,kk] += dot(G[i,:], B[kk,:])
void mm_abt(const double* G, const double* B, double* out, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* grow = G + static_cast<std::ptrdiff_t>(i) * n;
    double* orow = out + static_cast<std::ptrdiff_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = B + static_cast<std::ptrdiff_t>(kk) * n;
      double acc = 0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[kk] += acc;
    }
  }
}

// out(k,n) += A(m,k)^T * G(m,n)
void mm_atb(const double* A, const double* G, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<std::ptrdiff_t>(i) * k;
    const double* grow = G + static_cast<std::ptrdiff_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double a = arow[kk];
      if (a == 0.0) continue;
      double* orow = out + static_cast<std::ptrdiff_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += a * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3)
    throw DimensionError("matmul: ranks must be 2 or 3, got " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
  const int kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (ka != kb)
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int ba = a.rank() == 3 ? a.dim(0) : 1;
  const int bb = b.rank() == 3 ? b.dim(0) : 1;
  if (a.rank() == 3 && b.rank() == 3 && ba != bb)
    throw DimensionError("matmul: batch dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int batch = std::max(ba, bb);
  const bool a_b = a.rank() == 3, b_b = b.rank() == 3;

  std::vector<double> out(static_cast<std::size_t>(batch) * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (int q = 0; q < batch; ++q) {
    mm_acc(ad + (a_b ? static_cast<std::ptrdiff_t>(q) * m * ka : 0),
           bd + (b_b ? static_cast<std::ptrdiff_t>(q) * ka * n : 0),
           out.data() + static_cast<std::ptrdiff_t>(q) * m * n, m, ka, n);
  }
  std::vector<int> osh;
  if (a_b || b_b) osh = {batch, m, n};
  else osh = {m, n};
  Tensor result = make_out(osh, std::move(out));

  Tape* t = OpAccess::tracking_tape({&a, &b});
  if (t) {
    const int ia = OpAccess::input_id(t, a);
    const int ib = OpAccess::input_id(t, b);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto abuf = OpAccess::buf(a);
    auto bbuf = OpAccess::buf(b);
    const int k = ka;
    t->record([=](Tape& tp) {
      if (!tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      if (ia >= 0) {
        auto& ga = tp.grad_of(ia);
        for (int q = 0; q < batch; ++q) {
          mm_abt(go.data() + static_cast<std::ptrdiff_t>(q) * m * n,
                 bbuf->data() + (b_b ? static_cast<std::ptrdiff_t>(q) * k * n : 0),
                 ga.data() + (a_b ? static_cast<std::ptrdiff_t>(q) * m * k : 0), m, n, k);
        }
      }
      if (ib >= 0) {
        auto& gb = tp.grad_of(ib);
        for (int q = 0; q < batch; ++q) {
          mm_atb(abuf->data() + (a_b ? static_cast<std::ptrdiff_t>(q) * m * k : 0),
                 go.data() + static_cast<std::ptrdiff_t>(q) * m * n,
                 gb.data() + (b_b ? static_cast<std::ptrdiff_t>(q) * k * n : 0), m, k, n);
        }
      }
    });
  }
  return result;
}

// ---- shape ops ----------------------------------------------------------------

namespace {

template <typename MapIdx>
Tensor index_map_op(const Tensor& x, std::vector<int> out_shape, MapIdx src_of,
                    int out_count) {
  const auto& xd = x.data();
  std::vector<double> out(static_cast<std::size_t>(out_count));
  for (int i = 0; i < out_count; ++i) out[static_cast<std::size_t>(i)] = xd[static_cast<std::size_t>(src_of(i))];
  Tensor result = make_out(std::move(out_shape), std::move(out));
  Tape* t = OpAccess::tracking_tape({&x});
  if (t) {
    const int ix = OpAccess::input_id(t, x);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    t->record([=](Tape& tp) {
      if (ix < 0 || !tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      auto& gx = tp.grad_of(ix);
      for (int i = 0; i < out_count; ++i)
        gx[static_cast<std::size_t>(src_of(i))] += go[static_cast<std::size_t>(i)];
    });
  }
  return result;
}

}  // namespace

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank must be >= 2");
  const int r = x.rank();
  const int m = x.dim(r - 2), n = x.dim(r - 1);
  std::vector<int> osh = x.shape();
  osh[static_cast<std::size_t>(r - 2)] = n;
  osh[static_cast<std::size_t>(r - 1)] = m;
  auto src_of = [=](int i) {
    const int q = i / (m * n);
    const int rem = i % (m * n);
    const int row = rem / m;  // 0..n-1
    const int col = rem % m;  // 0..m-1
    return q * m * n + col * n + row;
  };
  return index_map_op(x, osh, src_of, x.size());
}

Tensor swap01(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("swap01: rank must be 3");
  const int a = x.dim(0), b = x.dim(1), c = x.dim(2);
  auto src_of = [=](int i) {
    const int j = i / c, w = i % c;
    const int bi = j / a, ai = j % a;
    return (ai * b + bi) * c + w;
  };
  return index_map_op(x, {b, a, c}, src_of, x.size());
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_product(shape) != x.size())
    throw DimensionError("reshape: size mismatch " + shape_str(x.shape()) +
                         " -> " + shape_str(shape));
  auto src_of = [](int i) { return i; };
  return index_map_op(x, std::move(shape), src_of, x.size());
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const int cols = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols)
      throw DimensionError("concat_rows: all parts must be 2-D with equal cols");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make_out({rows, cols}, std::move(out));

  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tape* t = OpAccess::tracking_tape_range(ptrs);
  if (t) {
    std::vector<int> ids;
    std::vector<int> sizes;
    for (const auto& p : parts) {
      ids.push_back(OpAccess::input_id(t, p));
      sizes.push_back(p.size());
    }
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    t->record([=](Tape& tp) {
      if (!tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      std::size_t off = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] >= 0) {
          auto& g = tp.grad_of(ids[p]);
          for (int i = 0; i < sizes[p]; ++i) g[static_cast<std::size_t>(i)] += go[off + static_cast<std::size_t>(i)];
        }
        off += static_cast<std::size_t>(sizes[p]);
      }
    });
  }
  return result;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.rank() != 2) throw DimensionError("slice_rows: rank must be 2");
  if (r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw DimensionError("slice_rows: bad range");
  const int cols = x.dim(1);
  auto src_of = [=](int i) { return (r0 + i / cols) * cols + i % cols; };
  return index_map_op(x, {r1 - r0, cols}, src_of, (r1 - r0) * cols);
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.rank() != 2) throw DimensionError("slice_cols: rank must be 2");
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw DimensionError("slice_cols: bad range");
  const int cols = x.dim(1);
  const int w = c1 - c0;
  auto src_of = [=](int i) { return (i / w) * cols + c0 + i % w; };
  return index_map_op(x, {x.dim(0), w}, src_of, x.dim(0) * w);
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() != 2) throw DimensionError("gather_rows: rank must be 2");
  const int cols = x.dim(1);
  for (int r : rows)
    if (r < 0 || r >= x.dim(0)) throw DimensionError("gather_rows: index out of range");
  auto rows_copy = rows;
  auto src_of = [cols, rows_copy](int i) {
    return rows_copy[static_cast<std::size_t>(i / cols)] * cols + i % cols;
  };
  return index_map_op(x, {static_cast<int>(rows.size()), cols}, src_of,
                      static_cast<int>(rows.size()) * cols);
}

Tensor gather_flat(const Tensor& x, const std::vector<int>& idx) {
  for (int i : idx)
    if (i < 0 || i >= x.size()) throw DimensionError("gather_flat: index out of range");
  auto idx_copy = idx;
  auto src_of = [idx_copy](int i) { return idx_copy[static_cast<std::size_t>(i)]; };
  return index_map_op(x, {static_cast<int>(idx.size()), 1}, src_of,
                      static_cast<int>(idx.size()));
}

Tensor index_add_rows(const Tensor& base, const std::vector<int>& rows,
                      const Tensor& rows_values) {
  if (base.rank() != 2 || rows_values.rank() != 2 ||
      base.dim(1) != rows_values.dim(1) ||
      rows_values.dim(0) != static_cast<int>(rows.size()))
    throw DimensionError("index_add_rows: shape mismatch");
  const int cols = base.dim(1);
  for (int r : rows)
    if (r < 0 || r >= base.dim(0)) throw DimensionError("index_add_rows: index out of range");
  std::vector<double> out = base.data();
  const auto& vd = rows_values.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(rows[i]) * cols + static_cast<std::size_t>(j)] +=
          vd[i * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)];
  }
  Tensor result = make_out(base.shape(), std::move(out));
  Tape* t = OpAccess::tracking_tape({&base, &rows_values});
  if (t) {
    const int ibase = OpAccess::input_id(t, base);
    const int ivals = OpAccess::input_id(t, rows_values);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto rows_copy = rows;
    const int nrows = static_cast<int>(rows.size());
    t->record([=](Tape& tp) {
      if (!tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      if (ibase >= 0) {
        auto& g = tp.grad_of(ibase);
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (ivals >= 0) {
        auto& g = tp.grad_of(ivals);
        for (int i = 0; i < nrows; ++i)
          for (int j = 0; j < cols; ++j)
            g[static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(j)] +=
                go[static_cast<std::size_t>(rows_copy[static_cast<std::size_t>(i)]) * cols +
                   static_cast<std::size_t>(j)];
      }
    });
  }
  return result;
}

Tensor max_axis1(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("max_axis1: rank must be 3");
  const int g = x.dim(0), k = x.dim(1), d = x.dim(2);
  const auto& xd = x.data();
  std::vector<double> out(static_cast<std::size_t>(g) * d);
  std::vector<int> argmax(static_cast<std::size_t>(g) * d, 0);
  for (int gi = 0; gi < g; ++gi) {
    for (int j = 0; j < d; ++j) {
      double best = xd[static_cast<std::size_t>(gi) * k * d + static_cast<std::size_t>(j)];
      int bi = 0;
      for (int ki = 1; ki < k; ++ki) {
        const double v = xd[(static_cast<std::size_t>(gi) * k + static_cast<std::size_t>(ki)) * d + static_cast<std::size_t>(j)];
        if (v > best) {
          best = v;
          bi = ki;
        }
      }
      out[static_cast<std::size_t>(gi) * d + static_cast<std::size_t>(j)] = best;
      argmax[static_cast<std::size_t>(gi) * d + static_cast<std::size_t>(j)] = bi;
    }
  }
  Tensor result = make_out({g, d}, std::move(out));
  Tape* t = OpAccess::tracking_tape({&x});
  if (t) {
    const int ix = OpAccess::input_id(t, x);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    t->record([=, am = std::move(argmax)](Tape& tp) {
      if (ix < 0 || !tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      auto& gx = tp.grad_of(ix);
      for (int gi = 0; gi < g; ++gi)
        for (int j = 0; j < d; ++j) {
          const int ki = am[static_cast<std::size_t>(gi) * d + static_cast<std::size_t>(j)];
          gx[(static_cast<std::size_t>(gi) * k + static_cast<std::size_t>(ki)) * d + static_cast<std::size_t>(j)] +=
              go[static_cast<std::size_t>(gi) * d + static_cast<std::size_t>(j)];
        }
    });
  }
  return result;
}

// ---- normalizations -----------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
    throw DimensionError("softmax_lastdim: empty last dimension");
  const int d = x.dim(x.rank() - 1);
  const int rows = x.size() / d;
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (int r = 0; r < rows; ++r) {
    const double* row = xd.data() + static_cast<std::ptrdiff_t>(r) * d;
    double* orow = out.data() + static_cast<std::ptrdiff_t>(r) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= sum;
  }
  Tensor result = make_out(x.shape(), std::move(out));
  Tape* t = OpAccess::tracking_tape({&x});
  if (t) {
    const int ix = OpAccess::input_id(t, x);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto ybuf = OpAccess::buf(result);
    t->record([=](Tape& tp) {
      if (ix < 0 || !tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      auto& gx = tp.grad_of(ix);
      const auto& y = *ybuf;
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * d;
        double dot = 0;
        for (int j = 0; j < d; ++j) dot += go[off + static_cast<std::size_t>(j)] * y[off + static_cast<std::size_t>(j)];
        for (int j = 0; j < d; ++j)
          gx[off + static_cast<std::size_t>(j)] +=
              y[off + static_cast<std::size_t>(j)] * (go[off + static_cast<std::size_t>(j)] - dot);
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank must be >= 1");
  const int d = x.dim(x.rank() - 1);
  if (d == 0 || gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: gain/bias must have last-dim size");
  if (eps <= 0) throw ContractError("layer_norm: eps must be positive");
  const int rows = x.size() / d;
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * d;
    double mean = 0;
    for (int j = 0; j < d; ++j) mean += xd[off + static_cast<std::size_t>(j)];
    mean /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) {
      const double c = xd[off + static_cast<std::size_t>(j)] - mean;
      var += c * c;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = istd;
    for (int j = 0; j < d; ++j) {
      const double xh = (xd[off + static_cast<std::size_t>(j)] - mean) * istd;
      xhat[off + static_cast<std::size_t>(j)] = xh;
      out[off + static_cast<std::size_t>(j)] = gd[static_cast<std::size_t>(j)] * xh + bd[static_cast<std::size_t>(j)];
    }
  }
  Tensor result = make_out(x.shape(), std::move(out));
  Tape* t = OpAccess::tracking_tape({&x, &gain, &bias});
  if (t) {
    const int ix = OpAccess::input_id(t, x);
    const int ig = OpAccess::input_id(t, gain);
    const int ib = OpAccess::input_id(t, bias);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto gbuf = OpAccess::buf(gain);
    t->record([=, xh = std::move(xhat), istd = std::move(inv_std)](Tape& tp) {
      if (!tp.grad_present(io)) return;
      const auto& go = tp.grad_of(io);
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * d;
        if (ix >= 0) {
          auto& gx = tp.grad_of(ix);
          double mean_gy = 0, mean_gyxh = 0;
          for (int j = 0; j < d; ++j) {
            const double gy = go[off + static_cast<std::size_t>(j)] * (*gbuf)[static_cast<std::size_t>(j)];
            mean_gy += gy;
            mean_gyxh += gy * xh[off + static_cast<std::size_t>(j)];
          }
          mean_gy /= d;
          mean_gyxh /= d;
          for (int j = 0; j < d; ++j) {
            const double gy = go[off + static_cast<std::size_t>(j)] * (*gbuf)[static_cast<std::size_t>(j)];
            gx[off + static_cast<std::size_t>(j)] +=
                (gy - mean_gy - xh[off + static_cast<std::size_t>(j)] * mean_gyxh) *
                istd[static_cast<std::size_t>(r)];
          }
        }
        if (ig >= 0) {
          auto& gg = tp.grad_of(ig);
          for (int j = 0; j < d; ++j)
            gg[static_cast<std::size_t>(j)] +=
                go[off + static_cast<std::size_t>(j)] * xh[off + static_cast<std::size_t>(j)];
        }
        if (ib >= 0) {
          auto& gb = tp.grad_of(ib);
          for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += go[off + static_cast<std::size_t>(j)];
        }
      }
    });
  }
  return result;
}

Tensor sum_all(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  Tensor result = make_out({1}, {s});
  Tape* t = OpAccess::tracking_tape({&x});
  if (t) {
    const int ix = OpAccess::input_id(t, x);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    t->record([=](Tape& tp) {
      if (ix < 0 || !tp.grad_present(io)) return;
      const double g = tp.grad_of(io)[0];
      auto& gx = tp.grad_of(ix);
      for (auto& v : gx) v += g;
    });
  }
  return result;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / x.size()); }

// ---- losses ---------------------------------------------------------------------

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& labels) {
  if (logits.shape() != labels.shape())
    throw DimensionError("bce_with_logits_mean: shape mismatch");
  const auto& xd = logits.data();
  const auto& yd = labels.data();
  const int n = logits.size();
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double x = xd[static_cast<std::size_t>(i)];
    const double y = yd[static_cast<std::size_t>(i)];
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor result = make_out({1}, {total / n});
  Tape* t = OpAccess::tracking_tape({&logits, &labels});
  if (t) {
    const int ix = OpAccess::input_id(t, logits);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto xbuf = OpAccess::buf(logits);
    auto ybuf = OpAccess::buf(labels);
    t->record([=](Tape& tp) {
      if (ix < 0 || !tp.grad_present(io)) return;
      const double g = tp.grad_of(io)[0] / n;
      auto& gx = tp.grad_of(ix);
      for (int i = 0; i < n; ++i)
        gx[static_cast<std::size_t>(i)] +=
            g * (sigmoid((*xbuf)[static_cast<std::size_t>(i)]) - (*ybuf)[static_cast<std::size_t>(i)]);
    });
  }
  return result;
}

Tensor huber_mean(const Tensor& pred, const Tensor& target, double delta) {
  if (pred.shape() != target.shape())
    throw DimensionError("huber_mean: shape mismatch");
  if (delta <= 0) throw ContractError("huber_mean: delta must be positive");
  const auto& pd = pred.data();
  const auto& td = target.data();
  const int n = pred.size();
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double diff = pd[static_cast<std::size_t>(i)] - td[static_cast<std::size_t>(i)];
    const double a = std::abs(diff);
    total += a <= delta ? 0.5 * diff * diff : delta * (a - 0.5 * delta);
  }
  Tensor result = make_out({1}, {total / n});
  Tape* t = OpAccess::tracking_tape({&pred, &target});
  if (t) {
    const int ip = OpAccess::input_id(t, pred);
    OpAccess::attach(result, t);
    const int io = OpAccess::node(result);
    auto pbuf = OpAccess::buf(pred);
    auto tbuf = OpAccess::buf(target);
    t->record([=](Tape& tp) {
      if (ip < 0 || !tp.grad_present(io)) return;
      const double g = tp.grad_of(io)[0] / n;
      auto& gp = tp.grad_of(ip);
      for (int i = 0; i < n; ++i) {
        const double diff = (*pbuf)[static_cast<std::size_t>(i)] - (*tbuf)[static_cast<std::size_t>(i)];
        gp[static_cast<std::size_t>(i)] += g * std::clamp(diff, -delta, delta);
      }
    });
  }
  return result;
}

// ---- initializers -----------------------------------------------------------------

Tensor randn(std::vector<int> shape, Rng& rng, double stddev) {
  const int n = shape_product(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = rng.normal() * stddev;
  return Tensor(std::move(shape), std::move(data));
}

Tensor kaiming_normal(int fan_in, int fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  return randn({fan_in, fan_out}, rng, stddev);
}

}  // namespace pcsot
