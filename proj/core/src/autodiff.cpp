#include "hsnerf/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hsnerf/error.hpp"

namespace hsnerf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  throw ShapeError(os.str());
}

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, std::string_view what) {
  std::ostringstream os;
  os << op << ": " << what << " (got " << shape_str(a) << ")";
  throw ShapeError(os.str());
}

void require_same(std::string_view op, Var a, Var b) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands belong to different tapes");
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

void require_matrix(std::string_view op, Var a) {
  if (a.value().ndim() != 2) shape_fail(op, a.shape(), "expected a 2-D tensor");
}

// Applies f elementwise and records grad = out_grad * df(x, y).
template <typename F, typename DF>
Var unary(std::string_view op, Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  const auto id = a.id;
  return a.tape->record(op, std::move(out), {id}, [id, df](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(id);
    Tensor& gx = t.grad_buffer(id);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) shape_fail("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// -------------------------------------------------------- ParameterStore

Parameter& ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Tensor(value.shape());
  p->value = std::move(value);
  p->value.requires_grad = true;
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

std::size_t ParameterStore::numel_with_prefix(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (std::string_view(p->name).starts_with(prefix)) n += p->value.numel();
  return n;
}

// ------------------------------------------------------------------ Tape

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  value.requires_grad = false;
  return record("constant", std::move(value), {}, nullptr);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.requires_grad = grad_enabled_ && value.requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.op = "param";
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<NodeId>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<NodeId> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  bool any = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw Error(std::string(op) + ": input node does not exist");
    any = any || nodes_[in].requires_grad;
  }
  n.requires_grad = grad_enabled_ && any && fn != nullptr;
  if (n.requires_grad) n.backward = std::move(fn);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

const Tensor& Tape::value(NodeId id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value : n.value;
}

Tensor& Tape::grad_buffer(NodeId id) {
  Node& n = nodes_[id];
  if (n.param) {
    n.has_grad = true;
    return n.param->grad;
  }
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.param) return n.param->grad;
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward: loss belongs to another tape");
  if (value(loss.id).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    // The closure may touch other nodes' buffers but never this one.
    const Tensor g = std::move(n.grad);
    n.backward(*this, g);
    n.grad = Tensor();
    n.has_grad = false;
  }
}

// ------------------------------------------------------------------- ops

namespace ad {

Var matmul(Var a, Var b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  MapMat(out.ptr(), n, m).noalias() = CMapMat(a.value().ptr(), n, k) * CMapMat(b.value().ptr(), k, m);
  const auto ia = a.id, ib = b.id;
  return a.tape->record("matmul", std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& t, const Tensor& g) {
    CMapMat G(g.ptr(), n, m);
    if (t.requires_grad(ia)) {
      MapMat(t.grad_buffer(ia).ptr(), n, k).noalias() += G * CMapMat(t.value(ib).ptr(), k, m).transpose();
    }
    if (t.requires_grad(ib)) {
      MapMat(t.grad_buffer(ib).ptr(), k, m).noalias() += CMapMat(t.value(ia).ptr(), n, k).transpose() * G;
    }
  });
}

Var add(Var a, Var b) {
  require_same("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    for (auto id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Tensor& gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  require_matrix("add_row", a);
  if (row.value().ndim() != 1 || row.numel() != a.cols()) shape_fail("add_row", a.shape(), row.shape());
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  const Tensor& r = row.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += r[j];
  const auto ia = a.id, ir = row.id;
  return a.tape->record("add_row", std::move(out), {ia, ir}, [ia, ir, n, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ir)) {
      Tensor& gr = t.grad_buffer(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
    }
  });
}

Var broadcast_rows(Var row, std::size_t n) {
  if (row.value().ndim() != 1) shape_fail("broadcast_rows", row.shape(), "expected a vector");
  const std::size_t m = row.numel();
  Tensor out({n, m});
  const Tensor& r = row.value();
  for (std::size_t i = 0; i < n; ++i) std::copy(r.ptr(), r.ptr() + m, out.ptr() + i * m);
  const auto ir = row.id;
  return row.tape->record("broadcast_rows", std::move(out), {ir}, [ir, n, m](Tape& t, const Tensor& g) {
    Tensor& gr = t.grad_buffer(ir);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
  });
}

Var scale(Var a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
}  // namespace

Var sigmoid(Var a) {
  return unary("sigmoid", a, stable_sigmoid, [](double x) {
    const double s = stable_sigmoid(x);
    return s * (1.0 - s);
  });
}

Var softplus(Var a, double shift) {
  return unary("softplus", a, [shift](double x) { return stable_softplus(x - shift); },
               [shift](double x) { return stable_sigmoid(x - shift); });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape* tape = parts[0].tape;
  const bool vec = parts[0].value().ndim() == 1;
  const std::size_t n = vec ? 1 : parts[0].rows();
  std::size_t total = 0;
  std::vector<Tape::NodeId> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.tape != tape) throw Error("concat: operands belong to different tapes");
    const bool pv = p.value().ndim() == 1;
    if (pv != vec || (!vec && (p.value().ndim() != 2 || p.rows() != n)))
      shape_fail("concat", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
    ids.push_back(p.id);
  }
  Tensor out(vec ? Shape{total} : Shape{n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < n; ++i) std::copy(v.ptr() + i * w, v.ptr() + (i + 1) * w, out.ptr() + i * total + off);
    off += w;
  }
  return tape->record("concat", std::move(out), ids, [ids, widths, n, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.requires_grad(ids[k])) {
        Tensor& gx = t.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += g[i * total + off + j];
      }
      off += w;
    }
  });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  const auto ia = a.id;
  return a.tape->record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

namespace {
Var squared_error(std::string_view op, Var a, Var b, bool average) {
  require_same(op, a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.numel() == 0) throw ShapeError(std::string(op) + ": empty tensors");
  const double norm = average ? 1.0 / static_cast<double>(x.numel()) : 1.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  const auto ia = a.id, ib = b.id;
  return a.tape->record(op, Tensor::scalar(s * norm), {ia, ib}, [ia, ib, norm](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const double c = 2.0 * norm * g[0];
    if (t.requires_grad(ia)) {
      Tensor& gx = t.grad_buffer(ia);
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += c * (x[i] - y[i]);
    }
    if (t.requires_grad(ib)) {
      Tensor& gy = t.grad_buffer(ib);
      for (std::size_t i = 0; i < x.numel(); ++i) gy[i] -= c * (x[i] - y[i]);
    }
  });
}
}  // namespace

Var mse(Var a, Var b) { return squared_error("mse", a, b, true); }
Var sse(Var a, Var b) { return squared_error("sse", a, b, false); }

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a);
  const std::size_t n = a.rows(), m = a.cols();
  if (begin > end || end > m) shape_fail("slice_cols", a.shape(), "column range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({n, w});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < n; ++i) std::copy(x.ptr() + i * m + begin, x.ptr() + i * m + end, out.ptr() + i * w);
  const auto ia = a.id;
  return a.tape->record("slice_cols", std::move(out), {ia}, [ia, n, m, w, begin](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * m + begin + j] += g[i * w + j];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a);
  const std::size_t n = a.rows(), m = a.cols();
  if (begin > end || end > n) shape_fail("slice_rows", a.shape(), "row range out of bounds");
  const Tensor& x = a.value();
  Tensor out({end - begin, m}, std::vector<double>(x.ptr() + begin * m, x.ptr() + end * m));
  const auto ia = a.id;
  return a.tape->record("slice_rows", std::move(out), {ia}, [ia, m, begin](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[begin * m + i] += g[i];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  require_matrix("gather_rows", a);
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({idx.size(), m});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) shape_fail("gather_rows", a.shape(), "row index out of bounds");
    std::copy(x.ptr() + idx[i] * m, x.ptr() + (idx[i] + 1) * m, out.ptr() + i * m);
  }
  const auto ia = a.id;
  return a.tape->record("gather_rows", std::move(out), {ia}, [ia, idx = std::move(idx), m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) gx[idx[i] * m + j] += g[i * m + j];
  });
}

Var gather_cols(Var a, std::span<const std::size_t> index) {
  require_matrix("gather_cols", a);
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (auto c : idx)
    if (c >= m) shape_fail("gather_cols", a.shape(), "column index out of bounds");
  const std::size_t w = idx.size();
  Tensor out({n, w});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * m + idx[j]];
  const auto ia = a.id;
  return a.tape->record("gather_cols", std::move(out), {ia}, [ia, idx = std::move(idx), n, m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    const std::size_t w = idx.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * m + idx[j]] += g[i * w + j];
  });
}

Var scatter_rows(Var a, std::span<const std::size_t> index, std::size_t total_rows, double fill) {
  require_matrix("scatter_rows", a);
  const std::size_t m = a.cols();
  if (index.size() != a.rows()) shape_fail("scatter_rows", a.shape(), "index count must equal row count");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({total_rows, m}, fill);
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= total_rows) shape_fail("scatter_rows", a.shape(), "target row out of bounds");
    std::copy(x.ptr() + i * m, x.ptr() + (i + 1) * m, out.ptr() + idx[i] * m);
  }
  const auto ia = a.id;
  return a.tape->record("scatter_rows", std::move(out), {ia}, [ia, idx = std::move(idx), m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[idx[i] * m + j];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id;
  return a.tape->record("reshape", std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var pair_sum(Var a, Var b) {
  require_matrix("pair_sum", a);
  require_matrix("pair_sum", b);
  if (a.cols() != b.cols()) shape_fail("pair_sum", a.shape(), b.shape());
  const std::size_t n = a.rows(), L = b.rows(), h = a.cols();
  Tensor out({n * L, h});
  const double* av = a.value().ptr();
  const double* bv = b.value().ptr();
  double* o = out.ptr();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < h; ++j) o[(i * L + l) * h + j] = av[i * h + j] + bv[l * h + j];
  const auto ia = a.id, ib = b.id;
  return a.tape->record("pair_sum", std::move(out), {ia, ib}, [ia, ib, n, L, h](Tape& t, const Tensor& g) {
    const double* gp = g.ptr();
    if (t.requires_grad(ia)) {
      double* ga = t.grad_buffer(ia).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t j = 0; j < h; ++j) ga[i * h + j] += gp[(i * L + l) * h + j];
    }
    if (t.requires_grad(ib)) {
      double* gb = t.grad_buffer(ib).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t j = 0; j < h; ++j) gb[l * h + j] += gp[(i * L + l) * h + j];
    }
  });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

}  // namespace ad

}  // namespace hsnerf
