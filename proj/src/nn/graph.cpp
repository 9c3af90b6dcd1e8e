// SPDX-License-Identifier: Apache-2.0
#include "fedsim/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "fedsim/common/error.hpp"

namespace fedsim::nn {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(Param& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(nodes_[loss.id].value.shape()));
  }
  if (backward_done_) throw ContractError("backward: graph already consumed");
  backward_done_ = true;

  grad_slot(loss.id).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      C[i * n + j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void same_graph(Var a, Var b, const char* op) {
  if (a.graph != b.graph) throw ContractError(std::string(op) + ": operands from different graphs");
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  same_graph(a, b, "matmul");
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const Shape& sa = A.shape();
  const Shape& sb = B.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();

  if (sb.size() == 2) {
    const std::size_t k = sa.back();
    if (sb[0] != k) throw mismatch();
    const std::size_t n = sb[1];
    const std::size_t rows = A.numel() / k;
    Shape so = sa;
    so.back() = n;
    Tensor out(so);
    gemm_nn(A.data().data(), B.data().data(), out.data().data(), rows, k, n);
    return g.record(std::move(out), {a.id, b.id}, [rows, k, n](Graph& gr, std::size_t self) {
      const auto ia = gr.inputs(self)[0];
      const auto ib = gr.inputs(self)[1];
      const Tensor& dy = gr.out_grad(self);
      if (gr.needs_grad(ia)) {
        gemm_nt(dy.data().data(), gr.value(ib).data().data(), gr.grad_slot(ia).data().data(), rows,
                n, k);
      }
      if (gr.needs_grad(ib)) {
        gemm_tn(gr.value(ia).data().data(), dy.data().data(), gr.grad_slot(ib).data().data(), rows,
                k, n);
      }
    });
  }

  if (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1]) {
    const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Tensor out(Shape{batch, m, n});
    for (std::size_t i = 0; i < batch; ++i) {
      gemm_nn(A.data().data() + i * m * k, B.data().data() + i * k * n,
              out.data().data() + i * m * n, m, k, n);
    }
    return g.record(std::move(out), {a.id, b.id}, [batch, m, k, n](Graph& gr, std::size_t self) {
      const auto ia = gr.inputs(self)[0];
      const auto ib = gr.inputs(self)[1];
      const double* dy = gr.out_grad(self).data().data();
      if (gr.needs_grad(ia)) {
        double* da = gr.grad_slot(ia).data().data();
        const double* bv = gr.value(ib).data().data();
        for (std::size_t i = 0; i < batch; ++i) {
          gemm_nt(dy + i * m * n, bv + i * k * n, da + i * m * k, m, n, k);
        }
      }
      if (gr.needs_grad(ib)) {
        double* db = gr.grad_slot(ib).data().data();
        const double* av = gr.value(ia).data().data();
        for (std::size_t i = 0; i < batch; ++i) {
          gemm_tn(av + i * m * k, dy + i * m * n, db + i * k * n, m, k, n);
        }
      }
    });
  }
  throw mismatch();
}

Var add(Var a, Var b) {
  same_graph(a, b, "add");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - sb.size())) {
    throw DimensionError("add: shape " + shape_str(sb) + " does not broadcast onto " +
                         shape_str(sa));
  }
  const std::size_t inner = numel_of(sb);
  const std::size_t reps = inner == 0 ? 0 : a.value().numel() / inner;
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < inner; ++j) o[r * inner + j] += bv[j];
  }
  return a.graph->record(std::move(out), {a.id, b.id}, [reps, inner](Graph& gr, std::size_t self) {
    const auto ia = gr.inputs(self)[0];
    const auto ib = gr.inputs(self)[1];
    auto dy = gr.out_grad(self).data();
    if (gr.needs_grad(ia)) {
      auto da = gr.grad_slot(ia).data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
    }
    if (gr.needs_grad(ib)) {
      auto db = gr.grad_slot(ib).data();
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < inner; ++j) db[j] += dy[r * inner + j];
      }
    }
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
  }
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.graph->record(std::move(out), {a.id, b.id}, [](Graph& gr, std::size_t self) {
    const auto ia = gr.inputs(self)[0];
    const auto ib = gr.inputs(self)[1];
    auto dy = gr.out_grad(self).data();
    if (gr.needs_grad(ia)) {
      auto da = gr.grad_slot(ia).data();
      auto bv = gr.value(ib).data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (gr.needs_grad(ib)) {
      auto db = gr.grad_slot(ib).data();
      auto av = gr.value(ia).data();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return a.graph->record(std::move(out), {a.id}, [c](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    auto da = gr.grad_slot(gr.inputs(self)[0]).data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += c * dy[i];
  });
}

Var scalar_mul(Var s, Var a) {
  same_graph(s, a, "scalar_mul");
  if (s.value().numel() != 1) {
    throw DimensionError("scalar_mul: gate must hold one element, got " + shape_str(s.shape()));
  }
  const double k = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.data()) v *= k;
  return a.graph->record(std::move(out), {s.id, a.id}, [](Graph& gr, std::size_t self) {
    const auto is = gr.inputs(self)[0];
    const auto ia = gr.inputs(self)[1];
    auto dy = gr.out_grad(self).data();
    if (gr.needs_grad(is)) {
      auto av = gr.value(ia).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * av[i];
      gr.grad_slot(is)[0] += acc;
    }
    if (gr.needs_grad(ia)) {
      const double k = gr.value(is)[0];
      auto da = gr.grad_slot(ia).data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += k * dy[i];
    }
  });
}

Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose: needs rank >= 2, got " + shape_str(s));
  const std::size_t m = s[s.size() - 2], n = s.back();
  const std::size_t batch = a.value().numel() / (m * n == 0 ? 1 : m * n);
  Shape so = s;
  std::swap(so[so.size() - 2], so.back());
  Tensor out(so);
  auto src = a.value().data();
  auto dst = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) dst[b * m * n + j * m + i] = src[b * m * n + i * n + j];
    }
  }
  return a.graph->record(std::move(out), {a.id}, [batch, m, n](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    auto da = gr.grad_slot(gr.inputs(self)[0]).data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) da[b * m * n + i * n + j] += dy[b * m * n + j * m + i];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value();
  out.reshape(std::move(shape));
  return a.graph->record(std::move(out), {a.id}, [](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    auto da = gr.grad_slot(gr.inputs(self)[0]).data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Graph& g = *parts[0].graph;
  const Shape& s0 = parts[0].shape();
  check_axis(s0, axis, "concat");
  Shape so = s0;
  so[axis] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> lens;
  for (const Var& p : parts) {
    if (p.graph != &g) throw ContractError("concat: operands from different graphs");
    Shape s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
      }
    }
    so[axis] += s[axis];
    ids.push_back(p.id);
    lens.push_back(s[axis]);
  }
  const AxisSplit sp = split_axis(so, axis);
  Tensor out(so);
  auto dst = out.data();
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto src = parts[pi].value().data();
    const std::size_t chunk = lens[pi] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk, dst.begin() + o * sp.len * sp.inner + offset);
    }
    offset += chunk;
  }
  return g.record(std::move(out), ids, [sp, lens](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < lens.size(); ++pi) {
      const std::size_t in = gr.inputs(self)[pi];
      const std::size_t chunk = lens[pi] * sp.inner;
      if (gr.needs_grad(in)) {
        auto da = gr.grad_slot(in).data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t j = 0; j < chunk; ++j) {
            da[o * chunk + j] += dy[o * sp.len * sp.inner + offset + j];
          }
        }
      }
      offset += chunk;
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  check_axis(s, axis, "slice");
  if (start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Shape so = s;
  so[axis] = length;
  Tensor out(so);
  auto src = a.value().data();
  auto dst = out.data();
  const std::size_t chunk = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src.begin() + o * sp.len * sp.inner + start * sp.inner, chunk,
                dst.begin() + o * chunk);
  }
  return a.graph->record(std::move(out), {a.id}, [sp, start, chunk](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    auto da = gr.grad_slot(gr.inputs(self)[0]).data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < chunk; ++j) {
        da[o * sp.len * sp.inner + start * sp.inner + j] += dy[o * chunk + j];
      }
    }
  });
}

Var softmax(Var a, std::size_t axis) {
  const Shape& s = a.shape();
  check_axis(s, axis, "softmax");
  const AxisSplit sp = split_axis(s, axis);
  Tensor out(s);
  auto x = a.value().data();
  auto y = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double top = x[base];
      for (std::size_t i = 1; i < sp.len; ++i) top = std::max(top, x[base + i * sp.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < sp.len; ++i) {
        const double e = std::exp(x[base + i * sp.inner] - top);
        y[base + i * sp.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < sp.len; ++i) y[base + i * sp.inner] /= total;
    }
  }
  return a.graph->record(std::move(out), {a.id}, [sp](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    auto y = gr.value(self).data();
    auto dx = gr.grad_slot(gr.inputs(self)[0]).data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < sp.len; ++i) {
          dot += dy[base + i * sp.inner] * y[base + i * sp.inner];
        }
        for (std::size_t i = 0; i < sp.len; ++i) {
          const std::size_t k = base + i * sp.inner;
          dx[k] += y[k] * (dy[k] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_graph(x, gamma, "layer_norm");
  same_graph(x, beta, "layer_norm");
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = s.back();
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match last axis of " + shape_str(s));
  }
  const std::size_t rows = d == 0 ? 0 : x.value().numel() / d;
  Tensor out(s);
  // xhat followed by per-row rstd, kept for the backward pass
  auto saved = std::make_shared<std::vector<double>>(x.value().numel() + rows);
  auto xv = x.value().data();
  auto gv = gamma.value().data();
  auto bv = beta.value().data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*saved)[xv.size() + r] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mu) * rstd;
      (*saved)[r * d + j] = xh;
      y[r * d + j] = xh * gv[j] + bv[j];
    }
  }
  return x.graph->record(
      std::move(out), {x.id, gamma.id, beta.id}, [saved, rows, d](Graph& gr, std::size_t self) {
        const auto ix = gr.inputs(self)[0];
        const auto ig = gr.inputs(self)[1];
        const auto ib = gr.inputs(self)[2];
        auto dy = gr.out_grad(self).data();
        const std::vector<double>& sv = *saved;
        const std::size_t n = rows * d;
        if (gr.needs_grad(ig)) {
          auto dg = gr.grad_slot(ig).data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * sv[r * d + j];
          }
        }
        if (gr.needs_grad(ib)) {
          auto db = gr.grad_slot(ib).data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
          }
        }
        if (gr.needs_grad(ix)) {
          auto gv = gr.value(ig).data();
          auto dx = gr.grad_slot(ix).data();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[r * d + j] * gv[j];
              m1 += dxh;
              m2 += dxh * sv[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            const double rstd = sv[n + r];
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[r * d + j] * gv[j];
              dx[r * d + j] += rstd * (dxh - m1 - sv[r * d + j] * m2);
            }
          }
        }
      });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  Tensor out = a.value();
  for (double& v : out.data()) {
    v = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  }
  return a.graph->record(std::move(out), {a.id}, [](Graph& gr, std::size_t self) {
    const auto ia = gr.inputs(self)[0];
    auto dy = gr.out_grad(self).data();
    auto x = gr.value(ia).data();
    auto dx = gr.grad_slot(ia).data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = x[i];
      const double t = std::tanh(c * (v + k * v * v * v));
      const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
      dx[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_str(s));
  const std::size_t vocab = s[0], d = s[1];
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out(Shape{idx.size(), d});
  auto src = table.value().data();
  auto dst = out.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    std::copy_n(src.begin() + idx[i] * d, d, dst.begin() + i * d);
  }
  return table.graph->record(std::move(out), {table.id},
                             [idx = std::move(idx), d](Graph& gr, std::size_t self) {
                               auto dy = gr.out_grad(self).data();
                               auto dt = gr.grad_slot(gr.inputs(self)[0]).data();
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 for (std::size_t j = 0; j < d; ++j) {
                                   dt[idx[i] * d + j] += dy[i * d + j];
                                 }
                               }
                             });
}

namespace {

Var reduce_all(Var a, double factor) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.graph->record(Tensor::scalar(total * factor), {a.id},
                         [factor](Graph& gr, std::size_t self) {
                           const double dy = gr.out_grad(self)[0] * factor;
                           for (double& v : gr.grad_slot(gr.inputs(self)[0]).data()) v += dy;
                         });
}

Var reduce_axis(Var a, std::size_t axis, bool average) {
  const Shape& s = a.shape();
  check_axis(s, axis, average ? "mean" : "sum");
  const AxisSplit sp = split_axis(s, axis);
  const double factor = average ? 1.0 / static_cast<double>(sp.len) : 1.0;
  Shape so = s;
  so.erase(so.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(so);
  auto x = a.value().data();
  auto y = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.len; ++i) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        y[o * sp.inner + in] += x[(o * sp.len + i) * sp.inner + in];
      }
    }
  }
  if (average) {
    for (double& v : y) v *= factor;
  }
  return a.graph->record(std::move(out), {a.id}, [sp, factor](Graph& gr, std::size_t self) {
    auto dy = gr.out_grad(self).data();
    auto dx = gr.grad_slot(gr.inputs(self)[0]).data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.len; ++i) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          dx[(o * sp.len + i) * sp.inner + in] += factor * dy[o * sp.inner + in];
        }
      }
    }
  });
}

}  // namespace

Var sum(Var a) { return reduce_all(a, 1.0); }
Var sum(Var a, std::size_t axis) { return reduce_axis(a, axis, false); }
Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ContractError("mean: empty tensor");
  return reduce_all(a, 1.0 / static_cast<double>(n));
}
Var mean(Var a, std::size_t axis) { return reduce_axis(a, axis, true); }

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross_entropy: logits must be 2-D, got " + shape_str(s));
  const std::size_t n = s[0], c = s[1];
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  if (n == 0) throw ContractError("cross_entropy: empty batch");
  std::vector<int> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<double>>(n * c);
  auto x = logits.value().data();
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= c) {
      throw ContractError("cross_entropy: target " + std::to_string(tgt[r]) + " outside " +
                          std::to_string(c) + " classes");
    }
    const double* row = x.data() + r * c;
    const double top = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - top);
      (*probs)[r * c + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= total;
    loss += std::log(total) + top - row[tgt[r]];
  }
  loss /= static_cast<double>(n);
  return logits.graph->record(Tensor::scalar(loss), {logits.id},
                              [probs, tgt = std::move(tgt), n, c](Graph& gr, std::size_t self) {
                                const double dy = gr.out_grad(self)[0] / static_cast<double>(n);
                                auto dx = gr.grad_slot(gr.inputs(self)[0]).data();
                                for (std::size_t r = 0; r < n; ++r) {
                                  for (std::size_t j = 0; j < c; ++j) {
                                    double p = (*probs)[r * c + j];
                                    if (static_cast<int>(j) == tgt[r]) p -= 1.0;
                                    dx[r * c + j] += dy * p;
                                  }
                                }
                              });
}

Var l2_normalize(Var a, double eps) {
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("l2_normalize: scalar input");
  const std::size_t d = s.back();
  const std::size_t rows = d == 0 ? 0 : a.value().numel() / d;
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor out = a.value();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += y[r * d + j] * y[r * d + j];
    const double nrm = std::max(std::sqrt(sq), eps);
    (*norms)[r] = nrm;
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] /= nrm;
  }
  return a.graph->record(std::move(out), {a.id}, [norms, rows, d, eps](Graph& gr, std::size_t self) {
    const auto ia = gr.inputs(self)[0];
    auto dy = gr.out_grad(self).data();
    auto y = gr.value(self).data();
    auto dx = gr.grad_slot(ia).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double nrm = (*norms)[r];
      if (nrm <= eps) {
        for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += dy[r * d + j] / eps;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) {
        dx[r * d + j] += (dy[r * d + j] - y[r * d + j] * dot) / nrm;
      }
    }
  });
}

Var check_finite(Var a, const char* what) {
  require_finite(a.value(), what);
  return a;
}

}  // namespace fedsim::nn
