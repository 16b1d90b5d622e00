#include "sitsfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "sitsfuse/error.hpp"
#include "sitsfuse/kernels.hpp"

namespace sitsfuse::ad {
namespace {

thread_local bool g_grad_enabled = true;

constexpr double kLogFloor = 1e-300;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [](const Var& p) { return p && p->requires_grad; });
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
  }
  return node;
}

/// Gradient buffer of a parent, or null when it does not need one.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->shape() != b->shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape()) +
                                " vs " + shape_str(b->shape()));
}

std::size_t inner_size(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

std::size_t outer_size(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis; ++i) n *= s[i];
  return n;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got " + shape_str(root->shape()));
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward_fn) n->grad = Tensor(n->value.shape());
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a->value;
  for (double& v : out.storage()) v *= factor;
  return make_node(std::move(out), {a}, [factor](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {a}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (self.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Var log(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.storage()) v = std::log(std::max(v, kLogFloor));
  return make_node(std::move(out), {a}, [](Node& self) {
    const Tensor& x = self.parents[0]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] / std::max(x[i], kLogFloor);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.values()) s += v;
  return make_node(Tensor({1}, {s}), {a}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const double gs = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += gs;
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = bias->value.size();
  if (x->shape().empty() || x->shape().back() != n)
    throw std::invalid_argument("add_bias: bias " + shape_str(bias->shape()) + " vs " +
                                shape_str(x->shape()));
  Tensor out = x->value;
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias->value[j];
  return make_node(std::move(out), {x, bias}, [rows, n](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->shape().size() != 2 || b->shape().size() != 2 || a->shape()[1] != b->shape()[0])
    throw std::invalid_argument("matmul: " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  const std::size_t n = a->shape()[0], k = a->shape()[1], m = b->shape()[1];
  Tensor out({n, m});
  kernels::matmul(a->value.data(), b->value.data(), out.data(), n, k, m, false);
  return make_node(std::move(out), {a, b}, [n, k, m](Node& self) {
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    if (double* g = grad_of(self, 0)) kernels::matmul_nt(self.grad.data(), bv, g, n, m, k, true);
    if (double* g = grad_of(self, 1)) kernels::matmul_tn(av, self.grad.data(), g, n, k, m, true);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (w->shape().size() != 2 || x->shape().empty() || x->shape().back() != w->shape()[0] ||
      b->value.size() != w->shape()[1])
    throw std::invalid_argument("linear: x " + shape_str(x->shape()) + ", w " +
                                shape_str(w->shape()) + ", b " + shape_str(b->shape()));
  const std::size_t in = w->shape()[0], out_w = w->shape()[1];
  const std::size_t rows = x->value.size() / in;
  Shape shape = x->shape();
  shape.back() = out_w;
  Tensor out(shape);
  kernels::matmul(x->value.data(), w->value.data(), out.data(), rows, in, out_w, false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out_w; ++j) out[r * out_w + j] += b->value[j];
  return make_node(std::move(out), {x, w, b}, [rows, in, out_w](Node& self) {
    const double* xv = self.parents[0]->value.data();
    const double* wv = self.parents[1]->value.data();
    if (double* g = grad_of(self, 0))
      kernels::matmul_nt(self.grad.data(), wv, g, rows, out_w, in, true);
    if (double* g = grad_of(self, 1))
      kernels::matmul_tn(xv, self.grad.data(), g, rows, in, out_w, true);
    if (double* g = grad_of(self, 2))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_w; ++j) g[j] += self.grad[r * out_w + j];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a->value;
  out.reshape(std::move(shape));
  return make_node(std::move(out), {a}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var permute(const Var& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a->shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw std::invalid_argument("permute: rank mismatch");
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in.at(axes[i]);
  // src_index[o] = input flat index of output element o
  const std::size_t n = a->value.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_strides[axes[i]];
    src[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < n; ++o) out[o] = a->value[src[o]];
  return make_node(std::move(out), {a}, [src = std::move(src)](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t o = 0; o < src.size(); ++o) g[src[o]] += self.grad[o];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape shape = parts.front()->shape();
  if (axis >= shape.size()) throw std::invalid_argument("concat: bad axis");
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape s = p->shape();
    if (s.size() != shape.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != shape[i])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s) + " vs " +
                                    shape_str(shape));
    total += s[axis];
  }
  shape[axis] = total;
  const std::size_t outer = outer_size(shape, axis), inner = inner_size(shape, axis);
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t len = p->shape()[axis] * inner;
    offsets.push_back(offset);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p->value.data() + o * len, len, out.data() + o * total * inner + offset);
    offset += len;
  }
  return make_node(std::move(out), parts, [outer, inner, total, axis, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      double* g = grad_of(self, k);
      if (!g) continue;
      const std::size_t len = self.parents[k]->shape()[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data() + o * total * inner + offsets[k];
        for (std::size_t i = 0; i < len; ++i) g[o * len + i] += src[i];
      }
    }
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  Shape shape = a->shape();
  if (axis >= shape.size() || begin > end || end > shape[axis])
    throw std::invalid_argument("slice: bad range on " + shape_str(shape));
  const std::size_t full = shape[axis];
  const std::size_t outer = outer_size(shape, axis), inner = inner_size(shape, axis);
  shape[axis] = end - begin;
  const std::size_t len = (end - begin) * inner;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a->value.data() + o * full * inner + begin * inner, len, out.data() + o * len);
  return make_node(std::move(out), {a}, [outer, inner, full, begin, len](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len; ++i)
          g[o * full * inner + begin * inner + i] += self.grad[o * len + i];
  });
}

Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
  Shape shape = a->shape();
  const std::size_t width = a->value.size() / shape.at(0);
  for (std::size_t r : rows)
    if (r >= shape[0]) throw std::out_of_range("gather_rows: row out of range");
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a->value.data() + rows[i] * width, width, out.data() + i * width);
  return make_node(std::move(out), {a}, [rows = std::move(rows), width](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[rows[i] * width + j] += self.grad[i * width + j];
  });
}

Var scatter_rows(const Var& a, std::vector<std::size_t> rows, std::size_t total) {
  Shape shape = a->shape();
  if (shape.at(0) != rows.size()) throw std::invalid_argument("scatter_rows: row count mismatch");
  const std::size_t width = rows.empty() ? numel(Shape(shape.begin() + 1, shape.end()))
                                         : a->value.size() / rows.size();
  for (std::size_t r : rows)
    if (r >= total) throw std::out_of_range("scatter_rows: row out of range");
  shape[0] = total;
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) out[rows[i] * width + j] += a->value[i * width + j];
  return make_node(std::move(out), {a}, [rows = std::move(rows), width](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[i * width + j] += self.grad[rows[i] * width + j];
  });
}

Var set_mean_std(const Var& x) {
  const Shape& s = x->shape();
  if (s.size() != 3 || s[1] == 0) throw std::invalid_argument("set_mean_std: expects [N×S×D]");
  const std::size_t n = s[0], set = s[1], d = s[2];
  Tensor out({n, 2 * d});
  kernels::set_mean_std_forward(n, set, d, x->value.data(), out.data());
  return make_node(std::move(out), {x}, [n, set, d](Node& self) {
    if (double* g = grad_of(self, 0))
      kernels::set_mean_std_backward(n, set, d, self.parents[0]->value.data(), self.value.data(),
                                     self.grad.data(), g);
  });
}

Var softmax(const Var& x) {
  const std::size_t k = x->shape().back();
  const std::size_t rows = x->value.size() / k;
  Tensor out = x->value;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) row[j] /= z;
  }
  return make_node(std::move(out), {x}, [rows, k](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * k;
      const double* gy = self.grad.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (gy[j] - dot);
    }
  });
}

Var head_scores(const Var& keys, const Var& query) {
  const Shape& ks = keys->shape();
  const Shape& qs = query->shape();
  if (ks.size() != 3 || qs.size() != 2 || ks[2] != qs[0] * qs[1])
    throw std::invalid_argument("head_scores: keys " + shape_str(ks) + ", query " + shape_str(qs));
  const std::size_t n = ks[0], t = ks[1], heads = qs[0], dk = qs[1];
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out({n, heads, t});
  const double* kv = keys->value.data();
  const double* qv = query->value.data();
#pragma omp parallel for schedule(static) if (n * t * heads * dk > (1 << 15))
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < heads; ++g)
      for (std::size_t s = 0; s < t; ++s) {
        const double* krow = kv + (i * t + s) * heads * dk + g * dk;
        double acc = 0.0;
        for (std::size_t j = 0; j < dk; ++j) acc += krow[j] * qv[g * dk + j];
        out[(i * heads + g) * t + s] = acc * inv;
      }
  return make_node(std::move(out), {keys, query}, [n, t, heads, dk, inv](Node& self) {
    const double* kv = self.parents[0]->value.data();
    const double* qv = self.parents[1]->value.data();
    const double* gz = self.grad.data();
    if (double* gk = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t g = 0; g < heads; ++g)
          for (std::size_t s = 0; s < t; ++s) {
            const double c = gz[(i * heads + g) * t + s] * inv;
            double* krow = gk + (i * t + s) * heads * dk + g * dk;
            for (std::size_t j = 0; j < dk; ++j) krow[j] += c * qv[g * dk + j];
          }
    if (double* gq = grad_of(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t g = 0; g < heads; ++g)
          for (std::size_t s = 0; s < t; ++s) {
            const double c = gz[(i * heads + g) * t + s] * inv;
            const double* krow = kv + (i * t + s) * heads * dk + g * dk;
            for (std::size_t j = 0; j < dk; ++j) gq[g * dk + j] += c * krow[j];
          }
  });
}

Var masked_softmax(const Var& scores, std::span<const std::uint8_t> mask) {
  const Shape& s = scores->shape();
  if (s.size() != 3 || mask.size() != s[0] * s[2])
    throw std::invalid_argument("masked_softmax: scores " + shape_str(s) + " with mask of " +
                                std::to_string(mask.size()));
  const std::size_t n = s[0], heads = s[1], t = s[2];
  Tensor out(s);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* m = mask.data() + i * t;
    if (std::none_of(m, m + t, [](std::uint8_t v) { return v != 0; }))
      throw ValidationError("attention over a fully masked sequence (row " + std::to_string(i) + ")");
    for (std::size_t g = 0; g < heads; ++g) {
      const double* z = scores->value.data() + (i * heads + g) * t;
      double* a = out.data() + (i * heads + g) * t;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < t; ++k)
        if (m[k]) mx = std::max(mx, z[k]);
      double total = 0.0;
      for (std::size_t k = 0; k < t; ++k) total += (a[k] = m[k] ? std::exp(z[k] - mx) : 0.0);
      for (std::size_t k = 0; k < t; ++k) a[k] /= total;
    }
  }
  return make_node(std::move(out), {scores}, [n, heads, t](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < n * heads; ++r) {
      const double* a = self.value.data() + r * t;
      const double* ga = self.grad.data() + r * t;
      double dot = 0.0;
      for (std::size_t k = 0; k < t; ++k) dot += a[k] * ga[k];
      for (std::size_t k = 0; k < t; ++k) g[r * t + k] += a[k] * (ga[k] - dot);
    }
  });
}

Var attend(const Var& weights, const Var& values) {
  const Shape& ws = weights->shape();
  const Shape& vs = values->shape();
  if (ws.size() != 3 || vs.size() != 3 || ws[0] != vs[0] || ws[2] != vs[1] || vs[2] % ws[1] != 0)
    throw std::invalid_argument("attend: weights " + shape_str(ws) + ", values " + shape_str(vs));
  const std::size_t n = ws[0], heads = ws[1], t = ws[2], e = vs[2], cg = e / heads;
  Tensor out({n, e});
  const double* a = weights->value.data();
  const double* v = values->value.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < heads; ++g) {
      double* o = out.data() + i * e + g * cg;
      for (std::size_t s = 0; s < t; ++s) {
        const double w = a[(i * heads + g) * t + s];
        if (w == 0.0) continue;
        const double* vr = v + (i * t + s) * e + g * cg;
        for (std::size_t c = 0; c < cg; ++c) o[c] += w * vr[c];
      }
    }
  return make_node(std::move(out), {weights, values}, [n, heads, t, e, cg](Node& self) {
    const double* a = self.parents[0]->value.data();
    const double* v = self.parents[1]->value.data();
    const double* go = self.grad.data();
    double* ga = grad_of(self, 0);
    double* gv = grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t g = 0; g < heads; ++g) {
        const double* gor = go + i * e + g * cg;
        for (std::size_t s = 0; s < t; ++s) {
          const std::size_t ai = (i * heads + g) * t + s;
          const std::size_t vi = (i * t + s) * e + g * cg;
          if (ga) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cg; ++c) acc += gor[c] * v[vi + c];
            ga[ai] += acc;
          }
          if (gv && a[ai] != 0.0)
            for (std::size_t c = 0; c < cg; ++c) gv[vi + c] += a[ai] * gor[c];
        }
      }
  });
}

Var temporal_weighted_mean(const Var& weights, const Var& frames) {
  const Shape& ws = weights->shape();
  const Shape& fs = frames->shape();
  if (ws.size() != 5 || fs.size() != 5 || ws[0] != fs[0] || ws[2] != fs[1] || ws[3] != fs[3] ||
      ws[4] != fs[4] || fs[2] % ws[1] != 0)
    throw std::invalid_argument("temporal_weighted_mean: weights " + shape_str(ws) + ", frames " +
                                shape_str(fs));
  const std::size_t b = fs[0], t = fs[1], c = fs[2], heads = ws[1], p = fs[3] * fs[4];
  const std::size_t cg = c / heads;
  Tensor out({b, c, fs[3], fs[4]});
  const double* a = weights->value.data();
  const double* e = frames->value.data();
#pragma omp parallel for collapse(2) schedule(static) if (b * c * t * p > (1 << 15))
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t g = ch / cg;
      double* o = out.data() + (i * c + ch) * p;
      for (std::size_t s = 0; s < t; ++s) {
        const double* w = a + ((i * heads + g) * t + s) * p;
        const double* f = e + ((i * t + s) * c + ch) * p;
        for (std::size_t q = 0; q < p; ++q) o[q] += w[q] * f[q];
      }
    }
  return make_node(std::move(out), {weights, frames}, [b, t, c, heads, p, cg](Node& self) {
    const double* a = self.parents[0]->value.data();
    const double* e = self.parents[1]->value.data();
    const double* go = self.grad.data();
    double* ga = grad_of(self, 0);
    double* ge = grad_of(self, 1);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t g = ch / cg;
        const double* gor = go + (i * c + ch) * p;
        for (std::size_t s = 0; s < t; ++s) {
          const std::size_t wi = ((i * heads + g) * t + s) * p;
          const std::size_t fi = ((i * t + s) * c + ch) * p;
          if (ga)
            for (std::size_t q = 0; q < p; ++q) ga[wi + q] += gor[q] * e[fi + q];
          if (ge)
            for (std::size_t q = 0; q < p; ++q) ge[fi + q] += gor[q] * a[wi + q];
        }
      }
  });
}

namespace {

struct Lerp {
  std::size_t lo, hi;
  double frac;
};

// Half-pixel-center source coordinates (align_corners = false).
std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> table(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    table[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return table;
}

}  // namespace

Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  const Shape& s = x->shape();
  if (s.size() < 2) throw std::invalid_argument("upsample_bilinear: rank < 2");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t planes = x->value.size() / (h * w);
  Shape shape = s;
  shape[s.size() - 2] = out_h;
  shape[s.size() - 1] = out_w;
  auto ys = lerp_table(h, out_h), xs = lerp_table(w, out_w);
  Tensor out(shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = x->value.data() + p * h * w;
    double* o = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Lerp& ly = ys[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Lerp& lx = xs[j];
        const double top = (1.0 - lx.frac) * in[ly.lo * w + lx.lo] + lx.frac * in[ly.lo * w + lx.hi];
        const double bot = (1.0 - lx.frac) * in[ly.hi * w + lx.lo] + lx.frac * in[ly.hi * w + lx.hi];
        o[i * out_w + j] = (1.0 - ly.frac) * top + ly.frac * bot;
      }
    }
  }
  return make_node(std::move(out), {x}, [planes, h, w, out_h, out_w, ys, xs](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      double* gi = g + p * h * w;
      const double* go = self.grad.data() + p * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const Lerp& ly = ys[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const Lerp& lx = xs[j];
          const double v = go[i * out_w + j];
          gi[ly.lo * w + lx.lo] += (1.0 - ly.frac) * (1.0 - lx.frac) * v;
          gi[ly.lo * w + lx.hi] += (1.0 - ly.frac) * lx.frac * v;
          gi[ly.hi * w + lx.lo] += ly.frac * (1.0 - lx.frac) * v;
          gi[ly.hi * w + lx.hi] += ly.frac * lx.frac * v;
        }
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t padding) {
  const Shape& xs = x->shape();
  const Shape& ws = w->shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != ws[3] ||
      b->value.size() != ws[0])
    throw std::invalid_argument("conv2d: x " + shape_str(xs) + ", w " + shape_str(ws));
  kernels::ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, padding};
  Tensor out({xs[0], ws[0], geo.out_height(), geo.out_width()});
  kernels::conv2d_forward(geo, x->value.data(), w->value.data(), b->value.data(), out.data());
  return make_node(std::move(out), {x, w, b}, [geo](Node& self) {
    kernels::conv2d_backward(geo, self.parents[0]->value.data(), self.parents[1]->value.data(),
                             self.grad.data(), grad_of(self, 0), grad_of(self, 1),
                             grad_of(self, 2));
  });
}

Var conv_transpose2x2(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x->shape();
  const Shape& ws = w->shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0] || ws[2] != 2 || ws[3] != 2 ||
      b->value.size() != ws[1])
    throw std::invalid_argument("conv_transpose2x2: x " + shape_str(xs) + ", w " + shape_str(ws));
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3], o = ws[1];
  Tensor out({n, o, 2 * h, 2 * wd});
  kernels::conv_transpose2x2_forward(n, c, h, wd, o, x->value.data(), w->value.data(),
                                     b->value.data(), out.data());
  return make_node(std::move(out), {x, w, b}, [n, c, h, wd, o](Node& self) {
    kernels::conv_transpose2x2_backward(n, c, h, wd, o, self.parents[0]->value.data(),
                                        self.parents[1]->value.data(), self.grad.data(),
                                        grad_of(self, 0), grad_of(self, 1), grad_of(self, 2));
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_index) {
  const Shape& s = logits->shape();
  if (s.size() != 2 || s[0] != targets.size())
    throw std::invalid_argument("cross_entropy: logits " + shape_str(s) + " for " +
                                std::to_string(targets.size()) + " targets");
  const std::size_t n = s[0], k = s[1];
  std::vector<double> probs(n * k, 0.0);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t valid = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tgt[i] == ignore_index) continue;
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= k)
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[i]) + " outside [0, " +
                              std::to_string(k) + ")");
    const double* row = logits->value.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (probs[i * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    loss += mx + std::log(z) - row[tgt[i]];
    ++valid;
  }
  const double scale_factor = valid ? 1.0 / static_cast<double>(valid) : 0.0;
  return make_node(Tensor({1}, {loss * scale_factor}), {logits},
                   [n, k, scale_factor, ignore_index, probs = std::move(probs),
                    tgt = std::move(tgt)](Node& self) {
                     double* g = grad_of(self, 0);
                     if (!g) return;
                     const double c = self.grad[0] * scale_factor;
                     for (std::size_t i = 0; i < n; ++i) {
                       if (tgt[i] == ignore_index) continue;
                       for (std::size_t j = 0; j < k; ++j) g[i * k + j] += c * probs[i * k + j];
                       g[i * k + static_cast<std::size_t>(tgt[i])] -= c;
                     }
                   });
}

}  // namespace sitsfuse::ad
