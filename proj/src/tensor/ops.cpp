#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "store/tensor.hpp"

namespace store {

namespace {

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

std::vector<double> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (!in.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.requires_grad) x.grad[i] += self.grad[i];
      if (y.requires_grad) y.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.requires_grad) x.grad[i] += self.grad[i] * y.value[i];
      if (y.requires_grad) y.grad[i] += self.grad[i] * x.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v += value;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v *= v;
  return make_result("square", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += 2.0 * x.value[i] * self.grad[i];
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v = std::tanh(v);
  return make_result("tanh", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      x.grad[i] += (1.0 - y * y) * self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return make_result("sigmoid", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      x.grad[i] += y * (1.0 - y) * self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const std::size_t n = x.shape().back();
  if (b.rank() != 1 || b.dim(0) != n) {
    throw std::invalid_argument("add_bias: bias " + shape_str(b.shape()) + " does not match " +
                                shape_str(x.shape()));
  }
  std::vector<double> out = copy_values(x);
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return make_result("add_bias", x.shape(), std::move(out), {x, b}, [n](Node& self) {
    Node& in = parent(self, 0);
    Node& bias = parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (in.requires_grad) in.grad[i] += self.grad[i];
      if (bias.requires_grad) bias.grad[i % n] += self.grad[i];
    }
  });
}

Tensor stop_gradient(const Tensor& x) {
  // Parent is kept so the input stays reachable; backward contributes nothing.
  return make_result("stop_gradient", x.shape(), copy_values(x), {x}, [](Node&) {});
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1) throw std::invalid_argument("matmul: rhs must be rank 2");
  const std::size_t k = a.shape().back();
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dims differ " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const std::size_t n = b.dim(1);
  const std::size_t rows = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(rows * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < rows; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
    }
  }
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b}, [rows, k, n](Node& self) {
    Node& x = parent(self, 0);
    Node& w = parent(self, 1);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* g = self.grad.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double* wrow = w.value.data() + p * n;
        if (x.requires_grad) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[j] * wrow[j];
          x.grad[i * k + p] += acc;
        }
        if (w.requires_grad) {
          const double xip = x.value[i * k + p];
          double* gw = w.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gw[j] += xip * g[j];
        }
      }
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("bmm: expected batched rank-3 operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) {
    throw std::invalid_argument("bmm: inner dims differ " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  std::vector<double> out(g * m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t s = 0; s < g; ++s) {
    const double* A = av.data() + s * m * k;
    const double* Bm = bv.data() + s * k * n;
    double* O = out.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (transpose_b) {
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * Bm[j * k + p];
          O[i * n + j] = acc;
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) O[i * n + j] += aip * Bm[p * n + j];
        }
      }
    }
  }
  return make_result("bmm", {g, m, n}, std::move(out), {a, b}, [g, m, k, n, transpose_b](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    for (std::size_t s = 0; s < g; ++s) {
      const double* G = self.grad.data() + s * m * n;
      const double* A = x.value.data() + s * m * k;
      const double* Bm = y.value.data() + s * k * n;
      double* dA = x.requires_grad ? x.grad.data() + s * m * k : nullptr;
      double* dB = y.requires_grad ? y.grad.data() + s * k * n : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = G[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            const std::size_t bidx = transpose_b ? j * k + p : p * n + j;
            if (dA) dA[i * k + p] += gij * Bm[bidx];
            if (dB) dB[bidx] += gij * A[i * k + p];
          }
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expected rank 2");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) x.grad[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel() || shape.empty() || shape.size() > 3) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), copy_values(a), {a}, [](Node& self) {
    Node& x = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_result("sum", {1}, {acc}, {a}, [](Node& self) {
    Node& x = parent(self, 0);
    for (double& g : x.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_result("mean", {1}, {acc * inv}, {a}, [inv](Node& self) {
    Node& x = parent(self, 0);
    for (double& g : x.grad) g += self.grad[0] * inv;
  });
}

Tensor mean_tokens(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("mean_tokens: expected [n, h, d]");
  const std::size_t n = x.dim(0), h = x.dim(1), d = x.dim(2);
  const double inv = 1.0 / static_cast<double>(h);
  std::vector<double> out(n * d, 0.0);
  const auto xv = x.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < h; ++t)
      for (std::size_t c = 0; c < d; ++c) out[b * d + c] += xv[(b * h + t) * d + c] * inv;
  return make_result("mean_tokens", {n, d}, std::move(out), {x}, [n, h, d, inv](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t t = 0; t < h; ++t)
        for (std::size_t c = 0; c < d; ++c) in.grad[(b * h + t) * d + c] += self.grad[b * d + c] * inv;
  });
}

Tensor sum_last(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows, 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
  return make_result("sum_last", std::move(out_shape), std::move(out), {x}, [rows, n](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) in.grad[r * n + j] += self.grad[r];
  });
}

// ---- normalization ---------------------------------------------------------

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out = copy_values(x);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) in.grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw std::invalid_argument("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [rows, d, xhat, rstd](Node& self) {
                       Node& in = parent(self, 0);
                       Node& g = parent(self, 1);
                       Node& b = parent(self, 2);
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.data() + r * d;
                         const double* h = xhat->data() + r * d;
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = dy[j] * g.value[j];
                           mean_dh += dh;
                           mean_dh_h += dh * h[j];
                           if (g.requires_grad) g.grad[j] += dy[j] * h[j];
                           if (b.requires_grad) b.grad[j] += dy[j];
                         }
                         if (!in.requires_grad) continue;
                         mean_dh *= inv_d;
                         mean_dh_h *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = dy[j] * g.value[j];
                           in.grad[r * d + j] += (*rstd)[r] * (dh - mean_dh - h[j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("normalize_rows: expected rank 2");
  const std::size_t r = x.dim(0), n = x.dim(1);
  auto norms = std::make_shared<std::vector<double>>(r);
  std::vector<double> out = copy_values(x);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += out[i * n + j] * out[i * n + j];
    if (ss == 0.0) throw std::domain_error("normalize_rows: row " + std::to_string(i) + " has zero norm");
    const double nrm = std::sqrt(ss);
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= nrm;
  }
  return make_result("normalize_rows", x.shape(), std::move(out), {x}, [r, n, norms](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) in.grad[i * n + j] += (g[j] - y[j] * dot) / (*norms)[i];
    }
  });
}

// ---- structure -------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw std::invalid_argument("concat: leading dims differ " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  // make_result takes an initializer_list, so record parents by hand.
  Tensor result = make_result("concat", std::move(out_shape), std::move(out), {}, {});
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (any) {
    auto node = result.node();
    node->requires_grad = true;
    for (const Tensor& p : parts) node->parents.push_back(p.node());
    node->backward = [rows, total, widths](Node& self) {
      std::size_t o = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        Node& in = parent(self, k);
        if (in.requires_grad) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j) in.grad[r * widths[k] + j] += self.grad[r * total + o + j];
        }
        o += widths[k];
      }
    };
  }
  return result;
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor stack_tokens(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_tokens: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() != 2) throw std::invalid_argument("stack_tokens: expected rank-2 parts");
  for (const Tensor& p : parts) {
    if (p.shape() != s0) throw std::invalid_argument("stack_tokens: part shapes differ");
  }
  const std::size_t n = s0[0], d = s0[1], h = parts.size();
  std::vector<double> out(n * h * d);
  for (std::size_t t = 0; t < h; ++t) {
    const auto v = parts[t].values();
    for (std::size_t b = 0; b < n; ++b) std::copy_n(v.data() + b * d, d, out.data() + (b * h + t) * d);
  }
  Tensor result = make_result("stack_tokens", {n, h, d}, std::move(out), {}, {});
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (any) {
    auto node = result.node();
    node->requires_grad = true;
    for (const Tensor& p : parts) node->parents.push_back(p.node());
    node->backward = [n, h, d](Node& self) {
      for (std::size_t t = 0; t < h; ++t) {
        Node& in = parent(self, t);
        if (!in.requires_grad) continue;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = 0; c < d; ++c) in.grad[b * d + c] += self.grad[(b * h + t) * d + c];
      }
    };
  }
  return result;
}

Tensor slice_last(const Tensor& x, std::size_t offset, std::size_t length) {
  const std::size_t w = x.shape().back();
  if (length == 0 || offset + length > w) throw std::invalid_argument("slice_last: range out of bounds");
  const std::size_t rows = x.numel() / w;
  std::vector<double> out(rows * length);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * w + offset, length, out.data() + r * length);
  Shape s = x.shape();
  s.back() = length;
  return make_result("slice_last", std::move(s), std::move(out), {x}, [rows, w, offset, length](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < length; ++j) in.grad[r * w + offset + j] += self.grad[r * length + j];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
  const std::size_t v = table.dim(0), d = table.dim(1);
  if (rows.empty()) throw std::invalid_argument("gather_rows: no rows requested");
  std::vector<double> out(rows.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " >= " + std::to_string(v));
    }
    std::copy_n(tv.data() + rows[i] * d, d, out.data() + i * d);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return make_result("gather_rows", {rows.size(), d}, std::move(out), {table}, [idx, d](Node& self) {
    Node& t = parent(self, 0);
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t c = 0; c < d; ++c) t.grad[(*idx)[i] * d + c] += self.grad[i * d + c];
  });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw std::invalid_argument("split_heads: " + shape_str(x.shape()) + " not divisible into " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t n = x.dim(0), h = x.dim(1), d = x.dim(2), dh = d / heads;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < h; ++t)
      for (std::size_t hd = 0; hd < heads; ++hd)
        std::copy_n(xv.data() + (b * h + t) * d + hd * dh, dh, out.data() + ((b * heads + hd) * h + t) * dh);
  return make_result("split_heads", {n * heads, h, dh}, std::move(out), {x}, [n, h, d, dh, heads](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t t = 0; t < h; ++t)
        for (std::size_t hd = 0; hd < heads; ++hd)
          for (std::size_t c = 0; c < dh; ++c)
            in.grad[(b * h + t) * d + hd * dh + c] += self.grad[((b * heads + hd) * h + t) * dh + c];
  });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
    throw std::invalid_argument("merge_heads: " + shape_str(x.shape()) + " not divisible into " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t n = x.dim(0) / heads, h = x.dim(1), dh = x.dim(2), d = dh * heads;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t t = 0; t < h; ++t)
        std::copy_n(xv.data() + ((b * heads + hd) * h + t) * dh, dh, out.data() + (b * h + t) * d + hd * dh);
  return make_result("merge_heads", {n, h, d}, std::move(out), {x}, [n, h, d, dh, heads](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t hd = 0; hd < heads; ++hd)
        for (std::size_t t = 0; t < h; ++t)
          for (std::size_t c = 0; c < dh; ++c)
            in.grad[((b * heads + hd) * h + t) * dh + c] += self.grad[(b * h + t) * d + hd * dh + c];
  });
}

// ---- losses ----------------------------------------------------------------

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> labels) {
  if (probs.numel() != labels.size()) {
    throw std::invalid_argument("binary_cross_entropy: " + std::to_string(probs.numel()) + " probabilities vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("binary_cross_entropy: label outside {0, 1}");
  }
  const auto pv = probs.values();
  const double inv = 1.0 / static_cast<double>(labels.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(pv[i], kProbClip, 1.0 - kProbClip);
    acc -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  auto y = std::make_shared<std::vector<double>>(labels.begin(), labels.end());
  return make_result("binary_cross_entropy", {1}, {acc * inv}, {probs}, [y, inv](Node& self) {
    Node& in = parent(self, 0);
    for (std::size_t i = 0; i < y->size(); ++i) {
      const double p = in.value[i];
      if (p < kProbClip || p > 1.0 - kProbClip) continue;  // clipped: flat
      in.grad[i] += -self.grad[0] * inv * ((*y)[i] / p - (1.0 - (*y)[i]) / (1.0 - p));
    }
  });
}

}  // namespace store
