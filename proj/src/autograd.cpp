#include "concner/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "concner/error.hpp"

namespace concner {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) shape_error(op, "expected rank-2 input, got " + shape_string(t.shape()));
}

void require_nonempty(const char* op, const Tensor& t) {
  if (t.empty()) throw Error(ErrorCode::EmptyTensor, std::string(op) + ": empty input");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void check_mask(const char* op, std::span<const std::uint8_t> mask, std::size_t expected) {
  if (!mask.empty() && mask.size() != expected) {
    shape_error(op, "mask of size " + std::to_string(mask.size()) + ", expected " +
                        std::to_string(expected));
  }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// Adds g into v's gradient if v participates in differentiation.
template <typename Fn>
void flow(Tape& t, Var v, Fn&& fn) {
  if (t.requires_grad(v.id())) fn(t.grad_buffer(v.id()));
}

}  // namespace

// ------------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape_->value(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || requires_grad(v.id());
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
}

void Tape::backward(Var output) {
  if (output.value().size() != 1) {
    shape_error("backward", "output must be a single value, got " +
                                shape_string(output.value().shape()));
  }
  grad_buffer(output.id())[0] += 1.0;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.value, n.grad);
  }
}

// ------------------------------------------------------------- primitives

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2("matmul", A);
  require_rank2("matmul", B);
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  if (B.shape()[0] != k) {
    shape_error("matmul", shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor out({m, n}, 0.0);
  gemm_nn(A.values(), B.values(), out.values(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor&,
                                                                  const Tensor& g) {
    flow(t, a, [&](Tensor& ga) { gemm_nt(g.values(), b.value().values(), ga.values(), m, n, k); });
    flow(t, b, [&](Tensor& gb) { gemm_tn(a.value().values(), g.values(), gb.values(), m, k, n); });
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_rank2("transpose", A);
  const std::size_t m = A.shape()[0], n = A.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  return a.tape().record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(j, i);
    });
  });
}

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = A.shape() != B.shape() && B.rank() == 1 && A.rank() >= 1 &&
                         B.size() == A.cols();
  if (!broadcast) require_same_shape("add", A, B);
  Tensor out = A;
  const std::size_t cols = A.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += broadcast ? B[i % cols] : B[i];
  return a.tape().record(std::move(out), {a, b},
                         [a, b, broadcast, cols](Tape& t, const Tensor&, const Tensor& g) {
                           flow(t, a, [&](Tensor& ga) {
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           });
                           flow(t, b, [&](Tensor& gb) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               gb[broadcast ? i % cols : i] += g[i];
                             }
                           });
                         });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    flow(t, b, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    });
    flow(t, b, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    });
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  });
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  const Tensor& T = table.value();
  require_rank2("gather_rows", T);
  if (rows.empty()) throw Error(ErrorCode::EmptyTensor, "gather_rows: no rows requested");
  const std::size_t n_rows = T.shape()[0], d = T.shape()[1];
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n_rows) {
      throw Error(ErrorCode::IdOutOfRange, "gather_rows: row " + std::to_string(rows[r]) +
                                               " of " + std::to_string(n_rows));
    }
    std::copy_n(T.row(rows[r]).begin(), d, out.row(r).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return table.tape().record(std::move(out), {table},
                             [table, idx = std::move(idx), d](Tape& t, const Tensor&,
                                                              const Tensor& g) {
                               flow(t, table, [&](Tensor& gt) {
                                 for (std::size_t r = 0; r < idx.size(); ++r) {
                                   auto dst = gt.row(idx[r]);
                                   auto src = g.row(r);
                                   for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                 }
                               });
                             });
}

namespace {

// Row-wise log-sum-exp over kept entries, max-shifted.
std::vector<double> row_lse(const Tensor& a, std::span<const std::uint8_t> exclude,
                            const char* op) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> lse(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!exclude.empty() && exclude[r * cols + c]) continue;
      mx = std::max(mx, a(r, c));
      any = true;
    }
    if (!any) {
      throw Error(ErrorCode::EmptyTensor,
                  std::string(op) + ": row " + std::to_string(r) + " has every entry excluded");
    }
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!exclude.empty() && exclude[r * cols + c]) continue;
      s += std::exp(a(r, c) - mx);
    }
    lse[r] = mx + std::log(s);
  }
  return lse;
}

}  // namespace

Var softmax_rows(Var a, std::span<const std::uint8_t> exclude) {
  const Tensor& A = a.value();
  require_nonempty("softmax_rows", A);
  check_mask("softmax_rows", exclude, A.size());
  const auto lse = row_lse(A, exclude, "softmax_rows");
  Tensor out(A.shape(), 0.0);
  const std::size_t cols = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (!exclude.empty() && exclude[r * cols + c]) continue;
      out(r, c) = std::exp(A(r, c) - lse[r]);
    }
  return a.tape().record(std::move(out), {a}, [a, cols](Tape& t, const Tensor& y,
                                                       const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
      }
    });
  });
}

Var log_softmax_rows(Var a, std::span<const std::uint8_t> exclude) {
  const Tensor& A = a.value();
  require_nonempty("log_softmax_rows", A);
  check_mask("log_softmax_rows", exclude, A.size());
  const auto lse = row_lse(A, exclude, "log_softmax_rows");
  Tensor out(A.shape(), 0.0);
  const std::size_t cols = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (!exclude.empty() && exclude[r * cols + c]) continue;
      out(r, c) = A(r, c) - lse[r];
    }
  std::vector<std::uint8_t> ex(exclude.begin(), exclude.end());
  return a.tape().record(std::move(out), {a}, [a, cols, ex = std::move(ex)](
                                                  Tape& t, const Tensor& y, const Tensor& g) {
    auto kept = [&](std::size_t r, std::size_t c) { return ex.empty() || !ex[r * cols + c]; };
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          if (kept(r, c)) gsum += g(r, c);
        for (std::size_t c = 0; c < cols; ++c)
          if (kept(r, c)) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
      }
    });
  });
}

Var log(Var a, double floor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::log(std::max(v, floor));
  return a.tape().record(std::move(out), {a}, [a, floor](Tape& t, const Tensor&,
                                                        const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > floor) ga[i] += g[i] / x[i];
      }
    });
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& y, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (auto& v : ga.values()) v += g[0];
    });
  });
}

Var mean(Var a) {
  require_nonempty("mean", a.value());
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) ga[i] += g[i];
      }
    });
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = x.value();
  require_nonempty("layer_norm_rows", X);
  const std::size_t rows = X.rows(), d = X.cols();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    shape_error("layer_norm_rows", "gain/bias must be [" + std::to_string(d) + "]");
  }
  Tensor xhat(X.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += X(r, c);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (X(r, c) - mu) * (X(r, c) - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat(r, c) = (X(r, c) - mu) * inv_std[r];
  }
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out(r, c) = gain.value()[c] * xhat(r, c) + bias.value()[c];
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
          Tape& t, const Tensor&, const Tensor& g) {
        flow(t, gain, [&](Tensor& gg) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += g(r, c) * xhat(r, c);
        });
        flow(t, bias, [&](Tensor& gb) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g(r, c);
        });
        flow(t, x, [&](Tensor& gx) {
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dxh = g(r, c) * gain.value()[c];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat(r, c);
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            for (std::size_t c = 0; c < d; ++c) {
              const double dxh = g(r, c) * gain.value()[c];
              gx(r, c) += inv_std[r] * (dxh - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
            }
          }
        });
      });
}

Var cosine_similarity_rows(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2("cosine_similarity_rows", A);
  require_rank2("cosine_similarity_rows", B);
  require_nonempty("cosine_similarity_rows", A);
  require_nonempty("cosine_similarity_rows", B);
  const std::size_t m = A.shape()[0], n = B.shape()[0], d = A.shape()[1];
  if (B.shape()[1] != d) {
    shape_error("cosine_similarity_rows", shape_string(A.shape()) + " vs " +
                                              shape_string(B.shape()));
  }
  // Unit rows; a zero-norm row stays all-zero and is flagged.
  auto normalize = [d](const Tensor& X, std::vector<double>& norms) {
    Tensor U(X.shape(), 0.0);
    norms.assign(X.shape()[0], 0.0);
    for (std::size_t r = 0; r < X.shape()[0]; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += X(r, c) * X(r, c);
      norms[r] = std::sqrt(s);
      if (norms[r] < kCosineZeroNorm) continue;
      for (std::size_t c = 0; c < d; ++c) U(r, c) = X(r, c) / norms[r];
    }
    return U;
  };
  std::vector<double> na, nb;
  Tensor ua = normalize(A, na);
  Tensor ub = normalize(B, nb);
  Tensor raw({m, n}, 0.0);
  gemm_nt(ua.values(), ub.values(), raw.values(), m, d, n);
  Tensor out = raw;
  for (auto& v : out.values()) v = std::clamp(v, -1.0, 1.0);
  // The gradient uses the unclamped cosine; the clamp only absorbs rounding.
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, ua = std::move(ua), ub = std::move(ub), na = std::move(na), nb = std::move(nb),
       raw = std::move(raw), m, n, d](Tape& t, const Tensor&, const Tensor& g) {
        // dS/da_i = (sum_j g_ij ub_j - (sum_j g_ij s_ij) ua_i) / |a_i|
        flow(t, a, [&](Tensor& ga) {
          for (std::size_t i = 0; i < m; ++i) {
            if (na[i] < kCosineZeroNorm) continue;
            double gs = 0.0;
            std::vector<double> acc(d, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
              if (nb[j] < kCosineZeroNorm) continue;
              const double gij = g(i, j);
              gs += gij * raw(i, j);
              for (std::size_t c = 0; c < d; ++c) acc[c] += gij * ub(j, c);
            }
            for (std::size_t c = 0; c < d; ++c) ga(i, c) += (acc[c] - gs * ua(i, c)) / na[i];
          }
        });
        flow(t, b, [&](Tensor& gb) {
          for (std::size_t j = 0; j < n; ++j) {
            if (nb[j] < kCosineZeroNorm) continue;
            double gs = 0.0;
            std::vector<double> acc(d, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
              if (na[i] < kCosineZeroNorm) continue;
              const double gij = g(i, j);
              gs += gij * raw(i, j);
              for (std::size_t c = 0; c < d; ++c) acc[c] += gij * ua(i, c);
            }
            for (std::size_t c = 0; c < d; ++c) gb(j, c) += (acc[c] - gs * ub(j, c)) / nb[j];
          }
        });
      });
}

namespace {

Var as_row(Var v) {
  const Tensor& V = v.value();
  if (V.rank() == 2) return v;
  if (V.rank() != 1) shape_error("as_row", "expected rank 1 or 2, got " + shape_string(V.shape()));
  const std::size_t d = V.size();
  return v.tape().record(Tensor({1, d}, std::vector<double>(V.values().begin(), V.values().end())),
                         {v}, [v](Tape& t, const Tensor&, const Tensor& g) {
                           flow(t, v, [&](Tensor& gv) {
                             for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
                           });
                         });
}

}  // namespace

Var cosine_similarity(Var u, Var v) {
  if (u.value().rank() != 1 || v.value().rank() != 1 || u.value().size() != v.value().size()) {
    throw Error(ErrorCode::LengthMismatch, "cosine_similarity: " + shape_string(u.shape()) +
                                               " vs " + shape_string(v.shape()));
  }
  return sum(cosine_similarity_rows(as_row(u), as_row(v)));
}

Var mean_rows(Var a, std::span<const std::uint8_t> row_mask) {
  const Tensor& A = a.value();
  require_rank2("mean_rows", A);
  const std::size_t rows = A.shape()[0], d = A.shape()[1];
  check_mask("mean_rows", row_mask, rows);
  std::vector<std::uint8_t> keep(rows, 1);
  if (!row_mask.empty()) keep.assign(row_mask.begin(), row_mask.end());
  std::size_t n = 0;
  for (auto k : keep) n += k ? 1 : 0;
  if (n == 0) throw Error(ErrorCode::AllMasked, "mean_rows: every row is masked");
  const double inv = 1.0 / static_cast<double>(n);
  Tensor out({d}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!keep[r]) continue;
    for (std::size_t c = 0; c < d; ++c) out[c] += A(r, c);
  }
  for (auto& v : out.values()) v *= inv;
  return a.tape().record(std::move(out), {a}, [a, keep = std::move(keep), inv, d](
                                                  Tape& t, const Tensor&, const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t r = 0; r < keep.size(); ++r) {
        if (!keep[r]) continue;
        for (std::size_t c = 0; c < d; ++c) ga(r, c) += g[c] * inv;
      }
    });
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank2("slice_rows", A);
  if (begin >= end || end > A.shape()[0]) {
    shape_error("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") of " + std::to_string(A.shape()[0]));
  }
  const std::size_t d = A.shape()[1];
  Tensor out({end - begin, d},
             std::vector<double>(A.values().begin() + static_cast<std::ptrdiff_t>(begin * d),
                                 A.values().begin() + static_cast<std::ptrdiff_t>(end * d)));
  return a.tape().record(std::move(out), {a}, [a, begin, d](Tape& t, const Tensor&,
                                                           const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * d + i] += g[i];
    });
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank2("slice_cols", A);
  if (begin >= end || end > A.shape()[1]) {
    shape_error("slice_cols", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") of " + std::to_string(A.shape()[1]));
  }
  const std::size_t rows = A.shape()[0], w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = A(r, begin + c);
  return a.tape().record(std::move(out), {a}, [a, begin, rows, w](Tape& t, const Tensor&,
                                                                 const Tensor& g) {
    flow(t, a, [&](Tensor& ga) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) ga(r, begin + c) += g(r, c);
    });
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::EmptyTensor, "concat_rows: no inputs");
  std::vector<Var> rows;
  rows.reserve(parts.size());
  for (Var p : parts) rows.push_back(as_row(p));
  const std::size_t d = rows.front().value().shape()[1];
  std::size_t total = 0;
  for (Var r : rows) {
    if (r.value().shape()[1] != d) shape_error("concat_rows", "column counts differ");
    total += r.value().shape()[0];
  }
  Tensor out({total, d});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var r : rows) {
    offsets.push_back(off);
    std::copy(r.value().values().begin(), r.value().values().end(), out.values().begin() +
                                                                      static_cast<std::ptrdiff_t>(off * d));
    off += r.value().shape()[0];
  }
  return parts.front().tape().record(
      std::move(out), std::span<const Var>(rows),
      [rows, offsets = std::move(offsets), d](Tape& t, const Tensor&, const Tensor& g) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
          flow(t, rows[k], [&](Tensor& gr) {
            for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += g[offsets[k] * d + i];
          });
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::EmptyTensor, "concat_cols: no inputs");
  for (Var p : parts) require_rank2("concat_cols", p.value());
  const std::size_t rows = parts.front().value().shape()[0];
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    if (p.value().shape()[0] != rows) shape_error("concat_cols", "row counts differ");
    offsets.push_back(total);
    total += p.value().shape()[1];
  }
  Tensor out({rows, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.shape()[1]; ++c) out(r, offsets[k] + c) = P(r, c);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(
      std::move(out), parts,
      [inputs, offsets = std::move(offsets), rows](Tape& t, const Tensor&, const Tensor& g) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          flow(t, inputs[k], [&](Tensor& gp) {
            const std::size_t w = gp.shape()[1];
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, offsets[k] + c);
          });
        }
      });
}

// ------------------------------------------------------------ value level

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) {
    throw Error(ErrorCode::LengthMismatch, "cosine_similarity: lengths " +
                                               std::to_string(u.size()) + " and " +
                                               std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < kCosineZeroNorm || nv < kCosineZeroNorm) return 0.0;
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::ConfigError, "finite differences need eps > 0");
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> grad(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + eps;
    const double fp = f(x);
    x[j] = orig - eps;
    const double fm = f(x);
    x[j] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error(ErrorCode::NonFiniteValue,
                  "non-finite function value perturbing coordinate " + std::to_string(j));
    }
    grad[j] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace concner
