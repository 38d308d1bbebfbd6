#include "skad/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>
#include <string>

#include "skad/errors.hpp"

namespace skad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

CMap cmap(const Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return CMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}
MMap mmap(Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                       to_string(b));
}

// Splits a node tensor [T,V,C] or [N,T,V,C] into (N, T, V, C).
struct NodeDims {
  std::size_t n, t, v, c;
};
NodeDims node_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw DimensionError(std::string(op) + ": expected [T,V,C] or [N,T,V,C], got " + to_string(s));
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_error("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  mmap(out, 0, m, n).noalias() += cmap(av, 0, m, k) * cmap(bv, 0, k, n);
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, std::size_t self) {
    auto g = cmap(tp.out_grad(self), 0, m, n);
    if (tp.requires_grad(a)) {
      mmap(tp.grad_buffer(a.id), 0, m, k).noalias() += g * cmap(tp.value(b), 0, k, n).transpose();
    }
    if (tp.requires_grad(b)) {
      mmap(tp.grad_buffer(b.id), 0, k, n).noalias() += cmap(tp.value(a), 0, m, k).transpose() * g;
    }
  });
}

Var channel_mix(Tape& tape, Var x, Var w) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  if (xv.rank() < 1 || wv.rank() != 2 || xv.shape().back() != wv.dim(0)) {
    shape_error("channel_mix", xv.shape(), wv.shape());
  }
  const std::size_t c = wv.dim(0), c2 = wv.dim(1), m = xv.size() / c;
  Shape out_shape = xv.shape();
  out_shape.back() = c2;
  Tensor out(out_shape);
  mmap(out, 0, m, c2).noalias() += cmap(xv, 0, m, c) * cmap(wv, 0, c, c2);
  return tape.record(std::move(out), {x, w}, [x, w, m, c, c2](Tape& tp, std::size_t self) {
    auto g = cmap(tp.out_grad(self), 0, m, c2);
    if (tp.requires_grad(x)) {
      mmap(tp.grad_buffer(x.id), 0, m, c).noalias() += g * cmap(tp.value(w), 0, c, c2).transpose();
    }
    if (tp.requires_grad(w)) {
      mmap(tp.grad_buffer(w.id), 0, c, c2).noalias() += cmap(tp.value(x), 0, m, c).transpose() * g;
    }
  });
}

Var add_bias(Tape& tape, Var x, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& bv = tape.value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    shape_error("add_bias", xv.shape(), bv.shape());
  }
  const std::size_t n = xv.dim(0), f = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] += bv[j];
  return tape.record(std::move(out), {x, bias}, [x, bias, n, f](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    if (tp.requires_grad(x)) tp.grad_buffer(x.id) += g;
    if (tp.requires_grad(bias)) {
      Tensor& gb = tp.grad_buffer(bias.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gb[j] += g[i * f + j];
    }
  });
}

namespace {

// One node axis of [N,T,V,C] mixed by a stack of square matrices: `groups`
// independent [rows,rows] factors, each applied to every sample and channel.
struct Contraction {
  std::size_t n, groups, rows, c, group_stride, row_stride, sample;
  std::size_t cols() const { return n * c; }
};

// Gathers group g into a row-major [rows, N*C] block so one GEMM covers the batch.
void pack(const double* src, const Contraction& k, std::size_t g, double* dst) {
  for (std::size_t r = 0; r < k.rows; ++r)
    for (std::size_t i = 0; i < k.n; ++i) {
      const double* from = src + i * k.sample + g * k.group_stride + r * k.row_stride;
      std::copy(from, from + k.c, dst + r * k.cols() + i * k.c);
    }
}

template <bool Accumulate>
void unpack(const double* src, const Contraction& k, std::size_t g, double* dst) {
  for (std::size_t r = 0; r < k.rows; ++r)
    for (std::size_t i = 0; i < k.n; ++i) {
      const double* from = src + r * k.cols() + i * k.c;
      double* to = dst + i * k.sample + g * k.group_stride + r * k.row_stride;
      for (std::size_t j = 0; j < k.c; ++j) {
        if constexpr (Accumulate) to[j] += from[j];
        else to[j] = from[j];
      }
    }
}

Var contract(Tape& tape, Var a, Var x, const Contraction& k) {
  const Tensor& av = tape.value(a);
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  const std::size_t rr = k.rows * k.rows;
  const auto rows = static_cast<Eigen::Index>(k.rows), cols = static_cast<Eigen::Index>(k.cols());
  std::vector<double> xb(k.rows * k.cols()), ob(xb.size());
  for (std::size_t g = 0; g < k.groups; ++g) {
    pack(xv.data().data(), k, g, xb.data());
    MMap(ob.data(), rows, cols).noalias() = cmap(av, g * rr, k.rows, k.rows) * CMap(xb.data(), rows, cols);
    unpack<false>(ob.data(), k, g, out.data().data());
  }
  return tape.record(std::move(out), {a, x}, [a, x, k, rr](Tape& tp, std::size_t self) {
    const Tensor& gout = tp.out_grad(self);
    const bool ga = tp.requires_grad(a), gx = tp.requires_grad(x);
    Tensor* abuf = ga ? &tp.grad_buffer(a.id) : nullptr;
    Tensor* xbuf = gx ? &tp.grad_buffer(x.id) : nullptr;
    const Tensor& av2 = tp.value(a);
    const Tensor& xv2 = tp.value(x);
    const auto rows = static_cast<Eigen::Index>(k.rows), cols = static_cast<Eigen::Index>(k.cols());
    std::vector<double> gb(k.rows * k.cols()), xb(gb.size()), ob(gb.size());
    for (std::size_t g = 0; g < k.groups; ++g) {
      pack(gout.data().data(), k, g, gb.data());
      CMap gm(gb.data(), rows, cols);
      if (ga) {
        pack(xv2.data().data(), k, g, xb.data());
        mmap(*abuf, g * rr, k.rows, k.rows).noalias() += gm * CMap(xb.data(), rows, cols).transpose();
      }
      if (gx) {
        MMap(ob.data(), rows, cols).noalias() = cmap(av2, g * rr, k.rows, k.rows).transpose() * gm;
        unpack<true>(ob.data(), k, g, xbuf->data().data());
      }
    }
  });
}

}  // namespace

Var contract_spatial(Tape& tape, Var a_s, Var x) {
  const Tensor& av = tape.value(a_s);
  const Tensor& xv = tape.value(x);
  const NodeDims d = node_dims(xv.shape(), "contract_spatial");
  if (av.rank() != 3 || av.dim(0) != d.t || av.dim(1) != d.v || av.dim(2) != d.v) {
    shape_error("contract_spatial", av.shape(), xv.shape());
  }
  return contract(tape, a_s, x, Contraction{d.n, d.t, d.v, d.c, d.v * d.c, d.c, d.t * d.v * d.c});
}

Var contract_temporal(Tape& tape, Var a_t, Var x) {
  const Tensor& av = tape.value(a_t);
  const Tensor& xv = tape.value(x);
  const NodeDims d = node_dims(xv.shape(), "contract_temporal");
  if (av.rank() != 3 || av.dim(0) != d.v || av.dim(1) != d.t || av.dim(2) != d.t) {
    shape_error("contract_temporal", av.shape(), xv.shape());
  }
  return contract(tape, a_t, x, Contraction{d.n, d.v, d.t, d.c, d.c, d.v * d.c, d.t * d.v * d.c});
}

Var activation(Tape& tape, Var x, Activation kind) {
  const Tensor& xv = tape.value(x);
  Tensor out = xv;
  switch (kind) {
    case Activation::relu:
      for (double& e : out.values()) e = e > 0.0 ? e : 0.0;
      break;
    case Activation::tanh:
      for (double& e : out.values()) e = std::tanh(e);
      break;
    case Activation::identity:
      break;
  }
  return tape.record(std::move(out), {x}, [x, kind](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& y = tp.value(self);
    const Tensor& in = tp.value(x);
    Tensor& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case Activation::relu:
          // subgradient 0 at exactly 0
          if (in[i] > 0.0) gx[i] += g[i];
          break;
        case Activation::tanh:
          gx[i] += g[i] * (1.0 - y[i] * y[i]);
          break;
        case Activation::identity:
          gx[i] += g[i];
          break;
      }
    }
  });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  out += tape.value(b);
  return tape.record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    if (tp.requires_grad(a)) tp.grad_buffer(a.id) += tp.out_grad(self);
    if (tp.requires_grad(b)) tp.grad_buffer(b.id) += tp.out_grad(self);
  });
}

Var scale(Tape& tape, Var a, double s) {
  Tensor out = tape.value(a);
  for (double& e : out.values()) e *= s;
  return tape.record(std::move(out), {a}, [a, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var reshape(Tape& tape, Var a, Shape shape) {
  Tensor out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var mean_pool_nodes(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4) throw DimensionError("mean_pool_nodes: expected [N,T,V,C], got " + to_string(xv.shape()));
  const std::size_t n = xv.dim(0), nodes = xv.dim(1) * xv.dim(2), c = xv.dim(3);
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < nodes; ++k)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += xv[(i * nodes + k) * c + j];
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= static_cast<double>(nodes);
  }
  return tape.record(std::move(out), {x}, [x, n, nodes, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    Tensor& gx = tp.grad_buffer(x.id);
    const double inv = 1.0 / static_cast<double>(nodes);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < nodes; ++k)
        for (std::size_t j = 0; j < c; ++j) gx[(i * nodes + k) * c + j] += g[i * c + j] * inv;
  });
}

Var broadcast_nodes(Tape& tape, Var z, std::size_t frames, std::size_t joints) {
  const Tensor& zv = tape.value(z);
  if (zv.rank() != 2) throw DimensionError("broadcast_nodes: expected [N,C], got " + to_string(zv.shape()));
  const std::size_t n = zv.dim(0), c = zv.dim(1), nodes = frames * joints;
  Tensor out({n, frames, joints, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < nodes; ++k)
      for (std::size_t j = 0; j < c; ++j) out[(i * nodes + k) * c + j] = zv[i * c + j];
  return tape.record(std::move(out), {z}, [z, n, nodes, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    Tensor& gz = tp.grad_buffer(z.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < nodes; ++k)
        for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += g[(i * nodes + k) * c + j];
  });
}

Var mean(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  if (xv.empty()) throw DimensionError("mean of empty tensor");
  double s = 0.0;
  for (double e : xv.values()) s += e;
  const double count = static_cast<double>(xv.size());
  return tape.record(Tensor::scalar(s / count), {x}, [x, count](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0] / count;
    for (double& e : tp.grad_buffer(x.id).values()) e += g;
  });
}

Var sum_squares(Tape& tape, Var x) {
  double s = 0.0;
  for (double e : tape.value(x).values()) s += e * e;
  return tape.record(Tensor::scalar(s), {x}, [x](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0];
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g * xv[i];
  });
}

Var mse(Tape& tape, Var x, Var target) {
  const Tensor& xv = tape.value(x);
  const Tensor& tv = tape.value(target);
  require_same_shape(xv, tv, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += (xv[i] - tv[i]) * (xv[i] - tv[i]);
  const double count = static_cast<double>(xv.size());
  return tape.record(Tensor::scalar(s / count), {x, target}, [x, target, count](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0];
    const Tensor& a = tp.value(x);
    const Tensor& b = tp.value(target);
    const bool gx = tp.requires_grad(x), gt = tp.requires_grad(target);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = 2.0 * g * (a[i] - b[i]) / count;
      if (gx) tp.grad_buffer(x.id)[i] += d;
      if (gt) tp.grad_buffer(target.id)[i] -= d;
    }
  });
}

Var row_mse(Tape& tape, Var x, Var target) {
  const Tensor& xv = tape.value(x);
  const Tensor& tv = tape.value(target);
  require_same_shape(xv, tv, "row_mse");
  if (xv.rank() < 1 || xv.dim(0) == 0) throw DimensionError("row_mse: empty batch");
  const std::size_t n = xv.dim(0), per = xv.size() / n;
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      const double d = xv[i * per + k] - tv[i * per + k];
      s += d * d;
    }
    out[i] = s / static_cast<double>(per);
  }
  return tape.record(std::move(out), {x, target}, [x, target, n, per](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& a = tp.value(x);
    const Tensor& b = tp.value(target);
    const bool gx = tp.requires_grad(x), gt = tp.requires_grad(target);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t idx = i * per + k;
        const double d = 2.0 * g[i] * (a[idx] - b[idx]) / static_cast<double>(per);
        if (gx) tp.grad_buffer(x.id)[idx] += d;
        if (gt) tp.grad_buffer(target.id)[idx] -= d;
      }
  });
}

Var batchnorm(Tape& tape, Var x, Var gamma, Var beta, BatchNormBuffers& buffers, Mode mode) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  if (xv.rank() != 2 || gv.shape() != Shape{xv.dim(1)} || bv.shape() != gv.shape() ||
      buffers.running_mean.shape() != gv.shape()) {
    shape_error("batchnorm", xv.shape(), gv.shape());
  }
  const std::size_t n = xv.dim(0), f = xv.dim(1);
  Tensor out({n, f});

  if (mode == Mode::infer) {
    Tensor inv_std({f});
    for (std::size_t j = 0; j < f; ++j) inv_std[j] = 1.0 / std::sqrt(buffers.running_var[j] + buffers.eps);
    Tensor xhat({n, f});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) {
        const std::size_t k = i * f + j;
        xhat[k] = (xv[k] - buffers.running_mean[j]) * inv_std[j];
        out[k] = gv[j] * xhat[k] + bv[j];
      }
    return tape.record(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, n, f, inv_std, xhat](Tape& tp, std::size_t self) {
                         const Tensor& g = tp.out_grad(self);
                         const Tensor& gam = tp.value(gamma);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < f; ++j) {
                             const std::size_t k = i * f + j;
                             if (tp.requires_grad(x)) tp.grad_buffer(x.id)[k] += g[k] * gam[j] * inv_std[j];
                             if (tp.requires_grad(gamma)) tp.grad_buffer(gamma.id)[j] += g[k] * xhat[k];
                             if (tp.requires_grad(beta)) tp.grad_buffer(beta.id)[j] += g[k];
                           }
                       });
  }

  if (n < 2) {
    throw BatchSizeError("batchnorm in train mode needs at least 2 samples, got " + std::to_string(n));
  }
  Tensor mu({f}), var({f}), inv_std({f}), xhat({n, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) mu[j] += xv[i * f + j];
  for (std::size_t j = 0; j < f; ++j) mu[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = xv[i * f + j] - mu[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < f; ++j) {
    const double biased = var[j] / static_cast<double>(n);
    const double unbiased = var[j] / static_cast<double>(n - 1);
    var[j] = biased;
    inv_std[j] = 1.0 / std::sqrt(biased + buffers.eps);
    buffers.running_mean[j] = (1.0 - buffers.momentum) * buffers.running_mean[j] + buffers.momentum * mu[j];
    buffers.running_var[j] = (1.0 - buffers.momentum) * buffers.running_var[j] + buffers.momentum * unbiased;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t k = i * f + j;
      xhat[k] = (xv[k] - mu[j]) * inv_std[j];
      out[k] = gv[j] * xhat[k] + bv[j];
    }
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, n, f, inv_std, xhat](Tape& tp, std::size_t self) {
                       const Tensor& g = tp.out_grad(self);
                       const Tensor& gam = tp.value(gamma);
                       Tensor sum_g({f}), sum_gx({f});
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < f; ++j) {
                           sum_g[j] += g[i * f + j];
                           sum_gx[j] += g[i * f + j] * xhat[i * f + j];
                         }
                       if (tp.requires_grad(gamma)) tp.grad_buffer(gamma.id) += sum_gx;
                       if (tp.requires_grad(beta)) tp.grad_buffer(beta.id) += sum_g;
                       if (!tp.requires_grad(x)) return;
                       Tensor& gx = tp.grad_buffer(x.id);
                       const double nn = static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < f; ++j) {
                           const std::size_t k = i * f + j;
                           gx[k] += gam[j] * inv_std[j] / nn *
                                    (nn * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                         }
                     });
}

}  // namespace skad
