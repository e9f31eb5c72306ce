#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "trot/tensor.hpp"

namespace trot {

// Reverse-mode autodiff over Tensor<T>. One Tape per evaluation: ops append
// nodes in topological order, backward() walks them in reverse. Matrix cores
// go through Eigen maps; reindexing ops (window partition, rolls, restores,
// patch gathers) are expressed as a single gather node over a precomputed
// index map, so their gradients are plain scatter-adds.
template <typename T>
class Tape {
 public:
  using Var = int32_t;
  using IndexMap = std::shared_ptr<const std::vector<int64_t>>;  // -1 entries read as 0

  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated lazily; empty means "not reached"
    bool requires_grad = false;
    std::function<void(Tape&, Var)> back;
  };

  // ---- node construction ----

  Var constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  Var leaf(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  const Tensor<T>& val(Var id) const { return nodes_[static_cast<size_t>(id)].val; }

  const Tensor<T>& grad(Var id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    require(!n.grad.data.empty(), "GradUnavailable", "gradient was not computed for this node");
    return n.grad;
  }

  Tensor<T> grad_or_zero(Var id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) return Tensor<T>(n.val.shape);
    return n.grad;
  }

  size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same_shape(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; });
      t.accum(b2, [&](Tensor<T>& gb) { for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i]; });
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; });
      t.accum(b2, [&](Tensor<T>& gb) { for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i]; });
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& va = t.val(a2);
      const Tensor<T>& vb2 = t.val(b2);
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i]; });
      t.accum(b2, [&](Tensor<T>& gb) { for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i]; });
    });
  }

  Var div(Var a, Var b) {
    check_same_shape(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= vb[i];
    return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& va = t.val(a2);
      const Tensor<T>& vb2 = t.val(b2);
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb2[i]; });
      t.accum(b2, [&](Tensor<T>& gb) {
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * va[i] / (vb2[i] * vb2[i]);
      });
    });
  }

  Var scale(Var a, double c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = static_cast<T>(v * c);
    return unary(std::move(out), a, [c](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) {
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += static_cast<T>(g[i] * c);
      });
    });
  }

  Var add_scalar(Var a, double c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = static_cast<T>(v + c);
    return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; });
    });
  }

  // elementwise add of a constant tensor (attention masks etc.)
  Var add_const(Var a, Tensor<T> c) {
    require(val(a).shape == c.shape, "ShapeMismatch", "add_const shape mismatch");
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; });
    });
  }

  Var exp(Var a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::exp(v);
    return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& y = t.node(self).val;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i]; });
    });
  }

  Var log(Var a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::log(v);
    return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& x = t.val(a2);
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / x[i]; });
    });
  }

  Var gelu(Var a) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Tensor<T> out = val(a);
    for (auto& v : out.data) {
      double x = static_cast<double>(v);
      v = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& x = t.val(a2);
      t.accum(a2, [&](Tensor<T>& ga) {
        for (int64_t i = 0; i < g.numel(); ++i) {
          double xv = static_cast<double>(x[i]);
          double phi = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
          double pdf = std::exp(-0.5 * xv * xv) * inv_sqrt2pi;
          ga[i] += static_cast<T>(static_cast<double>(g[i]) * (phi + xv * pdf));
        }
      });
    });
  }

  Var detach(Var a) { return constant(val(a)); }

  // ---- reindexing ----

  // out[i] = map[i] < 0 ? 0 : in[map[i]]. Covers rolls, window partition and
  // its inverse, patch/merge gathers, token-grid spatial transforms, im2col.
  Var gather(Var a, IndexMap map, std::vector<int64_t> out_shape) {
    const Tensor<T>& x = val(a);
    Tensor<T> out(std::move(out_shape));
    require(static_cast<int64_t>(map->size()) == out.numel(), "ShapeMismatch",
            "gather map size does not match output");
    const auto& m = *map;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = m[static_cast<size_t>(i)] < 0 ? T(0) : x[m[static_cast<size_t>(i)]];
    return unary(std::move(out), a, [map](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      const auto& m2 = *map;
      t.accum(a2, [&](Tensor<T>& ga) {
        for (int64_t i = 0; i < g.numel(); ++i)
          if (m2[static_cast<size_t>(i)] >= 0) ga[m2[static_cast<size_t>(i)]] += g[i];
      });
    });
  }

  Var reshape(Var a, std::vector<int64_t> s) {
    Tensor<T> out = val(a).reshaped(std::move(s));
    return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; });
    });
  }

  Var concat_rows(Var a, Var b) {
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1), "ShapeMismatch",
            "concat_rows expects [Na,C] and [Nb,C]");
    Tensor<T> out({va.dim(0) + vb.dim(0), va.dim(1)});
    std::copy(va.data.begin(), va.data.end(), out.data.begin());
    std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.data.size());
    const int64_t na = va.numel();
    return binary(std::move(out), a, b, [na](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(a2, [&](Tensor<T>& ga) { for (int64_t i = 0; i < na; ++i) ga[i] += g[i]; });
      t.accum(b2, [&](Tensor<T>& gb) {
        for (int64_t i = na; i < g.numel(); ++i) gb[i - na] += g[i];
      });
    });
  }

  // ---- dense linear algebra (Eigen-backed) ----

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;

  Var matmul(Var a, Var b) {  // [M,K]x[K,N]
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), "ShapeMismatch", "matmul");
    Tensor<T> out({va.dim(0), vb.dim(1)});
    MMap(out.data.data(), out.dim(0), out.dim(1)).noalias() =
        CMap(va.data.data(), va.dim(0), va.dim(1)) * CMap(vb.data.data(), vb.dim(0), vb.dim(1));
    return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& va2 = t.val(a2);
      const Tensor<T>& vb2 = t.val(b2);
      CMap gm(g.data.data(), g.dim(0), g.dim(1));
      CMap am(va2.data.data(), va2.dim(0), va2.dim(1));
      CMap bm(vb2.data.data(), vb2.dim(0), vb2.dim(1));
      t.accum(a2, [&](Tensor<T>& ga) {
        MMap(ga.data.data(), ga.dim(0), ga.dim(1)).noalias() += gm * bm.transpose();
      });
      t.accum(b2, [&](Tensor<T>& gb) {
        MMap(gb.data.data(), gb.dim(0), gb.dim(1)).noalias() += am.transpose() * gm;
      });
    });
  }

  Var matmul_nt(Var a, Var b) {  // [M,K]x[N,K]^T -> [M,N]
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1), "ShapeMismatch", "matmul_nt");
    Tensor<T> out({va.dim(0), vb.dim(0)});
    MMap(out.data.data(), out.dim(0), out.dim(1)).noalias() =
        CMap(va.data.data(), va.dim(0), va.dim(1)) *
        CMap(vb.data.data(), vb.dim(0), vb.dim(1)).transpose();
    return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& va2 = t.val(a2);
      const Tensor<T>& vb2 = t.val(b2);
      CMap gm(g.data.data(), g.dim(0), g.dim(1));
      CMap am(va2.data.data(), va2.dim(0), va2.dim(1));
      CMap bm(vb2.data.data(), vb2.dim(0), vb2.dim(1));
      t.accum(a2, [&](Tensor<T>& ga) {
        MMap(ga.data.data(), ga.dim(0), ga.dim(1)).noalias() += gm * bm;
      });
      t.accum(b2, [&](Tensor<T>& gb) {
        MMap(gb.data.data(), gb.dim(0), gb.dim(1)).noalias() += gm.transpose() * am;
      });
    });
  }

  Var linear(Var x, Var w, Var b) {  // [N,Ci]x[Ci,Co] + b[Co]
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(b);
    require(vx.rank() == 2 && vw.rank() == 2 && vx.dim(1) == vw.dim(0) && vb.numel() == vw.dim(1),
            "ShapeMismatch", "linear");
    Tensor<T> out({vx.dim(0), vw.dim(1)});
    MMap om(out.data.data(), out.dim(0), out.dim(1));
    om.noalias() = CMap(vx.data.data(), vx.dim(0), vx.dim(1)) * CMap(vw.data.data(), vw.dim(0), vw.dim(1));
    for (int64_t r = 0; r < out.dim(0); ++r)
      for (int64_t c = 0; c < out.dim(1); ++c) out.at2(r, c) += vb[c];
    Var id = push(std::move(out), node(x).requires_grad || node(w).requires_grad || node(b).requires_grad,
                  nullptr);
    if (node(id).requires_grad) {
      node(id).back = [x, w, b](Tape& t, Var self) {
        const Tensor<T>& g = t.node(self).grad;
        const Tensor<T>& vx2 = t.val(x);
        const Tensor<T>& vw2 = t.val(w);
        CMap gm(g.data.data(), g.dim(0), g.dim(1));
        CMap xm(vx2.data.data(), vx2.dim(0), vx2.dim(1));
        CMap wm(vw2.data.data(), vw2.dim(0), vw2.dim(1));
        t.accum(x, [&](Tensor<T>& gx) {
          MMap(gx.data.data(), gx.dim(0), gx.dim(1)).noalias() += gm * wm.transpose();
        });
        t.accum(w, [&](Tensor<T>& gw) {
          MMap(gw.data.data(), gw.dim(0), gw.dim(1)).noalias() += xm.transpose() * gm;
        });
        t.accum(b, [&](Tensor<T>& gb) {
          for (int64_t r = 0; r < g.dim(0); ++r)
            for (int64_t c = 0; c < g.dim(1); ++c) gb[c] += g.at2(r, c);
        });
      };
    }
    return id;
  }

  Var bmm(Var a, Var b) {  // [B,M,K]x[B,K,N]
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(1),
            "ShapeMismatch", "bmm");
    const int64_t B = va.dim(0), M = va.dim(1), K = va.dim(2), N = vb.dim(2);
    Tensor<T> out({B, M, N});
    for (int64_t i = 0; i < B; ++i)
      MMap(out.data.data() + i * M * N, M, N).noalias() =
          CMap(va.data.data() + i * M * K, M, K) * CMap(vb.data.data() + i * K * N, K, N);
    return binary(std::move(out), a, b, [B, M, K, N](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& va2 = t.val(a2);
      const Tensor<T>& vb2 = t.val(b2);
      t.accum(a2, [&](Tensor<T>& ga) {
        for (int64_t i = 0; i < B; ++i)
          MMap(ga.data.data() + i * M * K, M, K).noalias() +=
              CMap(g.data.data() + i * M * N, M, N) *
              CMap(vb2.data.data() + i * K * N, K, N).transpose();
      });
      t.accum(b2, [&](Tensor<T>& gb) {
        for (int64_t i = 0; i < B; ++i)
          MMap(gb.data.data() + i * K * N, K, N).noalias() +=
              CMap(va2.data.data() + i * M * K, M, K).transpose() *
              CMap(g.data.data() + i * M * N, M, N);
      });
    });
  }

  Var bmm_nt(Var a, Var b) {  // [B,M,K]x[B,N,K]^T -> [B,M,N]
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
            "ShapeMismatch", "bmm_nt");
    const int64_t B = va.dim(0), M = va.dim(1), K = va.dim(2), N = vb.dim(1);
    Tensor<T> out({B, M, N});
    for (int64_t i = 0; i < B; ++i)
      MMap(out.data.data() + i * M * N, M, N).noalias() =
          CMap(va.data.data() + i * M * K, M, K) *
          CMap(vb.data.data() + i * N * K, N, K).transpose();
    return binary(std::move(out), a, b, [B, M, K, N](Tape& t, Var self, Var a2, Var b2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& va2 = t.val(a2);
      const Tensor<T>& vb2 = t.val(b2);
      t.accum(a2, [&](Tensor<T>& ga) {
        for (int64_t i = 0; i < B; ++i)
          MMap(ga.data.data() + i * M * K, M, K).noalias() +=
              CMap(g.data.data() + i * M * N, M, N) * CMap(vb2.data.data() + i * N * K, N, K);
      });
      t.accum(b2, [&](Tensor<T>& gb) {
        for (int64_t i = 0; i < B; ++i)
          MMap(gb.data.data() + i * N * K, N, K).noalias() +=
              CMap(g.data.data() + i * M * N, M, N).transpose() *
              CMap(va2.data.data() + i * M * K, M, K);
      });
    });
  }

  // ---- normalization / softmax ----

  Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor<T>& vx = val(x);
    const int64_t C = vx.shape.back();
    const int64_t R = vx.numel() / C;
    require(val(gamma).numel() == C && val(beta).numel() == C, "ShapeMismatch", "layernorm");
    Tensor<T> out = vx;
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(vx.numel()));
    auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
    const Tensor<T>& g = val(gamma);
    const Tensor<T>& be = val(beta);
    for (int64_t r = 0; r < R; ++r) {
      const T* row = vx.data.data() + r * C;
      double mu = 0;
      for (int64_t c = 0; c < C; ++c) mu += row[c];
      mu /= static_cast<double>(C);
      double var = 0;
      for (int64_t c = 0; c < C; ++c) {
        double d = row[c] - mu;
        var += d * d;
      }
      var /= static_cast<double>(C);
      double is = 1.0 / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<size_t>(r)] = static_cast<T>(is);
      for (int64_t c = 0; c < C; ++c) {
        T xh = static_cast<T>((row[c] - mu) * is);
        (*xhat)[static_cast<size_t>(r * C + c)] = xh;
        out.data[static_cast<size_t>(r * C + c)] = xh * g[c] + be[c];
      }
    }
    Var id = push(std::move(out),
                  node(x).requires_grad || node(gamma).requires_grad || node(beta).requires_grad,
                  nullptr);
    if (node(id).requires_grad) {
      node(id).back = [x, gamma, beta, xhat, inv_sigma, R, C](Tape& t, Var self) {
        const Tensor<T>& go = t.node(self).grad;
        const Tensor<T>& vg = t.val(gamma);
        t.accum(x, [&](Tensor<T>& gx) {
          for (int64_t r = 0; r < R; ++r) {
            const T* gr = go.data.data() + r * C;
            const T* xh = xhat->data() + r * C;
            double sum_dy = 0, sum_dyx = 0;
            for (int64_t c = 0; c < C; ++c) {
              double dyg = static_cast<double>(gr[c]) * vg[c];
              sum_dy += dyg;
              sum_dyx += dyg * xh[c];
            }
            sum_dy /= static_cast<double>(C);
            sum_dyx /= static_cast<double>(C);
            double is = (*inv_sigma)[static_cast<size_t>(r)];
            T* gxr = gx.data.data() + r * C;
            for (int64_t c = 0; c < C; ++c) {
              double dyg = static_cast<double>(gr[c]) * vg[c];
              gxr[c] += static_cast<T>((dyg - sum_dy - xh[c] * sum_dyx) * is);
            }
          }
        });
        t.accum(gamma, [&](Tensor<T>& gg) {
          for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < C; ++c)
              gg[c] += go.data[static_cast<size_t>(r * C + c)] * (*xhat)[static_cast<size_t>(r * C + c)];
        });
        t.accum(beta, [&](Tensor<T>& gb) {
          for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < C; ++c) gb[c] += go.data[static_cast<size_t>(r * C + c)];
        });
      };
    }
    return id;
  }

  Var softmax_lastdim(Var x) {
    const Tensor<T>& vx = val(x);
    const int64_t C = vx.shape.back();
    const int64_t R = vx.numel() / C;
    Tensor<T> out = vx;
    for (int64_t r = 0; r < R; ++r) {
      T* row = out.data.data() + r * C;
      T mx = row[0];
      for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double sum = 0;
      for (int64_t c = 0; c < C; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (int64_t c = 0; c < C; ++c) row[c] = static_cast<T>(row[c] / sum);
    }
    return unary(std::move(out), x, [R, C](Tape& t, Var self, Var x2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& y = t.node(self).val;
      t.accum(x2, [&](Tensor<T>& gx) {
        for (int64_t r = 0; r < R; ++r) {
          const T* gr = g.data.data() + r * C;
          const T* yr = y.data.data() + r * C;
          double dot = 0;
          for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(gr[c]) * yr[c];
          T* gxr = gx.data.data() + r * C;
          for (int64_t c = 0; c < C; ++c)
            gxr[c] += static_cast<T>((static_cast<double>(gr[c]) - dot) * yr[c]);
        }
      });
    });
  }

  // Rows scaled to unit Euclidean norm; eps inside the sqrt keeps the map smooth.
  Var rownormalize(Var x, double eps = 1e-12) {
    const Tensor<T>& vx = val(x);
    const int64_t C = vx.shape.back();
    const int64_t R = vx.numel() / C;
    Tensor<T> out = vx;
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
      T* row = out.data.data() + r * C;
      double s = eps;
      for (int64_t c = 0; c < C; ++c) s += static_cast<double>(row[c]) * row[c];
      double in = 1.0 / std::sqrt(s);
      (*inv_norm)[static_cast<size_t>(r)] = in;
      for (int64_t c = 0; c < C; ++c) row[c] = static_cast<T>(row[c] * in);
    }
    return unary(std::move(out), x, [inv_norm, R, C](Tape& t, Var self, Var x2) {
      const Tensor<T>& g = t.node(self).grad;
      const Tensor<T>& vx2 = t.val(x2);
      t.accum(x2, [&](Tensor<T>& gx) {
        for (int64_t r = 0; r < R; ++r) {
          const T* gr = g.data.data() + r * C;
          const T* xr = vx2.data.data() + r * C;
          double in = (*inv_norm)[static_cast<size_t>(r)];
          double dot = 0;
          for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(gr[c]) * xr[c];
          double in3 = in * in * in;
          T* gxr = gx.data.data() + r * C;
          for (int64_t c = 0; c < C; ++c)
            gxr[c] += static_cast<T>(static_cast<double>(gr[c]) * in - xr[c] * dot * in3);
        }
      });
    });
  }

  // ---- reductions ----

  Var sum_all(Var x) {
    double s = 0;
    for (const T& v : val(x).data) s += v;
    return unary(Tensor<T>::scalar(static_cast<T>(s)), x, [](Tape& t, Var self, Var x2) {
      const T g = t.node(self).grad[0];
      t.accum(x2, [&](Tensor<T>& gx) { for (auto& v : gx.data) v += g; });
    });
  }

  Var mean_all(Var x) {
    const int64_t n = val(x).numel();
    double s = 0;
    for (const T& v : val(x).data) s += v;
    return unary(Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n))), x,
                 [n](Tape& t, Var self, Var x2) {
                   const T g = static_cast<T>(t.node(self).grad[0] / static_cast<double>(n));
                   t.accum(x2, [&](Tensor<T>& gx) { for (auto& v : gx.data) v += g; });
                 });
  }

  Var colmean(Var x) {  // [N,C] -> [1,C]
    const Tensor<T>& vx = val(x);
    const int64_t N = vx.dim(0), C = vx.dim(1);
    Tensor<T> out({1, C});
    for (int64_t r = 0; r < N; ++r)
      for (int64_t c = 0; c < C; ++c) out[c] += vx.at2(r, c);
    for (int64_t c = 0; c < C; ++c) out[c] = static_cast<T>(out[c] / static_cast<double>(N));
    return unary(std::move(out), x, [N, C](Tape& t, Var self, Var x2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(x2, [&](Tensor<T>& gx) {
        for (int64_t r = 0; r < N; ++r)
          for (int64_t c = 0; c < C; ++c)
            gx.at2(r, c) += static_cast<T>(g[c] / static_cast<double>(N));
      });
    });
  }

  Var colsum(Var x) {  // [N,C] -> [C]
    const Tensor<T>& vx = val(x);
    const int64_t N = vx.dim(0), C = vx.dim(1);
    Tensor<T> out({C});
    for (int64_t r = 0; r < N; ++r)
      for (int64_t c = 0; c < C; ++c) out[c] += vx.at2(r, c);
    return unary(std::move(out), x, [N, C](Tape& t, Var self, Var x2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(x2, [&](Tensor<T>& gx) {
        for (int64_t r = 0; r < N; ++r)
          for (int64_t c = 0; c < C; ++c) gx.at2(r, c) += g[c];
      });
    });
  }

  Var rowsum(Var x) {  // [N,C] -> [N]
    const Tensor<T>& vx = val(x);
    const int64_t N = vx.dim(0), C = vx.dim(1);
    Tensor<T> out({N});
    for (int64_t r = 0; r < N; ++r) {
      double s = 0;
      for (int64_t c = 0; c < C; ++c) s += vx.at2(r, c);
      out[r] = static_cast<T>(s);
    }
    return unary(std::move(out), x, [N, C](Tape& t, Var self, Var x2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(x2, [&](Tensor<T>& gx) {
        for (int64_t r = 0; r < N; ++r)
          for (int64_t c = 0; c < C; ++c) gx.at2(r, c) += g[r];
      });
    });
  }

  // ---- contrastive-loss kernels ----

  // Row-wise log(sum_j W[r,j] * exp(S[r,j])) with max-stabilization over the
  // entries with W > 0. W is a constant weight matrix.
  Var weighted_lse_rows(Var s, std::shared_ptr<const Tensor<T>> w) {
    const Tensor<T>& vs = val(s);
    require(vs.rank() == 2 && w->shape == vs.shape, "ShapeMismatch", "weighted_lse_rows");
    const int64_t N = vs.dim(0), C = vs.dim(1);
    Tensor<T> out({N});
    auto softw = std::make_shared<Tensor<T>>(vs.shape);  // W[r,j]*exp(S-m)/denom, reused in backward
    for (int64_t r = 0; r < N; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < C; ++c)
        if (w->at2(r, c) > T(0)) mx = std::max(mx, static_cast<double>(vs.at2(r, c)));
      require(std::isfinite(mx), "DegenerateBatch", "weighted_lse_rows: row has no admissible terms");
      double denom = 0;
      for (int64_t c = 0; c < C; ++c) {
        if (w->at2(r, c) > T(0)) {
          double e = static_cast<double>(w->at2(r, c)) * std::exp(static_cast<double>(vs.at2(r, c)) - mx);
          softw->at2(r, c) = static_cast<T>(e);
          denom += e;
        } else {
          softw->at2(r, c) = T(0);
        }
      }
      for (int64_t c = 0; c < C; ++c) softw->at2(r, c) = static_cast<T>(softw->at2(r, c) / denom);
      out[r] = static_cast<T>(std::log(denom) + mx);
    }
    return unary(std::move(out), s, [softw, N, C](Tape& t, Var self, Var s2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(s2, [&](Tensor<T>& gs) {
        for (int64_t r = 0; r < N; ++r)
          for (int64_t c = 0; c < C; ++c) gs.at2(r, c) += g[r] * softw->at2(r, c);
      });
    });
  }

  // out[k] = S[rows[k], cols[k]]
  Var gather_pairs(Var s, std::shared_ptr<const std::vector<std::pair<int64_t, int64_t>>> idx) {
    const Tensor<T>& vs = val(s);
    Tensor<T> out({static_cast<int64_t>(idx->size())});
    for (size_t k = 0; k < idx->size(); ++k) out[static_cast<int64_t>(k)] = vs.at2((*idx)[k].first, (*idx)[k].second);
    return unary(std::move(out), s, [idx](Tape& t, Var self, Var s2) {
      const Tensor<T>& g = t.node(self).grad;
      t.accum(s2, [&](Tensor<T>& gs) {
        for (size_t k = 0; k < idx->size(); ++k)
          gs.at2((*idx)[k].first, (*idx)[k].second) += g[static_cast<int64_t>(k)];
      });
    });
  }

  // ---- convolution (decoder path) ----

  // x: [Ci,D,H,W], w: [Co,Ci,3,3,3], b: [Co]; stride 1, zero padding 1.
  Var conv3d_k3(Var x, Var w, Var b) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(b);
    require(vx.rank() == 4 && vw.rank() == 5 && vw.dim(1) == vx.dim(0) && vw.dim(2) == 3 &&
                vw.dim(3) == 3 && vw.dim(4) == 3 && vb.numel() == vw.dim(0),
            "ShapeMismatch", "conv3d_k3");
    const int64_t Ci = vx.dim(0), D = vx.dim(1), H = vx.dim(2), W = vx.dim(3), Co = vw.dim(0);
    Tensor<T> out({Co, D, H, W});
    conv3_forward(vx, vw, vb, out, Ci, Co, D, H, W);
    Var id = push(std::move(out),
                  node(x).requires_grad || node(w).requires_grad || node(b).requires_grad, nullptr);
    if (node(id).requires_grad) {
      node(id).back = [x, w, b, Ci, Co, D, H, W](Tape& t, Var self) {
        const Tensor<T>& g = t.node(self).grad;
        const Tensor<T>& vx2 = t.val(x);
        const Tensor<T>& vw2 = t.val(w);
        t.accum(x, [&](Tensor<T>& gx) { conv3_backward_input(g, vw2, gx, Ci, Co, D, H, W); });
        t.accum(w, [&](Tensor<T>& gw) { conv3_backward_weight(g, vx2, gw, Ci, Co, D, H, W); });
        t.accum(b, [&](Tensor<T>& gb) {
          for (int64_t co = 0; co < Co; ++co) {
            double s = 0;
            const T* gp = g.data.data() + co * D * H * W;
            for (int64_t i = 0; i < D * H * W; ++i) s += gp[i];
            gb[co] += static_cast<T>(s);
          }
        });
      };
    }
    return id;
  }

  // Transposed conv with kernel == stride == p: each input cell paints one
  // disjoint p0*p1*p2 output block. x: [Ci,d,h,w], w: [Ci,Co,p0,p1,p2], b: [Co].
  Var tconv3d_p(Var x, Var w, Var b, Shape3 p) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(b);
    require(vx.rank() == 4 && vw.rank() == 5 && vw.dim(0) == vx.dim(0) && vw.dim(2) == p[0] &&
                vw.dim(3) == p[1] && vw.dim(4) == p[2] && vb.numel() == vw.dim(1),
            "ShapeMismatch", "tconv3d_p");
    const int64_t Ci = vx.dim(0), d = vx.dim(1), h = vx.dim(2), w_ = vx.dim(3), Co = vw.dim(1);
    const int64_t D = d * p[0], H = h * p[1], W = w_ * p[2];
    Tensor<T> out({Co, D, H, W});
    const int64_t pv = prod3(p);
    for (int64_t ci = 0; ci < Ci; ++ci) {
      for (int64_t co = 0; co < Co; ++co) {
        const T* wk = vw.data.data() + (ci * Co + co) * pv;
        for (int64_t z = 0; z < d; ++z)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w_; ++xx) {
              T xv = vx.data[static_cast<size_t>(((ci * d + z) * h + y) * w_ + xx)];
              for (int64_t a = 0; a < p[0]; ++a)
                for (int64_t bq = 0; bq < p[1]; ++bq)
                  for (int64_t c = 0; c < p[2]; ++c)
                    out.data[static_cast<size_t>(
                        ((co * D + z * p[0] + a) * H + y * p[1] + bq) * W + xx * p[2] + c)] +=
                        xv * wk[(a * p[1] + bq) * p[2] + c];
            }
      }
    }
    for (int64_t co = 0; co < Co; ++co) {
      T* op = out.data.data() + co * D * H * W;
      for (int64_t i = 0; i < D * H * W; ++i) op[i] += vb[co];
    }
    Var id = push(std::move(out),
                  node(x).requires_grad || node(w).requires_grad || node(b).requires_grad, nullptr);
    if (node(id).requires_grad) {
      node(id).back = [x, w, b, Ci, Co, d, h, w_, p, pv, D, H, W](Tape& t, Var self) {
        const Tensor<T>& g = t.node(self).grad;
        const Tensor<T>& vx2 = t.val(x);
        const Tensor<T>& vw2 = t.val(w);
        t.accum(x, [&](Tensor<T>& gx) {
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t co = 0; co < Co; ++co) {
              const T* wk = vw2.data.data() + (ci * Co + co) * pv;
              for (int64_t z = 0; z < d; ++z)
                for (int64_t y = 0; y < h; ++y)
                  for (int64_t xx = 0; xx < w_; ++xx) {
                    double s = 0;
                    for (int64_t a = 0; a < p[0]; ++a)
                      for (int64_t bq = 0; bq < p[1]; ++bq)
                        for (int64_t c = 0; c < p[2]; ++c)
                          s += static_cast<double>(wk[(a * p[1] + bq) * p[2] + c]) *
                               g.data[static_cast<size_t>(
                                   ((co * D + z * p[0] + a) * H + y * p[1] + bq) * W + xx * p[2] + c)];
                    gx.data[static_cast<size_t>(((ci * d + z) * h + y) * w_ + xx)] += static_cast<T>(s);
                  }
            }
        });
        t.accum(w, [&](Tensor<T>& gw) {
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t co = 0; co < Co; ++co) {
              T* wk = gw.data.data() + (ci * Co + co) * pv;
              for (int64_t z = 0; z < d; ++z)
                for (int64_t y = 0; y < h; ++y)
                  for (int64_t xx = 0; xx < w_; ++xx) {
                    T xv = vx2.data[static_cast<size_t>(((ci * d + z) * h + y) * w_ + xx)];
                    for (int64_t a = 0; a < p[0]; ++a)
                      for (int64_t bq = 0; bq < p[1]; ++bq)
                        for (int64_t c = 0; c < p[2]; ++c)
                          wk[(a * p[1] + bq) * p[2] + c] +=
                              xv * g.data[static_cast<size_t>(((co * D + z * p[0] + a) * H +
                                                               y * p[1] + bq) * W + xx * p[2] + c)];
                  }
            }
        });
        t.accum(b, [&](Tensor<T>& gb) {
          for (int64_t co = 0; co < Co; ++co) {
            double s = 0;
            const T* gp = g.data.data() + co * D * H * W;
            for (int64_t i = 0; i < D * H * W; ++i) s += gp[i];
            gb[co] += static_cast<T>(s);
          }
        });
      };
    }
    return id;
  }

  // ---- backward driver ----

  void backward(Var loss) {
    Node& ln = node(loss);
    require(ln.val.numel() == 1, "ShapeMismatch", "backward expects a scalar loss");
    if (ln.grad.data.empty()) ln.grad = Tensor<T>(ln.val.shape);
    ln.grad[0] = T(1);
    for (int64_t i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && !n.grad.data.empty()) n.back(*this, static_cast<Var>(i));
    }
  }

  Node& node(Var id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(Var id) const { return nodes_[static_cast<size_t>(id)]; }

  // Accumulate into a parent's grad if it participates in differentiation.
  template <typename F>
  void accum(Var id, F&& f) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.val.shape);
    f(n.grad);
  }

 private:
  std::vector<Node> nodes_;

  Var push(Tensor<T> v, bool rg, std::function<void(Tape&, Var)> back) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), rg, std::move(back)});
    return static_cast<Var>(nodes_.size() - 1);
  }

  template <typename F>
  Var unary(Tensor<T> out, Var a, F&& back) {
    bool rg = node(a).requires_grad;
    Var id = push(std::move(out), rg, nullptr);
    if (rg)
      node(id).back = [a, back](Tape& t, Var self) { back(t, self, a); };
    return id;
  }

  template <typename F>
  Var binary(Tensor<T> out, Var a, Var b, F&& back) {
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Var id = push(std::move(out), rg, nullptr);
    if (rg)
      node(id).back = [a, b, back](Tape& t, Var self) { back(t, self, a, b); };
    return id;
  }

  void check_same_shape(Var a, Var b) const {
    require(val(a).shape == val(b).shape, "ShapeMismatch", "elementwise op on mismatched shapes");
  }

  static void conv3_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                            Tensor<T>& out, int64_t Ci, int64_t Co, int64_t D, int64_t H, int64_t W) {
    for (int64_t co = 0; co < Co; ++co) {
      T* op = out.data.data() + co * D * H * W;
      for (int64_t i = 0; i < D * H * W; ++i) op[i] = b[co];
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xp = x.data.data() + ci * D * H * W;
        const T* wk = w.data.data() + (co * Ci + ci) * 27;
        for (int64_t z = 0; z < D; ++z)
          for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
              double acc = 0;
              for (int64_t dz = -1; dz <= 1; ++dz) {
                int64_t zz = z + dz;
                if (zz < 0 || zz >= D) continue;
                for (int64_t dy = -1; dy <= 1; ++dy) {
                  int64_t yy = y + dy;
                  if (yy < 0 || yy >= H) continue;
                  for (int64_t dx = -1; dx <= 1; ++dx) {
                    int64_t xc = xx + dx;
                    if (xc < 0 || xc >= W) continue;
                    acc += static_cast<double>(wk[((dz + 1) * 3 + dy + 1) * 3 + dx + 1]) *
                           xp[(zz * H + yy) * W + xc];
                  }
                }
              }
              op[(z * H + y) * W + xx] += static_cast<T>(acc);
            }
      }
    }
  }

  static void conv3_backward_input(const Tensor<T>& g, const Tensor<T>& w, Tensor<T>& gx,
                                   int64_t Ci, int64_t Co, int64_t D, int64_t H, int64_t W) {
    for (int64_t ci = 0; ci < Ci; ++ci) {
      T* gp = gx.data.data() + ci * D * H * W;
      for (int64_t co = 0; co < Co; ++co) {
        const T* gq = g.data.data() + co * D * H * W;
        const T* wk = w.data.data() + (co * Ci + ci) * 27;
        for (int64_t z = 0; z < D; ++z)
          for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
              double acc = 0;
              for (int64_t dz = -1; dz <= 1; ++dz) {
                int64_t zz = z - dz;
                if (zz < 0 || zz >= D) continue;
                for (int64_t dy = -1; dy <= 1; ++dy) {
                  int64_t yy = y - dy;
                  if (yy < 0 || yy >= H) continue;
                  for (int64_t dx = -1; dx <= 1; ++dx) {
                    int64_t xc = xx - dx;
                    if (xc < 0 || xc >= W) continue;
                    acc += static_cast<double>(wk[((dz + 1) * 3 + dy + 1) * 3 + dx + 1]) *
                           gq[(zz * H + yy) * W + xc];
                  }
                }
              }
              gp[(z * H + y) * W + xx] += static_cast<T>(acc);
            }
      }
    }
  }

  static void conv3_backward_weight(const Tensor<T>& g, const Tensor<T>& x, Tensor<T>& gw,
                                    int64_t Ci, int64_t Co, int64_t D, int64_t H, int64_t W) {
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* gq = g.data.data() + co * D * H * W;
        const T* xp = x.data.data() + ci * D * H * W;
        T* wk = gw.data.data() + (co * Ci + ci) * 27;
        for (int64_t dz = -1; dz <= 1; ++dz)
          for (int64_t dy = -1; dy <= 1; ++dy)
            for (int64_t dx = -1; dx <= 1; ++dx) {
              double acc = 0;
              for (int64_t z = std::max<int64_t>(0, -dz); z < std::min(D, D - dz); ++z)
                for (int64_t y = std::max<int64_t>(0, -dy); y < std::min(H, H - dy); ++y)
                  for (int64_t xx = std::max<int64_t>(0, -dx); xx < std::min(W, W - dx); ++xx)
                    acc += static_cast<double>(gq[(z * H + y) * W + xx]) *
                           xp[((z + dz) * H + y + dy) * W + xx + dx];
              wk[((dz + 1) * 3 + dy + 1) * 3 + dx + 1] += static_cast<T>(acc);
            }
      }
  }
};

using TapeD = Tape<double>;

}  // namespace trot
