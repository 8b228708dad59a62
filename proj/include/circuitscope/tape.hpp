// Copyright 2026 The circuitscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "circuitscope/tensor.hpp"

namespace circuitscope {

// Reverse-mode autodiff on an append-only tape. Node ids are tape indices,
// so inputs always precede consumers and one reverse sweep visits every
// node exactly once. All reductions run in a fixed order; given the same
// inputs the tape is bit-reproducible.
template <class T>
class Tape {
 public:
  using Scalar = T;
  using NodeId = int;

  struct Node {
    const char* op = "";
    std::vector<NodeId> inputs;
    TensorT<T> value;
    std::vector<T> grad;  // allocated lazily during backward
    std::function<void(Tape&, NodeId)> backward;
    TensorT<T>* bound = nullptr;  // external parameter receiving grads
    bool needs_grad = false;
    bool is_leaf = false;
  };

  // When false, no backward closures are stored; forward values are
  // identical either way.
  bool recording = true;

  NodeId leaf(TensorT<T> t) {
    Node n;
    n.op = "leaf";
    n.value = std::move(t);
    n.is_leaf = true;
    n.needs_grad = recording && n.value.requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  // Leaf bound to an external parameter: after backward() the node's grad
  // is accumulated into p.grad.
  NodeId param(TensorT<T>& p) {
    Node n;
    n.op = "param";
    n.value = p;  // copy of the current values
    n.is_leaf = true;
    n.bound = &p;
    n.needs_grad = recording && p.requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  const TensorT<T>& value(NodeId id) const { return nodes_.at(id).value; }
  const char* op(NodeId id) const { return nodes_.at(id).op; }
  size_t size() const { return nodes_.size(); }
  bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }

  // Valid after backward(); zero for leaves that did not participate.
  const std::vector<T>& grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) {
      throw std::runtime_error(std::string("no gradient on node (op=") + n.op +
                               "); call backward() first");
    }
    return n.grad;
  }

  // ---------------------------------------------------------------------
  // elementwise
  // ---------------------------------------------------------------------

  NodeId add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    TensorT<T> out = TensorT<T>::zeros(val(a).shape);
    const auto& x = val(a).data;
    const auto& y = val(b).data;
    for (size_t i = 0; i < x.size(); ++i) out.data[i] = x[i] + y[i];
    return push("add", {a, b}, std::move(out), [](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      t.accum(n.inputs[0], n.grad);
      t.accum(n.inputs[1], n.grad);
    });
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same_shape(a, b, "sub");
    TensorT<T> out = TensorT<T>::zeros(val(a).shape);
    const auto& x = val(a).data;
    const auto& y = val(b).data;
    for (size_t i = 0; i < x.size(); ++i) out.data[i] = x[i] - y[i];
    return push("sub", {a, b}, std::move(out), [](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      t.accum(n.inputs[0], n.grad);
      if (t.needs_grad(n.inputs[1])) {
        auto& g = t.grad_buf(n.inputs[1]);
        for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
      }
    });
  }

  NodeId mul(NodeId a, NodeId b) {
    check_same_shape(a, b, "mul");
    TensorT<T> out = TensorT<T>::zeros(val(a).shape);
    const auto& x = val(a).data;
    const auto& y = val(b).data;
    for (size_t i = 0; i < x.size(); ++i) out.data[i] = x[i] * y[i];
    return push("mul", {a, b}, std::move(out), [](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      const auto& x = t.val(n.inputs[0]).data;
      const auto& y = t.val(n.inputs[1]).data;
      if (t.needs_grad(n.inputs[0])) {
        auto& ga = t.grad_buf(n.inputs[0]);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * y[i];
      }
      if (t.needs_grad(n.inputs[1])) {
        auto& gb = t.grad_buf(n.inputs[1]);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * x[i];
      }
    });
  }

  NodeId add_scalar(NodeId a, T s) {
    TensorT<T> out = val(a);
    out.requires_grad = false;
    out.grad.clear();
    for (auto& v : out.data) v += s;
    return push("add_scalar", {a}, std::move(out), [](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      t.accum(n.inputs[0], n.grad);
    });
  }

  NodeId mul_scalar(NodeId a, T s) {
    TensorT<T> out = val(a);
    out.requires_grad = false;
    out.grad.clear();
    for (auto& v : out.data) v *= s;
    return push("mul_scalar", {a}, std::move(out), [s](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      if (!t.needs_grad(n.inputs[0])) return;
      auto& g = t.grad_buf(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    });
  }

  NodeId silu(NodeId a) {
    TensorT<T> out = TensorT<T>::zeros(val(a).shape);
    const auto& x = val(a).data;
    for (size_t i = 0; i < x.size(); ++i) {
      T s = sigmoid(x[i]);
      out.data[i] = x[i] * s;
    }
    return push("silu", {a}, std::move(out), [](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      if (!t.needs_grad(n.inputs[0])) return;
      const auto& x = t.val(n.inputs[0]).data;
      auto& g = t.grad_buf(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) {
        T s = sigmoid(x[i]);
        g[i] += n.grad[i] * s * (T(1) + x[i] * (T(1) - s));
      }
    });
  }

  // Elementwise op with caller-supplied forward and derivative. Exists so
  // callers can extend the tape without touching it; also lets tests feed
  // a wrong derivative through grad_check as a negative control.
  NodeId custom_unary(NodeId a, std::function<T(T)> f, std::function<T(T)> df,
                      const char* name = "custom_unary") {
    TensorT<T> out = TensorT<T>::zeros(val(a).shape);
    const auto& x = val(a).data;
    for (size_t i = 0; i < x.size(); ++i) out.data[i] = f(x[i]);
    return push(name, {a}, std::move(out), [df](Tape& t, NodeId id) {
      const Node& n = t.nodes_[id];
      if (!t.needs_grad(n.inputs[0])) return;
      const auto& x = t.val(n.inputs[0]).data;
      auto& g = t.grad_buf(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(x[i]);
    });
  }

  // ---------------------------------------------------------------------
  // matrix products
  // ---------------------------------------------------------------------

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  NodeId matmul(NodeId a, NodeId b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0]) {
      throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) + " vs " +
                       shape_str(B.shape));
    }
    int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    TensorT<T> out = TensorT<T>::zeros({m, n});
    CMapM am(A.data.data(), m, k), bm(B.data.data(), k, n);
    MapM om(out.data.data(), m, n);
    om.noalias() = am * bm;
    return push("matmul", {a, b}, std::move(out), [m, k, n](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      CMapM g(nd.grad.data(), m, n);
      CMapM am(t.val(nd.inputs[0]).data.data(), m, k);
      CMapM bm(t.val(nd.inputs[1]).data.data(), k, n);
      if (t.needs_grad(nd.inputs[0])) {
        MapM ga(t.grad_buf(nd.inputs[0]).data(), m, k);
        ga.noalias() += g * bm.transpose();
      }
      if (t.needs_grad(nd.inputs[1])) {
        MapM gb(t.grad_buf(nd.inputs[1]).data(), k, n);
        gb.noalias() += am.transpose() * g;
      }
    });
  }

  // Batched matmul: a[..., m, k] * b[..., k, n], identical leading dims.
  NodeId bmm(NodeId a, NodeId b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.shape.size() < 3 || A.shape.size() != B.shape.size()) {
      throw ShapeError("bmm: need equal ranks >= 3, got " + shape_str(A.shape) + " vs " +
                       shape_str(B.shape));
    }
    size_t r = A.shape.size();
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < r; ++i) {
      if (A.shape[i] != B.shape[i]) {
        throw ShapeError("bmm: leading dims differ: " + shape_str(A.shape) + " vs " +
                         shape_str(B.shape));
      }
      batch *= A.shape[i];
    }
    int m = A.shape[r - 2], k = A.shape[r - 1], k2 = B.shape[r - 2], n = B.shape[r - 1];
    if (k != k2) {
      throw ShapeError("bmm: inner dims differ: " + shape_str(A.shape) + " vs " +
                       shape_str(B.shape));
    }
    Shape os(A.shape.begin(), A.shape.end() - 2);
    os.push_back(m);
    os.push_back(n);
    TensorT<T> out = TensorT<T>::zeros(os);
    for (int64_t s = 0; s < batch; ++s) {
      CMapM am(A.data.data() + s * m * k, m, k);
      CMapM bm(B.data.data() + s * k * n, k, n);
      MapM om(out.data.data() + s * m * n, m, n);
      om.noalias() = am * bm;
    }
    return push("bmm", {a, b}, std::move(out), [batch, m, k, n](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      bool wa = t.needs_grad(nd.inputs[0]), wb = t.needs_grad(nd.inputs[1]);
      T* ga = wa ? t.grad_buf(nd.inputs[0]).data() : nullptr;
      T* gb = wb ? t.grad_buf(nd.inputs[1]).data() : nullptr;
      const T* av = t.val(nd.inputs[0]).data.data();
      const T* bv = t.val(nd.inputs[1]).data.data();
      for (int64_t s = 0; s < batch; ++s) {
        CMapM g(nd.grad.data() + s * m * n, m, n);
        CMapM am(av + s * m * k, m, k);
        CMapM bm(bv + s * k * n, k, n);
        if (wa) {
          MapM gam(ga + s * m * k, m, k);
          gam.noalias() += g * bm.transpose();
        }
        if (wb) {
          MapM gbm(gb + s * k * n, k, n);
          gbm.noalias() += am.transpose() * g;
        }
      }
    });
  }

  // Per-channel linear map (a 1x1 convolution): x[B,C,sp...] * w[C,Co]
  // -> y[B,Co,sp...].
  NodeId channel_matmul(NodeId x, NodeId w) {
    const auto& X = val(x);
    const auto& W = val(w);
    if (X.shape.size() < 2 || W.shape.size() != 2 || X.shape[1] != W.shape[0]) {
      throw ShapeError("channel_matmul: channel mismatch " + shape_str(X.shape) + " vs " +
                       shape_str(W.shape));
    }
    int b = X.shape[0], c = X.shape[1], co = W.shape[1];
    int64_t sp = 1;
    for (size_t i = 2; i < X.shape.size(); ++i) sp *= X.shape[i];
    Shape os = X.shape;
    os[1] = co;
    TensorT<T> out = TensorT<T>::zeros(os);
    CMapM wm(W.data.data(), c, co);
    for (int i = 0; i < b; ++i) {
      CMapM xm(X.data.data() + i * c * sp, c, sp);
      MapM om(out.data.data() + i * co * sp, co, sp);
      om.noalias() = wm.transpose() * xm;
    }
    return push("channel_matmul", {x, w}, std::move(out), [b, c, co, sp](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      bool wx = t.needs_grad(nd.inputs[0]), ww = t.needs_grad(nd.inputs[1]);
      const T* xv = t.val(nd.inputs[0]).data.data();
      const T* wv = t.val(nd.inputs[1]).data.data();
      CMapM wm(wv, c, co);
      for (int i = 0; i < b; ++i) {
        CMapM g(nd.grad.data() + i * co * sp, co, sp);
        if (wx) {
          MapM gx(t.grad_buf(nd.inputs[0]).data() + i * c * sp, c, sp);
          gx.noalias() += wm * g;
        }
        if (ww) {
          CMapM xm(xv + i * c * sp, c, sp);
          MapM gw(t.grad_buf(nd.inputs[1]).data(), c, co);
          gw.noalias() += xm * g.transpose();
        }
      }
    });
  }

  // ---------------------------------------------------------------------
  // convolution
  // ---------------------------------------------------------------------

  // 3x3 cross-correlation, stride 1, zero padding 1: x[B,C,H,W], w[O,C,3,3]
  // -> y[B,O,H,W].
  NodeId conv2d(NodeId x, NodeId w) {
    const auto& X = val(x);
    const auto& W = val(w);
    if (X.shape.size() != 4 || W.shape.size() != 4 || W.shape[2] != 3 || W.shape[3] != 3) {
      throw ShapeError("conv2d: need x[B,C,H,W], w[O,C,3,3], got " + shape_str(X.shape) +
                       " and " + shape_str(W.shape));
    }
    if (X.shape[1] != W.shape[1]) {
      throw ShapeError("conv2d: channel mismatch " + shape_str(X.shape) + " vs " +
                       shape_str(W.shape));
    }
    const int B = X.shape[0], C = X.shape[1], H = X.shape[2], Wd = X.shape[3];
    const int O = W.shape[0];
    TensorT<T> out = TensorT<T>::zeros({B, O, H, Wd});
    std::vector<T> pad(static_cast<size_t>(C) * (H + 2) * (Wd + 2));
    for (int b = 0; b < B; ++b) {
      fill_padded(pad.data(), X.data.data() + static_cast<int64_t>(b) * C * H * Wd, C, H, Wd);
      for (int o = 0; o < O; ++o) {
        T* yb = out.data.data() + ((static_cast<int64_t>(b) * O + o) * H) * Wd;
        for (int c = 0; c < C; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const T wv = W.data[((static_cast<int64_t>(o) * C + c) * 3 + ky) * 3 + kx];
              const T* prow = pad.data() + (static_cast<int64_t>(c) * (H + 2) + ky) * (Wd + 2) + kx;
              for (int yy = 0; yy < H; ++yy) {
                const T* pr = prow + static_cast<int64_t>(yy) * (Wd + 2);
                T* yr = yb + static_cast<int64_t>(yy) * Wd;
                for (int xx = 0; xx < Wd; ++xx) yr[xx] += wv * pr[xx];
              }
            }
          }
        }
      }
    }
    return push("conv2d", {x, w}, std::move(out), [B, C, H, Wd, O](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      bool wantx = t.needs_grad(nd.inputs[0]), wantw = t.needs_grad(nd.inputs[1]);
      if (!wantx && !wantw) return;
      const T* xv = t.val(nd.inputs[0]).data.data();
      const T* wv = t.val(nd.inputs[1]).data.data();
      T* gx = wantx ? t.grad_buf(nd.inputs[0]).data() : nullptr;
      T* gw = wantw ? t.grad_buf(nd.inputs[1]).data() : nullptr;
      std::vector<T> pad(static_cast<size_t>(C) * (H + 2) * (Wd + 2));
      std::vector<T> padg;
      if (wantx) padg.resize(pad.size());
      for (int b = 0; b < B; ++b) {
        fill_padded(pad.data(), xv + static_cast<int64_t>(b) * C * H * Wd, C, H, Wd);
        if (wantx) std::fill(padg.begin(), padg.end(), T(0));
        for (int o = 0; o < O; ++o) {
          const T* gb = nd.grad.data() + ((static_cast<int64_t>(b) * O + o) * H) * Wd;
          for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int64_t widx = ((static_cast<int64_t>(o) * C + c) * 3 + ky) * 3 + kx;
                const int64_t poff = (static_cast<int64_t>(c) * (H + 2) + ky) * (Wd + 2) + kx;
                if (wantw) {
                  T acc = 0;
                  for (int yy = 0; yy < H; ++yy) {
                    const T* pr = pad.data() + poff + static_cast<int64_t>(yy) * (Wd + 2);
                    const T* gr = gb + static_cast<int64_t>(yy) * Wd;
                    for (int xx = 0; xx < Wd; ++xx) acc += gr[xx] * pr[xx];
                  }
                  gw[widx] += acc;
                }
                if (wantx) {
                  const T wval = wv[widx];
                  for (int yy = 0; yy < H; ++yy) {
                    T* pr = padg.data() + poff + static_cast<int64_t>(yy) * (Wd + 2);
                    const T* gr = gb + static_cast<int64_t>(yy) * Wd;
                    for (int xx = 0; xx < Wd; ++xx) pr[xx] += wval * gr[xx];
                  }
                }
              }
            }
          }
        }
        if (wantx) {
          // fold the padded gradient back onto the unpadded input grad
          for (int c = 0; c < C; ++c) {
            for (int yy = 0; yy < H; ++yy) {
              const T* pr = padg.data() + (static_cast<int64_t>(c) * (H + 2) + yy + 1) * (Wd + 2) + 1;
              T* gr = gx + ((static_cast<int64_t>(b) * C + c) * H + yy) * Wd;
              for (int xx = 0; xx < Wd; ++xx) gr[xx] += pr[xx];
            }
          }
        }
      }
    });
  }

  // ---------------------------------------------------------------------
  // bias / broadcast adds
  // ---------------------------------------------------------------------

  // x[B,C,sp...] + b[C]
  NodeId add_channel_bias(NodeId x, NodeId bias) {
    const auto& X = val(x);
    const auto& Bt = val(bias);
    if (X.shape.size() < 2 || Bt.shape.size() != 1 || Bt.shape[0] != X.shape[1]) {
      throw ShapeError("add_channel_bias: " + shape_str(X.shape) + " vs " + shape_str(Bt.shape));
    }
    int b = X.shape[0], c = X.shape[1];
    int64_t sp = X.size() / (static_cast<int64_t>(b) * c);
    TensorT<T> out = X;
    out.requires_grad = false;
    out.grad.clear();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < c; ++j) {
        T* row = out.data.data() + (static_cast<int64_t>(i) * c + j) * sp;
        const T bv = Bt.data[j];
        for (int64_t s = 0; s < sp; ++s) row[s] += bv;
      }
    return push("add_channel_bias", {x, bias}, std::move(out), [b, c, sp](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      t.accum(nd.inputs[0], nd.grad);
      if (t.needs_grad(nd.inputs[1])) {
        auto& gb = t.grad_buf(nd.inputs[1]);
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < c; ++j) {
            const T* row = nd.grad.data() + (static_cast<int64_t>(i) * c + j) * sp;
            T acc = 0;
            for (int64_t s = 0; s < sp; ++s) acc += row[s];
            gb[j] += acc;
          }
      }
    });
  }

  // x[..., n] + b[n]
  NodeId add_bias(NodeId x, NodeId bias) {
    const auto& X = val(x);
    const auto& Bt = val(bias);
    if (X.shape.empty() || Bt.shape.size() != 1 || Bt.shape[0] != X.shape.back()) {
      throw ShapeError("add_bias: " + shape_str(X.shape) + " vs " + shape_str(Bt.shape));
    }
    int n = X.shape.back();
    int64_t rows = X.size() / n;
    TensorT<T> out = X;
    out.requires_grad = false;
    out.grad.clear();
    for (int64_t r = 0; r < rows; ++r) {
      T* row = out.data.data() + r * n;
      for (int j = 0; j < n; ++j) row[j] += Bt.data[j];
    }
    return push("add_bias", {x, bias}, std::move(out), [rows, n](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      t.accum(nd.inputs[0], nd.grad);
      if (t.needs_grad(nd.inputs[1])) {
        auto& gb = t.grad_buf(nd.inputs[1]);
        for (int64_t r = 0; r < rows; ++r) {
          const T* row = nd.grad.data() + r * n;
          for (int j = 0; j < n; ++j) gb[j] += row[j];
        }
      }
    });
  }

  // x[B,C,H,W] + tb[B,C], broadcast over the spatial dims
  NodeId add_time_bias(NodeId x, NodeId tb) {
    const auto& X = val(x);
    const auto& Bt = val(tb);
    if (X.shape.size() != 4 || Bt.shape.size() != 2 || Bt.shape[0] != X.shape[0] ||
        Bt.shape[1] != X.shape[1]) {
      throw ShapeError("add_time_bias: " + shape_str(X.shape) + " vs " + shape_str(Bt.shape));
    }
    int b = X.shape[0], c = X.shape[1];
    int64_t sp = static_cast<int64_t>(X.shape[2]) * X.shape[3];
    TensorT<T> out = X;
    out.requires_grad = false;
    out.grad.clear();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < c; ++j) {
        T* row = out.data.data() + (static_cast<int64_t>(i) * c + j) * sp;
        const T bv = Bt.data[static_cast<int64_t>(i) * c + j];
        for (int64_t s = 0; s < sp; ++s) row[s] += bv;
      }
    return push("add_time_bias", {x, tb}, std::move(out), [b, c, sp](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      t.accum(nd.inputs[0], nd.grad);
      if (t.needs_grad(nd.inputs[1])) {
        auto& gb = t.grad_buf(nd.inputs[1]);
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < c; ++j) {
            const T* row = nd.grad.data() + (static_cast<int64_t>(i) * c + j) * sp;
            T acc = 0;
            for (int64_t s = 0; s < sp; ++s) acc += row[s];
            gb[static_cast<int64_t>(i) * c + j] += acc;
          }
      }
    });
  }

  // ---------------------------------------------------------------------
  // normalization
  // ---------------------------------------------------------------------

  // Group normalization over x[B,C,sp...]; per (batch, group) statistics,
  // population variance, no affine (pair with channel_scale_shift).
  NodeId group_norm(NodeId x, int groups, T eps = T(1e-5)) {
    const auto& X = val(x);
    if (X.shape.size() < 2) {
      throw ShapeError("group_norm: need rank >= 2, got " + shape_str(X.shape));
    }
    int b = X.shape[0], c = X.shape[1];
    if (groups < 1 || c % groups != 0) {
      throw std::invalid_argument("group_norm: channels " + std::to_string(c) +
                                  " not divisible by groups " + std::to_string(groups));
    }
    int64_t sp = X.size() / (static_cast<int64_t>(b) * c);
    int cg = c / groups;
    int64_t m = cg * sp;  // elements per (batch, group)
    TensorT<T> out = TensorT<T>::zeros(X.shape);
    for (int i = 0; i < b; ++i) {
      for (int g = 0; g < groups; ++g) {
        const T* src = X.data.data() + (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg) * sp;
        T* dst = out.data.data() + (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg) * sp;
        double mean = 0;
        for (int64_t k = 0; k < m; ++k) mean += src[k];
        mean /= static_cast<double>(m);
        double var = 0;
        for (int64_t k = 0; k < m; ++k) {
          double d = src[k] - mean;
          var += d * d;
        }
        var /= static_cast<double>(m);
        T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        T mu = static_cast<T>(mean);
        for (int64_t k = 0; k < m; ++k) dst[k] = (src[k] - mu) * inv;
      }
    }
    return push("group_norm", {x}, std::move(out), [b, c, groups, sp, eps](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      if (!t.needs_grad(nd.inputs[0])) return;
      int cg = c / groups;
      int64_t m = cg * sp;
      const T* xv = t.val(nd.inputs[0]).data.data();
      auto& gx = t.grad_buf(nd.inputs[0]);
      for (int i = 0; i < b; ++i) {
        for (int g = 0; g < groups; ++g) {
          int64_t off = (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg) * sp;
          const T* src = xv + off;
          const T* gy = nd.grad.data() + off;
          const T* y = nd.value.data.data() + off;
          double mean = 0;
          for (int64_t k = 0; k < m; ++k) mean += src[k];
          mean /= static_cast<double>(m);
          double var = 0;
          for (int64_t k = 0; k < m; ++k) {
            double d = src[k] - mean;
            var += d * d;
          }
          var /= static_cast<double>(m);
          double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
          double gmean = 0, gymean = 0;
          for (int64_t k = 0; k < m; ++k) {
            gmean += gy[k];
            gymean += static_cast<double>(gy[k]) * y[k];
          }
          gmean /= static_cast<double>(m);
          gymean /= static_cast<double>(m);
          for (int64_t k = 0; k < m; ++k) {
            gx[off + k] += static_cast<T>(inv * (gy[k] - gmean - y[k] * gymean));
          }
        }
      }
    });
  }

  // y = x * gamma[c] + beta[c] over x[B,C,sp...]
  NodeId channel_scale_shift(NodeId x, NodeId gamma, NodeId beta) {
    const auto& X = val(x);
    const auto& G = val(gamma);
    const auto& Bt = val(beta);
    if (X.shape.size() < 2 || G.shape.size() != 1 || Bt.shape.size() != 1 ||
        G.shape[0] != X.shape[1] || Bt.shape[0] != X.shape[1]) {
      throw ShapeError("channel_scale_shift: " + shape_str(X.shape) + " vs " + shape_str(G.shape));
    }
    int b = X.shape[0], c = X.shape[1];
    int64_t sp = X.size() / (static_cast<int64_t>(b) * c);
    TensorT<T> out = TensorT<T>::zeros(X.shape);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < c; ++j) {
        const T* src = X.data.data() + (static_cast<int64_t>(i) * c + j) * sp;
        T* dst = out.data.data() + (static_cast<int64_t>(i) * c + j) * sp;
        const T gv = G.data[j], bv = Bt.data[j];
        for (int64_t s = 0; s < sp; ++s) dst[s] = src[s] * gv + bv;
      }
    return push("channel_scale_shift", {x, gamma, beta}, std::move(out),
                [b, c, sp](Tape& t, NodeId id) {
                  const Node& nd = t.nodes_[id];
                  const T* xv = t.val(nd.inputs[0]).data.data();
                  const T* gv = t.val(nd.inputs[1]).data.data();
                  bool wx = t.needs_grad(nd.inputs[0]);
                  bool wg = t.needs_grad(nd.inputs[1]);
                  bool wb = t.needs_grad(nd.inputs[2]);
                  for (int i = 0; i < b; ++i)
                    for (int j = 0; j < c; ++j) {
                      int64_t off = (static_cast<int64_t>(i) * c + j) * sp;
                      const T* g = nd.grad.data() + off;
                      if (wx) {
                        auto& gx = t.grad_buf(nd.inputs[0]);
                        for (int64_t s = 0; s < sp; ++s) gx[off + s] += g[s] * gv[j];
                      }
                      if (wg) {
                        T acc = 0;
                        for (int64_t s = 0; s < sp; ++s) acc += g[s] * xv[off + s];
                        t.grad_buf(nd.inputs[1])[j] += acc;
                      }
                      if (wb) {
                        T acc = 0;
                        for (int64_t s = 0; s < sp; ++s) acc += g[s];
                        t.grad_buf(nd.inputs[2])[j] += acc;
                      }
                    }
                });
  }

  // Row softmax over the trailing dimension, stabilized by max subtraction.
  NodeId softmax_rows(NodeId x) {
    const auto& X = val(x);
    if (X.shape.empty()) throw ShapeError("softmax_rows: rank 0 input " + shape_str(X.shape));
    int n = X.shape.back();
    int64_t rows = X.size() / n;
    TensorT<T> out = TensorT<T>::zeros(X.shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* src = X.data.data() + r * n;
      T* dst = out.data.data() + r * n;
      T mx = src[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
      double sum = 0;
      for (int j = 0; j < n; ++j) {
        dst[j] = std::exp(src[j] - mx);
        sum += dst[j];
      }
      T invs = static_cast<T>(1.0 / sum);
      for (int j = 0; j < n; ++j) dst[j] *= invs;
    }
    return push("softmax_rows", {x}, std::move(out), [rows, n](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      if (!t.needs_grad(nd.inputs[0])) return;
      auto& gx = t.grad_buf(nd.inputs[0]);
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = nd.value.data.data() + r * n;
        const T* g = nd.grad.data() + r * n;
        double dot = 0;
        for (int j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * y[j];
        for (int j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - static_cast<T>(dot));
      }
    });
  }

  // ---------------------------------------------------------------------
  // shape ops (copies, per the no-views storage rule)
  // ---------------------------------------------------------------------

  NodeId reshape(NodeId x, Shape s) {
    const auto& X = val(x);
    if (numel(s) != X.size()) {
      throw ShapeError("reshape: element count mismatch " + shape_str(X.shape) + " vs " +
                       shape_str(s));
    }
    TensorT<T> out = X;
    out.shape = std::move(s);
    out.requires_grad = false;
    out.grad.clear();
    return push("reshape", {x}, std::move(out), [](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      t.accum(nd.inputs[0], nd.grad);
    });
  }

  NodeId permute(NodeId x, std::vector<int> axes) {
    const auto& X = val(x);
    size_t r = X.shape.size();
    if (axes.size() != r) {
      throw ShapeError("permute: axes count " + std::to_string(axes.size()) + " vs rank " +
                       std::to_string(r));
    }
    Shape os(r);
    for (size_t i = 0; i < r; ++i) os[i] = X.shape[axes[i]];
    TensorT<T> out = TensorT<T>::zeros(os);
    std::vector<int64_t> in_strides(r, 1), out_strides(r, 1);
    for (int i = static_cast<int>(r) - 2; i >= 0; --i) {
      in_strides[i] = in_strides[i + 1] * X.shape[i + 1];
      out_strides[i] = out_strides[i + 1] * os[i + 1];
    }
    // stride of the input axis that lands at each output position
    std::vector<int64_t> src_stride(r);
    for (size_t i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];
    int64_t total = X.size();
    std::vector<int> idx(r, 0);
    for (int64_t flat = 0, src = 0; flat < total; ++flat) {
      out.data[flat] = X.data[src];
      for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
        src += src_stride[i];
        if (++idx[i] < os[i]) break;
        idx[i] = 0;
        src -= src_stride[i] * os[i];
      }
    }
    return push("permute", {x}, std::move(out),
                [os, src_stride, r](Tape& t, NodeId id) {
                  const Node& nd = t.nodes_[id];
                  if (!t.needs_grad(nd.inputs[0])) return;
                  auto& gx = t.grad_buf(nd.inputs[0]);
                  int64_t total = static_cast<int64_t>(nd.grad.size());
                  std::vector<int> idx(r, 0);
                  for (int64_t flat = 0, src = 0; flat < total; ++flat) {
                    gx[src] += nd.grad[flat];
                    for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
                      src += src_stride[i];
                      if (++idx[i] < os[i]) break;
                      idx[i] = 0;
                      src -= src_stride[i] * os[i];
                    }
                  }
                });
  }

  // 2x2 average pooling, stride 2; spatial dims must be even.
  NodeId avg_pool2(NodeId x) {
    const auto& X = val(x);
    if (X.shape.size() != 4 || X.shape[2] % 2 || X.shape[3] % 2) {
      throw ShapeError("avg_pool2: need [B,C,2h,2w], got " + shape_str(X.shape));
    }
    int b = X.shape[0], c = X.shape[1], h = X.shape[2] / 2, w = X.shape[3] / 2;
    TensorT<T> out = TensorT<T>::zeros({b, c, h, w});
    const int W2 = X.shape[3];
    for (int64_t bc = 0; bc < static_cast<int64_t>(b) * c; ++bc) {
      const T* src = X.data.data() + bc * (4 * static_cast<int64_t>(h) * w);
      T* dst = out.data.data() + bc * (static_cast<int64_t>(h) * w);
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const T* p = src + (2 * y) * W2 + 2 * xx;
          dst[y * w + xx] = (p[0] + p[1] + p[W2] + p[W2 + 1]) * T(0.25);
        }
    }
    return push("avg_pool2", {x}, std::move(out), [b, c, h, w](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      if (!t.needs_grad(nd.inputs[0])) return;
      auto& gx = t.grad_buf(nd.inputs[0]);
      const int W2 = 2 * w;
      for (int64_t bc = 0; bc < static_cast<int64_t>(b) * c; ++bc) {
        T* dst = gx.data() + bc * (4 * static_cast<int64_t>(h) * w);
        const T* g = nd.grad.data() + bc * (static_cast<int64_t>(h) * w);
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            T q = g[y * w + xx] * T(0.25);
            T* p = dst + (2 * y) * W2 + 2 * xx;
            p[0] += q;
            p[1] += q;
            p[W2] += q;
            p[W2 + 1] += q;
          }
      }
    });
  }

  NodeId upsample_nearest2(NodeId x) {
    const auto& X = val(x);
    if (X.shape.size() != 4) {
      throw ShapeError("upsample_nearest2: need rank 4, got " + shape_str(X.shape));
    }
    int b = X.shape[0], c = X.shape[1], h = X.shape[2], w = X.shape[3];
    TensorT<T> out = TensorT<T>::zeros({b, c, 2 * h, 2 * w});
    for (int64_t bc = 0; bc < static_cast<int64_t>(b) * c; ++bc) {
      const T* src = X.data.data() + bc * (static_cast<int64_t>(h) * w);
      T* dst = out.data.data() + bc * (4 * static_cast<int64_t>(h) * w);
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
    return push("upsample_nearest2", {x}, std::move(out), [b, c, h, w](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      if (!t.needs_grad(nd.inputs[0])) return;
      auto& gx = t.grad_buf(nd.inputs[0]);
      for (int64_t bc = 0; bc < static_cast<int64_t>(b) * c; ++bc) {
        T* dst = gx.data() + bc * (static_cast<int64_t>(h) * w);
        const T* g = nd.grad.data() + bc * (4 * static_cast<int64_t>(h) * w);
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += g[y * 2 * w + xx];
      }
    });
  }

  // Concatenate along the channel axis: [B,Ca,H,W] ++ [B,Cb,H,W].
  NodeId concat_channels(NodeId a, NodeId b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.shape.size() != 4 || B.shape.size() != 4 || A.shape[0] != B.shape[0] ||
        A.shape[2] != B.shape[2] || A.shape[3] != B.shape[3]) {
      throw ShapeError("concat_channels: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }
    int bb = A.shape[0], ca = A.shape[1], cb = B.shape[1];
    int64_t sp = static_cast<int64_t>(A.shape[2]) * A.shape[3];
    TensorT<T> out = TensorT<T>::zeros({bb, ca + cb, A.shape[2], A.shape[3]});
    for (int i = 0; i < bb; ++i) {
      std::copy_n(A.data.data() + static_cast<int64_t>(i) * ca * sp, ca * sp,
                  out.data.data() + static_cast<int64_t>(i) * (ca + cb) * sp);
      std::copy_n(B.data.data() + static_cast<int64_t>(i) * cb * sp, cb * sp,
                  out.data.data() + static_cast<int64_t>(i) * (ca + cb) * sp + ca * sp);
    }
    return push("concat_channels", {a, b}, std::move(out), [bb, ca, cb, sp](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      bool wa = t.needs_grad(nd.inputs[0]), wb = t.needs_grad(nd.inputs[1]);
      for (int i = 0; i < bb; ++i) {
        const T* g = nd.grad.data() + static_cast<int64_t>(i) * (ca + cb) * sp;
        if (wa) {
          auto& ga = t.grad_buf(nd.inputs[0]);
          T* dst = ga.data() + static_cast<int64_t>(i) * ca * sp;
          for (int64_t k = 0; k < ca * sp; ++k) dst[k] += g[k];
        }
        if (wb) {
          auto& gb = t.grad_buf(nd.inputs[1]);
          T* dst = gb.data() + static_cast<int64_t>(i) * cb * sp;
          for (int64_t k = 0; k < cb * sp; ++k) dst[k] += g[ca * sp + k];
        }
      }
    });
  }

  // ---------------------------------------------------------------------
  // intervention primitives
  // ---------------------------------------------------------------------

  // Multiply the slice x[..., index at `axis`, ...] by `factor`
  // (factor 0 zero-ablates one head or channel).
  NodeId scale_axis_slice(NodeId x, int axis, int index, T factor) {
    const auto& X = val(x);
    int r = static_cast<int>(X.shape.size());
    if (axis < 0 || axis >= r || index < 0 || index >= X.shape[axis]) {
      throw std::invalid_argument("scale_axis_slice: axis " + std::to_string(axis) + " index " +
                                  std::to_string(index) + " out of range for " +
                                  shape_str(X.shape));
    }
    int64_t inner = 1;
    for (int i = axis + 1; i < r; ++i) inner *= X.shape[i];
    int64_t outer = X.size() / (inner * X.shape[axis]);
    int n_axis = X.shape[axis];
    TensorT<T> out = X;
    out.requires_grad = false;
    out.grad.clear();
    for (int64_t o = 0; o < outer; ++o) {
      T* p = out.data.data() + (o * n_axis + index) * inner;
      for (int64_t k = 0; k < inner; ++k) p[k] *= factor;
    }
    return push("scale_axis_slice", {x}, std::move(out),
                [outer, inner, n_axis, index, factor](Tape& t, NodeId id) {
                  const Node& nd = t.nodes_[id];
                  if (!t.needs_grad(nd.inputs[0])) return;
                  auto& gx = t.grad_buf(nd.inputs[0]);
                  for (size_t i = 0; i < gx.size(); ++i) gx[i] += nd.grad[i];
                  for (int64_t o = 0; o < outer; ++o) {
                    int64_t off = (o * n_axis + index) * inner;
                    for (int64_t k = 0; k < inner; ++k) {
                      gx[off + k] += nd.grad[off + k] * (factor - T(1));
                    }
                  }
                });
  }

  // Attention perturbation: rows of head `head` (axis 1 of a[B,h,Q,K])
  // become (1-alpha)*row + alpha*uniform; head < 0 applies to all heads.
  // A convex combination of distributions, so rows stay normalized.
  NodeId blend_uniform_rows(NodeId a, int head, T alpha) {
    const auto& A = val(a);
    if (A.shape.size() != 4) {
      throw ShapeError("blend_uniform_rows: need [B,h,Q,K], got " + shape_str(A.shape));
    }
    int b = A.shape[0], h = A.shape[1], q = A.shape[2], k = A.shape[3];
    if (head >= h) {
      throw std::invalid_argument("blend_uniform_rows: head " + std::to_string(head) +
                                  " out of range for " + shape_str(A.shape));
    }
    T u = alpha / static_cast<T>(k);
    T keep = T(1) - alpha;
    TensorT<T> out = A;
    out.requires_grad = false;
    out.grad.clear();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < h; ++j) {
        if (head >= 0 && j != head) continue;
        T* p = out.data.data() + ((static_cast<int64_t>(i) * h + j) * q) * k;
        for (int64_t s = 0; s < static_cast<int64_t>(q) * k; ++s) p[s] = keep * p[s] + u;
      }
    return push("blend_uniform_rows", {a}, std::move(out),
                [b, h, q, k, head, keep](Tape& t, NodeId id) {
                  const Node& nd = t.nodes_[id];
                  if (!t.needs_grad(nd.inputs[0])) return;
                  auto& gx = t.grad_buf(nd.inputs[0]);
                  for (int i = 0; i < b; ++i)
                    for (int j = 0; j < h; ++j) {
                      int64_t off = (static_cast<int64_t>(i) * h + j) * q * k;
                      bool blended = (head < 0 || j == head);
                      T f = blended ? keep : T(1);
                      for (int64_t s = 0; s < static_cast<int64_t>(q) * k; ++s) {
                        gx[off + s] += nd.grad[off + s] * f;
                      }
                    }
                });
  }

  // ---------------------------------------------------------------------
  // reductions
  // ---------------------------------------------------------------------

  NodeId sum_all(NodeId x) {
    const auto& X = val(x);
    double acc = 0;
    for (T v : X.data) acc += v;
    TensorT<T> out({1}, {static_cast<T>(acc)});
    return push("sum_all", {x}, std::move(out), [](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      if (!t.needs_grad(nd.inputs[0])) return;
      auto& gx = t.grad_buf(nd.inputs[0]);
      T g = nd.grad[0];
      for (auto& v : gx) v += g;
    });
  }

  NodeId mean_all(NodeId x) {
    const auto& X = val(x);
    double acc = 0;
    for (T v : X.data) acc += v;
    T inv = static_cast<T>(1.0 / static_cast<double>(X.size()));
    TensorT<T> out({1}, {static_cast<T>(acc * static_cast<double>(inv))});
    return push("mean_all", {x}, std::move(out), [inv](Tape& t, NodeId id) {
      const Node& nd = t.nodes_[id];
      if (!t.needs_grad(nd.inputs[0])) return;
      auto& gx = t.grad_buf(nd.inputs[0]);
      T g = nd.grad[0] * inv;
      for (auto& v : gx) v += g;
    });
  }

  // ---------------------------------------------------------------------
  // backward
  // ---------------------------------------------------------------------

  void backward(NodeId loss) {
    if (!recording) {
      throw std::runtime_error("backward: tape was not recording");
    }
    Node& ln = nodes_.at(loss);
    if (ln.value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(ln.value.shape));
    }
    grad_buf(loss)[0] = T(1);
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
    for (Node& n : nodes_) {
      if (n.is_leaf && (n.value.requires_grad || n.bound) && n.grad.empty()) {
        n.grad.assign(n.value.data.size(), T(0));  // unused leaves get exact zeros
      }
      if (n.bound && !n.grad.empty()) {
        if (n.bound->grad.size() != n.bound->data.size()) n.bound->alloc_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
      }
    }
  }

 private:
  std::vector<Node> nodes_;

  static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

  const TensorT<T>& val(NodeId id) const { return nodes_[id].value; }

  void check_same_shape(NodeId a, NodeId b, const char* what) {
    check_shape(val(a).shape == val(b).shape, what, val(a).shape, val(b).shape);
  }

  std::vector<T>& grad_buf(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), T(0));
    return n.grad;
  }

  void accum(NodeId id, const std::vector<T>& g) {
    if (!needs_grad(id)) return;
    auto& dst = grad_buf(id);
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  static void fill_padded(T* pad, const T* src, int C, int H, int W) {
    const int Wp = W + 2;
    std::fill(pad, pad + static_cast<int64_t>(C) * (H + 2) * Wp, T(0));
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        std::copy_n(src + (static_cast<int64_t>(c) * H + y) * W, W,
                    pad + (static_cast<int64_t>(c) * (H + 2) + y + 1) * Wp + 1);
      }
  }

  NodeId push(const char* op, std::vector<NodeId> inputs, TensorT<T> value,
              std::function<void(Tape&, NodeId)> bwd) {
    bool ng = false;
    for (NodeId i : inputs) ng = ng || nodes_[i].needs_grad;
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.value.requires_grad = false;
    n.needs_grad = recording && ng;
    if (n.needs_grad) n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }
};

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0;
  int64_t worst_index = -1;
  double autodiff = 0;
  double central_diff = 0;
};

// Compares f32 reverse-mode gradients against central finite differences of
// the same graph evaluated in f64, so the oracle's own rounding noise stays
// far below the tolerances being checked. `build` must be callable as
// build(Tape<S>&, NodeId) -> NodeId for S in {float, double} and must be
// deterministic.
template <class Builder>
GradCheckResult grad_check(Builder&& build, const Tensor& x, double h = 1e-3) {
  Tensor xf = x;
  xf.requires_grad = true;
  Tape<float> tf;
  auto xid = tf.leaf(std::move(xf));
  auto loss = build(tf, xid);
  if (tf.value(loss).size() != 1) {
    throw std::invalid_argument("grad_check: builder must produce a scalar loss");
  }
  tf.backward(loss);
  std::vector<float> g_ad = tf.grad(xid);

  TensorT<double> xd = x.template cast<double>();
  xd.requires_grad = false;
  auto eval = [&](const TensorT<double>& pt) -> double {
    Tape<double> t;
    t.recording = false;
    auto id = t.leaf(pt);
    auto l = build(t, id);
    return t.value(l).data[0];
  };

  GradCheckResult res;
  for (int64_t i = 0; i < xd.size(); ++i) {
    double orig = xd.data[i];
    double xp = orig + h;
    double xm = orig - h;
    xd.data[i] = xp;
    double lp = eval(xd);
    xd.data[i] = xm;
    double lm = eval(xd);
    xd.data[i] = orig;
    double fd = (lp - lm) / (xp - xm);
    double rel = std::abs(static_cast<double>(g_ad[i]) - fd) / (std::abs(fd) + 1e-8);
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
      res.autodiff = g_ad[i];
      res.central_diff = fd;
    }
  }
  return res;
}

}  // namespace circuitscope
