#include "lway/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "lway/errors.hpp"

namespace lway::ag {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;

// Fixed-order reductions; Eigen's vectorised ones peel by pointer alignment,
// which makes results vary from run to run.
template <class T>
T ordered_sum(const T* p, std::size_t count) {
  T s = 0;
  for (std::size_t i = 0; i < count; ++i) s += p[i];
  return s;
}

template <class T>
T ordered_dot(const T* a, const T* b, std::size_t count) {
  T s = 0;
  for (std::size_t i = 0; i < count; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

template <class T>
Var<T> make_result(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <class T>
bool wants(const Var<T>& v) {
  return v && v.node()->requires_grad;
}

void expect(bool ok, const std::string& msg) {
  if (!ok) throw ArgumentError(msg);
}

template <class T>
void expect_same(const Var<T>& a, const Var<T>& b, const char* op) {
  expect(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                     shape_string(b.shape()));
}

int out_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix < 0 || ix >= w) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

struct ConvGeometry {
  int n, cin, h, w, cout, k, ho, wo;
  std::size_t kdim() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t pixels() const { return static_cast<std::size_t>(ho) * wo; }
};

template <class T>
ConvGeometry conv_geometry(const Var<T>& x, const std::vector<int>& wshape, int stride, int pad, const char* op) {
  expect(x.value().rank() == 4, std::string(op) + ": input must be [N,C,H,W], got " + shape_string(x.shape()));
  expect(wshape.size() == 4 && wshape[2] == wshape[3], std::string(op) + ": weight must be [Cout,Cin,k,k]");
  expect(x.shape()[1] == wshape[1], std::string(op) + ": input has " + std::to_string(x.shape()[1]) +
                                        " channels, layer expects " + std::to_string(wshape[1]));
  expect(stride >= 1 && pad >= 0, std::string(op) + ": bad stride/pad");
  ConvGeometry g{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], wshape[0], wshape[2], 0, 0};
  g.ho = out_extent(g.h, g.k, stride, pad);
  g.wo = out_extent(g.w, g.k, stride, pad);
  expect(g.ho >= 1 && g.wo >= 1, std::string(op) + ": input too small for kernel");
  return g;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <class T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var<T>(std::move(node));
}

template <class T>
void backward(const Var<T>& root) {
  expect(root.value().size() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

// --- convolution -----------------------------------------------------------

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad) {
  const ConvGeometry g = conv_geometry(x, w.shape(), stride, pad, "conv2d");
  if (bias) expect(bias.value().size() == static_cast<std::size_t>(g.cout), "conv2d: bias size mismatch");

  const std::size_t kd = g.kdim();
  const std::size_t p = g.pixels();
  const bool track = g_grad_enabled && (wants(x) || wants(w) || wants(bias));
  auto cols = std::make_shared<std::vector<T>>(kd * p * (track ? g.n : 1));

  Tensor<T> out({g.n, g.cout, g.ho, g.wo});
  CMapM<T> wm(w.value().ptr(), g.cout, static_cast<Eigen::Index>(kd));
  for (int n = 0; n < g.n; ++n) {
    T* col = cols->data() + (track ? n * kd * p : 0);
    im2col(x.value().sample(n).data(), g.cin, g.h, g.w, g.k, stride, pad, g.ho, g.wo, col);
    MapM<T> y(out.sample(n).data(), g.cout, static_cast<Eigen::Index>(p));
    y.noalias() = wm * CMapM<T>(col, static_cast<Eigen::Index>(kd), static_cast<Eigen::Index>(p));
    if (bias)
      for (int c = 0; c < g.cout; ++c) y.row(c).array() += bias.value().data[static_cast<std::size_t>(c)];
  }

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = bias ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x.shared(), w.shared(), bias ? bias.shared() : nullptr},
                        [=](Node<T>& self) {
                          const Tensor<T>& gy = self.grad;
                          CMapM<T> wm(wn->value.ptr(), g.cout, static_cast<Eigen::Index>(kd));
                          std::vector<T> dcol(xn->requires_grad ? kd * p : 0);
                          for (int n = 0; n < g.n; ++n) {
                            CMapM<T> dy(gy.sample(n).data(), g.cout, static_cast<Eigen::Index>(p));
                            CMapM<T> col(cols->data() + n * kd * p, static_cast<Eigen::Index>(kd),
                                         static_cast<Eigen::Index>(p));
                            if (wn->requires_grad) {
                              MapM<T> dw(wn->grad_buffer().ptr(), g.cout, static_cast<Eigen::Index>(kd));
                              dw.noalias() += dy * col.transpose();
                            }
                            if (bn && bn->requires_grad) {
                              auto& db = bn->grad_buffer().data;
                              for (int c = 0; c < g.cout; ++c) db[static_cast<std::size_t>(c)] += ordered_sum(dy.data() + static_cast<std::size_t>(c) * p, p);
                            }
                            if (xn->requires_grad) {
                              MapM<T> dc(dcol.data(), static_cast<Eigen::Index>(kd), static_cast<Eigen::Index>(p));
                              dc.noalias() = wm.transpose() * dy;
                              col2im(dcol.data(), g.cin, g.h, g.w, g.k, stride, pad, g.ho, g.wo,
                                     xn->grad_buffer().sample(n).data());
                            }
                          }
                        });
}

template <class T>
Tensor<T> demodulated_weights(const Tensor<T>& w, const Tensor<T>& style, T eps) {
  const int cout = w.shape.at(0);
  const int cin = w.shape.at(1);
  const int kk = w.shape.at(2) * w.shape.at(3);
  const int n = style.shape.at(0);
  expect(style.shape.at(1) == cin, "demodulated_weights: style width must equal input channels");
  std::vector<int> shape = {n, cout, cin, w.shape[2], w.shape[3]};
  Tensor<T> out(shape);
  for (int s = 0; s < n; ++s) {
    T* o = out.ptr() + static_cast<std::size_t>(s) * cout * cin * kk;
    for (int j = 0; j < cout; ++j) {
      T sq = 0;
      for (int i = 0; i < cin; ++i)
        for (int k = 0; k < kk; ++k) {
          const std::size_t idx = (static_cast<std::size_t>(j) * cin + i) * kk + k;
          const T v = style.data[static_cast<std::size_t>(s) * cin + i] * w.data[idx];
          o[idx] = v;
          sq += v * v;
        }
      const T inv = T(1) / std::sqrt(sq + eps);
      for (std::size_t idx = static_cast<std::size_t>(j) * cin * kk; idx < static_cast<std::size_t>(j + 1) * cin * kk; ++idx)
        o[idx] *= inv;
    }
  }
  return out;
}

template <class T>
Var<T> modulated_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& style, int stride, int pad, T eps) {
  const ConvGeometry g = conv_geometry(x, w.shape(), stride, pad, "modulated_conv2d");
  expect(style.value().rank() == 2 && style.shape()[0] == g.n && style.shape()[1] == g.cin,
         "modulated_conv2d: style must be [N,Cin], got " + shape_string(style.shape()));

  const std::size_t kd = g.kdim();
  const std::size_t p = g.pixels();
  const std::size_t wsize = static_cast<std::size_t>(g.cout) * kd;
  const int kk = g.k * g.k;
  const bool track = g_grad_enabled && (wants(x) || wants(w) || wants(style));

  // Per-sample demodulated weights and their per-output-channel norms.
  auto wdd = std::make_shared<Tensor<T>>(demodulated_weights(w.value(), style.value(), eps));
  auto sigma = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.n) * g.cout);
  for (int n = 0; n < g.n; ++n)
    for (int j = 0; j < g.cout; ++j) {
      T sq = 0;
      for (int i = 0; i < g.cin; ++i) {
        const T s = style.value().data[static_cast<std::size_t>(n) * g.cin + i];
        for (int k = 0; k < kk; ++k) {
          const T v = s * w.value().data[(static_cast<std::size_t>(j) * g.cin + i) * kk + k];
          sq += v * v;
        }
      }
      (*sigma)[static_cast<std::size_t>(n) * g.cout + j] = std::sqrt(sq + eps);
    }

  auto cols = std::make_shared<std::vector<T>>(kd * p * (track ? g.n : 1));
  Tensor<T> out({g.n, g.cout, g.ho, g.wo});
  for (int n = 0; n < g.n; ++n) {
    T* col = cols->data() + (track ? n * kd * p : 0);
    im2col(x.value().sample(n).data(), g.cin, g.h, g.w, g.k, stride, pad, g.ho, g.wo, col);
    CMapM<T> wm(wdd->ptr() + n * wsize, g.cout, static_cast<Eigen::Index>(kd));
    MapM<T> y(out.sample(n).data(), g.cout, static_cast<Eigen::Index>(p));
    y.noalias() = wm * CMapM<T>(col, static_cast<Eigen::Index>(kd), static_cast<Eigen::Index>(p));
  }

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* sn = style.node();
  return make_result<T>(
      std::move(out), {x.shared(), w.shared(), style.shared()}, [=](Node<T>& self) {
        const Tensor<T>& gy = self.grad;
        const bool need_w = wn->requires_grad || sn->requires_grad;
        Mat<T> gw(g.cout, static_cast<Eigen::Index>(kd));
        std::vector<T> dcol(xn->requires_grad ? kd * p : 0);
        for (int n = 0; n < g.n; ++n) {
          CMapM<T> dy(gy.sample(n).data(), g.cout, static_cast<Eigen::Index>(p));
          CMapM<T> col(cols->data() + n * kd * p, static_cast<Eigen::Index>(kd), static_cast<Eigen::Index>(p));
          CMapM<T> wm(wdd->ptr() + n * wsize, g.cout, static_cast<Eigen::Index>(kd));
          if (xn->requires_grad) {
            MapM<T> dc(dcol.data(), static_cast<Eigen::Index>(kd), static_cast<Eigen::Index>(p));
            dc.noalias() = wm.transpose() * dy;
            col2im(dcol.data(), g.cin, g.h, g.w, g.k, stride, pad, g.ho, g.wo, xn->grad_buffer().sample(n).data());
          }
          if (!need_w) continue;
          // d/dw'' then through the per-output-channel normalisation:
          //   d/dw' = (G - w'' <G, w''>) / sigma
          gw.noalias() = dy * col.transpose();
          for (int j = 0; j < g.cout; ++j) {
            const T dot = ordered_dot(gw.data() + j * kd, wm.data() + j * kd, kd);
            const T sig = (*sigma)[static_cast<std::size_t>(n) * g.cout + j];
            gw.row(j) = (gw.row(j) - dot * wm.row(j)) / sig;
          }
          // w' = s_i w, so d/dw += s_i d/dw' and d/ds_i += sum_{j,k} w d/dw'.
          for (int j = 0; j < g.cout; ++j)
            for (int i = 0; i < g.cin; ++i) {
              const std::size_t base = (static_cast<std::size_t>(j) * g.cin + i) * kk;
              const T s = sn->value.data[static_cast<std::size_t>(n) * g.cin + i];
              T ds = 0;
              for (int k = 0; k < kk; ++k) {
                const T gv = gw.data()[base + k];
                if (wn->requires_grad) wn->grad_buffer().data[base + k] += s * gv;
                ds += wn->value.data[base + k] * gv;
              }
              if (sn->requires_grad) sn->grad_buffer().data[static_cast<std::size_t>(n) * g.cin + i] += ds;
            }
        }
      });
}

// --- dense -----------------------------------------------------------------

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  expect(x.value().rank() == 2 && w.value().rank() == 2 && x.shape()[1] == w.shape()[1],
         "linear: shape mismatch " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  const int n = x.shape()[0], d = x.shape()[1], o = w.shape()[0];
  if (bias) expect(bias.value().size() == static_cast<std::size_t>(o), "linear: bias size mismatch");
  Tensor<T> out({n, o});
  MapM<T> y(out.ptr(), n, o);
  y.noalias() = CMapM<T>(x.value().ptr(), n, d) * CMapM<T>(w.value().ptr(), o, d).transpose();
  if (bias)
    for (int r = 0; r < n; ++r) y.row(r) += CMapM<T>(bias.value().ptr(), 1, o);

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = bias ? bias.node() : nullptr;
  return make_result<T>(std::move(out), {x.shared(), w.shared(), bias ? bias.shared() : nullptr},
                        [=](Node<T>& self) {
                          CMapM<T> dy(self.grad.ptr(), n, o);
                          if (xn->requires_grad)
                            MapM<T>(xn->grad_buffer().ptr(), n, d).noalias() +=
                                dy * CMapM<T>(wn->value.ptr(), o, d);
                          if (wn->requires_grad)
                            MapM<T>(wn->grad_buffer().ptr(), o, d).noalias() +=
                                dy.transpose() * CMapM<T>(xn->value.ptr(), n, d);
                          if (bn && bn->requires_grad) {
                            auto& db = bn->grad_buffer().data;
                            for (int r = 0; r < n; ++r)
                              for (int c = 0; c < o; ++c) db[static_cast<std::size_t>(c)] += dy(r, c);
                          }
                        });
}

// --- elementwise -----------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  Node<T>* an = a.node();
  Node<T>* bnode = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [=](Node<T>& self) {
    for (Node<T>* p : {an, bnode})
      if (p->requires_grad) {
        auto& g = p->grad_buffer().data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
      }
  });
}

template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  expect(x.value().rank() == 4 && bias.value().size() == static_cast<std::size_t>(x.shape()[1]),
         "add_channel_bias: bias " + shape_string(bias.shape()) + " does not match " + shape_string(x.shape()));
  const int n = x.shape()[0], c = x.shape()[1];
  const std::size_t plane = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
  Tensor<T> out = x.value();
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const T b = bias.value().data[static_cast<std::size_t>(ch)];
      T* p = out.ptr() + (static_cast<std::size_t>(s) * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) p[q] += b;
    }
  Node<T>* xn = x.node();
  Node<T>* bn = bias.node();
  return make_result<T>(std::move(out), {x.shared(), bias.shared()}, [=](Node<T>& self) {
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer().data;
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const T* p = self.grad.ptr() + (static_cast<std::size_t>(s) * c + ch) * plane;
          T acc = 0;
          for (std::size_t q = 0; q < plane; ++q) acc += p[q];
          g[static_cast<std::size_t>(ch)] += acc;
        }
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  Node<T>* an = a.node();
  Node<T>* bnode = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [=](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    }
    if (bnode->requires_grad) {
      auto& g = bnode->grad_buffer().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad.data[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= factor;
  Node<T>* an = a.node();
  return make_result<T>(std::move(out), {a.shared()}, [=](Node<T>& self) {
    auto& g = an->grad_buffer().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad.data[i];
  });
}

template <class T>
Var<T> mul_constant(const Var<T>& a, const Tensor<T>& m) {
  const auto& s = a.shape();
  const bool same = m.shape == s;
  const bool channel_bcast = s.size() == 4 && m.shape.size() == 4 && m.shape[0] == s[0] && m.shape[1] == 1 &&
                             m.shape[2] == s[2] && m.shape[3] == s[3];
  expect(same || channel_bcast,
         "mul_constant: cannot broadcast " + shape_string(m.shape) + " onto " + shape_string(s));
  auto mask = std::make_shared<Tensor<T>>();
  if (same) {
    *mask = m;
  } else {
    *mask = Tensor<T>(s);
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    for (int n = 0; n < s[0]; ++n)
      for (int c = 0; c < s[1]; ++c)
        std::copy_n(m.ptr() + n * plane, plane, mask->ptr() + (static_cast<std::size_t>(n) * s[1] + c) * plane);
  }
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask->data[i];
  Node<T>* an = a.node();
  return make_result<T>(std::move(out), {a.shared()}, [=](Node<T>& self) {
    auto& g = an->grad_buffer().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask->data[i] * self.grad.data[i];
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = v > T(0) ? v : slope * v;
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [=](Node<T>& self) {
    auto& g = xn->grad_buffer().data;
    const auto& in = xn->value.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (in[i] > T(0) ? T(1) : slope) * self.grad.data[i];
  });
}

template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = std::clamp(v, lo, hi);
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [=](Node<T>& self) {
    auto& g = xn->grad_buffer().data;
    const auto& in = xn->value.data;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] >= lo && in[i] <= hi) g[i] += self.grad.data[i];
  });
}

// --- spatial ---------------------------------------------------------------

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  expect(x.value().rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
  const int n = x.shape()[0], c = x.shape()[1];
  const std::size_t plane = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
    T s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += x.value().data[i * plane + k];
    out.data[i] = s / static_cast<T>(plane);
  }
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [=](Node<T>& self) {
    auto& g = xn->grad_buffer().data;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
      const T v = self.grad.data[i] / static_cast<T>(plane);
      for (std::size_t k = 0; k < plane; ++k) g[i * plane + k] += v;
    }
  });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int f) {
  expect(x.value().rank() == 4 && f >= 1, "upsample_nearest: input must be [N,C,H,W]");
  const int nc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<T> out({x.shape()[0], x.shape()[1], h * f, w * f});
  for (int p = 0; p < nc; ++p)
    for (int y = 0; y < h * f; ++y)
      for (int xx = 0; xx < w * f; ++xx)
        out.data[(static_cast<std::size_t>(p) * h * f + y) * w * f + xx] =
            x.value().data[(static_cast<std::size_t>(p) * h + y / f) * w + xx / f];
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [=](Node<T>& self) {
    auto& g = xn->grad_buffer().data;
    for (int p = 0; p < nc; ++p)
      for (int y = 0; y < h * f; ++y)
        for (int xx = 0; xx < w * f; ++xx)
          g[(static_cast<std::size_t>(p) * h + y / f) * w + xx / f] +=
              self.grad.data[(static_cast<std::size_t>(p) * h * f + y) * w * f + xx];
  });
}

template <class T>
Var<T> avg_pool(const Var<T>& x, int f) {
  expect(x.value().rank() == 4 && f >= 1, "avg_pool: input must be [N,C,H,W]");
  const int nc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  expect(h % f == 0 && w % f == 0, "avg_pool: extent not divisible by factor");
  const int oh = h / f, ow = w / f;
  const T inv = T(1) / static_cast<T>(f * f);
  Tensor<T> out({x.shape()[0], x.shape()[1], oh, ow});
  for (int p = 0; p < nc; ++p)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.data[(static_cast<std::size_t>(p) * oh + y / f) * ow + xx / f] +=
            inv * x.value().data[(static_cast<std::size_t>(p) * h + y) * w + xx];
  Node<T>* xn = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [=](Node<T>& self) {
    auto& g = xn->grad_buffer().data;
    for (int p = 0; p < nc; ++p)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          g[(static_cast<std::size_t>(p) * h + y) * w + xx] +=
              inv * self.grad.data[(static_cast<std::size_t>(p) * oh + y / f) * ow + xx / f];
  });
}

template <class T>
Var<T> channel_normalize(const Var<T>& x, T eps) {
  const int rank = x.value().rank();
  expect(rank == 4 || rank == 2, "channel_normalize: input must be [N,C,H,W] or [N,C]");
  const int n = x.shape()[0], c = x.shape()[1];
  const std::size_t plane = rank == 4 ? static_cast<std::size_t>(x.shape()[2]) * x.shape()[3] : 1;
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * plane);
  Tensor<T> out = x.value();
  for (int s = 0; s < n; ++s)
    for (std::size_t q = 0; q < plane; ++q) {
      T sq = 0;
      for (int ch = 0; ch < c; ++ch) {
        const T v = x.value().data[(static_cast<std::size_t>(s) * c + ch) * plane + q];
        sq += v * v;
      }
      const T nrm = std::sqrt(sq) + eps;
      (*norms)[static_cast<std::size_t>(s) * plane + q] = nrm;
      for (int ch = 0; ch < c; ++ch) out.data[(static_cast<std::size_t>(s) * c + ch) * plane + q] /= nrm;
    }
  Node<T>* xn = x.node();
  auto self_value = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x.shared()}, [=](Node<T>& self) {
    // y = x / (|x| + eps);  dy/dx = (I - y x^T / |x|) / (|x| + eps)
    auto& g = xn->grad_buffer().data;
    for (int s = 0; s < n; ++s)
      for (std::size_t q = 0; q < plane; ++q) {
        const T nrm = (*norms)[static_cast<std::size_t>(s) * plane + q];
        const T raw = nrm - eps;
        T dot = 0;  // <g_y, y>
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = (static_cast<std::size_t>(s) * c + ch) * plane + q;
          dot += self.grad.data[i] * self_value->data[i];
        }
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = (static_cast<std::size_t>(s) * c + ch) * plane + q;
          const T xhat = raw > T(0) ? xn->value.data[i] / raw : T(0);
          g[i] += (self.grad.data[i] - dot * xhat) / nrm;
        }
      }
  });
}

// --- reductions --------------------------------------------------------------

template <class T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "l1_mean");
  const std::size_t count = a.value().size();
  expect(count > 0, "l1_mean: empty tensors");
  double s = 0;
  for (std::size_t i = 0; i < count; ++i) s += std::abs(static_cast<double>(a.value().data[i]) - b.value().data[i]);
  Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(count)));
  Node<T>* an = a.node();
  Node<T>* bnode = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [=](Node<T>& self) {
    const T gs = self.grad.data[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = an->value.data[i] - bnode->value.data[i];
      const T sg = d > T(0) ? gs : (d < T(0) ? -gs : T(0));
      if (an->requires_grad) an->grad_buffer().data[i] += sg;
      if (bnode->requires_grad) bnode->grad_buffer().data[i] -= sg;
    }
  });
}

template <class T>
Var<T> mse_mean(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "mse_mean");
  const std::size_t count = a.value().size();
  expect(count > 0, "mse_mean: empty tensors");
  double s = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(a.value().data[i]) - b.value().data[i];
    s += d * d;
  }
  Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(count)));
  Node<T>* an = a.node();
  Node<T>* bnode = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [=](Node<T>& self) {
    const T gs = T(2) * self.grad.data[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = gs * (an->value.data[i] - bnode->value.data[i]);
      if (an->requires_grad) an->grad_buffer().data[i] += d;
      if (bnode->requires_grad) bnode->grad_buffer().data[i] -= d;
    }
  });
}

#define LWAY_INSTANTIATE(T)                                                                         \
  template Var<T> constant(Tensor<T>);                                                              \
  template Var<T> leaf(Tensor<T>, bool);                                                            \
  template void backward(const Var<T>&);                                                            \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                    \
  template Var<T> modulated_conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int, T);       \
  template Tensor<T> demodulated_weights(const Tensor<T>&, const Tensor<T>&, T);                    \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                   \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> scale(const Var<T>&, T);                                                          \
  template Var<T> mul_constant(const Var<T>&, const Tensor<T>&);                                    \
  template Var<T> leaky_relu(const Var<T>&, T);                                                     \
  template Var<T> clamp(const Var<T>&, T, T);                                                       \
  template Var<T> global_avg_pool(const Var<T>&);                                                   \
  template Var<T> upsample_nearest(const Var<T>&, int);                                             \
  template Var<T> avg_pool(const Var<T>&, int);                                                     \
  template Var<T> channel_normalize(const Var<T>&, T);                                              \
  template Var<T> l1_mean(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mse_mean(const Var<T>&, const Var<T>&);

LWAY_INSTANTIATE(float)
LWAY_INSTANTIATE(double)

}  // namespace lway::ag
