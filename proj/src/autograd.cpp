/*
 * Copyright (c) 2026 The proxytta Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "proxytta/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "proxytta/errors.hpp"

namespace proxytta {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) { grad_buffer().add_(g); }

namespace ag {
namespace {

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& p : parents) {
    if (p->requires_grad) node->requires_grad = true;
  }
  node->parents = std::move(parents);
  if (node->requires_grad) node->backward_fn = std::move(fn);
  return node;
}

void require_scalar(const Var& v, const char* what) {
  if (v->value.numel() != 1) {
    throw ContractError(std::string(what) + ": expected a scalar, got " +
                        v->value.shape().str());
  }
}

void im2col(const double* x, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* src = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + static_cast<std::size_t>((c * k + ky) * k + kx) *
                                plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, 0.0);
            continue;
          }
          const double* srow = src + iy * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    double* dst = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src =
            col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const double* row = src + oy * out_w;
          double* drow = dst + iy * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Parameter& p) {
  auto node = std::make_shared<Node>();
  node->value = p.value;
  node->requires_grad = p.trainable;
  node->param = &p;
  return node;
}

Var stop_gradient(const Var& x) { return constant(x->value); }

void backward(const Var& root) {
  require_scalar(root, "backward");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.shape() == node->value.shape()) {
      node->backward_fn(*node);
    }
  }
  for (Node* node : order) {
    if (node->param == nullptr) continue;
    if (node->grad.shape() != node->value.shape()) continue;
    Parameter& p = *node->param;
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    p.grad.add_(node->grad);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  if (ws.h != ws.w || ws.c != xs.c) {
    throw ContractError("conv2d: weight " + ws.str() + " incompatible with " +
                        xs.str());
  }
  const int k = ws.h;
  const int out_c = ws.n;
  const int out_h = (xs.h + 2 * pad - k) / stride + 1;
  const int out_w = (xs.w + 2 * pad - k) / stride + 1;
  const int ckk = xs.c * k * k;
  const int plane = out_h * out_w;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor y(Shape{xs.n, out_c, out_h, out_w});
  std::vector<double> col(direct ? 0 : static_cast<std::size_t>(ckk) * plane);
  ConstMapMat wm(weight->value.data(), out_c, ckk);
  const double* b = bias ? bias->value.data() : nullptr;
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x->value.data() + x->value.index(n, 0, 0, 0);
    if (!direct) {
      im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w, col.data());
    }
    ConstMapMat cm(direct ? xn : col.data(), ckk, plane);
    MapMat ym(y.data() + y.index(n, 0, 0, 0), out_c, plane);
    ym.noalias() = wm * cm;
    if (b != nullptr) {
      for (int o = 0; o < out_c; ++o) ym.row(o).array() += b[o];
    }
  }

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_node(
      std::move(y), std::move(parents),
      [=](Node& self) {
        Node& xn_node = *self.parents[0];
        Node& w_node = *self.parents[1];
        Node* b_node = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const bool need_x = xn_node.requires_grad;
        const bool need_w = w_node.requires_grad;
        const bool need_b = b_node != nullptr && b_node->requires_grad;
        std::vector<double> colbuf(direct ? 0
                                          : static_cast<std::size_t>(ckk) *
                                                plane);
        std::vector<double> dcol(
            need_x && !direct ? static_cast<std::size_t>(ckk) * plane : 0);
        ConstMapMat wmat(w_node.value.data(), out_c, ckk);
        double* dx = need_x ? xn_node.grad_buffer().data() : nullptr;
        double* dw = need_w ? w_node.grad_buffer().data() : nullptr;
        double* db = need_b ? b_node->grad_buffer().data() : nullptr;
        for (int n = 0; n < xs.n; ++n) {
          ConstMapMat dy(self.grad.data() + self.grad.index(n, 0, 0, 0), out_c,
                         plane);
          if (need_b) {
            for (int o = 0; o < out_c; ++o) db[o] += dy.row(o).sum();
          }
          const std::size_t xoff = xn_node.value.index(n, 0, 0, 0);
          if (need_w) {
            const double* xn = xn_node.value.data() + xoff;
            if (!direct) {
              im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w,
                     colbuf.data());
            }
            ConstMapMat cm(direct ? xn : colbuf.data(), ckk, plane);
            MapMat dwm(dw, out_c, ckk);
            dwm.noalias() += dy * cm.transpose();
          }
          if (need_x) {
            if (direct) {
              MapMat dxm(dx + xoff, ckk, plane);
              dxm.noalias() += wmat.transpose() * dy;
            } else {
              MapMat dcm(dcol.data(), ckk, plane);
              dcm.noalias() = wmat.transpose() * dy;
              col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, out_h,
                     out_w, dx + xoff);
            }
          }
        }
      });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               const BatchNormState& state) {
  const Shape xs = x->value.shape();
  const int channels = xs.c;
  const std::size_t hw = static_cast<std::size_t>(xs.h) * xs.w;
  const double count = static_cast<double>(xs.n) * hw;
  if (state.use_batch_stats && count < 2) {
    throw ContractError("batch_norm: batch statistics need at least 2 values");
  }

  std::vector<double> mean(channels), inv_std(channels);
  if (state.use_batch_stats) {
    for (int c = 0; c < channels; ++c) {
      double s = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        for (double v : x->value.plane(n, c)) s += v;
      }
      const double mu = s / count;
      double ss = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        for (double v : x->value.plane(n, c)) ss += (v - mu) * (v - mu);
      }
      const double var = ss / count;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      if (state.update_running) {
        double& rm = state.running_mean->value[c];
        double& rv = state.running_var->value[c];
        rm = (1.0 - state.momentum) * rm + state.momentum * mu;
        rv = (1.0 - state.momentum) * rv +
             state.momentum * ss / (count - 1.0);
      }
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mean[c] = state.running_mean->value[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var->value[c] + state.eps);
    }
  }

  Tensor xhat(xs);
  Tensor y(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      auto src = x->value.plane(n, c);
      auto xh = xhat.plane(n, c);
      auto dst = y.plane(n, c);
      const double g = gamma->value[c];
      const double b = beta->value[c];
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - mean[c]) * inv_std[c];
        dst[i] = g * xh[i] + b;
      }
    }
  }

  const bool batch_stats = state.use_batch_stats;
  return make_node(
      std::move(y), {x, gamma, beta},
      [=, xhat = std::move(xhat)](Node& self) {
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
        for (int n = 0; n < xs.n; ++n) {
          for (int c = 0; c < channels; ++c) {
            auto dy = self.grad.plane(n, c);
            auto xh = xhat.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy[c] += dy[i];
              sum_dy_xhat[c] += dy[i] * xh[i];
            }
          }
        }
        if (gn.requires_grad) {
          Tensor& g = gn.grad_buffer();
          for (int c = 0; c < channels; ++c) g[c] += sum_dy_xhat[c];
        }
        if (bn.requires_grad) {
          Tensor& g = bn.grad_buffer();
          for (int c = 0; c < channels; ++c) g[c] += sum_dy[c];
        }
        if (!xn.requires_grad) return;
        Tensor& dx = xn.grad_buffer();
        for (int n = 0; n < xs.n; ++n) {
          for (int c = 0; c < channels; ++c) {
            auto dy = self.grad.plane(n, c);
            auto xh = xhat.plane(n, c);
            auto out = dx.plane(n, c);
            const double g = gn.value[c];
            if (batch_stats) {
              const double k = g * inv_std[c] / count;
              for (std::size_t i = 0; i < hw; ++i) {
                out[i] += k * (count * dy[i] - sum_dy[c] -
                               xh[i] * sum_dy_xhat[c]);
              }
            } else {
              const double k = g * inv_std[c];
              for (std::size_t i = 0; i < hw; ++i) out[i] += k * dy[i];
            }
          }
        }
      });
}

Var elu(const Var& x) {
  Tensor y(x->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double v = x->value[i];
    y[i] = v > 0.0 ? v : std::expm1(v);
  }
  return make_node(std::move(y), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    Tensor& dx = xn.grad_buffer();
    for (std::size_t i = 0; i < dx.numel(); ++i) {
      const double v = xn.value[i];
      dx[i] += self.grad[i] * (v > 0.0 ? 1.0 : self.value[i] + 1.0);
    }
  });
}

Var scaled_sigmoid(const Var& x, double scale) {
  Tensor y(x->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    y[i] = scale / (1.0 + std::exp(-x->value[i]));
  }
  return make_node(std::move(y), {x}, [scale](Node& self) {
    Tensor& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.numel(); ++i) {
      const double s = self.value[i] / scale;
      dx[i] += self.grad[i] * scale * s * (1.0 - s);
    }
  });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw ContractError("concat_channels: no inputs");
  const Shape first = xs.front()->value.shape();
  int channels = 0;
  for (const Var& v : xs) {
    const Shape s = v->value.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ContractError("concat_channels: " + s.str() + " vs " +
                          first.str());
    }
    channels += s.c;
  }
  Tensor y(Shape{first.n, channels, first.h, first.w});
  const std::size_t hw = static_cast<std::size_t>(first.h) * first.w;
  for (int n = 0; n < first.n; ++n) {
    int offset = 0;
    for (const Var& v : xs) {
      const Tensor& t = v->value;
      std::copy_n(t.data() + t.index(n, 0, 0, 0), t.c() * hw,
                  y.data() + y.index(n, offset, 0, 0));
      offset += t.c();
    }
  }
  return make_node(
      std::move(y), std::vector<Var>(xs.begin(), xs.end()),
      [hw](Node& self) {
        const int batch = self.value.n();
        int offset = 0;
        for (const Var& p : self.parents) {
          const int c = p->value.c();
          if (p->requires_grad) {
            Tensor& g = p->grad_buffer();
            for (int n = 0; n < batch; ++n) {
              const double* src = self.grad.data() + self.grad.index(n, offset, 0, 0);
              double* dst = g.data() + g.index(n, 0, 0, 0);
              for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
            }
          }
          offset += c;
        }
      });
}

Var upsample_nearest2x(const Var& x) {
  const Shape s = x->value.shape();
  Tensor y(Shape{s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int yy = 0; yy < s.h * 2; ++yy) {
        for (int xx = 0; xx < s.w * 2; ++xx) {
          y.at(n, c, yy, xx) = x->value.at(n, c, yy / 2, xx / 2);
        }
      }
    }
  }
  return make_node(std::move(y), {x}, [s](Node& self) {
    Tensor& dx = self.parents[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (int yy = 0; yy < s.h * 2; ++yy) {
          for (int xx = 0; xx < s.w * 2; ++xx) {
            dx.at(n, c, yy / 2, xx / 2) += self.grad.at(n, c, yy, xx);
          }
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a->value.shape() != b->value.shape()) {
    throw ContractError("add: " + a->value.shape().str() + " vs " +
                        b->value.shape().str());
  }
  Tensor y = a->value;
  y.add_(b->value);
  return make_node(std::move(y), {a, b}, [](Node& self) {
    for (const Var& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Shape s = x->value.shape();
  const double hw = static_cast<double>(s.h) * s.w;
  Tensor y(Shape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (double v : x->value.plane(n, c)) acc += v;
      y.at(n, c, 0, 0) = acc / hw;
    }
  }
  return make_node(std::move(y), {x}, [s, hw](Node& self) {
    Tensor& dx = self.parents[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double g = self.grad.at(n, c, 0, 0) / hw;
        for (double& v : dx.plane(n, c)) v += g;
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  const int in = xs.c * xs.h * xs.w;
  if (ws.c != in || ws.h != 1 || ws.w != 1) {
    throw ContractError("linear: weight " + ws.str() + " incompatible with " +
                        xs.str());
  }
  const int out = ws.n;
  Tensor y(Shape{xs.n, out, 1, 1});
  ConstMapMat xm(x->value.data(), xs.n, in);
  ConstMapMat wm(weight->value.data(), out, in);
  MapMat ym(y.data(), xs.n, out);
  ym.noalias() = xm * wm.transpose();
  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < out; ++o) ym(n, o) += bias->value[o];
  }
  return make_node(
      std::move(y), {x, weight, bias}, [=](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        ConstMapMat dy(self.grad.data(), xs.n, out);
        if (xn.requires_grad) {
          MapMat dx(xn.grad_buffer().data(), xs.n, in);
          dx.noalias() += dy * ConstMapMat(wn.value.data(), out, in);
        }
        if (wn.requires_grad) {
          MapMat dw(wn.grad_buffer().data(), out, in);
          dw.noalias() += dy.transpose() * ConstMapMat(xn.value.data(), xs.n, in);
        }
        if (bn.requires_grad) {
          Tensor& db = bn.grad_buffer();
          for (int o = 0; o < out; ++o) db[o] += dy.col(o).sum();
        }
      });
}

Var weighted_sum(std::span<const std::pair<double, Var>> terms) {
  double total = 0.0;
  std::vector<Var> parents;
  std::vector<double> weights;
  for (const auto& [w, v] : terms) {
    require_scalar(v, "weighted_sum");
    total += w * v->value[0];
    parents.push_back(v);
    weights.push_back(w);
  }
  return make_node(Tensor(Shape{1, 1, 1, 1}, total), std::move(parents),
                   [weights](Node& self) {
                     const double g = self.grad[0];
                     for (std::size_t i = 0; i < weights.size(); ++i) {
                       Node& p = *self.parents[i];
                       if (p.requires_grad) p.grad_buffer()[0] += weights[i] * g;
                     }
                   });
}

}  // namespace ag
}  // namespace proxytta
