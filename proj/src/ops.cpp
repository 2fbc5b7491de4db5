#include "pdseg/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "gemm.hpp"

namespace pdseg {

namespace {

using detail::grad_sink;
using detail::make_result;

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(s));
  }
}

struct ConvGeometry {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo, cin_g, cout_g;
  int stride, pad, groups;
};

// Unfolds one image/group slice into cols[(c*kh + ky)*kw + kx][oy*wo + ox].
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    const T* src = in + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* dst = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* drow = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wo, T(0));
            continue;
          }
          const T* srow = src + iy * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* out) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    T* dst = out + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* src = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* drow = dst + iy * g.w;
          const T* srow = src + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opt) {
  require_rank("conv2d input", input.shape(), 4);
  require_rank("conv2d weight", weight.shape(), 4);
  if (opt.groups < 1 || opt.stride < 1 || opt.padding < 0) {
    throw ConfigError("conv2d: stride and groups must be >= 1 and padding >= 0");
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(g.groups) + " must divide Cin=" +
                      std::to_string(g.cin) + " and Cout=" + std::to_string(g.cout));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (weight.dim(1) != g.cin_g) {
    throw DimensionError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                         to_string(input.shape()) + " and groups=" + std::to_string(g.groups));
  }
  const std::int64_t hp = g.h + 2 * g.pad - g.kh;
  const std::int64_t wp = g.w + 2 * g.pad - g.kw;
  if (hp < 0 || wp < 0) {
    throw DimensionError("conv2d: kernel larger than padded input " + to_string(input.shape()));
  }
  g.ho = hp / g.stride + 1;
  g.wo = wp / g.stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias shape " + to_string(bias.shape()) + " != [" +
                         std::to_string(g.cout) + "]");
  }

  const std::int64_t plane = g.ho * g.wo;
  const std::int64_t kcols = g.cin_g * g.kh * g.kw;
  const bool pointwise = is_pointwise(g);
  std::vector<T> out(static_cast<std::size_t>(g.n * g.cout * plane), T(0));
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(kcols * plane));
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const T* in = x + (b * g.cin + grp * g.cin_g) * g.h * g.w;
      const T* colp = in;
      if (!pointwise) {
        im2col(g, in, cols.data());
        colp = cols.data();
      }
      T* o = out.data() + (b * g.cout + grp * g.cout_g) * plane;
      if (has_bias) {
        for (std::int64_t co = 0; co < g.cout_g; ++co) {
          std::fill(o + co * plane, o + (co + 1) * plane, bias.data()[grp * g.cout_g + co]);
        }
      }
      detail::gemm_nn(g.cout_g, plane, kcols, wt + grp * g.cout_g * kcols, colp, o);
    }
  }

  std::vector<Tensor<T>> parents{input, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(
      "conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(parents),
      [g, has_bias, plane, kcols, pointwise](typename Tensor<T>::Node& self) {
        auto& in_node = *self.parents[0];
        auto& w_node = *self.parents[1];
        T* gin = grad_sink<T>(in_node);
        T* gw = grad_sink<T>(w_node);
        T* gb = has_bias ? grad_sink<T>(*self.parents[2]) : nullptr;
        const T* gout = self.grad.data();
        std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(kcols * plane));
        std::vector<T> gcols(static_cast<std::size_t>(kcols * plane));
        for (std::int64_t b = 0; b < g.n; ++b) {
          for (int grp = 0; grp < g.groups; ++grp) {
            const T* go = gout + (b * g.cout + grp * g.cout_g) * plane;
            if (gb) {
              for (std::int64_t co = 0; co < g.cout_g; ++co) {
                T s = 0;
                for (std::int64_t p = 0; p < plane; ++p) s += go[co * plane + p];
                gb[grp * g.cout_g + co] += s;
              }
            }
            const std::int64_t in_off = (b * g.cin + grp * g.cin_g) * g.h * g.w;
            if (gw) {
              const T* colp = in_node.value.data() + in_off;
              if (!pointwise) {
                im2col(g, colp, cols.data());
                colp = cols.data();
              }
              detail::gemm_nt(g.cout_g, kcols, plane, go, colp, gw + grp * g.cout_g * kcols);
            }
            if (gin) {
              const T* wg = w_node.value.data() + grp * g.cout_g * kcols;
              if (pointwise) {
                detail::gemm_tn(kcols, plane, g.cout_g, wg, go, gin + in_off);
              } else {
                std::fill(gcols.begin(), gcols.end(), T(0));
                detail::gemm_tn(kcols, plane, g.cout_g, wg, go, gcols.data());
                col2im_add(g, gcols.data(), gin + in_off);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> global_pool(const Tensor<T>& input, PoolMode mode) {
  require_rank("global_pool", input.shape(), 4);
  const std::int64_t n = input.dim(0), c = input.dim(1);
  const std::int64_t hw = input.dim(2) * input.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * c));
  std::vector<std::int64_t> argmax;
  const T* x = input.data().data();
  if (mode == PoolMode::kMax) argmax.resize(out.size());
  for (std::int64_t i = 0; i < n * c; ++i) {
    const T* row = x + i * hw;
    if (mode == PoolMode::kMax) {
      std::int64_t best = 0;
      for (std::int64_t p = 1; p < hw; ++p) {
        if (row[p] > row[best]) best = p;
      }
      argmax[static_cast<std::size_t>(i)] = best;
      out[static_cast<std::size_t>(i)] = row[best];
    } else {
      T s = 0;
      for (std::int64_t p = 0; p < hw; ++p) s += row[p];
      out[static_cast<std::size_t>(i)] = s / static_cast<T>(hw);
    }
  }
  return make_result<T>("global_pool", {n, c, 1, 1}, std::move(out), {input},
                        [mode, hw, argmax = std::move(argmax)](typename Tensor<T>::Node& self) {
                          T* gin = grad_sink<T>(*self.parents[0]);
                          if (!gin) return;
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            T* row = gin + static_cast<std::int64_t>(i) * hw;
                            if (mode == PoolMode::kMax) {
                              row[argmax[i]] += self.grad[i];
                            } else {
                              const T share = self.grad[i] / static_cast<T>(hw);
                              for (std::int64_t p = 0; p < hw; ++p) row[p] += share;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank("linear input", input.shape(), 2);
  require_rank("linear weight", weight.shape(), 2);
  const std::int64_t n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw DimensionError("linear: input " + to_string(input.shape()) + " vs weight " +
                         to_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != dout)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " vs Dout " + std::to_string(dout));
  }
  std::vector<T> out(static_cast<std::size_t>(n * dout), T(0));
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t o = 0; o < dout; ++o) {
      out[static_cast<std::size_t>(i * dout + o)] =
          detail::dot(x + i * din, w + o * din, din) + (has_bias ? bias.data()[o] : T(0));
    }
  }
  std::vector<Tensor<T>> parents{input, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>("linear", {n, dout}, std::move(out), std::move(parents),
                        [n, din, dout, has_bias](typename Tensor<T>::Node& self) {
                          auto& in_node = *self.parents[0];
                          auto& w_node = *self.parents[1];
                          const T* go = self.grad.data();
                          if (T* gin = grad_sink<T>(in_node)) {
                            detail::gemm_nn(n, din, dout, go, w_node.value.data(), gin);
                          }
                          if (T* gw = grad_sink<T>(w_node)) {
                            detail::gemm_tn(dout, din, n, go, in_node.value.data(), gw);
                          }
                          if (has_bias) {
                            if (T* gb = grad_sink<T>(*self.parents[2])) {
                              for (std::int64_t i = 0; i < n; ++i)
                                for (std::int64_t o = 0; o < dout; ++o) gb[o] += go[i * dout + o];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  auto x = input.data();
  std::vector<T> out(x.size());
  if (kind == Activation::kRelu) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] >= T(0)) {
        out[i] = T(1) / (T(1) + std::exp(-x[i]));
      } else {
        const T e = std::exp(x[i]);
        out[i] = e / (T(1) + e);
      }
    }
  }
  return make_result<T>(kind == Activation::kRelu ? "relu" : "sigmoid", input.shape(), std::move(out),
                        {input}, [kind](typename Tensor<T>::Node& self) {
                          auto& in_node = *self.parents[0];
                          T* gin = grad_sink<T>(in_node);
                          if (!gin) return;
                          const auto& g = self.grad;
                          if (kind == Activation::kRelu) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              if (in_node.value[i] > T(0)) gin[i] += g[i];
                          } else {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const T s = self.value[i];
                              gin[i] += g[i] * s * (T(1) - s);
                            }
                          }
                        });
}

namespace {

struct AxisLayout {
  std::int64_t outer = 1;
  std::int64_t inner = 1;
};

AxisLayout axis_layout(const Shape& s, int axis) {
  AxisLayout l;
  for (int i = 0; i < axis; ++i) l.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, int axis) {
  if (tensors.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = tensors.front().shape();
  if (axis < 0 || axis >= static_cast<int>(ref.size())) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(ref));
  }
  Shape out_shape = ref;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& t : tensors) {
    const Shape& s = t.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != ref[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + to_string(s) + " incompatible with " + to_string(ref) +
                           " on axis " + std::to_string(axis));
    }
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += extents.back();
  }
  const AxisLayout l = axis_layout(ref, axis);
  const std::int64_t total = out_shape[static_cast<std::size_t>(axis)];
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const T* src = tensors[k].data().data();
    const std::int64_t block = extents[k] * l.inner;
    for (std::int64_t o = 0; o < l.outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.begin() + (o * total + offset) * l.inner);
    }
    offset += extents[k];
  }
  return make_result<T>("concat", out_shape, std::move(out), tensors,
                        [l, total, extents](typename Tensor<T>::Node& self) {
                          std::int64_t offset = 0;
                          for (std::size_t k = 0; k < extents.size(); ++k) {
                            const std::int64_t block = extents[k] * l.inner;
                            if (T* g = grad_sink<T>(*self.parents[k])) {
                              for (std::int64_t o = 0; o < l.outer; ++o) {
                                const T* src = self.grad.data() + (o * total + offset) * l.inner;
                                T* dst = g + o * block;
                                for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                              }
                            }
                            offset += extents[k];
                          }
                        });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& tensor, const std::vector<std::int64_t>& sizes, int axis) {
  const Shape& s = tensor.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("split: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  const std::int64_t total = s[static_cast<std::size_t>(axis)];
  std::int64_t acc = 0;
  for (auto e : sizes) {
    if (e <= 0) throw DimensionError("split: sizes must be positive");
    acc += e;
  }
  if (acc != total) {
    throw DimensionError("split: sizes sum to " + std::to_string(acc) + " but axis extent is " +
                         std::to_string(total));
  }
  const AxisLayout l = axis_layout(s, axis);
  std::vector<Tensor<T>> outs;
  std::int64_t offset = 0;
  for (auto e : sizes) {
    Shape os = s;
    os[static_cast<std::size_t>(axis)] = e;
    const std::int64_t block = e * l.inner;
    std::vector<T> out(static_cast<std::size_t>(numel(os)));
    const T* src = tensor.data().data();
    for (std::int64_t o = 0; o < l.outer; ++o) {
      std::copy(src + (o * total + offset) * l.inner, src + (o * total + offset) * l.inner + block,
                out.begin() + o * block);
    }
    outs.push_back(make_result<T>("split", os, std::move(out), {tensor},
                                  [l, total, offset, block](typename Tensor<T>::Node& self) {
                                    T* g = grad_sink<T>(*self.parents[0]);
                                    if (!g) return;
                                    for (std::int64_t o = 0; o < l.outer; ++o) {
                                      T* dst = g + (o * total + offset) * l.inner;
                                      const T* src = self.grad.data() + o * block;
                                      for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                                    }
                                  }));
    offset += e;
  }
  return outs;
}

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size()) {
    throw DimensionError("elementwise: rank mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  // Pad to rank 4 and give broadcast axes of b a zero stride.
  std::array<std::int64_t, 4> ext{1, 1, 1, 1}, bstride{0, 0, 0, 0};
  const std::size_t pad = 4 - sa.size();
  std::int64_t stride = 1;
  for (std::size_t i = sa.size(); i-- > 0;) {
    if (sb[i] != sa[i] && sb[i] != 1) {
      throw DimensionError("elementwise: " + to_string(sb) + " is not broadcastable to " + to_string(sa));
    }
    ext[pad + i] = sa[i];
    bstride[pad + i] = sb[i] == 1 && sa[i] != 1 ? 0 : stride;
    stride *= sb[i];
  }
  const bool same = sa == sb;
  const T* x = a.data().data();
  const T* y = b.data().data();
  std::vector<T> out(static_cast<std::size_t>(a.numel()));
  // Index of b for flat index i of a.
  std::vector<std::int64_t> bidx;
  if (!same) {
    bidx.resize(out.size());
    std::size_t i = 0;
    for (std::int64_t i0 = 0; i0 < ext[0]; ++i0)
      for (std::int64_t i1 = 0; i1 < ext[1]; ++i1)
        for (std::int64_t i2 = 0; i2 < ext[2]; ++i2)
          for (std::int64_t i3 = 0; i3 < ext[3]; ++i3)
            bidx[i++] = i0 * bstride[0] + i1 * bstride[1] + i2 * bstride[2] + i3 * bstride[3];
  }
  const bool is_add = kind == Elementwise::kAdd;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T yb = same ? y[i] : y[bidx[i]];
    out[i] = is_add ? x[i] + yb : x[i] * yb;
  }
  return make_result<T>(is_add ? "add" : "mul", sa, std::move(out), {a, b},
                        [is_add, same, bidx = std::move(bidx)](typename Tensor<T>::Node& self) {
                          auto& an = *self.parents[0];
                          auto& bn = *self.parents[1];
                          const auto& g = self.grad;
                          if (T* ga = grad_sink<T>(an)) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += is_add ? g[i] : g[i] * bn.value[same ? i : bidx[i]];
                          }
                          if (T* gb = grad_sink<T>(bn)) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const std::size_t j = same ? i : static_cast<std::size_t>(bidx[i]);
                              gb[j] += is_add ? g[i] : g[i] * an.value[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [factor](typename Tensor<T>::Node& self) {
    if (T* g = grad_sink<T>(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return make_result<T>("sum", {1}, {s}, {a}, [](typename Tensor<T>::Node& self) {
    if (T* g = grad_sink<T>(*self.parents[0])) {
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](typename Tensor<T>::Node& self) {
    if (T* g = grad_sink<T>(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

namespace {

struct LerpAxis {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w0, w1;
};

LerpAxis lerp_axis(std::int64_t in, std::int64_t out) {
  LerpAxis a;
  a.i0.resize(static_cast<std::size_t>(out));
  a.i1.resize(a.i0.size());
  a.w0.resize(a.i0.size());
  a.w1.resize(a.i0.size());
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    const auto k = static_cast<std::size_t>(o);
    a.i0[k] = lo;
    a.i1[k] = hi;
    a.w1[k] = frac;
    a.w0[k] = 1.0 - frac;
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  require_rank("resize_bilinear", input.shape(), 4);
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: output extents must be >= 1");
  const std::int64_t planes = input.dim(0) * input.dim(1);
  const std::int64_t h = input.dim(2), w = input.dim(3);
  auto ay = std::make_shared<LerpAxis>(lerp_axis(h, out_h));
  auto ax = std::make_shared<LerpAxis>(lerp_axis(w, out_w));
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  const T* x = input.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto ky = static_cast<std::size_t>(oy);
      const T* r0 = src + ay->i0[ky] * w;
      const T* r1 = src + ay->i1[ky] * w;
      const T wy0 = static_cast<T>(ay->w0[ky]), wy1 = static_cast<T>(ay->w1[ky]);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto kx = static_cast<std::size_t>(ox);
        const T wx0 = static_cast<T>(ax->w0[kx]), wx1 = static_cast<T>(ax->w1[kx]);
        dst[oy * out_w + ox] = wy0 * (wx0 * r0[ax->i0[kx]] + wx1 * r0[ax->i1[kx]]) +
                               wy1 * (wx0 * r1[ax->i0[kx]] + wx1 * r1[ax->i1[kx]]);
      }
    }
  }
  Shape os{input.dim(0), input.dim(1), out_h, out_w};
  return make_result<T>("resize_bilinear", os, std::move(out), {input},
                        [planes, h, w, out_h, out_w, ay, ax](typename Tensor<T>::Node& self) {
                          T* g = grad_sink<T>(*self.parents[0]);
                          if (!g) return;
                          for (std::int64_t p = 0; p < planes; ++p) {
                            T* dst = g + p * h * w;
                            const T* go = self.grad.data() + p * out_h * out_w;
                            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                              const auto ky = static_cast<std::size_t>(oy);
                              T* r0 = dst + ay->i0[ky] * w;
                              T* r1 = dst + ay->i1[ky] * w;
                              const T wy0 = static_cast<T>(ay->w0[ky]), wy1 = static_cast<T>(ay->w1[ky]);
                              for (std::int64_t ox = 0; ox < out_w; ++ox) {
                                const auto kx = static_cast<std::size_t>(ox);
                                const T v = go[oy * out_w + ox];
                                const T wx0 = static_cast<T>(ax->w0[kx]), wx1 = static_cast<T>(ax->w1[kx]);
                                r0[ax->i0[kx]] += v * wy0 * wx0;
                                r0[ax->i1[kx]] += v * wy0 * wx1;
                                r1[ax->i0[kx]] += v * wy1 * wx0;
                                r1[ax->i1[kx]] += v * wy1 * wx1;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  require_rank("resize_nearest", input.shape(), 4);
  if (out_h < 1 || out_w < 1) throw DimensionError("resize_nearest: output extents must be >= 1");
  const std::int64_t planes = input.dim(0) * input.dim(1);
  const std::int64_t h = input.dim(2), w = input.dim(3);
  // Source index floor(o * in / out); for an integer upscale this is o / factor.
  std::vector<std::int64_t> src(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t y = 0; y < out_h; ++y)
    for (std::int64_t x = 0; x < out_w; ++x)
      src[static_cast<std::size_t>(y * out_w + x)] = (y * h / out_h) * w + (x * w / out_w);
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  const T* xin = input.data().data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < src.size(); ++i) out[static_cast<std::size_t>(p) * src.size() + i] = xin[p * h * w + src[i]];
  Shape os{input.dim(0), input.dim(1), out_h, out_w};
  return make_result<T>("resize_nearest", os, std::move(out), {input},
                        [planes, h, w, src = std::move(src)](typename Tensor<T>::Node& self) {
                          T* g = grad_sink<T>(*self.parents[0]);
                          if (!g) return;
                          for (std::int64_t p = 0; p < planes; ++p)
                            for (std::size_t i = 0; i < src.size(); ++i)
                              g[p * h * w + src[i]] += self.grad[static_cast<std::size_t>(p) * src.size() + i];
                        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, int factor) {
  require_rank("upsample_nearest", input.shape(), 4);
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  return resize_nearest(input, input.dim(2) * factor, input.dim(3) * factor);
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& input) {
  const std::int64_t w = input.shape().back();
  const std::int64_t rows = input.numel() / w;
  std::vector<T> out(static_cast<std::size_t>(input.numel()));
  const T* x = input.data().data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < w; ++c) out[static_cast<std::size_t>(r * w + c)] = x[r * w + (w - 1 - c)];
  return make_result<T>("flip_horizontal", input.shape(), std::move(out), {input},
                        [rows, w](typename Tensor<T>::Node& self) {
                          T* g = grad_sink<T>(*self.parents[0]);
                          if (!g) return;
                          for (std::int64_t r = 0; r < rows; ++r)
                            for (std::int64_t c = 0; c < w; ++c)
                              g[r * w + (w - 1 - c)] += self.grad[static_cast<std::size_t>(r * w + c)];
                        });
}

namespace {

struct LabelGeometry {
  std::int64_t k;
  std::int64_t hw;
};

template <typename T>
LabelGeometry check_logits(const char* op, const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  require_rank(op, logits.shape(), 4);
  if (logits.dim(0) != 1) throw DimensionError(std::string(op) + ": batch extent must be 1");
  LabelGeometry g{logits.dim(1), logits.dim(2) * logits.dim(3)};
  if (static_cast<std::int64_t>(labels.size()) != g.hw) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(g.hw) + " pixels");
  }
  for (auto l : labels) {
    if (l != kIgnoreLabel && l >= g.k) {
      throw ConfigError(std::string(op) + ": label " + std::to_string(l) + " >= K=" + std::to_string(g.k));
    }
  }
  return g;
}

}  // namespace

template <typename T>
std::vector<T> softmax_channels(const Tensor<T>& logits) {
  require_rank("softmax_channels", logits.shape(), 4);
  const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const T* z = logits.data().data();
  std::vector<T> p(static_cast<std::size_t>(logits.numel()));
  for (std::int64_t b = 0; b < n; ++b) {
    const T* zb = z + b * k * hw;
    T* pb = p.data() + b * k * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      T mx = zb[i];
      for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, zb[c * hw + i]);
      T s = 0;
      for (std::int64_t c = 0; c < k; ++c) {
        pb[c * hw + i] = std::exp(zb[c * hw + i] - mx);
        s += pb[c * hw + i];
      }
      for (std::int64_t c = 0; c < k; ++c) pb[c * hw + i] /= s;
    }
  }
  return p;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const LabelGeometry g = check_logits("cross_entropy", logits, labels);
  const T* z = logits.data().data();
  std::int64_t valid = 0;
  T total = 0;
  for (std::int64_t i = 0; i < g.hw; ++i) {
    const auto lab = labels[static_cast<std::size_t>(i)];
    if (lab == kIgnoreLabel) continue;
    ++valid;
    T mx = z[i];
    for (std::int64_t c = 1; c < g.k; ++c) mx = std::max(mx, z[c * g.hw + i]);
    T s = 0;
    for (std::int64_t c = 0; c < g.k; ++c) s += std::exp(z[c * g.hw + i] - mx);
    total += (mx + std::log(s)) - z[lab * g.hw + i];
  }
  const T value = valid > 0 ? total / static_cast<T>(valid) : T(0);
  std::vector<std::uint8_t> labs(labels.begin(), labels.end());
  return make_result<T>("cross_entropy", {1}, {value}, {logits},
                        [g, valid, labs = std::move(labs)](typename Tensor<T>::Node& self) {
                          auto& ln = *self.parents[0];
                          T* gz = grad_sink<T>(ln);
                          if (!gz || valid == 0) return;
                          const T* z = ln.value.data();
                          const T coef = self.grad[0] / static_cast<T>(valid);
                          std::vector<T> e(static_cast<std::size_t>(g.k));
                          for (std::int64_t i = 0; i < g.hw; ++i) {
                            const auto lab = labs[static_cast<std::size_t>(i)];
                            if (lab == kIgnoreLabel) continue;
                            T mx = z[i];
                            for (std::int64_t c = 1; c < g.k; ++c) mx = std::max(mx, z[c * g.hw + i]);
                            T s = 0;
                            for (std::int64_t c = 0; c < g.k; ++c) {
                              e[static_cast<std::size_t>(c)] = std::exp(z[c * g.hw + i] - mx);
                              s += e[static_cast<std::size_t>(c)];
                            }
                            for (std::int64_t c = 0; c < g.k; ++c) {
                              const T p = e[static_cast<std::size_t>(c)] / s;
                              gz[c * g.hw + i] += coef * (p - (c == lab ? T(1) : T(0)));
                            }
                          }
                        });
}

template <typename T>
Tensor<T> soft_dice(const Tensor<T>& logits, std::span<const std::uint8_t> labels, T smooth) {
  const LabelGeometry g = check_logits("soft_dice", logits, labels);
  std::vector<T> p = softmax_channels(logits);
  const auto k = static_cast<std::size_t>(g.k);
  std::vector<T> inter(k, T(0)), psum(k, T(0)), gsum(k, T(0));
  std::vector<char> present(k, 0);
  for (std::int64_t i = 0; i < g.hw; ++i) {
    const auto lab = labels[static_cast<std::size_t>(i)];
    if (lab == kIgnoreLabel) continue;
    std::int64_t best = 0;
    for (std::int64_t c = 0; c < g.k; ++c) {
      const T pc = p[static_cast<std::size_t>(c * g.hw + i)];
      psum[static_cast<std::size_t>(c)] += pc;
      if (pc > p[static_cast<std::size_t>(best * g.hw + i)]) best = c;
    }
    inter[lab] += p[static_cast<std::size_t>(lab * g.hw + i)];
    gsum[lab] += T(1);
    present[lab] = 1;
    present[static_cast<std::size_t>(best)] = 1;
  }
  std::int64_t n_present = 0;
  T total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (!present[c]) continue;
    ++n_present;
    total += T(1) - (T(2) * inter[c] + smooth) / (psum[c] + gsum[c] + smooth);
  }
  const T value = n_present > 0 ? total / static_cast<T>(n_present) : T(0);
  std::vector<std::uint8_t> labs(labels.begin(), labels.end());
  return make_result<T>(
      "soft_dice", {1}, {value}, {logits},
      [g, k, smooth, n_present, p = std::move(p), inter = std::move(inter), psum = std::move(psum),
       gsum = std::move(gsum), present = std::move(present),
       labs = std::move(labs)](typename Tensor<T>::Node& self) {
        T* gz = grad_sink<T>(*self.parents[0]);
        if (!gz || n_present == 0) return;
        const T coef = self.grad[0] / static_cast<T>(n_present);
        // d(1 - dice_c)/dp_c(x) = -(2·g_c(x)·D_c - N_c) / D_c²
        std::vector<T> num(k), den(k);
        for (std::size_t c = 0; c < k; ++c) {
          num[c] = T(2) * inter[c] + smooth;
          den[c] = psum[c] + gsum[c] + smooth;
        }
        std::vector<T> dp(k);
        for (std::int64_t i = 0; i < g.hw; ++i) {
          const auto lab = labs[static_cast<std::size_t>(i)];
          if (lab == kIgnoreLabel) continue;
          T weighted = 0;
          for (std::size_t c = 0; c < k; ++c) {
            const T gc = (c == lab) ? T(1) : T(0);
            dp[c] = present[c] ? -coef * (T(2) * gc * den[c] - num[c]) / (den[c] * den[c]) : T(0);
            weighted += p[c * static_cast<std::size_t>(g.hw) + static_cast<std::size_t>(i)] * dp[c];
          }
          for (std::size_t c = 0; c < k; ++c) {
            const std::size_t idx = c * static_cast<std::size_t>(g.hw) + static_cast<std::size_t>(i);
            gz[idx] += p[idx] * (dp[c] - weighted);
          }
        }
      });
}

#define PDSEG_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions);   \
  template Tensor<T> global_pool(const Tensor<T>&, PoolMode);                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                    \
  template std::vector<Tensor<T>> split(const Tensor<T>&, const std::vector<std::int64_t>&, int);   \
  template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, Elementwise);                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);                 \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                       \
  template Tensor<T> resize_nearest(const Tensor<T>&, std::int64_t, std::int64_t);                  \
  template Tensor<T> flip_horizontal(const Tensor<T>&);                                             \
  template std::vector<T> softmax_channels(const Tensor<T>&);                                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>);                \
  template Tensor<T> soft_dice(const Tensor<T>&, std::span<const std::uint8_t>, T);

PDSEG_INSTANTIATE_OPS(float)
PDSEG_INSTANTIATE_OPS(double)

}  // namespace pdseg
