#pragma once

// Float64 re-implementations of module forwards. They read the same float
// tensors the engine uses, so finite differences taken through them are free
// of float32 rounding noise.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <string>
#include <vector>

#include "csfnet/parameter_store.hpp"
#include "csfnet/tensor.hpp"

namespace oracle64 {

using csfnet::Shape;
using csfnet::Tensor;

struct D {
  Shape s;
  std::vector<double> v;

  D() = default;
  explicit D(Shape shape) : s(std::move(shape)), v(static_cast<std::size_t>(s[0] * s[1] * s[2] * s[3]), 0.0) {}
  std::size_t idx(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w);
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return v[idx(n, c, h, w)]; }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const { return v[idx(n, c, h, w)]; }
};

inline D from(const Tensor& t) {
  D d(t.shape());
  std::copy(t.data().begin(), t.data().end(), d.v.begin());
  return d;
}

inline D conv(const D& x, const Tensor& w, const Tensor* bias, std::int64_t pt, std::int64_t pb, std::int64_t pl,
              std::int64_t pr, std::int64_t stride = 1) {
  const auto& ws = w.shape();
  const std::int64_t kh = ws[2], kw = ws[3];
  const std::int64_t oh = (x.s[2] + pt + pb - kh) / stride + 1, ow = (x.s[3] + pl + pr - kw) / stride + 1;
  D out({x.s[0], ws[0], oh, ow});
  for (std::int64_t n = 0; n < x.s[0]; ++n)
    for (std::int64_t co = 0; co < ws[0]; ++co) {
      double* o = &out.at(n, co, 0, 0);
      if (bias) std::fill(o, o + oh * ow, static_cast<double>(bias->at(co)));
      for (std::int64_t ci = 0; ci < ws[1]; ++ci)
        for (std::int64_t ky = 0; ky < kh; ++ky)
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const double wv = w.at(((co * ws[1] + ci) * kh + ky) * kw + kx);
            for (std::int64_t y = 0; y < oh; ++y) {
              const std::int64_t iy = y * stride - pt + ky;
              if (iy < 0 || iy >= x.s[2]) continue;
              const double* row = &x.v[x.idx(n, ci, iy, 0)];
              double* orow = o + y * ow;
              for (std::int64_t xo = 0; xo < ow; ++xo) {
                const std::int64_t ix = xo * stride - pl + kx;
                if (ix >= 0 && ix < x.s[3]) orow[xo] += wv * row[ix];
              }
            }
          }
    }
  return out;
}

// Square window; padded cells count toward the divisor.
inline D avg_pool(const D& x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const std::int64_t oh = (x.s[2] + 2 * pad - k) / stride + 1, ow = (x.s[3] + 2 * pad - k) / stride + 1;
  D out({x.s[0], x.s[1], oh, ow});
  for (std::int64_t n = 0; n < x.s[0]; ++n)
    for (std::int64_t c = 0; c < x.s[1]; ++c)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) {
              const std::int64_t y = i * stride - pad + a, xx = j * stride - pad + b;
              if (y >= 0 && y < x.s[2] && xx >= 0 && xx < x.s[3]) acc += x.at(n, c, y, xx);
            }
          out.at(n, c, i, j) = acc / static_cast<double>(k * k);
        }
  return out;
}

inline D concat(const std::vector<D>& parts) {
  std::int64_t channels = 0;
  for (const D& p : parts) channels += p.s[1];
  const Shape& s0 = parts.front().s;
  D out({s0[0], channels, s0[2], s0[3]});
  const std::int64_t hw = s0[2] * s0[3];
  for (std::int64_t n = 0; n < s0[0]; ++n) {
    std::int64_t c0 = 0;
    for (const D& p : parts) {
      std::copy_n(&p.v[p.idx(n, 0, 0, 0)], p.s[1] * hw, &out.at(n, c0, 0, 0));
      c0 += p.s[1];
    }
  }
  return out;
}

inline D pool(const D& x, std::int64_t oh, std::int64_t ow) {
  D out({x.s[0], x.s[1], oh, ow});
  for (std::int64_t n = 0; n < x.s[0]; ++n)
    for (std::int64_t c = 0; c < x.s[1]; ++c)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          const std::int64_t h0 = i * x.s[2] / oh, h1 = ((i + 1) * x.s[2] + oh - 1) / oh;
          const std::int64_t w0 = j * x.s[3] / ow, w1 = ((j + 1) * x.s[3] + ow - 1) / ow;
          double acc = 0.0;
          for (std::int64_t h = h0; h < h1; ++h)
            for (std::int64_t w = w0; w < w1; ++w) acc += x.at(n, c, h, w);
          out.at(n, c, i, j) = acc / static_cast<double>((h1 - h0) * (w1 - w0));
        }
  return out;
}

inline D bilinear(const D& x, std::int64_t oh, std::int64_t ow) {
  D out({x.s[0], x.s[1], oh, ow});
  auto src = [](std::int64_t d, std::int64_t in, std::int64_t o) {
    return std::max((static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(o) - 0.5, 0.0);
  };
  for (std::int64_t n = 0; n < x.s[0]; ++n)
    for (std::int64_t c = 0; c < x.s[1]; ++c)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          const double sy = src(i, x.s[2], oh), sx = src(j, x.s[3], ow);
          const std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(sy), x.s[2] - 1);
          const std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(sx), x.s[3] - 1);
          const std::int64_t y1 = std::min(y0 + 1, x.s[2] - 1), x1 = std::min(x0 + 1, x.s[3] - 1);
          const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
          out.at(n, c, i, j) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                               fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
        }
  return out;
}

// Batch norm with batch statistics (train) or running statistics (eval).
inline D bn(const D& x, const Tensor& gamma, const Tensor& beta, const Tensor& rmean, const Tensor& rvar,
            bool train, double eps = 1e-5) {
  D out(x.s);
  const std::int64_t hw = x.s[2] * x.s[3];
  for (std::int64_t c = 0; c < x.s[1]; ++c) {
    double mean = rmean.at(c), var = rvar.at(c);
    if (train) {
      double s = 0.0, ss = 0.0;
      for (std::int64_t n = 0; n < x.s[0]; ++n)
        for (std::int64_t i = 0; i < hw; ++i) s += x.v[static_cast<std::size_t>((n * x.s[1] + c) * hw + i)];
      mean = s / static_cast<double>(x.s[0] * hw);
      for (std::int64_t n = 0; n < x.s[0]; ++n)
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = x.v[static_cast<std::size_t>((n * x.s[1] + c) * hw + i)] - mean;
          ss += d * d;
        }
      var = ss / static_cast<double>(x.s[0] * hw);
    }
    const double scale = gamma.at(c) / std::sqrt(var + eps);
    for (std::int64_t n = 0; n < x.s[0]; ++n)
      for (std::int64_t i = 0; i < hw; ++i) {
        const auto k = static_cast<std::size_t>((n * x.s[1] + c) * hw + i);
        out.v[k] = (x.v[k] - mean) * scale + beta.at(c);
      }
  }
  return out;
}

inline D relu(D x) {
  for (double& e : x.v) e = std::max(e, 0.0);
  return x;
}

inline D sigmoid(D x) {
  for (double& e : x.v) e = 1.0 / (1.0 + std::exp(-e));
  return x;
}

inline D add(D a, const D& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

inline double weighted(const D& x, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i) s += x.v[i] * r.data()[i];
  return s;
}

inline D conv_bn_relu(const D& x, const csfnet::ParameterStore& st, const std::string& unit, bool train,
                      std::int64_t pt, std::int64_t pb, std::int64_t pl, std::int64_t pr, std::int64_t stride = 1) {
  D y = conv(x, st.at(unit + ".conv.weight"), nullptr, pt, pb, pl, pr, stride);
  return relu(bn(y, st.at(unit + ".bn.weight"), st.at(unit + ".bn.bias"), st.at(unit + ".bn.running_mean"),
                 st.at(unit + ".bn.running_var"), train));
}

inline D context_module(const D& x, const csfnet::ParameterStore& st, const std::string& prefix,
                        std::int64_t pool_h, std::int64_t pool_w, bool train) {
  D r = conv_bn_relu(pool(x, pool_h, pool_w), st, prefix + ".reduce", train, 0, 0, 0, 0);
  D a = bilinear(conv_bn_relu(r, st, prefix + ".branch_w", train, 0, 0, 1, 2), x.s[2], x.s[3]);
  D b = bilinear(conv_bn_relu(r, st, prefix + ".branch_h", train, 1, 2, 0, 0), x.s[2], x.s[3]);
  const Tensor& bias = st.at(prefix + ".project.bias");
  return conv(add(a, b), st.at(prefix + ".project.weight"), &bias, 1, 1, 1, 1);
}

// Channel concatenation of (rect_x, rect_y, fused).
inline D csafm(const D& fx, const D& fy, const csfnet::ParameterStore& st, const std::string& prefix,
               std::int64_t pool_h, std::int64_t pool_w, bool train) {
  const D px = pool(fx, pool_h, pool_w), py = pool(fy, pool_h, pool_w);
  const std::int64_t n = fx.s[0], c = fx.s[1];
  D sim({n, c, 1, 1});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double dot = 0, xx = 0, yy = 0;
      for (std::int64_t i = 0; i < pool_h; ++i)
        for (std::int64_t j = 0; j < pool_w; ++j) {
          dot += px.at(b, ch, i, j) * py.at(b, ch, i, j);
          xx += px.at(b, ch, i, j) * px.at(b, ch, i, j);
          yy += py.at(b, ch, i, j) * py.at(b, ch, i, j);
        }
      const double nx = std::sqrt(xx), ny = std::sqrt(yy);
      sim.at(b, ch, 0, 0) = nx < 1e-8 || ny < 1e-8 ? 0.0 : std::clamp(dot / (nx * ny), -1.0, 1.0);
    }
  const Tensor& b1 = st.at(prefix + ".conv1.bias");
  const Tensor& b2 = st.at(prefix + ".conv2.bias");
  D h = relu(bn(conv(sim, st.at(prefix + ".conv1.weight"), &b1, 0, 0, 0, 0), st.at(prefix + ".bn.weight"),
                st.at(prefix + ".bn.bias"), st.at(prefix + ".bn.running_mean"), st.at(prefix + ".bn.running_var"),
                train));
  const D w = sigmoid(conv(h, st.at(prefix + ".conv2.weight"), &b2, 0, 0, 0, 0));

  D out({n, 3 * c, fx.s[2], fx.s[3]});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double wt = w.at(b, ch, 0, 0);
      for (std::int64_t y = 0; y < fx.s[2]; ++y)
        for (std::int64_t x = 0; x < fx.s[3]; ++x) {
          const double a = fx.at(b, ch, y, x), e = fy.at(b, ch, y, x);
          out.at(b, ch, y, x) = a + e * wt;
          out.at(b, c + ch, y, x) = e + a * (1 - wt);
          out.at(b, 2 * c + ch, y, x) = e * wt + a * (1 - wt);
        }
    }
  return out;
}

// Square-kernel ConvBnRelu with "same" padding.
inline D cbr(const D& x, const csfnet::ParameterStore& st, const std::string& unit, bool train,
             std::int64_t stride = 1) {
  const std::int64_t p = st.at(unit + ".conv.weight").shape()[2] / 2;
  return conv_bn_relu(x, st, unit, train, p, p, p, p, stride);
}

// Four-unit block: 1x1 unit, then 3x3 units with the stride on the second;
// the first unit's output is average-pooled when the block downsamples.
inline D stdc_block(const D& x, const csfnet::ParameterStore& st, const std::string& name, bool train,
                    std::int64_t stride) {
  std::vector<D> parts;
  D cur = x;
  for (int u = 0; u < 4; ++u) {
    cur = cbr(cur, st, name + ".unit" + std::to_string(u), train, u == 1 ? stride : 1);
    parts.push_back(u == 0 && stride == 2 ? avg_pool(cur, 3, 2, 1) : cur);
  }
  return concat(parts);
}

// Stage index 0..4 of a backbone with the given block counts for stages 3..5.
inline D backbone_stage(const D& x, const csfnet::ParameterStore& st, const std::string& name, int stage,
                        const std::array<int, 3>& blocks, bool train) {
  if (stage < 2) return cbr(x, st, name + ".stage" + std::to_string(stage + 1), train, 2);
  D cur = x;
  for (int b = 0; b < blocks[static_cast<std::size_t>(stage - 2)]; ++b)
    cur = stdc_block(cur, st, name + ".stage" + std::to_string(stage + 1) + ".block" + std::to_string(b), train,
                     b == 0 ? 2 : 1);
  return cur;
}

struct NetworkShape {
  std::array<int, 3> blocks{2, 2, 2};
  int dual = 3;
  bool csafm_decoder = true;
  // Fusion pooling (w, h) for levels 1..5 and the context module.
  std::array<std::array<std::int64_t, 2>, 5> pool{};
  std::array<std::int64_t, 2> context_pool{};
};

inline D csafm_fused(const D& a, const D& b, const csfnet::ParameterStore& st, const std::string& prefix,
                     std::array<std::int64_t, 2> pool_wh, bool train) {
  const D all = csafm(a, b, st, prefix, pool_wh[1], pool_wh[0], train);
  const std::int64_t c = a.s[1];
  D out(a.s);
  for (std::int64_t n = 0; n < a.s[0]; ++n)
    std::copy_n(&all.v[all.idx(n, 2 * c, 0, 0)], c * a.s[2] * a.s[3], &out.at(n, 0, 0, 0));
  return out;
}

inline D slice(const D& x, std::int64_t c0, std::int64_t count) {
  D out({x.s[0], count, x.s[2], x.s[3]});
  for (std::int64_t n = 0; n < x.s[0]; ++n)
    std::copy_n(&x.v[x.idx(n, c0, 0, 0)], count * x.s[2] * x.s[3], &out.at(n, 0, 0, 0));
  return out;
}

inline D network(const D& rgb, const D& x, const csfnet::ParameterStore& st, const NetworkShape& shape,
                 bool train) {
  std::array<D, 5> level;
  D r = rgb, t = x, trunk;
  for (int i = 0; i < 5; ++i) {
    if (i < shape.dual) {
      const D fr = backbone_stage(r, st, "encoder.rgb", i, shape.blocks, train);
      const D fx = backbone_stage(t, st, "encoder.x", i, shape.blocks, train);
      const auto p = shape.pool[static_cast<std::size_t>(i)];
      const D all = csafm(fr, fx, st, "encoder.fuse" + std::to_string(i + 1), p[1], p[0], train);
      const std::int64_t c = fr.s[1];
      level[static_cast<std::size_t>(i)] = slice(all, 2 * c, c);
      if (i == shape.dual - 1) {
        trunk = level[static_cast<std::size_t>(i)];
      } else {
        r = slice(all, 0, c);
        t = slice(all, c, c);
      }
    } else {
      trunk = backbone_stage(trunk, st, "encoder.rgb", i, shape.blocks, train);
      level[static_cast<std::size_t>(i)] = trunk;
    }
  }
  auto up = [&](int u, const D& in, std::int64_t h, std::int64_t w) {
    D cur = bilinear(in, h, w);
    const int convs = u == 2 ? 2 : 1;
    for (int c = 0; c < convs; ++c)
      cur = cbr(cur, st, "decoder.up" + std::to_string(u + 1) + ".conv" + std::to_string(c), train);
    return cur;
  };
  auto fuse = [&](int site, const D& dec, const D& skip, int lvl) {
    if (!shape.csafm_decoder) return add(dec, skip);
    return csafm_fused(dec, skip, st, "decoder.fuse" + std::to_string(site + 1),
                       shape.pool[static_cast<std::size_t>(lvl - 1)], train);
  };
  const D s4 = cbr(level[3], st, "decoder.skip4", train);
  const D s3 = cbr(level[2], st, "decoder.skip3", train);
  const D s1 = cbr(level[0], st, "decoder.skip1", train);
  D d = context_module(level[4], st, "context", shape.context_pool[1], shape.context_pool[0], train);
  d = fuse(0, up(0, d, s4.s[2], s4.s[3]), s4, 4);
  d = fuse(1, up(1, d, s3.s[2], s3.s[3]), s3, 3);
  d = fuse(2, up(2, d, s1.s[2], s1.s[3]), s1, 1);
  d = up(3, d, rgb.s[2], rgb.s[3]);
  const Tensor& hb = st.at("head.bias");
  return conv(d, st.at("head.weight"), &hb, 0, 0, 0, 0);
}

// Mean negative log-softmax over pixels whose label is not `ignore`.
inline double cross_entropy(const D& logits, const std::vector<std::uint8_t>& labels, std::uint8_t ignore = 255) {
  const std::int64_t k = logits.s[1], hw = logits.s[2] * logits.s[3];
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t n = 0; n < logits.s[0]; ++n)
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::uint8_t lab = labels[static_cast<std::size_t>(n * hw + i)];
      if (lab == ignore) continue;
      double m = -1e300;
      for (std::int64_t c = 0; c < k; ++c) m = std::max(m, logits.v[static_cast<std::size_t>((n * k + c) * hw + i)]);
      double z = 0.0;
      for (std::int64_t c = 0; c < k; ++c) z += std::exp(logits.v[static_cast<std::size_t>((n * k + c) * hw + i)] - m);
      total += m + std::log(z) - logits.v[static_cast<std::size_t>((n * k + lab) * hw + i)];
      ++count;
    }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace oracle64
