#include "apn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "apn/errors.hpp"

namespace apn::ops {
namespace {

void same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands on different tapes");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape()));
  }
}

template <class Fwd, class Deriv>
Var unary(const char* name, Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.tape()->record(name, std::move(out), {x}, [deriv](const GradContext& c) {
    Tensor* gx = c.grad(0);
    const Tensor& xin = c.in(0);
    for (std::size_t i = 0; i < xin.size(); ++i) gx->data()[i] += c.out_grad[i] * deriv(xin[i], c.out_value[i]);
  });
}

// C += A * B with A [m x k], B [k x n].
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Valid output-index range [lo, hi) for a kernel tap so that the input index
// o*stride + tap - pad stays inside [0, extent).
std::pair<long, long> tap_range(long extent, long out_extent, long tap, long stride, long pad) {
  long lo = 0;
  if (pad - tap > 0) lo = (pad - tap + stride - 1) / stride;
  long hi_num = extent - 1 + pad - tap;
  long hi = hi_num < 0 ? 0 : hi_num / stride + 1;
  hi = std::min(hi, out_extent);
  return {lo, std::max(lo, hi)};
}

}  // namespace

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape()->record("add", std::move(out), {a, b}, [](const GradContext& c) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = c.grad(k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape()->record("sub", std::move(out), {a, b}, [](const GradContext& c) {
    if (Tensor* g = c.grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
    }
    if (Tensor* g = c.grad(1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= c.out_grad[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape()->record("mul", std::move(out), {a, b}, [](const GradContext& c) {
    if (Tensor* g = c.grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i] * c.in(1)[i];
    }
    if (Tensor* g = c.grad(1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i] * c.in(0)[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary("add_scalar", a, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record("sum", Tensor::scalar(s), {a}, [](const GradContext& c) {
    const double g = c.out_grad[0];
    for (double& v : c.grad(0)->data()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeMismatch("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) throw ShapeMismatch("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Tensor out({m, n});
  gemm_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape()->record("matmul", std::move(out), {a, b}, [m, k, n](const GradContext& c) {
    const double* g = c.out_grad.data().data();
    if (Tensor* ga = c.grad(0)) {
      // dA[i,p] += sum_j g[i,j] * B[p,j]
      const double* bp = c.in(1).data().data();
      double* gap = ga->data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bp[p * n + j];
          gap[i * k + p] += acc;
        }
      }
    }
    if (Tensor* gb = c.grad(1)) {
      // dB[p,j] += sum_i A[i,p] * g[i,j]
      const double* ap = c.in(0).data().data();
      double* gbp = gb->data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = ap[i * k + p];
          if (av_ip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gbp[p * n + j] += av_ip * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank(av, 2, "transpose");
  const std::size_t r = av.dim(0), cols = av.dim(1);
  Tensor out({cols, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * r + i] = av[i * cols + j];
  return a.tape()->record("transpose", std::move(out), {a}, [r, cols](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < cols; ++j) (*g)[i * cols + j] += c.out_grad[j * r + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record("reshape", std::move(out), {a}, [](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
  });
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t pad) {
  same_tape(input, kernel, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k) {
    throw ShapeMismatch("conv2d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  }
  if (k % 2 == 0) throw ShapeMismatch("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (stride == 0) throw ShapeMismatch("conv2d: stride must be positive");
  if (h + 2 * pad < k || wd + 2 * pad < k) throw ShapeMismatch("conv2d: kernel larger than padded input");
  const std::size_t span_h = h + 2 * pad - k, span_w = wd + 2 * pad - k;
  if (span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeMismatch("conv2d: (size + 2*pad - k) not divisible by stride for input " + shape_str(x.shape()));
  }
  const std::size_t ho = span_h / stride + 1, wo = span_w / stride + 1;

  struct Geometry {
    long ci, h, w, co, k, ho, wo, stride, pad;
  };
  const Geometry geo{static_cast<long>(ci), static_cast<long>(h),  static_cast<long>(wd),
                     static_cast<long>(co), static_cast<long>(k),  static_cast<long>(ho),
                     static_cast<long>(wo), static_cast<long>(stride), static_cast<long>(pad)};

  // Visits every (output, input, weight) triple with contiguous inner loops.
  auto for_each_tap = [](const Geometry& g, auto&& body) {
    for (long o = 0; o < g.co; ++o)
      for (long i = 0; i < g.ci; ++i)
        for (long ky = 0; ky < g.k; ++ky) {
          auto [oy0, oy1] = tap_range(g.h, g.ho, ky, g.stride, g.pad);
          for (long kx = 0; kx < g.k; ++kx) {
            auto [ox0, ox1] = tap_range(g.w, g.wo, kx, g.stride, g.pad);
            const long widx = ((o * g.ci + i) * g.k + ky) * g.k + kx;
            for (long oy = oy0; oy < oy1; ++oy) {
              const long iy = oy * g.stride + ky - g.pad;
              const long out_row = (o * g.ho + oy) * g.wo;
              const long in_row = (i * g.h + iy) * g.w;
              body(widx, out_row, in_row + kx - g.pad, ox0, ox1);
            }
          }
        }
  };

  Tensor out({co, ho, wo});
  {
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    double* op = out.data().data();
    const long s = geo.stride;
    for_each_tap(geo, [&](long widx, long out_row, long in_base, long ox0, long ox1) {
      const double wv = wp[widx];
      if (wv == 0.0) return;
      double* orow = op + out_row;
      const double* irow = xp + in_base;
      if (s == 1) {
        for (long ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
      } else {
        for (long ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * s];
      }
    });
  }

  return input.tape()->record("conv2d", std::move(out), {input, kernel}, [geo, for_each_tap](const GradContext& c) {
    const double* g = c.out_grad.data().data();
    const double* xp = c.in(0).data().data();
    const double* wp = c.in(1).data().data();
    Tensor* gx = c.grad(0);
    Tensor* gw = c.grad(1);
    double* gxp = gx ? gx->data().data() : nullptr;
    double* gwp = gw ? gw->data().data() : nullptr;
    const long s = geo.stride;
    for_each_tap(geo, [&](long widx, long out_row, long in_base, long ox0, long ox1) {
      const double* grow = g + out_row;
      if (gwp) {
        const double* irow = xp + in_base;
        double acc = 0.0;
        if (s == 1) {
#pragma omp simd reduction(+ : acc)
          for (long ox = ox0; ox < ox1; ++ox) acc += grow[ox] * irow[ox];
        } else {
          for (long ox = ox0; ox < ox1; ++ox) acc += grow[ox] * irow[ox * s];
        }
        gwp[widx] += acc;
      }
      if (gxp) {
        const double wv = wp[widx];
        if (wv == 0.0) return;
        double* girow = gxp + in_base;
        if (s == 1) {
          for (long ox = ox0; ox < ox1; ++ox) girow[ox] += wv * grow[ox];
        } else {
          for (long ox = ox0; ox < ox1; ++ox) girow[ox * s] += wv * grow[ox];
        }
      }
    });
  });
}

Var add_channel_bias(Var x, Var bias) {
  same_tape(x, bias, "add_channel_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank(xv, 3, "add_channel_bias");
  if (bv.size() != xv.dim(0)) {
    throw ShapeMismatch("add_channel_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  const std::size_t ch = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor out = xv;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bv[c];
  return x.tape()->record("add_channel_bias", std::move(out), {x, bias}, [ch, plane](const GradContext& c) {
    if (Tensor* g = c.grad(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
    }
    if (Tensor* g = c.grad(1)) {
      for (std::size_t k = 0; k < ch; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += c.out_grad[k * plane + i];
        (*g)[k] += acc;
      }
    }
  });
}

Var avg_pool2(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "avg_pool2");
  const std::size_t ch = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (h % 2 || w % 2) throw ShapeMismatch("avg_pool2: spatial size must be even, got " + shape_str(xv.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({ch, ho, wo});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t z = 0; z < wo; ++z) {
        const double* r0 = xv.data().data() + (c * h + 2 * y) * w + 2 * z;
        const double* r1 = r0 + w;
        out[(c * ho + y) * wo + z] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  return x.tape()->record("avg_pool2", std::move(out), {x}, [ch, h, w, ho, wo](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t z = 0; z < wo; ++z) {
          const double v = 0.25 * c.out_grad[(k * ho + y) * wo + z];
          double* r0 = &(*g)[(k * h + 2 * y) * w + 2 * z];
          double* r1 = r0 + w;
          r0[0] += v;
          r0[1] += v;
          r1[0] += v;
          r1[1] += v;
        }
  });
}

Var upsample2(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 3, "upsample2");
  const std::size_t ch = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t ho = 2 * h, wo = 2 * w;
  Tensor out({ch, ho, wo});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t z = 0; z < wo; ++z) out[(c * ho + y) * wo + z] = xv[(c * h + y / 2) * w + z / 2];
  return x.tape()->record("upsample2", std::move(out), {x}, [ch, h, w, ho, wo](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t z = 0; z < wo; ++z) (*g)[(k * h + y / 2) * w + z / 2] += c.out_grad[(k * ho + y) * wo + z];
  });
}

Var concat(Var a, Var b) {
  same_tape(a, b, "concat");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() == 0 || av.rank() != bv.rank() ||
      !std::equal(av.shape().begin() + 1, av.shape().end(), bv.shape().begin() + 1)) {
    throw ShapeMismatch("concat: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Shape shape = av.shape();
  shape[0] += bv.dim(0);
  std::vector<double> data;
  data.reserve(av.size() + bv.size());
  data.insert(data.end(), av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t split = av.size();
  return a.tape()->record("concat", Tensor(std::move(shape), std::move(data)), {a, b},
                          [split](const GradContext& c) {
                            if (Tensor* g = c.grad(0)) {
                              for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
                            }
                            if (Tensor* g = c.grad(1)) {
                              for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[split + i];
                            }
                          });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var elu(Var x) {
  return unary("elu", x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
               [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) throw ShapeMismatch("softmax: axis out of range for " + shape_str(xv.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t len = xv.dim(axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t a = 1; a < len; ++a) mx = std::max(mx, xv[base + a * inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < len; ++a) {
        const double e = std::exp(xv[base + a * inner] - mx);
        out[base + a * inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < len; ++a) out[base + a * inner] /= z;
    }
  return x.tape()->record("softmax", std::move(out), {x}, [outer, inner, len](const GradContext& c) {
    Tensor* g = c.grad(0);
    const Tensor& y = c.out_value;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t a = 0; a < len; ++a) dot += c.out_grad[base + a * inner] * y[base + a * inner];
        for (std::size_t a = 0; a < len; ++a) {
          const std::size_t i = base + a * inner;
          (*g)[i] += y[i] * (c.out_grad[i] - dot);
        }
      }
  });
}

Var l2_norm(Var x) {
  double ss = 0.0;
  for (double v : x.value().data()) ss += v * v;
  return x.tape()->record("l2_norm", Tensor::scalar(std::sqrt(ss)), {x}, [](const GradContext& c) {
    const double n = c.out_value[0];
    if (n == 0.0) return;
    const double f = c.out_grad[0] / n;
    Tensor* g = c.grad(0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += f * c.in(0)[i];
  });
}

Var row_norms(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "row_norms");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
    out[i] = std::sqrt(ss);
  }
  return x.tape()->record("row_norms", std::move(out), {x}, [n, d](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      const double nrm = c.out_value[i];
      if (nrm == 0.0) continue;
      const double f = c.out_grad[i] / nrm;
      for (std::size_t j = 0; j < d; ++j) (*g)[i * d + j] += f * c.in(0)[i * d + j];
    }
  });
}

Var normalize_rows(Var x, double min_norm) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "normalize_rows");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  std::vector<double> norms(n);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
    norms[i] = std::sqrt(ss);
    if (norms[i] < min_norm) {
      throw ZeroNormVector("normalize_rows: row " + std::to_string(i) + " has norm " + std::to_string(norms[i]));
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] / norms[i];
  }
  return x.tape()->record("normalize_rows", std::move(out), {x}, [n, d, norms](const GradContext& c) {
    // d(x/|x|) = (g - u (u.g)) / |x|
    Tensor* g = c.grad(0);
    const Tensor& u = c.out_value;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += u[i * d + j] * c.out_grad[i * d + j];
      for (std::size_t j = 0; j < d; ++j) {
        (*g)[i * d + j] += (c.out_grad[i * d + j] - u[i * d + j] * dot) / norms[i];
      }
    }
  });
}

Var center_rows(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "center_rows");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += xv[i * d + j];
    m /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] - m;
  }
  return x.tape()->record("center_rows", std::move(out), {x}, [n, d](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += c.out_grad[i * d + j];
      m /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) (*g)[i * d + j] += c.out_grad[i * d + j] - m;
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> idx) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "gather_rows");
  const std::size_t m = xv.dim(0), d = xv.dim(1);
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw ShapeMismatch("gather_rows: index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(xv.data().data() + idx[r] * d, d, &out[r * d]);
  }
  return x.tape()->record("gather_rows", std::move(out), {x}, [idx = std::move(idx), d](const GradContext& c) {
    Tensor* g = c.grad(0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) (*g)[idx[r] * d + j] += c.out_grad[r * d + j];
  });
}

}  // namespace apn::ops
