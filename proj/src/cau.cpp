#include "apn/cau.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <vector>

#include "apn/errors.hpp"
#include "apn/ops.hpp"
#include "apn/rng.hpp"

namespace apn::cau {
namespace {

// Visits the criss-cross key pattern as runs of contiguous query columns.
// For slot a and query row i, the queries j in [j0, j1) read key index
// base + step * j (step 1 along the column, step 0 along the row).
template <class Body>
void for_each_run(std::size_t h, std::size_t w, Body&& body) {
  for (std::size_t a = 0; a < h; ++a)
    for (std::size_t i = 0; i < h; ++i) body(a, i, std::size_t{0}, w, a * w, std::size_t{1});
  for (std::size_t a = h; a + 1 < h + w; ++a) {
    // Row slot a covers column c0 for queries right of it and c0 + 1 (skipping
    // the query itself) for queries at or left of it.
    const std::size_t c0 = a - h;
    for (std::size_t i = 0; i < h; ++i) {
      body(a, i, std::size_t{0}, c0 + 1, i * w + c0 + 1, std::size_t{0});
      body(a, i, c0 + 1, w, i * w + c0, std::size_t{0});
    }
  }
}

void require_map(const Shape& s, const char* op) {
  if (s.size() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0) {
    throw ShapeMismatch(std::string(op) + ": expected non-empty [c x h x w], got " + shape_str(s));
  }
}

}  // namespace

std::size_t reduced_channels(std::size_t channels, std::size_t factor) {
  return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, factor));
}

GridPos criss_cross_key(std::size_t row, std::size_t col, std::size_t slot, std::size_t height,
                        std::size_t /*width*/) {
  if (slot < height) return {slot, col};
  std::size_t c = slot - height;
  if (c >= col) ++c;
  return {row, c};
}

Var project(Var feat, Var weight) {
  require_map(feat.shape(), "cau project");
  const Shape& s = feat.shape();
  if (weight.shape().size() != 2 || weight.dim(1) != s[0]) {
    throw ShapeMismatch("cau project: weight " + shape_str(weight.shape()) + " vs feature " + shape_str(s));
  }
  Var flat = ops::reshape(feat, {s[0], s[1] * s[2]});
  return ops::reshape(ops::matmul(weight, flat), {weight.dim(0), s[1], s[2]});
}

Var cc_affinity(Var query, Var key, OpCounter* counter, const Options& opts) {
  require_map(query.shape(), "cc_affinity");
  if (query.shape() != key.shape()) {
    throw ShapeMismatch("cc_affinity: query " + shape_str(query.shape()) + " vs key " + shape_str(key.shape()));
  }
  const std::size_t ch = query.dim(0), h = query.dim(1), w = query.dim(2);
  const std::size_t n = h * w, len = h + w - 1;
  const double inv_t = 1.0 / opts.temperature;
  const double* q = query.value().data().data();
  const double* k = key.value().data().data();

  Tensor out({len, h, w});
  double* lp = out.data().data();
  for_each_run(h, w, [&](std::size_t a, std::size_t i, std::size_t j0, std::size_t j1, std::size_t base,
                         std::size_t step) {
    double* lrow = lp + a * n + i * w;
    for (std::size_t c = 0; c < ch; ++c) {
      const double* qrow = q + c * n + i * w;
      const double* kp = k + c * n + base;
      if (step) {
        for (std::size_t j = j0; j < j1; ++j) lrow[j] += qrow[j] * kp[j];
      } else {
        const double kv = *kp;
        for (std::size_t j = j0; j < j1; ++j) lrow[j] += qrow[j] * kv;
      }
    }
  });
  // Softmax over the slot axis for every query position.
  std::vector<double> mx(n, -INFINITY), z(n, 0.0);
  for (std::size_t a = 0; a < len; ++a)
    for (std::size_t u = 0; u < n; ++u) {
      lp[a * n + u] *= inv_t;
      mx[u] = std::max(mx[u], lp[a * n + u]);
    }
  for (std::size_t a = 0; a < len; ++a)
    for (std::size_t u = 0; u < n; ++u) {
      lp[a * n + u] = std::exp(lp[a * n + u] - mx[u]);
      z[u] += lp[a * n + u];
    }
  for (std::size_t a = 0; a < len; ++a)
    for (std::size_t u = 0; u < n; ++u) lp[a * n + u] /= z[u];
  if (counter) counter->add(static_cast<std::uint64_t>(n) * len);

  return query.tape()->record(
      "cc_affinity", std::move(out), {query, key}, [ch, h, w, n, len, inv_t](const GradContext& c) {
        const double* av = c.out_value.data().data();
        const double* g = c.out_grad.data().data();
        const double* q = c.in(0).data().data();
        const double* k = c.in(1).data().data();
        double* gq = c.grad(0) ? c.grad(0)->data().data() : nullptr;
        double* gk = c.grad(1) ? c.grad(1)->data().data() : nullptr;
        std::vector<double> dot(n, 0.0), gl(len * n);
        for (std::size_t a = 0; a < len; ++a)
          for (std::size_t u = 0; u < n; ++u) dot[u] += g[a * n + u] * av[a * n + u];
        for (std::size_t a = 0; a < len; ++a)
          for (std::size_t u = 0; u < n; ++u) gl[a * n + u] = av[a * n + u] * (g[a * n + u] - dot[u]) * inv_t;
        for_each_run(h, w, [&](std::size_t a, std::size_t i, std::size_t j0, std::size_t j1, std::size_t base,
                               std::size_t step) {
          const double* grow = gl.data() + a * n + i * w;
          for (std::size_t ci = 0; ci < ch; ++ci) {
            const double* qrow = q + ci * n + i * w;
            const std::size_t koff = ci * n + base;
            if (step) {
              if (gq)
                for (std::size_t j = j0; j < j1; ++j) gq[ci * n + i * w + j] += grow[j] * k[koff + j];
              if (gk)
                for (std::size_t j = j0; j < j1; ++j) gk[koff + j] += grow[j] * qrow[j];
            } else {
              if (gq) {
                const double kv = k[koff];
                for (std::size_t j = j0; j < j1; ++j) gq[ci * n + i * w + j] += grow[j] * kv;
              }
              if (gk) {
                double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                for (std::size_t j = j0; j < j1; ++j) acc += grow[j] * qrow[j];
                gk[koff] += acc;
              }
            }
          }
        });
      });
}

Var cc_aggregate(Var affinity, Var value, Var residual) {
  require_map(value.shape(), "cc_aggregate");
  const std::size_t ch = value.dim(0), h = value.dim(1), w = value.dim(2);
  const std::size_t n = h * w, len = h + w - 1;
  if (affinity.shape() != Shape{len, h, w} || residual.shape() != value.shape()) {
    throw ShapeMismatch("cc_aggregate: affinity " + shape_str(affinity.shape()) + ", value " +
                        shape_str(value.shape()) + ", residual " + shape_str(residual.shape()));
  }
  const double* av = affinity.value().data().data();
  const double* v = value.value().data().data();
  Tensor out = residual.value();
  double* op = out.data().data();
  for_each_run(h, w, [&](std::size_t a, std::size_t i, std::size_t j0, std::size_t j1, std::size_t base,
                         std::size_t step) {
    const double* arow = av + a * n + i * w;
    for (std::size_t c = 0; c < ch; ++c) {
      double* orow = op + c * n + i * w;
      const double* vp = v + c * n + base;
      if (step) {
        for (std::size_t j = j0; j < j1; ++j) orow[j] += arow[j] * vp[j];
      } else {
        const double vv = *vp;
        for (std::size_t j = j0; j < j1; ++j) orow[j] += arow[j] * vv;
      }
    }
  });
  return value.tape()->record(
      "cc_aggregate", std::move(out), {affinity, value, residual}, [ch, h, w, n](const GradContext& c) {
        const double* av = c.in(0).data().data();
        const double* v = c.in(1).data().data();
        const double* g = c.out_grad.data().data();
        double* ga = c.grad(0) ? c.grad(0)->data().data() : nullptr;
        double* gv = c.grad(1) ? c.grad(1)->data().data() : nullptr;
        if (Tensor* gr = c.grad(2)) {
          for (std::size_t i = 0; i < gr->size(); ++i) (*gr)[i] += g[i];
        }
        for_each_run(h, w, [&](std::size_t a, std::size_t i, std::size_t j0, std::size_t j1, std::size_t base,
                               std::size_t step) {
          const double* arow = av + a * n + i * w;
          double* garow = ga ? ga + a * n + i * w : nullptr;
          for (std::size_t ci = 0; ci < ch; ++ci) {
            const double* grow = g + ci * n + i * w;
            const std::size_t voff = ci * n + base;
            if (step) {
              if (garow)
                for (std::size_t j = j0; j < j1; ++j) garow[j] += grow[j] * v[voff + j];
              if (gv)
                for (std::size_t j = j0; j < j1; ++j) gv[voff + j] += arow[j] * grow[j];
            } else {
              if (garow) {
                const double vv = v[voff];
                for (std::size_t j = j0; j < j1; ++j) garow[j] += grow[j] * vv;
              }
              if (gv) {
                double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                for (std::size_t j = j0; j < j1; ++j) acc += arow[j] * grow[j];
                gv[voff] += acc;
              }
            }
          }
        });
      });
}

Var criss_cross(Var feat, const Weights& w, OpCounter* counter, const Options& opts) {
  Var q = project(feat, w.query);
  Var k = project(feat, w.key);
  Var v = project(feat, w.value);
  return cc_aggregate(cc_affinity(q, k, counter, opts), v, feat);
}

Var rca_context(Var feat, const Weights& w, std::size_t loops, OpCounter* counter, const Options& opts) {
  if (loops == 0) throw InvalidConfig("rca: loop count must be >= 1");
  Var h = feat;
  for (std::size_t r = 0; r < loops; ++r) h = criss_cross(h, w, counter, opts);
  return h;
}

Var rca_forward(Var feat, const Weights& w, std::size_t loops, OpCounter* counter, const Options& opts) {
  Var context = rca_context(feat, w, loops, counter, opts);
  Var fused = project(ops::concat(context, feat), w.fuse_weight);
  return ops::add_channel_bias(fused, w.fuse_bias);
}

Var dense_attention_forward(Var feat, const Weights& w, OpCounter* counter, const Options& opts) {
  require_map(feat.shape(), "dense_attention");
  const Shape s = feat.shape();
  const std::size_t n = s[1] * s[2];
  Var q = ops::reshape(project(feat, w.query), {w.query.dim(0), n});
  Var k = ops::reshape(project(feat, w.key), {w.key.dim(0), n});
  Var v = ops::reshape(project(feat, w.value), {s[0], n});
  // logits[u, t] = q_u . k_t
  Var logits = ops::scale(ops::matmul(ops::transpose(q), k), 1.0 / opts.temperature);
  if (counter) counter->add(static_cast<std::uint64_t>(n) * n);
  Var attn = ops::softmax(logits, 1);
  Var context = ops::matmul(v, ops::transpose(attn));
  return ops::add(ops::reshape(context, s), feat);
}

ComplexityReport complexity_report(std::size_t height, std::size_t width, std::size_t loops, std::size_t channels,
                                   std::uint64_t seed) {
  if (height == 0 || width == 0) throw ShapeMismatch("complexity_report: empty grid");
  Rng rng(substream(seed, "bench"));
  const std::size_t reduced = reduced_channels(channels);
  Tape tape;
  Var feat = tape.constant(uniform_tensor({channels, height, width}, rng, -1.0, 1.0));
  const double kq = 1.0 / std::sqrt(static_cast<double>(channels));
  Weights w{tape.constant(uniform_tensor({reduced, channels}, rng, -kq, kq)),
            tape.constant(uniform_tensor({reduced, channels}, rng, -kq, kq)),
            tape.constant(uniform_tensor({channels, channels}, rng, -kq, kq)),
            tape.constant(uniform_tensor({channels, 2 * channels}, rng, -kq, kq)),
            tape.constant(Tensor({channels}))};

  ComplexityReport rep;
  rep.height = height;
  rep.width = width;
  rep.loops = loops;
  const std::uint64_t n = static_cast<std::uint64_t>(height) * width;
  rep.cc_predicted = static_cast<std::uint64_t>(loops) * n * (height + width - 1);
  rep.dense_predicted = n * n;

  using clock = std::chrono::steady_clock;
  OpCounter cc;
  auto t0 = clock::now();
  (void)rca_context(feat, w, loops, &cc);
  auto t1 = clock::now();
  OpCounter dense;
  (void)dense_attention_forward(feat, w, &dense);
  auto t2 = clock::now();
  rep.cc_ops = cc.affinity_ops();
  rep.dense_ops = dense.affinity_ops();
  rep.ratio = static_cast<double>(rep.cc_ops) / static_cast<double>(rep.dense_ops);
  rep.cc_seconds = std::chrono::duration<double>(t1 - t0).count();
  rep.dense_seconds = std::chrono::duration<double>(t2 - t1).count();
  return rep;
}

}  // namespace apn::cau
