#pragma once

// Brute-force reference implementations. Each one is written from the
// defining formula with plain loops and long double accumulators, sharing no
// code with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "apn/tensor.hpp"

namespace oracle {

using apn::Tensor;
using ld = long double;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      ld acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += static_cast<ld>(a.at(i, t)) * b.at(t, j);
      out.at(i, j) = static_cast<double>(acc);
    }
  return out;
}

// Direct six-loop convolution with zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = k.dim(0), ks = k.dim(2);
  const std::size_t ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
  Tensor out({co, ho, wo});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        ld acc = 0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t di = 0; di < ks; ++di)
            for (std::size_t dj = 0; dj < ks; ++dj) {
              const long r = static_cast<long>(i * stride + di) - static_cast<long>(pad);
              const long s = static_cast<long>(j * stride + dj) - static_cast<long>(pad);
              if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) continue;
              acc += static_cast<ld>(x.at(c, r, s)) * k[((o * ci + c) * ks + di) * ks + dj];
            }
        out.at(o, i, j) = static_cast<double>(acc);
      }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
  ld mx = *std::max_element(v.begin(), v.end());
  ld z = 0;
  for (double x : v) z += std::exp(static_cast<ld>(x) - mx);
  std::vector<double> out;
  for (double x : v) out.push_back(static_cast<double>(std::exp(static_cast<ld>(x) - mx) / z));
  return out;
}

// Row-wise softmax of an [r x n] matrix.
inline Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t r = x.dim(0), n = x.dim(1);
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<double> row(x.values().begin() + i * n, x.values().begin() + (i + 1) * n);
    auto s = softmax(row);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = s[j];
  }
  return out;
}

// ---- APU ----

// heads [M x c], enc [c x N] -> maps [M x N]
inline Tensor attention(const Tensor& enc_cn, const Tensor& heads) { return softmax_rows(matmul(heads, enc_cn)); }

// maps [M x N], enc [N x c] -> prototypes [M x c]
inline Tensor ensemble(const Tensor& enc_nc, const Tensor& maps) {
  const std::size_t m = maps.dim(0), n = maps.dim(1), c = enc_nc.dim(1);
  Tensor p({m, c});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      ld acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += static_cast<ld>(maps.at(i, t)) * enc_nc.at(t, ch);
      p.at(i, ch) = static_cast<double>(acc);
    }
  return p;
}

inline ld norm(const Tensor& x, std::size_t row) {
  ld s = 0;
  for (std::size_t k = 0; k < x.dim(1); ++k) s += static_cast<ld>(x.at(row, k)) * x.at(row, k);
  return std::sqrt(s);
}

struct Retrieval {
  Tensor normalcy;  // [N x c]
  Tensor scores;    // [N x M]
};

inline Retrieval retrieve(const Tensor& x, const Tensor& p, double sharpness) {
  const std::size_t n = x.dim(0), m = p.dim(0), c = x.dim(1);
  Retrieval r{Tensor({n, c}), Tensor({n, m})};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits;
    for (std::size_t j = 0; j < m; ++j) {
      ld dot = 0;
      for (std::size_t k = 0; k < c; ++k) dot += static_cast<ld>(x.at(i, k)) * p.at(j, k);
      logits.push_back(static_cast<double>(sharpness * dot / (norm(x, i) * norm(p, j))));
    }
    auto beta = softmax(logits);
    for (std::size_t j = 0; j < m; ++j) r.scores.at(i, j) = beta[j];
    for (std::size_t k = 0; k < c; ++k) {
      ld acc = 0;
      for (std::size_t j = 0; j < m; ++j) acc += static_cast<ld>(beta[j]) * p.at(j, k);
      r.normalcy.at(i, k) = static_cast<double>(acc);
    }
  }
  return r;
}

// Textbook population covariance between rows over columns.
inline Tensor covariance(const Tensor& p) {
  const std::size_t m = p.dim(0), c = p.dim(1);
  std::vector<ld> mean(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < c; ++k) mean[i] += p.at(i, k);
    mean[i] /= c;
  }
  Tensor out({m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      ld acc = 0;
      for (std::size_t k = 0; k < c; ++k) acc += (p.at(i, k) - mean[i]) * (p.at(j, k) - mean[j]);
      out.at(i, j) = static_cast<double>(acc / c);
    }
  return out;
}

// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
inline double min_eigenvalue(Tensor a) {
  const std::size_t n = a.dim(0);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a.at(p, q)) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2 * a.at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double cs = 1 / std::sqrt(t * t + 1), sn = t * cs;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = cs * akp - sn * akq;
          a.at(k, q) = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = cs * apk - sn * aqk;
          a.at(q, k) = sn * apk + cs * aqk;
        }
      }
  }
  double mn = a.at(0, 0);
  for (std::size_t i = 1; i < n; ++i) mn = std::min(mn, a.at(i, i));
  return mn;
}

// ---- CAU ----

// Positions attended from (i, j): the whole column, then the row without (i, j).
inline std::vector<std::pair<std::size_t, std::size_t>> criss_cross_keys(std::size_t i, std::size_t j, std::size_t h,
                                                                          std::size_t w) {
  std::vector<std::pair<std::size_t, std::size_t>> keys;
  for (std::size_t r = 0; r < h; ++r) keys.emplace_back(r, j);
  for (std::size_t c = 0; c < w; ++c)
    if (c != j) keys.emplace_back(i, c);
  return keys;
}

// 1x1 projection weight [co x ci] over feat [ci x h x w].
inline Tensor project(const Tensor& feat, const Tensor& wt) {
  const std::size_t ci = feat.dim(0), h = feat.dim(1), w = feat.dim(2), co = wt.dim(0);
  Tensor out({co, h, w});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t u = 0; u < h * w; ++u) {
      ld acc = 0;
      for (std::size_t c = 0; c < ci; ++c) acc += static_cast<ld>(wt.at(o, c)) * feat[c * h * w + u];
      out[o * h * w + u] = static_cast<double>(acc);
    }
  return out;
}

// q, k [c' x h x w] -> [(h + w - 1) x h x w]
inline Tensor cc_affinity(const Tensor& q, const Tensor& k) {
  const std::size_t cq = q.dim(0), h = q.dim(1), w = q.dim(2), l = h + w - 1;
  Tensor a({l, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::vector<double> logits;
      for (auto [r, c] : criss_cross_keys(i, j, h, w)) {
        ld dot = 0;
        for (std::size_t ch = 0; ch < cq; ++ch) dot += static_cast<ld>(q.at(ch, i, j)) * k.at(ch, r, c);
        logits.push_back(static_cast<double>(dot));
      }
      auto s = softmax(logits);
      for (std::size_t t = 0; t < l; ++t) a.at(t, i, j) = s[t];
    }
  return a;
}

inline Tensor cc_aggregate(const Tensor& a, const Tensor& v, const Tensor& residual) {
  const std::size_t c = v.dim(0), h = v.dim(1), w = v.dim(2);
  Tensor out({c, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto keys = criss_cross_keys(i, j, h, w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        ld acc = residual.at(ch, i, j);
        for (std::size_t t = 0; t < keys.size(); ++t)
          acc += static_cast<ld>(a.at(t, i, j)) * v.at(ch, keys[t].first, keys[t].second);
        out.at(ch, i, j) = static_cast<double>(acc);
      }
    }
  return out;
}

struct CauWeights {
  Tensor query, key, value, fuse_weight, fuse_bias;
};

inline Tensor criss_cross(const Tensor& feat, const CauWeights& w) {
  return cc_aggregate(cc_affinity(project(feat, w.query), project(feat, w.key)), project(feat, w.value), feat);
}

inline Tensor rca(const Tensor& feat, const CauWeights& w, std::size_t loops) {
  Tensor x = feat;
  for (std::size_t r = 0; r < loops; ++r) x = criss_cross(x, w);
  const std::size_t c = feat.dim(0), hw = feat.dim(1) * feat.dim(2);
  Tensor out(feat.shape());
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t u = 0; u < hw; ++u) {
      ld acc = w.fuse_bias[o];
      for (std::size_t ch = 0; ch < c; ++ch) {
        acc += static_cast<ld>(w.fuse_weight.at(o, ch)) * x[ch * hw + u];
        acc += static_cast<ld>(w.fuse_weight.at(o, c + ch)) * feat[ch * hw + u];
      }
      out[o * hw + u] = static_cast<double>(acc);
    }
  return out;
}

// Every position attends to every position.
inline Tensor dense_attention(const Tensor& feat, const CauWeights& w) {
  const Tensor q = project(feat, w.query), k = project(feat, w.key), v = project(feat, w.value);
  const std::size_t c = feat.dim(0), cq = q.dim(0), n = feat.dim(1) * feat.dim(2);
  Tensor out(feat.shape());
  for (std::size_t u = 0; u < n; ++u) {
    std::vector<double> logits;
    for (std::size_t t = 0; t < n; ++t) {
      ld dot = 0;
      for (std::size_t ch = 0; ch < cq; ++ch) dot += static_cast<ld>(q[ch * n + u]) * k[ch * n + t];
      logits.push_back(static_cast<double>(dot));
    }
    auto s = softmax(logits);
    for (std::size_t ch = 0; ch < c; ++ch) {
      ld acc = feat[ch * n + u];
      for (std::size_t t = 0; t < n; ++t) acc += static_cast<ld>(s[t]) * v[ch * n + t];
      out[ch * n + u] = static_cast<double>(acc);
    }
  }
  return out;
}

// ---- losses ----

inline double frame_l2(const Tensor& a, const Tensor& b) {
  ld s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<ld>(a[i] - b[i]) * (a[i] - b[i]);
  return static_cast<double>(std::sqrt(s));
}

inline ld row_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  ld s = 0;
  for (std::size_t k = 0; k < a.dim(1); ++k) s += static_cast<ld>(a.at(i, k) - b.at(j, k)) * (a.at(i, k) - b.at(j, k));
  return std::sqrt(s);
}

// Mean distance to the prototype with the largest score, first index on ties.
inline double compact(const Tensor& x, const Tensor& p, const Tensor& scores) {
  const std::size_t n = x.dim(0), m = p.dim(0);
  ld total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (scores.at(i, j) > scores.at(i, best)) best = j;
    total += row_distance(x, i, p, best);
  }
  return static_cast<double>(total / n);
}

inline double diversity(const Tensor& p, double gamma, bool squared = false) {
  const std::size_t m = p.dim(0);
  ld total = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const ld gap = std::max<ld>(0, gamma - row_distance(p, i, p, j));
      total += squared ? gap * gap : gap;
    }
  return static_cast<double>(2 * total / (m * (m - 1)));
}

inline double covariance_abs(const Tensor& cov) {
  const std::size_t m = cov.dim(0);
  ld total = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) total += std::abs(static_cast<ld>(cov.at(i, j)));
  return static_cast<double>(2 * total / (m * (m - 1)));
}

// ---- scoring ----

// (concordant + ties / 2) / (pos * neg)
inline double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
  ld good = 0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      if (s[i] > s[j]) good += 1;
      else if (s[i] == s[j]) good += 0.5L;
    }
  return static_cast<double>(good / (static_cast<ld>(pos) * neg));
}

}  // namespace oracle
