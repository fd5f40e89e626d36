#pragma once

#include <cstddef>
#include <cstdint>

#include "apn/tape.hpp"

// Criss-cross attention: each position attends to the h + w - 1 positions of
// its own row and column. Applied recurrently with shared weights it reaches
// the whole grid in two loops.
namespace apn::cau {

// 1x1 convolution kernels stored as matrices [c_out x c_in].
struct Weights {
  Var query;        // [c' x c]
  Var key;          // [c' x c]
  Var value;        // [c x c]
  Var fuse_weight;  // [c x 2c]
  Var fuse_bias;    // [c]
};

struct Options {
  // Affinity logits are divided by this; 1 means raw dot products.
  double temperature = 1.0;
};

// Counts query-key dot products; never decreases within a forward pass.
class OpCounter {
 public:
  void add(std::uint64_t n) noexcept { affinity_ops_ += n; }
  std::uint64_t affinity_ops() const noexcept { return affinity_ops_; }
  void reset() noexcept { affinity_ops_ = 0; }

 private:
  std::uint64_t affinity_ops_ = 0;
};

// Query/key width for c channels: max(1, c / factor).
std::size_t reduced_channels(std::size_t channels, std::size_t factor = 8);

struct GridPos {
  std::size_t row;
  std::size_t col;
};

// Key slot a in [0, h + w - 1) of position (row, col): slots [0, h) walk the
// column top to bottom (including the position itself); the remaining w - 1
// walk the row left to right, skipping the position.
GridPos criss_cross_key(std::size_t row, std::size_t col, std::size_t slot, std::size_t height,
                        std::size_t width);

// weight [c_out x c_in] applied to every position of feat [c_in x h x w].
Var project(Var feat, Var weight);

// q, k [c' x h x w] -> affinity [(h + w - 1) x h x w], softmax over the first axis.
Var cc_affinity(Var query, Var key, OpCounter* counter = nullptr, const Options& opts = {});

// out[:, u] = sum_a affinity[a, u] * value[:, key_a(u)] + residual[:, u]
Var cc_aggregate(Var affinity, Var value, Var residual);

// One criss-cross loop on feat [c x h x w].
Var criss_cross(Var feat, const Weights& w, OpCounter* counter = nullptr, const Options& opts = {});

// `loops` criss-cross passes sharing the same weights, before fusion.
Var rca_context(Var feat, const Weights& w, std::size_t loops, OpCounter* counter = nullptr,
                const Options& opts = {});

// rca_context followed by concat(context, feat) and a 1x1 fusion conv back to c channels.
Var rca_forward(Var feat, const Weights& w, std::size_t loops, OpCounter* counter = nullptr,
                const Options& opts = {});

// Full non-local attention with the same query/key/value weights and residual.
Var dense_attention_forward(Var feat, const Weights& w, OpCounter* counter = nullptr, const Options& opts = {});

struct ComplexityReport {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t loops = 0;
  std::uint64_t cc_ops = 0;
  std::uint64_t dense_ops = 0;
  std::uint64_t cc_predicted = 0;
  std::uint64_t dense_predicted = 0;
  double ratio = 0.0;
  double cc_seconds = 0.0;
  double dense_seconds = 0.0;

  bool counts_match() const noexcept { return cc_ops == cc_predicted && dense_ops == dense_predicted; }
};

// Runs both attention forms on a seeded random map and reports live counter
// values against loops*h*w*(h+w-1) and (h*w)^2.
ComplexityReport complexity_report(std::size_t height, std::size_t width, std::size_t loops,
                                   std::size_t channels = 8, std::uint64_t seed = 0);

}  // namespace apn::cau
