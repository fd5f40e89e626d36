#pragma once

#include <filesystem>
#include <vector>

#include "apn/tape.hpp"

// Attention prototype unit: M attention heads pool the encoding into M
// prototypes, every encoding vector retrieves a normalcy vector from the pool,
// and the result is summed back onto the encoding.
namespace apn::apu {

struct Options {
  // Multiplies cosine similarities before the softmax over prototypes.
  double sharpness = 1.0;
  // Encoding vectors or prototypes shorter than this raise ZeroNormVector.
  double min_norm = 1e-12;
};

// [c x h x w] -> [c x N] with N = h*w.
Var flatten(Var encoding);

// heads [M x c], encoding [c x N] -> row-stochastic normalcy maps [M x N].
// The spatial softmax is the normalizing denominator of the ensemble.
Var attention(Var encoding_cn, Var heads);

// maps [M x N], encoding [N x c] -> prototypes [M x c].
Var ensemble(Var encoding_nc, Var maps);

struct Retrieval {
  Var normalcy;  // [N x c]
  Var scores;    // [N x M], rows sum to one
};

// scores[n, m] = softmax_m(sharpness * cos(x_n, p_m)); normalcy[n] = sum_m scores[n,m] p_m.
Retrieval retrieve(Var encoding_nc, Var prototypes, const Options& opts = {});

// prototypes [M x c] -> [M x M] covariance between prototypes over channels.
Var distinguish(Var prototypes);

// encoding [c x h x w] + normalcy [N x c], channel-wise sum.
Var aggregate(Var encoding, Var normalcy_nc);

struct Result {
  Var out;          // [c x h x w]
  Var encoding_nc;  // [N x c]
  Var maps;         // [M x N]
  Var prototypes;   // [M x c]
  Var scores;       // [N x M]
  Var normalcy;     // [N x c]
  Var covariance;   // [M x M]; invalid when M < 2 or c < 2
  std::size_t height = 0;
  std::size_t width = 0;
};

Result forward(Var encoding, Var heads, const Options& opts = {});

// Each map reshaped to h x w, followed by the sum over maps (M + 1 images).
std::vector<Tensor> normalcy_images(const Tensor& maps, std::size_t height, std::size_t width);

// 8-bit binary PGM after min-max scaling; constant images become black.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace apn::apu
