#pragma once

#include <cstddef>
#include <vector>

#include "apn/tape.hpp"

// Differentiable primitives. Every op records onto the tape of its inputs.
namespace apn::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var sum(Var a);
Var mean(Var a);

// [m x k] * [k x n]
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

// input [c_in x h x w], kernel [c_out x c_in x k x k]; k odd, output size must
// divide exactly.
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t pad);
// x [c x h x w] + bias[c] broadcast over space.
Var add_channel_bias(Var x, Var bias);
// 2x2 mean pooling with stride 2; h and w must be even.
Var avg_pool2(Var x);
// Nearest-neighbour 2x upsampling of [c x h x w].
Var upsample2(Var x);
// Concatenation along axis 0; trailing dimensions must agree.
Var concat(Var a, Var b);

Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var elu(Var x);
Var tanh(Var x);
Var abs(Var x);

Var softmax(Var x, std::size_t axis);

// sqrt(sum x^2); the gradient at the zero vector is taken as zero.
Var l2_norm(Var x);
// [n x c] -> [n] Euclidean norms of rows, zero gradient at zero rows.
Var row_norms(Var x);
// Rows scaled to unit length; throws ZeroNormVector below `min_norm`.
Var normalize_rows(Var x, double min_norm);
// x [n x c] minus each row's mean.
Var center_rows(Var x);
// Rows of x [m x c] picked by index -> [idx.size() x c].
Var gather_rows(Var x, std::vector<std::size_t> idx);

}  // namespace apn::ops
