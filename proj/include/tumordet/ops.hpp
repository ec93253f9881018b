#pragma once

#include "tumordet/autograd.hpp"
#include "tumordet/box.hpp"

#include <span>
#include <vector>

namespace tumordet {

// Layer operations on tape variables. Every op checks shapes, computes its
// value eagerly and records a backward closure when an input needs a gradient.

// Cross-correlation of x[C,H,W] with kernel[K,C,kh,kw]; kh, kw odd.
Var conv2d(const Var& x, const Var& kernel, Index stride, Index padding);
// Adds bias[C] to every position of channel c of x[C,...].
Var add_bias(const Var& x, const Var& bias);
// Subgradient at 0 is 0.
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var sigmoid(const Var& x);
Var reshape(const Var& x, Shape shape);
Var concat_channels(std::span<const Var> xs);
Var concat_channels(std::initializer_list<Var> xs);
// Nearest-neighbour 2x upsampling of [C,H,W] to [C,2H,2W].
Var upsample2x(const Var& x);
// Row-wise softmax of a rank-2 tensor, stabilized by row-max subtraction.
Var softmax_rows(const Var& logits);
// op(a) * op(b) for rank-2 tensors, op = transpose when the flag is set.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
// Fully connected layer on rows: x[R,F] * weight[O,F]^T + bias[O] -> [R,O].
Var linear(const Var& x, const Var& weight, const Var& bias);
// Flattens each input and stacks them as rows of an [n, size] matrix.
Var stack_rows(std::span<const Var> xs);
Var gather(const Var& x, std::span<const Index> indices);
Var sum(const Var& x);

// Max pooling of `roi` (image coordinates) over features[C,H,W] whose cells
// are `1/spatial_scale` image pixels wide. Each of the out x out bins takes
// the max over the map cells its fractional extent touches, clamped to the
// map; bins entirely outside the map yield 0.
Var roi_pool(const Var& features, const Box& roi, double spatial_scale, Index out);

// Summed binary cross-entropy of logits against labels in {0,1}.
Var bce_with_logits(const Var& logits, std::span<const double> labels);
// Summed smooth-L1 (beta = 1) of pred - target.
Var smooth_l1(const Var& pred, std::span<const double> target);

double smooth_l1_value(double residual);

}  // namespace tumordet
