#pragma once

#include <span>

#include "tafnet/autograd.hpp"

namespace tafnet {
namespace ops {

// All ops: pass a Tape* to make the result differentiable; pass nullptr
// for forward-only evaluation. Gradients flow to every tracked input.
// Forward outputs are freshly allocated; inputs are never mutated.

// weight (c_out, c_in, k, k) with k odd; bias (1, c_out, 1, 1).
// Output spatial dims: floor((H + 2*pad - k) / stride) + 1.
Var conv2d(Tape* tape, const Var& x, const Var& weight, const Var& bias,
           int stride, int pad);

// Fixed 2x2 window, stride 2; requires even H and W. Backward routes the
// gradient to the argmax of each window; ties go to the first position in
// row-major scan order.
Var maxpool2d(Tape* tape, const Var& x);

// Bin boundaries follow the floor rule: bin i covers rows
// [floor(i*H/out_h), floor((i+1)*H/out_h)), same for columns.
Var adaptive_avgpool2d(Tape* tape, const Var& x, int out_h, int out_w);

// align-corners=false: source coord = (dst + 0.5) * (in/out) - 0.5,
// clamped to the border. Requires out dims >= input dims.
Var bilinear_upsample(Tape* tape, const Var& x, int out_h, int out_w);

Var relu(Tape* tape, const Var& x);  // subgradient 0 at x == 0
Var sigmoid(Tape* tape, const Var& x);

Var add(Tape* tape, const Var& a, const Var& b);
Var sub(Tape* tape, const Var& a, const Var& b);
Var mul(Tape* tape, const Var& a, const Var& b);

// s has shape (n, c, 1, 1) or (1, c, 1, 1); broadcast over h, w (and over
// the batch when s.n == 1).
Var scale_channels(Tape* tape, const Var& x, const Var& s);

// m has shape (n, 1, h, w); broadcast over channels.
Var scale_pixels(Tape* tape, const Var& x, const Var& m);

// s is a scalar (1,1,1,1).
Var scale_scalar(Tape* tape, const Var& x, const Var& s);

Var concat_channels(Tape* tape, const Var& a, const Var& b);
Var concat_channels(Tape* tape, std::span<const Var> parts);

Var sum_all(Tape* tape, const Var& x);  // -> (1,1,1,1)

Var global_avg(Tape* tape, const Var& x);   // (n,c,h,w) -> (n,c,1,1)
Var global_max(Tape* tape, const Var& x);   // ties: first in scan order
Var channel_mean(Tape* tape, const Var& x); // (n,c,h,w) -> (n,1,h,w)
Var channel_max(Tape* tape, const Var& x);  // ties: first channel

// x (n, d_in, 1, 1), weight (d_out, d_in, 1, 1), bias (1, d_out, 1, 1).
Var linear(Tape* tape, const Var& x, const Var& weight, const Var& bias);

// Differentiable view of batch item i as a (1, c, h, w) tensor.
Var select_item(Tape* tape, const Var& x, int item);

}  // namespace ops
}  // namespace tafnet
