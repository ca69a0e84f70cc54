#pragma once

#include <vector>

#include "incdet/tensor.hpp"

namespace incdet::nn {

// 3x3 convolution, stride 1, pad 1. in [IC,H,W], w [OC,IC,3,3], b [OC],
// out [OC,H,W].
void conv3x3_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out);
// grad_in may be null when the input needs no gradient (graph leaf).
void conv3x3_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor* grad_in,
                      Tensor& grad_w, Tensor& grad_b);

// 1x1 convolution. w [OC,IC], b [OC].
void conv1x1_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out);
void conv1x1_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor* grad_in,
                      Tensor& grad_w, Tensor& grad_b);

// In-place ReLU; backward masks grad by the forward output.
void relu_forward(Tensor& t);
void relu_backward(const Tensor& activated, Tensor& grad);

// 2x2 max pooling, stride 2. argmax keeps the flat input index per output
// cell for the backward routing.
void maxpool2x2_forward(const Tensor& in, Tensor& out, std::vector<int64_t>& argmax);
void maxpool2x2_backward(const Tensor& grad_out, const std::vector<int64_t>& argmax,
                         Tensor& grad_in);

// y = W x + b for a single vector. w [OUT,IN].
void linear_forward(const double* x, const Tensor& w, const Tensor& b, double* y);
// accumulates into grad_w/grad_b; grad_x may be null.
void linear_backward(const double* x, const Tensor& w, const double* grad_y, double* grad_x,
                     Tensor& grad_w, Tensor& grad_b);

// log-sum-exp stabilized softmax
void softmax(const double* logits, int n, double* probs);

}  // namespace incdet::nn
