#include "incdet/nn.hpp"

#include <algorithm>
#include <cmath>

namespace incdet::nn {

void conv3x3_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int ic = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const int oc = w.dim(0);
    if (w.dim(1) != ic || w.dim(2) != 3 || w.dim(3) != 3) throw ShapeError("conv3x3 weight shape");
    out = Tensor({oc, h, wd});
    for (int o = 0; o < oc; ++o) {
        double* orow = out.data() + static_cast<int64_t>(o) * h * wd;
        double bias = b[o];
        for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) orow[i] = bias;
        for (int c = 0; c < ic; ++c) {
            const double* irow = in.data() + static_cast<int64_t>(c) * h * wd;
            const double* wk = w.data() + ((static_cast<int64_t>(o) * ic + c) * 9);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wk[ky * 3 + kx];
                    if (wv == 0.0) continue;
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* op = orow + static_cast<int64_t>(y) * wd + x0;
                        const double* ip = irow + static_cast<int64_t>(y + dy) * wd + x0 + dx;
                        for (int x = x0; x < x1; ++x) *op++ += wv * *ip++;
                    }
                }
            }
        }
    }
}

void conv3x3_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor* grad_in,
                      Tensor& grad_w, Tensor& grad_b) {
    const int ic = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const int oc = w.dim(0);
    if (grad_w.shape() != w.shape()) grad_w = Tensor(w.shape());
    if (grad_b.size() != oc) grad_b = Tensor({oc});
    if (grad_in && grad_in->shape() != in.shape()) *grad_in = Tensor(in.shape());

    for (int o = 0; o < oc; ++o) {
        const double* grow = grad_out.data() + static_cast<int64_t>(o) * h * wd;
        double gb = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) gb += grow[i];
        grad_b[o] += gb;
        for (int c = 0; c < ic; ++c) {
            const double* irow = in.data() + static_cast<int64_t>(c) * h * wd;
            double* gwk = grad_w.data() + ((static_cast<int64_t>(o) * ic + c) * 9);
            const double* wk = w.data() + ((static_cast<int64_t>(o) * ic + c) * 9);
            double* girow = grad_in ? grad_in->data() + static_cast<int64_t>(c) * h * wd : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    double gw = 0.0;
                    const double wv = wk[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        const double* gp = grow + static_cast<int64_t>(y) * wd + x0;
                        const double* ip = irow + static_cast<int64_t>(y + dy) * wd + x0 + dx;
                        double* gip = girow ? girow + static_cast<int64_t>(y + dy) * wd + x0 + dx
                                            : nullptr;
                        if (gip) {
                            for (int x = x0; x < x1; ++x) {
                                gw += gp[x - x0] * ip[x - x0];
                                gip[x - x0] += wv * gp[x - x0];
                            }
                        } else {
                            for (int x = x0; x < x1; ++x) gw += gp[x - x0] * ip[x - x0];
                        }
                    }
                    gwk[ky * 3 + kx] += gw;
                }
            }
        }
    }
}

void conv1x1_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int ic = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const int oc = w.dim(0);
    if (w.dim(1) != ic) throw ShapeError("conv1x1 weight shape");
    out = Tensor({oc, h, wd});
    const int64_t hw = static_cast<int64_t>(h) * wd;
    for (int o = 0; o < oc; ++o) {
        double* orow = out.data() + o * hw;
        for (int64_t i = 0; i < hw; ++i) orow[i] = b[o];
        for (int c = 0; c < ic; ++c) {
            const double wv = w.at2(o, c);
            const double* irow = in.data() + c * hw;
            for (int64_t i = 0; i < hw; ++i) orow[i] += wv * irow[i];
        }
    }
}

void conv1x1_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor* grad_in,
                      Tensor& grad_w, Tensor& grad_b) {
    const int ic = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const int oc = w.dim(0);
    const int64_t hw = static_cast<int64_t>(h) * wd;
    if (grad_w.shape() != w.shape()) grad_w = Tensor(w.shape());
    if (grad_b.size() != oc) grad_b = Tensor({oc});
    if (grad_in && grad_in->shape() != in.shape()) *grad_in = Tensor(in.shape());
    for (int o = 0; o < oc; ++o) {
        const double* grow = grad_out.data() + o * hw;
        double gb = 0.0;
        for (int64_t i = 0; i < hw; ++i) gb += grow[i];
        grad_b[o] += gb;
        for (int c = 0; c < ic; ++c) {
            const double* irow = in.data() + c * hw;
            double gw = 0.0;
            for (int64_t i = 0; i < hw; ++i) gw += grow[i] * irow[i];
            grad_w.at2(o, c) += gw;
            if (grad_in) {
                double* girow = grad_in->data() + c * hw;
                const double wv = w.at2(o, c);
                for (int64_t i = 0; i < hw; ++i) girow[i] += wv * grow[i];
            }
        }
    }
}

void relu_forward(Tensor& t) {
    double* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i)
        if (p[i] < 0.0) p[i] = 0.0;
}

void relu_backward(const Tensor& activated, Tensor& grad) {
    const double* a = activated.data();
    double* g = grad.data();
    for (int64_t i = 0; i < grad.size(); ++i)
        if (a[i] <= 0.0) g[i] = 0.0;
}

void maxpool2x2_forward(const Tensor& in, Tensor& out, std::vector<int64_t>& argmax) {
    const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
    const int oh = h / 2, ow = w / 2;
    out = Tensor({c, oh, ow});
    argmax.assign(static_cast<size_t>(out.size()), 0);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                // seed with the first window element so the recorded index is
                // always in bounds even when the window is entirely NaN
                int64_t best_idx = (static_cast<int64_t>(ch) * h + 2 * y) * w + 2 * x;
                double best = in[best_idx];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int64_t idx = (static_cast<int64_t>(ch) * h + (2 * y + dy)) * w + 2 * x + dx;
                        if (in[idx] > best) {
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                int64_t oidx = (static_cast<int64_t>(ch) * oh + y) * ow + x;
                out[oidx] = best;
                argmax[static_cast<size_t>(oidx)] = best_idx;
            }
        }
    }
}

void maxpool2x2_backward(const Tensor& grad_out, const std::vector<int64_t>& argmax,
                         Tensor& grad_in) {
    for (int64_t i = 0; i < grad_out.size(); ++i)
        grad_in[argmax[static_cast<size_t>(i)]] += grad_out[i];
}

void linear_forward(const double* x, const Tensor& w, const Tensor& b, double* y) {
    const int out_n = w.dim(0), in_n = w.dim(1);
    for (int o = 0; o < out_n; ++o) {
        const double* wr = w.data() + static_cast<int64_t>(o) * in_n;
        double acc = b[o];
        for (int i = 0; i < in_n; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

void linear_backward(const double* x, const Tensor& w, const double* grad_y, double* grad_x,
                     Tensor& grad_w, Tensor& grad_b) {
    const int out_n = w.dim(0), in_n = w.dim(1);
    for (int o = 0; o < out_n; ++o) {
        const double g = grad_y[o];
        grad_b[o] += g;
        double* gwr = grad_w.data() + static_cast<int64_t>(o) * in_n;
        const double* wr = w.data() + static_cast<int64_t>(o) * in_n;
        if (grad_x) {
            for (int i = 0; i < in_n; ++i) {
                gwr[i] += g * x[i];
                grad_x[i] += g * wr[i];
            }
        } else {
            for (int i = 0; i < in_n; ++i) gwr[i] += g * x[i];
        }
    }
}

void softmax(const double* logits, int n, double* probs) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for (int i = 0; i < n; ++i) probs[i] /= sum;
}

}  // namespace incdet::nn
