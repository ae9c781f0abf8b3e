#include "cardseg/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <limits>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace cardseg {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  return fmt::format("({})", fmt::join(shape, ","));
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (int d : shape)
    if (d < 0) throw ShapeError(fmt::format("negative dimension in {}", shape_str(shape)));
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(cardseg::numel(impl_->shape)), 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (cardseg::numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError(fmt::format("data length {} does not match shape {}",
                                 data.size(), shape_str(shape)));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
  return data()[0];
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError(fmt::format("backward requires a scalar loss, got shape {}",
                                 shape_str(loss.shape())));
  auto target = loss.impl();
  bool found = false;
  for (const auto& node : nodes_)
    if (node.out == target) { found = true; break; }
  if (!found) throw std::runtime_error("backward: loss was not produced on this tape");

  target->ensure_grad();
  target->grad[0] = 1.0;
  backward_visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++backward_visits_;
    if (!it->out->grad.empty()) it->backward();
  }
}

namespace {

struct ConvDims {
  int B, Cin, H, W, Cout, kh, kw, Ho, Wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride, int padding) {
  if (input.shape().size() != 4 || weight.shape().size() != 4)
    throw ShapeError("conv2d expects 4-d input and weight");
  ConvDims d;
  d.B = input.dim(0); d.Cin = input.dim(1); d.H = input.dim(2); d.W = input.dim(3);
  d.Cout = weight.dim(0); d.kh = weight.dim(2); d.kw = weight.dim(3);
  if (weight.dim(1) != d.Cin)
    throw ShapeError(fmt::format("conv2d channel mismatch: input Cin={} vs weight Cin={}",
                                 d.Cin, weight.dim(1)));
  if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
  if (d.kh > d.H + 2 * padding || d.kw > d.W + 2 * padding)
    throw ShapeError(fmt::format("conv2d kernel {}x{} exceeds padded input {}x{}",
                                 d.kh, d.kw, d.H + 2 * padding, d.W + 2 * padding));
  d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
  return d;
}

// col is [Cin*kh*kw, Ho*Wo] for one batch item.
void im2col(const double* x, int Cin, int H, int W, int kh, int kw, int stride,
            int padding, int Ho, int Wo, double* col) {
  const int P = Ho * Wo;
  for (int c = 0; c < Cin; ++c) {
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        double* row = col + ((static_cast<int64_t>(c) * kh + di) * kw + dj) * P;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride + di - padding;
          if (ii < 0 || ii >= H) {
            std::fill(row + oi * Wo, row + (oi + 1) * Wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<int64_t>(c) * H + ii) * W;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride + dj - padding;
            row[oi * Wo + oj] = (jj >= 0 && jj < W) ? src[jj] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col back into the image.
void col2im(const double* col, int Cin, int H, int W, int kh, int kw, int stride,
            int padding, int Ho, int Wo, double* x) {
  const int P = Ho * Wo;
  for (int c = 0; c < Cin; ++c) {
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        const double* row = col + ((static_cast<int64_t>(c) * kh + di) * kw + dj) * P;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride + di - padding;
          if (ii < 0 || ii >= H) continue;
          double* dst = x + (static_cast<int64_t>(c) * H + ii) * W;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride + dj - padding;
            if (jj >= 0 && jj < W) dst[jj] += row[oi * Wo + oj];
          }
        }
      }
    }
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight,
              const Tensor& bias, int stride, int padding) {
  const ConvDims d = conv_dims(input, weight, stride, padding);
  if (bias.numel() != d.Cout)
    throw ShapeError(fmt::format("conv2d bias length {} != Cout {}", bias.numel(), d.Cout));

  const int K = d.Cin * d.kh * d.kw;
  const int P = d.Ho * d.Wo;
  Tensor out(Shape{d.B, d.Cout, d.Ho, d.Wo},
             input.requires_grad() || weight.requires_grad() || bias.requires_grad());

  std::vector<double> col(static_cast<size_t>(K) * P);
  for (int b = 0; b < d.B; ++b) {
    im2col(input.data().data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W,
           d.Cin, d.H, d.W, d.kh, d.kw, stride, padding, d.Ho, d.Wo, col.data());
    double* ob = out.data().data() + static_cast<int64_t>(b) * d.Cout * P;
    gemm(false, false, d.Cout, P, K, 1.0, weight.data().data(), K, col.data(), P,
         0.0, ob, P);
    for (int co = 0; co < d.Cout; ++co) {
      const double bv = bias.data()[static_cast<size_t>(co)];
      double* oc = ob + static_cast<int64_t>(co) * P;
      for (int p = 0; p < P; ++p) oc[p] += bv;
    }
  }

  if (tape) {
    auto xi = input.impl(); auto wi = weight.impl(); auto bi = bias.impl();
    auto oi = out.impl();
    tape->record(out, [xi, wi, bi, oi, d, stride, padding, K, P] {
      xi->ensure_grad(); wi->ensure_grad(); bi->ensure_grad();
      std::vector<double> col(static_cast<size_t>(K) * P);
      std::vector<double> dcol(static_cast<size_t>(K) * P);
      for (int b = 0; b < d.B; ++b) {
        const double* go = oi->grad.data() + static_cast<int64_t>(b) * d.Cout * P;
        // dW += dOut · col^T
        im2col(xi->data.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W,
               d.Cin, d.H, d.W, d.kh, d.kw, stride, padding, d.Ho, d.Wo, col.data());
        gemm(false, true, d.Cout, K, P, 1.0, go, P, col.data(), P, 1.0,
             wi->grad.data(), K);
        // dX += col2im(W^T · dOut)
        gemm(true, false, K, P, d.Cout, 1.0, wi->data.data(), K, go, P, 0.0,
             dcol.data(), P);
        col2im(dcol.data(), d.Cin, d.H, d.W, d.kh, d.kw, stride, padding, d.Ho,
               d.Wo, xi->grad.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W);
        for (int co = 0; co < d.Cout; ++co) {
          double s = 0.0;
          const double* gc = go + static_cast<int64_t>(co) * P;
          for (int p = 0; p < P; ++p) s += gc[p];
          bi->grad[static_cast<size_t>(co)] += s;
        }
      }
    });
  }
  return out;
}

Tensor transposed_conv2d(Tape* tape, const Tensor& input, const Tensor& weight,
                         int stride) {
  if (input.shape().size() != 4 || weight.shape().size() != 4)
    throw ShapeError("transposed_conv2d expects 4-d input and weight");
  const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != Cin)
    throw ShapeError(fmt::format("transposed_conv2d channel mismatch: input Cin={} vs weight Cin={}",
                                 Cin, weight.dim(0)));
  if (stride < 1) throw ShapeError("transposed_conv2d stride must be >= 1");
  const int Ho = (H - 1) * stride + kh;
  const int Wo = (W - 1) * stride + kw;
  const int K = Cout * kh * kw;
  const int P = H * W;

  Tensor out(Shape{B, Cout, Ho, Wo}, input.requires_grad() || weight.requires_grad());
  std::vector<double> col(static_cast<size_t>(K) * P);
  for (int b = 0; b < B; ++b) {
    // col = reshape(W, [Cin,K])^T · x_b, then scatter to the output grid.
    gemm(true, false, K, P, Cin, 1.0, weight.data().data(), K,
         input.data().data() + static_cast<int64_t>(b) * Cin * P, P, 0.0,
         col.data(), P);
    col2im(col.data(), Cout, Ho, Wo, kh, kw, stride, 0, H, W,
           out.data().data() + static_cast<int64_t>(b) * Cout * Ho * Wo);
  }

  if (tape) {
    auto xi = input.impl(); auto wi = weight.impl(); auto oi = out.impl();
    tape->record(out, [xi, wi, oi, B, Cin, Cout, H, W, Ho, Wo, kh, kw, stride, K, P] {
      xi->ensure_grad(); wi->ensure_grad();
      std::vector<double> colg(static_cast<size_t>(K) * P);
      for (int b = 0; b < B; ++b) {
        im2col(oi->grad.data() + static_cast<int64_t>(b) * Cout * Ho * Wo, Cout,
               Ho, Wo, kh, kw, stride, 0, H, W, colg.data());
        // dX += W2 · colg ; dW2 += x_b · colg^T
        gemm(false, false, Cin, P, K, 1.0, wi->data.data(), K, colg.data(), P,
             1.0, xi->grad.data() + static_cast<int64_t>(b) * Cin * P, P);
        gemm(false, true, Cin, K, P, 1.0,
             xi->data.data() + static_cast<int64_t>(b) * Cin * P, P, colg.data(),
             P, 1.0, wi->grad.data(), K);
      }
    });
  }
  return out;
}

Tensor maxpool2d(Tape* tape, const Tensor& input) {
  if (input.shape().size() != 4) throw ShapeError("maxpool2d expects 4-d input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError(fmt::format("maxpool2d requires even spatial dims, got {}x{}", H, W));
  const int Ho = H / 2, Wo = W / 2;
  Tensor out(Shape{B, C, Ho, Wo}, input.requires_grad());
  auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());

  const double* x = input.data().data();
  double* o = out.data().data();
  int64_t oidx = 0;
  for (int bc = 0; bc < B * C; ++bc) {
    const double* plane = x + static_cast<int64_t>(bc) * H * W;
    for (int oi = 0; oi < Ho; ++oi) {
      for (int oj = 0; oj < Wo; ++oj, ++oidx) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t best_at = 0;
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            const int64_t at = static_cast<int64_t>(oi * 2 + di) * W + oj * 2 + dj;
            if (plane[at] > best) { best = plane[at]; best_at = at; }
          }
        }
        o[oidx] = best;
        (*argmax)[static_cast<size_t>(oidx)] = static_cast<int64_t>(bc) * H * W + best_at;
      }
    }
  }

  if (tape) {
    auto xi = input.impl(); auto oi_ = out.impl();
    tape->record(out, [xi, oi_, argmax] {
      xi->ensure_grad();
      for (size_t i = 0; i < oi_->grad.size(); ++i)
        xi->grad[static_cast<size_t>((*argmax)[i])] += oi_->grad[i];
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& input) {
  Tensor out(input.shape(), input.requires_grad());
  const auto& x = input.data();
  auto& o = out.data();
  for (size_t i = 0; i < x.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (tape) {
    auto xi = input.impl(); auto oi = out.impl();
    tape->record(out, [xi, oi] {
      xi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (xi->data[i] > 0.0) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor nearest_upsample2x(Tape* tape, const Tensor& input) {
  if (input.shape().size() != 4) throw ShapeError("nearest_upsample2x expects 4-d input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Tensor out(Shape{B, C, H * 2, W * 2}, input.requires_grad());
  const double* x = input.data().data();
  double* o = out.data().data();
  for (int bc = 0; bc < B * C; ++bc) {
    const double* src = x + static_cast<int64_t>(bc) * H * W;
    double* dst = o + static_cast<int64_t>(bc) * H * W * 4;
    for (int i = 0; i < H * 2; ++i)
      for (int j = 0; j < W * 2; ++j)
        dst[static_cast<int64_t>(i) * W * 2 + j] = src[static_cast<int64_t>(i / 2) * W + j / 2];
  }
  if (tape) {
    auto xi = input.impl(); auto oi = out.impl();
    tape->record(out, [xi, oi, B, C, H, W] {
      xi->ensure_grad();
      for (int bc = 0; bc < B * C; ++bc) {
        const double* g = oi->grad.data() + static_cast<int64_t>(bc) * H * W * 4;
        double* dx = xi->grad.data() + static_cast<int64_t>(bc) * H * W;
        for (int i = 0; i < H * 2; ++i)
          for (int j = 0; j < W * 2; ++j)
            dx[static_cast<int64_t>(i / 2) * W + j / 2] += g[static_cast<int64_t>(i) * W * 2 + j];
      }
    });
  }
  return out;
}

Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 4 || b.shape().size() != 4)
    throw ShapeError("concat_channels expects 4-d inputs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError(fmt::format("concat_channels mismatch: {} vs {}",
                                 shape_str(a.shape()), shape_str(b.shape())));
  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor out(Shape{B, Ca + Cb, H, W}, a.requires_grad() || b.requires_grad());
  for (int bi = 0; bi < B; ++bi) {
    std::copy_n(a.data().data() + bi * Ca * plane, Ca * plane,
                out.data().data() + static_cast<int64_t>(bi) * (Ca + Cb) * plane);
    std::copy_n(b.data().data() + bi * Cb * plane, Cb * plane,
                out.data().data() + (static_cast<int64_t>(bi) * (Ca + Cb) + Ca) * plane);
  }
  if (tape) {
    auto ai = a.impl(); auto bi_ = b.impl(); auto oi = out.impl();
    tape->record(out, [ai, bi_, oi, B, Ca, Cb, plane] {
      ai->ensure_grad(); bi_->ensure_grad();
      for (int bi = 0; bi < B; ++bi) {
        const double* g = oi->grad.data() + static_cast<int64_t>(bi) * (Ca + Cb) * plane;
        double* ga = ai->grad.data() + bi * Ca * plane;
        double* gb = bi_->grad.data() + bi * Cb * plane;
        for (int64_t i = 0; i < Ca * plane; ++i) ga[i] += g[i];
        for (int64_t i = 0; i < Cb * plane; ++i) gb[i] += g[Ca * plane + i];
      }
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(fmt::format("add shape mismatch: {} vs {}",
                                 shape_str(a.shape()), shape_str(b.shape())));
  Tensor out(a.shape(), a.requires_grad() || b.requires_grad());
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  if (tape) {
    auto ai = a.impl(); auto bi = b.impl(); auto oi = out.impl();
    tape->record(out, [ai, bi, oi] {
      ai->ensure_grad(); bi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ai->grad[i] += oi->grad[i];
        bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(fmt::format("mul shape mismatch: {} vs {}",
                                 shape_str(a.shape()), shape_str(b.shape())));
  Tensor out(a.shape(), a.requires_grad() || b.requires_grad());
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (tape) {
    auto ai = a.impl(); auto bi = b.impl(); auto oi = out.impl();
    tape->record(out, [ai, bi, oi] {
      ai->ensure_grad(); bi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ai->grad[i] += oi->grad[i] * bi->data[i];
        bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor softmax_channels(Tape* tape, const Tensor& logits) {
  if (logits.shape().size() != 4) throw ShapeError("softmax_channels expects 4-d input");
  const int B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (C < 2) throw ShapeError("softmax_channels requires C >= 2");
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor out(logits.shape(), logits.requires_grad());
  const double* x = logits.data().data();
  double* o = out.data().data();
  for (int b = 0; b < B; ++b) {
    const double* xb = x + static_cast<int64_t>(b) * C * plane;
    double* ob = o + static_cast<int64_t>(b) * C * plane;
    for (int64_t p = 0; p < plane; ++p) {
      double mx = xb[p];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xb[c * plane + p]);
      double z = 0.0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(xb[c * plane + p] - mx);
        ob[c * plane + p] = e;
        z += e;
      }
      for (int c = 0; c < C; ++c) ob[c * plane + p] /= z;
    }
  }
  if (tape) {
    auto xi = logits.impl(); auto oi = out.impl();
    tape->record(out, [xi, oi, B, C, plane] {
      xi->ensure_grad();
      for (int b = 0; b < B; ++b) {
        const double* p = oi->data.data() + static_cast<int64_t>(b) * C * plane;
        const double* g = oi->grad.data() + static_cast<int64_t>(b) * C * plane;
        double* dx = xi->grad.data() + static_cast<int64_t>(b) * C * plane;
        for (int64_t px = 0; px < plane; ++px) {
          double dot = 0.0;
          for (int c = 0; c < C; ++c) dot += g[c * plane + px] * p[c * plane + px];
          for (int c = 0; c < C; ++c)
            dx[c * plane + px] += p[c * plane + px] * (g[c * plane + px] - dot);
        }
      }
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, const Tensor& input) {
  double s = 0.0;
  for (double v : input.data()) s += v;
  Tensor out = Tensor::scalar(s, input.requires_grad());
  if (tape) {
    auto xi = input.impl(); auto oi = out.impl();
    tape->record(out, [xi, oi] {
      xi->ensure_grad();
      for (double& g : xi->grad) g += oi->grad[0];
    });
  }
  return out;
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)) {
  adam_m.assign(value.data().size(), 0.0);
  adam_v.assign(value.data().size(), 0.0);
}

void adam_step(std::vector<Parameter*>& params, double lr, double beta1,
               double beta2, double eps) {
  for (Parameter* p : params) {
    if (!p->value.has_grad())
      throw std::runtime_error(fmt::format("adam_step: parameter '{}' has no gradient", p->name));
  }
  for (Parameter* p : params) {
    p->step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->step_count));
    auto& w = p->value.data();
    const auto& g = p->value.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      p->adam_m[i] = beta1 * p->adam_m[i] + (1.0 - beta1) * g[i];
      p->adam_v[i] = beta2 * p->adam_v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = p->adam_m[i] / bc1;
      const double vhat = p->adam_v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p->value.zero_grad();
  }
}

}  // namespace cardseg
