// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/rng.hpp"
#include "duodet/tensor.hpp"

// Small layer zoo with explicit forward/backward passes. Activations are
// kept as (rows = n*h*w, cols = channels) matrices so that every dense and
// convolutional layer reduces to one matrix product per call.
namespace duodet {

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void init_shape(std::vector<int> dims) {
    value = Tensor<T>(dims);
    grad = Tensor<T>(std::move(dims));
  }
};

template <class T>
using ParamRefs = std::vector<Param<T>*>;

/// Affine layer. Weight is stored (in_features, out_features) so that the
/// forward pass is y = x * W + b on row-major batches.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features) : in_(in_features), out_(out_features) {
    w_.init_shape({in_, out_});
    b_.init_shape({out_});
  }

  /// He initialization unless an explicit stddev is given.
  void init(Rng& rng, double stddev = -1.0) {
    const double s = stddev > 0 ? stddev : std::sqrt(2.0 / in_);
    for (std::int64_t i = 0; i < w_.value.size(); ++i)
      w_.value[i] = static_cast<T>(rng.gaussian() * s);
    b_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    check_contract(x.dims().back() == in_, "linear: input feature size mismatch");
    const auto n = x.size() / in_;
    x_ = x;
    Tensor<T> y({static_cast<int>(n), out_});
    y.mat().noalias() = x.mat(n, in_) * w_.value.mat();
    y.mat().rowwise() += b_.value.mat(1, out_).row(0);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const auto n = dy.size() / out_;
    check_contract(n * in_ == x_.size(), "linear: backward called before forward");
    w_.grad.mat().noalias() += x_.mat(n, in_).transpose() * dy.mat(n, out_);
    b_.grad.mat(1, out_).noalias() += dy.mat(n, out_).colwise().sum();
    Tensor<T> dx(x_.dims());
    dx.mat(n, in_).noalias() = dy.mat(n, out_) * w_.value.mat().transpose();
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    w_.name = prefix + ".w";
    b_.name = prefix + ".b";
    out.push_back(&w_);
    out.push_back(&b_);
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  std::int64_t parameter_count() const { return w_.value.size() + b_.value.size(); }
  const Tensor<T>& weight() const { return w_.value; }
  Tensor<T>& weight() { return w_.value; }
  Tensor<T>& bias() { return b_.value; }
  const Tensor<T>& weight_grad() const { return w_.grad; }
  const Tensor<T>& bias_grad() const { return b_.grad; }

 private:
  int in_ = 0, out_ = 0;
  Param<T> w_, b_;
  Tensor<T> x_;
};

/// 2-D convolution on Fmap batches. Weight rows are laid out as
/// ((ky*k + kx) * in_c + ci) so an im2col gather matches directly.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int kernel, int stride = 1, int pad = -1)
      : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride),
        pad_(pad >= 0 ? pad : kernel / 2) {
    w_.init_shape({k_ * k_ * in_c_, out_c_});
    b_.init_shape({out_c_});
  }

  void init(Rng& rng, double stddev = -1.0) {
    const double fan_in = static_cast<double>(k_) * k_ * in_c_;
    const double s = stddev > 0 ? stddev : std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < w_.value.size(); ++i)
      w_.value[i] = static_cast<T>(rng.gaussian() * s);
    b_.value.zero();
  }

  Fmap<T> forward(const Fmap<T>& x) {
    check_contract(x.c == in_c_, "conv: input channel mismatch");
    x_shape_ = {x.n, x.h, x.w};
    const int oh = out_extent(x.h);
    const int ow = out_extent(x.w);
    Fmap<T> y(x.n, oh, ow, out_c_);
    if (k_ == 1 && stride_ == 1) {
      x_ = x.t;  // 1x1 needs only the input for the weight gradient
      y.mat().noalias() = x.mat() * w_.value.mat();
    } else {
      build_col(x, col_);
      x_ = x.t;
      y.mat().noalias() = col_.mat(y.rows(), k_ * k_ * in_c_) * w_.value.mat();
    }
    y.mat().rowwise() += b_.value.mat(1, out_c_).row(0);
    return y;
  }

  Fmap<T> backward(const Fmap<T>& dy) {
    const int n = x_shape_[0], h = x_shape_[1], w = x_shape_[2];
    Fmap<T> dx(n, h, w, in_c_);
    const auto dym = dy.mat();
    b_.grad.mat(1, out_c_).noalias() += dym.colwise().sum();
    if (k_ == 1 && stride_ == 1) {
      w_.grad.mat().noalias() += x_.mat(dy.rows(), in_c_).transpose() * dym;
      dx.mat().noalias() = dym * w_.value.mat().transpose();
      return dx;
    }
    const std::int64_t cols = static_cast<std::int64_t>(k_) * k_ * in_c_;
    w_.grad.mat().noalias() += col_.mat(dy.rows(), cols).transpose() * dym;
    Tensor<T> dcol({static_cast<int>(dy.rows()), static_cast<int>(cols)});
    dcol.mat().noalias() = dym * w_.value.mat().transpose();
    scatter_col(dcol, dy, dx);
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    w_.name = prefix + ".w";
    b_.name = prefix + ".b";
    out.push_back(&w_);
    out.push_back(&b_);
  }

  std::int64_t parameter_count() const { return w_.value.size() + b_.value.size(); }
  int out_channels() const { return out_c_; }
  Tensor<T>& weight() { return w_.value; }
  Tensor<T>& bias() { return b_.value; }

 private:
  int out_extent(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  void build_col(const Fmap<T>& x, Tensor<T>& col) const {
    const int oh = out_extent(x.h);
    const int ow = out_extent(x.w);
    const std::int64_t rows = static_cast<std::int64_t>(x.n) * oh * ow;
    const std::int64_t cols = static_cast<std::int64_t>(k_) * k_ * in_c_;
    if (col.size() != rows * cols) col = Tensor<T>({static_cast<int>(rows), static_cast<int>(cols)});
    T* dst = col.data();
    for (int s = 0; s < x.n; ++s) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) {
                std::memcpy(dst, x.row(x.row_index(s, iy, ix)), sizeof(T) * in_c_);
              } else {
                std::memset(dst, 0, sizeof(T) * in_c_);
              }
              dst += in_c_;
            }
          }
        }
      }
    }
  }

  void scatter_col(const Tensor<T>& dcol, const Fmap<T>& dy, Fmap<T>& dx) const {
    const T* src = dcol.data();
    for (int s = 0; s < dy.n; ++s) {
      for (int oy = 0; oy < dy.h; ++oy) {
        for (int ox = 0; ox < dy.w; ++ox) {
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (iy >= 0 && iy < dx.h && ix >= 0 && ix < dx.w) {
                T* drow = dx.row(dx.row_index(s, iy, ix));
                for (int ci = 0; ci < in_c_; ++ci) drow[ci] += src[ci];
              }
              src += in_c_;
            }
          }
        }
      }
    }
  }

  int in_c_ = 0, out_c_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param<T> w_, b_;
  Tensor<T> x_;
  Tensor<T> col_;
  std::vector<int> x_shape_{0, 0, 0};
};

enum class NormKind { None, Batch, Group };

inline const char* norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::None: return "none";
    case NormKind::Batch: return "bn";
    case NormKind::Group: return "gn";
  }
  return "?";
}

inline NormKind parse_norm_kind(const std::string& s) {
  if (s == "none") return NormKind::None;
  if (s == "bn") return NormKind::Batch;
  if (s == "gn") return NormKind::Group;
  throw ConfigError("norm: unknown kind '" + s + "' (expected none, bn or gn)");
}

/// Channel normalization over Fmap batches: batch norm (per channel over all
/// rows, with running statistics) or group norm (per sample and channel
/// group). NormKind::None is a pass-through.
template <class T>
class Norm2d {
 public:
  Norm2d() = default;
  Norm2d(NormKind kind, int channels, int groups = 32)
      : kind_(kind), c_(channels), groups_(std::min(groups, channels)) {
    if (kind_ == NormKind::None) return;
    while (c_ % groups_ != 0) --groups_;  // group count must divide channels
    gamma_.init_shape({c_});
    beta_.init_shape({c_});
    gamma_.value.fill(T(1));
    running_mean_ = Tensor<T>({c_});
    running_var_ = Tensor<T>::full({c_}, T(1));
  }

  Fmap<T> forward(const Fmap<T>& x, bool train) {
    if (kind_ == NormKind::None) return x;
    check_contract(x.c == c_, "norm: channel mismatch");
    Fmap<T> y(x.n, x.h, x.w, x.c);
    if (kind_ == NormKind::Batch) {
      forward_batch(x, y, train);
    } else {
      forward_group(x, y);
    }
    trained_forward_ = train || kind_ == NormKind::Group;
    return y;
  }

  Fmap<T> backward(const Fmap<T>& dy) {
    if (kind_ == NormKind::None) return dy;
    check_contract(trained_forward_, "norm: backward requires a train-mode forward");
    return kind_ == NormKind::Batch ? backward_batch(dy) : backward_group(dy);
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    if (kind_ == NormKind::None) return;
    gamma_.name = prefix + ".gamma";
    beta_.name = prefix + ".beta";
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  /// Running statistics are serialized with checkpoints but not trained.
  void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& out,
                     const std::string& prefix) {
    if (kind_ == NormKind::Batch) {
      out.emplace_back(prefix + ".running_mean", &running_mean_);
      out.emplace_back(prefix + ".running_var", &running_var_);
    }
  }

  std::int64_t parameter_count() const { return kind_ == NormKind::None ? 0 : 2 * c_; }
  NormKind kind() const { return kind_; }

 private:
  void forward_batch(const Fmap<T>& x, Fmap<T>& y, bool train) {
    const auto rows = x.rows();
    mean_ = Tensor<T>({c_});
    invstd_ = Tensor<T>({c_});
    auto xm = x.mat();
    if (train) {
      for (int ch = 0; ch < c_; ++ch) {
        const T mu = xm.col(ch).mean();
        const T var = (xm.col(ch).array() - mu).square().sum() / static_cast<T>(rows);
        mean_[ch] = mu;
        invstd_[ch] = T(1) / std::sqrt(var + eps_);
        running_mean_[ch] = (T(1) - momentum_) * running_mean_[ch] + momentum_ * mu;
        running_var_[ch] = (T(1) - momentum_) * running_var_[ch] + momentum_ * var;
      }
    } else {
      for (int ch = 0; ch < c_; ++ch) {
        mean_[ch] = running_mean_[ch];
        invstd_[ch] = T(1) / std::sqrt(running_var_[ch] + eps_);
      }
    }
    xhat_ = Fmap<T>(x.n, x.h, x.w, x.c);
    auto xh = xhat_.mat();
    auto ym = y.mat();
    for (int ch = 0; ch < c_; ++ch) {
      xh.col(ch) = (xm.col(ch).array() - mean_[ch]) * invstd_[ch];
      ym.col(ch) = xh.col(ch).array() * gamma_.value[ch] + beta_.value[ch];
    }
  }

  Fmap<T> backward_batch(const Fmap<T>& dy) {
    const auto rows = dy.rows();
    Fmap<T> dx(dy.n, dy.h, dy.w, dy.c);
    auto dym = dy.mat();
    auto xh = xhat_.mat();
    auto dxm = dx.mat();
    const T n = static_cast<T>(rows);
    for (int ch = 0; ch < c_; ++ch) {
      const T sum_dy = dym.col(ch).sum();
      const T sum_dy_xh = (dym.col(ch).array() * xh.col(ch).array()).sum();
      gamma_.grad[ch] += sum_dy_xh;
      beta_.grad[ch] += sum_dy;
      dxm.col(ch) = (gamma_.value[ch] * invstd_[ch] / n) *
                    (n * dym.col(ch).array() - sum_dy - xh.col(ch).array() * sum_dy_xh);
    }
    return dx;
  }

  void forward_group(const Fmap<T>& x, Fmap<T>& y) {
    const int cg = c_ / groups_;
    const std::int64_t hw = static_cast<std::int64_t>(x.h) * x.w;
    group_mean_ = Tensor<T>({x.n, groups_});
    group_invstd_ = Tensor<T>({x.n, groups_});
    xhat_ = Fmap<T>(x.n, x.h, x.w, x.c);
    for (int s = 0; s < x.n; ++s) {
      for (int g = 0; g < groups_; ++g) {
        double sum = 0, sq = 0;
        for (std::int64_t r = 0; r < hw; ++r) {
          const T* px = x.row(s * hw + r) + g * cg;
          for (int j = 0; j < cg; ++j) {
            sum += px[j];
            sq += static_cast<double>(px[j]) * px[j];
          }
        }
        const double cnt = static_cast<double>(hw * cg);
        const T mu = static_cast<T>(sum / cnt);
        const T var = static_cast<T>(sq / cnt - static_cast<double>(mu) * mu);
        const T inv = T(1) / std::sqrt(std::max(var, T(0)) + eps_);
        group_mean_[s * groups_ + g] = mu;
        group_invstd_[s * groups_ + g] = inv;
        for (std::int64_t r = 0; r < hw; ++r) {
          const T* px = x.row(s * hw + r) + g * cg;
          T* ph = xhat_.row(s * hw + r) + g * cg;
          T* py = y.row(s * hw + r) + g * cg;
          for (int j = 0; j < cg; ++j) {
            ph[j] = (px[j] - mu) * inv;
            py[j] = ph[j] * gamma_.value[g * cg + j] + beta_.value[g * cg + j];
          }
        }
      }
    }
  }

  Fmap<T> backward_group(const Fmap<T>& dy) {
    const int cg = c_ / groups_;
    const std::int64_t hw = static_cast<std::int64_t>(dy.h) * dy.w;
    Fmap<T> dx(dy.n, dy.h, dy.w, dy.c);
    for (int s = 0; s < dy.n; ++s) {
      for (int g = 0; g < groups_; ++g) {
        const T inv = group_invstd_[s * groups_ + g];
        const T n = static_cast<T>(hw * cg);
        // per-group reductions of dxhat and dxhat*xhat
        double sum_dxh = 0, sum_dxh_xh = 0;
        for (std::int64_t r = 0; r < hw; ++r) {
          const T* pdy = dy.row(s * hw + r) + g * cg;
          const T* ph = xhat_.row(s * hw + r) + g * cg;
          for (int j = 0; j < cg; ++j) {
            const T dxh = pdy[j] * gamma_.value[g * cg + j];
            sum_dxh += dxh;
            sum_dxh_xh += static_cast<double>(dxh) * ph[j];
          }
        }
        for (std::int64_t r = 0; r < hw; ++r) {
          const T* pdy = dy.row(s * hw + r) + g * cg;
          const T* ph = xhat_.row(s * hw + r) + g * cg;
          T* pdx = dx.row(s * hw + r) + g * cg;
          for (int j = 0; j < cg; ++j) {
            const T dxh = pdy[j] * gamma_.value[g * cg + j];
            pdx[j] = (inv / n) * (n * dxh - static_cast<T>(sum_dxh) -
                                  ph[j] * static_cast<T>(sum_dxh_xh));
          }
        }
      }
    }
    // parameter grads
    auto dym = dy.mat();
    auto xh = xhat_.mat();
    for (int ch = 0; ch < c_; ++ch) {
      gamma_.grad[ch] += (dym.col(ch).array() * xh.col(ch).array()).sum();
      beta_.grad[ch] += dym.col(ch).sum();
    }
    return dx;
  }

  NormKind kind_ = NormKind::None;
  int c_ = 0, groups_ = 32;
  T eps_ = static_cast<T>(1e-5);
  T momentum_ = static_cast<T>(0.1);
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> mean_, invstd_;          // batch-norm cache
  Tensor<T> group_mean_, group_invstd_;  // group-norm cache
  Fmap<T> xhat_;
  bool trained_forward_ = false;
};

template <class T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    mask_.assign(static_cast<std::size_t>(x.size()), 0);
    Tensor<T> y(x.dims());
    for (std::int64_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) {
        y[i] = x[i];
        mask_[static_cast<std::size_t>(i)] = 1;
      }
    }
    return y;
  }

  Fmap<T> forward(const Fmap<T>& x) {
    Fmap<T> y(x.n, x.h, x.w, x.c);
    y.t = forward(x.t);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    check_contract(static_cast<std::size_t>(dy.size()) == mask_.size(),
                   "relu: backward shape mismatch");
    Tensor<T> dx(dy.dims());
    for (std::int64_t i = 0; i < dy.size(); ++i)
      if (mask_[static_cast<std::size_t>(i)]) dx[i] = dy[i];
    return dx;
  }

  Fmap<T> backward(const Fmap<T>& dy) {
    Fmap<T> dx(dy.n, dy.h, dy.w, dy.c);
    dx.t = backward(dy.t);
    return dx;
  }

 private:
  std::vector<char> mask_;
};

/// Average pooling over the whole spatial grid: (n,h,w,c) -> (n,c).
template <class T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Fmap<T>& x) {
    hw_ = x.h * x.w;
    shape_ = {x.n, x.h, x.w, x.c};
    Tensor<T> y({x.n, x.c});
    auto xm = x.mat();
    auto ym = y.mat();
    for (int s = 0; s < x.n; ++s)
      ym.row(s) = xm.middleRows(static_cast<std::int64_t>(s) * hw_, hw_).colwise().mean();
    return y;
  }

  Fmap<T> backward(const Tensor<T>& dy) {
    Fmap<T> dx(shape_[0], shape_[1], shape_[2], shape_[3]);
    auto dxm = dx.mat();
    auto dym = dy.mat();
    const T scale = T(1) / static_cast<T>(hw_);
    for (int s = 0; s < shape_[0]; ++s)
      dxm.middleRows(static_cast<std::int64_t>(s) * hw_, hw_).rowwise() = dym.row(s) * scale;
    return dx;
  }

 private:
  int hw_ = 0;
  std::vector<int> shape_{0, 0, 0, 0};
};

}  // namespace duodet
