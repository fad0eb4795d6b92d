#include "fdseg/net.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "fdseg/io.hpp"

namespace fdseg {

void ToyNetConfig::validate() const {
  if (stages < 1) throw InvalidArgument("ToyNetConfig: stages must be >= 1");
  if (static_cast<int>(stage_channels.size()) != stages)
    throw InvalidArgument("ToyNetConfig: stage_channels must have one entry per stage");
  for (int c : stage_channels)
    if (c < 1) throw InvalidArgument("ToyNetConfig: channel counts must be positive");
  if (blocks_per_stage < 1) throw InvalidArgument("ToyNetConfig: blocks_per_stage must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw InvalidArgument("ToyNetConfig: kernel_size must be a positive odd integer");
  if (expansion < 1) throw InvalidArgument("ToyNetConfig: expansion must be >= 1");
  const int factor = 1 << (stages - 1);
  if (input_h < 1 || input_w < 1 || input_h % factor != 0 || input_w % factor != 0)
    throw InvalidArgument("ToyNetConfig: input size must be a positive multiple of 2^(stages-1)");
}

namespace names {
std::string block(int stage, int block) {
  return "enc" + std::to_string(stage) + "." + std::to_string(block);
}
std::string down(int stage) { return "down" + std::to_string(stage); }
std::string decoder(int d) { return "dec" + std::to_string(d); }
}  // namespace names

ParamLayout::ParamLayout(const ToyNetConfig& config) {
  config.validate();
  const auto& ch = config.stage_channels;
  const int k2 = config.kernel_size * config.kernel_size;
  add("stem.w", ch[0], 9);
  add("stem.b", ch[0], 1);
  for (int s = 0; s < config.stages; ++s) {
    if (s > 0) {
      add(names::down(s) + ".w", ch[s], ch[s - 1] * 4);
      add(names::down(s) + ".b", ch[s], 1);
    }
    const int c = ch[s], e = c * config.expansion;
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      const std::string p = names::block(s, b);
      add(p + ".dw.w", c, k2);
      add(p + ".dw.b", c, 1);
      add(p + ".ln.gamma", c, 1);
      add(p + ".ln.beta", c, 1);
      add(p + ".pw1.w", e, c);
      add(p + ".pw1.b", e, 1);
      add(p + ".pw2.w", c, e);
      add(p + ".pw2.b", c, 1);
    }
  }
  for (int d = 1; d < config.stages; ++d) {
    const int target = config.stages - 1 - d;
    const int in = ch[target + 1] + ch[target];
    add(names::decoder(d) + ".w", ch[target], in * 9);
    add(names::decoder(d) + ".b", ch[target], 1);
  }
  add("seg_head.w", 1, ch[0]);
  add("seg_head.b", 1, 1);
  add("fd_head.w", 1, ch[0]);
  add("fd_head.b", 1, 1);
}

void ParamLayout::add(const std::string& name, Index rows, Index cols) {
  index_[name] = slots_.size();
  slots_.push_back({name, total_, rows, cols});
  total_ += rows * cols;
}

const ParamSlot& ParamLayout::slot(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("ParamLayout: unknown parameter " + name);
  return slots_[it->second];
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * std::erfc(-x * Scalar(std::numbers::sqrt2 / 2));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * std::erfc(-x * Scalar(std::numbers::sqrt2 / 2));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

namespace {

// k x k convolution as one GEMM per tap. The input is replicate-padded into a
// row-major plane of width pw = w + 2*pad; in that layout tap (dy, dx) of every
// output pixel is a contiguous column range shifted by dy*pw + dx, so results
// come out "wide" (h rows of pw columns, the last 2*pad of each row unused).
template <typename Scalar>
struct ConvScratch {
  Mat<Scalar> padded;       // C_in x (ph*pw + 2*pad)
  Mat<Scalar> grad_padded;  // same shape as padded
  Mat<Scalar> wide;         // C_out x (h*pw)
  Mat<Scalar> tap;          // C_out x C_in
};

// Reused per thread: fresh multi-megabyte buffers cost more in page faults than the GEMMs.
template <typename Scalar>
ConvScratch<Scalar>& conv_scratch() {
  thread_local ConvScratch<Scalar> scratch;
  return scratch;
}

template <typename Scalar>
void pad_planes(const Tensor3<Scalar>& x, int pad, Mat<Scalar>& out) {
  const Index pw = x.w + 2 * pad, ph = x.h + 2 * pad;
  out.resize(x.channels(), ph * pw + 2 * pad);
  for (Index c = 0; c < x.channels(); ++c) {
    const Scalar* src = x.data.row(c).data();
    Scalar* dst = out.row(c).data();
    for (Index py = 0; py < ph; ++py) {
      const Scalar* row = src + clamp_index(py - pad, x.h) * x.w;
      Scalar* d = dst + py * pw;
      std::fill(d, d + pad, row[0]);
      std::copy(row, row + x.w, d + pad);
      std::fill(d + pad + x.w, d + pw, row[x.w - 1]);
    }
    std::fill(dst + ph * pw, dst + ph * pw + 2 * pad, Scalar(0));
  }
}

template <typename Scalar>
void extract_tap(ConstMatRef<Scalar> weight, Index in_channels, int k2, int t, Mat<Scalar>& tap) {
  tap.resize(weight.rows(), in_channels);
  for (Index c = 0; c < in_channels; ++c) tap.col(c) = weight.col(c * k2 + t);
}

template <typename Scalar>
Mat<Scalar> apply_gelu(const Mat<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

// Uses the stored activation to recover Phi(x) = gelu(x) / x, so only the
// density needs evaluating (vectorized exp) instead of a second erfc per entry.
template <typename Scalar>
Mat<Scalar> gelu_backward(const Mat<Scalar>& pre, const Mat<Scalar>& post, const Mat<Scalar>& grad_out) {
  const auto x = pre.array();
  const auto cdf = (x == Scalar(0)).select(Scalar(0.5), post.array() / x);
  const auto pdf = (Scalar(-0.5) * x.square()).exp() * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return (grad_out.array() * (cdf + x * pdf)).matrix();
}

template <typename Scalar>
MatMap<Scalar> grad_slice(Vec<Scalar>& grad, const ParamLayout& layout,
                                   const std::string& name) {
  const auto& s = layout.slot(name);
  return {grad.data() + s.offset, s.rows, s.cols};
}

template <typename Scalar>
Mat<Scalar> affine_rows(const Mat<Scalar>& x, ConstMatRef<Scalar> scale,
                        ConstMatRef<Scalar> shift) {
  Mat<Scalar> y = scale.col(0).asDiagonal() * x;
  y.colwise() += shift.col(0);
  return y;
}

}  // namespace

template <typename Scalar>
Tensor3<Scalar> conv2d(const Tensor3<Scalar>& x, ConstMatRef<Scalar> weight,
                       ConstMatRef<Scalar> bias, int k) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("conv2d: kernel size must be a positive odd integer");
  if (weight.cols() != x.channels() * k * k || bias.rows() != weight.rows())
    throw ShapeMismatch("conv2d: weight shape does not match input channels");
  const int pad = k / 2, k2 = k * k;
  const Index pw = x.w + 2 * pad, span = x.h * pw;
  auto& scratch = conv_scratch<Scalar>();
  pad_planes(x, pad, scratch.padded);
  scratch.wide.setZero(weight.rows(), span);
  for (int t = 0; t < k2; ++t) {
    extract_tap<Scalar>(weight, x.channels(), k2, t, scratch.tap);
    scratch.wide.noalias() += scratch.tap * scratch.padded.middleCols((t / k) * pw + t % k, span);
  }
  Tensor3<Scalar> out(weight.rows(), x.h, x.w);
  for (Index o = 0; o < weight.rows(); ++o)
    for (Index y = 0; y < x.h; ++y)
      out.data.row(o).segment(y * x.w, x.w) = scratch.wide.row(o).segment(y * pw, x.w).array() + bias(o, 0);
  return out;
}

template <typename Scalar>
Tensor3<Scalar> conv2d_backward(const Tensor3<Scalar>& x, const Mat<Scalar>& grad_out,
                                ConstMatRef<Scalar> weight, int k,
                                MatMap<Scalar> grad_weight,
                                MatMap<Scalar> grad_bias) {
  const int pad = k / 2, k2 = k * k;
  const Index pw = x.w + 2 * pad, ph = x.h + 2 * pad, span = x.h * pw;
  auto& scratch = conv_scratch<Scalar>();
  pad_planes(x, pad, scratch.padded);
  grad_bias.col(0) += grad_out.rowwise().sum();

  // grad_out in the wide layout, zero in the unused columns.
  Mat<Scalar>& g = scratch.wide;
  g.setZero(grad_out.rows(), span);
  for (Index o = 0; o < grad_out.rows(); ++o)
    for (Index y = 0; y < x.h; ++y) g.row(o).segment(y * pw, x.w) = grad_out.row(o).segment(y * x.w, x.w);

  scratch.grad_padded.setZero(x.channels(), scratch.padded.cols());
  for (int t = 0; t < k2; ++t) {
    const Index offset = (t / k) * pw + t % k;
    const Mat<Scalar> gw = g * scratch.padded.middleCols(offset, span).transpose();
    for (Index c = 0; c < x.channels(); ++c) grad_weight.col(c * k2 + t) += gw.col(c);
    extract_tap<Scalar>(weight, x.channels(), k2, t, scratch.tap);
    scratch.grad_padded.middleCols(offset, span).noalias() += scratch.tap.transpose() * g;
  }

  // Fold the padded border back onto the edge pixels it replicated.
  Tensor3<Scalar> grad_in(x.channels(), x.h, x.w);
  for (Index c = 0; c < x.channels(); ++c) {
    const Scalar* src = scratch.grad_padded.row(c).data();
    Scalar* dst = grad_in.data.row(c).data();
    for (Index py = 0; py < ph; ++py) {
      const Scalar* s = src + py * pw;
      Scalar* d = dst + clamp_index(py - pad, x.h) * x.w;
      for (Index i = 0; i < x.w; ++i) d[i] += s[pad + i];
      for (int i = 0; i < pad; ++i) {
        d[0] += s[i];
        d[x.w - 1] += s[pad + x.w + i];
      }
    }
  }
  return grad_in;
}

template <typename Scalar>
Tensor3<Scalar> depthwise_conv(const Tensor3<Scalar>& x, ConstMatRef<Scalar> weight,
                               ConstMatRef<Scalar> bias, int k) {
  if (weight.rows() != x.channels() || weight.cols() != k * k || bias.rows() != x.channels())
    throw ShapeMismatch("depthwise_conv: weight shape does not match input channels");
  const int pad = k / 2;
  Tensor3<Scalar> out(x.channels(), x.h, x.w);
  for (Index c = 0; c < x.channels(); ++c) {
    const Grid<Scalar> padded = pad_replicate(x.plane(c).array(), pad);
    auto dst = out.plane(c).array();
    dst.setConstant(bias(c, 0));
    for (int dy = 0; dy < k; ++dy)
      for (int dx = 0; dx < k; ++dx) dst += weight(c, dy * k + dx) * padded.block(dy, dx, x.h, x.w);
  }
  return out;
}

template <typename Scalar>
Tensor3<Scalar> depthwise_conv_backward(const Tensor3<Scalar>& x, const Mat<Scalar>& grad_out,
                                        ConstMatRef<Scalar> weight, int k,
                                        MatMap<Scalar> grad_weight,
                                        MatMap<Scalar> grad_bias) {
  const int pad = k / 2;
  const Index ph = x.h + 2 * pad, pw = x.w + 2 * pad;
  Tensor3<Scalar> grad_in(x.channels(), x.h, x.w);
  for (Index c = 0; c < x.channels(); ++c) {
    const Grid<Scalar> padded = pad_replicate(x.plane(c).array(), pad);
    const Eigen::Map<const Grid<Scalar>> g(grad_out.row(c).data(), x.h, x.w);
    Grid<Scalar> grad_padded = Grid<Scalar>::Zero(ph, pw);
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        grad_weight(c, dy * k + dx) += (padded.block(dy, dx, x.h, x.w) * g).sum();
        grad_padded.block(dy, dx, x.h, x.w) += weight(c, dy * k + dx) * g;
      }
    }
    grad_bias(c, 0) += g.sum();
    auto dst = grad_in.plane(c);
    for (Index y = 0; y < ph; ++y) {
      const Index sy = clamp_index(y - pad, x.h);
      for (Index xx = 0; xx < pw; ++xx) dst(sy, clamp_index(xx - pad, x.w)) += grad_padded(y, xx);
    }
  }
  return grad_in;
}

template <typename Scalar>
Mat<Scalar> layer_norm_channels(const Mat<Scalar>& x, Vec<Scalar>& inv_std) {
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = x.colwise().mean();
  Mat<Scalar> centered = x.rowwise() - mean;
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> var = centered.array().square().colwise().mean();
  inv_std = (var + Scalar(kLayerNormEps)).rsqrt().transpose().matrix();
  centered.array().rowwise() *= inv_std.transpose().array();
  return centered;
}

namespace {

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& normalized, const Vec<Scalar>& inv_std,
                                const Mat<Scalar>& grad_normalized) {
  const Scalar c = static_cast<Scalar>(normalized.rows());
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_g = grad_normalized.colwise().sum();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_gx =
      grad_normalized.cwiseProduct(normalized).colwise().sum();
  Mat<Scalar> out = c * grad_normalized;
  out.rowwise() -= sum_g;
  out -= normalized * sum_gx.asDiagonal();
  out.array().rowwise() *= (inv_std.transpose().array() / c);
  return out;
}

}  // namespace

template <typename Scalar>
Tensor3<Scalar> downsample(const Tensor3<Scalar>& x, ConstMatRef<Scalar> weight,
                           ConstMatRef<Scalar> bias) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw InvalidArgument("downsample: spatial dims must be even");
  if (weight.cols() != x.channels() * 4 || bias.rows() != weight.rows())
    throw ShapeMismatch("downsample: weight shape does not match input channels");
  const Index oh = x.h / 2, ow = x.w / 2;
  Mat<Scalar> cols(x.channels() * 4, oh * ow);
  for (Index c = 0; c < x.channels(); ++c) {
    const auto src = x.plane(c);
    for (int t = 0; t < 4; ++t)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) cols(c * 4 + t, y * ow + xx) = src(2 * y + t / 2, 2 * xx + t % 2);
  }
  Tensor3<Scalar> out(Mat<Scalar>(weight * cols), oh, ow);
  out.data.colwise() += bias.col(0);
  return out;
}

template <typename Scalar>
Tensor3<Scalar> downsample_backward(const Tensor3<Scalar>& x, const Mat<Scalar>& grad_out,
                                    ConstMatRef<Scalar> weight,
                                    MatMap<Scalar> grad_weight,
                                    MatMap<Scalar> grad_bias) {
  const Index oh = x.h / 2, ow = x.w / 2;
  Mat<Scalar> cols(x.channels() * 4, oh * ow);
  for (Index c = 0; c < x.channels(); ++c) {
    const auto src = x.plane(c);
    for (int t = 0; t < 4; ++t)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) cols(c * 4 + t, y * ow + xx) = src(2 * y + t / 2, 2 * xx + t % 2);
  }
  grad_weight.noalias() += grad_out * cols.transpose();
  grad_bias.col(0) += grad_out.rowwise().sum();
  const Mat<Scalar> grad_cols = weight.transpose() * grad_out;
  Tensor3<Scalar> grad_in(x.channels(), x.h, x.w);
  for (Index c = 0; c < x.channels(); ++c) {
    auto dst = grad_in.plane(c);
    for (int t = 0; t < 4; ++t)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) dst(2 * y + t / 2, 2 * xx + t % 2) = grad_cols(c * 4 + t, y * ow + xx);
  }
  return grad_in;
}

template <typename Scalar>
Tensor3<Scalar> upsample2x(const Tensor3<Scalar>& x) {
  const Mat<Scalar> rows = interpolation_matrix<Scalar>(2 * x.h, x.h);
  const Mat<Scalar> cols_t = interpolation_matrix<Scalar>(2 * x.w, x.w).transpose();
  Tensor3<Scalar> out(x.channels(), 2 * x.h, 2 * x.w);
  for (Index c = 0; c < x.channels(); ++c) out.plane(c).noalias() = rows * x.plane(c) * cols_t;
  return out;
}

template <typename Scalar>
Tensor3<Scalar> upsample2x_backward(const Tensor3<Scalar>& grad_out, Index h, Index w) {
  if (grad_out.h != 2 * h || grad_out.w != 2 * w) throw ShapeMismatch("upsample2x_backward: bad shape");
  const Mat<Scalar> rows_t = interpolation_matrix<Scalar>(2 * h, h).transpose();
  const Mat<Scalar> cols = interpolation_matrix<Scalar>(2 * w, w);
  Tensor3<Scalar> grad_in(grad_out.channels(), h, w);
  for (Index c = 0; c < grad_out.channels(); ++c)
    grad_in.plane(c).noalias() = rows_t * grad_out.plane(c) * cols;
  return grad_in;
}

template <typename Scalar>
Tensor3<Scalar> convnext_block(const Tensor3<Scalar>& x, const ToyNetParams<Scalar>& params,
                               const std::string& prefix, std::type_identity_t<BlockTrace<Scalar>>* trace) {
  const int k = params.config.kernel_size;
  if (params.slice(prefix + ".dw.w").rows() != x.channels())
    throw ShapeMismatch("convnext_block: channel count does not match block width");
  const Tensor3<Scalar> z = depthwise_conv(x, params.slice(prefix + ".dw.w"), params.slice(prefix + ".dw.b"), k);
  Vec<Scalar> inv_std;
  Mat<Scalar> normalized = layer_norm_channels(z.data, inv_std);
  const Mat<Scalar> y = affine_rows<Scalar>(normalized, params.slice(prefix + ".ln.gamma"), params.slice(prefix + ".ln.beta"));
  Mat<Scalar> hidden_pre = params.slice(prefix + ".pw1.w") * y;
  hidden_pre.colwise() += params.slice(prefix + ".pw1.b").col(0);
  Mat<Scalar> hidden = apply_gelu(hidden_pre);
  Tensor3<Scalar> out(Mat<Scalar>(params.slice(prefix + ".pw2.w") * hidden), x.h, x.w);
  out.data.colwise() += params.slice(prefix + ".pw2.b").col(0);
  out.data += x.data;
  if (trace) {
    trace->input = x;
    trace->normalized = std::move(normalized);
    trace->inv_std = std::move(inv_std);
    trace->hidden_pre = std::move(hidden_pre);
    trace->hidden = std::move(hidden);
  }
  return out;
}

namespace {

template <typename Scalar>
Tensor3<Scalar> convnext_block_backward(const BlockTrace<Scalar>& t, const Mat<Scalar>& grad_out,
                                        const ToyNetParams<Scalar>& params, const std::string& prefix,
                                        Vec<Scalar>& grad) {
  const auto& L = params.layout;
  const auto w1 = params.slice(prefix + ".pw1.w");
  const auto w2 = params.slice(prefix + ".pw2.w");
  const auto gamma = params.slice(prefix + ".ln.gamma");

  grad_slice(grad, L, prefix + ".pw2.w").noalias() += grad_out * t.hidden.transpose();
  grad_slice(grad, L, prefix + ".pw2.b").col(0) += grad_out.rowwise().sum();
  const Mat<Scalar> grad_hidden_pre = gelu_backward<Scalar>(t.hidden_pre, t.hidden, w2.transpose() * grad_out);

  const Mat<Scalar> y = affine_rows<Scalar>(t.normalized, gamma, params.slice(prefix + ".ln.beta"));
  grad_slice(grad, L, prefix + ".pw1.w").noalias() += grad_hidden_pre * y.transpose();
  grad_slice(grad, L, prefix + ".pw1.b").col(0) += grad_hidden_pre.rowwise().sum();
  const Mat<Scalar> grad_y = w1.transpose() * grad_hidden_pre;

  grad_slice(grad, L, prefix + ".ln.gamma").col(0) += grad_y.cwiseProduct(t.normalized).rowwise().sum();
  grad_slice(grad, L, prefix + ".ln.beta").col(0) += grad_y.rowwise().sum();
  const Mat<Scalar> grad_normalized = gamma.col(0).asDiagonal() * grad_y;
  const Mat<Scalar> grad_z = layer_norm_backward(t.normalized, t.inv_std, grad_normalized);

  Tensor3<Scalar> grad_in = depthwise_conv_backward(
      t.input, grad_z, params.slice(prefix + ".dw.w"), params.config.kernel_size,
      grad_slice(grad, L, prefix + ".dw.w"), grad_slice(grad, L, prefix + ".dw.b"));
  grad_in.data += grad_out;
  return grad_in;
}

}  // namespace

template <typename Scalar>
Tensor3<Scalar> decoder_stage(const Tensor3<Scalar>& deep, const Tensor3<Scalar>& skip,
                              const ToyNetParams<Scalar>& params, const std::string& prefix,
                              std::type_identity_t<DecoderTrace<Scalar>>* trace) {
  if (skip.h != 2 * deep.h || skip.w != 2 * deep.w)
    throw ShapeMismatch("decoder_stage: skip must have twice the spatial size of the deep input");
  const Tensor3<Scalar> up = upsample2x(deep);
  Tensor3<Scalar> concat(up.channels() + skip.channels(), skip.h, skip.w);
  concat.data.topRows(up.channels()) = up.data;
  concat.data.bottomRows(skip.channels()) = skip.data;
  Tensor3<Scalar> pre = conv2d(concat, params.slice(prefix + ".w"), params.slice(prefix + ".b"), 3);
  Tensor3<Scalar> out(apply_gelu(pre.data), skip.h, skip.w);
  if (trace) {
    trace->deep = deep;
    trace->concat = std::move(concat);
    trace->pre = std::move(pre.data);
    trace->post = out.data;
  }
  return out;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const ScalarGrid& image, const ToyNetParams<Scalar>& params) {
  const auto& cfg = params.config;
  if (image.rows() != cfg.input_h || image.cols() != cfg.input_w)
    throw ShapeMismatch("forward: image size does not match config input_size");
  if (params.values.size() != params.layout.total())
    throw ShapeMismatch("forward: parameter vector length does not match layout");

  ForwardResult<Scalar> res;
  auto& tr = res.trace;
  tr.stem_input = Tensor3<Scalar>(1, image.rows(), image.cols());
  tr.stem_input.data.row(0) =
      Eigen::Map<const Eigen::Matrix<double, 1, Eigen::Dynamic>>(image.data(), image.size()).template cast<Scalar>();

  Tensor3<Scalar> cur = conv2d(tr.stem_input, params.slice("stem.w"), params.slice("stem.b"), 3);
  std::vector<Tensor3<Scalar>> encoded;
  tr.blocks.resize(static_cast<std::size_t>(cfg.stages));
  for (int s = 0; s < cfg.stages; ++s) {
    if (s > 0) {
      tr.down_inputs.push_back(cur);
      cur = downsample(cur, params.slice(names::down(s) + ".w"), params.slice(names::down(s) + ".b"));
    }
    tr.blocks[s].resize(static_cast<std::size_t>(cfg.blocks_per_stage));
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
      cur = convnext_block(cur, params, names::block(s, b), &tr.blocks[s][b]);
    encoded.push_back(cur);
  }
  tr.decoders.resize(static_cast<std::size_t>(cfg.stages - 1));
  for (int d = 1; d < cfg.stages; ++d)
    cur = decoder_stage(cur, encoded[cfg.stages - 1 - d], params, names::decoder(d), &tr.decoders[d - 1]);
  tr.features = std::move(cur);

  const Index h = image.rows(), w = image.cols();
  Mat<Scalar> logit = params.slice("seg_head.w") * tr.features.data;
  logit.array() += params.slice("seg_head.b")(0, 0);
  Mat<Scalar> fd = params.slice("fd_head.w") * tr.features.data;
  fd.array() += params.slice("fd_head.b")(0, 0);

  res.seg_prob = Eigen::Map<const Grid<Scalar>>(logit.data(), h, w)
                     .unaryExpr([](Scalar z) { return Scalar(1) / (Scalar(1) + std::exp(-z)); });
  res.fd_pred = Eigen::Map<const Grid<Scalar>>(fd.data(), h, w);
  tr.seg_prob = res.seg_prob;
  return res;
}

template <typename Scalar>
Vec<Scalar> backward(const ForwardTrace<Scalar>& trace, const Grid<Scalar>& seg_grad,
                     const Grid<Scalar>& fd_grad, const ToyNetParams<Scalar>& params) {
  const auto& cfg = params.config;
  const auto& L = params.layout;
  if (static_cast<int>(trace.blocks.size()) != cfg.stages ||
      static_cast<int>(trace.decoders.size()) != cfg.stages - 1)
    throw ShapeMismatch("backward: trace does not match config");
  require_same_shape(seg_grad, trace.seg_prob, "backward seg_grad");
  require_same_shape(fd_grad, trace.seg_prob, "backward fd_grad");

  Vec<Scalar> grad = Vec<Scalar>::Zero(L.total());
  const Index n = trace.features.pixels();
  const Eigen::Map<const Mat<Scalar>> g_seg(seg_grad.data(), 1, n);
  const Eigen::Map<const Mat<Scalar>> g_fd(fd_grad.data(), 1, n);
  const Eigen::Map<const Mat<Scalar>> prob(trace.seg_prob.data(), 1, n);

  const Mat<Scalar> g_logit = g_seg.cwiseProduct(prob.unaryExpr([](Scalar p) { return p * (Scalar(1) - p); }));
  grad_slice(grad, L, "seg_head.w").noalias() += g_logit * trace.features.data.transpose();
  grad_slice(grad, L, "seg_head.b")(0, 0) += g_logit.sum();
  grad_slice(grad, L, "fd_head.w").noalias() += g_fd * trace.features.data.transpose();
  grad_slice(grad, L, "fd_head.b")(0, 0) += g_fd.sum();

  Mat<Scalar> g_cur = params.slice("seg_head.w").transpose() * g_logit;
  g_cur.noalias() += params.slice("fd_head.w").transpose() * g_fd;

  std::vector<Mat<Scalar>> g_encoded(static_cast<std::size_t>(cfg.stages));
  for (int d = cfg.stages - 1; d >= 1; --d) {
    const auto& t = trace.decoders[d - 1];
    const std::string p = names::decoder(d);
    const Mat<Scalar> g_pre = gelu_backward<Scalar>(t.pre, t.post, g_cur);
    const Tensor3<Scalar> g_concat = conv2d_backward(t.concat, g_pre, params.slice(p + ".w"), 3,
                                                     grad_slice(grad, L, p + ".w"), grad_slice(grad, L, p + ".b"));
    const Index deep_c = t.deep.channels();
    const int skip = cfg.stages - 1 - d;
    g_encoded[skip] = g_concat.data.bottomRows(g_concat.channels() - deep_c);
    const Tensor3<Scalar> g_up(g_concat.data.topRows(deep_c), g_concat.h, g_concat.w);
    g_cur = upsample2x_backward(g_up, t.deep.h, t.deep.w).data;
  }

  for (int s = cfg.stages - 1; s >= 0; --s) {
    if (g_encoded[s].size() > 0) g_cur += g_encoded[s];
    for (int b = cfg.blocks_per_stage - 1; b >= 0; --b)
      g_cur = convnext_block_backward(trace.blocks[s][b], g_cur, params, names::block(s, b), grad).data;
    if (s > 0) {
      const std::string p = names::down(s);
      g_cur = downsample_backward(trace.down_inputs[s - 1], g_cur, params.slice(p + ".w"),
                                  grad_slice(grad, L, p + ".w"), grad_slice(grad, L, p + ".b"))
                  .data;
    }
  }
  conv2d_backward(trace.stem_input, g_cur, params.slice("stem.w"), 3, grad_slice(grad, L, "stem.w"),
                  grad_slice(grad, L, "stem.b"));
  return grad;
}

ToyNetParams<double> init_params(const ToyNetConfig& config, std::uint64_t seed) {
  ToyNetParams<double> params(config);
  params.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& slot : params.layout.slots()) {
    auto view = params.slice(slot.name);
    const auto ends_with = [&](const char* suffix) { return slot.name.ends_with(suffix); };
    if (ends_with(".gamma")) {
      view.setOnes();
    } else if (ends_with(".w")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(slot.cols));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < view.size(); ++i) view.data()[i] = dist(rng);
    } else {
      view.setZero();
    }
  }
  // FD targets of flat regions are exactly 2; start the FD head there.
  params.slice("fd_head.b")(0, 0) = 2.0;
  return params;
}

std::vector<std::uint8_t> encode_checkpoint(const ToyNetParams<double>& params) {
  const auto& c = params.config;
  std::vector<std::uint8_t> out{'T', 'N', 'C', '1'};
  le::put_u32(out, static_cast<std::uint32_t>(c.stages));
  for (int ch : c.stage_channels) le::put_u32(out, static_cast<std::uint32_t>(ch));
  le::put_u32(out, static_cast<std::uint32_t>(c.blocks_per_stage));
  le::put_u32(out, static_cast<std::uint32_t>(c.kernel_size));
  le::put_u32(out, static_cast<std::uint32_t>(c.expansion));
  le::put_u32(out, static_cast<std::uint32_t>(c.input_h));
  le::put_u32(out, static_cast<std::uint32_t>(c.input_w));
  le::put_u64(out, params.seed);
  le::put_u64(out, static_cast<std::uint64_t>(params.values.size()));
  for (Index i = 0; i < params.values.size(); ++i) le::put_f64(out, params.values[i]);
  return out;
}

ToyNetParams<double> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  const auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw IoError(IoErrorKind::kTruncatedPayload, "checkpoint truncated");
  };
  const auto u32 = [&] {
    need(4);
    const auto v = le::get_u32(bytes.data() + pos);
    pos += 4;
    return static_cast<int>(v);
  };
  need(4);
  if (std::memcmp(bytes.data(), "TNC1", 4) != 0) throw IoError(IoErrorKind::kWrongMagic, "not a TNC1 checkpoint");
  pos = 4;
  ToyNetConfig c;
  c.stages = u32();
  if (c.stages < 1 || c.stages > 16) throw IoError(IoErrorKind::kMalformedHeader, "checkpoint: bad stage count");
  c.stage_channels.clear();
  for (int s = 0; s < c.stages; ++s) c.stage_channels.push_back(u32());
  c.blocks_per_stage = u32();
  c.kernel_size = u32();
  c.expansion = u32();
  c.input_h = u32();
  c.input_w = u32();
  need(16);
  const std::uint64_t seed = le::get_u64(bytes.data() + pos);
  const std::uint64_t count = le::get_u64(bytes.data() + pos + 8);
  pos += 16;
  ToyNetParams<double> params(c);
  params.seed = seed;
  if (count != static_cast<std::uint64_t>(params.layout.total()))
    throw IoError(IoErrorKind::kMalformedHeader, "checkpoint: parameter count does not match config");
  if (bytes.size() != pos + 8 * count) throw IoError(IoErrorKind::kTruncatedPayload, "checkpoint: payload size mismatch");
  for (std::uint64_t i = 0; i < count; ++i) params.values[static_cast<Index>(i)] = le::get_f64(bytes.data() + pos + 8 * i);
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ToyNetParams<double>& params) {
  write_file(path, encode_checkpoint(params));
}

ToyNetParams<double> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

#define FDSEG_INSTANTIATE_NET(S)                                                                     \
  template S gelu<S>(S);                                                                             \
  template S gelu_derivative<S>(S);                                                                  \
  template Tensor3<S> conv2d<S>(const Tensor3<S>&, ConstMatRef<S>,                  \
                                ConstMatRef<S>, int);                               \
  template Tensor3<S> conv2d_backward<S>(const Tensor3<S>&, const Mat<S>&,                           \
                                         ConstMatRef<S>, int, MatMap<S>,   \
                                         MatMap<S>);                                        \
  template Tensor3<S> depthwise_conv<S>(const Tensor3<S>&, ConstMatRef<S>,          \
                                        ConstMatRef<S>, int);                       \
  template Tensor3<S> depthwise_conv_backward<S>(const Tensor3<S>&, const Mat<S>&,                   \
                                                 ConstMatRef<S>, int,               \
                                                 MatMap<S>, MatMap<S>);            \
  template Mat<S> layer_norm_channels<S>(const Mat<S>&, Vec<S>&);                                    \
  template Tensor3<S> downsample<S>(const Tensor3<S>&, ConstMatRef<S>,              \
                                    ConstMatRef<S>);                                \
  template Tensor3<S> downsample_backward<S>(const Tensor3<S>&, const Mat<S>&,                       \
                                             ConstMatRef<S>, MatMap<S>,    \
                                             MatMap<S>);                                    \
  template Tensor3<S> upsample2x<S>(const Tensor3<S>&);                                              \
  template Tensor3<S> upsample2x_backward<S>(const Tensor3<S>&, Index, Index);                       \
  template Tensor3<S> convnext_block<S>(const Tensor3<S>&, const ToyNetParams<S>&,                   \
                                        const std::string&, BlockTrace<S>*);                         \
  template Tensor3<S> decoder_stage<S>(const Tensor3<S>&, const Tensor3<S>&, const ToyNetParams<S>&, \
                                       const std::string&, DecoderTrace<S>*);                        \
  template ForwardResult<S> forward<S>(const ScalarGrid&, const ToyNetParams<S>&);                   \
  template Vec<S> backward<S>(const ForwardTrace<S>&, const Grid<S>&, const Grid<S>&,                \
                              const ToyNetParams<S>&);

FDSEG_INSTANTIATE_NET(double)
FDSEG_INSTANTIATE_NET(float)

}  // namespace fdseg
