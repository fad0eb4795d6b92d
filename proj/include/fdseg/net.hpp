#pragma once

// Toy ConvNeXt-style encoder-decoder with a segmentation head and an FD
// regression head, plus a hand-written reverse pass.
//
// Topology for S stages with widths C_0..C_{S-1}:
//   stem      3x3 conv 1 -> C_0
//   stage s   [downsample 2x2/2 C_{s-1} -> C_s, s > 0] then ConvNeXt blocks,
//             output E_s
//   decoder d = 1..S-1: upsample x2 (bilinear), concat with E_{S-1-d},
//             3x3 conv + GELU -> C_{S-1-d}
//   heads     1x1 conv -> sigmoid (segmentation), 1x1 conv (FD, linear)
//
// A ConvNeXt block computes
//   out = pw2(GELU(pw1(LN(dw(x))))) + x
// with dw a k x k depthwise conv, LN normalizing each pixel across channels,
// pw1 expanding channels by `expansion` and pw2 projecting back.
// Spatial convs use replicate padding.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "fdseg/grid.hpp"

namespace fdseg {

struct ToyNetConfig {
  int stages = 3;
  std::vector<int> stage_channels{16, 32, 64};
  int blocks_per_stage = 1;
  int kernel_size = 7;
  int expansion = 4;
  int input_h = 64;
  int input_w = 64;

  void validate() const;
  bool operator==(const ToyNetConfig&) const = default;
};

/// Channel-major activation: data is channels x (height * width), each row a
/// row-major image plane.
template <typename Scalar>
struct Tensor3 {
  Mat<Scalar> data;
  Index h = 0;
  Index w = 0;

  Tensor3() = default;
  Tensor3(Index c, Index h_, Index w_) : data(Mat<Scalar>::Zero(c, h_ * w_)), h(h_), w(w_) {}
  Tensor3(Mat<Scalar> d, Index h_, Index w_) : data(std::move(d)), h(h_), w(w_) {}

  Index channels() const { return data.rows(); }
  Index pixels() const { return h * w; }

  /// One channel viewed as an h x w row-major matrix.
  Eigen::Map<Mat<Scalar>> plane(Index c) { return {data.row(c).data(), h, w}; }
  Eigen::Map<const Mat<Scalar>> plane(Index c) const { return {data.row(c).data(), h, w}; }
};

struct ParamSlot {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

/// Name -> slice mapping of the flat parameter vector. Pure function of the config.
class ParamLayout {
 public:
  explicit ParamLayout(const ToyNetConfig& config);

  const ParamSlot& slot(const std::string& name) const;
  const std::vector<ParamSlot>& slots() const { return slots_; }
  Index total() const { return total_; }

 private:
  void add(const std::string& name, Index rows, Index cols);

  std::vector<ParamSlot> slots_;
  std::map<std::string, std::size_t> index_;
  Index total_ = 0;
};

template <typename Scalar>
struct ToyNetParams {
  ToyNetConfig config;
  ParamLayout layout{config};
  Vec<Scalar> values;
  std::uint64_t seed = 0;

  ToyNetParams() = default;
  explicit ToyNetParams(ToyNetConfig c)
      : config(std::move(c)), layout(config), values(Vec<Scalar>::Zero(layout.total())) {}

  Eigen::Map<Mat<Scalar>> slice(const std::string& name) {
    const auto& s = layout.slot(name);
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const Mat<Scalar>> slice(const std::string& name) const {
    const auto& s = layout.slot(name);
    return {values.data() + s.offset, s.rows, s.cols};
  }

  template <typename To>
  ToyNetParams<To> cast() const {
    ToyNetParams<To> out(config);
    out.values = values.template cast<To>();
    out.seed = seed;
    return out;
  }
};

template <typename Scalar>
struct BlockTrace {
  Tensor3<Scalar> input;
  Mat<Scalar> normalized;  // LN output before scale/shift
  Vec<Scalar> inv_std;     // per pixel
  Mat<Scalar> hidden_pre;  // pw1 output, before GELU
  Mat<Scalar> hidden;      // after GELU
};

template <typename Scalar>
struct DecoderTrace {
  Tensor3<Scalar> deep;
  Tensor3<Scalar> concat;
  Mat<Scalar> pre;   // conv output before GELU
  Mat<Scalar> post;  // after GELU
};

template <typename Scalar>
struct ForwardTrace {
  Tensor3<Scalar> stem_input;
  std::vector<std::vector<BlockTrace<Scalar>>> blocks;  // [stage][block]
  std::vector<Tensor3<Scalar>> down_inputs;             // index s-1 for stage s
  std::vector<DecoderTrace<Scalar>> decoders;
  Tensor3<Scalar> features;                             // shared input of both heads
  Grid<Scalar> seg_prob;
};

template <typename Scalar>
struct ForwardResult {
  Grid<Scalar> seg_prob;
  Grid<Scalar> fd_pred;
  ForwardTrace<Scalar> trace;
};

// Parameter views. Non-deduced so the scalar type comes from the tensor argument.
template <typename Scalar>
using ConstMatRef = std::type_identity_t<const Eigen::Ref<const Mat<Scalar>>&>;
template <typename Scalar>
using MatMap = std::type_identity_t<Eigen::Map<Mat<Scalar>>>;

// Layer primitives. Each forward has a matching backward that accumulates
// parameter gradients into the provided maps and returns the input gradient.

template <typename Scalar>
Scalar gelu(Scalar x);
template <typename Scalar>
Scalar gelu_derivative(Scalar x);

/// k x k convolution, stride 1, replicate padding. weight is Cout x (Cin * k * k).
template <typename Scalar>
Tensor3<Scalar> conv2d(const Tensor3<Scalar>& x, ConstMatRef<Scalar> weight,
                       ConstMatRef<Scalar> bias, int k);
template <typename Scalar>
Tensor3<Scalar> conv2d_backward(const Tensor3<Scalar>& x, const Mat<Scalar>& grad_out,
                                ConstMatRef<Scalar> weight, int k,
                                MatMap<Scalar> grad_weight,
                                MatMap<Scalar> grad_bias);

/// Per-channel k x k convolution. weight is C x (k * k).
template <typename Scalar>
Tensor3<Scalar> depthwise_conv(const Tensor3<Scalar>& x, ConstMatRef<Scalar> weight,
                               ConstMatRef<Scalar> bias, int k);
template <typename Scalar>
Tensor3<Scalar> depthwise_conv_backward(const Tensor3<Scalar>& x, const Mat<Scalar>& grad_out,
                                        ConstMatRef<Scalar> weight, int k,
                                        MatMap<Scalar> grad_weight,
                                        MatMap<Scalar> grad_bias);

/// Normalizes every pixel across channels; returns the pre-affine output and
/// fills inv_std. eps = 1e-5 inside the square root.
template <typename Scalar>
Mat<Scalar> layer_norm_channels(const Mat<Scalar>& x, Vec<Scalar>& inv_std);

inline constexpr double kLayerNormEps = 1e-5;

/// 2x2 convolution with stride 2. weight is Cout x (Cin * 4).
template <typename Scalar>
Tensor3<Scalar> downsample(const Tensor3<Scalar>& x, ConstMatRef<Scalar> weight,
                           ConstMatRef<Scalar> bias);
template <typename Scalar>
Tensor3<Scalar> downsample_backward(const Tensor3<Scalar>& x, const Mat<Scalar>& grad_out,
                                    ConstMatRef<Scalar> weight,
                                    MatMap<Scalar> grad_weight,
                                    MatMap<Scalar> grad_bias);

/// Corner-aligned bilinear x2 upsampling of every channel.
template <typename Scalar>
Tensor3<Scalar> upsample2x(const Tensor3<Scalar>& x);
template <typename Scalar>
Tensor3<Scalar> upsample2x_backward(const Tensor3<Scalar>& grad_out, Index h, Index w);

template <typename Scalar>
Tensor3<Scalar> convnext_block(const Tensor3<Scalar>& x, const ToyNetParams<Scalar>& params,
                               const std::string& prefix,
                               std::type_identity_t<BlockTrace<Scalar>>* trace = nullptr);

template <typename Scalar>
Tensor3<Scalar> decoder_stage(const Tensor3<Scalar>& deep, const Tensor3<Scalar>& skip,
                              const ToyNetParams<Scalar>& params, const std::string& prefix,
                              std::type_identity_t<DecoderTrace<Scalar>>* trace = nullptr);

template <typename Scalar>
ForwardResult<Scalar> forward(const ScalarGrid& image, const ToyNetParams<Scalar>& params);

/// Gradient of sum(seg_grad * seg_prob) + sum(fd_grad * fd_pred) with respect to
/// every parameter, laid out like params.values.
template <typename Scalar>
Vec<Scalar> backward(const ForwardTrace<Scalar>& trace, const Grid<Scalar>& seg_grad,
                     const Grid<Scalar>& fd_grad, const ToyNetParams<Scalar>& params);

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero
/// biases, LN scale 1 / shift 0, FD head bias 2. Deterministic per seed.
ToyNetParams<double> init_params(const ToyNetConfig& config, std::uint64_t seed);

// Checkpoint: "TNC1", uint32 fields (stages, widths..., blocks_per_stage,
// kernel_size, expansion, input_h, input_w), uint64 seed, uint64 count, then
// count little-endian doubles.
std::vector<std::uint8_t> encode_checkpoint(const ToyNetParams<double>& params);
ToyNetParams<double> decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const ToyNetParams<double>& params);
ToyNetParams<double> load_checkpoint(const std::filesystem::path& path);

namespace names {
std::string block(int stage, int block);
std::string down(int stage);
std::string decoder(int d);
}  // namespace names

}  // namespace fdseg
