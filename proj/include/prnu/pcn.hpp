#pragma once

#include "prnu/types.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace prnu::pcn {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activation volume stored channel-major (c, y, x).
template <typename T>
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int height, int width, int channels, T fill = T{0});

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int channels() const noexcept { return channels_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    T& operator()(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
    const T& operator()(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

    /// Contiguous height*width block of one channel.
    [[nodiscard]] T* channel(int c) noexcept { return data_.data() + static_cast<std::size_t>(c) * height_ * width_; }
    [[nodiscard]] const T* channel(int c) const noexcept {
        return data_.data() + static_cast<std::size_t>(c) * height_ * width_;
    }
    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }

    template <typename U>
    [[nodiscard]] Tensor3<U> cast() const {
        Tensor3<U> out(height_, width_, channels_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.values()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

    bool operator==(const Tensor3&) const = default;

private:
    [[nodiscard]] std::size_t index(int y, int x, int c) const noexcept {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

struct ConvSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;

    bool operator==(const ConvSpec&) const = default;
};

/// Layer hyperparameters. Defaults: 32@3x3/2, 64@3x3/2, 64@3x3/1, valid
/// padding, ReLU after each convolution.
struct ArchDescriptor {
    int input_channels = 2;
    std::array<ConvSpec, 3> conv{{{32, 3, 2}, {64, 3, 2}, {64, 3, 1}}};

    /// Throws ConfigError for non-positive sizes or an odd final channel count.
    void validate() const;
    [[nodiscard]] int in_channels(int layer) const { return layer == 0 ? input_channels : conv[layer - 1].out_channels; }
    [[nodiscard]] int pooled_size() const { return conv[2].out_channels / 2; }
    /// Smallest square input that leaves at least one output position.
    [[nodiscard]] int min_input_side() const;
    /// Spatial side after conv `layer` for a given input side (<= 0 when too small).
    [[nodiscard]] int output_side(int input_side, int layer = 2) const;
    [[nodiscard]] std::size_t parameter_count() const;

    bool operator==(const ArchDescriptor&) const = default;
};

/// Offsets of each parameter blob inside the flat parameter vector, in
/// declaration order: conv1.W, conv1.b, conv2.W, conv2.b, conv3.W, conv3.b, fc.W, fc.b.
struct ParamLayout {
    struct Slice {
        std::size_t offset = 0;
        std::size_t size = 0;
    };
    std::array<Slice, 3> conv_weight;
    std::array<Slice, 3> conv_bias;
    Slice fc_weight;
    Slice fc_bias;
    std::size_t total = 0;

    explicit ParamLayout(const ArchDescriptor& arch);
};

/// Network weights. Conv weights are laid out [out][in][ky][kx].
template <typename T>
class Model {
public:
    explicit Model(ArchDescriptor arch = {});

    /// He-uniform convolutions, Glorot-uniform head, zero biases.
    static Model initialized(const ArchDescriptor& arch, std::uint64_t seed);

    [[nodiscard]] const ArchDescriptor& arch() const noexcept { return arch_; }
    [[nodiscard]] const ParamLayout& layout() const noexcept { return layout_; }
    [[nodiscard]] std::span<T> params() noexcept { return params_; }
    [[nodiscard]] std::span<const T> params() const noexcept { return params_; }

    [[nodiscard]] std::span<const T> conv_weight(int layer) const { return slice(layout_.conv_weight[layer]); }
    [[nodiscard]] std::span<const T> conv_bias(int layer) const { return slice(layout_.conv_bias[layer]); }
    [[nodiscard]] std::span<const T> fc_weight() const { return slice(layout_.fc_weight); }
    [[nodiscard]] T fc_bias() const { return params_[layout_.fc_bias.offset]; }

    template <typename U>
    [[nodiscard]] Model<U> cast() const {
        Model<U> out(arch_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.params()[i] = static_cast<U>(params_[i]);
        }
        return out;
    }

    bool operator==(const Model& other) const { return arch_ == other.arch_ && params_ == other.params_; }

private:
    [[nodiscard]] std::span<const T> slice(const ParamLayout::Slice& s) const {
        return std::span<const T>(params_).subspan(s.offset, s.size);
    }

    ArchDescriptor arch_;
    ParamLayout layout_;
    std::vector<T> params_;
};

using PcnModel = Model<float>;

struct MatchScore {
    double logit = 0.0;
    double c_s = 0.5; ///< sigmoid(logit)
};

double sigmoid(double z);

/// (fingerprint, residual) stack; both channels normalized to unit
/// population standard deviation.
class PairTensor {
public:
    /// Throws DimensionError unless both planes share one square size.
    static PairTensor from_planes(const Plane& fingerprint, const Plane& residual);

    [[nodiscard]] const Tensor3<float>& tensor() const noexcept { return tensor_; }
    [[nodiscard]] int side() const noexcept { return tensor_.height(); }

private:
    Tensor3<float> tensor_;
};

// ------------------------------------------------------------------ layers

/// Read-only view of one convolution's weights.
template <typename T>
struct ConvLayer {
    ConvSpec spec;
    int in_channels = 0;
    std::span<const T> weights; ///< out*in*k*k
    std::span<const T> bias;    ///< out
};

template <typename T>
struct ConvGrads {
    Tensor3<T> grad_input; ///< empty unless requested
    std::vector<T> grad_weights;
    std::vector<T> grad_bias;
};

/// im2col matrix: rows (c, ky, kx), columns output positions.
template <typename T>
MatrixRM<T> im2col(const Tensor3<T>& x, int kernel, int stride);

/// Valid cross-correlation: out(o, y, x) = b(o) + sum w(o,c,ky,kx) * in(c, y*s+ky, x*s+kx).
template <typename T>
Tensor3<T> conv2d_forward(const Tensor3<T>& x, const ConvLayer<T>& layer);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor3<T>& x, const ConvLayer<T>& layer, const Tensor3<T>& grad_out,
                             bool need_input_grad = true);

template <typename T>
Tensor3<T> relu_forward(const Tensor3<T>& x);
/// grad * [x > 0]
template <typename T>
Tensor3<T> relu_backward(const Tensor3<T>& x, const Tensor3<T>& grad_out);

/// out[n] = mean over positions of p3(2n) * p3(2n+1) (0-based channels).
/// Requires a square input with an even channel count.
template <typename T>
std::vector<T> pairwise_corr_pool_forward(const Tensor3<T>& p3);

template <typename T>
Tensor3<T> pairwise_corr_pool_backward(const Tensor3<T>& p3, std::span<const T> grad_out);

/// Full bilinear pooling: G(a, b) = mean over positions of p3(a) * p3(b).
template <typename T>
MatrixRM<T> bilinear_pool_forward(const Tensor3<T>& p3);

// ------------------------------------------------------------------ network

/// Intermediate values kept for the backward pass.
template <typename T>
struct ForwardTrace {
    std::array<MatrixRM<T>, 3> cols;       ///< im2col of each conv input
    std::array<Tensor3<T>, 3> activations; ///< post-ReLU conv outputs
    std::vector<T> pooled;
    T logit{};
};

/// conv -> relu (x3) -> pairwise pooling -> fc. Returns the logit.
template <typename T>
T forward_logit(const Model<T>& model, const Tensor3<T>& input, ForwardTrace<T>* trace = nullptr);

/// Accumulates d(loss)/d(params) for d(loss)/d(logit) = dlogit into grad
/// (which must hold parameter_count() entries). Optionally returns the
/// input gradient.
template <typename T>
void backward(const Model<T>& model, const Tensor3<T>& input, const ForwardTrace<T>& trace, T dlogit,
              std::span<T> grad, Tensor3<T>* grad_input = nullptr);

MatchScore pcn_forward(const PairTensor& pair, const PcnModel& model);

/// Independent per-element forwards spread over `threads` workers; equal to
/// a loop of pcn_forward.
std::vector<MatchScore> pcn_forward_batch(std::span<const PairTensor> pairs, const PcnModel& model,
                                          unsigned threads = 1);

/// Scores one residual against a fixed set of fingerprints. The first
/// convolution is linear in its input, so the fingerprint half is computed
/// once at construction and the residual half once per query.
class PcnMatcher {
public:
    /// Fingerprints must be square and share one size; they are normalized here.
    PcnMatcher(PcnModel model, std::span<const Plane> fingerprints);

    [[nodiscard]] std::vector<MatchScore> score(const Plane& residual, unsigned threads = 1) const;
    [[nodiscard]] std::size_t size() const noexcept { return fingerprint_terms_.size(); }
    [[nodiscard]] const PcnModel& model() const noexcept { return model_; }

private:
    PcnModel model_;
    int side_ = 0;
    std::vector<MatrixRM<float>> fingerprint_terms_;
};

// ------------------------------------------------------------------ persistence

// "PCNW", u8 version, u32 input channels, u32 layer count, per layer
// u32 out_channels/kernel/stride, u32 parameter count, f32 LE parameters.
inline constexpr std::uint8_t kModelVersion = 1;

void save_model(const PcnModel& model, const std::filesystem::path& path);
PcnModel load_model(const std::filesystem::path& path);
/// Throws ConfigError when the stored architecture differs from `expected`.
PcnModel load_model(const std::filesystem::path& path, const ArchDescriptor& expected);

} // namespace prnu::pcn
