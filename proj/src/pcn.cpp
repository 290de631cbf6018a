#include "prnu/pcn.hpp"

#include "model_io.hpp"
#include "prnu/errors.hpp"
#include "prnu/imaging.hpp"
#include "prnu/parallel.hpp"

#include <cmath>
#include <random>
#include <string>

namespace prnu::pcn {

namespace {

template <typename T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;
template <typename T>
using MatMap = Eigen::Map<MatrixRM<T>>;

int conv_out(int in, int kernel, int stride) {
    return in < kernel ? 0 : (in - kernel) / stride + 1;
}

template <typename T>
ConvLayer<T> layer_view(const Model<T>& model, int l) {
    return {model.arch().conv[l], model.arch().in_channels(l), model.conv_weight(l), model.conv_bias(l)};
}

template <typename T>
void check_conv_input(const Tensor3<T>& x, const ConvLayer<T>& layer) {
    if (x.channels() != layer.in_channels) {
        throw DimensionError("conv input has " + std::to_string(x.channels()) + " channels, layer expects " +
                             std::to_string(layer.in_channels));
    }
    if (x.height() < layer.spec.kernel || x.width() < layer.spec.kernel) {
        throw DimensionError("conv input " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                             " smaller than kernel " + std::to_string(layer.spec.kernel));
    }
    const std::size_t k2 = static_cast<std::size_t>(layer.spec.kernel) * layer.spec.kernel;
    if (layer.weights.size() != static_cast<std::size_t>(layer.spec.out_channels) * layer.in_channels * k2 ||
        layer.bias.size() != static_cast<std::size_t>(layer.spec.out_channels)) {
        throw DimensionError("conv weight/bias sizes do not match the layer spec");
    }
}

// out = W * cols + b, written straight into a CHW tensor.
template <typename T>
Tensor3<T> conv_from_cols(const MatrixRM<T>& cols, const ConvLayer<T>& layer, int oh, int ow) {
    const int out_c = layer.spec.out_channels;
    Tensor3<T> out(oh, ow, out_c);
    ConstMatMap<T> w(layer.weights.data(), out_c, cols.rows());
    MatMap<T> o(out.channel(0), out_c, static_cast<Eigen::Index>(oh) * ow);
    o.noalias() = w * cols;
    o.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(layer.bias.data(), out_c);
    return out;
}

template <typename T>
void relu_inplace(Tensor3<T>& t) {
    for (T& v : t.values()) {
        v = v > T{0} ? v : T{0};
    }
}

template <typename T>
Tensor3<T> col2im(const MatrixRM<T>& cols, int channels, int height, int width, int kernel, int stride) {
    const int oh = conv_out(height, kernel, stride);
    const int ow = conv_out(width, kernel, stride);
    Tensor3<T> out(height, width, channels);
    for (int c = 0; c < channels; ++c) {
        T* dst_channel = out.channel(c);
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const T* src = cols.row((c * kernel + ky) * kernel + kx).data();
                for (int oy = 0; oy < oh; ++oy) {
                    T* dst = dst_channel + static_cast<std::size_t>(oy * stride + ky) * width + kx;
                    const T* s = src + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        dst[static_cast<std::size_t>(ox) * stride] += s[ox];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void check_pool_input(const Tensor3<T>& p3) {
    if (p3.channels() < 2 || p3.channels() % 2 != 0) {
        throw DimensionError("pairwise pooling needs an even channel count, got " + std::to_string(p3.channels()));
    }
    if (p3.height() != p3.width() || p3.height() < 1) {
        throw DimensionError("pairwise pooling needs a square input, got " + std::to_string(p3.height()) + "x" +
                             std::to_string(p3.width()));
    }
}

// Layers 2..3, pooling and head, starting from the first post-ReLU activation.
template <typename T>
T forward_tail(const Model<T>& model, Tensor3<T> act1, ForwardTrace<T>* trace) {
    Tensor3<T> current = std::move(act1);
    for (int l = 1; l < 3; ++l) {
        const ConvLayer<T> layer = layer_view(model, l);
        check_conv_input(current, layer);
        MatrixRM<T> cols = im2col(current, layer.spec.kernel, layer.spec.stride);
        Tensor3<T> next = conv_from_cols(cols, layer, conv_out(current.height(), layer.spec.kernel, layer.spec.stride),
                                         conv_out(current.width(), layer.spec.kernel, layer.spec.stride));
        relu_inplace(next);
        if (trace != nullptr) {
            trace->activations[l - 1] = std::move(current);
            trace->cols[l] = std::move(cols);
        }
        current = std::move(next);
    }
    std::vector<T> pooled = pairwise_corr_pool_forward(current);
    const auto fc_w = model.fc_weight();
    T logit = model.fc_bias();
    for (std::size_t n = 0; n < pooled.size(); ++n) {
        logit += fc_w[n] * pooled[n];
    }
    if (trace != nullptr) {
        trace->activations[2] = std::move(current);
        trace->pooled = std::move(pooled);
        trace->logit = logit;
    }
    return logit;
}

void check_pair_input(const ArchDescriptor& arch, int height, int width, int channels) {
    if (channels != arch.input_channels) {
        throw DimensionError("network input needs " + std::to_string(arch.input_channels) + " channels");
    }
    if (height != width) {
        throw DimensionError("network input must be square");
    }
    if (height < arch.min_input_side()) {
        throw DimensionError("network input side " + std::to_string(height) + " below the minimum " +
                             std::to_string(arch.min_input_side()) + " for this architecture");
    }
}

} // namespace

// ------------------------------------------------------------------ Tensor3

template <typename T>
Tensor3<T>::Tensor3(int height, int width, int channels, T fill)
    : height_(height), width_(width), channels_(channels),
      data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (height < 1 || width < 1 || channels < 1) {
        throw DimensionError("tensor dimensions must be positive");
    }
}

// ------------------------------------------------------------------ architecture

void ArchDescriptor::validate() const {
    if (input_channels < 1) {
        throw ConfigError("input channel count must be positive");
    }
    for (const auto& c : conv) {
        if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1) {
            throw ConfigError("conv layer sizes must be positive");
        }
    }
    if (conv[2].out_channels % 2 != 0) {
        throw ConfigError("last conv layer must have an even channel count for pairwise pooling");
    }
}

int ArchDescriptor::min_input_side() const {
    int side = 1;
    for (int l = 2; l >= 0; --l) {
        side = (side - 1) * conv[l].stride + conv[l].kernel;
    }
    return side;
}

int ArchDescriptor::output_side(int input_side, int layer) const {
    int side = input_side;
    for (int l = 0; l <= layer; ++l) {
        side = conv_out(side, conv[l].kernel, conv[l].stride);
    }
    return side;
}

std::size_t ArchDescriptor::parameter_count() const {
    return ParamLayout(*this).total;
}

ParamLayout::ParamLayout(const ArchDescriptor& arch) {
    std::size_t offset = 0;
    for (int l = 0; l < 3; ++l) {
        const auto& c = arch.conv[l];
        const std::size_t w = static_cast<std::size_t>(c.out_channels) * arch.in_channels(l) * c.kernel * c.kernel;
        conv_weight[l] = {offset, w};
        offset += w;
        conv_bias[l] = {offset, static_cast<std::size_t>(c.out_channels)};
        offset += c.out_channels;
    }
    fc_weight = {offset, static_cast<std::size_t>(arch.pooled_size())};
    offset += fc_weight.size;
    fc_bias = {offset, 1};
    total = offset + 1;
}

template <typename T>
Model<T>::Model(ArchDescriptor arch) : arch_(arch), layout_((arch.validate(), arch)), params_(layout_.total, T{0}) {}

template <typename T>
Model<T> Model<T>::initialized(const ArchDescriptor& arch, std::uint64_t seed) {
    Model model(arch);
    Rng rng(seed);
    auto fill = [&](const ParamLayout::Slice& s, double limit) {
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (std::size_t i = 0; i < s.size; ++i) {
            model.params_[s.offset + i] = static_cast<T>(dist(rng));
        }
    };
    for (int l = 0; l < 3; ++l) {
        const auto& c = arch.conv[l];
        const double fan_in = static_cast<double>(arch.in_channels(l) * c.kernel * c.kernel);
        fill(model.layout_.conv_weight[l], std::sqrt(6.0 / fan_in));
    }
    fill(model.layout_.fc_weight, std::sqrt(6.0 / (arch.pooled_size() + 1.0)));
    return model;
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

PairTensor PairTensor::from_planes(const Plane& fingerprint, const Plane& residual) {
    if (fingerprint.rows() != residual.rows() || fingerprint.cols() != residual.cols()) {
        throw DimensionError("fingerprint and residual crops differ in size");
    }
    if (fingerprint.rows() != fingerprint.cols()) {
        throw DimensionError("pair crops must be square");
    }
    const Plane k = imaging::normalize_by_std(fingerprint);
    const Plane w = imaging::normalize_by_std(residual);
    const int side = static_cast<int>(k.rows());
    PairTensor pair;
    pair.tensor_ = Tensor3<float>(side, side, 2);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            pair.tensor_(y, x, 0) = static_cast<float>(k(y, x));
            pair.tensor_(y, x, 1) = static_cast<float>(w(y, x));
        }
    }
    return pair;
}

// ------------------------------------------------------------------ layers

template <typename T>
MatrixRM<T> im2col(const Tensor3<T>& x, int kernel, int stride) {
    const int oh = conv_out(x.height(), kernel, stride);
    const int ow = conv_out(x.width(), kernel, stride);
    MatrixRM<T> cols(static_cast<Eigen::Index>(x.channels()) * kernel * kernel, static_cast<Eigen::Index>(oh) * ow);
    for (int c = 0; c < x.channels(); ++c) {
        const T* src_channel = x.channel(c);
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                T* dst = cols.row((c * kernel + ky) * kernel + kx).data();
                for (int oy = 0; oy < oh; ++oy) {
                    const T* src = src_channel + static_cast<std::size_t>(oy * stride + ky) * x.width() + kx;
                    T* d = dst + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        d[ox] = src[static_cast<std::size_t>(ox) * stride];
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
Tensor3<T> conv2d_forward(const Tensor3<T>& x, const ConvLayer<T>& layer) {
    check_conv_input(x, layer);
    const MatrixRM<T> cols = im2col(x, layer.spec.kernel, layer.spec.stride);
    return conv_from_cols(cols, layer, conv_out(x.height(), layer.spec.kernel, layer.spec.stride),
                          conv_out(x.width(), layer.spec.kernel, layer.spec.stride));
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor3<T>& x, const ConvLayer<T>& layer, const Tensor3<T>& grad_out,
                             bool need_input_grad) {
    check_conv_input(x, layer);
    const int k = layer.spec.kernel;
    const int s = layer.spec.stride;
    const int oh = conv_out(x.height(), k, s);
    const int ow = conv_out(x.width(), k, s);
    if (grad_out.height() != oh || grad_out.width() != ow || grad_out.channels() != layer.spec.out_channels) {
        throw DimensionError("conv upstream gradient has the wrong shape");
    }
    const MatrixRM<T> cols = im2col(x, k, s);
    const int out_c = layer.spec.out_channels;
    ConstMatMap<T> g(grad_out.channel(0), out_c, static_cast<Eigen::Index>(oh) * ow);
    ConstMatMap<T> w(layer.weights.data(), out_c, cols.rows());

    ConvGrads<T> grads;
    grads.grad_weights.resize(layer.weights.size());
    MatMap<T>(grads.grad_weights.data(), out_c, cols.rows()).noalias() = g * cols.transpose();
    grads.grad_bias.resize(static_cast<std::size_t>(out_c));
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.grad_bias.data(), out_c) = g.rowwise().sum();
    if (need_input_grad) {
        const MatrixRM<T> dcols = w.transpose() * g;
        grads.grad_input = col2im(dcols, x.channels(), x.height(), x.width(), k, s);
    }
    return grads;
}

template <typename T>
Tensor3<T> relu_forward(const Tensor3<T>& x) {
    Tensor3<T> out = x;
    relu_inplace(out);
    return out;
}

template <typename T>
Tensor3<T> relu_backward(const Tensor3<T>& x, const Tensor3<T>& grad_out) {
    if (x.height() != grad_out.height() || x.width() != grad_out.width() || x.channels() != grad_out.channels()) {
        throw DimensionError("relu gradient shape mismatch");
    }
    Tensor3<T> out = grad_out;
    const auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        if (!(xv[i] > T{0})) {
            ov[i] = T{0};
        }
    }
    return out;
}

template <typename T>
std::vector<T> pairwise_corr_pool_forward(const Tensor3<T>& p3) {
    check_pool_input(p3);
    const std::size_t area = static_cast<std::size_t>(p3.height()) * p3.width();
    const T inv_area = T{1} / static_cast<T>(area);
    std::vector<T> out(static_cast<std::size_t>(p3.channels() / 2));
    for (std::size_t n = 0; n < out.size(); ++n) {
        const T* a = p3.channel(static_cast<int>(2 * n));
        const T* b = p3.channel(static_cast<int>(2 * n + 1));
        T acc{0};
        for (std::size_t i = 0; i < area; ++i) {
            acc += a[i] * b[i];
        }
        out[n] = acc * inv_area;
    }
    return out;
}

template <typename T>
Tensor3<T> pairwise_corr_pool_backward(const Tensor3<T>& p3, std::span<const T> grad_out) {
    check_pool_input(p3);
    if (grad_out.size() != static_cast<std::size_t>(p3.channels() / 2)) {
        throw DimensionError("pairwise pooling gradient has the wrong length");
    }
    const std::size_t area = static_cast<std::size_t>(p3.height()) * p3.width();
    const T inv_area = T{1} / static_cast<T>(area);
    Tensor3<T> grad(p3.height(), p3.width(), p3.channels());
    for (std::size_t n = 0; n < grad_out.size(); ++n) {
        const int ca = static_cast<int>(2 * n);
        const int cb = ca + 1;
        const T scale = grad_out[n] * inv_area;
        const T* a = p3.channel(ca);
        const T* b = p3.channel(cb);
        T* ga = grad.channel(ca);
        T* gb = grad.channel(cb);
        for (std::size_t i = 0; i < area; ++i) {
            ga[i] = scale * b[i];
            gb[i] = scale * a[i];
        }
    }
    return grad;
}

template <typename T>
MatrixRM<T> bilinear_pool_forward(const Tensor3<T>& p3) {
    if (p3.height() != p3.width()) {
        throw DimensionError("bilinear pooling needs a square input");
    }
    const Eigen::Index area = static_cast<Eigen::Index>(p3.height()) * p3.width();
    ConstMatMap<T> features(p3.channel(0), p3.channels(), area);
    MatrixRM<T> gram = features * features.transpose();
    return gram / static_cast<T>(area);
}

// ------------------------------------------------------------------ network

template <typename T>
T forward_logit(const Model<T>& model, const Tensor3<T>& input, ForwardTrace<T>* trace) {
    check_pair_input(model.arch(), input.height(), input.width(), input.channels());
    const ConvLayer<T> layer = layer_view(model, 0);
    MatrixRM<T> cols = im2col(input, layer.spec.kernel, layer.spec.stride);
    const int side = conv_out(input.height(), layer.spec.kernel, layer.spec.stride);
    Tensor3<T> act1 = conv_from_cols(cols, layer, side, side);
    relu_inplace(act1);
    if (trace != nullptr) {
        trace->cols[0] = std::move(cols);
    }
    return forward_tail(model, std::move(act1), trace);
}

template <typename T>
void backward(const Model<T>& model, const Tensor3<T>& input, const ForwardTrace<T>& trace, T dlogit,
              std::span<T> grad, Tensor3<T>* grad_input) {
    const ParamLayout& lay = model.layout();
    if (grad.size() != lay.total) {
        throw DimensionError("gradient buffer size does not match the model");
    }
    const auto fc_w = model.fc_weight();
    std::vector<T> d_pooled(trace.pooled.size());
    for (std::size_t n = 0; n < d_pooled.size(); ++n) {
        grad[lay.fc_weight.offset + n] += dlogit * trace.pooled[n];
        d_pooled[n] = dlogit * fc_w[n];
    }
    grad[lay.fc_bias.offset] += dlogit;

    Tensor3<T> d_act = pairwise_corr_pool_backward<T>(trace.activations[2], d_pooled);
    for (int l = 2; l >= 0; --l) {
        const Tensor3<T>& act = trace.activations[l];
        // ReLU mask from the post-activation value: act > 0 iff pre-activation > 0.
        const auto av = act.values();
        auto dv = d_act.values();
        for (std::size_t i = 0; i < dv.size(); ++i) {
            if (!(av[i] > T{0})) {
                dv[i] = T{0};
            }
        }
        const ConvLayer<T> layer = layer_view(model, l);
        const int out_c = layer.spec.out_channels;
        const MatrixRM<T>& cols = trace.cols[l];
        ConstMatMap<T> g(d_act.channel(0), out_c, static_cast<Eigen::Index>(d_act.height()) * d_act.width());
        MatMap<T>(grad.data() + lay.conv_weight[l].offset, out_c, cols.rows()).noalias() += g * cols.transpose();
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grad.data() + lay.conv_bias[l].offset, out_c) +=
            g.rowwise().sum();
        if (l == 0 && grad_input == nullptr) {
            break;
        }
        ConstMatMap<T> w(layer.weights.data(), out_c, cols.rows());
        const MatrixRM<T> dcols = w.transpose() * g;
        const int in_side = l == 0 ? input.height() : trace.activations[l - 1].height();
        Tensor3<T> d_in = col2im(dcols, layer.in_channels, in_side, in_side, layer.spec.kernel, layer.spec.stride);
        if (l == 0) {
            *grad_input = std::move(d_in);
        } else {
            d_act = std::move(d_in);
        }
    }
}

MatchScore pcn_forward(const PairTensor& pair, const PcnModel& model) {
    const double logit = forward_logit(model, pair.tensor());
    return {logit, sigmoid(logit)};
}

std::vector<MatchScore> pcn_forward_batch(std::span<const PairTensor> pairs, const PcnModel& model,
                                          unsigned threads) {
    std::vector<MatchScore> out(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) { out[i] = pcn_forward(pairs[i], model); });
    return out;
}

PcnMatcher::PcnMatcher(PcnModel model, std::span<const Plane> fingerprints) : model_(std::move(model)) {
    if (fingerprints.empty()) {
        throw EmptyInputError("matcher needs at least one fingerprint");
    }
    const ArchDescriptor& arch = model_.arch();
    if (arch.input_channels != 2) {
        throw ConfigError("matcher expects a 2-channel architecture");
    }
    side_ = static_cast<int>(fingerprints.front().rows());
    check_pair_input(arch, side_, static_cast<int>(fingerprints.front().cols()), 2);
    const ConvSpec& c1 = arch.conv[0];
    const Eigen::Index taps = static_cast<Eigen::Index>(c1.kernel) * c1.kernel;
    ConstMatMap<float> w(model_.conv_weight(0).data(), c1.out_channels, 2 * taps);
    const auto bias = model_.conv_bias(0);
    for (const auto& fp : fingerprints) {
        if (fp.rows() != side_ || fp.cols() != side_) {
            throw DimensionError("matcher fingerprints must share one square size");
        }
        const Plane k = imaging::normalize_by_std(fp);
        Tensor3<float> t(side_, side_, 1);
        for (int y = 0; y < side_; ++y) {
            for (int x = 0; x < side_; ++x) {
                t(y, x, 0) = static_cast<float>(k(y, x));
            }
        }
        MatrixRM<float> term = w.leftCols(taps) * im2col(t, c1.kernel, c1.stride);
        for (Eigen::Index o = 0; o < term.rows(); ++o) {
            term.row(o).array() += bias[static_cast<std::size_t>(o)];
        }
        fingerprint_terms_.push_back(std::move(term));
    }
}

std::vector<MatchScore> PcnMatcher::score(const Plane& residual, unsigned threads) const {
    if (residual.rows() != side_ || residual.cols() != side_) {
        throw DimensionError("residual crop size does not match the matcher");
    }
    const ConvSpec& c1 = model_.arch().conv[0];
    const Eigen::Index taps = static_cast<Eigen::Index>(c1.kernel) * c1.kernel;
    const Plane wn = imaging::normalize_by_std(residual);
    Tensor3<float> t(side_, side_, 1);
    for (int y = 0; y < side_; ++y) {
        for (int x = 0; x < side_; ++x) {
            t(y, x, 0) = static_cast<float>(wn(y, x));
        }
    }
    ConstMatMap<float> w(model_.conv_weight(0).data(), c1.out_channels, 2 * taps);
    const MatrixRM<float> residual_term = w.rightCols(taps) * im2col(t, c1.kernel, c1.stride);
    const int side1 = conv_out(side_, c1.kernel, c1.stride);

    std::vector<MatchScore> out(fingerprint_terms_.size());
    parallel_for(fingerprint_terms_.size(), threads, [&](std::size_t i) {
        Tensor3<float> act1(side1, side1, c1.out_channels);
        MatMap<float> a(act1.channel(0), c1.out_channels, residual_term.cols());
        a = (fingerprint_terms_[i] + residual_term).cwiseMax(0.0F);
        const double logit = forward_tail(model_, std::move(act1), static_cast<ForwardTrace<float>*>(nullptr));
        out[i] = {logit, sigmoid(logit)};
    });
    return out;
}

// ------------------------------------------------------------------ persistence

namespace detail {

void write_model(prnu::detail::ByteWriter& w, const PcnModel& model) {
    const ArchDescriptor& arch = model.arch();
    w.bytes("PCNW");
    w.u8(kModelVersion);
    w.u32(static_cast<std::uint32_t>(arch.input_channels));
    w.u32(static_cast<std::uint32_t>(arch.conv.size()));
    for (const auto& c : arch.conv) {
        w.u32(static_cast<std::uint32_t>(c.out_channels));
        w.u32(static_cast<std::uint32_t>(c.kernel));
        w.u32(static_cast<std::uint32_t>(c.stride));
    }
    w.u32(static_cast<std::uint32_t>(model.params().size()));
    for (float p : model.params()) {
        w.f32(p);
    }
}

PcnModel read_model(prnu::detail::ByteReader& r) {
    if (r.remaining() < 4 || r.bytes(4) != "PCNW") {
        throw FormatError("bad magic (expected PCNW): " + r.name());
    }
    const std::uint8_t version = r.u8();
    if (version != kModelVersion) {
        throw FormatError("unsupported model version " + std::to_string(version) + " in " + r.name());
    }
    ArchDescriptor arch;
    arch.input_channels = static_cast<int>(r.u32());
    const std::uint32_t layers = r.u32();
    if (layers != arch.conv.size()) {
        throw FormatError("model declares " + std::to_string(layers) + " conv layers, expected 3");
    }
    for (auto& c : arch.conv) {
        c.out_channels = static_cast<int>(r.u32());
        c.kernel = static_cast<int>(r.u32());
        c.stride = static_cast<int>(r.u32());
        if (c.out_channels > 65536 || c.kernel > 1024 || c.stride > 1024) {
            throw FormatError("implausible layer size in " + r.name());
        }
    }
    try {
        arch.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid architecture in model file: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    PcnModel model(arch);
    if (count != model.params().size()) {
        throw FormatError("parameter count " + std::to_string(count) + " does not match the architecture (" +
                          std::to_string(model.params().size()) + ")");
    }
    for (float& p : model.params()) {
        p = r.f32();
    }
    return model;
}

} // namespace detail

void save_model(const PcnModel& model, const std::filesystem::path& path) {
    prnu::detail::ByteWriter w;
    detail::write_model(w, model);
    w.write_to(path);
}

PcnModel load_model(const std::filesystem::path& path) {
    auto r = prnu::detail::ByteReader::from_file(path);
    PcnModel model = detail::read_model(r);
    if (!r.at_end()) {
        throw FormatError("trailing bytes after model parameters in " + path.string());
    }
    return model;
}

PcnModel load_model(const std::filesystem::path& path, const ArchDescriptor& expected) {
    PcnModel model = load_model(path);
    if (!(model.arch() == expected)) {
        throw ConfigError("model architecture in " + path.string() + " differs from the requested one");
    }
    return model;
}

// ------------------------------------------------------------------ instantiations

#define PRNU_PCN_INSTANTIATE(T)                                                                                     \
    template class Tensor3<T>;                                                                                     \
    template class Model<T>;                                                                                       \
    template MatrixRM<T> im2col<T>(const Tensor3<T>&, int, int);                                                   \
    template Tensor3<T> conv2d_forward<T>(const Tensor3<T>&, const ConvLayer<T>&);                                 \
    template ConvGrads<T> conv2d_backward<T>(const Tensor3<T>&, const ConvLayer<T>&, const Tensor3<T>&, bool);     \
    template Tensor3<T> relu_forward<T>(const Tensor3<T>&);                                                        \
    template Tensor3<T> relu_backward<T>(const Tensor3<T>&, const Tensor3<T>&);                                    \
    template std::vector<T> pairwise_corr_pool_forward<T>(const Tensor3<T>&);                                      \
    template Tensor3<T> pairwise_corr_pool_backward<T>(const Tensor3<T>&, std::span<const T>);                     \
    template MatrixRM<T> bilinear_pool_forward<T>(const Tensor3<T>&);                                              \
    template T forward_logit<T>(const Model<T>&, const Tensor3<T>&, ForwardTrace<T>*);                             \
    template void backward<T>(const Model<T>&, const Tensor3<T>&, const ForwardTrace<T>&, T, std::span<T>,         \
                              Tensor3<T>*);

PRNU_PCN_INSTANTIATE(float)
PRNU_PCN_INSTANTIATE(double)

#undef PRNU_PCN_INSTANTIATE

} // namespace prnu::pcn
