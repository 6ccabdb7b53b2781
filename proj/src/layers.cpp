#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "adrm/error.hpp"

namespace adrm {

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* layer) {
  require(x.rank() == rank, std::string(layer) + ": expected rank " + std::to_string(rank) + " input, got " +
                                shape_string(x.shape()));
}

class Standardize final : public Layer {
 public:
  Standardize(std::vector<double> mean, const std::vector<double>& std) : mean_(std::move(mean)) {
    require(mean_.size() == std.size(), "standardize: mean/std size mismatch");
    for (double s : std) {
      require(s > 0.0, "standardize: std must be positive");
      inv_std_.push_back(1.0 / s);
    }
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const LayerContext&, const Tensor& x, LayerTape&) const override {
    require_rank(x, 4, "standardize");
    require(x.dim(1) == mean_.size(), "standardize: channel count mismatch");
    Tensor y(x.shape());
    const std::size_t plane = x.dim(2) * x.dim(3), c = x.dim(1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t ch = (i / plane) % c;
      y[i] = (x[i] - mean_[ch]) * inv_std_[ch];
    }
    return y;
  }

  Tensor backward(const LayerContext&, const LayerTape&, const Tensor& dy, ParamSet*, bool need_dx) const override {
    if (!need_dx) return {};
    Tensor dx(dy.shape());
    const std::size_t plane = dy.dim(2) * dy.dim(3), c = dy.dim(1);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * inv_std_[(i / plane) % c];
    return dx;
  }

 private:
  std::vector<double> mean_, inv_std_;
};

class Flatten final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

  Tensor forward(const LayerContext&, const Tensor& x, LayerTape& tape) const override {
    tape.in_shape = x.shape();
    return x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
  }

  Tensor backward(const LayerContext&, const LayerTape& tape, const Tensor& dy, ParamSet*, bool need_dx) const override {
    if (!need_dx) return {};
    return dy.reshaped(tape.in_shape);
  }
};

class Relu final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const LayerContext&, const Tensor& x, LayerTape& tape) const override {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    tape.saved = {y};
    return y;
  }

  Tensor backward(const LayerContext&, const LayerTape& tape, const Tensor& dy, ParamSet*, bool need_dx) const override {
    if (!need_dx) return {};
    const Tensor& y = tape.saved.front();
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
    return dx;
  }
};

class Conv2d final : public Layer {
 public:
  Conv2d(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias)
      : in_(in), out_(out), kernel_(kernel), stride_(stride), padding_(padding) {
    weight_ = params.add(prefix + ".weight", {out, in, kernel, kernel});
    if (bias) bias_ = params.add(prefix + ".bias", {out});
  }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 3 && in[0] == in_, "conv2d: input channel mismatch");
    const auto g = geometry(1, in[1], in[2]);
    return {out_, g.out_height(), g.out_width()};
  }

  Tensor forward(const LayerContext& ctx, const Tensor& x, LayerTape& tape) const override {
    require_rank(x, 4, "conv2d");
    require(x.dim(1) == in_, "conv2d: input channel mismatch");
    const auto g = geometry(x.dim(0), x.dim(2), x.dim(3));
    Tensor y({g.batch, out_, g.out_height(), g.out_width()});
    kernels::conv2d_forward(g, x.values(), ctx.params.view(weight_), bias_span(ctx.params), y.values());
    tape.saved = {x};
    return y;
  }

  Tensor backward(const LayerContext& ctx, const LayerTape& tape, const Tensor& dy, ParamSet* grads,
                  bool need_dx) const override {
    const Tensor& x = tape.saved.front();
    const auto g = geometry(x.dim(0), x.dim(2), x.dim(3));
    if (grads) {
      std::span<double> db = has_bias() ? grads->view(bias_) : std::span<double>();
      kernels::conv2d_backward_params(g, x.values(), dy.values(), grads->view(weight_), db);
    }
    if (!need_dx) return {};
    Tensor dx(x.shape());
    kernels::conv2d_backward_input(g, dy.values(), ctx.params.view(weight_), dx.values());
    return dx;
  }

  void initialize(ParamSet& params, ParamSet&, Rng& rng) const override {
    xavier_uniform(params.view(weight_), in_ * kernel_ * kernel_, out_ * kernel_ * kernel_, rng);
    if (has_bias()) std::ranges::fill(params.view(bias_), 0.0);
  }

 private:
  bool has_bias() const noexcept { return bias_ != kNone; }
  std::span<const double> bias_span(const ParamSet& p) const {
    return has_bias() ? p.view(bias_) : std::span<const double>();
  }
  kernels::ConvGeometry geometry(std::size_t batch, std::size_t h, std::size_t w) const {
    return {batch, in_, h, w, out_, kernel_, stride_, padding_};
  }

  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t in_, out_, kernel_, stride_, padding_;
  std::size_t weight_ = kNone, bias_ = kNone;
};

class MaxPool2 final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override { return {in[0], in[1] / 2, in[2] / 2}; }

  Tensor forward(const LayerContext&, const Tensor& x, LayerTape& tape) const override {
    require_rank(x, 4, "maxpool");
    Tensor y({x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2});
    tape.indices.resize(y.size());
    kernels::maxpool2_forward(x.dim(0) * x.dim(1), x.dim(2), x.dim(3), x.values(), y.values(), tape.indices);
    tape.in_shape = x.shape();
    return y;
  }

  Tensor backward(const LayerContext&, const LayerTape& tape, const Tensor& dy, ParamSet*, bool need_dx) const override {
    if (!need_dx) return {};
    Tensor dx(tape.in_shape);
    kernels::maxpool2_backward(dy.values(), tape.indices, dx.values());
    return dx;
  }
};

class GlobalAvgPool final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override { return {in[0]}; }

  Tensor forward(const LayerContext&, const Tensor& x, LayerTape& tape) const override {
    require_rank(x, 4, "avgpool");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
      y[i] = acc / static_cast<double>(plane);
    }
    tape.in_shape = x.shape();
    return y;
  }

  Tensor backward(const LayerContext&, const LayerTape& tape, const Tensor& dy, ParamSet*, bool need_dx) const override {
    if (!need_dx) return {};
    Tensor dx(tape.in_shape);
    const std::size_t plane = tape.in_shape[2] * tape.in_shape[3];
    for (std::size_t i = 0; i < dy.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] = dy[i] / static_cast<double>(plane);
    return dx;
  }
};

class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(ParamSet& params, ParamSet& buffers, const std::string& prefix, std::size_t channels)
      : channels_(channels) {
    gamma_ = params.add(prefix + ".weight", {channels}, 1.0);
    beta_ = params.add(prefix + ".bias", {channels});
    mean_ = buffers.add(prefix + ".running_mean", {channels});
    var_ = buffers.add(prefix + ".running_var", {channels}, 1.0);
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const LayerContext& ctx, const Tensor& x, LayerTape& tape) const override {
    require_rank(x, 4, "batchnorm");
    const std::size_t n = x.dim(0), c = channels_, plane = x.dim(2) * x.dim(3);
    const double count = static_cast<double>(n * plane);
    auto gamma = ctx.params.view(gamma_);
    auto beta = ctx.params.view(beta_);
    std::vector<double> mean(c), inv_std(c);
    if (ctx.mode == Mode::train) {
      require(n * plane > 1, "batchnorm: train mode needs more than one value per channel");
      std::vector<double> var(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) s += x[(i * c + ch) * plane + p];
        mean[ch] = s / count;
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) {
            const double d = x[(i * c + ch) * plane + p] - mean[ch];
            v += d * d;
          }
        var[ch] = v / count;
        inv_std[ch] = 1.0 / std::sqrt(var[ch] + kEps);
      }
      if (ctx.buffers_out) {
        auto rm = ctx.buffers_out->view(mean_);
        auto rv = ctx.buffers_out->view(var_);
        for (std::size_t ch = 0; ch < c; ++ch) {
          rm[ch] = (1.0 - kMomentum) * rm[ch] + kMomentum * mean[ch];
          rv[ch] = (1.0 - kMomentum) * rv[ch] + kMomentum * var[ch] * count / (count - 1.0);
        }
      }
    } else {
      auto rm = ctx.buffers.view(mean_);
      auto rv = ctx.buffers.view(var_);
      for (std::size_t ch = 0; ch < c; ++ch) {
        mean[ch] = rm[ch];
        inv_std[ch] = 1.0 / std::sqrt(rv[ch] + kEps);
      }
    }
    Tensor xhat(x.shape()), y(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t k = (i * c + ch) * plane + p;
          xhat[k] = (x[k] - mean[ch]) * inv_std[ch];
          y[k] = gamma[ch] * xhat[k] + beta[ch];
        }
    tape.saved = {std::move(xhat), Tensor({c}, std::move(inv_std))};
    return y;
  }

  Tensor backward(const LayerContext& ctx, const LayerTape& tape, const Tensor& dy, ParamSet* grads,
                  bool need_dx) const override {
    const Tensor& xhat = tape.saved[0];
    const Tensor& inv_std = tape.saved[1];
    const std::size_t n = dy.dim(0), c = channels_, plane = dy.dim(2) * dy.dim(3);
    const double count = static_cast<double>(n * plane);
    auto gamma = ctx.params.view(gamma_);
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t k = (i * c + ch) * plane + p;
          sum_dy[ch] += dy[k];
          sum_dy_xhat[ch] += dy[k] * xhat[k];
        }
    if (grads) {
      std::ranges::copy(sum_dy_xhat, grads->view(gamma_).begin());
      std::ranges::copy(sum_dy, grads->view(beta_).begin());
    }
    if (!need_dx) return {};
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double scale = gamma[ch] * inv_std[ch];
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t k = (i * c + ch) * plane + p;
          if (ctx.mode == Mode::train)
            dx[k] = scale * (dy[k] - sum_dy[ch] / count - xhat[k] * sum_dy_xhat[ch] / count);
          else
            dx[k] = scale * dy[k];
        }
      }
    return dx;
  }

 private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  std::size_t channels_, gamma_, beta_, mean_, var_;
};

// Basic residual block with an option-A shortcut (strided subsampling plus
// zero channel padding) when the shape changes.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(ParamSet& params, ParamSet& buffers, const std::string& prefix, std::size_t in, std::size_t out,
                std::size_t stride)
      : in_(in), out_(out), stride_(stride),
        conv1_(params, prefix + ".conv1", in, out, 3, stride, 1, false),
        bn1_(params, buffers, prefix + ".bn1", out),
        conv2_(params, prefix + ".conv2", out, out, 3, 1, 1, false),
        bn2_(params, buffers, prefix + ".bn2", out) {
    require(out >= in && (out - in) % 2 == 0, "residual block: unsupported channel change");
  }

  Shape output_shape(const Shape& in) const override { return conv1_.output_shape(in); }

  Tensor forward(const LayerContext& ctx, const Tensor& x, LayerTape& tape) const override {
    tape.children.assign(4, {});
    Tensor h = conv1_.forward(ctx, x, tape.children[0]);
    h = bn1_.forward(ctx, h, tape.children[1]);
    for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    Tensor mid = h;
    h = conv2_.forward(ctx, h, tape.children[2]);
    h = bn2_.forward(ctx, h, tape.children[3]);
    const Tensor s = shortcut(x, h.shape());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double v = h[i] + s[i];
      h[i] = v > 0.0 ? v : 0.0;
    }
    tape.saved = {std::move(mid), h};
    return h;
  }

  Tensor backward(const LayerContext& ctx, const LayerTape& tape, const Tensor& dy, ParamSet* grads,
                  bool need_dx) const override {
    const Tensor& mid = tape.saved[0];
    const Tensor& out = tape.saved[1];
    Tensor d(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) d[i] = out[i] > 0.0 ? dy[i] : 0.0;
    Tensor g = bn2_.backward(ctx, tape.children[3], d, grads, true);
    g = conv2_.backward(ctx, tape.children[2], g, grads, true);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mid[i] <= 0.0) g[i] = 0.0;
    g = bn1_.backward(ctx, tape.children[1], g, grads, true);
    Tensor dx = conv1_.backward(ctx, tape.children[0], g, grads, need_dx);
    if (!need_dx) return {};
    add_shortcut_grad(d, dx);
    return dx;
  }

  void initialize(ParamSet& params, ParamSet& buffers, Rng& rng) const override {
    conv1_.initialize(params, buffers, rng);
    conv2_.initialize(params, buffers, rng);
  }

 private:
  Tensor shortcut(const Tensor& x, const Shape& out_shape) const {
    if (stride_ == 1 && in_ == out_) return x;
    Tensor s(out_shape);
    const std::size_t pad = (out_ - in_) / 2, h = x.dim(2), w = x.dim(3);
    const std::size_t ho = out_shape[2], wo = out_shape[3];
    for (std::size_t n = 0; n < x.dim(0); ++n)
      for (std::size_t c = 0; c < in_; ++c)
        for (std::size_t y = 0; y < ho; ++y)
          for (std::size_t xx = 0; xx < wo; ++xx)
            s[((n * out_ + c + pad) * ho + y) * wo + xx] = x[((n * in_ + c) * h + y * stride_) * w + xx * stride_];
    return s;
  }

  void add_shortcut_grad(const Tensor& d, Tensor& dx) const {
    if (stride_ == 1 && in_ == out_) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d[i];
      return;
    }
    const std::size_t pad = (out_ - in_) / 2, h = dx.dim(2), w = dx.dim(3);
    const std::size_t ho = d.dim(2), wo = d.dim(3);
    for (std::size_t n = 0; n < dx.dim(0); ++n)
      for (std::size_t c = 0; c < in_; ++c)
        for (std::size_t y = 0; y < ho; ++y)
          for (std::size_t xx = 0; xx < wo; ++xx)
            dx[((n * in_ + c) * h + y * stride_) * w + xx * stride_] += d[((n * out_ + c + pad) * ho + y) * wo + xx];
  }

  std::size_t in_, out_, stride_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
};

}  // namespace

void xavier_uniform(std::span<double> weights, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : weights) w = dist(rng);
}

void Layer::initialize(ParamSet&, ParamSet&, Rng&) const {}

Dense::Dense(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out) : in_(in), out_(out) {
  weight_ = params.add(prefix + ".weight", {out, in});
  bias_ = params.add(prefix + ".bias", {out});
}

Shape Dense::output_shape(const Shape& in) const {
  require(in.size() == 1 && in[0] == in_, "dense: input size mismatch");
  return {out_};
}

Tensor Dense::forward(const LayerContext& ctx, const Tensor& x, LayerTape& tape) const {
  require(x.rank() == 2 && x.dim(1) == in_,
          "dense: expected [B, " + std::to_string(in_) + "] input, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  Tensor y({n, out_});
  kernels::matmul_nt(x.values(), ctx.params.view(weight_), y.values(), n, out_, in_);
  auto b = ctx.params.view(bias_);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out_; ++j) y[i * out_ + j] += b[j];
  tape.saved = {x};
  return y;
}

Tensor Dense::backward(const LayerContext& ctx, const LayerTape& tape, const Tensor& dy, ParamSet* grads,
                       bool need_dx) const {
  const Tensor& x = tape.saved.front();
  const std::size_t n = x.dim(0);
  if (grads) {
    kernels::matmul_tn(dy.values(), x.values(), grads->view(weight_), out_, in_, n);
    auto db = grads->view(bias_);
    std::ranges::fill(db, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_; ++j) db[j] += dy[i * out_ + j];
  }
  if (!need_dx) return {};
  Tensor dx({n, in_});
  kernels::matmul_nn(dy.values(), ctx.params.view(weight_), dx.values(), n, in_, out_);
  return dx;
}

void Dense::initialize(ParamSet& params, ParamSet&, Rng& rng) const {
  xavier_uniform(params.view(weight_), in_, out_, rng);
  std::ranges::fill(params.view(bias_), 0.0);
}

Network::Network(const ArchitectureSpec& arch, ParamSet& params, ParamSet& buffers) {
  const InputShape& in = arch.input;
  require(in.channels > 0 && in.height > 0 && in.width > 0, "empty input shape");
  auto standardize = [&] {
    std::vector<double> mean = arch.norm_mean, std = arch.norm_std;
    if (mean.empty()) mean.assign(in.channels, 0.0);
    if (std.empty()) std.assign(in.channels, 1.0);
    require(mean.size() == in.channels && std.size() == in.channels,
            "normalization constants must have one entry per channel");
    body_.push_back(std::make_unique<Standardize>(mean, std));
  };

  if (arch.id == "linear") {
    body_.push_back(std::make_unique<Flatten>());
  } else if (arch.id == "mlp") {
    standardize();
    body_.push_back(std::make_unique<Flatten>());
    body_.push_back(std::make_unique<Dense>(params, "fc1", in.size(), 128));
    body_.push_back(std::make_unique<Relu>());
  } else if (arch.id == "small-cnn") {
    require(in.height >= 4 && in.width >= 4, "small-cnn needs inputs of at least 4x4");
    standardize();
    body_.push_back(std::make_unique<Conv2d>(params, "conv1", in.channels, 16, 3, 1, 1, true));
    body_.push_back(std::make_unique<Relu>());
    body_.push_back(std::make_unique<MaxPool2>());
    body_.push_back(std::make_unique<Conv2d>(params, "conv2", 16, 32, 3, 1, 1, true));
    body_.push_back(std::make_unique<Relu>());
    body_.push_back(std::make_unique<MaxPool2>());
    body_.push_back(std::make_unique<Flatten>());
    body_.push_back(std::make_unique<Dense>(params, "fc1", 32 * (in.height / 4) * (in.width / 4), 64));
    body_.push_back(std::make_unique<Relu>());
  } else if (arch.id == "resnet32") {
    standardize();
    body_.push_back(std::make_unique<Conv2d>(params, "stem.conv", in.channels, 16, 3, 1, 1, false));
    body_.push_back(std::make_unique<BatchNorm2d>(params, buffers, "stem.bn", 16));
    body_.push_back(std::make_unique<Relu>());
    std::size_t channels = 16;
    const std::size_t widths[] = {16, 32, 64};
    for (std::size_t stage = 0; stage < 3; ++stage) {
      for (std::size_t b = 0; b < 5; ++b) {
        const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
        const std::string name = "stage" + std::to_string(stage + 1) + "." + std::to_string(b);
        body_.push_back(std::make_unique<ResidualBlock>(params, buffers, name, channels, widths[stage], stride));
        channels = widths[stage];
      }
    }
    body_.push_back(std::make_unique<GlobalAvgPool>());
  } else {
    fail(ErrorKind::unsupported_architecture, "unknown architecture '" + arch.id + "'");
  }

  Shape shape{in.channels, in.height, in.width};
  for (const auto& layer : body_) shape = layer->output_shape(shape);
  require(shape.size() == 1, "network body must end in a flat feature vector");
  feature_dim_ = shape[0];
  head_ = std::make_unique<Dense>(params, "head", feature_dim_, arch.n_classes);
}

std::pair<Tensor, Tensor> Network::forward(const LayerContext& ctx, const Tensor& images, Tape& tape) const {
  tape.body.assign(body_.size(), {});
  Tensor h = images;
  for (std::size_t i = 0; i < body_.size(); ++i) h = body_[i]->forward(ctx, h, tape.body[i]);
  Tensor logits = head_->forward(ctx, h, tape.head);
  return {std::move(h), std::move(logits)};
}

Tensor Network::backward(const LayerContext& ctx, const Tape& tape, const Tensor& dlogits, ParamSet* grads,
                         bool need_dx) const {
  if (grads == nullptr && !need_dx) return {};
  // Only the first layer may skip its input gradient.
  Tensor g = head_->backward(ctx, tape.head, dlogits, grads, need_dx || !body_.empty());
  for (std::size_t i = body_.size(); i-- > 0;) g = body_[i]->backward(ctx, tape.body[i], g, grads, need_dx || i > 0);
  return need_dx ? g : Tensor{};
}

void Network::initialize(ParamSet& params, ParamSet& buffers, Rng& rng) const {
  for (const auto& layer : body_) layer->initialize(params, buffers, rng);
  head_->initialize(params, buffers, rng);
}

}  // namespace adrm
