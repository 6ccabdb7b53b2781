#include "adrm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adrm/error.hpp"
#include "layers.hpp"

namespace adrm {

namespace {

void default_normalization(ArchitectureSpec& arch) {
  if (arch.id == "linear") return;
  if (!arch.norm_mean.empty()) return;
  if (arch.input.channels == 3) {
    arch.norm_mean = {0.4914, 0.4822, 0.4465};
    arch.norm_std = {0.2470, 0.2435, 0.2616};
  } else {
    arch.norm_mean.assign(arch.input.channels, 0.5);
    arch.norm_std.assign(arch.input.channels, 0.25);
  }
}

void check_images(const ModelState& model, const Tensor& images) {
  const InputShape& in = model.arch.input;
  require(images.rank() == 4 && images.dim(1) == in.channels && images.dim(2) == in.height &&
              images.dim(3) == in.width,
          "images of shape " + shape_string(images.shape()) + " do not match model input [B, " +
              std::to_string(in.channels) + ", " + std::to_string(in.height) + ", " + std::to_string(in.width) + "]");
}

const Network& network_of(const ModelState& model) {
  require(model.network != nullptr, "model has no attached network");
  return *model.network;
}

}  // namespace

std::size_t ModelState::feature_dim() const { return network_of(*this).feature_dim(); }

const std::vector<std::string>& supported_architectures() {
  static const std::vector<std::string> ids{"linear", "mlp", "small-cnn", "resnet32"};
  return ids;
}

ModelState init_model(std::string_view architecture, std::size_t n_classes, std::uint64_t init_seed,
                      InputShape input) {
  if (std::ranges::find(supported_architectures(), architecture) == supported_architectures().end())
    fail(ErrorKind::unsupported_architecture, "unknown architecture '" + std::string(architecture) + "'");
  require(n_classes >= 2, "a classifier needs at least 2 classes");
  ModelState model;
  model.arch.id = std::string(architecture);
  model.arch.input = input;
  model.arch.n_classes = n_classes;
  model.init_seed = init_seed;
  default_normalization(model.arch);
  auto net = std::make_shared<Network>(model.arch, model.params, model.buffers);
  Rng rng(init_seed);
  net->initialize(model.params, model.buffers, rng);
  model.network = std::move(net);
  return model;
}

ModelState grow_head(const ModelState& model, std::size_t n_classes) {
  const std::size_t old_classes = model.n_classes();
  require(n_classes >= old_classes, "the classifier head can only grow");
  if (n_classes == old_classes) return model;

  ModelState grown;
  grown.arch = model.arch;
  grown.arch.n_classes = n_classes;
  grown.init_seed = model.init_seed;
  auto net = std::make_shared<Network>(grown.arch, grown.params, grown.buffers);
  std::ranges::copy(model.buffers.flat(), grown.buffers.flat().begin());
  for (const ParamInfo& info : model.params.infos()) {
    if (info.name == "head.weight" || info.name == "head.bias") continue;
    std::ranges::copy(model.params.view(info.name), grown.params.view(info.name).begin());
  }
  const std::size_t features = net->feature_dim();
  auto old_w = model.params.view("head.weight");
  auto new_w = grown.params.view("head.weight");
  std::ranges::copy(old_w, new_w.begin());
  Rng rng(derive_seed(model.init_seed, old_classes));
  xavier_uniform(new_w.subspan(old_classes * features), features, n_classes, rng);
  auto old_b = model.params.view("head.bias");
  std::ranges::copy(old_b, grown.params.view("head.bias").begin());
  grown.network = std::move(net);
  return grown;
}

void attach_network(ModelState& model) {
  ParamSet params, buffers;
  auto net = std::make_shared<Network>(model.arch, params, buffers);
  require(params.same_layout(model.params), "stored parameters do not match architecture " + model.arch.id);
  require(buffers.same_layout(model.buffers), "stored buffers do not match architecture " + model.arch.id);
  model.network = std::move(net);
}

ForwardOutput forward(const ModelState& model, const Tensor& images) {
  check_images(model, images);
  LayerContext ctx{model.params, model.buffers, Mode::inference, nullptr};
  Network::Tape tape;
  auto [features, logits] = network_of(model).forward(ctx, images, tape);
  return {std::move(logits), std::move(features)};
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, "softmax expects [B, K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] = std::exp(row[j] - m) / z;
  }
  return p;
}

double mean_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(), "logits/labels size mismatch");
  require(!labels.empty(), "cross-entropy over an empty batch");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k, "label out of range");
    const double* row = logits.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    total += m + std::log(z) - row[labels[i]];
  }
  return total / static_cast<double>(n);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "argmax expects [B, K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

LossAndGrads loss_and_grads(const ModelState& model, const Tensor& images, std::span<const int> labels,
                            GradRequest request) {
  check_images(model, images);
  require(images.dim(0) == labels.size(), "images/labels count mismatch");
  require(!labels.empty(), "empty batch");
  const std::size_t k = model.n_classes();
  for (int y : labels) require(y >= 0 && static_cast<std::size_t>(y) < k, "label " + std::to_string(y) + " out of range");

  LossAndGrads out;
  out.updated_buffers = model.buffers;
  LayerContext ctx{model.params, model.buffers, request.mode,
                   request.mode == Mode::train ? &out.updated_buffers : nullptr};
  Network::Tape tape;
  const Network& net = network_of(model);
  auto [features, logits] = net.forward(ctx, images, tape);
  if (!logits.all_finite()) fail(ErrorKind::numeric_failure, "non-finite logits in forward pass");

  out.loss = mean_cross_entropy(logits, labels);
  Tensor dlogits = softmax(logits);
  const double scale = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    dlogits[i * k + static_cast<std::size_t>(labels[i])] -= 1.0;
    for (std::size_t j = 0; j < k; ++j) dlogits[i * k + j] *= scale;
  }
  if (request.params) out.param_grads = model.params.zeros_like();
  out.input_grads = net.backward(ctx, tape, dlogits, request.params ? &out.param_grads : nullptr, request.inputs);
  if (!std::isfinite(out.loss) || !out.input_grads.all_finite() || (request.params && !out.param_grads.all_finite()))
    fail(ErrorKind::numeric_failure, "non-finite loss or gradient");
  out.logits = std::move(logits);
  return out;
}

std::vector<int> predict(const ModelState& model, const Tensor& images, std::size_t chunk) {
  check_images(model, images);
  const std::size_t n = images.dim(0);
  std::vector<int> out;
  out.reserve(n);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const auto preds = argmax_rows(forward(model, images.gather_rows(idx)).logits);
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

}  // namespace adrm
