#pragma once

// Small image classifiers with explicit backward passes.
//
// Every architecture starts with a fixed per-channel standardization layer, so
// callers always work in [0, 1] pixel space, and ends with a dense head whose
// input is the penultimate feature vector. Supported ids:
//
//   linear     flatten -> dense head (features are the raw flattened input)
//   mlp        standardize -> dense(128) -> relu -> head
//   small-cnn  standardize -> [conv3x3(16) relu maxpool] -> [conv3x3(32) relu
//              maxpool] -> dense(64) -> relu -> head
//   resnet32   CIFAR-style ResNet-32 (3 stages x 5 basic blocks, batch norm,
//              option-A shortcuts, global average pooling, 64 features)

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adrm/params.hpp"
#include "adrm/tensor.hpp"

namespace adrm {

enum class Mode { inference, train };

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t size() const noexcept { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

struct ArchitectureSpec {
  std::string id;
  InputShape input;
  std::size_t n_classes = 0;
  // Fixed standardization applied as the first layer (not trained).
  std::vector<double> norm_mean;
  std::vector<double> norm_std;
};

class Network;

struct ModelState {
  ArchitectureSpec arch;
  std::uint64_t init_seed = 0;
  ParamSet params;
  // Non-trainable state (batch-norm running statistics).
  ParamSet buffers;
  std::shared_ptr<const Network> network;

  std::size_t n_classes() const noexcept { return arch.n_classes; }
  std::size_t feature_dim() const;
};

const std::vector<std::string>& supported_architectures();

/// Deterministic in `init_seed`. Weights use Xavier-uniform initialization,
/// biases start at zero.
ModelState init_model(std::string_view architecture, std::size_t n_classes, std::uint64_t init_seed,
                      InputShape input = {});

/// Returns a copy whose head covers `n_classes` outputs. Existing head rows
/// are kept; new rows get a fan-based init seeded from the model's init seed.
ModelState grow_head(const ModelState& model, std::size_t n_classes);

/// Rebuilds the layer graph after the parameters were loaded from disk and
/// checks the stored layout against it.
void attach_network(ModelState& model);

struct ForwardOutput {
  Tensor logits;    // [B, K]
  Tensor features;  // [B, F], the head input
};

/// Inference-mode forward pass. Images are [B, C, H, W] in [0, 1].
ForwardOutput forward(const ModelState& model, const Tensor& images);

struct GradRequest {
  bool params = true;
  bool inputs = true;
  Mode mode = Mode::inference;
};

struct LossAndGrads {
  double loss = 0.0;  // mean cross-entropy over the batch
  ParamSet param_grads;
  Tensor input_grads;
  Tensor logits;
  // Running statistics after a train-mode pass; equals model.buffers otherwise.
  ParamSet updated_buffers;
};

LossAndGrads loss_and_grads(const ModelState& model, const Tensor& images, std::span<const int> labels,
                            GradRequest request = {});

double mean_cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor softmax(const Tensor& logits);
std::vector<int> argmax_rows(const Tensor& logits);

/// Class predictions computed in chunks of `chunk` images.
std::vector<int> predict(const ModelState& model, const Tensor& images, std::size_t chunk = 256);

}  // namespace adrm
