#pragma once

// Layer graph used by model.cpp. Layers are immutable descriptors: parameters
// live in the ModelState's ParamSet and everything a backward pass needs is
// recorded in a LayerTape, so one network can serve concurrent evaluations.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "adrm/kernels.hpp"
#include "adrm/model.hpp"
#include "adrm/rng.hpp"

namespace adrm {

struct LayerTape {
  Shape in_shape;
  std::vector<Tensor> saved;
  std::vector<std::size_t> indices;
  std::vector<LayerTape> children;
};

struct LayerContext {
  const ParamSet& params;
  const ParamSet& buffers;
  Mode mode;
  ParamSet* buffers_out;  // receives updated running statistics in train mode
};

class Layer {
 public:
  virtual ~Layer() = default;
  // Per-example output shape for a per-example input shape.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const LayerContext& ctx, const Tensor& x, LayerTape& tape) const = 0;
  // grads may be null (no parameter gradients wanted). When need_dx is false
  // the returned tensor may be empty.
  virtual Tensor backward(const LayerContext& ctx, const LayerTape& tape, const Tensor& dy, ParamSet* grads,
                          bool need_dx) const = 0;
  virtual void initialize(ParamSet& params, ParamSet& buffers, Rng& rng) const;
};

class Dense final : public Layer {
 public:
  Dense(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out);
  Shape output_shape(const Shape& in) const override;
  Tensor forward(const LayerContext& ctx, const Tensor& x, LayerTape& tape) const override;
  Tensor backward(const LayerContext& ctx, const LayerTape& tape, const Tensor& dy, ParamSet* grads,
                  bool need_dx) const override;
  void initialize(ParamSet& params, ParamSet& buffers, Rng& rng) const override;

  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }

 private:
  std::size_t in_, out_, weight_, bias_;
};

class Network {
 public:
  Network(const ArchitectureSpec& arch, ParamSet& params, ParamSet& buffers);

  struct Tape {
    std::vector<LayerTape> body;
    LayerTape head;
  };

  // Returns {features, logits}.
  std::pair<Tensor, Tensor> forward(const LayerContext& ctx, const Tensor& images, Tape& tape) const;
  Tensor backward(const LayerContext& ctx, const Tape& tape, const Tensor& dlogits, ParamSet* grads,
                  bool need_dx) const;
  void initialize(ParamSet& params, ParamSet& buffers, Rng& rng) const;

  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const Dense& head() const noexcept { return *head_; }

 private:
  std::vector<std::unique_ptr<Layer>> body_;
  std::unique_ptr<Dense> head_;
  std::size_t feature_dim_ = 0;
};

void xavier_uniform(std::span<double> weights, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace adrm
