#pragma once

// Input-space attacks in [0, 1] pixel space.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "adrm/model.hpp"

namespace adrm {

enum class AttackKind { fgsm, pgd_linf, pgd_l2 };
enum class Norm { linf, l2 };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 0.0;
  int steps = 1;
  double step_size = 0.0;
  Norm norm = Norm::linf;
  bool random_start = false;
  std::uint64_t seed = 0;

  static AttackSpec fgsm(double epsilon);
  /// Conventional PGD: 10 steps of 2.5 * epsilon / steps from a seeded random
  /// start inside the ball.
  static AttackSpec pgd(AttackKind kind, double epsilon, std::uint64_t seed = 0, int steps = 10);

  /// Throws invalid-argument when the fields contradict each other.
  void validate() const;
};

/// clip(images + epsilon * sign(grads), 0, 1) with sign(0) = 0. One epsilon
/// per image. Non-finite gradients raise numeric-failure.
Tensor fgsm_step(const Tensor& images, const Tensor& grads, std::span<const double> epsilons);

/// Gradient of the mean cross-entropy with respect to the inputs.
Tensor input_gradient(const ModelState& model, const Tensor& images, std::span<const int> labels);

Tensor fgsm(const ModelState& model, const Tensor& images, std::span<const int> labels, double epsilon);
Tensor fgsm(const ModelState& model, const Tensor& images, std::span<const int> labels,
            std::span<const double> epsilons);

Tensor pgd(const ModelState& model, const Tensor& images, std::span<const int> labels, const AttackSpec& spec);

/// Dispatches on spec.kind.
Tensor attack(const ModelState& model, const Tensor& images, std::span<const int> labels, const AttackSpec& spec);

/// Accuracy after attacking each chunk of `chunk` images. Throws
/// invalid-argument on an empty subset.
double evaluate_under_attack(const ModelState& model, const Tensor& images, std::span<const int> labels,
                             const AttackSpec& spec, std::size_t chunk = 256);

}  // namespace adrm
