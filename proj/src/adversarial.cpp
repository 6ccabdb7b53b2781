#include "adrm/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "adrm/error.hpp"
#include "adrm/rng.hpp"

namespace adrm {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd_linf: return "pgd_linf";
    case AttackKind::pgd_l2: return "pgd_l2";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "pgd_linf") return AttackKind::pgd_linf;
  if (name == "pgd_l2") return AttackKind::pgd_l2;
  fail(ErrorKind::invalid_argument, "unknown attack kind '" + std::string(name) + "'");
}

AttackSpec AttackSpec::fgsm(double epsilon) {
  AttackSpec s;
  s.epsilon = epsilon;
  return s;
}

AttackSpec AttackSpec::pgd(AttackKind kind, double epsilon, std::uint64_t seed, int steps) {
  require(kind != AttackKind::fgsm, "AttackSpec::pgd needs a pgd kind");
  AttackSpec s;
  s.kind = kind;
  s.epsilon = epsilon;
  s.steps = steps;
  s.step_size = 2.5 * epsilon / steps;
  s.norm = kind == AttackKind::pgd_l2 ? Norm::l2 : Norm::linf;
  s.random_start = true;
  s.seed = seed;
  return s;
}

void AttackSpec::validate() const {
  require(std::isfinite(epsilon) && epsilon >= 0.0, "attack epsilon must be finite and non-negative");
  require(steps >= 1, "attack steps must be at least 1");
  if (kind == AttackKind::fgsm) {
    require(steps == 1, "fgsm is a single-step attack");
    require(norm == Norm::linf, "fgsm is an L-infinity attack");
    return;
  }
  require(step_size > 0.0 || epsilon == 0.0, "pgd step size must be positive");
  require((kind == AttackKind::pgd_l2) == (norm == Norm::l2), "pgd kind and norm disagree");
}

namespace {

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

void require_finite_grads(const Tensor& g) {
  if (!g.all_finite()) fail(ErrorKind::numeric_failure, "input gradient has non-finite values");
}

double row_norm(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return std::sqrt(s);
}

}  // namespace

Tensor fgsm_step(const Tensor& images, const Tensor& grads, std::span<const double> epsilons) {
  require(images.shape() == grads.shape(), "gradient shape differs from image shape");
  require(images.rank() >= 1 && epsilons.size() == images.dim(0), "need one epsilon per image");
  require_finite_grads(grads);
  Tensor out = images;
  const std::size_t stride = images.row_size();
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    require(epsilons[i] >= 0.0, "epsilon must be non-negative");
    for (std::size_t k = i * stride; k < (i + 1) * stride; ++k)
      out[k] = std::clamp(images[k] + epsilons[i] * sign(grads[k]), 0.0, 1.0);
  }
  return out;
}

Tensor input_gradient(const ModelState& model, const Tensor& images, std::span<const int> labels) {
  auto r = loss_and_grads(model, images, labels, {.params = false, .inputs = true, .mode = Mode::inference});
  return std::move(r.input_grads);
}

Tensor fgsm(const ModelState& model, const Tensor& images, std::span<const int> labels,
            std::span<const double> epsilons) {
  return fgsm_step(images, input_gradient(model, images, labels), epsilons);
}

Tensor fgsm(const ModelState& model, const Tensor& images, std::span<const int> labels, double epsilon) {
  require(images.rank() >= 1, "images need a batch axis");
  const std::vector<double> eps(images.dim(0), epsilon);
  return fgsm(model, images, labels, eps);
}

Tensor pgd(const ModelState& model, const Tensor& images, std::span<const int> labels, const AttackSpec& spec) {
  spec.validate();
  require(spec.kind != AttackKind::fgsm, "pgd needs a pgd attack spec");
  const double eps = spec.epsilon;
  Tensor x = images;
  if (eps == 0.0) return x;
  const std::size_t n = images.dim(0), stride = images.row_size();

  // Pulls x back into the ball around the originals, then into [0, 1]. For
  // L-infinity the clamp keeps in-ball values untouched, so a single step of
  // size epsilon reproduces fgsm exactly.
  auto project = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      const auto x0 = images.row(i);
      if (spec.norm == Norm::linf) {
        for (std::size_t k = 0; k < stride; ++k) xi[k] = std::clamp(xi[k], x0[k] - eps, x0[k] + eps);
      } else {
        double s = 0.0;
        for (std::size_t k = 0; k < stride; ++k) s += (xi[k] - x0[k]) * (xi[k] - x0[k]);
        const double norm = std::sqrt(s);
        if (norm > eps) {
          const double scale = eps / norm;
          for (std::size_t k = 0; k < stride; ++k) xi[k] = x0[k] + (xi[k] - x0[k]) * scale;
        }
      }
      for (double& v : xi) v = std::clamp(v, 0.0, 1.0);
    }
  };

  if (spec.random_start) {
    Rng rng(spec.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> radius(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      if (spec.norm == Norm::linf) {
        for (double& v : xi) v += eps * u(rng);
      } else {
        std::vector<double> dir(stride);
        for (double& d : dir) d = g(rng);
        const double len = row_norm(dir);
        const double r = eps * radius(rng);
        if (len > 0.0)
          for (std::size_t k = 0; k < stride; ++k) xi[k] += r * dir[k] / len;
      }
    }
    project();
  }

  for (int step = 0; step < spec.steps; ++step) {
    const Tensor grads = input_gradient(model, x, labels);
    require_finite_grads(grads);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      const auto gi = grads.row(i);
      if (spec.norm == Norm::linf) {
        for (std::size_t k = 0; k < stride; ++k) xi[k] += spec.step_size * sign(gi[k]);
      } else {
        const double len = row_norm(gi);
        if (len == 0.0) continue;
        for (std::size_t k = 0; k < stride; ++k) xi[k] += spec.step_size * gi[k] / len;
      }
    }
    project();
  }
  return x;
}

Tensor attack(const ModelState& model, const Tensor& images, std::span<const int> labels, const AttackSpec& spec) {
  spec.validate();
  if (spec.kind == AttackKind::fgsm) return fgsm(model, images, labels, spec.epsilon);
  return pgd(model, images, labels, spec);
}

double evaluate_under_attack(const ModelState& model, const Tensor& images, std::span<const int> labels,
                             const AttackSpec& spec, std::size_t chunk) {
  require(!labels.empty(), "cannot evaluate an attack on an empty subset");
  require(images.rank() == 4 && images.dim(0) == labels.size(), "images and labels disagree in count");
  require(chunk >= 1, "chunk must be positive");
  spec.validate();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < labels.size(); start += chunk) {
    const std::size_t end = std::min(labels.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor x = images.gather_rows(idx);
    const auto y = labels.subspan(start, end - start);
    // Chunks draw distinct random starts.
    AttackSpec s = spec;
    s.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(start));
    const auto pred = predict(model, spec.epsilon == 0.0 ? x : attack(model, x, y, s));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace adrm
