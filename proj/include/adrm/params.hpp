#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adrm/tensor.hpp"

namespace adrm {

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Named dense arrays stored back to back in one flat vector, so optimizer
// updates and gradient checks can treat all parameters as a single span.
class ParamSet {
 public:
  std::size_t add(std::string name, Shape shape, double fill = 0.0);

  std::size_t count() const noexcept { return infos_.size(); }
  const ParamInfo& info(std::size_t i) const { return infos_.at(i); }
  const std::vector<ParamInfo>& infos() const noexcept { return infos_; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index(std::string_view name) const;

  std::span<double> view(std::size_t i);
  std::span<const double> view(std::size_t i) const;
  std::span<double> view(std::string_view name) { return view(index(name)); }
  std::span<const double> view(std::string_view name) const { return view(index(name)); }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  std::size_t total_size() const noexcept { return data_.size(); }

  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;
  bool operator==(const ParamSet& other) const;

 private:
  std::vector<ParamInfo> infos_;
  std::vector<double> data_;
};

}  // namespace adrm
