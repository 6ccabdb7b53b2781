#include "adrm/params.hpp"

#include <algorithm>
#include <cmath>

#include "adrm/error.hpp"

namespace adrm {

std::size_t ParamSet::add(std::string name, Shape shape, double fill) {
  require(!find(name), "duplicate parameter name " + name);
  ParamInfo info{std::move(name), std::move(shape), data_.size(), 0};
  info.size = shape_size(info.shape);
  data_.resize(data_.size() + info.size, fill);
  infos_.push_back(std::move(info));
  return infos_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < infos_.size(); ++i)
    if (infos_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParamSet::index(std::string_view name) const {
  auto i = find(name);
  require(i.has_value(), "unknown parameter " + std::string(name));
  return *i;
}

std::span<double> ParamSet::view(std::size_t i) {
  const ParamInfo& p = infos_.at(i);
  return std::span<double>(data_).subspan(p.offset, p.size);
}

std::span<const double> ParamSet::view(std::size_t i) const {
  const ParamInfo& p = infos_.at(i);
  return std::span<const double>(data_).subspan(p.offset, p.size);
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  out.infos_ = infos_;
  out.data_.assign(data_.size(), 0.0);
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (infos_.size() != other.infos_.size()) return false;
  for (std::size_t i = 0; i < infos_.size(); ++i)
    if (infos_[i].name != other.infos_[i].name || infos_[i].shape != other.infos_[i].shape) return false;
  return true;
}

bool ParamSet::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool ParamSet::operator==(const ParamSet& other) const { return same_layout(other) && data_ == other.data_; }

}  // namespace adrm
