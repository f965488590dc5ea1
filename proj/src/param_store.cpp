#include "rifle/param_store.hpp"

#include "rifle/errors.hpp"

namespace rifle {

const char* to_string(Role role) { return role == Role::kFc ? "FC" : "BACKBONE"; }

void ParamStore::add(std::string name, Role role, Tensor value) {
  if (has_start_point()) {
    throw ContractViolation("ParamStore::add after the start point was frozen");
  }
  if (find(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), role, std::move(value)});
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

Tensor& ParamStore::value(const std::string& name) {
  auto idx = find(name);
  if (!idx) throw InvalidArgument("no parameter named '" + name + "'");
  return entries_[*idx].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto idx = find(name);
  if (!idx) throw InvalidArgument("no parameter named '" + name + "'");
  return entries_[*idx].value;
}

void ParamStore::freeze_start_point() {
  start_point_.clear();
  start_point_.reserve(entries_.size());
  for (const auto& e : entries_) start_point_.push_back(e.value);
}

const Tensor& ParamStore::start_point(std::size_t i) const {
  if (!has_start_point()) throw ContractViolation("parameter start point is not populated");
  return start_point_.at(i);
}

std::pair<std::size_t, std::size_t> ParamStore::fc_range() const {
  std::size_t first = entries_.size();
  std::size_t last = entries_.size();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].role != Role::kFc) continue;
    if (first == entries_.size()) {
      first = i;
    } else if (last != entries_.size()) {
      throw ContractViolation("FC parameters do not form one contiguous group");
    }
    if (i + 1 == entries_.size() || entries_[i + 1].role != Role::kFc) last = i + 1;
  }
  if (first == entries_.size()) throw ContractViolation("parameter store has no FC group");
  return {first, last};
}

bool ParamStore::has_fc_group() const {
  for (const auto& e : entries_) {
    if (e.role == Role::kFc) return true;
  }
  return false;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  out.entries_.reserve(entries_.size());
  for (const auto& e : entries_) out.entries_.push_back({e.name, e.role, Tensor(e.value.shape())});
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::require_same_layout(const ParamStore& other, const char* context) const {
  if (other.size() != size()) {
    throw ContractViolation(std::string(context) + ": stores have " + std::to_string(size()) +
                            " and " + std::to_string(other.size()) + " entries");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.shape() != b.value.shape()) {
      throw ContractViolation(std::string(context) + ": entry " + std::to_string(i) + " is '" +
                              a.name + "' " + rifle::to_string(a.value.shape()) + " vs '" +
                              b.name + "' " + rifle::to_string(b.value.shape()));
    }
  }
}

bool bitwise_equal(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entry(i);
    const auto& y = b.entry(i);
    if (x.name != y.name || x.role != y.role || !bitwise_equal(x.value, y.value)) return false;
  }
  return true;
}

}  // namespace rifle
