#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rifle/tensor.hpp"

namespace rifle {

/// BACKBONE parameters come from the source model; FC is the classification
/// head that re-initialization targets.
enum class Role { kBackbone, kFc };

const char* to_string(Role role);

struct ParamEntry {
  std::string name;
  Role role = Role::kBackbone;
  Tensor value;
};

/// Named, ordered parameter collection with an optional frozen starting point
/// (the pre-trained weights) kept in parallel to the live values.
///
/// Invariants: names are unique; when populated, start_point(i) has the shape
/// of entry i; FC entries form one contiguous run.
class ParamStore {
 public:
  ParamStore() = default;

  /// Appends an entry. Throws InvalidArgument on a duplicate name and
  /// ContractViolation once a start point has been frozen.
  void add(std::string name, Role role, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  ParamEntry& entry(std::size_t i) { return entries_.at(i); }
  const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const;
  /// Throws InvalidArgument when the name is absent.
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Copies the current values into the start point.
  void freeze_start_point();
  void clear_start_point() { start_point_.clear(); }
  bool has_start_point() const { return !start_point_.empty(); }
  /// Throws ContractViolation when the start point is not populated.
  const Tensor& start_point(std::size_t i) const;

  /// Half-open index range [first, last) of the FC group. Throws
  /// ContractViolation when there is no FC entry or the group is split.
  std::pair<std::size_t, std::size_t> fc_range() const;
  bool has_fc_group() const;

  /// Same names, roles and shapes, all values zero, no start point.
  ParamStore zeros_like() const;

  std::size_t parameter_count() const;

  /// Throws ContractViolation if another store's names/shapes differ.
  void require_same_layout(const ParamStore& other, const char* context) const;

 private:
  std::vector<ParamEntry> entries_;
  std::vector<Tensor> start_point_;
};

/// Equal names, roles and bitwise-equal values (start points ignored).
bool bitwise_equal(const ParamStore& a, const ParamStore& b);

}  // namespace rifle
