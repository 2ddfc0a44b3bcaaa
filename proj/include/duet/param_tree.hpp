#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "duet/tensor.hpp"

namespace duet {

enum class Branch { understanding, generation };

std::string_view to_string(Branch b);
Branch parse_branch(std::string_view s);

// Named trainable tensors, each tagged with the branch that owns it.
// Iteration order is lexicographic by name.
class ParamTree {
 public:
  struct Entry {
    Tensor value;
    Branch branch;
  };

  Tensor& add(const std::string& name, Tensor value, Branch branch);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  Branch branch(const std::string& name) const;

  std::vector<std::string> names() const;
  std::vector<std::string> names(Branch b) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void zero_grad();
  // Leaves in `trainable` require grad; everything else does not.
  void set_trainable(const std::set<std::string>& trainable);
  // Independent copy of all values (no grads).
  ParamTree clone() const;

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace duet
