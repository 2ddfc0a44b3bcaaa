#include "duet/param_tree.hpp"

#include <stdexcept>

namespace duet {

std::string_view to_string(Branch b) { return b == Branch::understanding ? "understanding" : "generation"; }

Branch parse_branch(std::string_view s) {
  if (s == "understanding") return Branch::understanding;
  if (s == "generation") return Branch::generation;
  throw std::invalid_argument("unknown branch tag '" + std::string(s) + "'");
}

Tensor& ParamTree::add(const std::string& name, Tensor value, Branch branch) {
  auto [it, inserted] = entries_.emplace(name, Entry{std::move(value), branch});
  if (!inserted) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  return it->second.value;
}

const Tensor& ParamTree::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.value;
}

Tensor& ParamTree::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.value;
}

Branch ParamTree::branch(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.branch;
}

std::vector<std::string> ParamTree::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamTree::names(Branch b) const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.branch == b) out.push_back(name);
  return out;
}

std::size_t ParamTree::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.numel();
  return n;
}

void ParamTree::zero_grad() {
  for (auto& [_, e] : entries_)
    if (e.value.requires_grad()) e.value.zero_grad();
}

void ParamTree::set_trainable(const std::set<std::string>& trainable) {
  for (const auto& name : trainable)
    if (!contains(name)) throw std::out_of_range("no parameter named '" + name + "'");
  for (auto& [name, e] : entries_) e.value.set_requires_grad(trainable.count(name) > 0);
}

ParamTree ParamTree::clone() const {
  ParamTree out;
  for (const auto& [name, e] : entries_) out.add(name, e.value.detach(), e.branch);
  return out;
}

}  // namespace duet
