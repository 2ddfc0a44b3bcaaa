#pragma once

// Word-level vocabulary over the closed report language. Special tokens
// occupy the lowest ids.

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace duet {

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kReport = 4;  // opens the report field

  Vocabulary();

  std::size_t size() const { return words_.size(); }
  std::size_t id(std::string_view word) const;  // kUnk when unknown
  const std::string& word(std::size_t id) const;

  // Whitespace tokenization; no specials added.
  std::vector<std::size_t> encode(std::string_view text) const;
  // Joins with single spaces; specials are dropped.
  std::string decode(const std::vector<std::size_t>& ids) const;

  // [BOS, describe, the, findings, <report>]
  std::vector<std::size_t> report_prompt() const;
  // [BOS, words..., EOS], the conditioning sequence for generation.
  std::vector<std::size_t> condition_tokens(std::string_view report) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

const Vocabulary& vocabulary();

}  // namespace duet
