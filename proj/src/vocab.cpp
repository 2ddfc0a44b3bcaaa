#include "duet/vocab.hpp"

#include <sstream>
#include <stdexcept>

namespace duet {

Vocabulary::Vocabulary()
    : words_{"<pad>",  "<bos>",    "<eos>",    "<unk>",    "<report>", "describe", "the",   "findings",
             "no",     "acute",    ".",        "possible", "mild",     "moderate", "severe", "left",
             "right",  "upper",    "lower",    "opacity",  "ring",     "band",     "gradient", "speckle"} {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<std::size_t> ids;
  for (std::string w; in >> w;) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (std::size_t id : ids) {
    if (id <= kReport) continue;
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

std::vector<std::size_t> Vocabulary::report_prompt() const {
  return {kBos, id("describe"), id("the"), id("findings"), kReport};
}

std::vector<std::size_t> Vocabulary::condition_tokens(std::string_view report) const {
  std::vector<std::size_t> ids{kBos};
  for (std::size_t id : encode(report)) ids.push_back(id);
  ids.push_back(kEos);
  return ids;
}

const Vocabulary& vocabulary() {
  static const Vocabulary v;
  return v;
}

}  // namespace duet
