#include "mdasr/vocab.hpp"

#include <algorithm>
#include <stdexcept>

namespace mdasr {

Vocab::Vocab(std::string chars, int prompt_tokens) : chars_(std::move(chars)), prompt_tokens_(prompt_tokens) {
  if (chars_.empty()) throw std::invalid_argument("vocab: empty character set");
  if (prompt_tokens_ < 0) throw std::invalid_argument("vocab: negative prompt token count");
  std::fill(std::begin(lookup_), std::end(lookup_), -1);
  for (int i = 0; i < num_chars(); ++i) {
    auto& slot = lookup_[static_cast<unsigned char>(chars_[i])];
    if (slot != -1) throw std::invalid_argument(std::string("vocab: duplicate character '") + chars_[i] + "'");
    slot = i;
  }
}

int Vocab::id_of(char c) const {
  const int id = lookup_[static_cast<unsigned char>(c)];
  if (id < 0) throw std::invalid_argument(std::string("character '") + c + "' is not in the vocabulary");
  return id;
}

char Vocab::char_of(int id) const {
  if (!is_char(id)) throw std::out_of_range("token id " + std::to_string(id) + " is not a character");
  return chars_[id];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id_of(c));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids)
    if (is_char(id)) out.push_back(chars_[id]);
  return out;
}

}  // namespace mdasr
