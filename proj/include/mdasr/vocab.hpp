#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mdasr {

// Token ids: characters first (0..C-1), then pad, mask, CTC blank and the
// prompt tokens. The denoiser predicts over characters + pad; the CTC head
// predicts over characters + blank, with blank in the last column.
class Vocab {
 public:
  static constexpr std::string_view kDefaultChars = "abcdefghijklmnopqrstuvwxyz ";

  explicit Vocab(std::string chars = std::string(kDefaultChars), int prompt_tokens = 4);

  const std::string& chars() const { return chars_; }
  int num_chars() const { return static_cast<int>(chars_.size()); }
  int pad() const { return num_chars(); }
  int mask() const { return num_chars() + 1; }
  int blank() const { return num_chars() + 2; }
  int prompt(int i) const { return num_chars() + 3 + i; }
  int prompt_tokens() const { return prompt_tokens_; }
  int size() const { return num_chars() + 3 + prompt_tokens_; }

  // Denoiser output classes: characters then pad.
  int output_size() const { return num_chars() + 1; }
  // CTC classes: characters then blank.
  int ctc_classes() const { return num_chars() + 1; }
  int ctc_blank_class() const { return num_chars(); }

  bool is_char(int id) const { return id >= 0 && id < num_chars(); }
  int id_of(char c) const;
  char char_of(int id) const;

  std::vector<int> encode(std::string_view text) const;
  // Characters in order; pad and other special ids are dropped.
  std::string decode(std::span<const int> ids) const;

 private:
  std::string chars_;
  int prompt_tokens_;
  int lookup_[256];
};

}  // namespace mdasr
