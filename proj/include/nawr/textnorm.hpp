#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "nawr/error.hpp"

namespace nawr {

inline constexpr char kPipe = '|';
inline constexpr std::string_view kFullAlphabet = "abcdefghijklmnopqrstuvwxyz";

// Transcript normalization: lowercase, strip punctuation (anything outside
// letters, digits and whitespace), collapse whitespace runs to a single pipe,
// trim the ends. Characters that survive normalization but fall outside the
// allowed alphabet raise an error in strict mode and are dropped otherwise.
std::string normalize_transcript(const std::string& raw, bool strict = true,
                                 std::string_view alphabet = kFullAlphabet);

// CTC label inventory. Id 0 is the blank and never appears in encoded
// transcripts; the pipe is always present exactly once.
class Vocab {
 public:
  // blank, then each alphabet character, then the pipe
  static Vocab for_alphabet(std::string_view alphabet);

  // One symbol per line, line 1 is the literal token "<blank>".
  static Vocab load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  int64_t size() const { return static_cast<int64_t>(chars_.size()) + 1; }
  int blank_id() const { return 0; }
  char symbol(int id) const;  // id >= 1
  int id_of(char c) const;    // -1 if absent

  std::vector<int> encode(const std::string& normalized) const;
  std::string decode(const std::vector<int>& ids) const;

  // non-blank, non-pipe characters, for corpus generation
  std::string letters() const;

 private:
  explicit Vocab(std::vector<char> chars);
  void validate() const;

  std::vector<char> chars_;  // symbol for id i+1; blank is implicit id 0
  std::unordered_map<char, int> ids_;
};

}  // namespace nawr
