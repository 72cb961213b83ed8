#include "nawr/textnorm.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace nawr {

namespace {

bool is_ascii_letter(unsigned char c) { return c >= 'a' && c <= 'z'; }
bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_ws(unsigned char c) { return std::isspace(c) != 0; }

// drop characters outside alphabet|pipe, then re-collapse pipe runs
std::string drop_and_recollapse(const std::string& s, std::string_view alphabet) {
  std::string kept;
  for (char c : s) {
    if (c == kPipe || alphabet.find(c) != std::string_view::npos) kept.push_back(c);
  }
  std::string out;
  for (char c : kept) {
    if (c == kPipe && (out.empty() || out.back() == kPipe)) continue;
    out.push_back(c);
  }
  while (!out.empty() && out.back() == kPipe) out.pop_back();
  return out;
}

}  // namespace

std::string normalize_transcript(const std::string& raw, bool strict,
                                 std::string_view alphabet) {
  std::string lowered;
  lowered.reserve(raw.size());
  for (unsigned char c : raw) {
    unsigned char lc = static_cast<unsigned char>(std::tolower(c));
    if (lc == kPipe) lc = ' ';  // pipes already encode whitespace; keeps the map idempotent
    if (is_ascii_letter(lc) || is_ascii_digit(lc) || is_ws(lc)) lowered.push_back(static_cast<char>(lc));
    // everything else is punctuation and is removed
  }

  // collapse whitespace runs to single pipes; leading/trailing whitespace goes
  std::string piped;
  bool in_ws = false;
  for (unsigned char c : lowered) {
    if (is_ws(c)) {
      in_ws = true;
      continue;
    }
    if (in_ws && !piped.empty()) piped.push_back(kPipe);
    in_ws = false;
    piped.push_back(static_cast<char>(c));
  }

  std::set<char> offending;
  for (char c : piped) {
    if (c != kPipe && alphabet.find(c) == std::string_view::npos) offending.insert(c);
  }
  if (offending.empty()) return piped;
  if (strict) {
    std::ostringstream os;
    os << "normalize_transcript: characters outside alphabet:";
    for (char c : offending) os << " '" << c << "'";
    throw Error(os.str());
  }
  return drop_and_recollapse(piped, alphabet);
}

Vocab::Vocab(std::vector<char> chars) : chars_(std::move(chars)) {
  for (size_t i = 0; i < chars_.size(); ++i) ids_[chars_[i]] = static_cast<int>(i) + 1;
  validate();
}

void Vocab::validate() const {
  if (ids_.size() != chars_.size()) throw FormatError("vocab: duplicate symbols");
  const auto pipes = std::count(chars_.begin(), chars_.end(), kPipe);
  if (pipes != 1) throw FormatError("vocab: pipe must appear exactly once");
  if (chars_.empty()) throw FormatError("vocab: no symbols besides the blank");
}

Vocab Vocab::for_alphabet(std::string_view alphabet) {
  std::vector<char> chars(alphabet.begin(), alphabet.end());
  chars.push_back(kPipe);
  return Vocab(std::move(chars));
}

Vocab Vocab::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("vocab: cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "<blank>")
    throw FormatError("vocab: first line of " + file.string() + " must be <blank>");
  std::vector<char> chars;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.size() != 1)
      throw FormatError("vocab: line " + std::to_string(lineno) +
                        " must hold a single character");
    chars.push_back(line[0]);
  }
  return Vocab(std::move(chars));
}

void Vocab::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw FormatError("vocab: cannot write " + file.string());
  out << "<blank>\n";
  for (char c : chars_) out << c << '\n';
}

char Vocab::symbol(int id) const {
  if (id <= 0 || id > static_cast<int>(chars_.size()))
    throw Error("vocab: id " + std::to_string(id) + " has no symbol");
  return chars_[static_cast<size_t>(id) - 1];
}

int Vocab::id_of(char c) const {
  auto it = ids_.find(c);
  return it == ids_.end() ? -1 : it->second;
}

std::vector<int> Vocab::encode(const std::string& normalized) const {
  std::vector<int> ids;
  ids.reserve(normalized.size());
  for (size_t i = 0; i < normalized.size(); ++i) {
    const int id = id_of(normalized[i]);
    if (id < 0)
      throw Error("encode: unknown character '" + std::string(1, normalized[i]) +
                  "' at position " + std::to_string(i));
    ids.push_back(id);
  }
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == blank_id()) throw Error("decode: blank id in label sequence");
    out.push_back(symbol(id));
  }
  return out;
}

std::string Vocab::letters() const {
  std::string out;
  for (char c : chars_)
    if (c != kPipe) out.push_back(c);
  return out;
}

}  // namespace nawr
