#include "nawr/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "nawr/rng.hpp"

namespace nawr {

using nlohmann::json;

std::string to_string(ClassLabel l) { return l == ClassLabel::speech ? "speech" : "noise"; }

ClassLabel class_label_from_string(const std::string& s) {
  if (s == "speech") return ClassLabel::speech;
  if (s == "noise") return ClassLabel::noise;
  throw FormatError("manifest: unknown label '" + s + "'");
}

void ManifestEntry::validate() const {
  if (audio_path.empty()) throw FormatError("manifest: empty audio_path");
  if (duration_s < 0.0) throw FormatError("manifest: negative duration for " + audio_path);
  if (label == ClassLabel::noise && !transcript.empty())
    throw FormatError("manifest: noise entry " + audio_path + " has a transcript");
  if (label == ClassLabel::speech) {
    if (transcript.empty())
      throw FormatError("manifest: speech entry " + audio_path + " has no transcript");
    if (normalize_transcript(transcript) != transcript)
      throw FormatError("manifest: transcript for " + audio_path + " is not normalized");
  }
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& file,
                                         const std::filesystem::path& audio_root,
                                         bool check_audio) {
  std::ifstream in(file);
  if (!in) throw FormatError("manifest: cannot open " + file.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("manifest: " + file.string() + " line " + std::to_string(lineno) +
                        ": " + e.what());
    }
    ManifestEntry entry;
    try {
      entry.audio_path = j.at("audio_path").get<std::string>();
      entry.transcript = j.at("transcript").get<std::string>();
      entry.label = class_label_from_string(j.at("label").get<std::string>());
      entry.duration_s = j.at("duration_s").get<double>();
    } catch (const json::exception& e) {
      throw FormatError("manifest: " + file.string() + " line " + std::to_string(lineno) +
                        ": " + e.what());
    }
    try {
      entry.validate();
    } catch (const Error& e) {
      throw FormatError(file.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (check_audio && !std::filesystem::exists(audio_root / entry.audio_path))
      throw FormatError("manifest: " + file.string() + " line " + std::to_string(lineno) +
                        ": missing audio file " + (audio_root / entry.audio_path).string());
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<ManifestEntry> build_manifest(const std::filesystem::path& data_dir,
                                          const std::string& split_name) {
  return load_manifest(data_dir / (split_name + ".jsonl"), data_dir);
}

std::string manifest_line(const ManifestEntry& entry) {
  json j;
  j["audio_path"] = entry.audio_path;
  j["transcript"] = entry.transcript;
  j["label"] = to_string(entry.label);
  j["duration_s"] = entry.duration_s;
  return j.dump();
}

void write_manifest(const std::filesystem::path& file,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream out(file);
  if (!out) throw FormatError("manifest: cannot write " + file.string());
  for (const auto& e : entries) out << manifest_line(e) << '\n';
}

std::vector<ManifestEntry> compose_split(const std::vector<ManifestEntry>& speech,
                                         const std::vector<ManifestEntry>& noise,
                                         const SplitSpec& spec) {
  if (spec.noise_fraction < 0.0 || spec.noise_fraction >= 1.0)
    throw Error("compose_split: noise_fraction must be in [0, 1)");
  const auto n_speech = static_cast<double>(speech.size());
  const auto k = static_cast<size_t>(
      std::llround(spec.noise_fraction / (1.0 - spec.noise_fraction) * n_speech));
  if (k > noise.size())
    throw Error("compose_split: need " + std::to_string(k) + " noise entries, pool has " +
                std::to_string(noise.size()));

  DetRng rng(mix_seed(spec.seed, 0xda7a));
  std::vector<size_t> noise_idx(noise.size());
  std::iota(noise_idx.begin(), noise_idx.end(), size_t{0});
  rng.shuffle(noise_idx);

  std::vector<ManifestEntry> out = speech;
  out.reserve(speech.size() + k);
  for (size_t i = 0; i < k; ++i) out.push_back(noise[noise_idx[i]]);
  rng.shuffle(out);
  return out;
}

std::vector<size_t> BatchIterator::epoch_order(size_t n, uint64_t seed, int64_t epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  DetRng rng(mix_seed(seed, 0xba7c0000ULL + static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

BatchIterator::BatchIterator(const std::vector<ManifestEntry>& split,
                             const std::filesystem::path& audio_root, const Vocab& vocab,
                             int64_t batch_size, uint64_t seed, int64_t epoch)
    : split_(split), root_(audio_root), vocab_(vocab), batch_size_(batch_size) {
  if (split.empty()) throw Error("batch_iter: empty split");
  if (batch_size < 1) throw Error("batch_iter: batch_size must be >= 1");
  order_ = epoch_order(split.size(), seed, epoch);
}

int64_t BatchIterator::batch_count() const {
  const auto n = static_cast<int64_t>(split_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  Batch batch;
  batch.index = batch_index_++;
  const size_t end = std::min(order_.size(), cursor_ + static_cast<size_t>(batch_size_));
  for (; cursor_ < end; ++cursor_) {
    const ManifestEntry& entry = split_[order_[cursor_]];
    BatchItem item;
    item.entry = &entry;
    item.clip = read_wav(root_ / entry.audio_path);
    item.target_ids = vocab_.encode(entry.transcript);
    batch.items.push_back(std::move(item));
  }
  return batch;
}

}  // namespace nawr
