#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nawr/audio.hpp"
#include "nawr/error.hpp"
#include "nawr/textnorm.hpp"

namespace nawr {

enum class ClassLabel { speech, noise };
std::string to_string(ClassLabel l);
ClassLabel class_label_from_string(const std::string& s);

// One corpus utterance. Noise entries carry an empty transcript; speech
// entries carry a non-empty normalized one.
struct ManifestEntry {
  std::string audio_path;  // relative to the corpus root
  std::string transcript;
  ClassLabel label = ClassLabel::speech;
  double duration_s = 0.0;

  void validate() const;
  bool operator==(const ManifestEntry&) const = default;
};

struct SplitSpec {
  std::string name;            // train | validation | test
  double noise_fraction = 0.0;  // of the final combined set
  uint64_t seed = 0;
};

// Line-delimited JSON records with keys audio_path, transcript, label,
// duration_s. check_audio verifies each referenced file exists.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& file,
                                         const std::filesystem::path& audio_root,
                                         bool check_audio = true);
std::vector<ManifestEntry> build_manifest(const std::filesystem::path& data_dir,
                                          const std::string& split_name);
void write_manifest(const std::filesystem::path& file,
                    const std::vector<ManifestEntry>& entries);
std::string manifest_line(const ManifestEntry& entry);

// All speech entries plus k = round(f/(1-f) * n_speech) noise entries sampled
// without replacement, shuffled; both draws use the spec seed.
std::vector<ManifestEntry> compose_split(const std::vector<ManifestEntry>& speech,
                                         const std::vector<ManifestEntry>& noise,
                                         const SplitSpec& spec);

struct BatchItem {
  const ManifestEntry* entry = nullptr;
  AudioClip clip;
  std::vector<int> target_ids;
};

struct Batch {
  std::vector<BatchItem> items;
  int64_t index = 0;
};

// Deterministic epoch iteration: the permutation is a pure function of
// (seed, epoch) and every entry appears exactly once. Audio is read from
// disk as each batch is materialized.
class BatchIterator {
 public:
  BatchIterator(const std::vector<ManifestEntry>& split, const std::filesystem::path& audio_root,
                const Vocab& vocab, int64_t batch_size, uint64_t seed, int64_t epoch);

  std::optional<Batch> next();
  int64_t batch_count() const;

  // permutation only, for order tests
  static std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch);

 private:
  const std::vector<ManifestEntry>& split_;
  std::filesystem::path root_;
  const Vocab& vocab_;
  int64_t batch_size_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  int64_t batch_index_ = 0;
};

}  // namespace nawr
