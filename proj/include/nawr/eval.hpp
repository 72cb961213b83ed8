#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nawr/dataset.hpp"
#include "nawr/tensor.hpp"
#include "nawr/textnorm.hpp"

namespace nawr {

// Per-frame argmax, collapse adjacent repeats, drop blanks. Ties pick the
// lowest id.
std::string greedy_decode(const Tensor& ctc_log_probs, const Vocab& vocab);

// Levenshtein distance with unit costs.
int64_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
int64_t edit_distance_chars(const std::string& ref, const std::string& hyp);

std::vector<std::string> split_words(const std::string& text);  // pipe-delimited

// edit distance / reference token count; the reference must be non-empty
double wer(const std::string& ref, const std::string& hyp);
double cer(const std::string& ref, const std::string& hyp);

// Empty decode means noise; pipes carry no speech content, so a pipes-only
// decode counts as empty too.
ClassLabel infer_noise_from_transcript(const std::string& decoded);

struct MetricsReport {
  std::string config;
  double noise_accuracy = 0.0;  // headline metric (head when present)
  double noise_accuracy_transcript = 0.0;  // empty-transcription rule
  double wer = 0.0;
  double cer = 0.0;
  int64_t n_speech_eval = 0;
  int64_t n_noise_eval = 0;
  std::optional<double> alpha_final;

  std::string to_json_line() const;
  static MetricsReport from_json_line(const std::string& line);
};

// One utterance's outputs as the evaluator consumes them.
struct Prediction {
  std::string decoded;
  std::optional<ClassLabel> head_label;  // present when the model has a noise head
};

using Scorer = std::function<Prediction(const ManifestEntry&, const AudioClip&)>;

// Corpus-pooled WER/CER over the speech split; noise accuracy over both
// splits using the head when available, else the transcript rule.
MetricsReport evaluate(const Scorer& scorer, const std::vector<ManifestEntry>& speech_split,
                       const std::vector<ManifestEntry>& noise_split,
                       const std::filesystem::path& audio_root, const std::string& config_name);

// Table-2-shaped text table: Configuration, Noise Acc %, WER %, CER %.
std::string format_comparison_table(const std::vector<MetricsReport>& rows);

}  // namespace nawr
