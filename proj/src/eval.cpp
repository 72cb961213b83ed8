#include "nawr/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace nawr {

using nlohmann::json;

std::string greedy_decode(const Tensor& ctc_log_probs, const Vocab& vocab) {
  if (ctc_log_probs.rank() != 2)
    throw ShapeError("greedy_decode: expected [frames, vocab], got " +
                     shape_str(ctc_log_probs.shape));
  const int64_t frames = ctc_log_probs.shape[0];
  const int64_t v = ctc_log_probs.shape[1];
  std::vector<int> ids;
  int prev = -1;
  for (int64_t t = 0; t < frames; ++t) {
    int best = 0;
    for (int64_t j = 1; j < v; ++j) {
      if (ctc_log_probs.at2(t, j) > ctc_log_probs.at2(t, best)) best = static_cast<int>(j);
    }
    if (best != prev && best != vocab.blank_id()) ids.push_back(best);
    prev = best;
  }
  return vocab.decode(ids);
}

namespace {

template <typename Seq>
int64_t levenshtein(const Seq& ref, const Seq& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

int64_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return levenshtein(ref, hyp);
}

int64_t edit_distance_chars(const std::string& ref, const std::string& hyp) {
  return levenshtein(ref, hyp);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == kPipe) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

double wer(const std::string& ref, const std::string& hyp) {
  const auto ref_words = split_words(ref);
  if (ref_words.empty()) throw Error("wer: empty reference");
  return static_cast<double>(edit_distance(ref_words, split_words(hyp))) /
         static_cast<double>(ref_words.size());
}

double cer(const std::string& ref, const std::string& hyp) {
  if (ref.empty()) throw Error("cer: empty reference");
  return static_cast<double>(edit_distance_chars(ref, hyp)) / static_cast<double>(ref.size());
}

ClassLabel infer_noise_from_transcript(const std::string& decoded) {
  for (char c : decoded)
    if (c != kPipe) return ClassLabel::speech;
  return ClassLabel::noise;
}

std::string MetricsReport::to_json_line() const {
  json j;
  j["config"] = config;
  j["noise_accuracy"] = noise_accuracy;
  j["noise_accuracy_transcript"] = noise_accuracy_transcript;
  j["wer"] = wer;
  j["cer"] = cer;
  j["n_speech_eval"] = n_speech_eval;
  j["n_noise_eval"] = n_noise_eval;
  if (alpha_final) j["alpha_final"] = *alpha_final;
  return j.dump();
}

MetricsReport MetricsReport::from_json_line(const std::string& line) {
  json j = json::parse(line);
  MetricsReport r;
  r.config = j.at("config").get<std::string>();
  r.noise_accuracy = j.at("noise_accuracy").get<double>();
  r.noise_accuracy_transcript = j.at("noise_accuracy_transcript").get<double>();
  r.wer = j.at("wer").get<double>();
  r.cer = j.at("cer").get<double>();
  r.n_speech_eval = j.at("n_speech_eval").get<int64_t>();
  r.n_noise_eval = j.at("n_noise_eval").get<int64_t>();
  if (j.contains("alpha_final")) r.alpha_final = j.at("alpha_final").get<double>();
  return r;
}

MetricsReport evaluate(const Scorer& scorer, const std::vector<ManifestEntry>& speech_split,
                       const std::vector<ManifestEntry>& noise_split,
                       const std::filesystem::path& audio_root,
                       const std::string& config_name) {
  if (speech_split.empty()) throw Error("evaluate: empty speech split");
  if (noise_split.empty()) throw Error("evaluate: empty noise split");

  int64_t word_errors = 0, word_count = 0;
  int64_t char_errors = 0, char_count = 0;
  int64_t correct_head = 0, correct_transcript = 0;
  bool any_head = false;

  auto classify = [&](const ManifestEntry& entry) {
    const AudioClip clip = read_wav(audio_root / entry.audio_path);
    const Prediction pred = scorer(entry, clip);
    if (entry.label == ClassLabel::speech) {
      const auto ref_words = split_words(entry.transcript);
      word_errors += edit_distance(ref_words, split_words(pred.decoded));
      word_count += static_cast<int64_t>(ref_words.size());
      char_errors += edit_distance_chars(entry.transcript, pred.decoded);
      char_count += static_cast<int64_t>(entry.transcript.size());
    }
    const ClassLabel by_transcript = infer_noise_from_transcript(pred.decoded);
    if (by_transcript == entry.label) ++correct_transcript;
    if (pred.head_label) {
      any_head = true;
      if (*pred.head_label == entry.label) ++correct_head;
    }
  };

  for (const auto& e : speech_split) classify(e);
  for (const auto& e : noise_split) classify(e);

  const auto total = static_cast<double>(speech_split.size() + noise_split.size());
  MetricsReport r;
  r.config = config_name;
  r.n_speech_eval = static_cast<int64_t>(speech_split.size());
  r.n_noise_eval = static_cast<int64_t>(noise_split.size());
  r.noise_accuracy_transcript = static_cast<double>(correct_transcript) / total;
  r.noise_accuracy = any_head ? static_cast<double>(correct_head) / total
                              : r.noise_accuracy_transcript;
  r.wer = static_cast<double>(word_errors) / static_cast<double>(word_count);
  r.cer = static_cast<double>(char_errors) / static_cast<double>(char_count);
  return r;
}

std::string format_comparison_table(const std::vector<MetricsReport>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "Configuration" << std::right << std::setw(14)
     << "Noise Acc %" << std::setw(10) << "WER %" << std::setw(10) << "CER %" << '\n';
  os << std::string(50, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.config << std::right << std::setw(14)
       << 100.0 * r.noise_accuracy << std::setw(10) << 100.0 * r.wer << std::setw(10)
       << 100.0 * r.cer << '\n';
  }
  return os.str();
}

}  // namespace nawr
