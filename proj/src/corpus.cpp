#include "nawr/corpus.hpp"

#include <iomanip>
#include <sstream>

#include "nawr/rng.hpp"
#include "nawr/textnorm.hpp"

namespace nawr {

namespace {

std::string random_text(DetRng& rng, const CorpusOptions& o) {
  const auto words =
      o.min_words + static_cast<int64_t>(rng.index_below(
                        static_cast<uint64_t>(o.max_words - o.min_words + 1)));
  std::string text;
  for (int64_t w = 0; w < words; ++w) {
    if (w) text.push_back(kPipe);
    const auto len =
        o.min_word_len + static_cast<int64_t>(rng.index_below(
                             static_cast<uint64_t>(o.max_word_len - o.min_word_len + 1)));
    for (int64_t i = 0; i < len; ++i)
      text.push_back(o.synth.alphabet[rng.index_below(o.synth.alphabet.size())]);
  }
  return text;
}

std::string item_name(const char* prefix, int64_t i) {
  std::ostringstream os;
  os << prefix << '_' << std::setw(5) << std::setfill('0') << i << ".wav";
  return os.str();
}

struct SplitBuild {
  std::vector<ManifestEntry> speech;
  std::vector<ManifestEntry> noise;
};

SplitBuild generate_split(const std::filesystem::path& out_dir, const std::string& split,
                          int64_t n_speech, int64_t n_noise, uint64_t stream,
                          const CorpusOptions& o) {
  const auto wav_dir = out_dir / "wav" / split;
  std::filesystem::create_directories(wav_dir);
  DetRng rng(mix_seed(o.seed, stream));
  SplitBuild build;
  for (int64_t i = 0; i < n_speech; ++i) {
    const std::string text = random_text(rng, o);
    const AudioClip clip = synth_utterance(text, o.synth, rng.next());
    ManifestEntry e;
    e.audio_path = "wav/" + split + "/" + item_name("sp", i);
    e.transcript = text;
    e.label = ClassLabel::speech;
    e.duration_s = clip.duration_s();
    write_wav(out_dir / e.audio_path, clip);
    build.speech.push_back(std::move(e));
  }
  for (int64_t i = 0; i < n_noise; ++i) {
    const auto kind = static_cast<NoiseKind>(i % 3);  // cycle white, babble, hum
    const double dur = rng.uniform(o.min_noise_s, o.max_noise_s);
    const AudioClip clip = synth_noise(kind, dur, rng.next(), o.synth);
    ManifestEntry e;
    e.audio_path = "wav/" + split + "/" + item_name("no", i);
    e.transcript = "";
    e.label = ClassLabel::noise;
    e.duration_s = clip.duration_s();
    write_wav(out_dir / e.audio_path, clip);
    build.noise.push_back(std::move(e));
  }
  return build;
}

}  // namespace

CorpusCounts synth_corpus(const std::filesystem::path& out_dir, const CorpusOptions& opts) {
  if (opts.noise_fraction < 0.0 || opts.noise_fraction >= 1.0)
    throw Error("synth_corpus: noise fraction must be in [0, 1)");
  if (opts.train_utts < 1) throw Error("synth_corpus: need at least one training utterance");
  if (opts.eval_utts < 2 || opts.eval_utts % 2 != 0)
    throw Error("synth_corpus: eval_utts must be even and at least 2");
  const int64_t val_utts = opts.val_utts < 0 ? opts.eval_utts : opts.val_utts;
  if (val_utts < 2 || val_utts % 2 != 0)
    throw Error("synth_corpus: val_utts must be even and at least 2");
  opts.synth.validate();

  std::filesystem::create_directories(out_dir);

  // training pool: all speech plus exactly the noise the fraction calls for
  const auto train_noise = static_cast<int64_t>(std::llround(
      opts.noise_fraction / (1.0 - opts.noise_fraction) * static_cast<double>(opts.train_utts)));
  const SplitBuild train =
      generate_split(out_dir, "train", opts.train_utts, train_noise, 0x7a11, opts);
  SplitSpec train_spec{"train", opts.noise_fraction, mix_seed(opts.seed, 0x517)};
  write_manifest(out_dir / "train.jsonl", compose_split(train.speech, train.noise, train_spec));

  const SplitBuild val =
      generate_split(out_dir, "validation", val_utts / 2, val_utts / 2, 0x7a12, opts);
  SplitSpec val_spec{"validation", 0.5, mix_seed(opts.seed, 0x518)};
  write_manifest(out_dir / "validation.jsonl", compose_split(val.speech, val.noise, val_spec));

  const SplitBuild test =
      generate_split(out_dir, "test", opts.eval_utts / 2, opts.eval_utts / 2, 0x7a13, opts);
  SplitSpec test_spec{"test", 0.5, mix_seed(opts.seed, 0x519)};
  write_manifest(out_dir / "test.jsonl", compose_split(test.speech, test.noise, test_spec));

  Vocab::for_alphabet(opts.synth.alphabet).save(out_dir / "vocab.txt");

  CorpusCounts counts;
  counts.train_speech = static_cast<int64_t>(train.speech.size());
  counts.train_noise = static_cast<int64_t>(train.noise.size());
  counts.val_speech = static_cast<int64_t>(val.speech.size());
  counts.val_noise = static_cast<int64_t>(val.noise.size());
  counts.test_speech = static_cast<int64_t>(test.speech.size());
  counts.test_noise = static_cast<int64_t>(test.noise.size());
  return counts;
}

}  // namespace nawr
