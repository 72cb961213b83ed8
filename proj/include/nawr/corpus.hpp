#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "nawr/audio.hpp"
#include "nawr/dataset.hpp"

namespace nawr {

struct CorpusOptions {
  int64_t train_utts = 200;  // speech utterances in the training pool
  int64_t eval_utts = 40;    // total per evaluation split, half speech half noise
  int64_t val_utts = -1;     // validation override; -1 copies eval_utts
  double noise_fraction = 0.05;
  uint64_t seed = 0;
  SynthSpec synth;
  int64_t min_words = 1;
  int64_t max_words = 2;
  int64_t min_word_len = 2;
  int64_t max_word_len = 4;
  double min_noise_s = 0.3;
  double max_noise_s = 1.0;
};

struct CorpusCounts {
  int64_t train_speech = 0, train_noise = 0;
  int64_t val_speech = 0, val_noise = 0;
  int64_t test_speech = 0, test_noise = 0;
};

// Writes wav/{train,validation,test}/*.wav, the three manifests and
// vocab.txt under out_dir. Splits draw from disjoint seed streams and share
// no audio files.
CorpusCounts synth_corpus(const std::filesystem::path& out_dir, const CorpusOptions& opts);

}  // namespace nawr
