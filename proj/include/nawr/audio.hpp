#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nawr/error.hpp"

namespace nawr {

struct AudioClip {
  std::vector<double> samples;  // mono, in [-1, 1]
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  void validate() const;  // finite samples, |s| <= 1, positive rate
};

// Tone-alphabet renderer settings. Letter i of the alphabet maps to
// base_freq_hz + i * freq_step_hz; the pipe renders as silence.
struct SynthSpec {
  std::string alphabet = "abcdefgh";
  double base_freq_hz = 400.0;
  double freq_step_hz = 200.0;
  double char_duration_s = 0.05;
  double ramp_s = 0.005;
  double amplitude = 0.3;
  int sample_rate = 16000;

  double letter_freq(char c) const;  // throws on characters outside the alphabet
  void validate() const;             // frequencies below Nyquist, distinct
};

enum class NoiseKind { white, babble, hum };
NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

// Renders normalized text as a sequence of pure tones with cosine on/off
// ramps. The seed only randomizes tone phases; duration and spectra are
// fixed by the spec.
AudioClip synth_utterance(const std::string& text, const SynthSpec& spec, uint64_t seed);

// white: uniform noise. babble: three random tones halfway off the letter
// grid (letter frequency + 100 Hz). hum: 50 Hz plus its first three
// harmonics. All peak-normalized to spec.amplitude.
AudioClip synth_noise(NoiseKind kind, double duration_s, uint64_t seed,
                      const SynthSpec& spec = {});

// speech + g * noise with g chosen so 10*log10(P_speech / P_scaled_noise)
// equals snr_db. Noise is tiled when shorter than the speech; output is
// re-peak-normalized if it leaves [-1, 1].
AudioClip mix_at_snr(const AudioClip& speech, const AudioClip& noise, double snr_db);

// gain applied to noise power p_noise so the mix hits snr_db
double snr_gain(double p_speech, double p_noise, double snr_db);

// 16-bit PCM mono WAV.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace nawr
