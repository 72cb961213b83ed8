#include "nawr/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "nawr/rng.hpp"
#include "nawr/textnorm.hpp"

namespace nawr {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void apply_ramps(std::vector<double>& seg, int ramp_samples) {
  const int n = static_cast<int>(seg.size());
  const int r = std::min(ramp_samples, n / 2);
  for (int i = 0; i < r; ++i) {
    // raised-cosine fade from 0 to 1
    const double w = 0.5 * (1.0 - std::cos(std::numbers::pi * (i + 1) / (r + 1)));
    seg[static_cast<size_t>(i)] *= w;
    seg[static_cast<size_t>(n - 1 - i)] *= w;
  }
}

void peak_normalize(std::vector<double>& s, double peak) {
  double mx = 0.0;
  for (double v : s) mx = std::max(mx, std::abs(v));
  if (mx <= 0.0) return;
  const double g = peak / mx;
  for (double& v : s) v *= g;
}

double mean_square(const std::vector<double>& s) {
  double acc = 0.0;
  for (double v : s) acc += v * v;
  return s.empty() ? 0.0 : acc / static_cast<double>(s.size());
}

// little-endian scalar I/O for the RIFF container
void put_u32(std::ofstream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u16(std::ofstream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::ifstream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void AudioClip::validate() const {
  if (sample_rate <= 0) throw Error("audio clip: non-positive sample rate");
  for (double v : samples) {
    if (!std::isfinite(v)) throw Error("audio clip: non-finite sample");
    if (std::abs(v) > 1.0 + 1e-12) throw Error("audio clip: sample outside [-1, 1]");
  }
}

double SynthSpec::letter_freq(char c) const {
  const auto idx = alphabet.find(c);
  if (idx == std::string::npos)
    throw Error("synth: character '" + std::string(1, c) + "' outside alphabet '" + alphabet +
                "'");
  return base_freq_hz + freq_step_hz * static_cast<double>(idx);
}

void SynthSpec::validate() const {
  if (alphabet.empty()) throw Error("synth spec: empty alphabet");
  const double top = base_freq_hz + freq_step_hz * static_cast<double>(alphabet.size() - 1);
  if (top >= sample_rate / 2.0) throw Error("synth spec: letter frequency above Nyquist");
  if (freq_step_hz <= 0.0) throw Error("synth spec: frequencies must be distinct");
}

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white") return NoiseKind::white;
  if (s == "babble") return NoiseKind::babble;
  if (s == "hum") return NoiseKind::hum;
  throw Error("unknown noise kind '" + s + "' (expected white, babble or hum)");
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::white: return "white";
    case NoiseKind::babble: return "babble";
    case NoiseKind::hum: return "hum";
  }
  return "?";
}

AudioClip synth_utterance(const std::string& text, const SynthSpec& spec, uint64_t seed) {
  spec.validate();
  DetRng rng(mix_seed(seed, 0x5eec4));
  const int char_samples = static_cast<int>(std::lround(spec.char_duration_s * spec.sample_rate));
  const int ramp_samples = static_cast<int>(std::lround(spec.ramp_s * spec.sample_rate));

  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.samples.reserve(text.size() * static_cast<size_t>(char_samples));
  for (char c : text) {
    if (c == kPipe) {
      clip.samples.insert(clip.samples.end(), static_cast<size_t>(char_samples), 0.0);
      continue;
    }
    const double freq = spec.letter_freq(c);
    const double phase = rng.uniform(0.0, kTwoPi);
    std::vector<double> seg(static_cast<size_t>(char_samples));
    for (int i = 0; i < char_samples; ++i)
      seg[static_cast<size_t>(i)] =
          spec.amplitude * std::sin(kTwoPi * freq * i / spec.sample_rate + phase);
    apply_ramps(seg, ramp_samples);
    clip.samples.insert(clip.samples.end(), seg.begin(), seg.end());
  }
  clip.validate();
  return clip;
}

AudioClip synth_noise(NoiseKind kind, double duration_s, uint64_t seed, const SynthSpec& spec) {
  if (duration_s <= 0.0) throw Error("synth_noise: duration must be positive");
  DetRng rng(mix_seed(seed, 0x201e));
  const auto n = static_cast<size_t>(std::lround(duration_s * spec.sample_rate));
  std::vector<double> s(n, 0.0);
  switch (kind) {
    case NoiseKind::white: {
      for (double& v : s) v = rng.uniform(-1.0, 1.0);
      break;
    }
    case NoiseKind::babble: {
      // three tones halfway between letter frequencies
      for (int t = 0; t < 3; ++t) {
        const auto slot = rng.index_below(spec.alphabet.size());
        const double freq = spec.base_freq_hz + spec.freq_step_hz * static_cast<double>(slot) +
                            100.0;
        const double phase = rng.uniform(0.0, kTwoPi);
        for (size_t i = 0; i < n; ++i)
          s[i] += std::sin(kTwoPi * freq * static_cast<double>(i) / spec.sample_rate + phase);
      }
      break;
    }
    case NoiseKind::hum: {
      for (int h = 1; h <= 4; ++h) {
        const double freq = 50.0 * h;
        // fixed phases, decaying harmonic amplitudes
        for (size_t i = 0; i < n; ++i)
          s[i] += std::sin(kTwoPi * freq * static_cast<double>(i) / spec.sample_rate) / h;
      }
      break;
    }
  }
  peak_normalize(s, spec.amplitude);
  AudioClip clip{std::move(s), spec.sample_rate};
  clip.validate();
  return clip;
}

double snr_gain(double p_speech, double p_noise, double snr_db) {
  if (p_speech <= 0.0) throw Error("mix_at_snr: silent speech");
  if (p_noise <= 0.0) throw Error("mix_at_snr: silent noise");
  return std::sqrt(p_speech / (p_noise * std::pow(10.0, snr_db / 10.0)));
}

AudioClip mix_at_snr(const AudioClip& speech, const AudioClip& noise, double snr_db) {
  if (speech.sample_rate != noise.sample_rate)
    throw Error("mix_at_snr: sample rates differ");
  if (noise.samples.empty()) throw Error("mix_at_snr: empty noise");

  // tile noise across the speech length
  std::vector<double> tiled(speech.samples.size());
  for (size_t i = 0; i < tiled.size(); ++i) tiled[i] = noise.samples[i % noise.samples.size()];

  const double g = snr_gain(mean_square(speech.samples), mean_square(tiled), snr_db);
  AudioClip out;
  out.sample_rate = speech.sample_rate;
  out.samples.resize(speech.samples.size());
  double peak = 0.0;
  for (size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] = speech.samples[i] + g * tiled[i];
    peak = std::max(peak, std::abs(out.samples[i]));
  }
  if (peak > 1.0) {
    for (double& v : out.samples) v /= peak;
  }
  out.validate();
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  clip.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("wav: cannot write " + path.string());
  const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate * 2));
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double v : clip.samples) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    const auto q = static_cast<int16_t>(std::lround(clamped * 32767.0));
    char b[2] = {static_cast<char>(q & 0xff), static_cast<char>((q >> 8) & 0xff)};
    out.write(b, 2);
  }
  if (!out) throw FormatError("wav: short write to " + path.string());
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("wav: cannot open " + path.string());
  char tag[5] = {0};
  in.read(tag, 4);
  if (!in || std::strncmp(tag, "RIFF", 4) != 0)
    throw FormatError("wav: " + path.string() + " is not a RIFF file");
  get_u32(in);  // riff size
  in.read(tag, 4);
  if (!in || std::strncmp(tag, "WAVE", 4) != 0)
    throw FormatError("wav: " + path.string() + " is not a WAVE file");

  bool have_fmt = false;
  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t rate = 0;
  AudioClip clip;
  while (in.read(tag, 4)) {
    const uint32_t chunk = get_u32(in);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      format = get_u16(in);
      channels = get_u16(in);
      rate = get_u32(in);
      get_u32(in);  // byte rate
      get_u16(in);  // block align
      bits = get_u16(in);
      if (chunk > 16) in.seekg(chunk - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt in " + path.string());
      if (format != 1) throw FormatError("wav: " + path.string() + " is not PCM");
      if (channels != 1)
        throw FormatError("wav: " + path.string() + " has " + std::to_string(channels) +
                          " channels, only mono is supported");
      if (bits != 16)
        throw FormatError("wav: " + path.string() + " has " + std::to_string(bits) +
                          " bits per sample, only 16 is supported");
      const size_t count = chunk / 2;
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        if (!in) throw FormatError("wav: truncated data in " + path.string());
        const auto q = static_cast<int16_t>(b[0] | (b[1] << 8));
        clip.samples[i] = std::clamp(static_cast<double>(q) / 32767.0, -1.0, 1.0);
      }
      clip.validate();
      return clip;
    } else {
      in.seekg(chunk + (chunk & 1), std::ios::cur);  // skip unknown chunk (padded)
    }
  }
  throw FormatError("wav: no data chunk in " + path.string());
}

}  // namespace nawr
