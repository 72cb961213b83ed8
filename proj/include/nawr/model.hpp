#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nawr/audio.hpp"
#include "nawr/tensor.hpp"

namespace nawr {

struct ConvLayerSpec {
  int64_t out_channels = 0;
  int64_t kernel = 0;
  int64_t stride = 0;
};

struct ModelConfig {
  std::vector<ConvLayerSpec> conv_stack = {{32, 10, 5}, {32, 8, 4}, {32, 4, 4}};
  int64_t model_dim = 32;
  int64_t transformer_layers = 2;
  int64_t attention_heads = 2;
  int64_t ffn_dim = 64;
  int64_t vocab_size = 0;
  bool noise_head_enabled = false;
  bool fusion_enabled = false;
  // With fusion on, the noise head always reads the fused features; this
  // switch decides whether the CTC head does too.
  bool fusion_feeds_ctc = true;

  void validate() const;
  int64_t frame_count(int64_t samples) const;  // valid-conv length per layer
  int64_t min_input_samples() const;
};

struct ModelOutput {
  Tensor ctc_log_probs;               // [T', vocab]
  std::optional<Tensor> noise_probs;  // [2]: (speech, noise)
  int64_t frame_count = 0;
};

class Model {
 public:
  Model(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;

  // Per-step view of the parameters registered on a tape. Bind once per
  // training step so fan-out across a batch accumulates into one gradient.
  struct Bound {
    std::vector<Tensor> values;  // parallel to parameters()
  };
  Bound bind(Tape& tape) const;

  ModelOutput forward(Tape& tape, const Bound& bound, const AudioClip& wave) const;

  // forward stages, exposed for tests
  Tensor conv_extract(Tape& tape, const Bound& bound, const AudioClip& wave) const;
  struct EncodeResult {
    Tensor pos_projected;  // conv features projected and position-encoded
    Tensor context;        // transformer output
  };
  EncodeResult encode_context(Tape& tape, const Bound& bound, const Tensor& features) const;
  Tensor fuse(Tape& tape, const Bound& bound, const Tensor& conv_projected,
              const Tensor& context) const;
  Tensor ctc_head(Tape& tape, const Bound& bound, const Tensor& h) const;
  Tensor noise_head(Tape& tape, const Bound& bound, const Tensor& h) const;

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  const Tensor& bp(const Bound& bound, const std::string& name) const;
  Parameter& add_param(const std::string& name, Shape shape, double init_bound, class DetRng& rng);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Checkpoint container: magic "NAWV1", little-endian u32 parameter count,
// then per parameter: u32 name length, name bytes, u32 rank, u32 dims,
// raw 64-bit little-endian floats.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<const Parameter*>& params);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::filesystem::path& path);

}  // namespace nawr
