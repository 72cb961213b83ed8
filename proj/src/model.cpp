#include "nawr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nawr/rng.hpp"

namespace nawr {

namespace {

constexpr char kCheckpointMagic[5] = {'N', 'A', 'W', 'V', '1'};

void put_u32(std::ofstream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ofstream& out, double d) {
  const auto u = std::bit_cast<uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(b, 8);
}

double get_f64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void ModelConfig::validate() const {
  if (conv_stack.empty()) throw Error("model config: empty conv stack");
  for (const auto& l : conv_stack) {
    if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1)
      throw Error("model config: conv layer fields must be positive");
  }
  if (model_dim < 1 || transformer_layers < 1 || ffn_dim < 1)
    throw Error("model config: dimensions must be positive");
  if (attention_heads < 1 || model_dim % attention_heads != 0)
    throw Error("model config: model_dim must be divisible by attention_heads");
  if (vocab_size < 2) throw Error("model config: vocab_size must be at least 2");
}

int64_t ModelConfig::frame_count(int64_t samples) const {
  int64_t t = samples;
  for (const auto& l : conv_stack) {
    if (t < l.kernel) return 0;
    t = (t - l.kernel) / l.stride + 1;
  }
  return t;
}

int64_t ModelConfig::min_input_samples() const {
  int64_t need = 1;
  for (auto it = conv_stack.rbegin(); it != conv_stack.rend(); ++it)
    need = (need - 1) * it->stride + it->kernel;
  return need;
}

Parameter& Model::add_param(const std::string& name, Shape shape, double init_bound,
                            DetRng& rng) {
  Parameter p;
  p.name = name;
  p.value = Tensor::zeros(std::move(shape));
  if (init_bound > 0.0) {
    for (int64_t i = 0; i < p.value.numel(); ++i)
      p.value.at(i) = rng.uniform(-init_bound, init_bound);
  }
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Model::Model(ModelConfig config, uint64_t seed) : cfg_(std::move(config)) {
  cfg_.validate();
  DetRng rng(mix_seed(seed, 0x90de1));
  const int64_t d = cfg_.model_dim;

  int64_t cin = 1;
  for (size_t i = 0; i < cfg_.conv_stack.size(); ++i) {
    const auto& l = cfg_.conv_stack[i];
    const double bound = std::sqrt(1.0 / static_cast<double>(cin * l.kernel));
    const std::string base = "encoder.conv" + std::to_string(i);
    add_param(base + ".w", {l.out_channels, cin, l.kernel}, bound, rng);
    add_param(base + ".b", {1, l.out_channels}, bound, rng);
    cin = l.out_channels;
  }

  const double proj_bound = std::sqrt(1.0 / static_cast<double>(cin));
  add_param("encoder.proj.w", {cin, d}, proj_bound, rng);
  add_param("encoder.proj.b", {1, d}, proj_bound, rng);

  const double d_bound = std::sqrt(1.0 / static_cast<double>(d));
  const double f_bound = std::sqrt(1.0 / static_cast<double>(cfg_.ffn_dim));
  for (int64_t i = 0; i < cfg_.transformer_layers; ++i) {
    const std::string base = "encoder.layer" + std::to_string(i);
    add_param(base + ".ln1.gamma", {1, d}, 0.0, rng).value = Tensor::full({1, d}, 1.0);
    add_param(base + ".ln1.beta", {1, d}, 0.0, rng);
    for (const char* w : {"wq", "wk", "wv", "wo"})
      add_param(base + ".attn." + std::string(w), {d, d}, d_bound, rng);
    for (const char* b : {"bq", "bk", "bv", "bo"})
      add_param(base + ".attn." + std::string(b), {1, d}, d_bound, rng);
    add_param(base + ".ln2.gamma", {1, d}, 0.0, rng).value = Tensor::full({1, d}, 1.0);
    add_param(base + ".ln2.beta", {1, d}, 0.0, rng);
    add_param(base + ".ffn.w1", {d, cfg_.ffn_dim}, d_bound, rng);
    add_param(base + ".ffn.b1", {1, cfg_.ffn_dim}, d_bound, rng);
    add_param(base + ".ffn.w2", {cfg_.ffn_dim, d}, f_bound, rng);
    add_param(base + ".ffn.b2", {1, d}, f_bound, rng);
  }
  add_param("encoder.ln_out.gamma", {1, d}, 0.0, rng).value = Tensor::full({1, d}, 1.0);
  add_param("encoder.ln_out.beta", {1, d}, 0.0, rng);

  if (cfg_.fusion_enabled) {
    const double fuse_bound = std::sqrt(1.0 / static_cast<double>(2 * d));
    add_param("fusion.w", {2 * d, d}, fuse_bound, rng);
    add_param("fusion.b", {1, d}, fuse_bound, rng);
  }

  add_param("ctc.w", {d, cfg_.vocab_size}, d_bound, rng);
  add_param("ctc.b", {1, cfg_.vocab_size}, d_bound, rng);

  if (cfg_.noise_head_enabled) {
    add_param("noise.w", {d, 2}, d_bound, rng);
    add_param("noise.b", {1, 2}, d_bound, rng);
  }
}

Parameter& Model::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("model: no parameter named " + name);
  return params_[it->second];
}

const Parameter& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("model: no parameter named " + name);
  return params_[it->second];
}

Model::Bound Model::bind(Tape& tape) const {
  Bound bound;
  bound.values.reserve(params_.size());
  for (const Parameter& p : params_) bound.values.push_back(tape.leaf(p));
  return bound;
}

const Tensor& Model::bp(const Bound& bound, const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("model: no parameter named " + name);
  return bound.values[it->second];
}

namespace {

// y = x*w + b with the bias row replicated via ones [rows,1] x b [1,cols]
Tensor affine(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = t.matmul(x, w);
  Tensor ones = Tensor::full({y.shape[0], 1}, 1.0);
  return t.add(y, t.matmul(ones, b));
}

}  // namespace

Tensor Model::conv_extract(Tape& tape, const Bound& bound, const AudioClip& wave) const {
  const auto n = static_cast<int64_t>(wave.samples.size());
  if (n < cfg_.min_input_samples())
    throw Error("conv_extract: input of " + std::to_string(n) +
                " samples is below the minimum of " +
                std::to_string(cfg_.min_input_samples()));
  Tensor x({n, 1}, wave.samples);
  for (size_t i = 0; i < cfg_.conv_stack.size(); ++i) {
    const std::string base = "encoder.conv" + std::to_string(i);
    Tensor y = tape.conv1d(x, bp(bound, base + ".w"), cfg_.conv_stack[i].stride);
    Tensor ones = Tensor::full({y.shape[0], 1}, 1.0);
    x = tape.relu(tape.add(y, tape.matmul(ones, bp(bound, base + ".b"))));
  }
  return x;
}

Model::EncodeResult Model::encode_context(Tape& tape, const Bound& bound,
                                          const Tensor& features) const {
  const int64_t d = cfg_.model_dim;
  const int64_t frames = features.shape[0];
  const int64_t dh = d / cfg_.attention_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor proj = affine(tape, features, bp(bound, "encoder.proj.w"), bp(bound, "encoder.proj.b"));
  Tensor pos = tape.add(proj, position_table(frames, d));

  Tensor h = pos;
  for (int64_t i = 0; i < cfg_.transformer_layers; ++i) {
    const std::string base = "encoder.layer" + std::to_string(i);
    Tensor n1 = tape.layer_norm(h, bp(bound, base + ".ln1.gamma"), bp(bound, base + ".ln1.beta"));
    Tensor q = affine(tape, n1, bp(bound, base + ".attn.wq"), bp(bound, base + ".attn.bq"));
    Tensor k = affine(tape, n1, bp(bound, base + ".attn.wk"), bp(bound, base + ".attn.bk"));
    Tensor v = affine(tape, n1, bp(bound, base + ".attn.wv"), bp(bound, base + ".attn.bv"));
    Tensor heads;
    for (int64_t head = 0; head < cfg_.attention_heads; ++head) {
      Tensor qi = tape.slice_cols(q, head * dh, dh);
      Tensor ki = tape.slice_cols(k, head * dh, dh);
      Tensor vi = tape.slice_cols(v, head * dh, dh);
      Tensor scores = tape.scale(tape.matmul(qi, tape.transpose(ki)), att_scale);
      Tensor weights = tape.exp(tape.log_softmax(scores));
      Tensor oi = tape.matmul(weights, vi);
      heads = head == 0 ? oi : tape.concat_cols(heads, oi);
    }
    Tensor o = affine(tape, heads, bp(bound, base + ".attn.wo"), bp(bound, base + ".attn.bo"));
    h = tape.add(h, o);
    Tensor n2 = tape.layer_norm(h, bp(bound, base + ".ln2.gamma"), bp(bound, base + ".ln2.beta"));
    Tensor f1 = tape.relu(affine(tape, n2, bp(bound, base + ".ffn.w1"), bp(bound, base + ".ffn.b1")));
    Tensor f2 = affine(tape, f1, bp(bound, base + ".ffn.w2"), bp(bound, base + ".ffn.b2"));
    h = tape.add(h, f2);
  }
  Tensor ctx = tape.layer_norm(h, bp(bound, "encoder.ln_out.gamma"), bp(bound, "encoder.ln_out.beta"));
  return {pos, ctx};
}

Tensor Model::fuse(Tape& tape, const Bound& bound, const Tensor& conv_projected,
                   const Tensor& context) const {
  if (conv_projected.shape[0] != context.shape[0])
    throw ShapeError("fuse: frame counts differ, " + shape_str(conv_projected.shape) + " vs " +
                     shape_str(context.shape));
  Tensor cat = tape.concat_cols(conv_projected, context);
  return affine(tape, cat, bp(bound, "fusion.w"), bp(bound, "fusion.b"));
}

Tensor Model::ctc_head(Tape& tape, const Bound& bound, const Tensor& h) const {
  return tape.log_softmax(affine(tape, h, bp(bound, "ctc.w"), bp(bound, "ctc.b")));
}

Tensor Model::noise_head(Tape& tape, const Bound& bound, const Tensor& h) const {
  Tensor pooled = tape.mean(h, 0);  // [1, D]
  Tensor logits = tape.add(tape.matmul(pooled, bp(bound, "noise.w")), bp(bound, "noise.b"));
  return tape.reshape(tape.exp(tape.log_softmax(logits)), {2});
}

ModelOutput Model::forward(Tape& tape, const Bound& bound, const AudioClip& wave) const {
  Tensor feats = conv_extract(tape, bound, wave);
  EncodeResult enc = encode_context(tape, bound, feats);

  Tensor noise_in = enc.context;
  Tensor ctc_in = enc.context;
  if (cfg_.fusion_enabled) {
    Tensor fused = fuse(tape, bound, enc.pos_projected, enc.context);
    noise_in = fused;
    if (cfg_.fusion_feeds_ctc) ctc_in = fused;
  }

  ModelOutput out;
  out.frame_count = feats.shape[0];
  out.ctc_log_probs = ctc_head(tape, bound, ctc_in);
  if (cfg_.noise_head_enabled) out.noise_probs = noise_head(tape, bound, noise_in);
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<const Parameter*>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, 5);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_u32(out, static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(out, static_cast<uint32_t>(p->value.shape.size()));
    for (int64_t dim : p->value.shape) put_u32(out, static_cast<uint32_t>(dim));
    for (double v : p->value.data) put_f64(out, v);
  }
  if (!out) throw FormatError("checkpoint: short write to " + path.string());
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw FormatError("checkpoint: bad magic in " + path.string());
  const uint32_t count = get_u32(in);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rank = get_u32(in);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(get_u32(in));
    const int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) data[static_cast<size_t>(j)] = get_f64(in);
    if (!in) throw FormatError("checkpoint: truncated file " + path.string());
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void Model::save_checkpoint(const std::filesystem::path& path) const {
  std::vector<const Parameter*> ptrs;
  ptrs.reserve(params_.size());
  for (const Parameter& p : params_) ptrs.push_back(&p);
  nawr::save_checkpoint(path, ptrs);
}

void Model::load_checkpoint(const std::filesystem::path& path) {
  auto loaded = nawr::load_checkpoint(path);
  if (loaded.size() != params_.size())
    throw FormatError("checkpoint: " + path.string() + " holds " +
                      std::to_string(loaded.size()) + " parameters, model expects " +
                      std::to_string(params_.size()));
  for (auto& [name, value] : loaded) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw FormatError("checkpoint: unexpected parameter '" + name + "' in " + path.string());
    Parameter& p = params_[it->second];
    if (p.value.shape != value.shape)
      throw FormatError("checkpoint: parameter '" + name + "' has shape " +
                        shape_str(value.shape) + ", model expects " + shape_str(p.value.shape));
    p.value = std::move(value);
  }
}

}  // namespace nawr
