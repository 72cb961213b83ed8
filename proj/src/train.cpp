#include "nawr/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nawr/rng.hpp"

namespace nawr {

using nlohmann::json;

void TrainHyper::validate() const {
  if (batch_size < 1) throw Error("hyper: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw Error("hyper: learning_rate must be positive");
  if (epochs < 1) throw Error("hyper: epochs must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw Error("hyper: betas must lie in (0, 1)");
  if (eps <= 0.0) throw Error("hyper: eps must be positive");
}

const std::vector<std::string>& ExperimentConfig::preset_names() {
  static const std::vector<std::string> names = {"baseline", "A", "B", "C", "D"};
  return names;
}

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
  std::string canon = name;
  std::transform(canon.begin(), canon.end(), canon.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  ExperimentConfig c;
  if (canon == "baseline") {
    c.name = "baseline";
    c.noise_fraction = 0.0;
    c.noise_head_enabled = false;
    c.fusion_enabled = false;
  } else if (canon == "a") {
    c.name = "A";
    c.noise_fraction = 0.05;
    c.noise_head_enabled = false;
    c.fusion_enabled = false;
  } else if (canon == "b") {
    c.name = "B";
    c.noise_fraction = 0.05;
    c.noise_head_enabled = true;
    c.alpha_mode = LossWeight::Mode::fixed;
    c.fusion_enabled = false;
  } else if (canon == "c") {
    c.name = "C";
    c.noise_fraction = 0.05;
    c.noise_head_enabled = true;
    c.alpha_mode = LossWeight::Mode::trainable;
    c.fusion_enabled = false;
  } else if (canon == "d") {
    c.name = "D";
    c.noise_fraction = 0.05;
    c.noise_head_enabled = true;
    c.alpha_mode = LossWeight::Mode::trainable;
    c.fusion_enabled = true;
  } else {
    throw Error("unknown preset '" + name + "' (expected baseline, A, B, C or D)");
  }
  c.alpha_value = 0.01;
  c.model.noise_head_enabled = c.noise_head_enabled;
  c.model.fusion_enabled = c.fusion_enabled;
  return c;
}

void ExperimentConfig::apply_paper_hparams() {
  hyper.learning_rate = 1e-5;
  hyper.epochs = 30;
}

LossWeight ExperimentConfig::make_weight() const {
  return alpha_mode == LossWeight::Mode::fixed ? LossWeight::fixed(alpha_value)
                                               : LossWeight::trainable(alpha_value);
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("expected a boolean, got '" + v + "'");
}

std::vector<ConvLayerSpec> parse_conv_stack(const std::string& v) {
  std::vector<ConvLayerSpec> stack;
  std::istringstream layers(v);
  std::string layer;
  while (std::getline(layers, layer, ',')) {
    ConvLayerSpec l;
    if (std::sscanf(layer.c_str(), "%ld:%ld:%ld", &l.out_channels, &l.kernel, &l.stride) != 3)
      throw Error("conv layer must be channels:kernel:stride, got '" + layer + "'");
    stack.push_back(l);
  }
  if (stack.empty()) throw Error("empty conv_stack");
  return stack;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("config: cannot open " + file.string());
  ExperimentConfig cfg = ExperimentConfig::preset("B");
  bool paper_hparams = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config: " + file.string() + " line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        const TrainHyper keep = cfg.hyper;
        cfg = ExperimentConfig::preset(value);
        cfg.hyper = keep;
      } else if (key == "name") {
        cfg.name = value;
      } else if (key == "noise_fraction") {
        cfg.noise_fraction = std::stod(value);
        if (cfg.noise_fraction < 0.0 || cfg.noise_fraction >= 1.0)
          throw Error("noise_fraction must be in [0, 1)");
      } else if (key == "noise_head_enabled") {
        cfg.noise_head_enabled = parse_bool(value);
        cfg.model.noise_head_enabled = cfg.noise_head_enabled;
      } else if (key == "alpha_mode") {
        if (value == "fixed") cfg.alpha_mode = LossWeight::Mode::fixed;
        else if (value == "trainable") cfg.alpha_mode = LossWeight::Mode::trainable;
        else throw Error("alpha_mode must be fixed or trainable");
      } else if (key == "alpha_value") {
        cfg.alpha_value = std::stod(value);
        if (cfg.alpha_value <= 0.0) throw Error("alpha_value must be positive");
      } else if (key == "fusion_enabled") {
        cfg.fusion_enabled = parse_bool(value);
        cfg.model.fusion_enabled = cfg.fusion_enabled;
      } else if (key == "fusion_feeds_ctc") {
        cfg.model.fusion_feeds_ctc = parse_bool(value);
      } else if (key == "conv_stack") {
        cfg.model.conv_stack = parse_conv_stack(value);
      } else if (key == "model_dim") {
        cfg.model.model_dim = std::stoll(value);
      } else if (key == "transformer_layers") {
        cfg.model.transformer_layers = std::stoll(value);
      } else if (key == "attention_heads") {
        cfg.model.attention_heads = std::stoll(value);
      } else if (key == "ffn_dim") {
        cfg.model.ffn_dim = std::stoll(value);
      } else if (key == "batch_size") {
        cfg.hyper.batch_size = std::stoll(value);
      } else if (key == "learning_rate") {
        cfg.hyper.learning_rate = std::stod(value);
      } else if (key == "epochs") {
        cfg.hyper.epochs = std::stoll(value);
      } else if (key == "beta1") {
        cfg.hyper.beta1 = std::stod(value);
      } else if (key == "beta2") {
        cfg.hyper.beta2 = std::stod(value);
      } else if (key == "eps") {
        cfg.hyper.eps = std::stod(value);
      } else if (key == "seed") {
        cfg.hyper.seed = std::stoull(value);
      } else if (key == "paper_hparams") {
        paper_hparams = parse_bool(value);
      } else {
        throw Error("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw FormatError("config: " + file.string() + " line " + std::to_string(lineno) +
                        ": bad value '" + value + "' for " + key);
    } catch (const Error& e) {
      throw FormatError("config: " + file.string() + " line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  if (paper_hparams) cfg.apply_paper_hparams();
  cfg.hyper.validate();
  return cfg;
}

void adam_step(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads,
               TrainState& state, const TrainHyper& hyper) {
  if (params.size() != grads.size()) throw Error("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.push_back(Tensor::zeros(p->value.shape));
      state.v.push_back(Tensor::zeros(p->value.shape));
    }
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape != params[i]->value.shape)
      throw Error("adam_step: gradient shape mismatch for " + params[i]->name);
    if (!grads[i].all_finite())
      throw Error("adam_step: non-finite gradient for parameter " + params[i]->name);
  }

  const int64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->trainable) continue;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    Tensor& p = params[i]->value;
    const Tensor& g = grads[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m.at(j) = hyper.beta1 * m.at(j) + (1.0 - hyper.beta1) * g.at(j);
      v.at(j) = hyper.beta2 * v.at(j) + (1.0 - hyper.beta2) * g.at(j) * g.at(j);
      const double mhat = m.at(j) / bc1;
      const double vhat = v.at(j) / bc2;
      p.at(j) -= hyper.learning_rate * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

namespace {

struct StepLosses {
  double ctc = 0.0, ce = 0.0, total = 0.0;
  int64_t n = 0, n_ce = 0;
};

// forward + joint loss for every item on one tape, averaged in item order
Tensor batch_loss(Tape& tape, const Model& model, const Model::Bound& bound,
                  const LossWeight& weight, const Tensor* rho_leaf, const Batch& batch,
                  StepLosses& acc) {
  Tensor total;
  for (size_t i = 0; i < batch.items.size(); ++i) {
    const BatchItem& item = batch.items[i];
    ModelOutput out;
    try {
      out = model.forward(tape, bound, item.clip);
    } catch (const Error& e) {
      throw Error(std::string("forward failed for ") + item.entry->audio_path + ": " + e.what());
    }
    Tensor l_ctc;
    try {
      l_ctc = ctc_loss(tape, out.ctc_log_probs, item.target_ids);
    } catch (const CtcInfeasibleError& e) {
      throw Error(std::string("infeasible target for ") + item.entry->audio_path + ": " +
                  e.what());
    }
    std::optional<Tensor> l_ce;
    if (out.noise_probs) {
      const int label = item.entry->label == ClassLabel::noise ? 1 : 0;
      l_ce = cross_entropy(tape, *out.noise_probs, label);
    }
    const LossBreakdown lb = joint_loss(tape, l_ctc, l_ce, weight, rho_leaf);
    acc.ctc += lb.ctc();
    acc.ce += lb.ce();
    acc.total += lb.total();
    acc.n += 1;
    if (lb.l_ce) acc.n_ce += 1;
    total = i == 0 ? lb.l_total : tape.add(total, lb.l_total);
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.items.size()));
}

}  // namespace

EpochSummary train_epoch(Model& model, LossWeight& weight,
                         const std::vector<ManifestEntry>& split,
                         const std::filesystem::path& audio_root, const Vocab& vocab,
                         const TrainHyper& hyper, TrainState& state, int64_t epoch) {
  hyper.validate();
  const bool trainable_alpha = weight.mode == LossWeight::Mode::trainable;

  std::vector<Parameter*> params;
  for (Parameter& p : model.parameters()) params.push_back(&p);
  if (trainable_alpha) params.push_back(&weight.rho);

  StepLosses epoch_acc;
  BatchIterator batches(split, audio_root, vocab, hyper.batch_size, hyper.seed, epoch);
  while (auto batch = batches.next()) {
    Tape tape(true);
    Model::Bound bound = model.bind(tape);
    Tensor rho_leaf;
    if (trainable_alpha) rho_leaf = tape.leaf(weight.rho);

    StepLosses acc;
    Tensor loss = batch_loss(tape, model, bound, weight, trainable_alpha ? &rho_leaf : nullptr,
                             *batch, acc);
    check_finite(loss, "train_epoch: batch loss");
    tape.backward(loss);

    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (size_t i = 0; i < bound.values.size(); ++i)
      grads.push_back(tape.grad_or_zero(bound.values[i]));
    if (trainable_alpha) grads.push_back(tape.grad_or_zero(rho_leaf));

    adam_step(params, grads, state, hyper);
    state.alpha_steps.push_back(weight.alpha_value());

    epoch_acc.ctc += acc.ctc;
    epoch_acc.ce += acc.ce;
    epoch_acc.total += acc.total;
    epoch_acc.n += acc.n;
    epoch_acc.n_ce += acc.n_ce;
  }

  EpochSummary summary;
  const auto n = static_cast<double>(epoch_acc.n);
  summary.mean_l_ctc = epoch_acc.ctc / n;
  summary.mean_l_ce = epoch_acc.n_ce > 0 ? epoch_acc.ce / static_cast<double>(epoch_acc.n_ce) : 0.0;
  summary.mean_l_total = epoch_acc.total / n;
  summary.alpha = weight.alpha_value();
  state.history.push_back(summary);
  return summary;
}

Scorer make_model_scorer(const Model& model, const Vocab& vocab) {
  return [&model, &vocab](const ManifestEntry&, const AudioClip& clip) {
    Tape tape(false);
    Model::Bound bound = model.bind(tape);
    ModelOutput out = model.forward(tape, bound, clip);
    Prediction pred;
    pred.decoded = greedy_decode(out.ctc_log_probs, vocab);
    if (out.noise_probs)
      pred.head_label =
          out.noise_probs->at(1) > out.noise_probs->at(0) ? ClassLabel::noise : ClassLabel::speech;
    return pred;
  };
}

double split_wer(const Model& model, const Vocab& vocab,
                 const std::vector<ManifestEntry>& entries,
                 const std::filesystem::path& audio_root) {
  const Scorer scorer = make_model_scorer(model, vocab);
  int64_t errors = 0, words = 0;
  for (const ManifestEntry& e : entries) {
    if (e.label != ClassLabel::speech) continue;
    const AudioClip clip = read_wav(audio_root / e.audio_path);
    const Prediction pred = scorer(e, clip);
    const auto ref = split_words(e.transcript);
    errors += edit_distance(ref, split_words(pred.decoded));
    words += static_cast<int64_t>(ref.size());
  }
  if (words == 0) throw Error("split_wer: no speech entries in split");
  return static_cast<double>(errors) / static_cast<double>(words);
}

std::vector<const Parameter*> experiment_params(const Model& model, const LossWeight& weight) {
  std::vector<const Parameter*> out;
  for (const Parameter& p : model.parameters()) out.push_back(&p);
  if (weight.mode == LossWeight::Mode::trainable) out.push_back(&weight.rho);
  return out;
}

void apply_checkpoint(Model& model, LossWeight* weight, const std::filesystem::path& path) {
  auto loaded = load_checkpoint(path);
  const bool want_rho = weight != nullptr && weight->mode == LossWeight::Mode::trainable;
  const size_t expected = model.parameters().size() + (want_rho ? 1 : 0);
  if (loaded.size() != expected)
    throw FormatError("checkpoint: " + path.string() + " holds " + std::to_string(loaded.size()) +
                      " parameters, expected " + std::to_string(expected));
  for (auto& [name, value] : loaded) {
    Parameter& target = name == "loss.rho" && want_rho ? weight->rho : model.param(name);
    if (target.value.shape != value.shape)
      throw FormatError("checkpoint: parameter '" + name + "' has shape " +
                        shape_str(value.shape) + ", expected " + shape_str(target.value.shape));
    target.value = std::move(value);
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const std::filesystem::path& init_checkpoint) {
  ExperimentConfig cfg = config;
  cfg.hyper.validate();
  std::filesystem::create_directories(out_dir);

  const Vocab vocab = Vocab::load(data_dir / "vocab.txt");
  cfg.model.vocab_size = vocab.size();
  cfg.model.noise_head_enabled = cfg.noise_head_enabled;
  cfg.model.fusion_enabled = cfg.fusion_enabled;

  const auto train_pool = build_manifest(data_dir, "train");
  const auto val_entries = build_manifest(data_dir, "validation");
  const auto test_entries = build_manifest(data_dir, "test");

  std::vector<ManifestEntry> pool_speech, pool_noise;
  for (const auto& e : train_pool)
    (e.label == ClassLabel::speech ? pool_speech : pool_noise).push_back(e);
  SplitSpec split_spec{"train", cfg.noise_fraction, mix_seed(cfg.hyper.seed, 0xc0de)};
  const auto train_split = compose_split(pool_speech, pool_noise, split_spec);

  Model model(cfg.model, mix_seed(cfg.hyper.seed, 0x111));
  LossWeight weight = cfg.make_weight();
  if (!init_checkpoint.empty()) apply_checkpoint(model, &weight, init_checkpoint);

  std::ofstream log(out_dir / (cfg.name + ".train.jsonl"));
  if (!log) throw FormatError("run_experiment: cannot write training log in " + out_dir.string());

  TrainState state;
  double best_wer = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  double best_rho = weight.mode == LossWeight::Mode::trainable ? weight.rho.value.item() : 0.0;

  auto snapshot = [&]() {
    best_params.clear();
    for (const Parameter& p : model.parameters()) best_params.push_back(p.value);
    if (weight.mode == LossWeight::Mode::trainable) best_rho = weight.rho.value.item();
  };
  snapshot();

  for (int64_t epoch = 0; epoch < cfg.hyper.epochs; ++epoch) {
    const EpochSummary s =
        train_epoch(model, weight, train_split, data_dir, vocab, cfg.hyper, state, epoch);
    const double val_wer = split_wer(model, vocab, val_entries, data_dir);
    json j;
    j["epoch"] = epoch;
    j["mean_l_ctc"] = s.mean_l_ctc;
    j["mean_l_ce"] = s.mean_l_ce;
    j["alpha"] = s.alpha;
    j["mean_l_total"] = s.mean_l_total;
    j["validation_wer"] = val_wer;
    log << j.dump() << '\n';
    log.flush();
    if (val_wer < best_wer) {
      best_wer = val_wer;
      snapshot();
    }
    // rolling checkpoint so an interrupted run can restart
    {
      save_checkpoint(out_dir / (cfg.name + ".last.ckpt"), experiment_params(model, weight));
    }
  }

  // restore the best validation-WER parameters before the final evaluation
  for (size_t i = 0; i < model.parameters().size(); ++i)
    model.parameters()[i].value = best_params[i];
  if (weight.mode == LossWeight::Mode::trainable) weight.rho.value = Tensor::scalar(best_rho);
  save_checkpoint(out_dir / (cfg.name + ".ckpt"), experiment_params(model, weight));

  std::vector<ManifestEntry> test_speech, test_noise;
  for (const auto& e : test_entries)
    (e.label == ClassLabel::speech ? test_speech : test_noise).push_back(e);

  MetricsReport report = evaluate(make_model_scorer(model, vocab), test_speech, test_noise,
                                  data_dir, cfg.name);
  if (cfg.noise_head_enabled) report.alpha_final = weight.alpha_value();

  std::ofstream rep(out_dir / (cfg.name + ".report.json"));
  rep << report.to_json_line() << '\n';

  ExperimentResult result;
  result.report = std::move(report);
  result.state = std::move(state);
  return result;
}

std::vector<MetricsReport> run_compare(const std::filesystem::path& data_dir,
                                       const std::vector<std::string>& presets,
                                       const std::filesystem::path& out_dir, uint64_t seed,
                                       std::optional<int64_t> epochs_override,
                                       std::optional<double> lr_override) {
  if (presets.empty()) throw Error("compare: no presets given");
  {
    std::vector<std::string> sorted = presets;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw Error("compare: duplicate preset names");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<MetricsReport> rows;
  for (const std::string& name : presets) {
    ExperimentConfig cfg = ExperimentConfig::preset(name);
    cfg.hyper.seed = seed;
    if (epochs_override) cfg.hyper.epochs = *epochs_override;
    if (lr_override) cfg.hyper.learning_rate = *lr_override;
    rows.push_back(run_experiment(cfg, data_dir, out_dir / cfg.name).report);
  }

  std::ofstream table(out_dir / "comparison.txt");
  table << format_comparison_table(rows);
  std::ofstream records(out_dir / "comparison.jsonl");
  for (const auto& r : rows) records << r.to_json_line() << '\n';
  return rows;
}

double run_model_gradcheck(uint64_t seed, bool corrupt) {
  ModelConfig mc;
  mc.conv_stack = {{4, 10, 6}, {8, 4, 4}};
  mc.model_dim = 8;
  mc.transformer_layers = 1;
  mc.attention_heads = 2;
  mc.ffn_dim = 16;
  mc.noise_head_enabled = true;
  mc.fusion_enabled = true;

  SynthSpec synth;
  synth.alphabet = "ab";
  const Vocab vocab = Vocab::for_alphabet(synth.alphabet);
  mc.vocab_size = vocab.size();

  Model model(mc, mix_seed(seed, 0x6c));
  LossWeight weight = LossWeight::trainable(0.01);
  const AudioClip speech = synth_utterance("ab", synth, mix_seed(seed, 0x6d));
  const AudioClip noise = synth_noise(NoiseKind::white, 0.1, mix_seed(seed, 0x6e), synth);
  const std::vector<int> target = vocab.encode("ab");

  auto f = [&](Tape& tape) {
    Model::Bound bound = model.bind(tape);
    Tensor rho_leaf = tape.leaf(weight.rho);

    ModelOutput sp = model.forward(tape, bound, speech);
    Tensor sp_ctc = ctc_loss(tape, sp.ctc_log_probs, target);
    Tensor sp_ce = cross_entropy(tape, *sp.noise_probs, 0);
    LossBreakdown sp_lb = joint_loss(tape, sp_ctc, sp_ce, weight, &rho_leaf);

    ModelOutput no = model.forward(tape, bound, noise);
    Tensor no_ctc = ctc_loss(tape, no.ctc_log_probs, {});
    Tensor no_ce = cross_entropy(tape, *no.noise_probs, 1);
    LossBreakdown no_lb = joint_loss(tape, no_ctc, no_ce, weight, &rho_leaf);

    Tensor loss = tape.scale(tape.add(sp_lb.l_total, no_lb.l_total), 0.5);
    if (corrupt && tape.recording()) {
      // analytic-only term; central differences cannot see it
      loss = tape.add(loss, tape.scale(tape.sum(bound.values[0]), 1e-2));
    }
    return loss;
  };

  std::vector<Parameter*> params;
  for (Parameter& p : model.parameters()) params.push_back(&p);
  params.push_back(&weight.rho);
  return grad_check(f, params, 1e-5);
}

}  // namespace nawr
