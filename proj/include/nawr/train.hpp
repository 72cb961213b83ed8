#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nawr/dataset.hpp"
#include "nawr/eval.hpp"
#include "nawr/loss.hpp"
#include "nawr/model.hpp"

namespace nawr {

struct TrainHyper {
  int64_t batch_size = 8;
  double learning_rate = 1e-3;  // toy scale; paper_hparams switches to 1e-5
  int64_t epochs = 300;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;

  void validate() const;
};

// One Baseline/A/B/C/D experiment: data composition, architecture flags,
// weighting mode and the training hyperparameters.
struct ExperimentConfig {
  std::string name = "B";
  double noise_fraction = 0.05;
  bool noise_head_enabled = true;
  LossWeight::Mode alpha_mode = LossWeight::Mode::fixed;
  double alpha_value = 0.01;  // fixed value, or init in trainable mode
  bool fusion_enabled = false;
  ModelConfig model;
  TrainHyper hyper;

  static ExperimentConfig preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
  void apply_paper_hparams();  // learning rate 1e-5, 30 epochs
  LossWeight make_weight() const;
};

// Flat "key = value" file with # comments. A preset key loads that preset's
// defaults; later keys override individual fields. Unknown keys are errors.
ExperimentConfig parse_experiment_config(const std::filesystem::path& file);

struct EpochSummary {
  double mean_l_ctc = 0.0;
  double mean_l_ce = 0.0;
  double alpha = 0.0;
  double mean_l_total = 0.0;
};

struct TrainState {
  int64_t step = 0;
  std::vector<Tensor> m, v;  // Adam moments, parallel to the parameter list
  std::vector<EpochSummary> history;
  std::vector<double> alpha_steps;  // alpha after every optimizer step
};

// One Adam update over the full parameter list. Rejects non-finite
// gradients before touching any parameter.
void adam_step(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads,
               TrainState& state, const TrainHyper& hyper);

EpochSummary train_epoch(Model& model, LossWeight& weight,
                         const std::vector<ManifestEntry>& split,
                         const std::filesystem::path& audio_root, const Vocab& vocab,
                         const TrainHyper& hyper, TrainState& state, int64_t epoch);

// Greedy-decoding scorer over a trained model, for the evaluator.
Scorer make_model_scorer(const Model& model, const Vocab& vocab);

// Corpus-pooled WER of the speech entries in a split.
double split_wer(const Model& model, const Vocab& vocab,
                 const std::vector<ManifestEntry>& entries,
                 const std::filesystem::path& audio_root);

struct ExperimentResult {
  MetricsReport report;
  TrainState state;
};

// Composes the training split per the preset, trains, checkpoints the best
// validation-WER parameters, evaluates on the test split and writes
// <name>.ckpt, <name>.train.jsonl and <name>.report.json under out_dir.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const std::filesystem::path& init_checkpoint = {});

// Runs each preset on the same data and seed; writes comparison.txt and
// comparison.jsonl under out_dir.
std::vector<MetricsReport> run_compare(const std::filesystem::path& data_dir,
                                       const std::vector<std::string>& presets,
                                       const std::filesystem::path& out_dir, uint64_t seed,
                                       std::optional<int64_t> epochs_override = {},
                                       std::optional<double> lr_override = {});

// checkpoint contents for an experiment: model parameters plus rho when the
// weighting is trainable
std::vector<const Parameter*> experiment_params(const Model& model, const LossWeight& weight);
void apply_checkpoint(Model& model, LossWeight* weight, const std::filesystem::path& path);

// Finite-difference verification of the full joint loss on a small
// dual-head fusion model with trainable weighting. corrupt injects a
// recording-only loss term as a negative control.
double run_model_gradcheck(uint64_t seed, bool corrupt = false);

}  // namespace nawr
