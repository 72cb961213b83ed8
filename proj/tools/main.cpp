#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nawr/corpus.hpp"
#include "nawr/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split_presets(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

int cmd_synth_data(const fs::path& out_dir, int64_t train_utts, int64_t eval_utts,
                   int64_t val_utts, double noise_frac, uint64_t seed) {
  nawr::CorpusOptions opts;
  opts.train_utts = train_utts;
  opts.eval_utts = eval_utts;
  opts.val_utts = val_utts;
  opts.noise_fraction = noise_frac;
  opts.seed = seed;
  const nawr::CorpusCounts c = nawr::synth_corpus(out_dir, opts);
  std::cout << "train: " << c.train_speech << " speech + " << c.train_noise << " noise = "
            << (c.train_speech + c.train_noise) << " entries\n"
            << "validation: " << c.val_speech << " speech + " << c.val_noise << " noise\n"
            << "test: " << c.test_speech << " speech + " << c.test_noise << " noise\n"
            << "wrote manifests and vocab.txt under " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out_dir,
              std::optional<uint64_t> seed, const fs::path& init_ckpt, bool paper_hparams) {
  nawr::ExperimentConfig cfg = nawr::parse_experiment_config(config_path);
  if (seed) cfg.hyper.seed = *seed;
  if (paper_hparams) cfg.apply_paper_hparams();
  const nawr::ExperimentResult res = nawr::run_experiment(cfg, data_dir, out_dir, init_ckpt);
  std::cout << nawr::format_comparison_table({res.report});
  std::cout << "checkpoint and report written under " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const std::string& preset,
             const fs::path& config_path, const std::string& split, const fs::path& out_path) {
  nawr::ExperimentConfig cfg = config_path.empty()
                                   ? nawr::ExperimentConfig::preset(preset)
                                   : nawr::parse_experiment_config(config_path);
  const nawr::Vocab vocab = nawr::Vocab::load(data_dir / "vocab.txt");
  cfg.model.vocab_size = vocab.size();
  cfg.model.noise_head_enabled = cfg.noise_head_enabled;
  cfg.model.fusion_enabled = cfg.fusion_enabled;

  nawr::Model model(cfg.model, 0);
  nawr::LossWeight weight = cfg.make_weight();
  nawr::apply_checkpoint(model, &weight, ckpt);

  const auto entries = nawr::build_manifest(data_dir, split);
  std::vector<nawr::ManifestEntry> speech, noise;
  for (const auto& e : entries)
    (e.label == nawr::ClassLabel::speech ? speech : noise).push_back(e);

  nawr::MetricsReport report = nawr::evaluate(nawr::make_model_scorer(model, vocab), speech,
                                              noise, data_dir, cfg.name);
  if (cfg.noise_head_enabled) report.alpha_final = weight.alpha_value();
  std::cout << nawr::format_comparison_table({report});
  std::cout << report.to_json_line() << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << report.to_json_line() << '\n';
  }
  return kExitOk;
}

int cmd_compare(const fs::path& data_dir, const std::string& presets_csv, const fs::path& out_dir,
                uint64_t seed, std::optional<int64_t> epochs, std::optional<double> lr) {
  const auto presets = split_presets(presets_csv);
  for (const auto& p : presets) nawr::ExperimentConfig::preset(p);  // validate names up front
  const auto rows = nawr::run_compare(data_dir, presets, out_dir, seed, epochs, lr);
  std::cout << nawr::format_comparison_table(rows);
  std::cout << "full records in " << (out_dir / "comparison.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed, bool corrupt) {
  const double err = nawr::run_model_gradcheck(seed, corrupt);
  std::cout << "max relative error: " << err << "\n";
  if (err <= 1e-4) return kExitOk;
  std::cerr << "gradient check failed: " << err << " > 1e-4\n";
  return kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noise-aware speech recognition testbed"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate the synthetic corpus");
  fs::path synth_out = "data";
  int64_t train_utts = 200, eval_utts = 40, val_utts = -1;
  double noise_frac = 0.05;
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();
  synth->add_option("--train-utts", train_utts, "speech utterances in the training pool")
      ->capture_default_str();
  synth->add_option("--eval-utts", eval_utts, "total utterances per evaluation split (50/50)")
      ->capture_default_str();
  synth->add_option("--val-utts", val_utts, "validation split override, -1 uses --eval-utts")
      ->capture_default_str();
  synth->add_option("--noise-frac", noise_frac, "noise fraction of the final training set")
      ->check(CLI::Range(0.0, 0.999))->capture_default_str();
  synth->add_option("--seed", synth_seed, "corpus seed")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train one experiment from a config file");
  fs::path train_config, train_data = "data", train_out = "runs", train_init;
  std::optional<uint64_t> train_seed;
  bool train_paper = false;
  train->add_option("--config", train_config, "flat key = value experiment config")->required();
  train->add_option("--data", train_data, "corpus directory")->capture_default_str();
  train->add_option("--out", train_out, "output directory")->capture_default_str();
  train->add_option("--seed", train_seed, "override the config seed");
  train->add_option("--init", train_init, "checkpoint to start from");
  train->add_flag("--paper-hparams", train_paper, "learning rate 1e-5 and 30 epochs");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  fs::path eval_ckpt, eval_data = "data", eval_config, eval_out;
  std::string eval_preset = "B", eval_split = "test";
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "corpus directory")->capture_default_str();
  eval->add_option("--preset", eval_preset, "preset the checkpoint was trained with")
      ->capture_default_str();
  eval->add_option("--config", eval_config, "config file, overrides --preset");
  eval->add_option("--split", eval_split, "manifest to evaluate")->capture_default_str();
  eval->add_option("--out", eval_out, "also write the report record here");

  // compare
  auto* compare = app.add_subcommand("compare", "run presets on shared data and tabulate");
  fs::path cmp_data = "data", cmp_out = "runs/compare";
  std::string cmp_presets = "baseline,A,B,C,D";
  uint64_t cmp_seed = 0;
  std::optional<int64_t> cmp_epochs;
  std::optional<double> cmp_lr;
  compare->add_option("--data", cmp_data, "corpus directory")->capture_default_str();
  compare->add_option("--presets", cmp_presets, "comma-separated preset names")
      ->capture_default_str();
  compare->add_option("--out", cmp_out, "output directory")->capture_default_str();
  compare->add_option("--seed", cmp_seed, "shared seed for every preset")->capture_default_str();
  compare->add_option("--epochs", cmp_epochs, "override the preset epoch count");
  compare->add_option("--lr", cmp_lr, "override the preset learning rate");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the joint loss");
  uint64_t gc_seed = 0;
  bool gc_corrupt = false;
  gradcheck->add_option("--seed", gc_seed, "model and input seed")->capture_default_str();
  gradcheck->add_flag("--corrupt", gc_corrupt, "negative control: inject a gradient error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth_data(synth_out, train_utts, eval_utts, val_utts, noise_frac, synth_seed);
    if (train->parsed())
      return cmd_train(train_config, train_data, train_out, train_seed, train_init, train_paper);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_preset, eval_config, eval_split, eval_out);
    if (compare->parsed())
      return cmd_compare(cmp_data, cmp_presets, cmp_out, cmp_seed, cmp_epochs, cmp_lr);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_corrupt);
  } catch (const nawr::FormatError& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    // a malformed config file is a usage error
    if (msg.rfind("config:", 0) == 0) return kExitUsage;
    return kExitRuntime;
  } catch (const nawr::Error& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    // bad preset lists are usage errors, not runtime failures
    if (msg.find("unknown preset") != std::string::npos ||
        msg.find("duplicate preset") != std::string::npos)
      return kExitUsage;
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
