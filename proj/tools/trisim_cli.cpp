// SPDX-License-Identifier: Apache-2.0
//
// trisim — batch command-line surface for the toolkit.
//
//   gen-data     synthesize mosaic corpora, pair/label manifests, stats
//   pretrain     SimTriplet / SimSiam self-supervised pretraining
//   probe        frozen-encoder linear evaluation (k-fold heads)
//   supervised   from-scratch supervised baseline (k-fold ensemble)
//   eval         apply heads (or a supervised bundle) to a test manifest
//   verify       run the built-in oracle suites
//
// Exit codes: 0 success, 2 usage/config error, 3 runtime/training failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "trisim/evaluation.hpp"
#include "trisim/mosaic.hpp"
#include "trisim/trainer.hpp"
#include "trisim/verify.hpp"

namespace fs = std::filesystem;
using namespace trisim;

namespace {

// Input/validation problems (exit 2), as opposed to runtime failures (3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::pair<std::int64_t, std::int64_t> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError(cat("--grid expects RxC, got '", text, "'"));
  try {
    return {std::stoll(text.substr(0, x)), std::stoll(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError(cat("--grid expects RxC, got '", text, "'"));
  }
}

EncoderConfig encoder_preset(const std::string& name) {
  if (name == "default") return EncoderConfig{};
  if (name == "small") return EncoderConfig::small();
  if (name == "deep") return EncoderConfig::deep();
  throw ConfigError(cat("unknown encoder preset '", name, "' (default|small|deep)"));
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os.good()) throw std::runtime_error(cat("cannot open '", path, "' for writing"));
  return os;
}

// Expands `--config FILE` (flat key=value lines) into command-line arguments
// placed right after the subcommand, so explicit flags win under a TakeLast
// policy. Unknown keys surface as unknown-option parse errors.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty() || args.empty()) return args;

  std::ifstream is(config_path);
  if (!is.good()) throw ConfigError(cat("cannot open config file '", config_path, "'"));
  std::vector<std::string> from_file;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(cat("config file '", config_path, "': malformed line '", line, "'"));
    from_file.push_back(cat("--", line.substr(0, eq), "=", line.substr(eq + 1)));
  }
  // Insert after the subcommand token (the first non-flag argument).
  std::vector<std::string> out;
  bool inserted = false;
  for (const auto& a : args) {
    out.push_back(a);
    if (!inserted && !a.empty() && a[0] != '-') {
      out.insert(out.end(), from_file.begin(), from_file.end());
      inserted = true;
    }
  }
  return out;
}

void use_take_last(CLI::App* cmd) {
  for (auto* opt : cmd->get_options())
    if (opt->get_expected_min() > 0) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  int classes = 4;
  std::string grid = "32x32";
  std::int64_t patch = 32;
  int pretrain_mosaics = 8;
  int train_mosaics = 10;
  int test_mosaics = 4;
  std::int64_t pairs = 4096;
  std::int64_t labels_per_mosaic = 0;  // 0 = every tile
  std::int64_t crop_stride = 0;        // 0 = non-overlapping tiles
  double smoothness = 12.0;
  double adjacency_target = 0.9;
  std::uint64_t seed = 1;
};

int run_gen_data(const GenDataArgs& args) {
  if (args.classes < 2) throw ConfigError("--classes must be at least 2");
  const auto [rows, cols] = parse_grid(args.grid);
  if (rows < 1 || cols < 1) throw ConfigError("--grid dimensions must be positive");
  if (args.pairs < 1) throw ConfigError("--pairs must be positive");
  if (args.pretrain_mosaics < 1 || args.train_mosaics < 1 || args.test_mosaics < 1)
    throw ConfigError("mosaic counts must be positive");

  MosaicSpec spec;
  spec.classes = args.classes;
  spec.rows = rows;
  spec.cols = cols;
  spec.patch_size = args.patch;
  spec.region_smoothness = args.smoothness;
  spec.adjacency_target = args.adjacency_target;

  fs::create_directories(args.out);
  const std::vector<std::string> echo{
      cat("classes=", args.classes),         cat("grid=", args.grid),
      cat("patch=", args.patch),             cat("pretrain_mosaics=", args.pretrain_mosaics),
      cat("train_mosaics=", args.train_mosaics), cat("test_mosaics=", args.test_mosaics),
      cat("pairs=", args.pairs),             cat("labels_per_mosaic=", args.labels_per_mosaic),
      cat("crop_stride=", args.crop_stride),
      cat("smoothness=", args.smoothness),   cat("adjacency_target=", args.adjacency_target),
      cat("seed=", args.seed)};

  // Pretraining corpus and adjacent-pair manifest. A crop stride below the
  // patch size switches the pair sampler onto an overlapping grid.
  std::vector<Mosaic> pretrain_mosaics;
  std::vector<TileGrid> pair_grids;
  std::vector<const ImageU8*> stat_images;
  for (int i = 0; i < args.pretrain_mosaics; ++i) {
    const std::string id = cat("pre_", i);
    auto m = generate_synthetic_mosaic(spec, mix_seed(args.seed, 1000 + static_cast<std::uint64_t>(i)), id);
    write_trimg((fs::path(args.out) / cat("mosaic_", id, ".trimg")).string(), *m.image);
    stat_images.push_back(m.image.get());
    pair_grids.push_back(args.crop_stride > 0
                             ? tile_image(m.image, id, args.patch, args.crop_stride)
                             : m.grid);
    pretrain_mosaics.push_back(std::move(m));
  }
  Rng pair_rng(mix_seed(args.seed, 0x9a125ULL));
  std::vector<PatchPair> pairs;
  for (std::int64_t i = 0; i < args.pairs; ++i)
    pairs.push_back(sample_adjacent_pair(
        pair_grids[static_cast<std::size_t>(i) % pair_grids.size()], pair_rng));
  write_pair_manifest((fs::path(args.out) / "pairs.csv").string(), pairs, echo);

  // Labeled corpora.
  auto emit_labeled = [&](const char* prefix, int count, std::uint64_t tag,
                          const std::string& manifest) {
    std::vector<LabeledPatch> items;
    for (int i = 0; i < count; ++i) {
      const std::string id = cat(prefix, i);
      auto m = generate_synthetic_mosaic(spec, mix_seed(args.seed, tag + static_cast<std::uint64_t>(i)), id);
      write_trimg((fs::path(args.out) / cat("mosaic_", id, ".trimg")).string(), *m.image);
      std::vector<std::pair<std::int64_t, std::int64_t>> tiles;
      for (std::int64_t r = 0; r < m.grid.rows; ++r)
        for (std::int64_t c = 0; c < m.grid.cols; ++c) tiles.emplace_back(r, c);
      if (args.labels_per_mosaic > 0 &&
          args.labels_per_mosaic < static_cast<std::int64_t>(tiles.size())) {
        Rng rng(mix_seed(args.seed, tag + 500 + static_cast<std::uint64_t>(i)));
        for (std::size_t j = tiles.size(); j > 1; --j) std::swap(tiles[j - 1], tiles[rng.below(j)]);
        tiles.resize(static_cast<std::size_t>(args.labels_per_mosaic));
        std::sort(tiles.begin(), tiles.end());
      }
      for (const auto& [r, c] : tiles)
        items.push_back({id, r, c, m.grid.label_at(r, c)});
    }
    write_label_manifest((fs::path(args.out) / manifest).string(), items, echo);
  };
  emit_labeled("train_", args.train_mosaics, 2000, "labels_train.csv");
  emit_labeled("test_", args.test_mosaics, 3000, "labels_test.csv");

  // Normalization statistics over the pretraining corpus.
  auto channel_stats = compute_channel_stats(stat_images);
  DatasetStats stats;
  stats.mean = channel_stats.mean;
  stats.stdev = channel_stats.stdev;
  stats.patch_size = args.patch;
  stats.crop_stride = args.crop_stride;
  stats.classes = args.classes;
  write_stats_sidecar((fs::path(args.out) / "stats.txt").string(), stats, echo);

  std::cout << "gen-data: wrote " << args.pretrain_mosaics + args.train_mosaics + args.test_mosaics
            << " mosaics, " << pairs.size() << " pairs to " << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string data;
  std::string out;
  std::string method = "simtriplet";
  std::int64_t epochs = 400;
  std::int64_t batch = 128;
  std::string precision = "full";
  std::string encoder = "default";
  double base_lr = 0.05;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::int64_t checkpoint_every = 0;
  std::uint64_t seed = 1;
};

int run_pretrain(const PretrainArgs& args) {
  PretrainConfig cfg;
  PairDataset data;
  try {
    cfg.method = parse_method(args.method);
    cfg.precision = parse_precision(args.precision);
    cfg.encoder = encoder_preset(args.encoder);
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch;
    cfg.base_lr = args.base_lr;
    cfg.weight_decay = static_cast<float>(args.weight_decay);
    cfg.momentum = static_cast<float>(args.momentum);
    cfg.seed = args.seed;
    cfg.checkpoint_every_epochs = args.checkpoint_every;
    cfg.out_dir = args.out;
    data = load_pair_dataset(args.data);
    if (data.stats.patch_size != cfg.encoder.input_size && !data.grids.empty()) {
      // Patches are resized by the crop stage; only warn when shapes differ.
      std::cerr << "pretrain: note: patch size " << data.stats.patch_size
                << " differs from encoder input " << cfg.encoder.input_size << "\n";
    }
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  fs::create_directories(args.out);
  auto curve = open_out((fs::path(args.out) / "curve.csv").string());
  PretrainResult result;
  pretrain(data, cfg, &curve, &result);
  std::cout << "pretrain: " << result.curve.size() << " steps in " << result.seconds
            << "s, final l_total=" << (result.curve.empty() ? 0.f : result.curve.back().l_total)
            << ", checkpoint=" << result.checkpoint_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeArgs {
  std::string checkpoint;
  std::string data;
  std::string labels = "labels_train.csv";
  std::string out;
  double fraction = 1.0;
  int folds = 5;
  std::int64_t epochs = 30;
  double lr = 30.0;
  std::int64_t batch = 64;
  std::uint64_t seed = 1;
};

int run_probe(const ProbeArgs& args) {
  EncoderModel encoder;
  LabeledDataset data;
  std::vector<int> subset;
  try {
    encoder = load_checkpoint(args.checkpoint).encoder;
    data = load_labeled_dataset(args.data, args.labels);
    std::vector<int> labels;
    for (const auto& item : data.items) labels.push_back(item.label);
    subset = subset_fraction(labels, args.fraction, args.seed);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  ProbeConfig cfg;
  cfg.lr = args.lr;
  cfg.batch_size = args.batch;
  cfg.epochs = args.epochs;
  cfg.folds = args.folds;
  cfg.seed = args.seed;
  auto result = linear_probe_train(encoder, data, subset, cfg);
  for (const auto& note : result.notes) std::cerr << "probe: " << note << "\n";

  fs::create_directories(args.out);
  save_probe_heads((fs::path(args.out) / "heads.tsck").string(), result.heads, data.num_classes);
  auto report = open_out((fs::path(args.out) / "probe_report.csv").string());
  result.validation.write_csv(
      report, {cat("command=probe"), cat("checkpoint=", args.checkpoint),
               cat("labels=", args.labels), cat("fraction=", args.fraction),
               cat("folds=", args.folds), cat("epochs=", args.epochs), cat("lr=", args.lr),
               cat("batch=", args.batch), cat("seed=", args.seed),
               cat("subset_size=", subset.size())});
  std::cout << "probe: validation balanced_acc=" << result.validation.balanced_accuracy_value
            << " macro_f1=" << result.validation.macro_f1_value << " (subset " << subset.size()
            << " items)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// supervised
// ---------------------------------------------------------------------------

struct SupervisedArgs {
  std::string data;
  std::string labels = "labels_train.csv";
  std::string out;
  std::string encoder = "default";
  double fraction = 1.0;
  int folds = 5;
  std::int64_t epochs = 100;
  double base_lr = 0.05;
  std::int64_t batch = 64;
  std::uint64_t seed = 1;
};

int run_supervised(const SupervisedArgs& args) {
  LabeledDataset data;
  SupervisedConfig cfg;
  std::vector<int> subset;
  try {
    cfg.encoder = encoder_preset(args.encoder);
    cfg.folds = args.folds;
    cfg.epochs = args.epochs;
    cfg.base_lr = args.base_lr;
    cfg.batch_size = args.batch;
    cfg.seed = args.seed;
    data = load_labeled_dataset(args.data, args.labels);
    std::vector<int> labels;
    for (const auto& item : data.items) labels.push_back(item.label);
    subset = subset_fraction(labels, args.fraction, args.seed);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  auto result = supervised_baseline_train(data, subset, cfg);
  fs::create_directories(args.out);
  save_supervised_bundle((fs::path(args.out) / "supervised.tsck").string(), result.models,
                         cfg.encoder, data.num_classes);
  auto report = open_out((fs::path(args.out) / "supervised_report.csv").string());
  result.validation.write_csv(
      report, {cat("command=supervised"), cat("labels=", args.labels),
               cat("fraction=", args.fraction), cat("folds=", args.folds),
               cat("epochs=", args.epochs), cat("base_lr=", args.base_lr),
               cat("batch=", args.batch), cat("seed=", args.seed),
               cat("subset_size=", subset.size())});
  std::cout << "supervised: validation balanced_acc=" << result.validation.balanced_accuracy_value
            << " macro_f1=" << result.validation.macro_f1_value << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string heads;
  std::string data;
  std::string labels = "labels_test.csv";
  std::string out;
};

int run_eval(const EvalArgs& args) {
  LoadedHeads heads;
  LabeledDataset data;
  EncoderModel encoder;
  try {
    heads = load_heads(args.heads);
    data = load_labeled_dataset(args.data, args.labels);
    if (data.items.empty()) throw ConfigError("eval: test manifest is empty");
    if (heads.kind == kHeadsKindProbe) {
      if (args.checkpoint.empty())
        throw ConfigError("eval: --checkpoint is required for probe heads");
      encoder = load_checkpoint(args.checkpoint).encoder;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  std::vector<int> all(data.items.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);

  std::vector<EnsembleMember> members;
  if (heads.kind == kHeadsKindProbe) {
    for (const auto& head : heads.heads) members.push_back({&encoder, &head});
  } else {
    for (auto& model : heads.supervised) members.push_back({&model.encoder, &model.head});
  }
  auto report = evaluate_ensemble(members, data, all, heads.num_classes);

  const std::vector<std::string> echo{cat("command=eval"), cat("checkpoint=", args.checkpoint),
                                      cat("heads=", args.heads), cat("labels=", args.labels),
                                      cat("items=", data.items.size())};
  if (args.out.empty()) {
    report.write_csv(std::cout, echo);
  } else {
    auto os = open_out(args.out);
    report.write_csv(os, echo);
    std::cout << "eval: balanced_acc=" << report.balanced_accuracy_value
              << " macro_f1=" << report.macro_f1_value << " -> " << args.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int run_verify(const std::string& suite) {
  std::vector<verify::SuiteReport> reports;
  if (suite == "gradcheck" || suite == "all") reports.push_back(verify::run_gradcheck());
  if (suite == "metrics" || suite == "all") reports.push_back(verify::run_metrics_suite());
  if (suite == "sampler" || suite == "all") reports.push_back(verify::run_sampler_suite());
  if (reports.empty())
    throw ConfigError(cat("unknown suite '", suite, "' (gradcheck|metrics|sampler|all)"));
  bool pass = true;
  for (const auto& r : reports) {
    r.print(std::cout);
    pass = pass && r.pass();
  }
  return pass ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trisim: triplet cosine-similarity representation learning toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic mosaic corpus");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.classes, "Number of texture classes");
  gen_cmd->add_option("--grid", gen.grid, "Tile grid as RxC");
  gen_cmd->add_option("--patch", gen.patch, "Tile size in pixels");
  gen_cmd->add_option("--pretrain-mosaics", gen.pretrain_mosaics, "Unlabeled mosaics");
  gen_cmd->add_option("--train-mosaics", gen.train_mosaics, "Labeled training mosaics");
  gen_cmd->add_option("--test-mosaics", gen.test_mosaics, "Labeled test mosaics");
  gen_cmd->add_option("--pairs", gen.pairs, "Adjacent pairs to sample");
  gen_cmd->add_option("--labels-per-mosaic", gen.labels_per_mosaic,
                      "Labeled tiles per mosaic (0 = all)");
  gen_cmd->add_option("--crop-stride", gen.crop_stride,
                      "Pair-sampling tile stride in pixels (0 = patch size, non-overlapping)");
  gen_cmd->add_option("--smoothness", gen.smoothness, "Class-region diameter in tiles");
  gen_cmd->add_option("--adjacency-target", gen.adjacency_target,
                      "Required same-class adjacency fraction");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--config", "Flat key=value config file");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised pretraining");
  pre_cmd->add_option("--data", pre.data, "Dataset directory (gen-data output)")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--method", pre.method, "simtriplet|simsiam");
  pre_cmd->add_option("--epochs", pre.epochs, "Training epochs");
  pre_cmd->add_option("--batch", pre.batch, "Batch size");
  pre_cmd->add_option("--precision", pre.precision, "full|reduced");
  pre_cmd->add_option("--encoder", pre.encoder, "Encoder preset: default|small|deep");
  pre_cmd->add_option("--base-lr", pre.base_lr, "Base LR (linearly rescaled by batch/256)");
  pre_cmd->add_option("--weight-decay", pre.weight_decay, "Weight decay");
  pre_cmd->add_option("--momentum", pre.momentum, "SGD momentum");
  pre_cmd->add_option("--checkpoint-every", pre.checkpoint_every,
                      "Also checkpoint every N epochs");
  pre_cmd->add_option("--seed", pre.seed, "Run seed");
  pre_cmd->add_option("--config", "Flat key=value config file");

  ProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "Frozen-encoder linear evaluation");
  probe_cmd->add_option("--checkpoint", probe.checkpoint, "Pretraining checkpoint")->required();
  probe_cmd->add_option("--data", probe.data, "Dataset directory")->required();
  probe_cmd->add_option("--labels", probe.labels, "Label manifest file name");
  probe_cmd->add_option("--out", probe.out, "Output directory")->required();
  probe_cmd->add_option("--fraction", probe.fraction, "Annotated-data fraction");
  probe_cmd->add_option("--folds", probe.folds, "Cross-validation folds");
  probe_cmd->add_option("--epochs", probe.epochs, "Probe epochs");
  probe_cmd->add_option("--lr", probe.lr, "Probe learning rate");
  probe_cmd->add_option("--batch", probe.batch, "Probe batch size");
  probe_cmd->add_option("--seed", probe.seed, "Run seed");
  probe_cmd->add_option("--config", "Flat key=value config file");

  SupervisedArgs sup;
  auto* sup_cmd = app.add_subcommand("supervised", "Supervised from-scratch baseline");
  sup_cmd->add_option("--data", sup.data, "Dataset directory")->required();
  sup_cmd->add_option("--labels", sup.labels, "Label manifest file name");
  sup_cmd->add_option("--out", sup.out, "Output directory")->required();
  sup_cmd->add_option("--encoder", sup.encoder, "Encoder preset: default|small|deep");
  sup_cmd->add_option("--fraction", sup.fraction, "Annotated-data fraction");
  sup_cmd->add_option("--folds", sup.folds, "Cross-validation folds");
  sup_cmd->add_option("--epochs", sup.epochs, "Training epochs");
  sup_cmd->add_option("--base-lr", sup.base_lr, "Base LR (linearly rescaled by batch/256)");
  sup_cmd->add_option("--batch", sup.batch, "Batch size");
  sup_cmd->add_option("--seed", sup.seed, "Run seed");
  sup_cmd->add_option("--config", "Flat key=value config file");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate heads on a labeled manifest");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint,
                       "Pretraining checkpoint (probe heads)");
  eval_cmd->add_option("--heads", eval_args.heads, "Heads file or supervised bundle")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory")->required();
  eval_cmd->add_option("--labels", eval_args.labels, "Label manifest file name");
  eval_cmd->add_option("--out", eval_args.out, "Report file (default: stdout)");
  eval_cmd->add_option("--config", "Flat key=value config file");

  std::string suite = "all";
  auto* verify_cmd = app.add_subcommand("verify", "Run the built-in oracle suites");
  verify_cmd->add_option("--suite", suite, "gradcheck|metrics|sampler|all");
  verify_cmd->add_option("--config", "Flat key=value config file");

  for (auto* cmd : {gen_cmd, pre_cmd, probe_cmd, sup_cmd, eval_cmd, verify_cmd})
    use_take_last(cmd);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (pre_cmd->parsed()) return run_pretrain(pre);
    if (probe_cmd->parsed()) return run_probe(probe);
    if (sup_cmd->parsed()) return run_supervised(sup);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (verify_cmd->parsed()) return run_verify(suite);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
