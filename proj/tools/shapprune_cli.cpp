// shapprune: train, attribute, prune and evaluate CTR models from the shell.
//
// Every subcommand reads its inputs from files, writes its outputs to files
// and logs key=value lines on stdout. Exit codes: 0 ok, 1 domain error,
// 2 usage or I/O error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shapprune/shapprune.hpp"

namespace sp = shapprune;

namespace {

const char* const kDefaultGrid = "0.2,0.4,0.5,0.6,0.8,0.9,0.95,0.99,0.999";

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream cell(item);
    T value{};
    if (!(cell >> value) || !(cell >> std::ws).eof()) throw sp::IoError("bad value '" + item + "' for " + flag);
    out.push_back(value);
  }
  return out;
}

// Replaces each "--config FILE" with the file's key=value lines as
// "--key value" arguments at the same position, so later flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::vector<std::string> out;
  for (std::size_t k = 0; k < args.size(); ++k) {
    std::string file;
    if (args[k] == "--config" && k + 1 < args.size()) {
      file = args[++k];
    } else if (args[k].rfind("--config=", 0) == 0) {
      file = args[k].substr(9);
    } else {
      out.push_back(args[k]);
      continue;
    }
    std::ifstream in(file);
    if (!in) throw sp::IoError("cannot read config file " + file);
    std::string line;
    while (std::getline(in, line)) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw sp::IoError("config line without '=': " + line);
      auto trim = [](std::string x) {
        const auto a = x.find_first_not_of(" \t\r\"");
        const auto b = x.find_last_not_of(" \t\r\"");
        return a == std::string::npos ? std::string() : x.substr(a, b - a + 1);
      };
      out.push_back("--" + trim(line.substr(0, eq)));
      out.push_back(trim(line.substr(eq + 1)));
    }
  }
  return out;
}

void log_kv(const std::string& key, const std::string& value) { std::cout << key << '=' << value << '\n'; }

void log_kv(const std::string& key, double value) {
  std::ostringstream s;
  s.precision(10);
  s << value;
  log_kv(key, s.str());
}

void log_kv(const std::string& key, std::size_t value) { log_kv(key, std::to_string(value)); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

sp::RawRows read_rows(const std::string& path) {
  auto rows = sp::read_csv(path);
  if (rows.empty()) throw sp::DomainError("empty dataset: " + path);
  return rows;
}

// Dataset encoded with a model's stored vocabulary.
sp::Dataset load_dataset(const std::string& path, const std::optional<sp::Vocabulary>& vocab) {
  if (!vocab) throw sp::IoError("checkpoint has no vocabulary; cannot encode " + path);
  return sp::encode_rows(read_rows(path), *vocab);
}

void log_report(const std::string& prefix, const sp::EvalReport& r) {
  if (r.auc) {
    log_kv(prefix + "auc", *r.auc);
  } else {
    log_kv(prefix + "auc", "undefined");
  }
  log_kv(prefix + "logloss", r.logloss);
  log_kv(prefix + "count", r.count);
}

struct Options {
  std::string data, valid, schema, out, model, scores, mask;
  std::string backbone = "fm";
  std::string method = "shapley";
  std::string padding = "zero";
  std::size_t dim = 8;
  std::string hidden = "16,16";
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::uint64_t min_count = 0;
  std::size_t passes = 1;
  double fraction = 1.0;
  std::size_t threads = sp::default_threads();
  double sparsity = 0.5;
  std::string sparsities;
  sp::SyntheticConfig synth;
};

void run_synth(const Options& o) {
  const auto syn = sp::make_synthetic(o.synth);
  sp::write_csv(syn.rows, o.out);
  if (!o.schema.empty()) sp::save_schema(syn.schema, o.schema);
  log_kv("rows", syn.rows.size());
  log_kv("fields", syn.schema.field_count());
  log_kv("out", o.out);
}

sp::TrainConfig train_config(const Options& o) {
  sp::TrainConfig cfg;
  cfg.backbone = sp::parse_backbone(o.backbone);
  cfg.dim = o.dim;
  cfg.hidden = parse_list<std::size_t>(o.hidden, "--hidden");
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  return cfg;
}

void log_history(const sp::TrainHistory& h) {
  for (std::size_t e = 0; e < h.epoch_loss.size(); ++e) {
    std::cout << "epoch=" << e + 1 << " train_loss=" << h.epoch_loss[e] << '\n';
  }
}

// Fine-tunes a pruned model with its mask frozen and writes a pruned file.
void run_finetune(const Options& o) {
  const auto pm = sp::load_pruned(o.mask);
  const auto data = load_dataset(o.data, pm.vocabulary);
  sp::Model model = sp::densify(pm);
  const sp::PruneMask mask = pm.mask();
  sp::TrainConfig cfg = train_config(o);
  cfg.backbone = model.backbone;
  cfg.dim = model.dim;
  cfg.mask = &mask;
  cfg.padding = pm.padding;
  cfg.codebook = pm.codebook ? &*pm.codebook : nullptr;
  const auto before = sp::evaluate(pm, data, o.threads);
  const auto history = sp::fit(model, data, cfg);
  log_history(history);
  auto tuned = sp::repack(model, mask, pm.padding, pm.codebook, pm.sparsity);
  tuned.vocabulary = pm.vocabulary;
  tuned.frequencies = pm.frequencies;
  sp::save_pruned(tuned, o.out);
  log_kv("train_logloss_before", before.logloss);
  log_report("train_", sp::evaluate(tuned, data, o.threads));
  if (!o.valid.empty()) log_report("valid_", sp::evaluate(tuned, load_dataset(o.valid, pm.vocabulary), o.threads));
  log_kv("frozen_params", mask.size());
  log_kv("out", o.out);
}

void run_train(const Options& o) {
  if (!o.mask.empty()) return run_finetune(o);
  const auto rows = read_rows(o.data);
  const sp::FieldSchema schema =
      o.schema.empty() ? sp::FieldSchema::categorical(rows.front().size() - 1) : sp::load_schema(o.schema);
  auto vocab = sp::build_vocabulary(rows, schema, o.min_count);
  const auto data = sp::encode_rows(rows, vocab);
  sp::TrainHistory history;
  const auto start = std::chrono::steady_clock::now();
  sp::Checkpoint ck;
  ck.model = sp::train(data, train_config(o), &history);
  log_history(history);
  log_kv("features", data.feature_count());
  log_kv("train_seconds", seconds_since(start));
  log_report("train_", sp::evaluate(ck.model, data, o.threads));
  if (!o.valid.empty()) log_report("valid_", sp::evaluate(ck.model, load_dataset(o.valid, vocab), o.threads));
  ck.frequencies = data.frequencies();
  ck.vocabulary = std::move(vocab);
  sp::save_checkpoint(ck, o.out);
  log_kv("out", o.out);
}

void run_codebook(const Options& o) {
  auto ck = sp::load_checkpoint(o.model);
  if (!o.data.empty()) {
    ck.codebook = sp::compute_codebook(ck.model, load_dataset(o.data, ck.vocabulary));
    log_kv("frequency_source", o.data);
  } else {
    if (ck.frequencies.empty()) throw sp::DomainError("checkpoint records no frequencies; pass --data");
    const std::vector<double> freq(ck.frequencies.begin(), ck.frequencies.end());
    ck.codebook = sp::compute_codebook(ck.model, freq);
    sp::ByteWriter w;
    for (auto f : ck.frequencies) w.u64(f);
    ck.codebook->frequency_fingerprint = sp::crc32_of(w.buffer());
    log_kv("frequency_source", "checkpoint");
  }
  sp::save_checkpoint(ck, o.out);
  log_kv("codebook_values", ck.codebook->values.size());
  log_kv("out", o.out);
}

void run_attribute(const Options& o) {
  const auto ck = sp::load_checkpoint(o.model);
  const auto method = sp::parse_method(o.method);
  std::optional<sp::Dataset> data;
  if (method != sp::AttributionMethod::kMagnitude && method != sp::AttributionMethod::kRandom) {
    if (o.data.empty()) throw sp::IoError("--data is required for method " + o.method);
    data = load_dataset(o.data, ck.vocabulary);
    if (o.fraction < 1.0) data = sp::subsample(*data, o.fraction, o.seed);
  }
  const auto start = std::chrono::steady_clock::now();
  sp::AttributionScores scores;
  switch (method) {
    case sp::AttributionMethod::kShapley:
      scores = sp::estimate_shapley(ck.model, *data, {o.passes, o.seed, o.threads});
      break;
    case sp::AttributionMethod::kExactShapley:
      scores = sp::exact_shapley_global(ck.model, *data);
      break;
    case sp::AttributionMethod::kTaylor:
      scores = sp::score_taylor(ck.model, *data);
      break;
    case sp::AttributionMethod::kMagnitude:
      scores = sp::score_magnitude(ck.model);
      break;
    case sp::AttributionMethod::kRandom:
      scores = sp::score_random(ck.model, o.seed);
      break;
  }
  const double elapsed = seconds_since(start);
  sp::save_scores(scores, o.out);
  log_kv("method", std::string(sp::to_string(method)));
  if (data) log_kv("instances", data->size());
  log_kv("forward_passes", static_cast<std::size_t>(scores.forward_passes));
  log_kv("seconds", elapsed);
  log_kv("out", o.out);
}

void run_prune(const Options& o) {
  const auto ck = sp::load_checkpoint(o.model);
  const auto scores = sp::load_scores(o.scores);
  const auto padding = sp::parse_padding(o.padding);
  if (padding == sp::PaddingMode::kCodebook && !ck.codebook) {
    throw sp::DomainError("codebook padding requires a codebook; run the codebook command first");
  }
  auto pm = sp::prune(ck.model, scores, o.sparsity, padding, ck.codebook ? &*ck.codebook : nullptr, ck.frequencies);
  pm.vocabulary = ck.vocabulary;
  sp::save_pruned(pm, o.out);
  log_kv("sparsity", o.sparsity);
  log_kv("pruned_params", pm.pruned());
  log_kv("kept_params", pm.kept());
  log_kv("padding", std::string(sp::to_string(padding)));
  log_kv("file_bytes", static_cast<std::size_t>(std::filesystem::file_size(o.out)));
  log_kv("out", o.out);
}

void run_eval(const Options& o) {
  sp::EvalReport report;
  if (sp::is_pruned_file(o.model)) {
    const auto pm = sp::load_pruned(o.model);
    report = sp::evaluate(pm, load_dataset(o.data, pm.vocabulary), o.threads);
    log_kv("kept_params", pm.kept());
  } else {
    const auto ck = sp::load_checkpoint(o.model);
    const auto data = load_dataset(o.data, ck.vocabulary);
    if (ck.mask) {
      const sp::Imputation imp(*ck.mask, ck.padding, ck.codebook ? &*ck.codebook : nullptr, ck.model.field_offsets);
      report = sp::evaluate(ck.model, data, o.threads, &imp);
    } else {
      report = sp::evaluate(ck.model, data, o.threads);
    }
  }
  log_report("", report);
  log_kv("storage_bytes", static_cast<std::size_t>(std::filesystem::file_size(o.model)));
}

void run_curve(const Options& o) {
  const auto ck = sp::load_checkpoint(o.model);
  const auto scores = sp::load_scores(o.scores);
  const auto data = load_dataset(o.data, ck.vocabulary);
  const auto padding = sp::parse_padding(o.padding);
  if (padding == sp::PaddingMode::kCodebook && !ck.codebook) {
    throw sp::DomainError("codebook padding requires a codebook; run the codebook command first");
  }
  const auto grid = parse_list<double>(o.sparsities.empty() ? kDefaultGrid : o.sparsities, "--sparsities");
  const auto points = sp::prune_curve(ck.model, scores, grid, padding, ck.codebook ? &*ck.codebook : nullptr,
                                      data, ck.frequencies, o.threads);
  const auto csv = sp::curve_csv(points);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(o.out, std::ios::binary);
    if (!(f << csv)) throw sp::IoError("cannot write " + o.out);
    log_kv("points", points.size());
    log_kv("out", o.out);
  }
}

void run_oracle(const Options& o) {
  const auto ck = sp::load_checkpoint(o.model);
  const auto data = load_dataset(o.data, ck.vocabulary);
  const std::size_t players = ck.model.field_count() * ck.model.dim;
  if (players > sp::kMaxExactPlayers) {
    throw sp::DomainError("exact oracle needs m*d <= " + std::to_string(sp::kMaxExactPlayers) + ", got " +
                          std::to_string(players));
  }
  const auto start = std::chrono::steady_clock::now();
  const auto exact = sp::exact_shapley_global(ck.model, data);
  log_kv("players", players);
  log_kv("seconds", seconds_since(start));
  if (!o.out.empty()) {
    sp::save_scores(exact, o.out);
    log_kv("out", o.out);
  }
  if (!o.scores.empty()) {
    const auto est = sp::load_scores(o.scores);
    if (est.values.size() != exact.values.size()) throw sp::DomainError("score shape does not match the model");
    double mae = 0.0;
    for (std::size_t q = 0; q < est.values.size(); ++q) mae += std::abs(est.values[q] - exact.values[q]);
    log_kv("mae", mae / static_cast<double>(est.values.size()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot embedding pruning for FM and DeepFM CTR models"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.footer("Any subcommand accepts --config FILE with key=value lines; later flags override earlier ones.");
  Options o;

  auto existing = [](CLI::Option* opt) { return opt->check(CLI::ExistingFile); };
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "Write the built-in synthetic CTR dataset as CSV");
  synth->add_option("--out", o.out, "Output CSV")->required();
  synth->add_option("--schema", o.schema, "Also write the field schema here");
  synth->add_option("--fields", o.synth.fields, "Number of fields");
  synth->add_option("--features", o.synth.features_per_field, "Features per field");
  synth->add_option("--rows", o.synth.rows, "Number of rows");
  synth->add_option("--signal", o.synth.signal, "Latent scale of the first field");
  synth->add_option("--seed", o.synth.seed, "Seed of the ground-truth model");
  synth->add_option("--sample-seed", o.synth.sample_seed, "Seed of the row sample");

  auto* train = app.add_subcommand("train", "Train a model, or fine-tune a pruned one with --mask");
  existing(train->add_option("--data", o.data, "Training CSV (label first)"))->required();
  existing(train->add_option("--valid", o.valid, "Validation CSV"));
  existing(train->add_option("--schema", o.schema, "Field schema (name,kind per line)"));
  existing(train->add_option("--mask", o.mask, "Pruned checkpoint to fine-tune with its mask frozen"));
  train->add_option("--backbone", o.backbone, "fm or deepfm")->check(CLI::IsMember({"fm", "deepfm"}));
  train->add_option("--dim", o.dim, "Embedding dimension")->check(CLI::PositiveNumber);
  train->add_option("--hidden", o.hidden, "DeepFM hidden widths, comma-separated");
  train->add_option("--epochs", o.epochs, "Epochs");
  train->add_option("--lr", o.lr, "Adam learning rate");
  train->add_option("--batch-size", o.batch_size, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--seed", o.seed, "Seed");
  train->add_option("--min-count", o.min_count, "Tokens seen fewer times map to OOV");
  train->add_option("--out", o.out, "Output checkpoint")->required();
  add_common(train);

  auto* codebook = app.add_subcommand("codebook", "Compute the field codebook into a checkpoint");
  existing(codebook->add_option("--model", o.model, "Checkpoint"))->required();
  existing(codebook->add_option("--data", o.data, "CSV giving feature frequencies (default: recorded ones)"));
  codebook->add_option("--out", o.out, "Output checkpoint")->required();
  add_common(codebook);

  auto* attribute = app.add_subcommand("attribute", "Score every embedding parameter");
  existing(attribute->add_option("--model", o.model, "Checkpoint"))->required();
  existing(attribute->add_option("--data", o.data, "CSV to attribute over"));
  attribute->add_option("--method", o.method, "Attribution method")
      ->check(CLI::IsMember({"shapley", "exact", "taylor", "magnitude", "random"}));
  attribute->add_option("--passes", o.passes, "Permutation passes over the data")->check(CLI::PositiveNumber);
  attribute->add_option("--fraction", o.fraction, "Seeded subsample fraction")->check(CLI::Range(0.0, 1.0));
  attribute->add_option("--seed", o.seed, "Seed");
  attribute->add_option("--out", o.out, "Output scores file")->required();
  add_common(attribute);

  auto* prune = app.add_subcommand("prune", "Prune to a sparsity and write a pruned checkpoint");
  existing(prune->add_option("--model", o.model, "Checkpoint"))->required();
  existing(prune->add_option("--scores", o.scores, "Scores file"))->required();
  prune->add_option("--sparsity", o.sparsity, "Fraction of embedding entries to remove")->check(CLI::Range(0.0, 1.0));
  prune->add_option("--padding", o.padding, "zero or codebook")->check(CLI::IsMember({"zero", "codebook"}));
  prune->add_option("--out", o.out, "Output pruned checkpoint")->required();
  add_common(prune);

  auto* eval = app.add_subcommand("eval", "Report AUC and log loss of a dense or pruned checkpoint");
  existing(eval->add_option("--model", o.model, "Checkpoint or pruned checkpoint"))->required();
  existing(eval->add_option("--data", o.data, "CSV"))->required();
  add_common(eval);

  auto* curve = app.add_subcommand("curve", "Evaluate pruning over a sparsity grid as CSV");
  existing(curve->add_option("--model", o.model, "Checkpoint"))->required();
  existing(curve->add_option("--scores", o.scores, "Scores file"))->required();
  existing(curve->add_option("--data", o.data, "CSV"))->required();
  curve->add_option("--sparsities", o.sparsities, "Sorted comma-separated list (default: 0.2 ... 0.999)");
  curve->add_option("--padding", o.padding, "zero or codebook")->check(CLI::IsMember({"zero", "codebook"}));
  curve->add_option("--out", o.out, "Output CSV (default stdout)");
  add_common(curve);

  auto* oracle = app.add_subcommand("oracle", "Exact Shapley values by subset enumeration");
  existing(oracle->add_option("--model", o.model, "Checkpoint"))->required();
  existing(oracle->add_option("--data", o.data, "CSV"))->required();
  existing(oracle->add_option("--scores", o.scores, "Estimated scores to compare against"));
  oracle->add_option("--out", o.out, "Output scores file");
  add_common(oracle);

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const sp::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::vector<char*> ptrs;
  for (auto& a : args) ptrs.push_back(a.data());
  try {
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) run_synth(o);
    if (*train) run_train(o);
    if (*codebook) run_codebook(o);
    if (*attribute) run_attribute(o);
    if (*prune) run_prune(o);
    if (*eval) run_eval(o);
    if (*curve) run_curve(o);
    if (*oracle) run_oracle(o);
  } catch (const sp::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const sp::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
