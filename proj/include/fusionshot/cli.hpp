#pragma once

// Command-line front end. `run` never calls exit(); it returns the process
// exit code: 0 success, 2 usage error, 1 data error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fusionshot/consensus.hpp"
#include "fusionshot/detail/parallel.hpp"
#include "fusionshot/diversity.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/fusion.hpp"
#include "fusionshot/logitstore.hpp"
#include "fusionshot/mask.hpp"
#include "fusionshot/pruner.hpp"
#include "fusionshot/report.hpp"
#include "fusionshot/synth.hpp"

namespace fusionshot::cli {

using nlohmann::json;

/// Bad flag values detected after parsing; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorKind::MissingFile, "cannot write " + path);
  os << text;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::MissingFile, path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
}

/// Manifest paths from a mix of manifest files and list files (one path per
/// line, relative to the list file; blank lines and '#' comments skipped).
inline std::vector<fs::path> expand_manifest_list(const std::vector<std::string>& items) {
  std::vector<fs::path> out;
  for (const auto& item : items) {
    const fs::path p(item);
    if (p.extension() == ".json") {
      out.push_back(p);
      continue;
    }
    std::ifstream is(p);
    if (!is) throw Error(ErrorKind::MissingFile, item);
    std::string line;
    while (std::getline(is, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const fs::path entry(line);
      out.push_back(entry.is_absolute() ? entry : p.parent_path() / entry);
    }
  }
  if (out.empty()) throw Error(ErrorKind::InvalidManifest, "manifest list is empty");
  return out;
}

inline std::vector<int> parse_hidden(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--hidden expects positive comma-separated widths, got '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("--hidden needs at least one width");
  return out;
}

inline EnsembleMask parse_mask_flag(const std::string& text, std::size_t width) {
  try {
    return EnsembleMask::parse(text, width);
  } catch (const Error& e) {
    throw UsageError("--mask: " + std::string(e.what()));
  }
}

inline Weights parse_weights(double w1, double w2) {
  Weights w{w1, w2};
  try {
    w.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return w;
}

inline json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"seed", c.seed},
          {"normalization", to_string(c.normalization)},
          {"hidden", c.hidden}};
}

inline json pool_summary(const Pool& pool) {
  json splits = json::object();
  for (const auto& split : pool.splits()) {
    const auto corr = correctness(pool, split);
    json acc = json::object();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      std::size_t ok = 0;
      for (std::size_t e = 0; e < corr.episodes(); ++e) ok += corr.correct(i, e);
      acc[pool.manifest().models[i].model_id] =
          corr.episodes() == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(corr.episodes());
    }
    splits[split] = {{"episodes", pool.episodes(split)}, {"member_accuracy", acc}};
  }
  json models = json::array();
  for (const auto& m : pool.manifest().models)
    models.push_back({{"model_id", m.model_id}, {"backbone", m.backbone}, {"distance", m.distance}});
  return {{"pool_name", pool.manifest().pool_name},
          {"N", pool.size()},
          {"K", pool.ways()},
          {"J", pool.manifest().J},
          {"models", models},
          {"splits", splits}};
}

/// Synthetic pool of N models for timing runs: accuracies spread over
/// [0.55, 0.8] with a moderate shared latent.
inline SynthSpec bench_spec(std::size_t n, std::size_t episodes, std::uint64_t seed) {
  SynthSpec s;
  s.pool_name = "bench";
  s.N = n;
  s.K = 5;
  s.rho = 0.3;
  s.episodes = {{"val", episodes}};
  s.seed = seed;
  std::mt19937_64 rng(fusionshot::detail::derive_seed(seed, n));
  for (std::size_t i = 0; i < n; ++i) s.accuracy.push_back(0.55 + 0.25 * fusionshot::detail::uniform01(rng));
  return s;
}

inline void check_params_pool(const FusionParams& p, std::size_t pool_size) {
  if (p.meta.pool_size != 0 && p.meta.pool_size != pool_size)
    throw Error(ErrorKind::ShapeMismatch, "parameters were trained on a pool of " + std::to_string(p.meta.pool_size) +
                                              " models, this pool has " + std::to_string(pool_size));
}

inline SynthSpec preset_spec(const std::string& name, std::uint64_t seed) {
  if (name == "complementary") return complementary_spec(seed);
  if (name == "switch") return switch_stream_spec(seed);
  if (name == "stationary") return switch_stream_spec(seed, 10, 10);
  throw UsageError("no spec for preset '" + name + "'");
}

}  // namespace detail

/// Runs one CLI invocation. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Focal-diversity ensemble pruning and learned fusion over few-shot model logits", "fusionshot"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // Shared option storage; each subcommand registers what it uses.
  // Split defaults differ per subcommand, so each gets its own storage.
  std::string diversity_split = "val", prune_split = "val", eval_split = "novel", stream_split = "batch";
  std::string manifest, mask_text, out_path, method = "ga", victim, combiner = "plurality", params_path,
                                        normalization = "softmax", hidden = "100,100", spec_path, preset, out_dir,
                                        kind, input, csv_path, select = "best", params_out;
  double w1 = 0.6, w2 = 0.4, lr = 0.001;
  std::size_t top_k = 5, episodes = 600, max_epochs = 300, batch_size = 128, patience = 0, threads = 0,
              population = 64, plateau = 100, max_generations = 2000, train_size = 1500, val_size = 300,
              test_size = 200, select_k = 0, bench_episodes = 600;
  double elite_fraction = 0.5;
  std::optional<double> mutation_rate;
  std::uint64_t seed = 7;
  bool check = false, timestamps = false, cold_start = false, table = false;
  std::optional<bool> emit_visited;
  std::vector<std::string> manifest_list;
  std::vector<std::size_t> bench_n{5, 10, 15, 20};

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out_path, "Write the JSON report here instead of standard output");
    sub->add_flag("--timestamps", timestamps, "Add wall-clock timestamps (reports are no longer byte-stable)");
  };
  auto add_manifest = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest, "Pool manifest (JSON)")->required();
  };
  auto add_weights = [&](CLI::App* sub) {
    sub->add_option("--w1", w1, "Weight of plurality accuracy in the pruning score");
    sub->add_option("--w2", w2, "Weight of focal diversity in the pruning score");
  };
  auto add_train = [&](CLI::App* sub) {
    sub->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--max-epochs", max_epochs, "Maximum training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--batch-size", batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
    sub->add_option("--patience", patience, "Stop after this many epochs without validation gain (0 = never)");
    sub->add_option("--normalization", normalization, "Member input transform")
        ->check(CLI::IsMember({"softmax", "raw"}));
    sub->add_option("--hidden", hidden, "Hidden layer widths, comma separated");
  };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "Random seed"); };
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads (default: FUSIONSHOT_THREADS or 1)");
  };

  auto* ingest_cmd = app.add_subcommand("ingest", "Load and validate a pool");
  add_manifest(ingest_cmd);
  ingest_cmd->add_flag("--check", check, "Only validate; print a one-line summary");
  add_common(ingest_cmd);

  auto* diversity_cmd = app.add_subcommand("diversity", "Diversity report for one ensemble mask");
  add_manifest(diversity_cmd);
  diversity_cmd->add_option("--mask", mask_text, "Ensemble mask: 0b digits (model 0 rightmost) or index list")
      ->required();
  diversity_cmd->add_option("--split", diversity_split, "Split to score")->capture_default_str();
  add_weights(diversity_cmd);
  add_common(diversity_cmd);

  auto* prune_cmd = app.add_subcommand("prune", "Search for the best-scoring ensembles");
  add_manifest(prune_cmd);
  prune_cmd->add_option("--method", method, "Search method")->check(CLI::IsMember({"ga", "bf"}));
  add_weights(prune_cmd);
  prune_cmd->add_option("--top-k", top_k, "Ensembles to report")->check(CLI::PositiveNumber);
  add_seed(prune_cmd);
  prune_cmd->add_option("--victim", victim, "Defense search: only masks containing this model, victim as focal");
  prune_cmd->add_option("--split", prune_split, "Split to score")->capture_default_str();
  prune_cmd->add_option("--population", population, "GA population size")->check(CLI::Range(2, 1 << 20));
  prune_cmd->add_option("--elite-fraction", elite_fraction, "GA survivor fraction")->check(CLI::Range(0.0, 1.0));
  prune_cmd->add_option("--mutation-rate", mutation_rate, "GA per-bit mutation rate (default 1/N)")
      ->check(CLI::Range(0.0, 1.0));
  prune_cmd->add_option("--plateau", plateau, "GA stops after this many generations without gain")
      ->check(CLI::PositiveNumber);
  prune_cmd->add_option("--max-generations", max_generations, "GA generation cap")->check(CLI::PositiveNumber);
  prune_cmd->add_flag("--emit-visited,!--no-visited", emit_visited,
                      "Include every scored mask (default: on when at most 5000 were scored)");
  prune_cmd->add_option("--select", select, "Selection policy for the returned ensemble")
      ->check(CLI::IsMember({"best", "random_top_k"}));
  prune_cmd->add_option("--select-k", select_k, "Draw from the first k ranked (0 = all ranked)");
  add_threads(prune_cmd);
  add_common(prune_cmd);

  auto* train_cmd = app.add_subcommand("train", "Train the fusion network for one mask");
  add_manifest(train_cmd);
  train_cmd->add_option("--mask", mask_text, "Ensemble mask")->required();
  add_train(train_cmd);
  add_seed(train_cmd);
  train_cmd->add_option("--out", params_out, "Write the trained parameters (JSON) here");
  train_cmd->add_option("--report", out_path, "Write the JSON report here instead of standard output");
  train_cmd->add_flag("--timestamps", timestamps, "Add wall-clock timestamps");

  auto* eval_cmd = app.add_subcommand("eval", "Episode accuracy and 95% interval of a combiner");
  add_manifest(eval_cmd);
  eval_cmd->add_option("--mask", mask_text, "Ensemble mask (fusion: defaults to the mask stored in --params)");
  eval_cmd->add_option("--combiner", combiner, "Combiner")->check(CLI::IsMember({"plurality", "mean", "fusion"}));
  eval_cmd->add_option("--params", params_path, "Fusion parameters from `train`");
  eval_cmd->add_option("--split", eval_split, "Split to evaluate")->capture_default_str();
  eval_cmd->add_option("--episodes", episodes, "Episodes to evaluate (0 = all)");
  eval_cmd->add_option("--csv", csv_path, "Also write an error_bars CSV row here");
  add_common(eval_cmd);

  auto* stream_cmd = app.add_subcommand("stream", "Adapt the fusion network batch by batch");
  stream_cmd->add_option("--manifest-list", manifest_list, "Batch manifests (.json) or list files, in order")
      ->required()
      ->expected(1, -1);
  stream_cmd->add_option("--params", params_path, "Warm-start parameters");
  stream_cmd->add_option("--mask", mask_text, "Ensemble mask (default: from --params, else all models)");
  stream_cmd->add_flag("--cold-start", cold_start, "Retrain from scratch on every batch");
  stream_cmd->add_option("--split", stream_split, "Split holding each batch's episodes")->capture_default_str();
  stream_cmd->add_option("--train-size", train_size, "Training episodes per batch");
  stream_cmd->add_option("--val-size", val_size, "Validation episodes per batch");
  stream_cmd->add_option("--test-size", test_size, "Test episodes per batch")->check(CLI::PositiveNumber);
  stream_cmd->add_option("--params-out", params_out, "Write the final parameters here");
  add_train(stream_cmd);
  add_seed(stream_cmd);
  add_common(stream_cmd);

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic pool (or stream of pools)");
  synth_cmd->add_option("--spec", spec_path, "Generator spec (JSON)");
  synth_cmd->add_option("--preset", preset, "Planted pool instead of a spec")
      ->check(CLI::IsMember({"ablation", "complementary", "copy", "defense", "switch", "stationary"}));
  synth_cmd->add_option("--out-dir", out_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", seed, "Seed for presets (a spec carries its own)");
  add_common(synth_cmd);

  auto* bench_cmd = app.add_subcommand("bench", "Benchmarks");
  bench_cmd->require_subcommand(1);
  auto* bench_prune = bench_cmd->add_subcommand("prune", "Brute force vs GA wall time over pool sizes");
  bench_prune->add_option("--n", bench_n, "Pool sizes")->delimiter(',')->check(CLI::Range(2, 30));
  bench_prune->add_option("--episodes", bench_episodes, "Validation episodes per pool")->check(CLI::PositiveNumber);
  bench_prune->add_flag("--table", table, "Print a plain text table instead of JSON");
  add_seed(bench_prune);
  add_threads(bench_prune);
  add_common(bench_prune);

  auto* export_cmd = app.add_subcommand("export", "Plot-ready CSV from a report");
  export_cmd->add_option("--kind", kind, "Plot kind")
      ->required()
      ->check(CLI::IsMember({"diversity_scatter", "stream_trace", "error_bars"}));
  export_cmd->add_option("--input", input, "Report JSON")->required();
  export_cmd->add_option("--out", out_path, "CSV path (default: standard output)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "fusionshot: " << e.what() << '\n';
    const CLI::App* where = &app;
    for (const auto* sub : app.get_subcommands()) {
      where = sub;
      for (const auto* inner : sub->get_subcommands()) where = inner;
    }
    err << where->help();
    return 2;
  }

  const auto started = detail::utc_now();
  auto emit = [&](const json& config, json outputs) {
    std::optional<json> ts;
    if (timestamps) ts = json{{"started", started}, {"finished", detail::utc_now()}};
    const auto text = run_report(args, config, std::move(outputs), ts).dump(2) + "\n";
    if (out_path.empty())
      out << text;
    else
      detail::write_text(out_path, text);
  };
  const std::size_t workers = threads > 0 ? threads : fusionshot::detail::env_threads();

  auto train_config = [&] {
    TrainConfig c;
    c.learning_rate = lr;
    c.max_epochs = max_epochs;
    c.batch_size = batch_size;
    c.patience = patience;
    c.seed = seed;
    c.normalization = parse_normalization(normalization);
    c.hidden = detail::parse_hidden(hidden);
    return c;
  };

  try {
    if (ingest_cmd->parsed()) {
      const Pool pool = ingest(manifest);
      if (check) {
        out << "ok " << pool.manifest().pool_name << " N=" << pool.size() << " K=" << pool.ways();
        for (const auto& s : pool.splits()) out << ' ' << s << '=' << pool.episodes(s);
        out << '\n';
        return 0;
      }
      emit({{"manifest", manifest}}, {{"pool", detail::pool_summary(pool)}});
    } else if (diversity_cmd->parsed()) {
      const std::string& split = diversity_split;
      const auto weights = detail::parse_weights(w1, w2);
      const Pool pool = ingest(manifest);
      const auto mask = detail::parse_mask_flag(mask_text, pool.size());
      const auto table = make_table(pool, split);
      const auto report = diversity_report(table, mask, weights);
      for (auto i : report.never_failed)
        err << "warning: " << pool.manifest().models[i].model_id << " never fails on '" << split
            << "'; excluded from lambda\n";
      emit({{"manifest", manifest}, {"mask", mask.to_string()}, {"split", split}, {"weights", weights}},
           {{"diversity", report}});
    } else if (prune_cmd->parsed()) {
      const std::string& split = prune_split;
      SearchConfig cfg;
      cfg.method = parse_search_method(method);
      cfg.weights = detail::parse_weights(w1, w2);
      cfg.top_k = top_k;
      cfg.seed = seed;
      cfg.split = split;
      cfg.threads = workers;
      cfg.ga.population_size = population;
      cfg.ga.elite_fraction = elite_fraction;
      cfg.ga.mutation_rate = mutation_rate;
      cfg.ga.plateau_generations = plateau;
      cfg.ga.max_generations = max_generations;
      if (elite_fraction <= 0.0) throw UsageError("--elite-fraction must be > 0");
      const Pool pool = ingest(manifest);
      const auto result = victim.empty() ? search(pool, cfg) : defense_search(pool, cfg, victim);
      const bool with_visited = emit_visited.value_or(result.visited_count <= 5000);
      const auto chosen = select_ensemble(
          result, select == "best" ? SelectionPolicy::Best : SelectionPolicy::RandomTopK, seed, select_k);
      std::vector<std::string> ids;
      for (auto i : chosen.members()) ids.push_back(pool.manifest().models[i].model_id);
      json config = {{"manifest", manifest},
                     {"method", method},
                     {"weights", cfg.weights},
                     {"top_k", top_k},
                     {"seed", seed},
                     {"split", split},
                     {"victim", victim.empty() ? json(nullptr) : json(victim)},
                     {"select", select},
                     {"select_k", select_k}};
      if (cfg.method == SearchMethod::Genetic)
        config["ga"] = {{"population_size", population},
                        {"elite_fraction", elite_fraction},
                        {"mutation_rate", mutation_rate.value_or(1.0 / static_cast<double>(pool.size()))},
                        {"plateau_generations", plateau},
                        {"max_generations", max_generations}};
      emit(config, {{"search", search_result_json(result, with_visited)},
                    {"selected", {{"mask", chosen.to_string()}, {"members", ids}}}});
    } else if (train_cmd->parsed()) {
      const auto cfg = train_config();
      const Pool pool = ingest(manifest);
      const auto mask = detail::parse_mask_flag(mask_text, pool.size());
      TrainTrace trace;
      const auto params = train(pool, mask, cfg, &trace);
      json outputs = {{"meta", json(params).at("meta")},
                      {"layer_dims", params.layer_dims()},
                      {"train_loss", trace.train_loss},
                      {"val_accuracy", trace.val_accuracy},
                      {"train_attacked", pool.has_split("train_attacked")}};
      if (params_out.empty())
        outputs["params"] = params;
      else
        detail::write_text(params_out, json(params).dump() + "\n");
      emit({{"manifest", manifest}, {"mask", mask.to_string()}, {"train", detail::train_config_json(cfg)}}, outputs);
    } else if (eval_cmd->parsed()) {
      const std::string& split = eval_split;
      const Pool pool = ingest(manifest);
      const auto table = make_table(pool, split);
      EvalSummary summary;
      json config = {{"manifest", manifest}, {"combiner", combiner}, {"split", split}, {"episodes", episodes}};
      if (combiner == "fusion") {
        if (params_path.empty()) throw UsageError("--combiner fusion needs --params");
        const auto params = detail::read_json_file(params_path).get<FusionParams>();
        detail::check_params_pool(params, pool.size());
        const auto mask = mask_text.empty() ? EnsembleMask(params.meta.mask_bits, pool.size())
                                            : detail::parse_mask_flag(mask_text, pool.size());
        summary = predict_eval(params, pool, mask, split, episodes);
        config["mask"] = mask.to_string();
        config["params"] = params_path;
      } else {
        if (mask_text.empty()) throw UsageError("--mask is required for --combiner " + combiner);
        const auto mask = detail::parse_mask_flag(mask_text, pool.size());
        summary = evaluate(combiner, combiner == "mean" ? mean_combiner() : plurality_combiner(), table, mask, episodes);
        config["mask"] = mask.to_string();
      }
      if (!csv_path.empty()) detail::write_text(csv_path, export_error_bars({summary}));
      emit(config, {{"summary", summary}});
    } else if (stream_cmd->parsed()) {
      const std::string& split = stream_split;
      StreamConfig cfg;
      cfg.train = train_config();
      cfg.split = split;
      cfg.train_size = train_size;
      cfg.val_size = val_size;
      cfg.test_size = test_size;
      cfg.cold_start = cold_start;
      std::vector<Pool> batches;
      std::vector<std::string> paths;
      for (const auto& p : detail::expand_manifest_list(manifest_list)) {
        batches.push_back(ingest(p));
        paths.push_back(p.generic_string());
      }
      std::optional<FusionParams> init;
      if (!params_path.empty()) init = detail::read_json_file(params_path).get<FusionParams>();
      const std::size_t n = batches.front().size();
      EnsembleMask mask = EnsembleMask::full(n);
      if (!mask_text.empty())
        mask = detail::parse_mask_flag(mask_text, n);
      else if (init && init->meta.mask_bits != 0)
        mask = EnsembleMask(init->meta.mask_bits, n);
      if (init) detail::check_params_pool(*init, n);
      if (init) cfg.train.normalization = init->meta.normalization;
      const auto result = stream_adapt(batches, mask, cfg, init ? &*init : nullptr);
      if (!params_out.empty()) detail::write_text(params_out, json(result.params).dump() + "\n");
      emit({{"manifests", paths},
            {"mask", mask.to_string()},
            {"params", params_path.empty() ? json(nullptr) : json(params_path)},
            {"cold_start", cold_start},
            {"split", split},
            {"sizes", {train_size, val_size, test_size}},
            {"train", detail::train_config_json(cfg.train)}},
           {{"trace", result.trace}});
    } else if (synth_cmd->parsed()) {
      if (spec_path.empty() == preset.empty()) throw UsageError("synth needs exactly one of --spec or --preset");
      json config = {{"out_dir", out_dir}};
      std::vector<SynthPool> pools;
      bool stream = false;
      if (!spec_path.empty()) {
        SynthSpec spec;
        try {
          spec = detail::read_json_file(spec_path).get<SynthSpec>();
        } catch (const json::exception& e) {
          throw Error(ErrorKind::ParseError, spec_path + ": " + e.what());
        }
        config["spec"] = spec;
        stream = spec.batches > 0;
        if (stream)
          pools = generate_stream(spec);
        else
          pools.push_back(generate(spec));
      } else {
        config["preset"] = preset;
        config["seed"] = seed;
        if (preset == "ablation")
          pools.push_back(plant_ablation_pool(seed));
        else if (preset == "copy")
          pools.push_back(plant_copy_pool(seed));
        else if (preset == "defense")
          pools.push_back(plant_defense_pool(seed));
        else if (preset == "complementary")
          pools.push_back(plant_complementary_pool(seed));
        else {
          stream = true;
          pools = generate_stream(detail::preset_spec(preset, seed));
        }
      }
      json written = json::array();
      json planted = json::array();
      std::string listing;
      for (std::size_t b = 0; b < pools.size(); ++b) {
        char name[32];
        std::snprintf(name, sizeof name, "batch_%02zu", b);
        const fs::path dir = stream ? fs::path(out_dir) / name : fs::path(out_dir);
        const auto path = write_pool(pools[b].pool, dir);
        written.push_back(path.generic_string());
        if (stream) listing += std::string(name) + "/manifest.json\n";
        json acc = json::object();
        for (const auto& [split_name, corr] : pools[b].planted) {
          std::vector<double> per;
          for (std::size_t i = 0; i < corr.models(); ++i) {
            std::size_t ok = 0;
            for (std::size_t e = 0; e < corr.episodes(); ++e) ok += corr.correct(i, e);
            per.push_back(corr.episodes() ? static_cast<double>(ok) / static_cast<double>(corr.episodes()) : 0.0);
          }
          acc[split_name] = per;
        }
        planted.push_back(acc);
      }
      if (stream) detail::write_text((fs::path(out_dir) / "stream.txt").string(), listing);
      json outputs = {{"manifests", written}, {"planted_accuracy", planted}};
      if (stream) outputs["stream_list"] = (fs::path(out_dir) / "stream.txt").generic_string();
      emit(config, outputs);
    } else if (bench_prune->parsed()) {
      json rows = json::array();
      std::ostringstream text;
      text << std::left << std::setw(5) << "N" << std::setw(12) << "candidates" << std::setw(12) << "bf_sec"
           << std::setw(12) << "ga_sec" << std::setw(12) << "ga_visited" << std::setw(10) << "coverage"
           << "same_top1\n";
      for (std::size_t n : bench_n) {
        const auto pool = generate(detail::bench_spec(n, bench_episodes, seed)).pool;
        const auto tbl = make_table(pool, "val");
        const EnsembleScorer scorer(tbl, Weights{});
        SearchConfig cfg;
        cfg.seed = seed;
        cfg.threads = workers;
        cfg.top_k = 1;
        using clock = std::chrono::steady_clock;
        auto t0 = clock::now();
        const auto bf = brute_force(scorer, cfg);
        const double bf_sec = std::chrono::duration<double>(clock::now() - t0).count();
        t0 = clock::now();
        const auto ga = genetic_search(scorer, cfg);
        const double ga_sec = std::chrono::duration<double>(clock::now() - t0).count();
        const double coverage = static_cast<double>(ga.visited_count) / static_cast<double>(ga.candidate_count);
        const bool same = bf.visited.front().bits == ga.visited.front().bits;
        rows.push_back({{"N", n},
                        {"candidate_count", bf.candidate_count},
                        {"bf_seconds", bf_sec},
                        {"ga_seconds", ga_sec},
                        {"ga_visited", ga.visited_count},
                        {"ga_coverage", coverage},
                        {"ga_generations", ga.generations_run},
                        {"same_top1", same}});
        text << std::setw(5) << n << std::setw(12) << bf.candidate_count << std::setw(12) << std::fixed
             << std::setprecision(4) << bf_sec << std::setw(12) << ga_sec << std::setw(12) << ga.visited_count
             << std::setw(10) << std::setprecision(3) << coverage << (same ? "yes" : "no") << '\n';
      }
      if (table) {
        if (out_path.empty())
          out << text.str();
        else
          detail::write_text(out_path, text.str());
      } else {
        emit({{"n", bench_n}, {"episodes", bench_episodes}, {"seed", seed}, {"threads", workers}},
             {{"bench_prune", rows}});
      }
    } else if (export_cmd->parsed()) {
      const auto csv = export_plot_data(detail::read_json_file(input), parse_plot_kind(kind));
      if (out_path.empty())
        out << csv;
      else
        detail::write_text(out_path, csv);
    }
  } catch (const UsageError& e) {
    err << "fusionshot: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "fusionshot: " << e.what() << '\n';
    return e.kind() == ErrorKind::InvalidArgument ? 2 : 1;
  } catch (const json::exception& e) {
    err << "fusionshot: ParseError: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "fusionshot: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fusionshot::cli
