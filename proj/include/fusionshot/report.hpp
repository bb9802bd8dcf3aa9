#pragma once

// JSON encodings of the report types and CSV plot exports.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionshot/consensus.hpp"
#include "fusionshot/detail/random.hpp"
#include "fusionshot/diversity.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/pruner.hpp"

namespace fusionshot {

inline constexpr const char* kToolVersion = "0.1.0";

inline void to_json(nlohmann::json& j, const EvalSummary& s) {
  j = {{"method", s.method}, {"split", s.split}, {"episodes", s.episodes}, {"accuracy", s.accuracy}, {"ci95", s.ci95}};
}

inline void from_json(const nlohmann::json& j, EvalSummary& s) {
  j.at("method").get_to(s.method);
  j.at("split").get_to(s.split);
  j.at("episodes").get_to(s.episodes);
  j.at("accuracy").get_to(s.accuracy);
  j.at("ci95").get_to(s.ci95);
}

inline EnsembleMask mask_from_json(const nlohmann::json& j) {
  const auto text = j.get<std::string>();
  if (!text.starts_with("0b")) throw Error(ErrorKind::InvalidMask, "expected 0b-prefixed mask, got " + text);
  return EnsembleMask::parse(text, text.size() - 2);
}

inline void to_json(nlohmann::json& j, const DiversityReport& r) {
  nlohmann::json sigmas = nlohmann::json::array();
  for (const auto& s : r.sigma_per_focal) sigmas.push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
  j = {{"mask", r.mask.to_string()},
       {"members", r.mask.members()},
       {"m", r.mask.size()},
       {"sigma_per_focal", sigmas},
       {"never_failed", r.never_failed},
       {"lambda_focal", r.lambda_focal},
       {"kappa", r.kappa},
       {"val_accuracy", r.val_accuracy},
       {"pruning_score", r.pruning_score}};
}

inline void from_json(const nlohmann::json& j, DiversityReport& r) {
  r.mask = mask_from_json(j.at("mask"));
  r.sigma_per_focal.clear();
  for (const auto& s : j.at("sigma_per_focal"))
    r.sigma_per_focal.push_back(s.is_null() ? std::nullopt : std::optional<double>(s.get<double>()));
  j.at("never_failed").get_to(r.never_failed);
  j.at("lambda_focal").get_to(r.lambda_focal);
  j.at("kappa").get_to(r.kappa);
  j.at("val_accuracy").get_to(r.val_accuracy);
  j.at("pruning_score").get_to(r.pruning_score);
}

inline void to_json(nlohmann::json& j, const Weights& w) { j = {{"w1", w.w1}, {"w2", w.w2}}; }

inline void from_json(const nlohmann::json& j, Weights& w) {
  j.at("w1").get_to(w.w1);
  j.at("w2").get_to(w.w2);
}

inline void to_json(nlohmann::json& j, const RankedEnsemble& r) {
  j = {{"report", r.report}, {"fitness", r.fitness}, {"diversity_term", r.diversity_term}};
}

inline void from_json(const nlohmann::json& j, RankedEnsemble& r) {
  j.at("report").get_to(r.report);
  j.at("fitness").get_to(r.fitness);
  j.at("diversity_term").get_to(r.diversity_term);
}

/// Compact row: [bits, m, accuracy, lambda, fitness, undefined_focal].
inline void to_json(nlohmann::json& j, const MaskScore& s) {
  j = nlohmann::json::array({s.bits, s.m, s.accuracy, s.lambda, s.fitness, s.undefined_focal});
}

inline void from_json(const nlohmann::json& j, MaskScore& s) {
  s.bits = j.at(0).get<std::uint64_t>();
  s.m = j.at(1).get<std::uint32_t>();
  s.accuracy = j.at(2).get<double>();
  s.lambda = j.at(3).get<double>();
  s.fitness = j.at(4).get<double>();
  s.undefined_focal = j.at(5).get<std::uint32_t>();
}

/// `visited` is only written when `with_visited` is set; it can hold
/// millions of rows for large pools.
inline nlohmann::json search_result_json(const SearchResult& r, bool with_visited) {
  nlohmann::json j = {{"method", to_string(r.method)},
                      {"pool_size", r.pool_size},
                      {"weights", r.weights},
                      {"victim", r.victim ? nlohmann::json(*r.victim) : nlohmann::json(nullptr)},
                      {"ranked", r.ranked},
                      {"visited_count", r.visited_count},
                      {"candidate_count", r.candidate_count},
                      {"coverage", r.candidate_count == 0 ? 0.0
                                                          : static_cast<double>(r.visited_count) /
                                                                static_cast<double>(r.candidate_count)},
                      {"generations_run", r.generations_run},
                      {"masks_with_undefined_focal", r.masks_with_undefined_focal}};
  if (with_visited) {
    j["visited_columns"] = {"bits", "m", "accuracy", "lambda", "fitness", "undefined_focal"};
    j["visited"] = r.visited;
  }
  return j;
}

inline void to_json(nlohmann::json& j, const SearchResult& r) { j = search_result_json(r, true); }

inline void from_json(const nlohmann::json& j, SearchResult& r) {
  r.method = parse_search_method(j.at("method").get<std::string>());
  j.at("pool_size").get_to(r.pool_size);
  j.at("weights").get_to(r.weights);
  r.victim = j.at("victim").is_null() ? std::nullopt : std::optional<std::string>(j.at("victim").get<std::string>());
  j.at("ranked").get_to(r.ranked);
  j.at("visited_count").get_to(r.visited_count);
  j.at("candidate_count").get_to(r.candidate_count);
  j.at("generations_run").get_to(r.generations_run);
  j.at("masks_with_undefined_focal").get_to(r.masks_with_undefined_focal);
  r.visited.clear();
  if (j.contains("visited")) j.at("visited").get_to(r.visited);
}

// ---------------------------------------------------------------------------
// Run reports

/// Envelope for every CLI report. Output is a pure function of the command
/// and its inputs unless `timestamps` is requested.
inline nlohmann::json run_report(const std::vector<std::string>& command, const nlohmann::json& config,
                                 nlohmann::json outputs, std::optional<nlohmann::json> timestamps = std::nullopt) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(detail::fnv1a(config.dump())));
  nlohmann::json j = {{"tool", "fusionshot"},
                      {"version", kToolVersion},
                      {"command", command},
                      {"config", config},
                      {"config_hash", hash},
                      {"outputs", std::move(outputs)}};
  if (timestamps) j["timestamps"] = *timestamps;
  return j;
}

// ---------------------------------------------------------------------------
// Plot exports

enum class PlotKind { DiversityScatter, StreamTrace, ErrorBars };

inline PlotKind parse_plot_kind(const std::string& s) {
  if (s == "diversity_scatter") return PlotKind::DiversityScatter;
  if (s == "stream_trace") return PlotKind::StreamTrace;
  if (s == "error_bars") return PlotKind::ErrorBars;
  throw Error(ErrorKind::InvalidArgument, "unknown plot kind '" + s + "'");
}

namespace detail {

inline std::string csv_number(double v) { return format_double(v); }

}  // namespace detail

/// One row per scored mask: mask, m, lambda_focal, plurality_acc, fitness.
inline std::string export_diversity_scatter(const SearchResult& r) {
  if (r.ranked.empty() || r.visited.empty())
    throw Error(ErrorKind::KindMismatch, "diversity_scatter needs a search result with scored masks");
  std::ostringstream os;
  os << "# diversity_scatter: one row per scored ensemble; lambda_focal and plurality_acc on the search split\n";
  os << "mask,m,lambda_focal,plurality_acc,fitness\n";
  for (const auto& s : r.visited)
    os << EnsembleMask(s.bits, r.pool_size).to_string() << ',' << s.m << ',' << detail::csv_number(s.lambda) << ','
       << detail::csv_number(s.accuracy) << ',' << detail::csv_number(s.fitness) << '\n';
  return os.str();
}

inline std::string export_stream_trace(const std::vector<EvalSummary>& trace) {
  if (trace.empty()) throw Error(ErrorKind::KindMismatch, "stream_trace needs a non-empty trace");
  std::ostringstream os;
  os << "# stream_trace: test-slice accuracy (%) after adapting to each batch\n";
  os << "batch,episodes,accuracy,ci95\n";
  for (std::size_t b = 0; b < trace.size(); ++b)
    os << b << ',' << trace[b].episodes << ',' << detail::csv_number(trace[b].accuracy) << ','
       << detail::csv_number(trace[b].ci95) << '\n';
  return os.str();
}

inline std::string export_error_bars(const std::vector<EvalSummary>& rows) {
  if (rows.empty()) throw Error(ErrorKind::KindMismatch, "error_bars needs at least one evaluation");
  std::ostringstream os;
  os << "# error_bars: mean episode accuracy (%) with 95% interval half-width\n";
  os << "method,split,episodes,accuracy,ci95\n";
  for (const auto& s : rows)
    os << s.method << ',' << s.split << ',' << s.episodes << ',' << detail::csv_number(s.accuracy) << ','
       << detail::csv_number(s.ci95) << '\n';
  return os.str();
}

/// Dispatch on a CLI report (or its `outputs` object).
inline std::string export_plot_data(const nlohmann::json& report, PlotKind kind) {
  const nlohmann::json& o = report.contains("outputs") ? report.at("outputs") : report;
  try {
    switch (kind) {
      case PlotKind::DiversityScatter:
        if (!o.contains("search")) break;
        return export_diversity_scatter(o.at("search").get<SearchResult>());
      case PlotKind::StreamTrace:
        if (!o.contains("trace")) break;
        return export_stream_trace(o.at("trace").get<std::vector<EvalSummary>>());
      case PlotKind::ErrorBars:
        if (o.contains("summary")) return export_error_bars({o.at("summary").get<EvalSummary>()});
        if (o.contains("summaries")) return export_error_bars(o.at("summaries").get<std::vector<EvalSummary>>());
        if (o.contains("trace")) return export_error_bars(o.at("trace").get<std::vector<EvalSummary>>());
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::KindMismatch, std::string("report does not decode: ") + e.what());
  }
  throw Error(ErrorKind::KindMismatch, "report carries no data for this plot kind");
}

}  // namespace fusionshot
