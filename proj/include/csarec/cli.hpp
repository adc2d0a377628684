// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/config.hpp"
#include "csarec/offline_eval.hpp"
#include "csarec/simulator.hpp"
#include "csarec/trainer.hpp"

#include <string>
#include <vector>

#include "json.hpp"

namespace csarec {

// Files written into a prepared-data directory.
inline constexpr const char* kSessionsFile = "sessions.tsv";
inline constexpr const char* kItemsFile = "items.tsv";
inline constexpr const char* kManifestFile = "split.manifest";
inline constexpr const char* kConfigEcho = "config.ini";
inline constexpr const char* kTrainSummary = "train_summary.json";
inline constexpr const char* kSimulationFile = "simulation.json";

std::string tuples_file(const std::string& split);

struct PrepareSummary {
  CatalogInfo catalog;
  std::size_t sessions = 0;
  std::size_t dropped_sessions = 0;
  std::size_t train_tuples = 0;
  std::size_t validation_tuples = 0;
  std::size_t test_tuples = 0;
};

// Parses data.input (or generates the synthetic corpus when it is empty or
// "synthetic"), splits by session and writes tuple caches plus the manifest.
PrepareSummary cmd_prepare_data(const RunConfig& cfg, const std::string& out_dir);

// Trains on cfg.data.prepared. With `resume` set, continues from that checkpoint.
TrainResult cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& resume = "");

// `checkpoint` may be a file or a training directory (its retained checkpoint).
std::string resolve_checkpoint(const std::string& checkpoint);

// Writes metrics-<split>.json; the split comes from cfg.eval.split.
MetricReport cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_dir);

// Model, random and oracle curves on the configured (or generated) matrix.
std::vector<CurveReport> cmd_simulate(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_dir);

// Reads training logs, metric and simulation documents from the given files
// or directories; writes summary.txt plus loss.svg / simulation.svg when
// there is something to plot. Returns the summary text.
std::string cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal line chart.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

}  // namespace csarec
