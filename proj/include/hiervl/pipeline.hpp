#pragma once

// Run configuration shared by the command-line tool, plus the end-to-end
// reproduce matrix.

#include <string>
#include <vector>

#include "hiervl/evalsuite.hpp"

namespace hiervl::pipeline {

struct RunConfig {
  corpus::GeneratorConfig generator;
  std::size_t eval_videos = 40;
  train::TrainConfig train;
  eval::EvalConfig eval;
  double budget_minutes = 30;
};

/// Versioned JSON with sections "generator", "train" and "eval".
std::string run_config_to_json(const RunConfig& c);
/// Unknown keys raise ConfigError; missing keys keep their defaults.
RunConfig run_config_from_json(const std::string& text);

/// Applies `path=value` overrides (e.g. "train.lr=0.0005") to a config JSON
/// document. Values parse as JSON, falling back to a plain string.
std::string apply_overrides(const std::string& config_json, const std::vector<std::string>& overrides);

struct CorpusPair {
  corpus::Corpus train;
  corpus::Corpus eval;
};

/// Train and eval splits of one synthetic world.
CorpusPair generate_corpora(const corpus::GeneratorConfig& generator, std::size_t eval_videos);

/// Encoder sizes must fit the corpus vocabulary and frame width.
void check_compatible(const train::TrainConfig& config, const corpus::Corpus& corpus);

/// Content hash of a corpus file's manifest.
std::string manifest_hash(const std::string& corpus_path);

extern const std::vector<std::string> kTableColumns;

struct ReproduceRow {
  std::string mode;
  std::vector<eval::EvalReport> reports;  // one per table column
};

struct ReproduceResult {
  std::vector<ReproduceRow> rows;
  std::string table_json;
  std::string table_text;
};

std::string format_table_json(const std::vector<ReproduceRow>& rows);
std::string format_table_text(const std::vector<ReproduceRow>& rows);

/// Generates both corpora under `run_dir/corpus`, trains ChildOnly first (its
/// checkpoint seeds WoJoint), then the remaining modes, evaluating each.
/// Throws TrainingAborted once the wall-clock budget is spent.
ReproduceResult reproduce(const RunConfig& config, const std::string& run_dir);

}  // namespace hiervl::pipeline
