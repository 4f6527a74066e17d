#include "hiervl/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hiervl/errors.hpp"
#include "hiervl/hashing.hpp"
#include "json.hpp"

namespace hiervl::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const std::vector<std::string> kTableColumns = {"childMCQ-inter", "childMCQ-intra", "summaryMCQ",
                                                "shuffleMCQ"};

namespace {

json eval_to_json(const eval::EvalConfig& e) {
  return {{"mcq_items", e.mcq_items},
          {"clips_per_video", e.clips_per_video},
          {"seed", e.seed},
          {"retrieval_clips", e.retrieval_clips},
          {"average_at_inference", e.average_at_inference},
          {"probe",
           {{"epochs", e.probe.epochs},
            {"lr", e.probe.lr},
            {"weight_decay", e.probe.weight_decay},
            {"seed", e.probe.seed}}}};
}

json generator_section(const corpus::GeneratorConfig& g) {
  json j = json::parse(corpus::generator_config_to_json(g));
  j.erase("split");
  return j;
}

void reject_unknown(const json& defaults, const json& given, const std::string& path) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    if (value.is_object()) reject_unknown(defaults.at(key), value, where);
  }
}

template <typename T>
void get(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = 1;
  j["generator"] = generator_section(c.generator);
  j["eval_videos"] = c.eval_videos;
  j["train"] = json::parse(train::config_to_json(c.train));
  j["train"].erase("schema_version");
  j["eval"] = eval_to_json(c.eval);
  j["budget_minutes"] = c.budget_minutes;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("run config: top level must be an object");
  if (j.contains("schema_version") && j.at("schema_version") != 1) {
    throw ConfigError("run config: unsupported schema_version");
  }
  json defaults = json::parse(run_config_to_json(RunConfig{}));
  defaults["train"]["aggregator"]["kind"] = "";
  reject_unknown(defaults, j, "");
  RunConfig c;
  try {
    if (j.contains("generator")) c.generator = corpus::generator_config_from_json(j.at("generator").dump());
    get(j, "eval_videos", c.eval_videos);
    get(j, "budget_minutes", c.budget_minutes);
    if (j.contains("train")) c.train = train::config_from_json(j.at("train").dump());
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      get(e, "mcq_items", c.eval.mcq_items);
      get(e, "clips_per_video", c.eval.clips_per_video);
      get(e, "seed", c.eval.seed);
      get(e, "retrieval_clips", c.eval.retrieval_clips);
      get(e, "average_at_inference", c.eval.average_at_inference);
      if (e.contains("probe")) {
        const auto& p = e.at("probe");
        get(p, "epochs", c.eval.probe.epochs);
        get(p, "lr", c.eval.probe.lr);
        get(p, "weight_decay", c.eval.probe.weight_decay);
        get(p, "seed", c.eval.probe.seed);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  c.generator.split = "train";
  c.generator.validate();
  c.train.validate();
  if (c.budget_minutes <= 0) throw ConfigError("run config: budget_minutes must be positive");
  return c;
}

std::string apply_overrides(const std::string& config_json, const std::vector<std::string>& overrides) {
  json j = json::parse(config_json);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "' is not of the form path=value");
    }
    const std::string path = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return j.dump(2);
}

CorpusPair generate_corpora(const corpus::GeneratorConfig& generator, std::size_t eval_videos) {
  CorpusPair out;
  corpus::GeneratorConfig g = generator;
  g.split = "train";
  out.train = corpus::generate_synthetic(g);
  g.split = "eval";
  g.num_videos = eval_videos;
  out.eval = corpus::generate_synthetic(g);
  return out;
}

void check_compatible(const train::TrainConfig& config, const corpus::Corpus& corpus) {
  const auto& m = corpus.manifest;
  if (m.vocab_size > config.encoder.vocab_size) {
    throw ConfigError("corpus vocab_size " + std::to_string(m.vocab_size) + " exceeds encoder vocab_size " +
                      std::to_string(config.encoder.vocab_size));
  }
  if (m.frame_feature_dim != config.encoder.frame_feature_dim) {
    throw ConfigError("corpus frame_feature_dim " + std::to_string(m.frame_feature_dim) +
                      " differs from encoder frame_feature_dim " +
                      std::to_string(config.encoder.frame_feature_dim));
  }
}

std::string manifest_hash(const std::string& corpus_path) {
  return git_blob_hash(read_file(corpus::manifest_path(corpus_path)));
}

std::string format_table_json(const std::vector<ReproduceRow>& rows) {
  json j;
  j["schema_version"] = 1;
  j["columns"] = kTableColumns;
  j["rows"] = json::array();
  for (const auto& row : rows) {
    json r;
    r["mode"] = row.mode;
    json ties;
    for (const auto& rep : row.reports) {
      r[rep.task] = rep.value;
      ties[rep.task] = rep.tie_count;
    }
    r["tie_count"] = ties;
    j["rows"].push_back(r);
  }
  return j.dump(2);
}

std::string format_table_text(const std::vector<ReproduceRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "mode";
  for (const auto& c : kTableColumns) os << std::right << std::setw(16) << c;
  os << '\n';
  for (const auto& row : rows) {
    os << std::left << std::setw(12) << row.mode;
    for (const auto& rep : row.reports) os << std::right << std::setw(16) << std::fixed << std::setprecision(1) << rep.value;
    os << '\n';
  }
  return os.str();
}

ReproduceResult reproduce(const RunConfig& config, const std::string& run_dir) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(fs::path(run_dir) / "corpus");
  std::ofstream(fs::path(run_dir) / "effective_config.json") << run_config_to_json(config) << '\n';

  const auto corpora = generate_corpora(config.generator, config.eval_videos);
  const std::string train_path = (fs::path(run_dir) / "corpus" / "train.jsonl").string();
  const std::string eval_path = (fs::path(run_dir) / "corpus" / "eval.jsonl").string();
  corpus::save_corpus(corpora.train, train_path);
  corpus::save_corpus(corpora.eval, eval_path);
  check_compatible(config.train, corpora.train);
  {
    json run;
    run["train_corpus"] = "corpus/train.jsonl";
    run["train_manifest_hash"] = manifest_hash(train_path);
    run["eval_corpus"] = "corpus/eval.jsonl";
    run["eval_manifest_hash"] = manifest_hash(eval_path);
    std::ofstream(fs::path(run_dir) / "run.json") << run.dump(2) << '\n';
  }

  std::vector<train::Mode> order = {train::Mode::ChildOnly};
  for (auto m : train::all_modes())
    if (m != train::Mode::ChildOnly) order.push_back(m);

  std::map<std::string, ReproduceRow> done;
  std::string child_only_ckpt;
  for (auto mode : order) {
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    if (elapsed > config.budget_minutes) {
      throw TrainingAborted("reproduce: wall-clock budget of " + std::to_string(config.budget_minutes) +
                            " min spent before " + train::to_string(mode));
    }
    train::TrainConfig t = config.train;
    t.mode = mode;
    t.init_checkpoint = mode == train::Mode::WoJoint ? child_only_ckpt : "";
    const fs::path dir = fs::path(run_dir) / "runs" / train::to_string(mode);
    auto result = train::run_schedule(t, corpora.train, dir.string());
    if (mode == train::Mode::ChildOnly) child_only_ckpt = (dir / "final.bin").string();

    const auto model = train::model_from_checkpoint(result.final_checkpoint);
    ReproduceRow row{train::to_string(mode), eval::evaluate_mcq(model, corpora.eval, config.eval)};
    std::ofstream out(dir / "eval.json");
    json reports = json::array();
    for (const auto& r : row.reports) reports.push_back(json::parse(eval::report_to_json(r)));
    out << reports.dump(2) << '\n';
    done[row.mode] = std::move(row);
  }

  ReproduceResult res;
  for (auto m : train::all_modes()) res.rows.push_back(done.at(train::to_string(m)));
  res.table_json = format_table_json(res.rows);
  res.table_text = format_table_text(res.rows);
  std::ofstream(fs::path(run_dir) / "table.json") << res.table_json << '\n';
  std::ofstream(fs::path(run_dir) / "table.txt") << res.table_text;
  return res;
}

}  // namespace hiervl::pipeline
