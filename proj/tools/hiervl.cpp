// hiervl: generate | train | eval | gradcheck | export | reproduce

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "hiervl/errors.hpp"
#include "hiervl/hashing.hpp"
#include "hiervl/model_gradcheck.hpp"
#include "hiervl/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace hiervl;

namespace {

int exit_code(const std::string& kind) {
  static const std::map<std::string, int> codes = {
      {"config", 2},    {"parse", 3},     {"path", 4},
      {"integrity", 5}, {"contract", 6},  {"dimension", 6},
      {"numeric", 7},   {"degenerate-aggregate", 7}, {"training-aborted", 8},
  };
  auto it = codes.find(kind);
  return it == codes.end() ? 1 : it->second;
}

// Layered config: defaults, then --config file, then --set, then typed flags.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::vector<std::string> flags;  // same form as --set, filled by typed options

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "Override, e.g. train.lr=0.0005 (repeatable)");
  }

  pipeline::RunConfig resolve() const {
    std::string text = pipeline::run_config_to_json({});
    if (!file.empty()) {
      json base = json::parse(text);
      json overlay;
      try {
        overlay = json::parse(read_file(file));
      } catch (const json::exception& e) {
        throw ParseError("config file " + file + ": " + e.what());
      }
      base.merge_patch(overlay);
      text = base.dump();
    }
    text = pipeline::apply_overrides(text, sets);
    text = pipeline::apply_overrides(text, flags);
    return pipeline::run_config_from_json(text);
  }
};

template <typename T>
void flag_into(CLI::App* cmd, const std::string& name, const std::string& path, ConfigArgs& args,
               const std::string& help) {
  cmd->add_option_function<T>(
      name, [&args, path](const T& v) { args.flags.push_back(path + "=" + json(v).dump()); }, help);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw PathError("cannot write " + p.string());
  out << text;
}

corpus::Corpus load_checked(const std::string& path) {
  if (!fs::exists(path)) throw PathError("corpus not found: " + path);
  return corpus::load_corpus(path);
}

train::Checkpoint load_ckpt(const std::string& path) {
  if (!fs::exists(path)) throw PathError("checkpoint not found: " + path);
  return train::load_checkpoint(path);
}

void print_reports(const std::vector<eval::EvalReport>& reports, const fs::path& out_dir) {
  json all = json::array();
  for (const auto& r : reports) {
    std::cout << r.task << ": " << r.value << " (" << r.metric << ", n=" << r.item_count
              << ", chance=" << r.chance << ", ties=" << r.tie_count << ")\n";
    all.push_back(json::parse(eval::report_to_json(r)));
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "reports.json", all.dump(2) + "\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical video-language pretraining at desk scale"};
  app.require_subcommand(1);

  // generate
  ConfigArgs gen_args;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write train and eval synthetic corpora");
  gen_args.attach(gen);
  gen->add_option("--out", gen_out, "Output directory")->required();
  flag_into<std::uint64_t>(gen, "--seed", "generator.seed", gen_args, "World and split seed");
  flag_into<std::size_t>(gen, "--videos", "generator.num_videos", gen_args, "Train videos");
  flag_into<std::size_t>(gen, "--eval-videos", "eval_videos", gen_args, "Eval videos");
  flag_into<std::size_t>(gen, "--clips", "generator.clips_per_video", gen_args, "Clips per video");
  flag_into<bool>(gen, "--order-signal", "generator.order_signal", gen_args, "Mirrored intent pairs");
  flag_into<double>(gen, "--frame-noise", "generator.frame_noise", gen_args, "Frame noise sd");
  flag_into<double>(gen, "--token-noise", "generator.token_noise", gen_args, "Token corruption rate");

  // train
  ConfigArgs train_args;
  std::string train_corpus, train_out, resume_path;
  auto* trn = app.add_subcommand("train", "Train one mode on a corpus");
  train_args.attach(trn);
  trn->add_option("--corpus", train_corpus, "Train corpus .jsonl")->required();
  trn->add_option("--out", train_out, "Run directory")->required();
  trn->add_option("--resume", resume_path, "Checkpoint to continue from");
  flag_into<std::string>(trn, "--mode", "train.mode", train_args,
                         "HierVL-SA|HierVL-Avg|ChildOnly|WoJoint|WoHier|WoSumm|WoSummNarr");
  flag_into<std::size_t>(trn, "--steps", "train.total_steps", train_args, "Total optimizer steps");
  flag_into<std::uint64_t>(trn, "--seed", "train.seed", train_args, "Training seed");
  flag_into<double>(trn, "--lr", "train.lr", train_args, "AdamW learning rate");
  flag_into<std::size_t>(trn, "--m", "train.m", train_args, "Child steps per parent step");
  flag_into<std::size_t>(trn, "--checkpoint-every", "train.checkpoint_every", train_args,
                         "Checkpoint period in steps");
  flag_into<std::string>(trn, "--init-checkpoint", "train.init_checkpoint", train_args,
                         "Starting weights (WoJoint)");
  trn->add_flag_callback(
      "--parent-every-epochs",
      [&] { train_args.flags.push_back("train.schedule=\"per-epoch\""); },
      "One parent step after every m child epochs");
  trn->add_flag_callback(
      "--one-sided", [&] { train_args.flags.push_back("train.one_sided=true"); },
      "Clip-to-narration child loss only");

  // eval
  ConfigArgs eval_args;
  std::string eval_ckpt, eval_corpus, eval_train_corpus, eval_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_args.attach(ev);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--corpus", eval_corpus, "Eval corpus .jsonl")->required();
  ev->add_option("--train-corpus", eval_train_corpus, "Train corpus for the linear probe");
  ev->add_option("--out", eval_out, "Directory for reports.json");
  flag_into<std::size_t>(ev, "--items", "eval.mcq_items", eval_args, "Items per MCQ task");
  flag_into<std::uint64_t>(ev, "--seed", "eval.seed", eval_args, "Item sampling seed");
  ev->add_flag_callback(
      "--avg-inference", [&] { eval_args.flags.push_back("eval.average_at_inference=true"); },
      "Replace the aggregator by averaging at inference");

  // gradcheck
  int gc_seeds = 10;
  double gc_tol = 1e-4;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  gc->add_option("--seeds", gc_seeds, "Seeds per case")->check(CLI::PositiveNumber);
  gc->add_option("--tol", gc_tol, "Maximum relative error");
  gc->add_option("--out", gc_out, "JSON report file");

  // export
  std::string ex_ckpt, ex_corpus, ex_out, ex_level = "child";
  std::size_t ex_k = 16;
  auto* ex = app.add_subcommand("export", "Write embeddings as JSONL");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  ex->add_option("--corpus", ex_corpus, "Corpus .jsonl")->required();
  ex->add_option("--out", ex_out, "Output .jsonl")->required();
  ex->add_option("--level", ex_level, "child|parent")->check(CLI::IsMember({"child", "parent"}));
  ex->add_option("--k", ex_k, "Clips per video for parent rows")->check(CLI::PositiveNumber);

  // reproduce
  ConfigArgs rep_args;
  std::string rep_out;
  auto* rep = app.add_subcommand("reproduce", "Train and evaluate all seven modes");
  rep_args.attach(rep);
  rep->add_option("--out", rep_out, "Run directory")->required();
  flag_into<std::size_t>(rep, "--steps", "train.total_steps", rep_args, "Steps per mode");
  flag_into<std::uint64_t>(rep, "--seed", "train.seed", rep_args, "Training seed");
  flag_into<double>(rep, "--budget-minutes", "budget_minutes", rep_args, "Wall-clock budget");
  flag_into<std::size_t>(rep, "--videos", "generator.num_videos", rep_args, "Train videos");
  flag_into<std::size_t>(rep, "--eval-videos", "eval_videos", rep_args, "Eval videos");
  flag_into<std::size_t>(rep, "--items", "eval.mcq_items", rep_args, "Items per MCQ task");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << "\n";
    return 64;
  }

  try {
    if (*gen) {
      auto cfg = gen_args.resolve();
      fs::create_directories(gen_out);
      auto corpora = pipeline::generate_corpora(cfg.generator, cfg.eval_videos);
      const auto train_path = (fs::path(gen_out) / "train.jsonl").string();
      const auto eval_path = (fs::path(gen_out) / "eval.jsonl").string();
      corpus::save_corpus(corpora.train, train_path);
      corpus::save_corpus(corpora.eval, eval_path);
      write_text(fs::path(gen_out) / "effective_config.json", pipeline::run_config_to_json(cfg) + "\n");
      std::cout << train_path << " " << corpora.train.videos.size() << " videos manifest "
                << pipeline::manifest_hash(train_path) << "\n"
                << eval_path << " " << corpora.eval.videos.size() << " videos manifest "
                << pipeline::manifest_hash(eval_path) << "\n";
    } else if (*trn) {
      auto cfg = train_args.resolve();
      auto data = load_checked(train_corpus);
      pipeline::check_compatible(cfg.train, data);
      fs::create_directories(train_out);
      write_text(fs::path(train_out) / "effective_config.json", pipeline::run_config_to_json(cfg) + "\n");
      json run;
      run["corpus"] = fs::absolute(train_corpus).string();
      run["corpus_manifest_hash"] = pipeline::manifest_hash(train_corpus);
      run["config_hash"] = train::config_hash(cfg.train);
      if (!resume_path.empty()) run["resumed_from"] = fs::absolute(resume_path).string();
      write_text(fs::path(train_out) / "run.json", run.dump(2) + "\n");
      std::optional<train::Checkpoint> resume;
      if (!resume_path.empty()) resume = load_ckpt(resume_path);
      auto result = train::run_schedule(cfg.train, data, train_out, resume ? &*resume : nullptr);
      const double last = result.metrics.empty() ? 0.0 : result.metrics.back().loss;
      std::cout << "trained " << train::to_string(cfg.train.mode) << " to step "
                << result.final_checkpoint.step << ", last loss " << last << ", checkpoint "
                << (fs::path(train_out) / "final.bin").string() << "\n";
    } else if (*ev) {
      auto cfg = eval_args.resolve();
      auto ckpt = load_ckpt(eval_ckpt);
      auto model = train::model_from_checkpoint(ckpt);
      auto data = load_checked(eval_corpus);
      std::optional<corpus::Corpus> train_data;
      if (!eval_train_corpus.empty()) train_data = load_checked(eval_train_corpus);
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_text(fs::path(eval_out) / "effective_config.json", pipeline::run_config_to_json(cfg) + "\n");
      }
      auto reports = eval::evaluate_all(model, train_data ? &*train_data : nullptr, data, cfg.eval);
      print_reports(reports, eval_out);
    } else if (*gc) {
      json report = json::array();
      std::vector<std::string> failed;
      for (const auto& c : all_gradcheck_cases()) {
        auto r = ad::run_gradcheck(c, gc_seeds, gc_tol);
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " max_rel_error=" << r.max_rel_error
                  << "\n";
        report.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"seeds", r.seeds},
                          {"passed", r.passed}});
        if (!r.passed) failed.push_back(r.name);
      }
      if (!gc_out.empty()) write_text(gc_out, report.dump(2) + "\n");
      if (!failed.empty()) {
        std::string names;
        for (const auto& n : failed) names += (names.empty() ? "" : ",") + n;
        throw NumericError("gradcheck failed for " + std::to_string(failed.size()) + " case(s): " + names);
      }
    } else if (*ex) {
      auto model = train::model_from_checkpoint(load_ckpt(ex_ckpt));
      auto data = load_checked(ex_corpus);
      eval::export_embeddings(data, model, ex_level == "child" ? eval::ExportLevel::Child : eval::ExportLevel::Parent,
                              ex_k, ex_out);
      std::cout << ex_out << "\n";
    } else if (*rep) {
      auto cfg = rep_args.resolve();
      auto result = pipeline::reproduce(cfg, rep_out);
      std::cout << result.table_text;
    }
  } catch (const hiervl::Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << e.kind() << ": " << msg << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
