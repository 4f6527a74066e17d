#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "hiervl/errors.hpp"
#include "hiervl/hashing.hpp"
#include "hiervl/model_gradcheck.hpp"
#include "hiervl/objectives.hpp"
#include "hiervl/pipeline.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace hiervl;

namespace {

pipeline::RunConfig parse_config(const std::string& json) {
  return json.empty() ? pipeline::RunConfig{} : pipeline::run_config_from_json(json);
}

ad::Tensor matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DimensionError("empty matrix");
  std::vector<ad::Scalar> flat;
  for (const auto& r : rows) {
    if (r.size() != rows[0].size()) throw DimensionError("ragged matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return ad::Tensor::from({rows.size(), rows[0].size()}, std::move(flat));
}

}  // namespace

PYBIND11_MODULE(_hiervl, m) {
  m.doc() = "Hierarchical video-language pretraining core";

  static py::exception<hiervl::Error> error(m, "HiervlError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const hiervl::Error& e) {
      py::set_error(error, (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.def("default_config", [] { return pipeline::run_config_to_json({}); },
        "Default run config as JSON text.");

  m.def(
      "generate",
      [](const std::string& out_dir, const std::string& config_json) {
        auto cfg = parse_config(config_json);
        fs::create_directories(out_dir);
        auto corpora = pipeline::generate_corpora(cfg.generator, cfg.eval_videos);
        const auto train_path = (fs::path(out_dir) / "train.jsonl").string();
        const auto eval_path = (fs::path(out_dir) / "eval.jsonl").string();
        corpus::save_corpus(corpora.train, train_path);
        corpus::save_corpus(corpora.eval, eval_path);
        return py::make_tuple(train_path, eval_path);
      },
      py::arg("out_dir"), py::arg("config_json") = "");

  m.def(
      "corpus_info",
      [](const std::string& path) {
        auto c = corpus::load_corpus(path);
        py::dict d;
        d["split"] = c.manifest.split;
        d["videos"] = c.videos.size();
        d["clips"] = c.clip_count();
        d["vocab_size"] = c.manifest.vocab_size;
        d["frame_feature_dim"] = c.manifest.frame_feature_dim;
        d["manifest_hash"] = pipeline::manifest_hash(path);
        return d;
      },
      py::arg("path"));

  m.def(
      "train",
      [](const std::string& corpus_path, const std::string& out_dir, const std::string& config_json) {
        auto cfg = parse_config(config_json);
        auto data = corpus::load_corpus(corpus_path);
        pipeline::check_compatible(cfg.train, data);
        train::RunResult result;
        {
          py::gil_scoped_release release;
          result = train::run_schedule(cfg.train, data, out_dir);
        }
        py::list steps;
        for (const auto& r : result.metrics) {
          py::dict d;
          d["step"] = r.step;
          d["level"] = r.level == train::Level::Child ? "child" : "parent";
          d["loss"] = r.loss;
          steps.append(d);
        }
        return steps;
      },
      py::arg("corpus"), py::arg("out_dir"), py::arg("config_json") = "");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& corpus_path, const std::string& train_corpus,
         const std::string& config_json) {
        auto cfg = parse_config(config_json);
        auto model = train::model_from_checkpoint(train::load_checkpoint(checkpoint));
        auto data = corpus::load_corpus(corpus_path);
        std::optional<corpus::Corpus> train_data;
        if (!train_corpus.empty()) train_data = corpus::load_corpus(train_corpus);
        std::vector<std::string> out;
        {
          py::gil_scoped_release release;
          for (const auto& r : eval::evaluate_all(model, train_data ? &*train_data : nullptr, data, cfg.eval))
            out.push_back(eval::report_to_json(r));
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("corpus"), py::arg("train_corpus") = "", py::arg("config_json") = "",
      "EvalReports as JSON strings.");

  m.def(
      "export_embeddings",
      [](const std::string& checkpoint, const std::string& corpus_path, const std::string& level,
         const std::string& out, std::size_t k) {
        if (level != "child" && level != "parent") throw ConfigError("level must be child or parent");
        auto model = train::model_from_checkpoint(train::load_checkpoint(checkpoint));
        eval::export_embeddings(corpus::load_corpus(corpus_path), model,
                                level == "child" ? eval::ExportLevel::Child : eval::ExportLevel::Parent, k,
                                out);
      },
      py::arg("checkpoint"), py::arg("corpus"), py::arg("level"), py::arg("out"), py::arg("k") = 16);

  m.def(
      "gradcheck",
      [](int seeds, double tol, bool ops_only) {
        auto cases = ops_only ? ad::op_gradcheck_cases() : all_gradcheck_cases();
        std::vector<std::tuple<std::string, double, bool>> out;
        py::gil_scoped_release release;
        for (const auto& c : cases) {
          auto r = ad::run_gradcheck(c, seeds, tol);
          out.emplace_back(r.name, r.max_rel_error, r.passed);
        }
        return out;
      },
      py::arg("seeds") = 10, py::arg("tol") = 1e-4, py::arg("ops_only") = false);

  m.def(
      "nce_grouped",
      [](const std::vector<std::vector<double>>& anchors, const std::vector<std::vector<double>>& targets,
         const std::vector<std::vector<bool>>& positives, double tau) {
        ad::Mask mask;
        for (const auto& row : positives)
          for (bool b : row) mask.push_back(b ? 1 : 0);
        return double(objectives::nce_grouped(matrix(anchors), matrix(targets), mask,
                                              objectives::Temperature(tau))
                          .item());
      },
      py::arg("anchors"), py::arg("targets"), py::arg("positives"), py::arg("tau") = 0.05);

  m.def("average_precision", &eval::average_precision, py::arg("scores"), py::arg("relevance"));
  m.def("ndcg", &eval::ndcg, py::arg("scores"), py::arg("relevance"));

  m.def(
      "reproduce",
      [](const std::string& run_dir, const std::string& config_json) {
        auto cfg = parse_config(config_json);
        py::gil_scoped_release release;
        return pipeline::reproduce(cfg, run_dir).table_json;
      },
      py::arg("run_dir"), py::arg("config_json") = "", "Comparison table as JSON text.");

  m.def("blob_hash", [](const std::string& bytes) { return git_blob_hash(bytes); });
}
