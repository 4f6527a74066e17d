// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.
// Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "hiervl/aggregation.hpp"
#include "hiervl/hashing.hpp"
#include "hiervl/model_gradcheck.hpp"
#include "hiervl/objectives.hpp"
#include "hiervl/pipeline.hpp"
#include "json.hpp"

using namespace hiervl;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << detail << std::endl;
  failures += !ok;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << std::fixed << v;
  return os.str();
}

void gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = sizeof(ad::Scalar) == 8;
  double worst = 0;
  std::string worst_name;
  std::size_t n = 0;
  for (const auto& c : all_gradcheck_cases()) {
    auto r = ad::run_gradcheck(c, 10, 1e-4);
    ok = ok && r.passed;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
    ++n;
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120;
  std::ostringstream d;
  d << n << " cases x 10 seeds, worst rel err " << worst << " (" << worst_name << "), " << fmt(secs, 1) << " s";
  report(1, "gradient integrity", ok, d.str());
}

void loss_oracles() {
  using namespace objectives;
  auto z = ad::Tensor::zeros({4, 3});
  const double four = nce_grouped(z, z, diagonal_mask(4), Temperature(0.05)).item();
  auto eye = ad::Tensor::from({2, 2}, {1, 0, 0, 1});
  const double two = nce_grouped(eye, eye, diagonal_mask(2), Temperature(1.0)).item();
  const double e4 = std::abs(four - std::log(4.0));
  const double e2 = std::abs(two - std::log(1 + std::exp(-1.0)));
  std::ostringstream d;
  d << "|L - ln4| = " << e4 << ", |L - ln(1+1/e)| = " << e2;
  report(2, "loss oracles", e4 <= 1e-9 && e2 <= 1e-9, d.str());
}

double l2(const std::vector<ad::Scalar>& a, const std::vector<ad::Scalar>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i] - b[i]) * double(a[i] - b[i]);
  return std::sqrt(s);
}

void permutation_dichotomy() {
  const train::TrainConfig defaults;
  const std::size_t k = defaults.clips_per_video, dim = defaults.encoder.embed_dim;
  std::mt19937_64 rng(0);
  std::normal_distribution<double> nd;
  model::FeatureSequence seq;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<ad::Scalar> v(dim);
    double n = 0;
    for (auto& x : v) x = nd(rng), n += x * x;
    for (auto& x : v) x /= std::sqrt(n);
    seq.features.emplace_back(v);
    seq.clip_indices.push_back(i);
  }
  model::AggregatorConfig ac = defaults.aggregator;
  ac.clips_per_video = k;
  model::Aggregator sa(ac, dim, rng);

  const auto avg0 = model::aggregate_avg(seq).values();
  const auto sa0 = sa.aggregate(seq).values();
  std::vector<std::size_t> perm(k);
  for (std::size_t i = 0; i < k; ++i) perm[i] = i;
  double avg_max = 0, sa_max = 0;
  for (int p = 0; p < 20; ++p) {
    std::shuffle(perm.begin(), perm.end(), rng);
    model::FeatureSequence s;
    for (std::size_t i : perm) s.features.push_back(seq.features[i]);
    s.clip_indices = seq.clip_indices;
    avg_max = std::max(avg_max, l2(model::aggregate_avg(s).values(), avg0));
    sa_max = std::max(sa_max, l2(sa.aggregate(s).values(), sa0));
  }
  std::ostringstream d;
  d << "avg max change " << avg_max << ", self-attention max change " << sa_max;
  report(3, "permutation dichotomy", avg_max < 1e-9 && sa_max >= 1e-3, d.str());
}

double total_wall_seconds(const fs::path& timing) {
  std::ifstream in(timing);
  std::string line;
  double ms = 0;
  while (std::getline(in, line)) ms += nlohmann::json::parse(line).at("wall_ms").get<double>();
  return ms / 1000;
}

void table_criteria(const fs::path& dir) {
  pipeline::RunConfig cfg;
  std::cout << "running the default reproduce matrix under " << dir << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  pipeline::ReproduceResult res;
  try {
    res = pipeline::reproduce(cfg, dir.string());
  } catch (const std::exception& e) {
    for (int id = 4; id <= 8; ++id) report(id, "reproduce matrix", false, e.what());
    return;
  }
  std::cout << res.table_text << "reproduce took " << fmt(seconds_since(t0), 1) << " s" << std::endl;

  std::map<std::string, std::map<std::string, eval::EvalReport>> t;
  for (const auto& row : res.rows)
    for (const auto& r : row.reports) t[row.mode][r.task] = r;
  auto v = [&](const std::string& mode, const std::string& task) { return t.at(mode).at(task).value; };

  double slowest = 0;
  std::string slowest_mode;
  for (const auto& row : res.rows) {
    const double s = total_wall_seconds(dir / "runs" / row.mode / "timing.jsonl");
    if (s > slowest) slowest = s, slowest_mode = row.mode;
  }
  const bool fast = slowest <= 600;
  const std::size_t items = t.at("HierVL-SA").at("summaryMCQ").item_count;
  const std::string budget = "; slowest training " + slowest_mode + " " + fmt(slowest, 1) + " s";

  {
    const double sa = v("HierVL-SA", "summaryMCQ"), co = v("ChildOnly", "summaryMCQ");
    report(4, "summary level", fast && items >= 500 && sa - co >= 10,
           "summaryMCQ HierVL-SA " + fmt(sa, 1) + " vs ChildOnly " + fmt(co, 1) + " over " +
               std::to_string(items) + " items" + budget);
  }
  {
    const double avg = v("HierVL-Avg", "shuffleMCQ"), co = v("ChildOnly", "shuffleMCQ");
    const double sa = v("HierVL-SA", "shuffleMCQ");
    const auto ties = t.at("HierVL-Avg").at("shuffleMCQ").tie_count;
    const bool ok = std::abs(avg - 20) <= 5 && std::abs(co - 20) <= 5 && sa >= 35 && ties > 0;
    report(5, "shuffle level", ok,
           "shuffleMCQ HierVL-Avg " + fmt(avg, 1) + " (ties " + std::to_string(ties) + "), ChildOnly " +
               fmt(co, 1) + ", HierVL-SA " + fmt(sa, 1));
  }
  {
    const double co = v("ChildOnly", "childMCQ-inter");
    const double sa = v("HierVL-SA", "childMCQ-inter"), avg = v("HierVL-Avg", "childMCQ-inter");
    report(6, "no catastrophic forgetting", std::abs(sa - co) <= 5 && std::abs(avg - co) <= 5,
           "childMCQ-inter ChildOnly " + fmt(co, 1) + ", HierVL-SA " + fmt(sa, 1) + ", HierVL-Avg " + fmt(avg, 1));
  }
  {
    const double co_inter = v("ChildOnly", "childMCQ-inter"), wj_inter = v("WoJoint", "childMCQ-inter");
    const double co_intra = v("ChildOnly", "childMCQ-intra"), wj_intra = v("WoJoint", "childMCQ-intra");
    report(7, "w/o joint degradation", co_inter - wj_inter >= 10 && co_intra - wj_intra >= 10,
           "childMCQ-inter WoJoint " + fmt(wj_inter, 1) + " vs ChildOnly " + fmt(co_inter, 1) +
               "; intra " + fmt(wj_intra, 1) + " vs " + fmt(co_intra, 1));
  }
  {
    const double sa = v("HierVL-SA", "summaryMCQ"), ws = v("WoSumm", "summaryMCQ");
    report(8, "w/o summary gap", sa - ws >= 15,
           "summaryMCQ WoSumm " + fmt(ws, 1) + " vs HierVL-SA " + fmt(sa, 1));
  }
}

void determinism(const fs::path& dir) {
  pipeline::RunConfig cfg;
  cfg.train.total_steps = 60;
  cfg.eval.mcq_items = 100;
  bool ok = true;
  std::size_t compared = 0;
  try {
    pipeline::reproduce(cfg, (dir / "a").string());
    pipeline::reproduce(cfg, (dir / "b").string());
    ok = read_file((dir / "a" / "table.json").string()) == read_file((dir / "b" / "table.json").string());
    for (const auto& entry : fs::directory_iterator(dir / "a" / "runs")) {
      const auto mode = entry.path().filename();
      for (auto f : {"metrics.jsonl", "final.bin", "eval.json"}) {
        ok = ok && read_file((entry.path() / f).string()) == read_file((dir / "b" / "runs" / mode / f).string());
        ++compared;
      }
    }
  } catch (const std::exception& e) {
    report(9, "determinism", false, e.what());
    return;
  }
  ok = ok && compared == 21;
  report(9, "determinism", ok,
         "two 60-step reproduce runs: table.json plus " + std::to_string(compared) +
             " per-mode files (metrics, checkpoints, reports) " + (ok ? "byte-identical" : "differ"));
}

void retrieval_correctness() {
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u;
  std::bernoulli_distribution coin(0.25);
  std::uniform_int_distribution<int> coarse(0, 4);
  double worst = 0;
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<std::vector<double>> s(20, std::vector<double>(20)), rel = s;
    for (auto& row : s)
      for (auto& x : row) x = inst % 2 ? u(rng) : coarse(rng) / 4.0;  // odd instances have many ties
    for (auto& row : rel) {
      for (auto& x : row) x = coin(rng) ? 1.0 : 0.0;
      row[std::uniform_int_distribution<std::size_t>(0, 19)(rng)] = 1.0;
    }
    double ref_map = 0, ref_ndcg = 0;
    for (std::size_t q = 0; q < 20; ++q) {
      // rank of item i: 1 + #higher scores + #equal scores at smaller index
      std::vector<std::size_t> rank(20);
      for (std::size_t i = 0; i < 20; ++i) {
        rank[i] = 1;
        for (std::size_t j = 0; j < 20; ++j) rank[i] += s[q][j] > s[q][i] || (s[q][j] == s[q][i] && j < i);
      }
      double ap = 0, nrel = 0, dcg = 0;
      for (std::size_t i = 0; i < 20; ++i) {
        if (rel[q][i] <= 0) continue;
        nrel += 1;
        double above = 0;
        for (std::size_t j = 0; j < 20; ++j) above += rel[q][j] > 0 && rank[j] <= rank[i];
        ap += above / double(rank[i]);
        dcg += rel[q][i] / std::log2(double(rank[i]) + 1);
      }
      double idcg = 0;
      for (std::size_t r = 1; r <= std::size_t(nrel); ++r) idcg += 1 / std::log2(double(r) + 1);
      ref_map += ap / nrel / 20;
      ref_ndcg += dcg / idcg / 20;
    }
    const auto m = eval::rank_metrics(s, rel);
    worst = std::max({worst, std::abs(m.map - ref_map), std::abs(m.ndcg - ref_ndcg)});
  }
  std::ostringstream d;
  d << "50 instances of 20x20, max |diff| " << worst;
  report(10, "retrieval metric correctness", worst <= 1e-12, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "hiervl_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  gradient_integrity();
  loss_oracles();
  permutation_dichotomy();
  table_criteria(work / "default");
  determinism(work / "determinism");
  retrieval_correctness();
  std::cout << (failures == 0 ? "all 10 criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
