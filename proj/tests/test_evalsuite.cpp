#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "hiervl/errors.hpp"
#include "hiervl/evalsuite.hpp"
#include "hiervl/hashing.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace hiervl;
using namespace hiervl::eval;
namespace fs = std::filesystem;

namespace {

corpus::Corpus eval_corpus(bool clean = false, std::size_t videos = 40) {
  corpus::GeneratorConfig g;
  g.split = "eval";
  g.num_videos = videos;
  if (clean) {
    g.frame_noise = 0;
    g.token_noise = 0;
  }
  return corpus::generate_synthetic(g);
}

EmbeddingVec one_hot(std::size_t i, std::size_t dim) {
  std::vector<Scalar> v(dim, 0);
  v.at(i) = 1;
  return EmbeddingVec(std::move(v));
}

// Embeds everything by its ground-truth label.
class LabelOracle final : public McqEncoder {
 public:
  explicit LabelOracle(const corpus::Corpus& c) : c_(c) {}
  EmbeddingVec narration(std::size_t v, std::size_t clip) override { return action(v, clip); }
  EmbeddingVec clip(std::size_t v, std::size_t clip) override { return action(v, clip); }
  EmbeddingVec summary(std::size_t v) override { return intent(v); }
  EmbeddingVec video(std::size_t v, const std::vector<std::size_t>&) override { return intent(v); }

 private:
  EmbeddingVec action(std::size_t v, std::size_t c) {
    return one_hot(std::size_t(c_.videos[v].clips[c].action_label), 64);
  }
  EmbeddingVec intent(std::size_t v) { return one_hot(std::size_t(c_.videos[v].latent_intent_id), 64); }
  const corpus::Corpus& c_;
};

train::TrainConfig avg_config() {
  train::TrainConfig c;
  c.mode = train::Mode::HierVL_Avg;
  return c;
}

double brute_force_ap(const std::vector<double>& s, const std::vector<double>& rel) {
  // rank of item i = 1 + items scoring higher + equal-scoring items with a lower index
  double sum = 0, hits = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ranked;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t rank = 1;
    for (std::size_t j = 0; j < s.size(); ++j) rank += s[j] > s[i] || (s[j] == s[i] && j < i);
    ranked.push_back({rank, i});
  }
  std::sort(ranked.begin(), ranked.end());
  for (const auto& [rank, i] : ranked) {
    if (rel[i] > 0) {
      hits += 1;
      sum += hits / double(rank);
    }
  }
  return hits > 0 ? sum / hits : 0;
}

}  // namespace

TEST_CASE("child MCQ items are well formed") {
  auto c = eval_corpus();
  std::mt19937_64 rng(1);
  for (auto split : {SplitTag::Inter, SplitTag::Intra}) {
    auto items = build_child_mcq(c, 300, split, rng);
    REQUIRE(items.size() == 300);
    for (const auto& it : items) {
      CHECK(it.answer_index < 5);
      const auto& ans = it.candidates[it.answer_index];
      CHECK(ans.video == it.prompt_video);
      CHECK(ans.clips == std::vector<std::size_t>{it.prompt_clip});
      std::set<std::pair<std::size_t, std::size_t>> ids;
      std::set<std::size_t> videos;
      for (const auto& cand : it.candidates) {
        ids.insert({cand.video, cand.clips.at(0)});
        videos.insert(cand.video);
      }
      CHECK(ids.size() == 5);
      if (split == SplitTag::Intra) CHECK(videos.size() == 1);
      if (split == SplitTag::Inter) CHECK(videos.size() == 5);
    }
  }
  CHECK_THROWS_AS(build_child_mcq(c, 1, SplitTag::None, rng), ContractError);
  auto tiny = eval_corpus(false, 4);
  CHECK_THROWS_AS(build_child_mcq(tiny, 1, SplitTag::Inter, rng), ContractError);
}

TEST_CASE("answer positions are uniform") {
  auto c = eval_corpus();
  std::mt19937_64 rng(2);
  std::vector<std::vector<McqItem>> sets = {build_child_mcq(c, 1000, SplitTag::Inter, rng),
                                            build_summary_mcq(c, 1000, 16, rng),
                                            build_shuffle_mcq(c, 1000, 16, rng)};
  for (const auto& items : sets) {
    std::array<double, 5> freq{};
    for (const auto& it : items) freq[it.answer_index] += 1.0 / 1000;
    for (double f : freq) {
      CHECK(f >= 0.16);
      CHECK(f <= 0.24);
    }
  }
}

TEST_CASE("summary MCQ items are well formed") {
  auto c = eval_corpus();
  std::mt19937_64 rng(3);
  for (const auto& it : build_summary_mcq(c, 300, 16, rng)) {
    CHECK(it.candidates[it.answer_index].video == it.prompt_video);
    std::set<std::size_t> videos;
    for (const auto& cand : it.candidates) {
      videos.insert(cand.video);
      CHECK(cand.clips == model::sample_uniform(c.videos[cand.video].clips.size(), 16));
      if (cand.video != it.prompt_video)
        CHECK(c.videos[cand.video].latent_intent_id != c.videos[it.prompt_video].latent_intent_id);
    }
    CHECK(videos.size() == 5);
  }
}

TEST_CASE("shuffle MCQ items are well formed") {
  auto c = eval_corpus();
  std::mt19937_64 rng(4);
  for (const auto& it : build_shuffle_mcq(c, 300, 16, rng)) {
    const auto& original = it.candidates[it.answer_index].clips;
    CHECK(std::is_sorted(original.begin(), original.end()));
    auto sorted = original;
    std::set<std::vector<std::size_t>> orders;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& cand = it.candidates[i];
      CHECK(cand.video == it.prompt_video);
      auto ms = cand.clips;
      std::sort(ms.begin(), ms.end());
      CHECK(ms == sorted);
      if (i != it.answer_index) CHECK(cand.clips != original);
      orders.insert(cand.clips);
    }
    CHECK(orders.size() == 5);
  }

  // Two clips admit only one reordering, so four distinct ones cannot exist.
  corpus::Corpus tiny = eval_corpus(false, 5);
  for (auto& v : tiny.videos) v.clips.resize(3);
  CHECK_THROWS_AS(build_shuffle_mcq(tiny, 5, 2, rng), ContractError);
}

TEST_CASE("a label oracle scores 100 on child and summary MCQ of a noise-free corpus") {
  auto c = eval_corpus(true);
  LabelOracle oracle(c);
  std::mt19937_64 rng(5);
  auto inter = score_mcq("inter", build_child_mcq(c, 500, SplitTag::Inter, rng), oracle, rng);
  auto intra = score_mcq("intra", build_child_mcq(c, 500, SplitTag::Intra, rng), oracle, rng);
  auto summary = score_mcq("summary", build_summary_mcq(c, 500, 16, rng), oracle, rng);
  CHECK(inter.value == 100.0);
  CHECK(intra.value == 100.0);
  CHECK(summary.value == 100.0);
  CHECK(inter.chance == 20.0);
  CHECK(inter.tie_count == 0);
  CHECK(inter.splits.at("inter") == 100.0);
}

TEST_CASE("averaging scores shuffle MCQ at chance through counted ties") {
  auto c = eval_corpus();
  auto model = train::HierModel::create(avg_config());
  ModelEncoder enc(model, c);
  std::mt19937_64 rng(6);
  auto items = build_shuffle_mcq(c, 500, 16, rng);
  auto r = score_mcq("shuffle", items, enc, rng);
  CHECK(r.tie_count == 500);
  CHECK(r.value >= 14.0);
  CHECK(r.value <= 26.0);

  // An order-aware aggregator forced to average at inference behaves the same.
  auto sa = train::HierModel::create(train::TrainConfig{});
  ModelEncoder forced(sa, c, true);
  CHECK(score_mcq("shuffle", items, forced, rng).tie_count == 500);
}

TEST_CASE("random-init encoders score near chance") {
  auto c = eval_corpus();
  auto model = train::HierModel::create(train::TrainConfig{});
  EvalConfig cfg;
  auto reports = evaluate_mcq(model, c, cfg);
  reports.pop_back();  // shuffleMCQ probes the aggregator, not the encoders
  for (const auto& r : reports) {
    INFO(r.task << " " << r.value);
    CHECK(r.item_count == 500);
    CHECK(r.value >= 10.0);
    CHECK(r.value <= 30.0);
  }
}

TEST_CASE("MCQ accuracy does not depend on candidate order") {
  auto c = eval_corpus();
  auto model = train::HierModel::create(train::TrainConfig{});
  ModelEncoder enc(model, c);
  std::mt19937_64 rng(7);
  auto items = build_child_mcq(c, 200, SplitTag::Inter, rng);
  auto base = score_mcq("inter", items, enc, rng);
  for (auto& it : items) {
    std::array<std::size_t, 5> perm = {0, 1, 2, 3, 4};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto old = it.candidates;
    for (std::size_t i = 0; i < 5; ++i) it.candidates[i] = old[perm[i]];
    it.answer_index = std::size_t(std::find(perm.begin(), perm.end(), it.answer_index) - perm.begin());
  }
  CHECK(score_mcq("inter", items, enc, rng).value == base.value);
}

TEST_CASE("retrieval examples") {
  CHECK(average_precision({0.9, 0.1}, {0, 1}) == 0.5);
  CHECK(average_precision({0.9, 0.5, 0.1}, {1, 1, 0}) == 1.0);
  CHECK(ndcg({0.9, 0.5, 0.1}, {1, 1, 0}) == doctest::Approx(1.0).epsilon(1e-15));
  auto perfect = rank_metrics({{3, 2, 1}, {1, 3, 2}}, {{1, 0, 0}, {0, 1, 0}});
  CHECK(perfect.map == 1.0);
  CHECK(perfect.ndcg == doctest::Approx(1.0).epsilon(1e-15));
  // ties rank by ascending index
  CHECK(average_precision({0.5, 0.5}, {0, 1}) == 0.5);
  CHECK(average_precision({0.5, 0.5}, {1, 0}) == 1.0);
  CHECK(ndcg({0.2, 0.9}, {1, 0}) == doctest::Approx(1 / std::log2(3.0)).epsilon(1e-15));
  CHECK_THROWS_AS(average_precision({1, 2}, {1}), DimensionError);
}

TEST_CASE("random scores give the harmonic mAP baseline") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u;
  double total = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> s(100, std::vector<double>(100)), rel = s;
    double brute = 0;
    for (std::size_t q = 0; q < 100; ++q) {
      for (auto& x : s[q]) x = u(rng);
      rel[q][std::uniform_int_distribution<std::size_t>(0, 99)(rng)] = 1;
      brute += brute_force_ap(s[q], rel[q]) / 100;
    }
    const double map = rank_metrics(s, rel).map;
    CHECK(std::abs(map - brute) < 1e-12);
    total += map / trials;
  }
  double harmonic = 0;
  for (int r = 1; r <= 100; ++r) harmonic += 1.0 / r;
  CHECK(std::abs(total - harmonic / 100) < 0.02);
}

TEST_CASE("retrieval metrics average both directions") {
  std::mt19937_64 rng(9);
  std::vector<EmbeddingVec> q, g;
  for (int i = 0; i < 6; ++i) {
    q.emplace_back(testing_support::unit_vector(rng, 4));
    g.emplace_back(testing_support::unit_vector(rng, 4));
  }
  std::vector<std::vector<double>> rel(6, std::vector<double>(6, 0)), relt = rel, s = rel, st = rel;
  for (int i = 0; i < 6; ++i) rel[i][(i * 5) % 6] = rel[i][i] = 1;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      s[i][j] = st[j][i] = model::similarity(q[i], g[j]);
      relt[j][i] = rel[i][j];
    }
  auto m = retrieval_metrics(q, g, rel);
  auto f = rank_metrics(s, rel), b = rank_metrics(st, relt);
  CHECK(m.map == doctest::Approx((f.map + b.map) / 2).epsilon(1e-15));
  CHECK(m.ndcg == doctest::Approx((f.ndcg + b.ndcg) / 2).epsilon(1e-15));
}

TEST_CASE("linear probe: separable data is solved, shuffled labels stay at chance") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> d;
  auto make = [&](std::size_t n, std::vector<std::vector<Scalar>>& x, std::vector<int>& y) {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = int(i % 4);
      std::vector<Scalar> f(8);
      for (auto& v : f) v = Scalar(0.1 * d(rng));
      f[std::size_t(label)] += 3;
      x.push_back(f);
      y.push_back(label);
    }
  };
  std::vector<std::vector<Scalar>> tx, ex;
  std::vector<int> ty, ey;
  make(400, tx, ty);
  make(2000, ex, ey);
  CHECK(linear_probe(tx, ty, ex, ey, 4) == 100.0);
  std::shuffle(ty.begin(), ty.end(), rng);
  std::shuffle(ey.begin(), ey.end(), rng);
  const double chance = linear_probe(tx, ty, ex, ey, 4);
  CHECK(std::abs(chance - 25.0) <= 5.0);
  ty[0] = 4;
  CHECK_THROWS_AS(linear_probe(tx, ty, ex, ey, 4), ContractError);
}

TEST_CASE("export writes one deterministic row per clip or video") {
  auto c = eval_corpus(false, 10);
  auto model = train::HierModel::create(train::TrainConfig{});
  auto dir = fs::temp_directory_path() / "hiervl_export";
  fs::create_directories(dir);
  const auto child = (dir / "child.jsonl").string(), parent = (dir / "parent.jsonl").string();
  export_embeddings(c, model, ExportLevel::Child, 16, child);
  export_embeddings(c, model, ExportLevel::Parent, 16, parent);
  auto count_rows = [](const std::string& path, const char* level, std::size_t dim) {
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("level") == level);
      CHECK(j.at("vector").size() == dim);
      ++n;
    }
    return n;
  };
  CHECK(count_rows(child, "child", 32) == c.clip_count());
  CHECK(count_rows(parent, "parent", 32) == c.videos.size());
  const auto first = read_file(child);
  export_embeddings(c, model, ExportLevel::Child, 16, child);
  CHECK(read_file(child) == first);
  CHECK(first.rfind("{\"id\":\"eval-000000/0\"", 0) == 0);
}

TEST_CASE("evaluation leaves the model untouched and reports every task") {
  auto train_c = corpus::generate_synthetic(corpus::GeneratorConfig{});
  auto c = eval_corpus();
  auto model = train::HierModel::create(train::TrainConfig{});
  auto before = model.all_parameters();
  std::vector<std::vector<Scalar>> snap;
  for (const auto& t : before.tensors) snap.emplace_back(t.data().begin(), t.data().end());
  EvalConfig cfg;
  cfg.mcq_items = 100;
  cfg.probe.epochs = 20;
  auto reports = evaluate_all(model, &train_c, c, cfg);
  std::vector<std::string> tasks;
  for (const auto& r : reports) tasks.push_back(r.task);
  CHECK(tasks == std::vector<std::string>{"childMCQ-inter", "childMCQ-intra", "summaryMCQ", "shuffleMCQ",
                                          "retrieval-child", "linear-probe-intent"});
  auto after = model.all_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(std::vector<Scalar>(after.tensors[i].data().begin(), after.tensors[i].data().end()) == snap[i]);
    CHECK(!after.tensors[i].has_grad());
  }
  auto again = evaluate_all(model, &train_c, c, cfg);
  for (std::size_t i = 0; i < reports.size(); ++i) CHECK(report_to_json(again[i]) == report_to_json(reports[i]));
}

TEST_CASE("the intent probe on trained features beats random-init features by 20 points") {
  auto train_c = corpus::generate_synthetic(corpus::GeneratorConfig{});
  auto c = eval_corpus();
  train::TrainConfig cfg;
  cfg.encoder = testing_support::small_encoder();
  cfg.aggregator.sa_model_dim = 16;
  cfg.aggregator.sa_heads = 2;
  cfg.aggregator.sa_mlp_dim = 32;
  cfg.aggregator.sa_layers = 1;
  cfg.total_steps = 1000;
  auto trained = train::model_from_checkpoint(train::run_schedule(cfg, train_c).final_checkpoint);
  auto random = train::HierModel::create(cfg);
  EvalConfig ec;
  ec.mcq_items = 20;
  const double t = evaluate_all(trained, &train_c, c, ec).back().value;
  const double r = evaluate_all(random, &train_c, c, ec).back().value;
  INFO("trained " << t << " random " << r);
  CHECK(t >= r + 20);
}
