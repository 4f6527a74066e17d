#include "hiervl/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hiervl/errors.hpp"
#include "json.hpp"

namespace hiervl::eval {

using json = nlohmann::ordered_json;
using ad::Tensor;

std::string to_string(McqTask t) {
  switch (t) {
    case McqTask::Child: return "child";
    case McqTask::Summary: return "summary";
    case McqTask::Shuffle: return "shuffle";
  }
  return "?";
}

std::string to_string(SplitTag s) {
  switch (s) {
    case SplitTag::Inter: return "inter";
    case SplitTag::Intra: return "intra";
    case SplitTag::None: return "none";
  }
  return "?";
}

// ---- model-backed encoder ----------------------------------------------------

ModelEncoder::ModelEncoder(const train::HierModel& model, const corpus::Corpus& corpus,
                           bool average_at_inference)
    : model_(model), corpus_(corpus), use_average_(average_at_inference) {
  model::AggregatorConfig avg = model.agg.config();
  avg.kind = model::AggregatorKind::Average;
  std::mt19937_64 unused(0);
  average_ = model::Aggregator(avg, model.clip.config().embed_dim, unused);
}

namespace {

std::vector<EmbeddingVec> rows_of(const Tensor& t) {
  std::vector<EmbeddingVec> out;
  for (std::size_t r = 0; r < t.dim(0); ++r) out.push_back(EmbeddingVec::from_row(t, r));
  return out;
}

const corpus::VideoRecord& video_at(const corpus::Corpus& c, std::size_t v) {
  if (v >= c.videos.size()) throw ContractError("eval: video index out of range");
  return c.videos[v];
}

}  // namespace

const std::vector<EmbeddingVec>& ModelEncoder::clips_of(std::size_t video) {
  auto it = clip_cache_.find(video);
  if (it != clip_cache_.end()) return it->second;
  std::vector<model::ClipInput> inputs;
  for (const auto& c : video_at(corpus_, video).clips) inputs.push_back(c.frames);
  return clip_cache_[video] = rows_of(model_.clip.forward(inputs).detach());
}

const std::vector<EmbeddingVec>& ModelEncoder::narrations_of(std::size_t video) {
  auto it = narration_cache_.find(video);
  if (it != narration_cache_.end()) return it->second;
  std::vector<model::TextInput> inputs;
  for (const auto& c : video_at(corpus_, video).clips) inputs.push_back(c.narration);
  return narration_cache_[video] = rows_of(model_.text.forward(inputs).detach());
}

EmbeddingVec ModelEncoder::narration(std::size_t video, std::size_t clip) {
  return narrations_of(video).at(clip);
}

EmbeddingVec ModelEncoder::clip(std::size_t video, std::size_t clip) { return clips_of(video).at(clip); }

EmbeddingVec ModelEncoder::summary(std::size_t video) {
  auto it = summary_cache_.find(video);
  if (it != summary_cache_.end()) return it->second;
  return summary_cache_[video] = model_.text.encode(video_at(corpus_, video).summary);
}

EmbeddingVec ModelEncoder::video(std::size_t video, const std::vector<std::size_t>& clip_order) {
  const auto& clips = clips_of(video);
  model::FeatureSequence seq;
  for (std::size_t i : clip_order) {
    seq.features.push_back(clips.at(i));
    seq.clip_indices.push_back(i);
  }
  return use_average_ ? average_.aggregate(seq) : model_.agg.aggregate(seq);
}

// ---- item builders -----------------------------------------------------------

namespace {

constexpr std::size_t kMaxAttempts = 1000;

void place_answer(McqItem& item, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pos(0, 4);
  item.answer_index = pos(rng);
  std::swap(item.candidates[0], item.candidates[item.answer_index]);
}

std::size_t pick(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

std::vector<McqItem> build_child_mcq(const corpus::Corpus& corpus, std::size_t n_items, SplitTag split,
                                     std::mt19937_64& rng) {
  const auto& videos = corpus.videos;
  if (split == SplitTag::None) throw ContractError("child MCQ: split must be inter or intra");
  std::vector<McqItem> items;
  if (split == SplitTag::Inter) {
    if (videos.size() < 5) throw ContractError("child MCQ inter: needs at least 5 videos");
    for (std::size_t n = 0; n < n_items; ++n) {
      McqItem item;
      item.task = McqTask::Child;
      item.split = split;
      item.prompt_video = pick(videos.size(), rng);
      item.prompt_clip = pick(videos[item.prompt_video].clips.size(), rng);
      const int label = videos[item.prompt_video].clips[item.prompt_clip].action_label;
      item.candidates[0] = {item.prompt_video, {item.prompt_clip}};
      std::vector<std::size_t> used{item.prompt_video};
      std::size_t filled = 1;
      for (std::size_t attempt = 0; filled < 5; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw ContractError("child MCQ inter: cannot find 4 distractors with a different action");
        }
        std::size_t u = pick(videos.size(), rng);
        if (std::find(used.begin(), used.end(), u) != used.end()) continue;
        std::size_t c = pick(videos[u].clips.size(), rng);
        if (videos[u].clips[c].action_label == label) continue;
        used.push_back(u);
        item.candidates[filled++] = {u, {c}};
      }
      place_answer(item, rng);
      items.push_back(std::move(item));
    }
    return items;
  }

  std::vector<std::size_t> eligible;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    if (videos[v].clips.size() >= 5) eligible.push_back(v);
  }
  if (eligible.empty()) throw ContractError("child MCQ intra: no video has 5 clips");
  for (std::size_t n = 0; n < n_items; ++n) {
    McqItem item;
    item.task = McqTask::Child;
    item.split = split;
    std::vector<std::size_t> pool;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw ContractError("child MCQ intra: no video has 4 clips with a different action");
      }
      item.prompt_video = eligible[pick(eligible.size(), rng)];
      const auto& clips = videos[item.prompt_video].clips;
      item.prompt_clip = pick(clips.size(), rng);
      pool.clear();
      for (std::size_t c = 0; c < clips.size(); ++c) {
        if (clips[c].action_label != clips[item.prompt_clip].action_label) pool.push_back(c);
      }
      if (pool.size() >= 4) break;
    }
    item.candidates[0] = {item.prompt_video, {item.prompt_clip}};
    auto chosen = corpus::sample_distinct(pool.size(), 4, rng);
    for (std::size_t i = 0; i < 4; ++i) item.candidates[i + 1] = {item.prompt_video, {pool[chosen[i]]}};
    place_answer(item, rng);
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<McqItem> build_summary_mcq(const corpus::Corpus& corpus, std::size_t n_items,
                                       std::size_t k, std::mt19937_64& rng) {
  const auto& videos = corpus.videos;
  if (videos.size() < 5) throw ContractError("summary MCQ: needs at least 5 videos");
  std::vector<McqItem> items;
  for (std::size_t n = 0; n < n_items; ++n) {
    McqItem item;
    item.task = McqTask::Summary;
    std::vector<std::size_t> pool;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw ContractError("summary MCQ: fewer than 4 videos with a different intent");
      }
      item.prompt_video = pick(videos.size(), rng);
      pool.clear();
      for (std::size_t u = 0; u < videos.size(); ++u) {
        if (videos[u].latent_intent_id != videos[item.prompt_video].latent_intent_id) pool.push_back(u);
      }
      if (pool.size() >= 4) break;
    }
    auto cand = [&](std::size_t v) {
      return Candidate{v, model::sample_uniform(videos[v].clips.size(), k)};
    };
    item.candidates[0] = cand(item.prompt_video);
    auto chosen = corpus::sample_distinct(pool.size(), 4, rng);
    for (std::size_t i = 0; i < 4; ++i) item.candidates[i + 1] = cand(pool[chosen[i]]);
    place_answer(item, rng);
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<McqItem> build_shuffle_mcq(const corpus::Corpus& corpus, std::size_t n_items,
                                       std::size_t k, std::mt19937_64& rng) {
  const auto& videos = corpus.videos;
  std::vector<std::size_t> eligible;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    if (videos[v].clips.size() >= 3) eligible.push_back(v);
  }
  if (eligible.empty()) throw ContractError("shuffle MCQ: no video has 3 clips");
  std::vector<McqItem> items;
  for (std::size_t n = 0; n < n_items; ++n) {
    McqItem item;
    item.task = McqTask::Shuffle;
    item.prompt_video = eligible[pick(eligible.size(), rng)];
    const auto order = model::sample_uniform(videos[item.prompt_video].clips.size(), k);
    item.candidates[0] = {item.prompt_video, order};
    std::size_t filled = 1;
    for (std::size_t attempt = 0; filled < 5; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw ContractError("shuffle MCQ: cannot draw 4 distinct reorderings of " +
                            videos[item.prompt_video].video_id);
      }
      auto shuffled = order;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      bool seen = false;
      for (std::size_t i = 0; i < filled; ++i) seen = seen || item.candidates[i].clips == shuffled;
      if (!seen) item.candidates[filled++] = {item.prompt_video, std::move(shuffled)};
    }
    place_answer(item, rng);
    items.push_back(std::move(item));
  }
  return items;
}

// ---- scoring -----------------------------------------------------------------

std::string report_to_json(const EvalReport& r) {
  json j;
  j["task"] = r.task;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["item_count"] = r.item_count;
  j["chance"] = r.chance;
  j["tie_count"] = r.tie_count;
  j["splits"] = json::object();
  for (const auto& [k, v] : r.splits) j["splits"][k] = v;
  for (const auto& [k, v] : r.extra) j[k] = v;
  return j.dump();
}

EvalReport score_mcq(const std::string& task, const std::vector<McqItem>& items, McqEncoder& encoder,
                     std::mt19937_64& rng) {
  EvalReport report;
  report.task = task;
  report.item_count = items.size();
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_split;  // correct, total
  std::size_t correct = 0;
  for (const auto& item : items) {
    if (item.answer_index >= 5) throw ContractError("MCQ item: answer_index out of range");
    const EmbeddingVec prompt = item.task == McqTask::Child
                                    ? encoder.narration(item.prompt_video, item.prompt_clip)
                                    : encoder.summary(item.prompt_video);
    std::array<Scalar, 5> sims{};
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& c = item.candidates[i];
      const EmbeddingVec e = item.task == McqTask::Child ? encoder.clip(c.video, c.clips.at(0))
                                                         : encoder.video(c.video, c.clips);
      sims[i] = model::similarity(prompt, e);
    }
    const Scalar best = *std::max_element(sims.begin(), sims.end());
    std::vector<std::size_t> tied;
    for (std::size_t i = 0; i < 5; ++i) {
      if (sims[i] == best) tied.push_back(i);
    }
    std::size_t choice = tied[0];
    if (tied.size() > 1) {
      ++report.tie_count;
      choice = tied[pick(tied.size(), rng)];
    }
    const bool ok = choice == item.answer_index;
    correct += ok;
    auto& s = per_split[to_string(item.split)];
    s.first += ok;
    s.second += 1;
  }
  report.value = items.empty() ? 0.0 : 100.0 * double(correct) / double(items.size());
  for (const auto& [name, c] : per_split) report.splits[name] = 100.0 * double(c.first) / double(c.second);
  return report;
}

// ---- retrieval ---------------------------------------------------------------

namespace {

std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void check_sizes(const std::vector<double>& scores, const std::vector<double>& relevance) {
  if (scores.size() != relevance.size()) {
    throw DimensionError("retrieval: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(relevance.size()) + " relevance entries");
  }
}

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<double>& relevance) {
  check_sizes(scores, relevance);
  const auto order = ranking(scores);
  double hits = 0, sum = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (relevance[order[r]] > 0) {
      hits += 1;
      sum += hits / double(r + 1);
    }
  }
  return hits > 0 ? sum / hits : 0.0;
}

double ndcg(const std::vector<double>& scores, const std::vector<double>& relevance) {
  check_sizes(scores, relevance);
  const auto order = ranking(scores);
  double dcg = 0;
  for (std::size_t r = 0; r < order.size(); ++r) dcg += relevance[order[r]] / std::log2(double(r) + 2.0);
  std::vector<double> ideal = relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0;
  for (std::size_t r = 0; r < ideal.size(); ++r) idcg += ideal[r] / std::log2(double(r) + 2.0);
  return idcg > 0 ? dcg / idcg : 0.0;
}

RetrievalMetrics rank_metrics(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<double>>& relevance) {
  if (scores.size() != relevance.size()) throw DimensionError("retrieval: query count mismatch");
  RetrievalMetrics m;
  if (scores.empty()) return m;
  for (std::size_t q = 0; q < scores.size(); ++q) {
    m.map += average_precision(scores[q], relevance[q]);
    m.ndcg += ndcg(scores[q], relevance[q]);
  }
  m.map /= double(scores.size());
  m.ndcg /= double(scores.size());
  return m;
}

RetrievalMetrics retrieval_metrics(const std::vector<EmbeddingVec>& queries,
                                   const std::vector<EmbeddingVec>& gallery,
                                   const std::vector<std::vector<double>>& relevance) {
  const std::size_t q = queries.size(), g = gallery.size();
  if (relevance.size() != q) throw DimensionError("retrieval: relevance rows != query count");
  std::vector<std::vector<double>> s(q, std::vector<double>(g));
  std::vector<std::vector<double>> st(g, std::vector<double>(q));
  std::vector<std::vector<double>> rt(g, std::vector<double>(q));
  for (std::size_t i = 0; i < q; ++i) {
    if (relevance[i].size() != g) throw DimensionError("retrieval: relevance cols != gallery count");
    for (std::size_t j = 0; j < g; ++j) {
      s[i][j] = st[j][i] = double(model::similarity(queries[i], gallery[j]));
      rt[j][i] = relevance[i][j];
    }
  }
  const auto fwd = rank_metrics(s, relevance);
  const auto bwd = rank_metrics(st, rt);
  return {(fwd.map + bwd.map) / 2, (fwd.ndcg + bwd.ndcg) / 2};
}

// ---- linear probe ------------------------------------------------------------

namespace {

Tensor feature_matrix(const std::vector<std::vector<Scalar>>& x, std::size_t dim) {
  std::vector<Scalar> flat;
  flat.reserve(x.size() * dim);
  for (const auto& row : x) {
    if (row.size() != dim) throw DimensionError("linear probe: ragged features");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor::from({x.size(), dim}, std::move(flat));
}

}  // namespace

double linear_probe(const std::vector<std::vector<Scalar>>& train_x, const std::vector<int>& train_y,
                    const std::vector<std::vector<Scalar>>& eval_x, const std::vector<int>& eval_y,
                    std::size_t num_classes, const ProbeConfig& config) {
  if (train_x.empty() || eval_x.empty()) throw ContractError("linear probe: empty split");
  if (train_x.size() != train_y.size() || eval_x.size() != eval_y.size()) {
    throw DimensionError("linear probe: feature/label count mismatch");
  }
  const std::size_t dim = train_x[0].size();
  const std::size_t n = train_x.size();
  for (int y : train_y) {
    if (y < 0 || std::size_t(y) >= num_classes) throw ContractError("linear probe: label out of range");
  }
  Tensor x = feature_matrix(train_x, dim);
  ad::Mask onehot(n * num_classes, 0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * num_classes + std::size_t(train_y[i])] = 1;

  std::mt19937_64 rng(config.seed);
  ad::ParamList params;
  params.add("weight", Tensor::from({dim, num_classes}, model::normal_values(dim * num_classes, 0.01, rng), true));
  params.add("bias", Tensor::zeros({num_classes}, true));
  ad::AdamWConfig opt;
  opt.lr = config.lr;
  opt.weight_decay = config.weight_decay;
  auto state = ad::make_adamw_state(params, opt);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    Tensor logits = ad::add(ad::matmul(x, params.tensors[0]), params.tensors[1]);
    Tensor loss = ad::mean_all(ad::sub(ad::logsumexp(logits), ad::masked_logsumexp(logits, onehot)));
    ad::backward(loss);
    ad::adamw_step(params, state);
    params.zero_grad();
  }
  Tensor logits = ad::add(ad::matmul(feature_matrix(eval_x, dim), params.tensors[0]), params.tensors[1]);
  auto v = logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_x.size(); ++i) {
    auto row = v.subspan(i * num_classes, num_classes);
    auto best = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
    correct += int(best) == eval_y[i];
  }
  return 100.0 * double(correct) / double(eval_x.size());
}

// ---- export ------------------------------------------------------------------

void export_embeddings(const corpus::Corpus& corpus, const train::HierModel& model, ExportLevel level,
                       std::size_t k, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot write embeddings to " + path);
  ModelEncoder enc(model, corpus);
  auto row = [&](const std::string& id, int label, const EmbeddingVec& e) {
    json j;
    j["id"] = id;
    j["level"] = level == ExportLevel::Child ? "child" : "parent";
    j["label"] = label;
    j["vector"] = e.values();
    out << j.dump() << '\n';
  };
  for (std::size_t v = 0; v < corpus.videos.size(); ++v) {
    const auto& video = corpus.videos[v];
    if (level == ExportLevel::Parent) {
      row(video.video_id, video.latent_intent_id, enc.video(v, model::sample_uniform(video.clips.size(), k)));
      continue;
    }
    for (std::size_t c = 0; c < video.clips.size(); ++c) {
      row(video.video_id + "/" + std::to_string(video.clips[c].clip_index), video.clips[c].action_label,
          enc.clip(v, c));
    }
  }
}

// ---- full evaluation ---------------------------------------------------------

namespace {

std::mt19937_64 task_rng(std::uint64_t seed, std::uint32_t task) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), task};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<EvalReport> evaluate_mcq(const train::HierModel& model, const corpus::Corpus& eval_corpus,
                                     const EvalConfig& config) {
  ModelEncoder enc(model, eval_corpus, config.average_at_inference);
  std::vector<EvalReport> out;
  {
    auto rng = task_rng(config.seed, 1);
    auto items = build_child_mcq(eval_corpus, config.mcq_items, SplitTag::Inter, rng);
    out.push_back(score_mcq("childMCQ-inter", items, enc, rng));
  }
  {
    auto rng = task_rng(config.seed, 2);
    auto items = build_child_mcq(eval_corpus, config.mcq_items, SplitTag::Intra, rng);
    out.push_back(score_mcq("childMCQ-intra", items, enc, rng));
  }
  {
    auto rng = task_rng(config.seed, 3);
    auto items = build_summary_mcq(eval_corpus, config.mcq_items, config.clips_per_video, rng);
    out.push_back(score_mcq("summaryMCQ", items, enc, rng));
  }
  {
    auto rng = task_rng(config.seed, 4);
    auto items = build_shuffle_mcq(eval_corpus, config.mcq_items, config.clips_per_video, rng);
    out.push_back(score_mcq("shuffleMCQ", items, enc, rng));
  }
  return out;
}

std::vector<EvalReport> evaluate_all(const train::HierModel& model, const corpus::Corpus* train_corpus,
                                     const corpus::Corpus& eval_corpus, const EvalConfig& config) {
  auto out = evaluate_mcq(model, eval_corpus, config);

  ModelEncoder enc(model, eval_corpus, config.average_at_inference);
  std::vector<EmbeddingVec> clips, narrations;
  std::vector<int> labels;
  for (std::size_t v = 0; v < eval_corpus.videos.size() && clips.size() < config.retrieval_clips; ++v) {
    const auto& video = eval_corpus.videos[v];
    for (std::size_t c = 0; c < video.clips.size() && clips.size() < config.retrieval_clips; ++c) {
      clips.push_back(enc.clip(v, c));
      narrations.push_back(enc.narration(v, c));
      labels.push_back(video.clips[c].action_label);
    }
  }
  if (!clips.empty()) {
    std::vector<std::vector<double>> rel(clips.size(), std::vector<double>(clips.size()));
    double prevalence = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      for (std::size_t j = 0; j < clips.size(); ++j) {
        rel[i][j] = labels[i] == labels[j] ? 1.0 : 0.0;
        prevalence += rel[i][j];
      }
    }
    auto m = retrieval_metrics(clips, narrations, rel);
    EvalReport r;
    r.task = "retrieval-child";
    r.metric = "mAP";
    r.value = m.map;
    r.item_count = clips.size();
    r.chance = prevalence / double(clips.size() * clips.size());
    r.extra["nDCG"] = m.ndcg;
    out.push_back(r);
  }

  if (!train_corpus) return out;
  ModelEncoder train_enc(model, *train_corpus, config.average_at_inference);
  auto features = [&](const corpus::Corpus& c, ModelEncoder& e, std::vector<int>& y) {
    std::vector<std::vector<Scalar>> x;
    for (std::size_t v = 0; v < c.videos.size(); ++v) {
      x.push_back(e.video(v, model::sample_uniform(c.videos[v].clips.size(), config.clips_per_video)).values());
      y.push_back(c.videos[v].latent_intent_id);
    }
    return x;
  };
  std::vector<int> ty, ey;
  auto tx = features(*train_corpus, train_enc, ty);
  auto ex = features(eval_corpus, enc, ey);
  int classes = 0;
  for (int y : ty) classes = std::max(classes, y + 1);
  for (int y : ey) classes = std::max(classes, y + 1);
  if (!tx.empty() && !ex.empty()) {
    EvalReport r;
    r.task = "linear-probe-intent";
    r.value = linear_probe(tx, ty, ex, ey, std::size_t(classes), config.probe);
    r.item_count = ex.size();
    r.chance = 100.0 / double(classes);
    out.push_back(r);
  }
  return out;
}

}  // namespace hiervl::eval
