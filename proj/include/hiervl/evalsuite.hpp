#pragma once

// Multiple-choice probes (child, summary, shuffle), retrieval metrics, a
// linear probe and embedding export.

#include <array>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiervl/corpus.hpp"
#include "hiervl/trainer.hpp"

namespace hiervl::eval {

using model::EmbeddingVec;
using model::Scalar;

enum class McqTask { Child, Summary, Shuffle };
enum class SplitTag { Inter, Intra, None };

std::string to_string(McqTask t);
std::string to_string(SplitTag s);

/// A candidate is one clip (child items) or an ordered clip-index list of one
/// video (summary and shuffle items).
struct Candidate {
  std::size_t video = 0;
  std::vector<std::size_t> clips;

  bool operator==(const Candidate&) const = default;
};

struct McqItem {
  McqTask task = McqTask::Child;
  SplitTag split = SplitTag::None;
  std::size_t prompt_video = 0;
  std::size_t prompt_clip = 0;  // child items only; the prompt is that clip's narration
  std::array<Candidate, 5> candidates;
  std::size_t answer_index = 0;
};

/// Embeds the pieces an MCQ item refers to.
class McqEncoder {
 public:
  virtual ~McqEncoder() = default;
  virtual EmbeddingVec narration(std::size_t video, std::size_t clip) = 0;
  virtual EmbeddingVec clip(std::size_t video, std::size_t clip) = 0;
  virtual EmbeddingVec summary(std::size_t video) = 0;
  virtual EmbeddingVec video(std::size_t video, const std::vector<std::size_t>& clip_order) = 0;
};

/// Embeddings from a trained model, cached per video. `average_at_inference`
/// swaps the model's aggregator for averaging.
class ModelEncoder final : public McqEncoder {
 public:
  ModelEncoder(const train::HierModel& model, const corpus::Corpus& corpus,
               bool average_at_inference = false);

  EmbeddingVec narration(std::size_t video, std::size_t clip) override;
  EmbeddingVec clip(std::size_t video, std::size_t clip) override;
  EmbeddingVec summary(std::size_t video) override;
  EmbeddingVec video(std::size_t video, const std::vector<std::size_t>& clip_order) override;

 private:
  const std::vector<EmbeddingVec>& clips_of(std::size_t video);
  const std::vector<EmbeddingVec>& narrations_of(std::size_t video);

  const train::HierModel& model_;
  const corpus::Corpus& corpus_;
  model::Aggregator average_;
  bool use_average_;
  std::unordered_map<std::size_t, std::vector<EmbeddingVec>> clip_cache_;
  std::unordered_map<std::size_t, std::vector<EmbeddingVec>> narration_cache_;
  std::unordered_map<std::size_t, EmbeddingVec> summary_cache_;
};

/// Narration prompt, its clip as the answer. Inter: distractors from four
/// other videos; intra: four other clips of the same video. Distractors never
/// share the answer's action label.
std::vector<McqItem> build_child_mcq(const corpus::Corpus& corpus, std::size_t n_items, SplitTag split,
                                     std::mt19937_64& rng);

/// Summary prompt, five whole videos (K uniformly sampled clips each); the
/// four distractor videos are distinct and of a different intent.
std::vector<McqItem> build_summary_mcq(const corpus::Corpus& corpus, std::size_t n_items,
                                       std::size_t k, std::mt19937_64& rng);

/// Summary prompt, one video's K sampled clips in original order plus four
/// distinct non-identity reorderings.
std::vector<McqItem> build_shuffle_mcq(const corpus::Corpus& corpus, std::size_t n_items,
                                       std::size_t k, std::mt19937_64& rng);

struct EvalReport {
  std::string task;
  std::string metric = "accuracy";
  double value = 0;
  std::size_t item_count = 0;
  double chance = 20.0;
  std::size_t tie_count = 0;
  std::map<std::string, double> splits;
  std::map<std::string, double> extra;
};

std::string report_to_json(const EvalReport& r);

/// Picks the candidate most similar to the prompt; exact ties are broken
/// uniformly at random by `rng` and counted.
EvalReport score_mcq(const std::string& task, const std::vector<McqItem>& items, McqEncoder& encoder,
                     std::mt19937_64& rng);

// ---- retrieval -------------------------------------------------------------

struct RetrievalMetrics {
  double map = 0;
  double ndcg = 0;
};

/// Average precision of one ranked query; items with relevance > 0 count as
/// relevant. Ranking is by descending score, ties by ascending index.
double average_precision(const std::vector<double>& scores, const std::vector<double>& relevance);
/// nDCG with gains = relevance and a log2(rank + 1) discount.
double ndcg(const std::vector<double>& scores, const std::vector<double>& relevance);

/// Means over queries (rows) of a Q x G score matrix.
RetrievalMetrics rank_metrics(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<double>>& relevance);

/// Both directions over dot-product similarity, averaged.
RetrievalMetrics retrieval_metrics(const std::vector<EmbeddingVec>& queries,
                                   const std::vector<EmbeddingVec>& gallery,
                                   const std::vector<std::vector<double>>& relevance);

// ---- linear probe ----------------------------------------------------------

struct ProbeConfig {
  std::size_t epochs = 300;
  double lr = 0.05;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

/// Softmax regression on frozen features; returns eval accuracy in percent.
double linear_probe(const std::vector<std::vector<Scalar>>& train_x, const std::vector<int>& train_y,
                    const std::vector<std::vector<Scalar>>& eval_x, const std::vector<int>& eval_y,
                    std::size_t num_classes, const ProbeConfig& config = {});

// ---- export ----------------------------------------------------------------

enum class ExportLevel { Child, Parent };

/// JSONL rows {id, level, label, vector} in corpus order. Child rows are
/// clip embeddings labelled by action; parent rows are aggregated videos
/// labelled by intent.
void export_embeddings(const corpus::Corpus& corpus, const train::HierModel& model, ExportLevel level,
                       std::size_t k, const std::string& path);

// ---- full evaluation -------------------------------------------------------

struct EvalConfig {
  std::size_t mcq_items = 500;
  std::size_t clips_per_video = 16;
  std::uint64_t seed = 0;
  std::size_t retrieval_clips = 400;
  bool average_at_inference = false;
  ProbeConfig probe;
};

/// The four MCQ reports in the order childMCQ-inter, childMCQ-intra,
/// summaryMCQ, shuffleMCQ.
std::vector<EvalReport> evaluate_mcq(const train::HierModel& model, const corpus::Corpus& eval_corpus,
                                     const EvalConfig& config);

/// MCQ reports followed by clip/narration retrieval and, when `train_corpus`
/// is given, a video-level intent probe trained on it.
std::vector<EvalReport> evaluate_all(const train::HierModel& model, const corpus::Corpus* train_corpus,
                                     const corpus::Corpus& eval_corpus, const EvalConfig& config);

}  // namespace hiervl::eval
