#pragma once

// Hierarchical corpus: videos -> clips (frames + narration) plus one summary
// per video. Stored as JSONL (one VideoRecord per line) with a sidecar
// manifest `<file>.manifest.json`.

#include <cstdint>
#include <functional>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hiervl/encoders.hpp"

namespace hiervl::corpus {

using model::ClipInput;
using model::Mask;
using model::Scalar;
using model::TextInput;

struct ClipRecord {
  std::size_t clip_index = 0;
  ClipInput frames;
  TextInput narration;
  int action_label = 0;

  bool operator==(const ClipRecord&) const = default;
};

struct VideoRecord {
  std::string video_id;
  std::vector<ClipRecord> clips;
  TextInput summary;
  int latent_intent_id = 0;
  std::size_t duration_clips = 0;

  bool operator==(const VideoRecord&) const = default;
};

/// Knobs of the synthetic generator. Every intent owns a Markov chain over a
/// pool of actions. With `order_signal`, intents come in mirrored pairs that
/// share a pool and walk it in opposite directions, so only temporal order
/// separates them; without it, every intent has its own pool and clips draw
/// actions independently.
struct GeneratorConfig {
  std::string split = "train";
  std::uint64_t seed = 0;
  std::size_t num_videos = 200;
  std::size_t clips_per_video = 16;
  std::size_t num_intents = 8;
  std::size_t actions_per_intent = 6;
  std::size_t frames_per_clip = 4;
  std::size_t frame_feature_dim = 32;
  std::size_t latent_dim = 16;
  std::size_t vocab_size = 256;
  std::size_t narration_len = 4;
  std::size_t summary_len = 4;
  std::size_t num_filler_tokens = 16;
  double frame_noise = 0.3;
  double token_noise = 0.1;
  double advance_prob = 0.35;
  bool order_signal = true;

  void validate() const;
};

/// Token-id layout shared by the generator and the label oracles.
struct Vocabulary {
  std::size_t num_actions = 0;
  std::size_t num_intents = 0;
  std::size_t num_filler = 0;

  static constexpr std::int64_t kPad = 0;
  std::int64_t filler(std::size_t i) const { return 2 + std::int64_t(i); }
  std::int64_t verb(int action) const { return 2 + std::int64_t(num_filler) + action; }
  std::int64_t object(int action) const {
    return 2 + std::int64_t(num_filler + num_actions) + action;
  }
  std::int64_t summary_a(int intent) const {
    return 2 + std::int64_t(num_filler + 2 * num_actions) + 2 * intent;
  }
  std::int64_t summary_b(int intent) const { return summary_a(intent) + 1; }
  std::size_t required_size() const { return 2 + num_filler + 2 * num_actions + 2 * num_intents; }
};

/// The latent structure behind a synthetic corpus; depends only on the seed
/// and the shape parameters, never on the split.
struct SyntheticWorld {
  GeneratorConfig config;
  Vocabulary vocab;
  std::vector<std::vector<int>> intent_actions;  // walk order of each intent's pool
  std::vector<std::vector<Scalar>> action_latents;
  std::vector<Scalar> render;  // frame_feature_dim x latent_dim

  static SyntheticWorld create(const GeneratorConfig& config);
  std::size_t num_actions() const { return action_latents.size(); }
  int pool_of_action(int action) const;
};

struct CorpusManifest {
  int schema_version = 1;
  std::string split;
  std::size_t video_count = 0;
  std::size_t vocab_size = 0;
  std::size_t frame_feature_dim = 0;
  std::optional<GeneratorConfig> generator;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<VideoRecord> videos;

  std::size_t clip_count() const;
};

Corpus generate_synthetic(const GeneratorConfig& config);

std::string manifest_path(const std::string& corpus_path);
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);
CorpusManifest load_manifest(const std::string& path);

/// Line-by-line reader. `next` yields records in file order; reaching the end
/// with a count different from the manifest raises IntegrityError.
class CorpusReader {
 public:
  explicit CorpusReader(const std::string& path);
  bool next(VideoRecord& out);
  const CorpusManifest& manifest() const { return manifest_; }

 private:
  std::ifstream in_;
  CorpusManifest manifest_;
  std::size_t line_no_ = 0;
  std::size_t seen_ = 0;
  bool done_ = false;
};

// JSON (de)serialisation of single records and configs; exposed for tools.
std::string video_to_json_line(const VideoRecord& v);
VideoRecord video_from_json_line(const std::string& line, std::size_t line_no);
std::string generator_config_to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const std::string& json);

// ---- batch builders --------------------------------------------------------

struct RawChildBatch {
  std::vector<ClipInput> clips;
  std::vector<TextInput> narrations;
  std::vector<std::string> video_ids;
  std::vector<std::size_t> video_indices;
  std::vector<std::size_t> clip_indices;
  std::vector<int> action_labels;
  Mask positive_mask;  // B x B; label equality plus the diagonal

  std::size_t size() const { return clips.size(); }
};

struct RawParentBatch {
  std::size_t clips_per_video = 0;              // K
  std::vector<ClipInput> clips;                 // num_videos * K, video-major
  std::vector<TextInput> narrations;            // aligned with clips
  std::vector<TextInput> summaries;             // one per video
  std::vector<std::string> video_ids;
  std::vector<std::size_t> video_indices;
  std::vector<std::vector<std::size_t>> clip_indices;
  std::vector<int> intents;
  Mask positive_mask;  // diagonal

  std::size_t num_videos() const { return summaries.size(); }
};

/// `batch_size` (clip, narration) pairs, each from a different video.
RawChildBatch build_child_batch(const Corpus& corpus, std::size_t batch_size, std::mt19937_64& rng);

/// `num_videos` distinct videos, each with K uniformly sampled clips.
RawParentBatch build_parent_batch(const Corpus& corpus, std::size_t num_videos, std::size_t k,
                                  std::mt19937_64& rng);

/// Distinct indices drawn uniformly from [0, n).
std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t count, std::mt19937_64& rng);

}  // namespace hiervl::corpus
