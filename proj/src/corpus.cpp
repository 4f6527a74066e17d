#include "hiervl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hiervl/aggregation.hpp"
#include "hiervl/errors.hpp"
#include "hiervl/hashing.hpp"
#include "json.hpp"

namespace hiervl::corpus {

using json = nlohmann::ordered_json;

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("generator: " + msg); };
  if (clips_per_video == 0 || num_intents == 0 || actions_per_intent == 0 || frames_per_clip == 0 ||
      frame_feature_dim == 0 || latent_dim == 0 || vocab_size == 0) {
    fail("sizes must be positive");
  }
  if (actions_per_intent * num_intents > vocab_size) {
    fail("actions_per_intent * num_intents = " + std::to_string(actions_per_intent * num_intents) +
         " exceeds vocab_size " + std::to_string(vocab_size));
  }
  if (narration_len < 2 || summary_len < 2) fail("narration_len and summary_len must be >= 2");
  if (num_filler_tokens == 0) fail("num_filler_tokens must be positive");
  if (frame_noise < 0 || token_noise < 0 || token_noise > 1 || advance_prob < 0 || advance_prob > 1) {
    fail("noise levels and advance_prob out of range");
  }
  Vocabulary v;
  v.num_intents = num_intents;
  v.num_filler = num_filler_tokens;
  v.num_actions = (order_signal ? (num_intents + 1) / 2 : num_intents) * actions_per_intent;
  if (v.required_size() > vocab_size) {
    fail("token layout needs " + std::to_string(v.required_size()) + " ids but vocab_size is " +
         std::to_string(vocab_size));
  }
}

SyntheticWorld SyntheticWorld::create(const GeneratorConfig& config) {
  config.validate();
  SyntheticWorld w;
  w.config = config;
  const std::size_t pools = config.order_signal ? (config.num_intents + 1) / 2 : config.num_intents;
  const std::size_t a = config.actions_per_intent;
  for (std::size_t i = 0; i < config.num_intents; ++i) {
    const std::size_t pool = config.order_signal ? i / 2 : i;
    std::vector<int> walk(a);
    std::iota(walk.begin(), walk.end(), int(pool * a));
    if (config.order_signal && i % 2 == 1) std::reverse(walk.begin(), walk.end());
    w.intent_actions.push_back(std::move(walk));
  }
  w.vocab.num_actions = pools * a;
  w.vocab.num_intents = config.num_intents;
  w.vocab.num_filler = config.num_filler_tokens;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < pools * a; ++k) {
    std::vector<Scalar> z(config.latent_dim);
    for (auto& x : z) x = static_cast<Scalar>(unit(rng));
    w.action_latents.push_back(std::move(z));
  }
  const double sd = 1.0 / std::sqrt(double(config.latent_dim));
  w.render.resize(config.frame_feature_dim * config.latent_dim);
  for (auto& x : w.render) x = static_cast<Scalar>(sd * unit(rng));
  return w;
}

int SyntheticWorld::pool_of_action(int action) const {
  return action / int(config.actions_per_intent);
}

std::size_t Corpus::clip_count() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.clips.size();
  return n;
}

namespace {

std::mt19937_64 split_rng(const GeneratorConfig& c) {
  const std::uint64_t tag = fnv1a64(c.split);
  std::seed_seq seq{std::uint32_t(c.seed), std::uint32_t(c.seed >> 32), std::uint32_t(tag),
                    std::uint32_t(tag >> 32)};
  return std::mt19937_64(seq);
}

TextInput noisy_text(std::int64_t first, std::int64_t second, std::size_t len, const SyntheticWorld& w,
                     std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> filler(0, w.vocab.num_filler - 1);
  std::bernoulli_distribution corrupt(w.config.token_noise);
  TextInput t;
  t.tokens = {first, second};
  for (auto& tok : t.tokens) {
    if (corrupt(rng)) tok = w.vocab.filler(filler(rng));
  }
  while (t.tokens.size() < len) t.tokens.push_back(w.vocab.filler(filler(rng)));
  t.valid_len = t.tokens.size();
  return t;
}

}  // namespace

Corpus generate_synthetic(const GeneratorConfig& config) {
  SyntheticWorld world = SyntheticWorld::create(config);
  const auto& c = world.config;
  std::mt19937_64 rng = split_rng(c);
  std::uniform_int_distribution<std::size_t> pick_intent(0, c.num_intents - 1);
  std::uniform_int_distribution<std::size_t> pick_action(0, c.actions_per_intent - 1);
  std::bernoulli_distribution advance(c.advance_prob);
  std::normal_distribution<double> noise(0.0, 1.0);

  Corpus corpus;
  corpus.manifest.split = c.split;
  corpus.manifest.vocab_size = c.vocab_size;
  corpus.manifest.frame_feature_dim = c.frame_feature_dim;
  corpus.manifest.generator = c;

  for (std::size_t vi = 0; vi < c.num_videos; ++vi) {
    VideoRecord v;
    char id[64];
    std::snprintf(id, sizeof id, "%s-%06zu", c.split.c_str(), vi);
    v.video_id = id;
    const int intent = int(pick_intent(rng));
    v.latent_intent_id = intent;
    const auto& walk = world.intent_actions[std::size_t(intent)];
    std::size_t pos = 0;
    for (std::size_t ci = 0; ci < c.clips_per_video; ++ci) {
      int action;
      if (c.order_signal) {
        if (ci > 0 && advance(rng) && pos + 1 < walk.size()) ++pos;
        action = walk[pos];
      } else {
        action = walk[pick_action(rng)];
      }
      ClipRecord clip;
      clip.clip_index = ci;
      clip.action_label = action;
      const auto& z = world.action_latents[std::size_t(action)];
      clip.frames.rows = c.frames_per_clip;
      clip.frames.valid_len = c.frames_per_clip;
      clip.frames.feature_dim = c.frame_feature_dim;
      clip.frames.frames.resize(c.frames_per_clip * c.frame_feature_dim);
      for (std::size_t f = 0; f < c.frames_per_clip; ++f) {
        for (std::size_t d = 0; d < c.frame_feature_dim; ++d) {
          double x = 0;
          for (std::size_t l = 0; l < c.latent_dim; ++l) x += world.render[d * c.latent_dim + l] * z[l];
          if (c.frame_noise > 0) x += c.frame_noise * noise(rng);
          clip.frames.frames[f * c.frame_feature_dim + d] = static_cast<Scalar>(x);
        }
      }
      clip.narration = noisy_text(world.vocab.verb(action), world.vocab.object(action),
                                  c.narration_len, world, rng);
      v.clips.push_back(std::move(clip));
    }
    v.summary = noisy_text(world.vocab.summary_a(intent), world.vocab.summary_b(intent),
                           c.summary_len, world, rng);
    v.duration_clips = v.clips.size();
    corpus.videos.push_back(std::move(v));
  }
  corpus.manifest.video_count = corpus.videos.size();
  return corpus;
}

// ---- JSON ------------------------------------------------------------------

std::string generator_config_to_json(const GeneratorConfig& c) {
  json j;
  j["split"] = c.split;
  j["seed"] = c.seed;
  j["num_videos"] = c.num_videos;
  j["clips_per_video"] = c.clips_per_video;
  j["num_intents"] = c.num_intents;
  j["actions_per_intent"] = c.actions_per_intent;
  j["frames_per_clip"] = c.frames_per_clip;
  j["frame_feature_dim"] = c.frame_feature_dim;
  j["latent_dim"] = c.latent_dim;
  j["vocab_size"] = c.vocab_size;
  j["narration_len"] = c.narration_len;
  j["summary_len"] = c.summary_len;
  j["num_filler_tokens"] = c.num_filler_tokens;
  j["frame_noise"] = c.frame_noise;
  j["token_noise"] = c.token_noise;
  j["advance_prob"] = c.advance_prob;
  j["order_signal"] = c.order_signal;
  return j.dump();
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  GeneratorConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("generator config: ") + e.what());
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("split", c.split);
    get("seed", c.seed);
    get("num_videos", c.num_videos);
    get("clips_per_video", c.clips_per_video);
    get("num_intents", c.num_intents);
    get("actions_per_intent", c.actions_per_intent);
    get("frames_per_clip", c.frames_per_clip);
    get("frame_feature_dim", c.frame_feature_dim);
    get("latent_dim", c.latent_dim);
    get("vocab_size", c.vocab_size);
    get("narration_len", c.narration_len);
    get("summary_len", c.summary_len);
    get("num_filler_tokens", c.num_filler_tokens);
    get("frame_noise", c.frame_noise);
    get("token_noise", c.token_noise);
    get("advance_prob", c.advance_prob);
    get("order_signal", c.order_signal);
  } catch (const json::exception& e) {
    throw ParseError(std::string("generator config: ") + e.what());
  }
  return c;
}

namespace {

json text_tokens(const TextInput& t) {
  return json(std::vector<std::int64_t>(t.tokens.begin(), t.tokens.begin() + long(t.valid_len)));
}

TextInput text_from(const json& j) {
  TextInput t;
  t.tokens = j.get<std::vector<std::int64_t>>();
  t.valid_len = t.tokens.size();
  return t;
}

json manifest_to_json(const CorpusManifest& m) {
  json j;
  j["schema_version"] = m.schema_version;
  j["split"] = m.split;
  j["video_count"] = m.video_count;
  j["vocab_size"] = m.vocab_size;
  j["frame_feature_dim"] = m.frame_feature_dim;
  if (m.generator) j["generator"] = json::parse(generator_config_to_json(*m.generator));
  return j;
}

}  // namespace

std::string video_to_json_line(const VideoRecord& v) {
  json j;
  j["video_id"] = v.video_id;
  j["latent_intent_id"] = v.latent_intent_id;
  j["duration_clips"] = v.duration_clips;
  j["summary_tokens"] = text_tokens(v.summary);
  json clips = json::array();
  for (const auto& c : v.clips) {
    json cj;
    cj["clip_index"] = c.clip_index;
    cj["action_label"] = c.action_label;
    cj["narration_tokens"] = text_tokens(c.narration);
    json frames = json::array();
    const auto& f = c.frames;
    for (std::size_t r = 0; r < f.valid_len; ++r) {
      frames.push_back(std::vector<Scalar>(f.frames.begin() + long(r * f.feature_dim),
                                           f.frames.begin() + long((r + 1) * f.feature_dim)));
    }
    cj["frames"] = std::move(frames);
    clips.push_back(std::move(cj));
  }
  j["clips"] = std::move(clips);
  return j.dump();
}

VideoRecord video_from_json_line(const std::string& line, std::size_t line_no) {
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("line " + std::to_string(line_no) + ": " + msg);
  };
  VideoRecord v;
  try {
    json j = json::parse(line);
    v.video_id = j.at("video_id").get<std::string>();
    v.latent_intent_id = j.at("latent_intent_id").get<int>();
    v.duration_clips = j.at("duration_clips").get<std::size_t>();
    v.summary = text_from(j.at("summary_tokens"));
    for (const auto& cj : j.at("clips")) {
      ClipRecord c;
      c.clip_index = cj.at("clip_index").get<std::size_t>();
      c.action_label = cj.at("action_label").get<int>();
      c.narration = text_from(cj.at("narration_tokens"));
      const auto& frames = cj.at("frames");
      c.frames.rows = frames.size();
      c.frames.valid_len = frames.size();
      for (const auto& row : frames) {
        auto values = row.get<std::vector<Scalar>>();
        if (c.frames.feature_dim == 0) c.frames.feature_dim = values.size();
        if (values.size() != c.frames.feature_dim) throw fail("ragged frame rows");
        c.frames.frames.insert(c.frames.frames.end(), values.begin(), values.end());
      }
      v.clips.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  if (v.clips.empty()) throw fail("video " + v.video_id + " has no clips");
  for (std::size_t i = 0; i < v.clips.size(); ++i) {
    if (v.clips[i].clip_index != i) throw fail("clip indices of " + v.video_id + " are not contiguous");
    if (v.clips[i].frames.valid_len == 0) throw fail("clip without frames");
    if (v.clips[i].narration.valid_len == 0) throw fail("clip without narration");
  }
  if (v.duration_clips != v.clips.size()) throw fail("duration_clips does not match clip count");
  if (v.summary.valid_len == 0) throw fail("empty summary");
  return v;
}

// ---- files -------------------------------------------------------------------

std::string manifest_path(const std::string& corpus_path) {
  const std::string ext = ".jsonl";
  std::string base = corpus_path;
  if (base.size() >= ext.size() && base.compare(base.size() - ext.size(), ext.size(), ext) == 0) {
    base.resize(base.size() - ext.size());
  }
  return base + ".manifest.json";
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot write " + path);
  for (const auto& v : corpus.videos) out << video_to_json_line(v) << '\n';
  CorpusManifest m = corpus.manifest;
  m.video_count = corpus.videos.size();
  std::ofstream mout(manifest_path(path), std::ios::binary);
  if (!mout) throw PathError("cannot write " + manifest_path(path));
  mout << manifest_to_json(m).dump(2) << '\n';
}

CorpusManifest load_manifest(const std::string& path) {
  const std::string mp = manifest_path(path);
  json j;
  try {
    j = json::parse(read_file(mp));
  } catch (const json::exception& e) {
    throw ParseError("manifest " + mp + ": " + e.what());
  }
  CorpusManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    m.split = j.at("split").get<std::string>();
    m.video_count = j.at("video_count").get<std::size_t>();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.frame_feature_dim = j.at("frame_feature_dim").get<std::size_t>();
    if (j.contains("generator")) m.generator = generator_config_from_json(j.at("generator").dump());
  } catch (const json::exception& e) {
    throw ParseError("manifest " + mp + ": " + e.what());
  }
  if (m.schema_version != 1) {
    throw IntegrityError("manifest " + mp + ": unsupported schema_version " +
                         std::to_string(m.schema_version));
  }
  return m;
}

CorpusReader::CorpusReader(const std::string& path) : manifest_(load_manifest(path)) {
  in_.open(path, std::ios::binary);
  if (!in_) throw PathError("cannot open corpus " + path);
}

bool CorpusReader::next(VideoRecord& out) {
  if (done_) return false;
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    out = video_from_json_line(line, line_no_);
    for (const auto& c : out.clips) {
      if (c.frames.feature_dim != manifest_.frame_feature_dim) {
        throw IntegrityError("line " + std::to_string(line_no_) + ": frame dim " +
                             std::to_string(c.frames.feature_dim) + " differs from manifest " +
                             std::to_string(manifest_.frame_feature_dim));
      }
    }
    ++seen_;
    return true;
  }
  done_ = true;
  if (seen_ != manifest_.video_count) {
    throw IntegrityError("video count mismatch: manifest declares " +
                         std::to_string(manifest_.video_count) + " videos, file has " +
                         std::to_string(seen_));
  }
  return false;
}

Corpus load_corpus(const std::string& path) {
  CorpusReader reader(path);
  Corpus c;
  c.manifest = reader.manifest();
  VideoRecord v;
  while (reader.next(v)) c.videos.push_back(std::move(v));
  return c;
}

// ---- batches -----------------------------------------------------------------

std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  if (count > n) {
    throw ContractError("cannot draw " + std::to_string(count) + " distinct items from " +
                        std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

RawChildBatch build_child_batch(const Corpus& corpus, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0 || corpus.videos.size() < batch_size) {
    throw ContractError("child batch of " + std::to_string(batch_size) + " needs as many videos; corpus has " +
                        std::to_string(corpus.videos.size()));
  }
  RawChildBatch b;
  for (std::size_t vi : sample_distinct(corpus.videos.size(), batch_size, rng)) {
    const auto& v = corpus.videos[vi];
    std::uniform_int_distribution<std::size_t> pick(0, v.clips.size() - 1);
    const auto& c = v.clips[pick(rng)];
    b.clips.push_back(c.frames);
    b.narrations.push_back(c.narration);
    b.video_ids.push_back(v.video_id);
    b.video_indices.push_back(vi);
    b.clip_indices.push_back(c.clip_index);
    b.action_labels.push_back(c.action_label);
  }
  b.positive_mask.assign(batch_size * batch_size, 0);
  for (std::size_t i = 0; i < batch_size; ++i)
    for (std::size_t j = 0; j < batch_size; ++j)
      b.positive_mask[i * batch_size + j] = i == j || b.action_labels[i] == b.action_labels[j];
  return b;
}

RawParentBatch build_parent_batch(const Corpus& corpus, std::size_t num_videos, std::size_t k,
                                  std::mt19937_64& rng) {
  if (num_videos == 0 || corpus.videos.size() < num_videos) {
    throw ContractError("parent batch of " + std::to_string(num_videos) + " videos; corpus has " +
                        std::to_string(corpus.videos.size()));
  }
  RawParentBatch b;
  b.clips_per_video = k;
  for (std::size_t vi : sample_distinct(corpus.videos.size(), num_videos, rng)) {
    const auto& v = corpus.videos[vi];
    auto idx = model::sample_uniform(v.clips.size(), k);
    for (std::size_t ci : idx) {
      b.clips.push_back(v.clips[ci].frames);
      b.narrations.push_back(v.clips[ci].narration);
    }
    b.summaries.push_back(v.summary);
    b.video_ids.push_back(v.video_id);
    b.video_indices.push_back(vi);
    b.clip_indices.push_back(std::move(idx));
    b.intents.push_back(v.latent_intent_id);
  }
  b.positive_mask.assign(num_videos * num_videos, 0);
  for (std::size_t i = 0; i < num_videos; ++i) b.positive_mask[i * num_videos + i] = 1;
  return b;
}

}  // namespace hiervl::corpus
