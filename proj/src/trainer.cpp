#include "hiervl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hiervl/errors.hpp"
#include "hiervl/hashing.hpp"
#include "json.hpp"

namespace hiervl::train {

using json = nlohmann::ordered_json;
using ad::Tensor;

namespace {

const std::vector<std::pair<Mode, std::string>>& mode_names() {
  static const std::vector<std::pair<Mode, std::string>> names = {
      {Mode::ChildOnly, "ChildOnly"},   {Mode::HierVL_Avg, "HierVL-Avg"},
      {Mode::HierVL_SA, "HierVL-SA"},   {Mode::WoJoint, "WoJoint"},
      {Mode::WoHier, "WoHier"},         {Mode::WoSumm, "WoSumm"},
      {Mode::WoSummNarr, "WoSummNarr"},
  };
  return names;
}

}  // namespace

std::string to_string(Mode mode) {
  for (const auto& [m, name] : mode_names())
    if (m == mode) return name;
  return "?";
}

Mode mode_from_string(const std::string& s) {
  for (const auto& [m, name] : mode_names())
    if (name == s) return m;
  throw ConfigError("unknown training mode '" + s + "'");
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes = [] {
    std::vector<Mode> out;
    for (const auto& [m, name] : mode_names()) out.push_back(m);
    return out;
  }();
  return modes;
}

// ---- config ------------------------------------------------------------------

void TrainConfig::validate() const {
  if (m < 1) throw ConfigError("train: m must be >= 1");
  if (child_batch_size == 0 || parent_videos_per_batch == 0 || clips_per_video == 0) {
    throw ConfigError("train: batch sizes and K must be positive");
  }
  if (!(lr > 0) || weight_decay < 0 || !(tau > 0)) throw ConfigError("train: invalid lr/weight_decay/tau");
  encoder.validate();
  model::AggregatorConfig a = aggregator;
  a.kind = effective_aggregator();
  a.clips_per_video = clips_per_video;
  a.validate(encoder.embed_dim);
  if (mode == Mode::WoJoint && init_checkpoint.empty()) {
    throw ConfigError("train: WoJoint needs init_checkpoint (a ChildOnly checkpoint)");
  }
}

model::AggregatorKind TrainConfig::effective_aggregator() const {
  switch (mode) {
    case Mode::HierVL_Avg:
    case Mode::ChildOnly:
    case Mode::WoHier:
      return model::AggregatorKind::Average;
    default:
      return model::AggregatorKind::SelfAttention;
  }
}

bool TrainConfig::has_child_steps() const { return mode != Mode::WoJoint; }
bool TrainConfig::has_parent_steps() const { return mode != Mode::ChildOnly; }

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["schema_version"] = 1;
  j["mode"] = to_string(c.mode);
  j["m"] = c.m;
  j["child_batch_size"] = c.child_batch_size;
  j["parent_videos_per_batch"] = c.parent_videos_per_batch;
  j["clips_per_video"] = c.clips_per_video;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["tau"] = c.tau;
  j["total_steps"] = c.total_steps;
  j["seed"] = c.seed;
  j["strict_determinism"] = c.strict_determinism;
  j["one_sided"] = c.one_sided;
  j["schedule"] = c.schedule == ScheduleKind::PerStep ? "per-step" : "per-epoch";
  j["checkpoint_every"] = c.checkpoint_every;
  j["init_checkpoint"] = c.init_checkpoint;
  const auto& e = c.encoder;
  j["encoder"] = {{"model_dim", e.model_dim},     {"num_layers", e.num_layers},
                  {"num_heads", e.num_heads},     {"mlp_dim", e.mlp_dim},
                  {"max_seq_len", e.max_seq_len}, {"vocab_size", e.vocab_size},
                  {"frame_feature_dim", e.frame_feature_dim}, {"embed_dim", e.embed_dim}};
  const auto& a = c.aggregator;
  j["aggregator"] = {{"kind", model::to_string(c.effective_aggregator())},
                     {"sa_layers", a.sa_layers},
                     {"sa_heads", a.sa_heads},
                     {"sa_model_dim", a.sa_model_dim},
                     {"sa_mlp_dim", a.sa_mlp_dim}};
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  try {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1) {
      throw ConfigError("train config: unsupported schema_version");
    }
    auto get = [](const json& src, const char* key, auto& field) {
      if (src.contains(key)) field = src.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
    get(j, "m", c.m);
    get(j, "child_batch_size", c.child_batch_size);
    get(j, "parent_videos_per_batch", c.parent_videos_per_batch);
    get(j, "clips_per_video", c.clips_per_video);
    get(j, "lr", c.lr);
    get(j, "weight_decay", c.weight_decay);
    get(j, "tau", c.tau);
    get(j, "total_steps", c.total_steps);
    get(j, "seed", c.seed);
    get(j, "strict_determinism", c.strict_determinism);
    get(j, "one_sided", c.one_sided);
    get(j, "checkpoint_every", c.checkpoint_every);
    get(j, "init_checkpoint", c.init_checkpoint);
    if (j.contains("schedule")) {
      auto s = j.at("schedule").get<std::string>();
      if (s == "per-step") c.schedule = ScheduleKind::PerStep;
      else if (s == "per-epoch") c.schedule = ScheduleKind::PerEpoch;
      else throw ConfigError("train config: unknown schedule '" + s + "'");
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      get(e, "model_dim", c.encoder.model_dim);
      get(e, "num_layers", c.encoder.num_layers);
      get(e, "num_heads", c.encoder.num_heads);
      get(e, "mlp_dim", c.encoder.mlp_dim);
      get(e, "max_seq_len", c.encoder.max_seq_len);
      get(e, "vocab_size", c.encoder.vocab_size);
      get(e, "frame_feature_dim", c.encoder.frame_feature_dim);
      get(e, "embed_dim", c.encoder.embed_dim);
    }
    if (j.contains("aggregator")) {
      const auto& a = j.at("aggregator");
      get(a, "sa_layers", c.aggregator.sa_layers);
      get(a, "sa_heads", c.aggregator.sa_heads);
      get(a, "sa_model_dim", c.aggregator.sa_model_dim);
      get(a, "sa_mlp_dim", c.aggregator.sa_mlp_dim);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return c;
}

std::string config_hash(const TrainConfig& c) {
  TrainConfig h = c;
  h.total_steps = 0;
  h.checkpoint_every = 0;
  h.init_checkpoint.clear();
  return git_blob_hash(config_to_json(h));
}

// ---- model -------------------------------------------------------------------

HierModel HierModel::create(const TrainConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  HierModel m;
  m.clip = model::ClipEncoder(config.encoder, rng);
  m.text = model::TextEncoder(config.encoder, rng);
  model::AggregatorConfig a = config.aggregator;
  a.kind = config.effective_aggregator();
  a.clips_per_video = config.clips_per_video;
  m.agg = model::Aggregator(a, config.encoder.embed_dim, rng);
  return m;
}

ad::ParamList HierModel::encoder_parameters() const {
  ad::ParamList p;
  p.append(clip.parameters(), "clip.");
  p.append(text.parameters(), "text.");
  return p;
}

ad::ParamList HierModel::aggregator_parameters() const {
  ad::ParamList p;
  p.append(agg.parameters(), "agg.");
  return p;
}

ad::ParamList HierModel::all_parameters() const {
  ad::ParamList p = encoder_parameters();
  p.append(aggregator_parameters());
  return p;
}

HierModel model_from_checkpoint(const Checkpoint& c) {
  HierModel m = HierModel::create(config_from_json(c.config_json));
  auto params = m.all_parameters();
  if (params.names != c.param_names) throw IntegrityError("checkpoint: parameter set differs from its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.tensors[i].shape() != c.param_shapes[i]) {
      throw IntegrityError("checkpoint: shape mismatch for " + c.param_names[i]);
    }
    auto dst = params.tensors[i].mutable_data();
    std::copy(c.param_values[i].begin(), c.param_values[i].end(), dst.begin());
  }
  return m;
}

// ---- checkpoint format -------------------------------------------------------
//
// Little-endian binary: magic, scalar width, strings as u64 length + bytes,
// tensors as name, rank, dims, values.

namespace {

constexpr char kMagic[8] = {'H', 'V', 'L', 'C', 'K', 'P', 'T', '1'};

struct Writer {
  std::string buf;
  template <typename T>
  void pod(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf += s;
  }
  void scalars(const std::vector<Scalar>& v) {
    pod<std::uint64_t>(v.size());
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(Scalar));
  }
  void adam(const ad::AdamWState& s) {
    pod(s.config.lr);
    pod(s.config.beta1);
    pod(s.config.beta2);
    pod(s.config.eps);
    pod(s.config.weight_decay);
    pod<std::int64_t>(s.step);
    pod<std::uint64_t>(s.first_moment.size());
    for (std::size_t i = 0; i < s.first_moment.size(); ++i) {
      scalars(s.first_moment[i]);
      scalars(s.second_moment[i]);
    }
  }
};

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (pos + n > buf.size()) throw IntegrityError("checkpoint: truncated at byte " + std::to_string(pos));
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str() {
    auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<Scalar> scalars() {
    auto n = pod<std::uint64_t>();
    need(n * sizeof(Scalar));
    std::vector<Scalar> v(n);
    std::memcpy(v.data(), buf.data() + pos, n * sizeof(Scalar));
    pos += n * sizeof(Scalar);
    return v;
  }
  ad::AdamWState adam() {
    ad::AdamWState s;
    s.config.lr = pod<double>();
    s.config.beta1 = pod<double>();
    s.config.beta2 = pod<double>();
    s.config.eps = pod<double>();
    s.config.weight_decay = pod<double>();
    s.step = pod<std::int64_t>();
    auto n = pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      s.first_moment.push_back(scalars());
      s.second_moment.push_back(scalars());
    }
    return s;
  }
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.buf.append(kMagic, sizeof kMagic);
  w.pod<std::uint8_t>(sizeof(Scalar));
  w.str(c.config_json);
  w.str(c.config_hash);
  w.pod<std::int64_t>(c.step);
  w.str(c.rng_state);
  w.pod<std::uint64_t>(c.param_names.size());
  for (std::size_t i = 0; i < c.param_names.size(); ++i) {
    w.str(c.param_names[i]);
    w.pod<std::uint64_t>(c.param_shapes[i].size());
    for (auto d : c.param_shapes[i]) w.pod<std::uint64_t>(d);
    w.scalars(c.param_values[i]);
  }
  w.adam(c.encoder_opt);
  w.adam(c.aggregator_opt);
  return w.buf;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IntegrityError("checkpoint: bad magic");
  }
  Reader r{bytes, sizeof kMagic};
  if (r.pod<std::uint8_t>() != sizeof(Scalar)) {
    throw IntegrityError("checkpoint: scalar width differs from this build");
  }
  Checkpoint c;
  c.config_json = r.str();
  c.config_hash = r.str();
  c.step = r.pod<std::int64_t>();
  c.rng_state = r.str();
  auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    c.param_names.push_back(r.str());
    ad::Shape s(r.pod<std::uint64_t>());
    for (auto& d : s) d = r.pod<std::uint64_t>();
    c.param_shapes.push_back(s);
    c.param_values.push_back(r.scalars());
    if (ad::numel(s) != c.param_values.back().size()) {
      throw IntegrityError("checkpoint: tensor " + c.param_names.back() + " has inconsistent size");
    }
  }
  c.encoder_opt = r.adam();
  c.aggregator_opt = r.adam();
  if (r.pos != bytes.size()) throw IntegrityError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot write checkpoint " + path);
  out << serialize_checkpoint(c);
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

std::string step_record_json(const StepRecord& r, bool include_wall) {
  json j;
  j["step"] = r.step;
  j["level"] = r.level == Level::Child ? "child" : "parent";
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["wall_ms"] = include_wall ? r.wall_ms : 0.0;
  return j.dump();
}

// ---- trainer -----------------------------------------------------------------

Trainer::Trainer(TrainConfig config, const corpus::Corpus& corpus)
    : config_(std::move(config)), corpus_(corpus), model_(HierModel::create(config_)) {
  encoder_params_ = model_.encoder_parameters();
  aggregator_params_ = model_.aggregator_parameters();
  ad::AdamWConfig opt;
  opt.lr = config_.lr;
  opt.weight_decay = config_.weight_decay;
  encoder_opt_ = ad::make_adamw_state(encoder_params_, opt);
  aggregator_opt_ = ad::make_adamw_state(aggregator_params_, opt);
  std::seed_seq seq{std::uint32_t(config_.seed), std::uint32_t(config_.seed >> 32), 0x5eedu};
  rng_.seed(seq);
  if (!config_.init_checkpoint.empty()) {
    load_parameters(load_checkpoint(config_.init_checkpoint));
    init_ref_ = "sha1:" + git_blob_hash(read_file(config_.init_checkpoint));
  }
}

std::size_t Trainer::epoch_steps() const {
  const std::size_t n = corpus_.videos.size();
  return std::max<std::size_t>(1, (n + config_.child_batch_size - 1) / config_.child_batch_size);
}

Level Trainer::next_level() const {
  if (!config_.has_parent_steps()) return Level::Child;
  if (!config_.has_child_steps()) return Level::Parent;
  const auto s = static_cast<std::size_t>(step_);
  if (config_.schedule == ScheduleKind::PerStep) {
    return s % (config_.m + 1) < config_.m ? Level::Child : Level::Parent;
  }
  const std::size_t child_run = config_.m * epoch_steps();
  return s % (child_run + 1) < child_run ? Level::Child : Level::Parent;
}

double Trainer::finish_step(const Tensor& loss, Level level, bool update_aggregator) {
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw TrainingAborted("non-finite loss at step " + std::to_string(step_));
  }
  ad::backward(loss);
  const std::size_t n_clip = model_.clip.parameters().size();
  double clip_ss = 0, text_ss = 0;
  for (std::size_t i = 0; i < encoder_params_.size(); ++i) {
    if (!encoder_params_.tensors[i].has_grad()) continue;
    double ss = 0;
    for (Scalar g : encoder_params_.tensors[i].grad()) ss += double(g) * double(g);
    (i < n_clip ? clip_ss : text_ss) += ss;
  }
  grad_norms_.clip = std::sqrt(clip_ss);
  grad_norms_.text = std::sqrt(text_ss);
  grad_norms_.aggregator = aggregator_params_.grad_norm();

  ad::adamw_step(encoder_params_, encoder_opt_);
  if (update_aggregator && aggregator_params_.size() > 0) {
    ad::adamw_step(aggregator_params_, aggregator_opt_);
  }
  encoder_params_.zero_grad();
  aggregator_params_.zero_grad();
  losses_.push_back(value);
  (void)level;
  return value;
}

namespace {

std::string history_tail(const std::vector<double>& h) {
  std::ostringstream os;
  os << '[';
  std::size_t from = h.size() > 10 ? h.size() - 10 : 0;
  for (std::size_t i = from; i < h.size(); ++i) os << (i > from ? "," : "") << h[i];
  os << ']';
  return os.str();
}

}  // namespace

StepRecord Trainer::train_step_child(const corpus::RawChildBatch& batch) {
  if (!config_.has_child_steps()) {
    throw ContractError("mode " + to_string(config_.mode) + " has no child-level training");
  }
  StepRecord rec{step_, Level::Child, 0, config_.lr, 0};
  try {
    objectives::ChildBatch cb{model_.clip.forward(batch.clips), model_.text.forward(batch.narrations),
                              batch.positive_mask};
    Tensor loss = objectives::child_loss(cb, objectives::Temperature(config_.tau), config_.one_sided);
    rec.loss = finish_step(loss, Level::Child, false);
  } catch (const NumericError& e) {
    throw TrainingAborted("child step " + std::to_string(step_) + " (videos " +
                          batch.video_ids.front() + "...): " + e.what() + "; loss history " +
                          history_tail(losses_));
  } catch (const TrainingAborted& e) {
    throw TrainingAborted(std::string(e.what()) + "; loss history " + history_tail(losses_));
  }
  ++step_;
  return rec;
}

StepRecord Trainer::train_step_parent(const corpus::RawParentBatch& batch) {
  if (!config_.has_parent_steps()) {
    throw ContractError("mode " + to_string(config_.mode) + " has no parent-level training");
  }
  StepRecord rec{step_, Level::Parent, 0, config_.lr, 0};
  const objectives::Temperature tau(config_.tau);
  const std::size_t b = batch.num_videos();
  const std::size_t k = batch.clips_per_video;
  const std::size_t e = config_.encoder.embed_dim;
  try {
    Tensor loss;
    if (config_.mode == Mode::WoHier) {
      // The summary stands in for the narration of one random clip per video.
      std::vector<model::ClipInput> clips;
      for (std::size_t v = 0; v < b; ++v) {
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        clips.push_back(batch.clips[v * k + pick(rng_)]);
      }
      objectives::ChildBatch cb{model_.clip.forward(clips), model_.text.forward(batch.summaries),
                                batch.positive_mask};
      loss = objectives::child_loss(cb, tau, config_.one_sided);
      rec.loss = finish_step(loss, Level::Parent, false);
    } else {
      objectives::ParentBatch pb;
      pb.positive_mask = batch.positive_mask;
      pb.videos = model_.agg.forward(ad::reshape(model_.clip.forward(batch.clips), {b, k, e}));
      const bool need_narr = config_.mode != Mode::WoSummNarr && config_.mode != Mode::WoJoint;
      const bool need_summary = config_.mode != Mode::WoSumm;
      if (need_narr) {
        pb.narrations = model_.agg.forward(ad::reshape(model_.text.forward(batch.narrations), {b, k, e}));
      }
      if (need_summary) pb.summaries = model_.text.forward(batch.summaries);
      switch (config_.mode) {
        case Mode::WoSumm:
          loss = objectives::parent_loss_no_summary(pb, tau);
          break;
        case Mode::WoSummNarr:
        case Mode::WoJoint:
          loss = objectives::parent_loss(pb, tau, false);
          break;
        default:
          loss = objectives::parent_loss(pb, tau, true);
      }
      rec.loss = finish_step(loss, Level::Parent, true);
    }
  } catch (const NumericError& e) {
    throw TrainingAborted("parent step " + std::to_string(step_) + " (videos " +
                          batch.video_ids.front() + "...): " + e.what() + "; loss history " +
                          history_tail(losses_));
  }
  ++step_;
  return rec;
}

StepRecord Trainer::step() {
  if (next_level() == Level::Child) {
    return train_step_child(corpus::build_child_batch(corpus_, config_.child_batch_size, rng_));
  }
  return train_step_parent(corpus::build_parent_batch(corpus_, config_.parent_videos_per_batch,
                                                      config_.clips_per_video, rng_));
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  TrainConfig stored = config_;
  stored.init_checkpoint = init_ref_;
  c.config_json = config_to_json(stored);
  c.config_hash = config_hash(config_);
  c.step = step_;
  std::ostringstream os;
  os << rng_;
  c.rng_state = os.str();
  auto params = model_.all_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.param_names.push_back(params.names[i]);
    c.param_shapes.push_back(params.tensors[i].shape());
    auto d = params.tensors[i].data();
    c.param_values.emplace_back(d.begin(), d.end());
  }
  c.encoder_opt = encoder_opt_;
  c.aggregator_opt = aggregator_opt_;
  return c;
}

void Trainer::load_parameters(const Checkpoint& ckpt) {
  auto params = model_.all_parameters();
  for (std::size_t i = 0; i < ckpt.param_names.size(); ++i) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (params.names[p] != ckpt.param_names[i]) continue;
      if (params.tensors[p].shape() != ckpt.param_shapes[i]) {
        throw IntegrityError("checkpoint: shape mismatch for " + ckpt.param_names[i]);
      }
      auto dst = params.tensors[p].mutable_data();
      std::copy(ckpt.param_values[i].begin(), ckpt.param_values[i].end(), dst.begin());
    }
  }
}

void Trainer::restore(const Checkpoint& ckpt) {
  const std::string mine = config_hash(config_);
  if (ckpt.config_hash != mine) {
    throw ContractError("refusing to resume: checkpoint config hash " + ckpt.config_hash +
                        " differs from " + mine);
  }
  auto params = model_.all_parameters();
  if (ckpt.param_names != params.names) throw IntegrityError("checkpoint: parameter set differs");
  load_parameters(ckpt);
  auto check_opt = [](const ad::AdamWState& s, const ad::ParamList& p) {
    if (s.first_moment.size() != p.size()) throw IntegrityError("checkpoint: optimizer state mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (s.first_moment[i].size() != p.tensors[i].numel()) {
        throw IntegrityError("checkpoint: optimizer moment shape mismatch");
      }
    }
  };
  check_opt(ckpt.encoder_opt, encoder_params_);
  check_opt(ckpt.aggregator_opt, aggregator_params_);
  encoder_opt_ = ckpt.encoder_opt;
  aggregator_opt_ = ckpt.aggregator_opt;
  std::istringstream is(ckpt.rng_state);
  is >> rng_;
  if (!is) throw IntegrityError("checkpoint: bad RNG state");
  step_ = ckpt.step;
}

RunResult run_schedule(const TrainConfig& config, const corpus::Corpus& corpus,
                       const std::string& run_dir, const Checkpoint* resume) {
  namespace fs = std::filesystem;
  Trainer trainer(config, corpus);
  if (resume) trainer.restore(*resume);
  std::ofstream metrics_out;
  std::ofstream timing_out;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    std::ofstream(fs::path(run_dir) / "config.json") << config_to_json(config) << '\n';
    const auto mode = std::ios::trunc;
    metrics_out.open(fs::path(run_dir) / "metrics.jsonl", std::ios::binary | mode);
    timing_out.open(fs::path(run_dir) / "timing.jsonl", std::ios::binary | mode);
    if (!metrics_out || !timing_out) throw PathError("cannot write metrics under " + run_dir);
  }
  RunResult result;
  while (static_cast<std::size_t>(trainer.steps_done()) < config.total_steps) {
    auto t0 = std::chrono::steady_clock::now();
    StepRecord rec = trainer.step();
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(rec);
    result.trace.push_back(rec.level == Level::Child ? 'C' : 'P');
    if (metrics_out.is_open()) {
      metrics_out << step_record_json(rec, !config.strict_determinism) << '\n';
      timing_out << step_record_json(rec, true) << '\n';
    }
    const auto done = static_cast<std::size_t>(trainer.steps_done());
    if (!run_dir.empty() && config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
      save_checkpoint(trainer.checkpoint(),
                      (fs::path(run_dir) / ("ckpt_" + std::to_string(done) + ".bin")).string());
    }
  }
  result.final_checkpoint = trainer.checkpoint();
  if (!run_dir.empty()) {
    save_checkpoint(result.final_checkpoint, (fs::path(run_dir) / "final.bin").string());
  }
  return result;
}

}  // namespace hiervl::train
