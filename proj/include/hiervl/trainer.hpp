#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hiervl/aggregation.hpp"
#include "hiervl/corpus.hpp"
#include "hiervl/objectives.hpp"
#include "hiervl/optim.hpp"

namespace hiervl::train {

using model::Scalar;

enum class Mode { HierVL_SA, HierVL_Avg, ChildOnly, WoJoint, WoHier, WoSumm, WoSummNarr };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);
const std::vector<Mode>& all_modes();

// Whether the parent step follows every m child steps or every m child epochs.
enum class ScheduleKind { PerStep, PerEpoch };

struct TrainConfig {
  Mode mode = Mode::HierVL_SA;
  std::size_t m = 5;
  std::size_t child_batch_size = 16;
  std::size_t parent_videos_per_batch = 8;
  std::size_t clips_per_video = 16;  // K
  double lr = 1e-3;
  double weight_decay = 0.01;
  double tau = 0.05;
  std::size_t total_steps = 600;
  std::uint64_t seed = 0;
  bool strict_determinism = true;
  bool one_sided = false;
  ScheduleKind schedule = ScheduleKind::PerStep;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string init_checkpoint;       // WoJoint starts from a ChildOnly checkpoint; saved as "sha1:<hash>"
  model::EncoderConfig encoder;
  model::AggregatorConfig aggregator;

  void validate() const;
  // Aggregator actually used by this mode (ChildOnly/WoHier fall back to averaging).
  model::AggregatorKind effective_aggregator() const;
  bool has_child_steps() const;
  bool has_parent_steps() const;
};

std::string config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const std::string& json);
/// Hash over every field that shapes the trajectory; total_steps,
/// checkpoint_every and init_checkpoint are excluded so a run can be extended.
std::string config_hash(const TrainConfig& c);

/// f_v, f_n and Agg of one run.
struct HierModel {
  model::ClipEncoder clip;
  model::TextEncoder text;
  model::Aggregator agg;

  static HierModel create(const TrainConfig& config);
  ad::ParamList encoder_parameters() const;  // "clip.*" then "text.*"
  ad::ParamList aggregator_parameters() const;  // "agg.*"
  ad::ParamList all_parameters() const;
};

struct Checkpoint {
  std::string config_json;
  std::string config_hash;
  std::int64_t step = 0;
  std::string rng_state;
  std::vector<std::string> param_names;
  std::vector<ad::Shape> param_shapes;
  std::vector<std::vector<Scalar>> param_values;
  ad::AdamWState encoder_opt;
  ad::AdamWState aggregator_opt;
};

/// Rebuilds the model recorded in a checkpoint with its parameter values.
HierModel model_from_checkpoint(const Checkpoint& c);

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

enum class Level { Child, Parent };

struct StepRecord {
  std::int64_t step = 0;
  Level level = Level::Child;
  double loss = 0;
  double lr = 0;
  double wall_ms = 0;
};

std::string step_record_json(const StepRecord& r, bool include_wall);

struct GradNorms {
  double clip = 0;
  double text = 0;
  double aggregator = 0;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const corpus::Corpus& corpus);

  StepRecord train_step_child(const corpus::RawChildBatch& batch);
  StepRecord train_step_parent(const corpus::RawParentBatch& batch);
  // Next step of the schedule, drawing its batch from the trainer's RNG.
  StepRecord step();
  Level next_level() const;

  Checkpoint checkpoint() const;
  // Refuses checkpoints whose config hash differs from this run's.
  void restore(const Checkpoint& ckpt);
  // Copies parameter values by name; names missing from `ckpt` keep their init.
  void load_parameters(const Checkpoint& ckpt);

  const HierModel& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::int64_t steps_done() const { return step_; }
  const GradNorms& last_grad_norms() const { return grad_norms_; }
  const std::vector<double>& loss_history() const { return losses_; }

 private:
  double finish_step(const ad::Tensor& loss, Level level, bool update_aggregator);
  std::size_t epoch_steps() const;

  TrainConfig config_;
  const corpus::Corpus& corpus_;
  HierModel model_;
  ad::ParamList encoder_params_;
  ad::ParamList aggregator_params_;
  ad::AdamWState encoder_opt_;
  ad::AdamWState aggregator_opt_;
  std::mt19937_64 rng_;
  std::string init_ref_;  // "sha1:<blob hash>" of init_checkpoint
  std::int64_t step_ = 0;
  GradNorms grad_norms_;
  std::vector<double> losses_;
};

struct RunResult {
  Checkpoint final_checkpoint;
  std::vector<StepRecord> metrics;
  std::string trace;  // one char per step: 'C' child, 'P' parent
};

/// Runs the configured schedule to total_steps. With `run_dir` set, writes
/// config.json, metrics.jsonl (timings in timing.jsonl), periodic
/// ckpt_<step>.bin and final.bin. `resume` continues from a checkpoint of the
/// same config; the logs then hold only the steps after it.
RunResult run_schedule(const TrainConfig& config, const corpus::Corpus& corpus,
                       const std::string& run_dir = "", const Checkpoint* resume = nullptr);

}  // namespace hiervl::train
