#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoblend/config.hpp"
#include "protoblend/contrast.hpp"
#include "protoblend/data.hpp"
#include "protoblend/metrics.hpp"
#include "protoblend/model.hpp"
#include "protoblend/objectives.hpp"
#include "protoblend/optim.hpp"

namespace protoblend {

struct StepReport {
  std::uint64_t iteration = 0;
  LossParts parts;
  double lr = 0.0;
};

inline constexpr const char* kLogHeader = "iteration,L_sup,L_con,L_ctr,lambda,lr,L_pixel,total";
std::string log_row(const StepReport& r);

// Randomness of iteration t comes from derive_seed(seed, t, tag[, j]) with
// one tag per stream; j indexes the image within the batch.
enum StreamTag : std::uint64_t { kLabeledWeak = 1, kBlend, kUnlabeledWeak, kUnlabeledStrong };

// Keeps glibc from returning large tensor buffers to the kernel after every
// free; repeated page faults otherwise dominate small-model training.
void tune_allocator();

// Owns the student, EMA teacher, optimizer and prototype bank of one run.
// All randomness of iteration t is derived from (seed, t), so the state is
// fully described by the iteration counter plus the tensors.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Sample> labeled, std::vector<Sample> unlabeled, std::size_t classes);

  // Runs iteration iteration() and advances the counter.
  StepReport step();

  std::uint64_t iteration() const { return t_; }
  const TrainConfig& config() const { return cfg_; }
  SegModel& student() { return student_; }
  TeacherModel& teacher() { return teacher_; }
  PrototypeBank& bank() { return bank_; }
  Sgd& optimizer() { return sgd_; }

  void save(const std::filesystem::path& path) const;
  // Restores a checkpoint written by save(). A config digest mismatch prints
  // a warning; structural mismatches throw.
  void load(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  std::vector<Sample> labeled_, unlabeled_;
  std::size_t h_ = 0, w_ = 0, classes_ = 0;
  SegModel student_;
  TeacherModel teacher_;
  Sgd sgd_;
  PrototypeBank bank_;
  BatchStream stream_;
  RampUp ramp_;
  std::uint64_t t_ = 0;
};

// Hard predictions of `model` in evaluation mode, one [H*W] label map per
// sample.
std::vector<std::vector<int>> predict(SegModel& model, const std::vector<Sample>& samples);
MetricReport evaluate(SegModel& model, const std::vector<Sample>& samples, bool symmetric_asd = false);

struct CheckpointInfo {
  std::uint64_t iteration = 0;
  std::uint64_t digest = 0;
  nlohmann::json meta;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::optional<MetricReport> report;  // absent when no iteration ran
  std::vector<StepReport> steps;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::optional<std::uint64_t> stop_at;  // stop early without changing the schedule
  bool quiet = true;
};

// Full run: loads the dataset under cfg.data_root, writes config.json,
// train_log.csv, periodic and final checkpoints and test-split reports into
// cfg.run_dir.
TrainResult train(const TrainConfig& cfg, const TrainOptions& opt = {});

// Evaluates a checkpoint (teacher unless cfg.eval_student) on a split.
MetricReport evaluate_checkpoint(const std::filesystem::path& ckpt, const std::string& split,
                                 const std::optional<std::string>& data_root = std::nullopt,
                                 std::optional<bool> use_student = std::nullopt);

struct AblationRow {
  std::string label;
  std::uint64_t seed = 0;
  nlohmann::json overrides;
  MetricReport report;
};

// Grid: {"name": ..., "base": {...}, "seeds": [...],
//        "axes": {"key": [values...], ...}}   cartesian product, or
//        "rows": [{"label": ..., "set": {...}}, ...]
// Every row is trained from `base_cfg` plus the grid's base and the row's
// overrides, in <out_dir>/row<i>_s<seed>. Axes vary in key order, the last
// key fastest.
std::vector<AblationRow> ablate(const TrainConfig& base_cfg, const nlohmann::json& grid,
                                const std::filesystem::path& out_dir, bool quiet = true);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace protoblend
