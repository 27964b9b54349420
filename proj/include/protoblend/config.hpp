#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoblend/augment.hpp"
#include "protoblend/contrast.hpp"
#include "protoblend/sdb.hpp"

namespace protoblend {

struct Flags {
  bool sdb_on = true;
  bool con_on = true;
  bool ctr_on = true;
  bool bank_on = true;  // off: a bank of size 1
  bool ctr_w_on = true;
  bool ctr_s_on = true;
  bool pixel_s2w_on = false;
};

// Every hyperparameter of a run. Serialized as a flat JSON object with dotted
// keys ("optim.lr", "flags.sdb_on", ...).
struct TrainConfig {
  std::string data_root = "data";
  std::string run_dir = "runs/default";

  std::uint64_t iterations = 30000;
  std::uint64_t batch_size = 24;
  std::uint64_t seed = 0;

  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.0;
  std::string lr_schedule = "constant";  // or "poly"
  double poly_power = 0.9;

  double alpha = 0.1;
  double beta = 1.0;
  bool dice_background = true;

  double ramp_w_max = 1.0;
  double ramp_fraction = 0.4;  // of iterations, used when ramp_length is 0
  std::uint64_t ramp_length = 0;

  double tau = 1.0;
  std::uint64_t bank_size = 128;
  std::string similarity = "cosine";  // or "dot"
  bool weighted_aggregate = true;

  double ema_gamma = 0.99;

  double sdb_eps = kStyleEps;
  std::string eta = "uniform";

  WeakParams weak;
  StrongParams strong;

  std::uint64_t base_width = 16;
  std::uint64_t proj_dim = 32;
  bool backbone_norm = true;
  double bn_momentum = 0.9;

  Flags flags;

  std::uint64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t eval_every = 0;        // 0: only the final evaluation
  bool eval_student = false;
  bool symmetric_asd = false;

  static TrainConfig paper();  // the published schedule
  static TrainConfig desk();   // 2000 iterations, batch 8
  static TrainConfig profile(const std::string& name);

  void validate() const;
  double ramp_t() const;
  double lr_at(std::uint64_t t) const;
  std::uint64_t effective_bank_size() const { return flags.bank_on ? bank_size : 1; }
  ContrastOptions contrast_options() const;

  using Field = std::variant<double*, std::uint64_t*, bool*, std::string*>;
  std::vector<std::pair<std::string, Field>> fields();

  nlohmann::json to_json() const;
  // Applies the keys of `j` on top of this config; unknown keys throw.
  void apply(const nlohmann::json& j);
  // Digest of every key except paths and run bookkeeping (data.root, run.*).
  std::uint64_t digest() const;
};

// Reads {"profile": "...", <dotted keys>} from a file; the profile defaults
// to "desk".
TrainConfig load_config(const std::string& path);

}  // namespace protoblend
