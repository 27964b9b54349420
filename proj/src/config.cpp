#include "protoblend/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "protoblend/data.hpp"

namespace protoblend {

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.iterations = 2000;
  c.batch_size = 8;
  return c;
}

TrainConfig TrainConfig::profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown profile '" + name + "' (desk, paper)");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  need(batch_size >= 2 && batch_size % 2 == 0, "train.batch_size must be even and >= 2");
  need(lr > 0.0, "optim.lr must be > 0");
  need(weight_decay >= 0.0, "optim.weight_decay must be >= 0");
  need(momentum >= 0.0 && momentum < 1.0, "optim.momentum must be in [0, 1)");
  need(lr_schedule == "constant" || lr_schedule == "poly", "optim.schedule must be constant or poly");
  need(alpha >= 0.0 && beta >= 0.0 && ramp_w_max >= 0.0, "loss weights must be >= 0");
  need(ramp_fraction > 0.0, "ramp.fraction must be > 0");
  need(tau > 0.0, "contrast.tau must be > 0");
  need(bank_size >= 1, "contrast.bank_size must be >= 1");
  need(similarity == "cosine" || similarity == "dot", "contrast.similarity must be cosine or dot");
  need(ema_gamma > 0.0 && ema_gamma < 1.0, "ema.gamma must be in (0, 1)");
  need(sdb_eps > 0.0, "sdb.eps must be > 0");
  need(base_width >= 1 && proj_dim >= 1, "model widths must be >= 1");
  EtaDistribution::parse(eta);
}

double TrainConfig::ramp_t() const {
  if (ramp_length > 0) return static_cast<double>(ramp_length);
  return std::max(1.0, std::round(ramp_fraction * static_cast<double>(iterations)));
}

double TrainConfig::lr_at(std::uint64_t t) const {
  if (lr_schedule == "poly" && iterations > 0) {
    return lr * std::pow(1.0 - static_cast<double>(std::min(t, iterations)) / static_cast<double>(iterations), poly_power);
  }
  return lr;
}

ContrastOptions TrainConfig::contrast_options() const {
  return {tau, similarity == "dot" ? Similarity::kDot : Similarity::kCosine};
}

std::vector<std::pair<std::string, TrainConfig::Field>> TrainConfig::fields() {
  return {
      {"data.root", &data_root},
      {"run.dir", &run_dir},
      {"run.checkpoint_every", &checkpoint_every},
      {"run.eval_every", &eval_every},
      {"train.iterations", &iterations},
      {"train.batch_size", &batch_size},
      {"train.seed", &seed},
      {"optim.lr", &lr},
      {"optim.weight_decay", &weight_decay},
      {"optim.momentum", &momentum},
      {"optim.schedule", &lr_schedule},
      {"optim.poly_power", &poly_power},
      {"loss.alpha", &alpha},
      {"loss.beta", &beta},
      {"loss.dice_background", &dice_background},
      {"ramp.w_max", &ramp_w_max},
      {"ramp.fraction", &ramp_fraction},
      {"ramp.length", &ramp_length},
      {"contrast.tau", &tau},
      {"contrast.bank_size", &bank_size},
      {"contrast.similarity", &similarity},
      {"contrast.weighted_aggregate", &weighted_aggregate},
      {"ema.gamma", &ema_gamma},
      {"sdb.eps", &sdb_eps},
      {"sdb.eta", &eta},
      {"augment.weak.rotate", &weak.rotate},
      {"augment.weak.flip_p", &weak.flip_p},
      {"augment.strong.brightness_p", &strong.brightness_p},
      {"augment.strong.brightness_scale_lo", &strong.brightness_scale_lo},
      {"augment.strong.brightness_scale_hi", &strong.brightness_scale_hi},
      {"augment.strong.brightness_shift_lo", &strong.brightness_shift_lo},
      {"augment.strong.brightness_shift_hi", &strong.brightness_shift_hi},
      {"augment.strong.contrast_p", &strong.contrast_p},
      {"augment.strong.contrast_lo", &strong.contrast_lo},
      {"augment.strong.contrast_hi", &strong.contrast_hi},
      {"augment.strong.blur_p", &strong.blur_p},
      {"augment.strong.blur_sigma_lo", &strong.blur_sigma_lo},
      {"augment.strong.blur_sigma_hi", &strong.blur_sigma_hi},
      {"model.base_width", &base_width},
      {"model.proj_dim", &proj_dim},
      {"model.backbone_norm", &backbone_norm},
      {"model.bn_momentum", &bn_momentum},
      {"flags.sdb_on", &flags.sdb_on},
      {"flags.con_on", &flags.con_on},
      {"flags.ctr_on", &flags.ctr_on},
      {"flags.bank_on", &flags.bank_on},
      {"flags.ctr_w_on", &flags.ctr_w_on},
      {"flags.ctr_s_on", &flags.ctr_s_on},
      {"flags.pixel_s2w_on", &flags.pixel_s2w_on},
      {"eval.use_student", &eval_student},
      {"eval.symmetric_asd", &symmetric_asd},
  };
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  TrainConfig copy = *this;
  for (auto& [key, field] : copy.fields()) {
    std::visit([&, k = key](auto* p) { j[k] = *p; }, field);
  }
  return j;
}

void TrainConfig::apply(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  auto table = fields();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "profile") continue;
    auto f = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == it.key(); });
    if (f == table.end()) throw std::invalid_argument("unknown config key '" + it.key() + "'");
    try {
      std::visit([&](auto* p) { *p = it->get<std::remove_pointer_t<decltype(p)>>(); }, f->second);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config key '" + it.key() + "': " + e.what());
    }
  }
}

std::uint64_t TrainConfig::digest() const {
  nlohmann::json j = to_json();
  for (const char* k : {"run.dir", "run.checkpoint_every", "run.eval_every", "data.root"}) j.erase(k);
  const std::string text = j.dump();
  return fnv1a64(std::vector<std::uint8_t>(text.begin(), text.end()));
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  const nlohmann::json j = nlohmann::json::parse(in);
  TrainConfig c = TrainConfig::profile(j.value("profile", std::string("desk")));
  c.apply(j);
  c.validate();
  return c;
}

}  // namespace protoblend
