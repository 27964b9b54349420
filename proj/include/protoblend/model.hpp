#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "protoblend/graph.hpp"
#include "protoblend/ops.hpp"

namespace protoblend {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 4;
  std::size_t base_width = 16;  // encoder level 1; level 2 uses twice this
  std::size_t proj_dim = 32;    // D, channels of the projection embedding
  std::size_t height = 64;
  std::size_t width = 64;
  bool backbone_norm = true;    // batch norm after each backbone conv
  bool zero_init_seg_head = false;
  double bn_momentum = 0.9;
};

enum class Mode { kTrain, kEval };

struct Conv {
  Parameter weight;
  Parameter bias;
  std::size_t padding = 0;
};

struct Norm {
  Parameter gamma;
  Parameter beta;
  ops::BatchNormState state;
};

// Two-level U-Net backbone with a 1x1 segmentation head and a projection head
// of three Conv(1x1)-ReLU-BN blocks.
class SegModel {
 public:
  SegModel() = default;
  SegModel(ModelConfig config, std::uint64_t seed);

  struct Outputs {
    Var logits;     // [N, C, H, W]
    Var embedding;  // [N, D, H, W]
  };

  // images: [N, in_channels, H, W]. With `trainable` false the parameters
  // enter the graph as constants (no gradient reaches them).
  Outputs forward(Graph& g, const Tensor& images, Mode mode, bool trainable = true);

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Running statistics of every norm layer, in a fixed order.
  std::vector<ops::BatchNormState*> norm_states();
  std::vector<const ops::BatchNormState*> norm_states() const;
  std::size_t parameter_count() const;

  void zero_grad();

 private:
  Var conv(Graph& g, Conv& c, Var x, bool trainable);
  Var norm(Graph& g, Norm& n, Var x, Mode mode, bool trainable);
  Var block(Graph& g, Conv& c, Norm* n, Var x, Mode mode, bool trainable);

  ModelConfig config_;
  Conv enc1a_, enc1b_, enc2a_, enc2b_, dec1_, dec2_;
  Norm enc1a_n_, enc1b_n_, enc2a_n_, enc2b_n_, dec1_n_, dec2_n_;
  Conv seg_;
  Conv proj1_, proj2_, proj3_;
  Norm proj1_n_, proj2_n_, proj3_n_;
};

// Single-image convenience: image [in_channels, H, W] -> logits [C, H, W] and
// embedding [D, H, W] values. Throws std::invalid_argument on a channel count
// or spatial size that does not match the model configuration.
struct FeatureMaps {
  Tensor logits;
  Tensor embedding;
};
FeatureMaps forward_features(SegModel& model, const Tensor& image, Mode mode = Mode::kEval);

// Per-pixel argmax of the class probabilities of `logits` [N, C, H, W] (or
// [C, H, W]); exact ties resolve to the lowest class index. Returns labels in
// (n, i, j) raster order.
std::vector<int> argmax_classes(const Tensor& scores);

// Evaluation-mode hard prediction of one image [in_channels, H, W]: [H, W]
// class indices.
Tensor hard_prediction(SegModel& model, const Tensor& image);

// EMA copy of a student. Parameters change only through ema_update.
class TeacherModel {
 public:
  TeacherModel() = default;
  TeacherModel(const SegModel& student, double gamma);

  // theta_bar <- gamma * theta_bar + (1 - gamma) * theta for every parameter;
  // norm running statistics are copied from the student.
  void ema_update(const SegModel& student);
  void ema_update(const SegModel& student, double gamma);

  SegModel& model() { return model_; }
  const SegModel& model() const { return model_; }
  double gamma() const { return gamma_; }

 private:
  SegModel model_;
  double gamma_ = 0.99;
};

}  // namespace protoblend
