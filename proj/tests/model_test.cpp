#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "protoblend/model.hpp"
#include "protoblend/ops.hpp"

using namespace protoblend;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_classes = 3;
  c.base_width = 4;
  c.proj_dim = 5;
  c.height = 8;
  c.width = 8;
  return c;
}

Parameter* find_param(SegModel& m, const std::string& name) {
  for (Parameter* p : m.parameters())
    if (p->name == name) return p;
  return nullptr;
}

}  // namespace

TEST(Model, ZeroInitHeadGivesUniformSoftmax) {
  ModelConfig c = tiny_config();
  c.zero_init_seg_head = true;
  SegModel m(c, 3);
  Rng rng(11);
  const Tensor x = oracle::random_tensor(rng, {2, 1, 8, 8}, 0.0, 1.0);
  Graph g;
  const auto out = m.forward(g, x, Mode::kTrain);
  for (double v : out.logits.value().data()) EXPECT_EQ(v, 0.0);
  const Tensor p = ops::softmax_channels(out.logits).value();
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Model, OutputShapes) {
  SegModel m(tiny_config(), 1);
  Graph g;
  const auto out = m.forward(g, Tensor(Shape{3, 1, 8, 8}, 0.5), Mode::kEval);
  EXPECT_EQ(out.logits.value().shape(), (Shape{3, 3, 8, 8}));
  EXPECT_EQ(out.embedding.value().shape(), (Shape{3, 5, 8, 8}));
}

TEST(Model, SameSeedSameInputIsBitIdentical) {
  Rng rng(5);
  const Tensor x = oracle::random_tensor(rng, {2, 1, 8, 8}, 0.0, 1.0);
  SegModel a(tiny_config(), 42), b(tiny_config(), 42);
  Graph ga, gb;
  const auto oa = a.forward(ga, x, Mode::kTrain);
  const auto ob = b.forward(gb, x, Mode::kTrain);
  EXPECT_EQ(oracle::values(oa.logits.value()), oracle::values(ob.logits.value()));
  EXPECT_EQ(oracle::values(oa.embedding.value()), oracle::values(ob.embedding.value()));
}

TEST(Model, FirstConvWeightGradientMatchesFiniteDifferences) {
  SegModel m(tiny_config(), 9);
  Rng rng(2);
  const Tensor x = oracle::random_tensor(rng, {2, 1, 8, 8}, 0.0, 1.0);
  Parameter* w = find_param(m, "enc1a.weight");
  ASSERT_NE(w, nullptr);
  auto loss_value = [&] {
    Graph g;
    return ops::sum(m.forward(g, x, Mode::kTrain, false).logits).value().item();
  };
  m.zero_grad();
  {
    Graph g;
    g.backward(ops::sum(m.forward(g, x, Mode::kTrain).logits));
  }
  const Tensor analytic = w->grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < w->value.numel(); ++i) {
    const double orig = w->value[i];
    w->value[i] = orig + 1e-5;
    const double up = loss_value();
    w->value[i] = orig - 1e-5;
    const double down = loss_value();
    w->value[i] = orig;
    worst = std::max(worst, oracle::rel_err(analytic[i], (up - down) / 2e-5));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Model, NonTrainableForwardLeavesNoGradient) {
  SegModel m(tiny_config(), 4);
  m.zero_grad();
  Graph g;
  Var in = g.leaf(Tensor(Shape{2, 1, 8, 8}, 0.3));
  Tensor img(Shape{2, 1, 8, 8}, 0.3);
  const auto out = m.forward(g, img, Mode::kEval, false);
  Var loss = ops::add(ops::sum(out.logits), ops::sum(in));
  g.backward(loss);
  for (const Parameter* p : m.parameters())
    for (double v : p->grad.data()) ASSERT_EQ(v, 0.0) << p->name;
}

TEST(Model, DefaultDeskModelIsSmall) {
  SegModel m(ModelConfig{}, 0);
  EXPECT_LT(m.parameter_count(), 200000u);
  std::size_t n = 0;
  for (const Parameter* p : m.parameters()) n += p->value.numel();
  EXPECT_EQ(n, m.parameter_count());
}

TEST(Model, ForwardFeaturesRejectsWrongSize) {
  SegModel m(tiny_config(), 0);
  EXPECT_THROW(forward_features(m, Tensor(Shape{1, 6, 8})), std::invalid_argument);
  EXPECT_THROW(forward_features(m, Tensor(Shape{2, 8, 8})), std::invalid_argument);
  const FeatureMaps f = forward_features(m, Tensor(Shape{1, 8, 8}, 0.5));
  EXPECT_EQ(f.logits.shape(), (Shape{3, 8, 8}));
  EXPECT_EQ(f.embedding.shape(), (Shape{5, 8, 8}));
}

TEST(Ema, OneStepFromZeroTowardOne) {
  SegModel student(tiny_config(), 1);
  TeacherModel teacher(student, 0.99);
  for (Parameter* p : teacher.model().parameters()) p->value.fill(0.0);
  for (Parameter* p : student.parameters()) p->value.fill(1.0);
  teacher.ema_update(student);
  for (const Parameter* p : teacher.model().parameters())
    for (double v : p->value.data()) EXPECT_NEAR(v, 0.01, 1e-15);
}

TEST(Ema, ConstantStudentGeometricClosedForm) {
  SegModel student(tiny_config(), 1);
  TeacherModel teacher(student, 0.9);
  Rng rng(3);
  for (Parameter* p : teacher.model().parameters())
    for (double& v : p->value.data()) v = rng.uniform(-1, 1);
  std::vector<Tensor> start;
  for (const Parameter* p : teacher.model().parameters()) start.push_back(p->value);
  const int n = 25;
  for (int i = 0; i < n; ++i) teacher.ema_update(student);
  const auto tp = teacher.model().parameters();
  const auto sp = student.parameters();
  const double gn = std::pow(0.9, n);
  for (std::size_t k = 0; k < tp.size(); ++k)
    for (std::size_t i = 0; i < tp[k]->value.numel(); ++i) {
      const double s = sp[k]->value[i];
      EXPECT_NEAR(tp[k]->value[i], s + gn * (start[k][i] - s), 1e-12);
    }
}

TEST(Ema, RandomTrajectoryMatchesScalarLoopAndContracts) {
  SegModel student(tiny_config(), 1);
  TeacherModel teacher(student, 0.99);
  std::vector<Tensor> ref;
  for (const Parameter* p : teacher.model().parameters()) ref.push_back(p->value);
  Rng rng(8);
  for (int step = 0; step < 20; ++step) {
    for (Parameter* p : student.parameters())
      for (double& v : p->value.data()) v += rng.uniform(-0.1, 0.1);
    const auto before = teacher.model().parameters();
    std::vector<Tensor> old;
    for (const Parameter* p : before) old.push_back(p->value);
    teacher.ema_update(student);
    const auto tp = teacher.model().parameters();
    const auto sp = student.parameters();
    for (std::size_t k = 0; k < tp.size(); ++k)
      for (std::size_t i = 0; i < tp[k]->value.numel(); ++i) {
        const double s = sp[k]->value[i];
        ref[k][i] = 0.99 * ref[k][i] + (1.0 - 0.99) * s;
        ASSERT_NEAR(tp[k]->value[i], ref[k][i], 1e-15);
        ASSERT_LE(std::abs(tp[k]->value[i] - s), 0.99 * std::abs(old[k][i] - s) + 1e-15);
      }
  }
}

TEST(Ema, CopiesNormRunningStatistics) {
  SegModel student(tiny_config(), 1);
  TeacherModel teacher(student, 0.99);
  Graph g;
  student.forward(g, Tensor(Shape{2, 1, 8, 8}, 0.7), Mode::kTrain);
  teacher.ema_update(student);
  const auto s = student.norm_states();
  const auto t = teacher.model().norm_states();
  ASSERT_EQ(s.size(), t.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(oracle::values(s[i]->running_mean), oracle::values(t[i]->running_mean));
    EXPECT_EQ(oracle::values(s[i]->running_var), oracle::values(t[i]->running_var));
  }
}

TEST(Argmax, DominantClassEverywhere) {
  Tensor s(Shape{1, 4, 3, 3}, 0.0);
  for (std::size_t k = 0; k < 9; ++k) s[2 * 9 + k] = 5.0;
  for (int v : argmax_classes(s)) EXPECT_EQ(v, 2);
}

TEST(Argmax, TiesResolveToLowestClass) {
  Tensor s(Shape{1, 3, 1, 2}, 0.0);
  s[1 * 2 + 0] = 1.0;
  s[2 * 2 + 0] = 1.0;
  const auto a = argmax_classes(s);
  EXPECT_EQ(a[0], 1);
  EXPECT_EQ(a[1], 0);
}

TEST(Argmax, RandomScoresMatchPixelScan) {
  Rng rng(13);
  const Tensor s = oracle::random_tensor(rng, {3, 5, 4, 6});
  const auto a = argmax_classes(s);
  ASSERT_EQ(a.size(), 3u * 24u);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < 24; ++k) {
      int best = 0;
      for (int c = 1; c < 5; ++c)
        if (s[(b * 5 + c) * 24 + k] > s[(b * 5 + best) * 24 + k]) best = c;
      EXPECT_EQ(a[b * 24 + k], best);
    }
}
