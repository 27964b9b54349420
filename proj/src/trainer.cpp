#include "protoblend/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "protoblend/augment.hpp"
#include "protoblend/ops.hpp"
#include "protoblend/sdb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace protoblend {

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

std::string log_row(const StepReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.iteration << ',' << r.parts.sup << ',' << r.parts.con << ',' << r.parts.ctr << ','
     << r.parts.lambda << ',' << r.lr << ',' << r.parts.pixel << ',' << r.parts.total;
  return os.str();
}

namespace {

Tensor stack(const std::vector<Tensor>& images) {
  const std::size_t h = images.at(0).dim(0), w = images.at(0).dim(1);
  Tensor out(Shape{images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != Shape{h, w}) throw std::invalid_argument("images in a batch differ in size");
    std::copy_n(images[i].ptr(), h * w, out.ptr() + i * h * w);
  }
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t row = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = end - begin;
  Tensor out(s);
  std::copy_n(t.ptr() + begin * row, (end - begin) * row, out.ptr());
  return out;
}

ModelConfig model_config(const TrainConfig& cfg, std::size_t classes, std::size_t h, std::size_t w) {
  ModelConfig m;
  m.num_classes = classes;
  m.base_width = cfg.base_width;
  m.proj_dim = cfg.proj_dim;
  m.height = h;
  m.width = w;
  m.backbone_norm = cfg.backbone_norm;
  m.bn_momentum = cfg.bn_momentum;
  return m;
}

// ---- checkpoint encoding ----

constexpr char kMagic[8] = {'P', 'B', 'L', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("truncated checkpoint");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1u << 30)) throw std::runtime_error("corrupt checkpoint string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("truncated checkpoint");
  return s;
}

using Records = std::vector<std::pair<std::string, Tensor>>;

void add_model(Records& r, const std::string& prefix, const SegModel& m) {
  for (const Parameter* p : m.parameters()) r.emplace_back(prefix + p->name, p->value);
  const auto states = m.norm_states();
  for (std::size_t i = 0; i < states.size(); ++i) {
    r.emplace_back(prefix + "norm" + std::to_string(i) + ".running_mean", states[i]->running_mean);
    r.emplace_back(prefix + "norm" + std::to_string(i) + ".running_var", states[i]->running_var);
  }
}

void write_checkpoint(const fs::path& path, const json& meta, std::uint64_t digest, const Records& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os.write(kMagic, sizeof kMagic);
    put(os, kVersion);
    put(os, digest);
    put_string(os, meta.dump());
    put<std::uint64_t>(os, records.size());
    for (const auto& [name, t] : records) {
      put_string(os, name);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct Checkpoint {
  CheckpointInfo info;
  std::map<std::string, Tensor> tensors;
};

Checkpoint read_checkpoint(const fs::path& path, bool with_tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.info.digest = get<std::uint64_t>(is);
  ck.info.meta = json::parse(get_string(is));
  ck.info.iteration = ck.info.meta.at("iteration").get<std::uint64_t>();
  if (!with_tensors) return ck;
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw std::runtime_error("corrupt checkpoint tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated checkpoint tensor " + name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

Tensor take(std::map<std::string, Tensor>& m, const std::string& name, const Shape& shape) {
  auto it = m.find(name);
  if (it == m.end()) throw std::runtime_error("checkpoint lacks " + name);
  if (it->second.shape() != shape) {
    throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                             shape_str(shape));
  }
  Tensor t = std::move(it->second);
  m.erase(it);
  return t;
}

void restore_model(std::map<std::string, Tensor>& m, const std::string& prefix, SegModel& model) {
  for (Parameter* p : model.parameters()) p->value = take(m, prefix + p->name, p->value.shape());
  const auto states = model.norm_states();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string base = prefix + "norm" + std::to_string(i);
    states[i]->running_mean = take(m, base + ".running_mean", states[i]->running_mean.shape());
    states[i]->running_var = take(m, base + ".running_var", states[i]->running_var.shape());
  }
}

const char* view_name(View v) { return v == View::kWeak ? "weak" : "strong"; }

std::size_t image_extent(const std::vector<Sample>& s, std::size_t axis) {
  if (s.empty()) throw std::invalid_argument("no labeled samples to train on");
  return s.front().image.dim(axis);
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<Sample> labeled, std::vector<Sample> unlabeled, std::size_t classes)
    : cfg_(std::move(cfg)),
      labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      h_(image_extent(labeled_, 0)),
      w_(image_extent(labeled_, 1)),
      classes_(classes),
      student_(model_config(cfg_, classes, h_, w_), cfg_.seed),
      teacher_(student_, cfg_.ema_gamma),
      sgd_(SgdOptions{cfg_.lr, cfg_.weight_decay, cfg_.momentum}),
      bank_(classes, cfg_.proj_dim, cfg_.effective_bank_size()),
      stream_(labeled_.size(), unlabeled_.size(), cfg_.batch_size, cfg_.seed),
      ramp_{cfg_.ramp_w_max, cfg_.ramp_t()} {
  cfg_.validate();
  tune_allocator();
  for (const auto* set : {&labeled_, &unlabeled_})
    for (const Sample& s : *set)
      if (s.image.shape() != Shape{h_, w_}) throw std::invalid_argument("sample " + s.id + " differs in size");
  for (const Sample& s : labeled_)
    if (s.mask.size() != h_ * w_) throw std::invalid_argument("labeled sample " + s.id + " has no mask");
}

StepReport Trainer::step() {
  const std::uint64_t t = t_;
  const std::uint64_t seed = cfg_.seed;
  const Flags& f = cfg_.flags;
  const auto [li, ui_all] = stream_.indices(t);
  const std::vector<std::size_t> ui = unlabeled_.empty() ? std::vector<std::size_t>{} : ui_all;
  const std::size_t u = ui.size();
  const DiceOptions dice_opt{kDiceSmooth, cfg_.dice_background};

  // (1) weak-augmented labeled batch, optionally re-styled.
  std::vector<Tensor> l_images;
  std::vector<std::vector<int>> l_masks;
  for (std::size_t j = 0; j < li.size(); ++j) {
    const Sample& s = labeled_[li[j]];
    auto r = weak_augment(s.image, &s.mask, derive_seed(seed, t, kLabeledWeak, j), cfg_.weak);
    l_images.push_back(std::move(r.image));
    l_masks.push_back(std::move(r.mask));
  }
  std::vector<Tensor> u_raw;
  for (std::size_t idx : ui) u_raw.push_back(unlabeled_[idx].image);
  if (f.sdb_on && u > 0) {
    Rng rng(derive_seed(seed, t, kBlend));
    l_images = blend_batch(l_images, l_masks, u_raw, EtaDistribution::parse(cfg_.eta), rng, cfg_.sdb_eps).images;
  }
  std::vector<int> l_labels;
  for (const auto& m : l_masks) l_labels.insert(l_labels.end(), m.begin(), m.end());

  // (2) supervised branch.
  Graph g;
  auto lab = student_.forward(g, stack(l_images), Mode::kTrain);
  Var sup = supervised_loss(ops::softmax_channels(lab.logits), l_labels, dice_opt);

  // (3)-(4) unlabeled branch.
  Var con, ctr, pixel;
  BatchPrototypes proto_w, proto_s;
  const bool any_unsup = f.con_on || f.ctr_on || f.pixel_s2w_on;
  if (any_unsup && u > 0) {
    std::vector<Tensor> weak, strong;
    for (std::size_t j = 0; j < u; ++j) {
      weak.push_back(weak_augment(u_raw[j], nullptr, derive_seed(seed, t, kUnlabeledWeak, j), cfg_.weak).image);
      strong.push_back(strong_augment(weak.back(), derive_seed(seed, t, kUnlabeledStrong, j), cfg_.strong).image);
    }
    const bool student_weak = f.ctr_on || f.pixel_s2w_on;
    const bool teacher_strong = (f.ctr_on && f.ctr_s_on) || f.pixel_s2w_on;
    auto both = [&] {
      std::vector<Tensor> all = weak;
      all.insert(all.end(), strong.begin(), strong.end());
      return stack(all);
    };

    Tensor t_probs;
    {
      Graph tg;
      auto out = teacher_.model().forward(tg, teacher_strong ? both() : stack(weak), Mode::kEval, false);
      t_probs = ops::softmax_channels(out.logits).value();
    }
    const Tensor t_weak = slice_rows(t_probs, 0, u);
    const std::vector<int> y_weak = argmax_classes(t_weak);
    std::vector<int> y_strong;
    Tensor t_strong;
    if (teacher_strong) {
      t_strong = slice_rows(t_probs, u, 2 * u);
      y_strong = argmax_classes(t_strong);
    }

    auto so = student_.forward(g, student_weak ? both() : stack(strong), Mode::kTrain);
    Var probs = ops::softmax_channels(so.logits);
    Var p_strong = student_weak ? ops::slice_batch(probs, u, 2 * u) : probs;
    if (f.con_on) con = consistency_loss(p_strong, t_weak, dice_opt);
    if (f.pixel_s2w_on) pixel = consistency_loss(ops::slice_batch(probs, 0, u), t_strong, dice_opt);
    if (f.ctr_on) {
      Var z_weak = ops::slice_batch(so.embedding, 0, u);
      Var z_strong = ops::slice_batch(so.embedding, u, 2 * u);
      proto_w = estimate_prototypes(z_weak.value(), slice_rows(probs.value(), 0, u));
      proto_s = estimate_prototypes(z_strong.value(), slice_rows(probs.value(), u, 2 * u));
      const auto agg_w = bank_.aggregate_all(View::kWeak, cfg_.weighted_aggregate);
      const auto agg_s = bank_.aggregate_all(View::kStrong, cfg_.weighted_aggregate);
      ctr = cross_contrast_loss(z_weak, z_strong, agg_w, agg_s, y_weak, y_strong, cfg_.contrast_options(), f.ctr_w_on,
                                f.ctr_s_on)
                .total;
    }
  }

  // (5) total, backward, update.
  StepReport rep;
  rep.iteration = t;
  rep.lr = cfg_.lr_at(t);
  Var total = total_loss(sup, con, ctr, pixel, ramp_(static_cast<double>(t)), {cfg_.alpha, cfg_.beta}, rep.parts);
  student_.zero_grad();
  g.backward(total);
  const auto params = student_.parameters();
  sgd_.step(params, rep.lr);
  // (6) EMA, (7) bank.
  teacher_.ema_update(student_);
  if (f.ctr_on && u > 0) {
    bank_.push(View::kWeak, proto_w);
    bank_.push(View::kStrong, proto_s);
  }
  ++t_;
  return rep;
}

void Trainer::save(const fs::path& path) const {
  Records r;
  add_model(r, "student/", student_);
  add_model(r, "teacher/", teacher_.model());
  for (std::size_t i = 0; i < sgd_.velocity().size(); ++i) r.emplace_back("optim/velocity" + std::to_string(i), sgd_.velocity()[i]);
  for (View v : {View::kWeak, View::kStrong})
    for (std::size_t c = 0; c < bank_.classes(); ++c) {
      const auto& q = bank_.entries(v, c);
      for (std::size_t k = 0; k < q.size(); ++k) {
        const std::string base = std::string("bank/") + view_name(v) + "/" + std::to_string(c) + "/" + std::to_string(k);
        r.emplace_back(base, Tensor(Shape{q[k].proto.size()}, q[k].proto));
        r.emplace_back(base + "/weight", Tensor::scalar(q[k].weight));
      }
    }
  const ModelConfig& mc = student_.config();
  json meta{{"iteration", t_},
            {"config", cfg_.to_json()},
            {"model", {{"num_classes", mc.num_classes}, {"height", mc.height}, {"width", mc.width}}},
            {"bank", {{"classes", bank_.classes()}, {"dim", bank_.dim()}, {"capacity", bank_.capacity()}}},
            {"velocity", sgd_.velocity().size()}};
  write_checkpoint(path, meta, cfg_.digest(), r);
}

void Trainer::load(const fs::path& path) {
  Checkpoint ck = read_checkpoint(path, true);
  if (ck.info.digest != cfg_.digest()) {
    std::cerr << "warning: checkpoint " << path.string() << " was written with a different configuration\n";
  }
  auto& m = ck.tensors;
  restore_model(m, "student/", student_);
  restore_model(m, "teacher/", teacher_.model());
  const std::size_t nv = ck.info.meta.value("velocity", std::size_t{0});
  sgd_.velocity().clear();
  const auto params = student_.parameters();
  if (nv != 0 && nv != params.size()) throw std::runtime_error("checkpoint optimizer state does not match the model");
  for (std::size_t i = 0; i < nv; ++i) sgd_.velocity().push_back(take(m, "optim/velocity" + std::to_string(i), params[i]->value.shape()));
  bank_.clear();
  for (View v : {View::kWeak, View::kStrong})
    for (std::size_t c = 0; c < bank_.classes(); ++c)
      for (std::size_t k = 0;; ++k) {
        const std::string base = std::string("bank/") + view_name(v) + "/" + std::to_string(c) + "/" + std::to_string(k);
        if (!m.count(base)) break;
        Tensor p = take(m, base, Shape{bank_.dim()});
        const double w = take(m, base + "/weight", Shape{1}).item();
        bank_.push(v, c, std::vector<double>(p.data().begin(), p.data().end()), w);
      }
  if (!m.empty()) throw std::runtime_error("checkpoint has unexpected tensor " + m.begin()->first);
  t_ = ck.info.iteration;
}

CheckpointInfo read_checkpoint_info(const fs::path& path) { return read_checkpoint(path, false).info; }

std::vector<std::vector<int>> predict(SegModel& model, const std::vector<Sample>& samples) {
  std::vector<std::vector<int>> out;
  constexpr std::size_t kChunk = 16;
  const std::size_t hw = model.config().height * model.config().width;
  for (std::size_t b = 0; b < samples.size(); b += kChunk) {
    std::vector<Tensor> imgs;
    for (std::size_t i = b; i < std::min(samples.size(), b + kChunk); ++i) imgs.push_back(samples[i].image);
    Graph g;
    const auto labels = argmax_classes(model.forward(g, stack(imgs), Mode::kEval, false).logits.value());
    for (std::size_t i = 0; i < imgs.size(); ++i)
      out.emplace_back(labels.begin() + static_cast<std::ptrdiff_t>(i * hw),
                       labels.begin() + static_cast<std::ptrdiff_t>((i + 1) * hw));
  }
  return out;
}

MetricReport evaluate(SegModel& model, const std::vector<Sample>& samples, bool symmetric_asd) {
  MetricReport r;
  r.classes = model.config().num_classes;
  r.symmetric_asd = symmetric_asd;
  const auto preds = predict(model, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].mask.empty()) throw std::invalid_argument("sample " + samples[i].id + " has no ground truth");
    r.cases.push_back(evaluate_case(samples[i].id, preds[i], samples[i].mask, samples[i].image.dim(0),
                                    samples[i].image.dim(1), r.classes, symmetric_asd));
  }
  return r;
}

namespace {

void write_report(const fs::path& stem, const MetricReport& r) {
  std::ofstream csv(stem.string() + ".csv");
  r.write_csv(csv);
  std::ofstream(stem.string() + ".json") << r.to_json().dump(2) << "\n";
}

std::size_t dataset_classes(const fs::path& root) { return read_manifest(root).at("spec").at("classes").get<std::size_t>(); }

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainOptions& opt) {
  tune_allocator();
  cfg.validate();
  const fs::path root = cfg.data_root;
  const std::size_t classes = dataset_classes(root);
  auto test = load_split(root, Split::kTest, classes);
  Trainer tr(cfg, load_split(root, Split::kLabeled, classes), load_split(root, Split::kUnlabeled, classes), classes);

  const fs::path dir = cfg.run_dir;
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << cfg.to_json().dump(2) << "\n";

  const fs::path log_path = dir / "train_log.csv";
  std::vector<std::string> kept;
  if (opt.resume) {
    tr.load(*opt.resume);
    std::ifstream old(log_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line))
      if (!line.empty() && std::stoull(line.substr(0, line.find(','))) < tr.iteration()) kept.push_back(line);
  }
  std::ofstream log(log_path, std::ios::trunc);
  log << kLogHeader << "\n";
  for (const auto& l : kept) log << l << "\n";

  TrainResult result;
  const std::uint64_t stop = std::min(opt.stop_at.value_or(cfg.iterations), cfg.iterations);
  while (tr.iteration() < stop) {
    StepReport rep = tr.step();
    log << log_row(rep) << "\n";
    log.flush();
    if (!opt.quiet && (rep.iteration % 50 == 0 || tr.iteration() == stop)) {
      std::cerr << "iter " << rep.iteration << " L_sup " << rep.parts.sup << " L_con " << rep.parts.con << " L_ctr "
                << rep.parts.ctr << " total " << rep.parts.total << "\n";
    }
    result.steps.push_back(rep);
    const std::uint64_t done = tr.iteration();
    if (cfg.checkpoint_every && done % cfg.checkpoint_every == 0 && done != cfg.iterations) {
      tr.save(dir / ("ckpt_" + std::to_string(done) + ".bin"));
    }
    if (cfg.eval_every && done % cfg.eval_every == 0 && done != cfg.iterations && !test.empty()) {
      SegModel& m = cfg.eval_student ? tr.student() : tr.teacher().model();
      write_report(dir / ("report_" + std::to_string(done)), evaluate(m, test, cfg.symmetric_asd));
    }
  }
  result.final_checkpoint =
      dir / (tr.iteration() == cfg.iterations ? std::string("final.bin") : "ckpt_" + std::to_string(tr.iteration()) + ".bin");
  tr.save(result.final_checkpoint);
  if (tr.iteration() > 0 && !test.empty()) {
    SegModel& m = cfg.eval_student ? tr.student() : tr.teacher().model();
    result.report = evaluate(m, test, cfg.symmetric_asd);
    write_report(dir / "report", *result.report);
  }
  return result;
}

MetricReport evaluate_checkpoint(const fs::path& ckpt, const std::string& split,
                                 const std::optional<std::string>& data_root, std::optional<bool> use_student) {
  tune_allocator();
  Checkpoint ck = read_checkpoint(ckpt, true);
  TrainConfig cfg = TrainConfig::desk();
  cfg.apply(ck.info.meta.at("config"));
  if (ck.info.digest != cfg.digest()) std::cerr << "warning: checkpoint config digest mismatch\n";
  const json& mm = ck.info.meta.at("model");
  SegModel model(model_config(cfg, mm.at("num_classes"), mm.at("height"), mm.at("width")), cfg.seed);
  const bool student = use_student.value_or(cfg.eval_student);
  restore_model(ck.tensors, student ? "student/" : "teacher/", model);
  const auto samples = load_split(data_root.value_or(cfg.data_root), parse_split(split), model.config().num_classes);
  return evaluate(model, samples, cfg.symmetric_asd);
}

namespace {

std::string settings_label(const json& set) {
  std::string s;
  for (auto it = set.begin(); it != set.end(); ++it) {
    if (!s.empty()) s += ';';
    s += it.key() + "=" + (it->is_string() ? it->get<std::string>() : it->dump());
  }
  return s.empty() ? "base" : s;
}

}  // namespace

std::vector<AblationRow> ablate(const TrainConfig& base_cfg, const json& grid, const fs::path& out_dir, bool quiet) {
  std::vector<std::pair<std::string, json>> rows;
  if (grid.contains("rows")) {
    for (const json& r : grid.at("rows")) {
      const json set = r.value("set", json::object());
      rows.emplace_back(r.value("label", settings_label(set)), set);
    }
  } else if (grid.contains("axes")) {
    std::vector<json> combos{json::object()};
    for (auto it = grid.at("axes").begin(); it != grid.at("axes").end(); ++it) {
      std::vector<json> next;
      for (const json& c : combos)
        for (const json& v : *it) {
          json n = c;
          n[it.key()] = v;
          next.push_back(n);
        }
      combos = std::move(next);
    }
    for (const json& c : combos) rows.emplace_back(settings_label(c), c);
  } else {
    throw std::invalid_argument("ablation grid needs \"axes\" or \"rows\"");
  }
  std::vector<std::uint64_t> seeds = grid.value("seeds", std::vector<std::uint64_t>{base_cfg.seed});

  std::vector<AblationRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base_cfg;
      if (grid.contains("base")) cfg.apply(grid.at("base"));
      cfg.apply(rows[i].second);
      cfg.seed = seed;
      cfg.run_dir = (out_dir / ("row" + std::to_string(i) + "_s" + std::to_string(seed))).string();
      cfg.validate();
      if (!quiet) std::cerr << "ablate: " << rows[i].first << " seed " << seed << "\n";
      TrainResult r = train(cfg, TrainOptions{std::nullopt, std::nullopt, quiet});
      if (!r.report) throw std::runtime_error("ablation row produced no report (zero iterations?)");
      out.push_back({rows[i].first, seed, rows[i].second, *r.report});
    }
  return out;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  const std::size_t fg = rows.empty() ? 0 : rows.front().report.classes - 1;
  os << "label,seed,mean_dsc,mean_asd";
  for (std::size_t c = 1; c <= fg; ++c) os << ",dsc_" << c;
  for (std::size_t c = 1; c <= fg; ++c) os << ",asd_" << c;
  os << "\n" << std::setprecision(10);
  for (const auto& r : rows) {
    std::string quoted;
    for (char ch : r.label) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    os << '"' << quoted << "\"," << r.seed << ',' << r.report.mean_dsc() << ',' << r.report.mean_asd();
    for (double v : r.report.class_dsc()) os << ',' << v;
    for (double v : r.report.class_asd()) os << ',' << v;
    os << "\n";
  }
}

}  // namespace protoblend
