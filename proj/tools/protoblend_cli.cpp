#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "protoblend/data.hpp"
#include "protoblend/sdb.hpp"
#include "protoblend/trainer.hpp"

namespace fs = std::filesystem;
using namespace protoblend;

namespace {

DatasetSpec read_spec(const std::string& path) {
  DatasetSpec spec;
  if (path.empty()) return spec;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open spec " + path);
  nlohmann::json::parse(in).get_to(spec);
  return spec;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::vector<Sample> load_any(const fs::path& root, Split split) {
  const std::size_t classes = read_manifest(root).at("spec").at("classes").get<std::size_t>();
  return load_split(root, split, classes);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised segmentation with style blending and prototype cross-contrast"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("generate-data", "Write a synthetic shapes-with-styles dataset");
  gen->add_option("--spec", spec_path, "Dataset spec JSON (defaults when omitted)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string stats_root, stats_out;
  std::vector<std::string> stats_splits{"labeled", "unlabeled", "test"};
  auto* stats = app.add_subcommand("stats", "Per-image, per-split and per-category intensity moments");
  stats->add_option("--data", stats_root, "Dataset root")->required();
  stats->add_option("--splits", stats_splits, "Splits to include");
  stats->add_option("--out", stats_out, "Directory for the CSV files (stdout split summary when omitted)");

  std::string blend_data, blend_out, blend_eta = "uniform";
  std::uint64_t blend_seed = 0;
  auto* blend = app.add_subcommand("blend", "Re-style labeled images with unlabeled styles");
  blend->add_option("--data", blend_data, "Dataset root")->required();
  blend->add_option("--out", blend_out, "Output directory")->required();
  blend->add_option("--eta", blend_eta, "uniform | beta | bernoulli | fixed:<v>");
  blend->add_option("--seed", blend_seed, "Seed");

  std::string cfg_path, resume;
  std::optional<std::uint64_t> until;
  std::vector<std::string> sets;
  bool verbose = false;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", cfg_path, "Config JSON")->required();
  trn->add_option("--resume", resume, "Checkpoint to resume from");
  trn->add_option("--until", until, "Stop after this iteration without changing the schedule");
  trn->add_option("--set", sets, "Override key=value (JSON value)");
  trn->add_flag("-v,--verbose", verbose, "Progress on stderr");

  std::string ckpt, split = "test", eval_data, eval_out;
  bool eval_student = false;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--split", split, "labeled | unlabeled | test");
  ev->add_option("--data", eval_data, "Dataset root (default: the one in the checkpoint)");
  ev->add_option("--out", eval_out, "Output stem for .csv/.json (stdout JSON when omitted)");
  ev->add_flag("--student", eval_student, "Evaluate the student instead of the EMA teacher");

  std::string abl_cfg, grid_path, abl_out;
  auto* abl = app.add_subcommand("ablate", "Train one run per grid row and tabulate test metrics");
  abl->add_option("--config", abl_cfg, "Base config JSON")->required();
  abl->add_option("--grid", grid_path, "Grid JSON")->required();
  abl->add_option("--out", abl_out, "Output directory")->required();
  abl->add_flag("-v,--verbose", verbose, "Progress on stderr");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const DatasetSpec spec = read_spec(spec_path);
      write_dataset(generate_dataset(spec), spec, out_dir);
      std::cout << "wrote " << spec.n_labeled << " labeled, " << spec.n_unlabeled << " unlabeled, " << spec.n_test
                << " test samples to " << out_dir << "\n";
    } else if (*stats) {
      std::vector<NamedSplit> splits;
      for (const auto& s : stats_splits) splits.push_back({s, load_any(stats_root, parse_split(s))});
      const MomentReport r = moment_report(splits);
      if (stats_out.empty()) {
        r.write_splits_csv(std::cout);
      } else {
        fs::create_directories(stats_out);
        std::ofstream a(fs::path(stats_out) / "moments_images.csv"), b(fs::path(stats_out) / "moments_splits.csv"),
            c(fs::path(stats_out) / "moments_categories.csv");
        r.write_images_csv(a);
        r.write_splits_csv(b);
        r.write_categories_csv(c);
      }
    } else if (*blend) {
      const auto labeled = load_any(blend_data, Split::kLabeled);
      const auto unlabeled = load_any(blend_data, Split::kUnlabeled);
      std::vector<Tensor> li, ui;
      std::vector<std::vector<int>> masks;
      for (const auto& s : labeled) li.push_back(s.image), masks.push_back(s.mask);
      for (const auto& s : unlabeled) ui.push_back(s.image);
      Rng rng(blend_seed);
      const BlendedBatch b = blend_batch(li, masks, ui, EtaDistribution::parse(blend_eta), rng);
      fs::create_directories(blend_out);
      std::ofstream csv(fs::path(blend_out) / "blend.csv");
      csv << "source,style_source,eta,mu_m,sigma_m\n" << std::setprecision(10);
      for (std::size_t i = 0; i < labeled.size(); ++i) {
        const Tensor& img = b.images[i];
        write_pgm(fs::path(blend_out) / (labeled[i].id + ".pgm"), img.dim(0), img.dim(1), quantize(img));
        csv << labeled[i].id << ',' << unlabeled[b.style_source[i]].id << ',' << b.eta[i] << ',' << b.mixed[i].mu << ','
            << b.mixed[i].sigma << '\n';
      }
    } else if (*trn) {
      TrainConfig cfg = load_config(cfg_path);
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
        nlohmann::json value;
        try {
          value = nlohmann::json::parse(kv.substr(eq + 1));
        } catch (const nlohmann::json::exception&) {
          value = kv.substr(eq + 1);
        }
        cfg.apply(nlohmann::json{{kv.substr(0, eq), value}});
      }
      cfg.validate();
      TrainOptions opt;
      if (!resume.empty()) opt.resume = resume;
      opt.stop_at = until;
      opt.quiet = !verbose;
      const TrainResult r = train(cfg, opt);
      std::cout << "checkpoint " << r.final_checkpoint.string() << "\n";
      if (r.report) std::cout << "test mean DSC " << r.report->mean_dsc() << " mean ASD " << r.report->mean_asd() << "\n";
    } else if (*ev) {
      std::optional<std::string> root;
      if (!eval_data.empty()) root = eval_data;
      std::optional<bool> student;
      if (eval_student) student = true;
      const MetricReport r = evaluate_checkpoint(ckpt, split, root, student);
      if (eval_out.empty()) {
        std::cout << r.to_json().dump(2) << "\n";
      } else {
        std::ofstream csv(eval_out + ".csv");
        r.write_csv(csv);
        write_file(eval_out + ".json", r.to_json().dump(2) + "\n");
      }
    } else if (*abl) {
      const TrainConfig cfg = load_config(abl_cfg);
      std::ifstream gin(grid_path);
      if (!gin) throw std::runtime_error("cannot open grid " + grid_path);
      const auto grid = nlohmann::json::parse(gin);
      const auto rows = ablate(cfg, grid, abl_out, !verbose);
      std::ofstream csv(fs::path(abl_out) / "ablation.csv");
      write_ablation_csv(csv, rows);
      write_ablation_csv(std::cout, rows);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
