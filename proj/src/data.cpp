#include "protoblend/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "protoblend/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace protoblend {

const char* split_name(Split s) {
  switch (s) {
    case Split::kLabeled: return "labeled";
    case Split::kUnlabeled: return "unlabeled";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "labeled") return Split::kLabeled;
  if (name == "unlabeled") return Split::kUnlabeled;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "' (labeled, unlabeled, test)");
}

const StyleRange& DatasetSpec::style(Split s) const {
  switch (s) {
    case Split::kLabeled: return labeled_style;
    case Split::kUnlabeled: return unlabeled_style;
    case Split::kTest: return test_style;
  }
  throw std::logic_error("bad split");
}

void DatasetSpec::validate() const {
  if (height < 16 || width < 16) throw std::invalid_argument("dataset images must be at least 16x16");
  if (classes < 2 || classes > 4) throw std::invalid_argument("dataset class count must be in [2, 4]");
  if (class_intensity.size() != classes) throw std::invalid_argument("need one intensity range per class");
  if (n_labeled < 1) throw std::invalid_argument("need at least one labeled sample");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  for (auto [lo, hi] : class_intensity)
    if (!(lo <= hi) || lo < 0.0 || hi > 1.0) throw std::invalid_argument("class intensity range outside [0, 1]");
}

namespace {

void style_to_json(json& j, const StyleRange& s) {
  j = json{{"offset_center", s.offset_center},
           {"offset_half", s.offset_half},
           {"contrast_center", s.contrast_center},
           {"contrast_half", s.contrast_half}};
}

void style_from_json(const json& j, StyleRange& s) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "offset_center") s.offset_center = it->get<double>();
    else if (k == "offset_half") s.offset_half = it->get<double>();
    else if (k == "contrast_center") s.contrast_center = it->get<double>();
    else if (k == "contrast_half") s.contrast_half = it->get<double>();
    else throw std::invalid_argument("unknown style key '" + k + "'");
  }
}

}  // namespace

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"height", s.height},
           {"width", s.width},
           {"classes", s.classes},
           {"n_labeled", s.n_labeled},
           {"n_unlabeled", s.n_unlabeled},
           {"n_test", s.n_test},
           {"noise_sigma", s.noise_sigma},
           {"seed", s.seed},
           {"class_intensity", s.class_intensity}};
  style_to_json(j["labeled_style"], s.labeled_style);
  style_to_json(j["unlabeled_style"], s.unlabeled_style);
  style_to_json(j["test_style"], s.test_style);
}

void from_json(const json& j, DatasetSpec& s) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "height") s.height = it->get<std::size_t>();
    else if (k == "width") s.width = it->get<std::size_t>();
    else if (k == "classes") s.classes = it->get<std::size_t>();
    else if (k == "n_labeled") s.n_labeled = it->get<std::size_t>();
    else if (k == "n_unlabeled") s.n_unlabeled = it->get<std::size_t>();
    else if (k == "n_test") s.n_test = it->get<std::size_t>();
    else if (k == "noise_sigma") s.noise_sigma = it->get<double>();
    else if (k == "seed") s.seed = it->get<std::uint64_t>();
    else if (k == "class_intensity") s.class_intensity = it->get<std::vector<std::pair<double, double>>>();
    else if (k == "labeled_style") style_from_json(*it, s.labeled_style);
    else if (k == "unlabeled_style") style_from_json(*it, s.unlabeled_style);
    else if (k == "test_style") style_from_json(*it, s.test_style);
    else throw std::invalid_argument("unknown dataset spec key '" + k + "'");
  }
  if (!j.contains("class_intensity") && s.classes != s.class_intensity.size()) s.class_intensity.resize(s.classes);
  s.validate();
}

namespace {

struct Box {
  long y0, x0, y1, x1;
  bool overlaps(const Box& o, long margin) const {
    return !(y1 + margin < o.y0 || o.y1 + margin < y0 || x1 + margin < o.x0 || o.x1 + margin < x0);
  }
};

// Paints one shape of class `label` (1 disk, 2 rectangle, 3 ring).
void paint(std::vector<int>& mask, long h, long w, int label, long cy, long cx, long a, long b) {
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long dy = y - cy, dx = x - cx;
      bool inside = false;
      if (label == 1) inside = dy * dy + dx * dx <= a * a;
      if (label == 2) inside = std::abs(dy) <= a && std::abs(dx) <= b;
      if (label == 3) {
        const long r2 = dy * dy + dx * dx;
        inside = r2 <= a * a && r2 > (a - b) * (a - b);
      }
      if (inside) mask[static_cast<std::size_t>(y * w + x)] = label;
    }
}

std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%04zu", split_name(split)[0], index);
  return buf;
}

}  // namespace

Sample generate_sample(const DatasetSpec& spec, Split split, std::size_t index) {
  Rng rng(derive_seed(spec.seed, 0x64617461, static_cast<std::uint64_t>(split), index));
  const long h = static_cast<long>(spec.height), w = static_cast<long>(spec.width);
  std::vector<int> mask(spec.height * spec.width, 0);

  const double scale = std::min(h, w) / 64.0;
  auto extent = [&](double lo, double hi) { return std::max(2L, std::lround(rng.uniform(lo, hi) * scale)); };
  std::vector<Box> placed;
  bool any = false;
  for (int label = 1; label < static_cast<int>(spec.classes); ++label) {
    const bool last_chance = label == static_cast<int>(spec.classes) - 1 && !any;
    if (!rng.bernoulli(0.85) && !last_chance) continue;
    long a = 0, b = 0;
    if (label == 1) a = extent(5, 9);
    if (label == 2) a = extent(4, 8), b = extent(4, 8);
    if (label == 3) a = extent(7, 11), b = extent(2, 4);
    const long ry = a, rx = label == 2 ? b : a;
    long cy = 0, cx = 0;
    for (int attempt = 0; attempt < 100; ++attempt) {
      cy = ry + 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, h - 2 * ry - 2))));
      cx = rx + 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, w - 2 * rx - 2))));
      const Box box{cy - ry, cx - rx, cy + ry, cx + rx};
      if (std::none_of(placed.begin(), placed.end(), [&](const Box& o) { return o.overlaps(box, 2); })) break;
    }
    placed.push_back({cy - ry, cx - rx, cy + ry, cx + rx});
    paint(mask, h, w, label, cy, cx, a, b);
    any = true;
  }

  std::vector<double> base(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c)
    base[c] = rng.uniform(spec.class_intensity[c].first, spec.class_intensity[c].second);
  const StyleRange& st = spec.style(split);
  const double offset = rng.uniform(st.offset_center - st.offset_half, st.offset_center + st.offset_half);
  const double contrast = rng.uniform(st.contrast_center - st.contrast_half, st.contrast_center + st.contrast_half);

  Tensor image(Shape{spec.height, spec.width});
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const double styled = 0.5 + contrast * (base[static_cast<std::size_t>(mask[k])] - 0.5) + offset;
    image[k] = std::clamp(styled + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);
  }
  Sample s;
  s.id = sample_id(split, index);
  s.split = split;
  s.image = dequantize(quantize(image), spec.height, spec.width);
  if (split != Split::kUnlabeled) s.mask = std::move(mask);
  return s;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  for (std::size_t i = 0; i < spec.n_labeled; ++i) d.labeled.push_back(generate_sample(spec, Split::kLabeled, i));
  for (std::size_t i = 0; i < spec.n_unlabeled; ++i) d.unlabeled.push_back(generate_sample(spec, Split::kUnlabeled, i));
  for (std::size_t i = 0; i < spec.n_test; ++i) d.test.push_back(generate_sample(spec, Split::kTest, i));
  return d;
}

std::vector<std::uint8_t> quantize(const Tensor& image) {
  std::vector<std::uint8_t> px(image.numel());
  for (std::size_t k = 0; k < px.size(); ++k)
    px[k] = static_cast<std::uint8_t>(std::lround(std::clamp(image[k], 0.0, 1.0) * 255.0));
  return px;
}

Tensor dequantize(const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w) {
  if (px.size() != h * w) throw std::invalid_argument("pixel count does not match image size");
  Tensor t(Shape{h, w});
  for (std::size_t k = 0; k < px.size(); ++k) t[k] = px[k] / 255.0;
  return t;
}

std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

std::vector<std::uint8_t> pgm_bytes(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px) {
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

void write_pgm(const fs::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px) {
  if (px.size() != h * w) throw std::invalid_argument("write_pgm: pixel count mismatch");
  write_file(path, pgm_bytes(h, w, px));
}

std::vector<std::uint8_t> read_pgm(const fs::path& path, std::size_t& h, std::size_t& w) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) { return std::runtime_error(path.string() + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw fail("malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("not a binary PGM (P5)");
  pos = 2;
  w = number();
  h = number();
  if (number() != 255) throw fail("only 8-bit PGM is supported");
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != h * w) throw fail("raster size mismatch");
  return {bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()};
}

void write_dataset(const Dataset& data, const DatasetSpec& spec, const fs::path& root) {
  json files = json::object();
  auto emit = [&](const std::vector<Sample>& samples, Split split) {
    const fs::path dir = root / split_name(split);
    fs::create_directories(dir / "img");
    if (split != Split::kUnlabeled) fs::create_directories(dir / "mask");
    for (const Sample& s : samples) {
      const std::string rel_img = std::string(split_name(split)) + "/img/" + s.id + ".pgm";
      const auto img = pgm_bytes(spec.height, spec.width, quantize(s.image));
      write_file(root / rel_img, img);
      files[rel_img] = hex64(fnv1a64(img));
      if (s.mask.empty()) continue;
      std::vector<std::uint8_t> m(s.mask.begin(), s.mask.end());
      const std::string rel_mask = std::string(split_name(split)) + "/mask/" + s.id + ".pgm";
      const auto mb = pgm_bytes(spec.height, spec.width, m);
      write_file(root / rel_mask, mb);
      files[rel_mask] = hex64(fnv1a64(mb));
    }
  };
  emit(data.labeled, Split::kLabeled);
  emit(data.unlabeled, Split::kUnlabeled);
  emit(data.test, Split::kTest);
  json manifest{{"format", "protoblend-synthetic-1"},
                {"spec", spec},
                {"counts", {{"labeled", data.labeled.size()}, {"unlabeled", data.unlabeled.size()}, {"test", data.test.size()}}},
                {"checksums_fnv1a64", files}};
  std::ofstream(root / "manifest.json") << manifest.dump(2) << "\n";
}

json read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json under " + root.string());
  return json::parse(in);
}

std::vector<Sample> load_split(const fs::path& root, Split split, std::size_t classes) {
  const fs::path img_dir = root / split_name(split) / "img";
  const fs::path mask_dir = root / split_name(split) / "mask";
  std::vector<fs::path> files;
  if (fs::is_directory(img_dir)) {
    for (const auto& e : fs::directory_iterator(img_dir))
      if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  if (files.empty()) {
    std::cerr << "warning: no images in " << img_dir.string() << "\n";
    return {};
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
  std::vector<Sample> out;
  for (const fs::path& f : files) {
    Sample s;
    s.id = f.stem().string();
    s.split = split;
    std::size_t h = 0, w = 0;
    const auto px = read_pgm(f, h, w);
    s.image = dequantize(px, h, w);
    if (split != Split::kUnlabeled) {
      const fs::path mp = mask_dir / f.filename();
      if (!fs::exists(mp)) throw std::runtime_error("missing mask for labeled sample " + s.id);
      std::size_t mh = 0, mw = 0;
      const auto m = read_pgm(mp, mh, mw);
      if (mh != h || mw != w) throw std::runtime_error("mask size differs from image for " + s.id);
      s.mask.assign(m.begin(), m.end());
      for (int l : s.mask)
        if (static_cast<std::size_t>(l) >= classes) {
          throw std::runtime_error("label " + std::to_string(l) + " out of range in mask " + s.id);
        }
    }
    out.push_back(std::move(s));
  }
  return out;
}

BatchStream::BatchStream(std::size_t labeled, std::size_t unlabeled, std::size_t batch_size, std::uint64_t seed)
    : labeled_(labeled), unlabeled_(unlabeled), half_(batch_size / 2), seed_(seed) {
  if (batch_size == 0 || batch_size % 2 != 0) throw std::invalid_argument("batch size must be even and positive");
  if (labeled == 0) throw std::invalid_argument("batch stream needs at least one labeled sample");
}

std::vector<std::size_t> BatchStream::take(std::size_t pool, std::uint64_t stream, std::uint64_t t) const {
  std::vector<std::size_t> out;
  if (pool == 0) return out;
  std::uint64_t cached_pass = ~std::uint64_t{0};
  std::vector<std::size_t> perm(pool);
  for (std::size_t j = 0; j < half_; ++j) {
    const std::uint64_t p = t * half_ + j;
    const std::uint64_t pass = p / pool;
    if (pass != cached_pass) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed_, 0x6261746368, stream, pass));
      rng.shuffle(perm);
      cached_pass = pass;
    }
    out.push_back(perm[p % pool]);
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> BatchStream::indices(std::uint64_t t) const {
  return {take(labeled_, 0, t), take(unlabeled_, 1, t)};
}

}  // namespace protoblend
