#include "protoblend/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace protoblend {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same(const BinaryMask& a, const BinaryMask& b) {
  if (a.h != b.h || a.w != b.w || a.px.size() != a.h * a.w || b.px.size() != b.h * b.w) {
    throw std::invalid_argument("masks differ in shape");
  }
}

// One-dimensional lower envelope of parabolas over the finite entries of f.
void envelope_1d(const double* f, std::size_t n, std::size_t stride, double* out) {
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    while (!v.empty()) {
      const double p = static_cast<double>(v.back()), qd = static_cast<double>(q);
      const double s = ((fq + qd * qd) - (f[v.back() * stride] + p * p)) / (2.0 * qd - 2.0 * p);
      if (s <= z.back()) {
        v.pop_back();
        z.pop_back();
      } else {
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      z.push_back(-kInf);
    } else {
      const double p = static_cast<double>(v.back()), qd = static_cast<double>(q);
      z.push_back(((fq + qd * qd) - (f[v.back() * stride] + p * p)) / (2.0 * qd - 2.0 * p));
      v.push_back(q);
    }
  }
  if (v.empty()) {
    for (std::size_t q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  std::size_t k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (k + 1 < v.size() && z[k + 1] < qd) ++k;
    const double d = qd - static_cast<double>(v[k]);
    out[q * stride] = d * d + f[v[k] * stride];
  }
}

}  // namespace

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto v : px) n += v != 0;
  return n;
}

BinaryMask class_mask(const std::vector<int>& labels, std::size_t h, std::size_t w, int c) {
  if (labels.size() != h * w) throw std::invalid_argument("label map size mismatch");
  BinaryMask m{h, w, std::vector<std::uint8_t>(h * w)};
  for (std::size_t k = 0; k < labels.size(); ++k) m.px[k] = labels[k] == c;
  return m;
}

double dsc(const BinaryMask& s, const BinaryMask& g) {
  require_same(s, g);
  std::size_t inter = 0, ns = 0, ng = 0;
  for (std::size_t k = 0; k < s.px.size(); ++k) {
    ns += s.px[k] != 0;
    ng += g.px[k] != 0;
    inter += s.px[k] != 0 && g.px[k] != 0;
  }
  if (ns + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ns + ng);
}

std::vector<std::size_t> boundary(const BinaryMask& m) {
  std::vector<std::size_t> out;
  const long h = static_cast<long>(m.h), w = static_cast<long>(m.w);
  auto in = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < h && x < w && m.px[static_cast<std::size_t>(y * w + x)] != 0;
  };
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (in(y, x) && (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1))) {
        out.push_back(static_cast<std::size_t>(y * w + x));
      }
  return out;
}

std::vector<double> squared_distance_transform(const BinaryMask& seeds) {
  const std::size_t h = seeds.h, w = seeds.w;
  std::vector<double> f(h * w), tmp(h * w);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = seeds.px[k] ? 0.0 : kInf;
  for (std::size_t x = 0; x < w; ++x) envelope_1d(f.data() + x, h, w, tmp.data() + x);
  for (std::size_t y = 0; y < h; ++y) envelope_1d(tmp.data() + y * w, w, 1, f.data() + y * w);
  return f;
}

std::optional<double> asd(const BinaryMask& s, const BinaryMask& g) {
  require_same(s, g);
  const auto bs = boundary(s);
  const auto bg = boundary(g);
  if (bs.empty() || bg.empty()) return std::nullopt;
  BinaryMask seeds{g.h, g.w, std::vector<std::uint8_t>(g.px.size())};
  for (std::size_t k : bg) seeds.px[k] = 1;
  const auto d2 = squared_distance_transform(seeds);
  double total = 0.0;
  for (std::size_t k : bs) total += std::sqrt(d2[k]);
  return total / static_cast<double>(bs.size());
}

std::optional<double> asd_symmetric(const BinaryMask& s, const BinaryMask& g) {
  const auto a = asd(s, g);
  const auto b = asd(g, s);
  if (!a || !b) return std::nullopt;
  return 0.5 * (*a + *b);
}

CaseMetrics evaluate_case(const std::string& id, const std::vector<int>& pred, const std::vector<int>& truth,
                          std::size_t h, std::size_t w, std::size_t classes, bool symmetric_asd) {
  CaseMetrics m{id, {}, {}};
  for (std::size_t c = 1; c < classes; ++c) {
    const BinaryMask s = class_mask(pred, h, w, static_cast<int>(c));
    const BinaryMask g = class_mask(truth, h, w, static_cast<int>(c));
    m.dsc.push_back(dsc(s, g));
    m.asd.push_back(symmetric_asd ? asd_symmetric(s, g) : asd(s, g));
  }
  return m;
}

std::vector<double> MetricReport::class_dsc() const {
  std::vector<double> out(classes > 0 ? classes - 1 : 0, 0.0);
  for (const auto& c : cases)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += c.dsc[k];
  for (double& v : out) v /= cases.empty() ? 1.0 : static_cast<double>(cases.size());
  return out;
}

std::vector<double> MetricReport::class_asd() const {
  std::vector<double> out(classes > 0 ? classes - 1 : 0, 0.0);
  std::vector<std::size_t> n(out.size(), 0);
  for (const auto& c : cases)
    for (std::size_t k = 0; k < out.size(); ++k)
      if (c.asd[k]) {
        out[k] += *c.asd[k];
        ++n[k];
      }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = n[k] ? out[k] / static_cast<double>(n[k]) : std::nan("");
  return out;
}

std::vector<std::size_t> MetricReport::asd_missing() const {
  std::vector<std::size_t> out(classes > 0 ? classes - 1 : 0, 0);
  for (const auto& c : cases)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += !c.asd[k];
  return out;
}

double MetricReport::mean_dsc() const {
  const auto v = class_dsc();
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double MetricReport::mean_asd() const {
  const auto v = class_asd();
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) s += x, ++n;
  return n ? s / static_cast<double>(n) : std::nan("");
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "case";
  for (std::size_t c = 1; c < classes; ++c) os << ",dsc_" << c;
  for (std::size_t c = 1; c < classes; ++c) os << ",asd_" << c;
  os << ",mean_dsc\n" << std::setprecision(10);
  auto row = [&](const std::string& name, const std::vector<double>& d, const std::vector<std::optional<double>>& a) {
    os << name;
    double s = 0.0;
    for (double v : d) os << ',' << v, s += v;
    for (const auto& v : a) {
      os << ',';
      if (v && !std::isnan(*v)) os << *v;
    }
    os << ',' << (d.empty() ? 0.0 : s / static_cast<double>(d.size())) << '\n';
  };
  for (const auto& c : cases) row(c.id, c.dsc, c.asd);
  std::vector<std::optional<double>> ca;
  for (double v : class_asd()) ca.emplace_back(v);
  row("mean", class_dsc(), ca);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["classes"] = classes;
  j["symmetric_asd"] = symmetric_asd;
  j["cases"] = cases.size();
  j["class_dsc"] = class_dsc();
  nlohmann::json asd_j = nlohmann::json::array();
  for (double v : class_asd()) asd_j.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j["class_asd"] = asd_j;
  j["asd_missing"] = asd_missing();
  j["mean_dsc"] = mean_dsc();
  const double ma = mean_asd();
  j["mean_asd"] = std::isnan(ma) ? nlohmann::json(nullptr) : nlohmann::json(ma);
  nlohmann::json per_case = nlohmann::json::array();
  for (const auto& c : cases) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& v : c.asd) a.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    per_case.push_back({{"id", c.id}, {"dsc", c.dsc}, {"asd", a}});
  }
  j["per_case"] = per_case;
  return j;
}

}  // namespace protoblend
