#include "protoblend/sdb.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace protoblend {

Style image_style(const Tensor& image, double eps) {
  if (image.numel() == 0) throw std::invalid_argument("image_style of an empty image");
  const double n = static_cast<double>(image.numel());
  double mu = 0.0;
  for (double v : image.data()) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : image.data()) var += (v - mu) * (v - mu);
  return {mu, std::sqrt(var / n + eps)};
}

Tensor normalize_content(const Tensor& image, Style style) {
  Tensor out = image;
  for (double& v : out.data()) v = (v - style.mu) / style.sigma;
  return out;
}

Style mix_styles(Style l, Style u, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("style mixing coefficient outside [0, 1]");
  return {eta * l.mu + (1.0 - eta) * u.mu, eta * l.sigma + (1.0 - eta) * u.sigma};
}

Tensor blend_style(const Tensor& content, Style labeled, Style unlabeled, double eta) {
  const Style m = mix_styles(labeled, unlabeled, eta);
  Tensor out = content;
  for (double& v : out.data()) v = v * m.sigma + m.mu;
  return out;
}

double EtaDistribution::sample(Rng& rng) const {
  switch (kind) {
    case EtaKind::kUniform: return rng.uniform();
    case EtaKind::kBeta: return rng.arcsine();
    case EtaKind::kBernoulli: return rng.bernoulli(0.5) ? 1.0 : 0.0;
    case EtaKind::kFixed: return value;
  }
  throw std::logic_error("bad eta kind");
}

std::string EtaDistribution::name() const {
  switch (kind) {
    case EtaKind::kUniform: return "uniform";
    case EtaKind::kBeta: return "beta";
    case EtaKind::kBernoulli: return "bernoulli";
    case EtaKind::kFixed: {
      std::ostringstream os;
      os << "fixed:" << std::setprecision(17) << value;
      return os.str();
    }
  }
  return "?";
}

EtaDistribution EtaDistribution::parse(const std::string& text) {
  if (text == "uniform") return {EtaKind::kUniform, 1.0};
  if (text == "beta") return {EtaKind::kBeta, 1.0};
  if (text == "bernoulli") return {EtaKind::kBernoulli, 1.0};
  if (text.rfind("fixed:", 0) == 0) {
    const double v = std::stod(text.substr(6));
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("fixed eta outside [0, 1]");
    return {EtaKind::kFixed, v};
  }
  throw std::invalid_argument("unknown eta distribution '" + text + "' (uniform, beta, bernoulli, fixed:<v>)");
}

BlendedBatch blend_batch(const std::vector<Tensor>& labeled, const std::vector<std::vector<int>>& masks,
                         const std::vector<Tensor>& unlabeled, const EtaDistribution& eta, Rng& rng, double eps) {
  if (unlabeled.empty()) throw std::invalid_argument("style blending needs a non-empty unlabeled batch");
  if (masks.size() != labeled.size()) throw std::invalid_argument("one mask per labeled image required");
  const std::size_t l = labeled.size(), u = unlabeled.size();

  std::vector<Style> styles_u;
  for (const Tensor& x : unlabeled) styles_u.push_back(image_style(x, eps));

  BlendedBatch out;
  out.masks = masks;
  if (u >= l) {
    std::vector<std::size_t> order(u);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    out.style_source.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(l));
  } else {
    for (std::size_t i = 0; i < l; ++i) out.style_source.push_back(static_cast<std::size_t>(rng.below(u)));
  }
  for (std::size_t i = 0; i < l; ++i) {
    const Style sl = image_style(labeled[i], eps);
    const double e = eta.sample(rng);
    const Style su = styles_u[out.style_source[i]];
    out.eta.push_back(e);
    out.mixed.push_back(mix_styles(sl, su, e));
    out.images.push_back(blend_style(normalize_content(labeled[i], sl), sl, su, e));
  }
  return out;
}

MomentReport moment_report(const std::vector<NamedSplit>& splits, double eps) {
  if (splits.empty()) throw std::invalid_argument("moment report needs at least one split");
  MomentReport r;
  for (const NamedSplit& s : splits) {
    if (s.samples.empty()) throw std::invalid_argument("split '" + s.name + "' is empty");
    SplitMoments sm{s.name, s.samples.size()};
    std::vector<double> mus, sigmas;
    std::map<int, std::vector<double>> by_label;
    for (const Sample& x : s.samples) {
      const Style st = image_style(x.image, eps);
      r.images.push_back({s.name, x.id, st});
      mus.push_back(st.mu);
      sigmas.push_back(st.sigma);
      for (std::size_t k = 0; k < x.mask.size(); ++k) by_label[x.mask[k]].push_back(x.image[k]);
    }
    auto mean_sd = [](const std::vector<double>& v) {
      const double n = static_cast<double>(v.size());
      double m = 0.0;
      for (double x : v) m += x;
      m /= n;
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::pair{m, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
    };
    std::tie(sm.mean_mu, sm.sd_mu) = mean_sd(mus);
    std::tie(sm.mean_sigma, sm.sd_sigma) = mean_sd(sigmas);
    r.splits.push_back(sm);
    for (auto& [label, px] : by_label) {
      const std::size_t n = px.size();
      const Tensor t(Shape{n}, std::move(px));
      r.categories.push_back({s.name, label, t.numel(), image_style(t, eps)});
    }
  }
  return r;
}

void MomentReport::write_images_csv(std::ostream& os) const {
  os << "split,id,mu,sigma\n" << std::setprecision(10);
  for (const auto& r : images) os << r.split << ',' << r.id << ',' << r.style.mu << ',' << r.style.sigma << '\n';
}

void MomentReport::write_splits_csv(std::ostream& os) const {
  os << "split,images,mean_mu,sd_mu,mean_sigma,sd_sigma\n" << std::setprecision(10);
  for (const auto& s : splits) {
    os << s.split << ',' << s.images << ',' << s.mean_mu << ',' << s.sd_mu << ',' << s.mean_sigma << ',' << s.sd_sigma
       << '\n';
  }
}

void MomentReport::write_categories_csv(std::ostream& os) const {
  os << "split,label,pixels,mu,sigma\n" << std::setprecision(10);
  for (const auto& c : categories) {
    os << c.split << ',' << c.label << ',' << c.pixels << ',' << c.style.mu << ',' << c.style.sigma << '\n';
  }
}

}  // namespace protoblend
