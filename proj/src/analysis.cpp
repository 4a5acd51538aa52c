#include "luvit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include <unsupported/Eigen/FFT>

namespace luvit::analysis {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header << '\n';
  return out;
}

}  // namespace

Index PatchMask::count() const {
  return static_cast<Index>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

template <typename S>
AttentionRecord attention_record(const ForwardRecording<S>& rec, Index index, Index grid_rows, Index grid_cols) {
  AttentionRecord out;
  out.grid_rows = grid_rows;
  out.grid_cols = grid_cols;
  for (const auto& [layer, probs] : rec.attention) {
    if (probs.rank() != 4) throw ShapeError("attention_record: expected [B x H x T x T]");
    const Index heads = probs.dim(1), t = probs.dim(2);
    if (index < 0 || index >= probs.dim(0)) throw ShapeError("attention_record: image index out of range");
    std::vector<Mat>& per_head = out.layers[layer];
    for (Index h = 0; h < heads; ++h) {
      const S* base = probs.value().data() + ((index * heads) + h) * t * t;
      per_head.push_back(Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(base, t, t)
                             .template cast<double>());
    }
  }
  return out;
}

template <typename S>
Mat recorded_features(const ForwardRecording<S>& rec, int layer, Index index) {
  auto it = rec.features.find(layer);
  if (it == rec.features.end()) throw ContractError("no recorded features at layer " + std::to_string(layer));
  const Tensor<S>& f = it->second;
  if (f.rank() != 3 || index < 0 || index >= f.dim(0)) throw ShapeError("recorded_features: bad image index or shape");
  const Index t = f.dim(1), d = f.dim(2);
  return Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(f.value().data() + index * t * d, t, d)
      .template cast<double>();
}

Vec attention_entropy(const Mat& a) {
  Vec h(a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    const double row_sum = a.row(i).sum();
    if (std::abs(row_sum - 1.0) > 1e-3) {
      throw ValidationError("attention row " + std::to_string(i) + " sums to " + fmt(row_sum));
    }
    double acc = 0.0;
    for (Index j = 0; j < a.cols(); ++j) {
      const double p = a(i, j);
      if (p < 0.0) throw ValidationError("negative attention weight in row " + std::to_string(i));
      if (p > 0.0) acc -= p * std::log(p);
    }
    h[i] = acc;
  }
  return h;
}

Vec head_mean_entropy(const AttentionRecord& record, int layer) {
  auto it = record.layers.find(layer);
  if (it == record.layers.end() || it->second.empty()) throw ContractError("no attention recorded at layer " + std::to_string(layer));
  Vec acc = Vec::Zero(it->second.front().rows());
  for (const Mat& a : it->second) acc += attention_entropy(a);
  return acc / static_cast<double>(it->second.size());
}

RegionMeans fg_bg_means(const Vec& entropy, const PatchMask& mask) {
  if (entropy.size() != mask.size()) throw ShapeError("fg_bg_means: entropy map and mask differ in length");
  double fg = 0.0, bg = 0.0;
  Index nf = 0, nb = 0;
  for (Index i = 0; i < entropy.size(); ++i) {
    if (mask.cells[static_cast<std::size_t>(i)]) {
      fg += entropy[i];
      ++nf;
    } else {
      bg += entropy[i];
      ++nb;
    }
  }
  RegionMeans r;
  if (nf > 0) r.fg = fg / static_cast<double>(nf);
  if (nb > 0) r.bg = bg / static_cast<double>(nb);
  return r;
}

PatchMask downsample_mask(const std::vector<std::uint8_t>& highres, Index height, Index width, Index patch_size) {
  if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("downsample_mask: " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (static_cast<Index>(highres.size()) != height * width) throw ShapeError("downsample_mask: mask length mismatch");
  PatchMask m;
  m.rows = height / patch_size;
  m.cols = width / patch_size;
  m.cells.assign(static_cast<std::size_t>(m.rows * m.cols), 0);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      if (highres[static_cast<std::size_t>(y * width + x)]) m.cells[static_cast<std::size_t>((y / patch_size) * m.cols + x / patch_size)] = 1;
    }
  }
  return m;
}

Vec per_image_normalize(const Vec& map) {
  if (map.size() == 0) return map;
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  if (!(hi > lo)) return Vec::Zero(map.size());
  return (map.array() - lo) / (hi - lo);
}

Vec magnitude_component(const Mat& features) {
  if (features.rows() < 2) throw ContractError("magnitude_component: need at least two tokens");
  const Eigen::RowVectorXd mu = features.colwise().mean();
  return (features.rowwise() - mu).rowwise().norm();
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi, two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= pi;
  return w <= -pi ? pi : w;
}

Vec frequency_component(const Mat& features) {
  if (features.rows() < 2) throw ContractError("frequency_component: need at least two tokens");
  const Index t = features.rows(), d = features.cols();
  Eigen::FFT<double> fft;
  Mat phase(t, d);
  std::vector<double> row(static_cast<std::size_t>(d));
  std::vector<std::complex<double>> spec;
  for (Index i = 0; i < t; ++i) {
    for (Index k = 0; k < d; ++k) row[static_cast<std::size_t>(k)] = features(i, k);
    fft.fwd(spec, row);
    for (Index k = 0; k < d; ++k) {
      std::complex<double> c = spec[static_cast<std::size_t>(k)];
      if (k == 0 || 2 * k == d) c = {c.real(), 0.0};  // real-valued bins
      phase(i, k) = std::arg(c);
    }
  }
  const Eigen::RowVectorXd mean_phase = phase.colwise().mean();
  Vec out(t);
  for (Index i = 0; i < t; ++i) {
    double acc = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double diff = wrap_angle(phase(i, k) - mean_phase[k]);
      acc += diff * diff;
    }
    out[i] = std::sqrt(acc);
  }
  return out;
}

PatchMask threshold_mask(const Vec& scores, double tau, Index rows, Index cols) {
  if (scores.size() != rows * cols) throw ShapeError("threshold_mask: score count does not match the grid");
  PatchMask m;
  m.rows = rows;
  m.cols = cols;
  m.cells.resize(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.size(); ++i) m.cells[static_cast<std::size_t>(i)] = scores[i] >= tau ? 1 : 0;
  return m;
}

double mask_iou(const PatchMask& pred, const PatchMask& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols || pred.cells.size() != gt.cells.size()) {
    throw ShapeError("mask_iou: masks differ in shape");
  }
  Index inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.cells.size(); ++i) {
    inter += (pred.cells[i] && gt.cells[i]) ? 1 : 0;
    uni += (pred.cells[i] || gt.cells[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<SweepPoint> iou_sweep(const Vec& scores, const PatchMask& gt) {
  std::vector<double> taus(scores.data(), scores.data() + scores.size());
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  std::vector<SweepPoint> out;
  for (double tau : taus) out.push_back({tau, mask_iou(threshold_mask(scores, tau, gt.rows, gt.cols), gt)});
  out.push_back({std::numeric_limits<double>::infinity(),
                 mask_iou(threshold_mask(scores, std::numeric_limits<double>::infinity(), gt.rows, gt.cols), gt)});
  return out;
}

double mean_iou(const std::vector<Vec>& scores, const std::vector<PatchMask>& gts, double tau) {
  if (scores.size() != gts.size() || scores.empty()) throw ShapeError("mean_iou: need one mask per score map");
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) acc += mask_iou(threshold_mask(scores[i], tau, gts[i].rows, gts[i].cols), gts[i]);
  return acc / static_cast<double>(scores.size());
}

Calibration calibrate_threshold(const std::vector<Vec>& normalized_scores, const std::vector<PatchMask>& gts, Index grid) {
  if (grid < 2) throw ContractError("calibrate_threshold: grid needs at least two points");
  Calibration best{0.0, -1.0};
  for (Index g = 0; g < grid; ++g) {
    const double tau = static_cast<double>(g) / static_cast<double>(grid - 1);
    const double iou = mean_iou(normalized_scores, gts, tau);
    if (iou > best.mean_iou) best = {tau, iou};
  }
  return best;
}

template <typename S>
RobustnessTable robustness_eval(const Model<S>& model, const ImageSet& original, const ImageSet& mixed_same,
                                const ImageSet& mixed_random, Index batch_size) {
  if (original.labels != mixed_same.labels || original.labels != mixed_random.labels) {
    throw ContractError("robustness_eval: splits are not label-aligned");
  }
  const Index p = model.config().vit.patch_size;
  auto accuracy = [&](const ImageSet& set) {
    return evaluate_classifier(model, PatchCache<S>(set, p), set.labels, batch_size).accuracy;
  };
  RobustnessTable t;
  t.original = accuracy(original);
  t.mixed_same = accuracy(mixed_same);
  t.mixed_random = accuracy(mixed_random);
  t.count = original.size();
  return t;
}

int resolve_layer(int layer, const ModelConfig& cfg) {
  const int depth = static_cast<int>(cfg.vit.depth);
  const int top = cfg.has_llm_block() || cfg.has_mlp_adapter() ? depth : depth - 1;
  if (layer == -1) return depth - 1;
  if (layer < 0 || layer > top) throw ConfigError("analysis.layer", "no recorded layer " + std::to_string(layer));
  return layer;
}

namespace {

// Runs features_forward over the samples in batches, handing each image's slice of the recording to `visit`.
template <typename S, typename F>
void for_each_recorded(const Model<S>& model, const std::vector<SyntheticSample>& samples, Index batch_size, F&& visit) {
  const Index p = model.config().vit.patch_size;
  const Index n = static_cast<Index>(samples.size());
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    std::vector<const Tensor<float>*> images;
    for (Index i = start; i < end; ++i) images.push_back(&samples[i].image);
    ForwardRecording<S> rec;
    features_forward(model, patch_batch<S>(images, p), &rec);
    for (Index i = start; i < end; ++i) visit(rec, i - start, i);
  }
}

PatchMask truth_mask(const SyntheticSample& s, Index patch_size) {
  return downsample_mask(s.fg_mask, s.height(), s.width(), patch_size);
}

}  // namespace

template <typename S>
EntropyReport entropy_report(const Model<S>& model, const std::vector<SyntheticSample>& samples, int layer,
                             Index batch_size) {
  const ViTConfig& v = model.config().vit;
  EntropyReport r;
  r.layer = resolve_layer(layer, model.config());
  double fg_sum = 0.0, bg_sum = 0.0;
  Index fg_n = 0, bg_n = 0;
  for_each_recorded(model, samples, batch_size, [&](const ForwardRecording<S>& rec, Index local, Index global) {
    const Vec h = head_mean_entropy(attention_record(rec, local, v.grid(), v.grid()), r.layer);
    const RegionMeans m = fg_bg_means(h, truth_mask(samples[global], v.patch_size));
    if (m.fg) fg_sum += *m.fg, ++fg_n;
    if (m.bg) bg_sum += *m.bg, ++bg_n;
    if (m.fg && m.bg) {
      ++r.compared;
      if (*m.fg < *m.bg) ++r.fg_below_bg;
    }
    r.images.push_back(m);
    r.maps.push_back(h);
  });
  r.mean_fg = fg_n ? fg_sum / static_cast<double>(fg_n) : 0.0;
  r.mean_bg = bg_n ? bg_sum / static_cast<double>(bg_n) : 0.0;
  return r;
}

template <typename S>
IouReport iou_report(const Model<S>& model, const std::vector<SyntheticSample>& samples, int layer,
                     double calibration_fraction, Index grid, Index batch_size) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw ConfigError("analysis.calibration_fraction", "must lie in (0, 1)");
  }
  const ViTConfig& v = model.config().vit;
  IouReport r;
  r.layer = resolve_layer(layer, model.config());
  std::vector<Vec> mag, freq;
  std::vector<PatchMask> gts;
  for_each_recorded(model, samples, batch_size, [&](const ForwardRecording<S>& rec, Index local, Index global) {
    const Mat f = recorded_features(rec, r.layer, local);
    mag.push_back(per_image_normalize(magnitude_component(f)));
    freq.push_back(per_image_normalize(frequency_component(f)));
    gts.push_back(truth_mask(samples[global], v.patch_size));
  });
  const auto n = static_cast<Index>(gts.size());
  const Index n_cal = std::clamp<Index>(static_cast<Index>(std::lround(calibration_fraction * static_cast<double>(n))), 1, n - 1);
  auto head = [&](const auto& xs) { return std::vector(xs.begin(), xs.begin() + n_cal); };
  auto tail = [&](const auto& xs) { return std::vector(xs.begin() + n_cal, xs.end()); };
  r.calibration_images = n_cal;
  r.test_images = n - n_cal;
  r.magnitude = calibrate_threshold(head(mag), head(gts), grid);
  r.frequency = calibrate_threshold(head(freq), head(gts), grid);
  r.magnitude_test = mean_iou(tail(mag), tail(gts), r.magnitude.tau);
  r.frequency_test = mean_iou(tail(freq), tail(gts), r.frequency.tau);
  return r;
}

void write_iou_csv(const std::filesystem::path& path, const IouReport& r) {
  std::ofstream out = open_csv(path, kIouHeader);
  auto row = [&](const char* name, double tau, double iou, Index images) {
    out << name << ',' << fmt(tau) << ',' << fmt(iou) << ',' << images << '\n';
  };
  row("magnitude.calibration", r.magnitude.tau, r.magnitude.mean_iou, r.calibration_images);
  row("magnitude.test", r.magnitude.tau, r.magnitude_test, r.test_images);
  row("frequency.calibration", r.frequency.tau, r.frequency.mean_iou, r.calibration_images);
  row("frequency.test", r.frequency.tau, r.frequency_test, r.test_images);
}

void write_scatter_csv(const std::filesystem::path& path, const std::vector<RegionMeans>& rows) {
  std::ofstream out = open_csv(path, kScatterHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << i << ',' << (rows[i].fg ? fmt(*rows[i].fg) : "") << ',' << (rows[i].bg ? fmt(*rows[i].bg) : "") << '\n';
  }
}

void write_robustness_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, RobustnessTable>>& rows) {
  std::ofstream out = open_csv(path, kRobustnessHeader);
  for (const auto& [name, t] : rows) {
    out << name << ',' << fmt(t.original) << ',' << fmt(t.mixed_same) << ',' << fmt(t.mixed_random) << ','
        << fmt(t.orig_minus_same()) << ',' << fmt(t.orig_minus_rand()) << ',' << fmt(t.same_minus_rand()) << '\n';
  }
}

#define LUVIT_INSTANTIATE_ANALYSIS(S)                                                                          \
  template AttentionRecord attention_record(const ForwardRecording<S>&, Index, Index, Index);                \
  template Mat recorded_features(const ForwardRecording<S>&, int, Index);                                     \
  template RobustnessTable robustness_eval(const Model<S>&, const ImageSet&, const ImageSet&, const ImageSet&, \
                                           Index);                                                          \
  template EntropyReport entropy_report(const Model<S>&, const std::vector<SyntheticSample>&, int, Index);     \
  template IouReport iou_report(const Model<S>&, const std::vector<SyntheticSample>&, int, double, Index, Index);

LUVIT_INSTANTIATE_ANALYSIS(float)
LUVIT_INSTANTIATE_ANALYSIS(double)

}  // namespace luvit::analysis
