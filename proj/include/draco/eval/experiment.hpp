#pragma once

#include <functional>
#include <string>
#include <vector>

#include "draco/eval/benchmark.hpp"
#include "draco/eval/denoise.hpp"
#include "draco/eval/metrics.hpp"
#include "draco/eval/probe.hpp"
#include "draco/train/trainer.hpp"

namespace draco::eval {

struct ImageScore {
  double snr_raw = 0, snr_lowpass = 0, snr_model = 0;
  double psnr_raw = 0, psnr_lowpass = 0, psnr_model = 0;
  double mse_raw = 0, mse_model = 0;
  std::size_t pairs = 0;
};

struct BenchmarkScores {
  std::vector<ImageScore> images;
  ImageScore mean;
};

template <class T>
BenchmarkScores score_benchmark(const std::vector<SyntheticMicrograph>& set, const model::ModelState<T>& s,
                                const DenoiseOptions& opt, double cutoff = 0.25) {
  BenchmarkScores out;
  for (const auto& m : set) {
    const Image& raw = m.triplet.original;
    const Image lp = lowpass_filter(raw, cutoff);
    const Image den = denoise(raw, s, opt);
    ImageScore r;
    r.pairs = m.pairs.size();
    if (!m.pairs.empty()) {
      r.snr_raw = snr_db(raw, m.pairs);
      r.snr_lowpass = snr_db(lp, m.pairs);
      r.snr_model = snr_db(den, m.pairs);
    }
    r.psnr_raw = psnr(raw, m.expected);
    r.psnr_lowpass = psnr(lp, m.expected);
    r.psnr_model = psnr(den, m.expected);
    r.mse_raw = mse(raw, m.expected);
    r.mse_model = mse(den, m.expected);
    out.images.push_back(r);
  }
  const double n = static_cast<double>(out.images.size());
  for (const auto& r : out.images) {
    out.mean.snr_raw += r.snr_raw / n;
    out.mean.snr_lowpass += r.snr_lowpass / n;
    out.mean.snr_model += r.snr_model / n;
    out.mean.psnr_raw += r.psnr_raw / n;
    out.mean.psnr_lowpass += r.psnr_lowpass / n;
    out.mean.psnr_model += r.psnr_model / n;
    out.mean.mse_raw += r.mse_raw / n;
    out.mean.mse_model += r.mse_model / n;
    out.mean.pairs += r.pairs;
  }
  return out;
}

using StepCallback = std::function<void(std::size_t step, const train::StepStats&)>;

/// Runs a stage for cfg.total_steps() steps and returns the final state.
inline model::ModelState<float> run_stage(const model::ModelState<float>& init, const train::TrainConfig& cfg,
                                          const train::Dataset& ds, const StepCallback& cb = {}) {
  train::Trainer<float> tr(init, cfg);
  for (std::size_t i = 0; i < cfg.total_steps(); ++i) {
    const auto st = tr.fit_step(ds);
    if (cb) cb(tr.step(), st);
  }
  return tr.state().clone();
}

struct Arm {
  std::string name;
  double gamma = 0.75, lambda = 1.0, n2n_weight = 1.0;
};

inline std::vector<Arm> loss_arms() { return {{"full", 0.75, 1, 1}, {"no_recon", 0.75, 0, 1}, {"no_n2n", 0.75, 1, 0}}; }

inline std::vector<Arm> mask_arms() {
  std::vector<Arm> out;
  for (double g : {0.5, 0.625, 0.75, 0.875}) out.push_back({"gamma_" + std::to_string(g).substr(0, 5), g, 1, 1});
  return out;
}

/// Mean of the tile-wise encoder features over non-overlapping tiles.
template <class T>
std::vector<double> micrograph_features(const Image& micrograph, const model::ModelState<T>& s) {
  const auto st = data::normalization_stats(micrograph);
  const Image norm = data::apply_affine(micrograph, 1.0, st.mean, st.stddev);
  const TileConfig tile{s.config.out_size, 0};
  std::vector<double> f(s.config.embed_dim, 0.0);
  std::size_t count = 0;
  for (std::size_t y0 : tile_origins(norm.height, tile))
    for (std::size_t x0 : tile_origins(norm.width, tile)) {
      const auto v = model::encoder_features(crop(norm, y0, x0, tile.size, tile.size), s);
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += v[i];
      ++count;
    }
  for (auto& v : f) v /= static_cast<double>(count);
  return f;
}

struct CurationResult {
  ProbeHead head;
  RegSelection selection;  // empty grid when the strength was fixed
  BinaryMetrics train, test;
  std::size_t n_train = 0, n_test = 0;
};

/// Deterministic split: the first `train_frac` of each class trains the probe.
/// A non-positive opt.reg_strength is chosen by cross-validation on the
/// training part alone.
template <class T>
CurationResult run_curation(const std::vector<SyntheticMicrograph>& set, const model::ModelState<T>& s,
                            double train_frac, ProbeOptions opt, std::size_t cv_folds = 5) {
  std::vector<std::vector<double>> ftr, fte;
  std::vector<bool> ytr, yte;
  std::size_t seen[2] = {0, 0}, total[2] = {0, 0};
  for (const auto& m : set) total[m.label.is_accept]++;
  for (const auto& m : set) {
    const bool y = m.label.is_accept;
    auto f = micrograph_features(m.triplet.original, s);
    if (static_cast<double>(seen[y]++) < train_frac * static_cast<double>(total[y])) {
      ftr.push_back(std::move(f));
      ytr.push_back(y);
    } else {
      fte.push_back(std::move(f));
      yte.push_back(y);
    }
  }
  CurationResult r;
  if (!(opt.reg_strength > 0)) {
    r.selection = select_reg_strength(ftr, ytr, default_reg_grid(), cv_folds, opt);
    opt.reg_strength = r.selection.reg_strength;
  }
  r.head = probe_train(ftr, ytr, opt);
  r.train = probe_eval(r.head, ftr, ytr);
  r.test = probe_eval(r.head, fte, yte);
  r.n_train = ftr.size();
  r.n_test = fte.size();
  return r;
}

}  // namespace draco::eval
