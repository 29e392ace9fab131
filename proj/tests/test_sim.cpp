#include <gtest/gtest.h>

#include <cmath>

#include "draco/sim/cryo_sim.hpp"

using namespace draco;
using namespace draco::sim;

namespace {

CleanSignal constant_signal(std::size_t n, float c) { return {Image(n, n, c), 1.0f}; }

double sum(const Image& im) {
  double s = 0;
  for (float v : im.pixels) s += v;
  return s;
}

}  // namespace

TEST(Phantom, NoBlobsIsConstantBackground) {
  PhantomConfig cfg;
  cfg.size = 64;
  cfg.n_blobs = 0;
  cfg.background = 1.0;
  auto p = make_phantom(3, cfg);
  for (float v : p.signal.image.pixels) EXPECT_EQ(v, 1.0f);
}

TEST(Phantom, SameSeedSameImage) {
  PhantomConfig cfg;
  cfg.size = 64;
  EXPECT_EQ(make_phantom(11, cfg).signal.image, make_phantom(11, cfg).signal.image);
  EXPECT_NE(make_phantom(11, cfg).signal.image, make_phantom(12, cfg).signal.image);
}

TEST(Phantom, CentredBlobPeaksAtBackgroundPlusAmplitude) {
  const double a = 0.7;
  auto p = render_phantom(65, 65, {Blob{32, 32, 3.0, a}}, 1.0);
  const double expected = 1.0 + a * std::exp(0.0);
  EXPECT_NEAR(min_max(p.signal.image).second, expected, 1e-6);
  // One pixel off centre the Gaussian is a * exp(-1 / (2 sigma^2)).
  EXPECT_NEAR(p.signal.image.at(32, 33), 1.0 + a * std::exp(-1.0 / 18.0), 1e-6);
}

TEST(Phantom, RejectsInvalidConfig) {
  PhantomConfig cfg;
  cfg.size = 16;
  EXPECT_THROW(make_phantom(1, cfg), InvalidArgument);
  cfg = {};
  cfg.blob_sigma_min = 5;
  cfg.blob_sigma_max = 2;
  EXPECT_THROW(make_phantom(1, cfg), InvalidArgument);
  cfg = {};
  cfg.amplitude_min = -1;
  EXPECT_THROW(make_phantom(1, cfg), InvalidArgument);
}

TEST(Psf, ZeroSigmaIsIdentity) {
  PhantomConfig cfg;
  cfg.size = 32;
  auto p = make_phantom(5, cfg);
  EXPECT_EQ(apply_psf(p.signal, 0.0).image, p.signal.image);
}

TEST(Psf, DeltaBecomesSampledGaussian) {
  const double s = 1.5;
  CleanSignal d{Image(33, 33, 0.0f), 1.0f};
  d.image.at(16, 16) = 1.0f;
  auto out = apply_psf(d, s).image;
  // Independent oracle: normalized 2D samples of exp(-r^2 / 2s^2) over the same support.
  const int r = static_cast<int>(std::ceil(4 * s));
  double norm = 0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) norm += std::exp(-(x * x + y * y) / (2 * s * s));
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      EXPECT_NEAR(out.at(16 + y, 16 + x), std::exp(-(x * x + y * y) / (2 * s * s)) / norm, 1e-6);
    }
  }
  EXPECT_EQ(out.at(0, 0), 0.0f);
}

TEST(Psf, PreservesFlux) {
  PhantomConfig cfg;
  cfg.size = 64;
  auto p = make_phantom(9, cfg);
  for (double s : {0.5, 1.0, 3.0}) {
    const double in = sum(p.signal.image), out = sum(apply_psf(p.signal, s).image);
    EXPECT_NEAR(out / in, 1.0, 1e-3) << "sigma " << s;
  }
  EXPECT_THROW(apply_psf(p.signal, -1.0), InvalidArgument);
}

TEST(Movie, HighDoseFrameMatchesSignal) {
  const float c = 0.8f;
  const double dose = 1e6;
  auto mv = render_movie(constant_signal(128, c), 2, dose, 0.0, 0, 1);
  double worst = 0;
  for (float v : mv.frames[0].pixels) worst = std::max(worst, std::abs(v / dose - c) / c);
  EXPECT_LT(worst, 0.005);
}

TEST(Movie, PerPixelVarianceMatchesModel) {
  const float c = 1.0f;
  const double dose = 20, sigma = 1.5;
  auto mv = render_movie(constant_signal(128, c), 4, dose, sigma, 0, 2);
  for (const auto& f : mv.frames) {
    auto m = moments(f);
    EXPECT_NEAR(m.variance / (dose * c + sigma * sigma), 1.0, 0.05);
    EXPECT_NEAR(m.mean, dose * c, 4 * std::sqrt((dose * c + sigma * sigma) / f.size()));
  }
}

TEST(Movie, FrameAverageConverges) {
  PhantomConfig cfg;
  cfg.size = 64;
  auto p = make_phantom(4, cfg);
  const double dose = 2.0;
  auto mv = render_movie(p.signal, 64, dose, 1.0, 0, 5);
  Image target = scaled(p.signal.image, static_cast<float>(dose));
  Image mean(64, 64);
  for (const auto& f : mv.frames) mean += f;
  mean = scaled(mean, 1.0f / 64);
  const double m_avg = mse(mean, target);
  for (const auto& f : mv.frames) EXPECT_GT(mse(f, target) / m_avg, 10.0);
}

TEST(Movie, DeterministicAndValidated) {
  auto s = constant_signal(32, 1.0f);
  auto a = render_movie(s, 4, 3.0, 1.0, 2, 77), b = render_movie(s, 4, 3.0, 1.0, 2, 77);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.drift_per_frame, b.drift_per_frame);
  EXPECT_THROW(render_movie(s, 1, 3.0, 1.0, 0, 1), InvalidArgument);
  EXPECT_THROW(render_movie(s, 2, 0.0, 1.0, 0, 1), InvalidArgument);
  EXPECT_THROW(render_movie(s, 2, 1.0, -1.0, 0, 1), InvalidArgument);
}

TEST(Movie, DriftIsBoundedWalk) {
  auto mv = render_movie(constant_signal(32, 1.0f), 40, 1.0, 0.0, 3, 8);
  EXPECT_EQ(mv.drift_per_frame[0], Shift{});
  for (std::size_t i = 1; i < mv.size(); ++i) {
    const auto d = mv.drift_per_frame[i], prev = mv.drift_per_frame[i - 1];
    EXPECT_LE(std::abs(d.dx), 3);
    EXPECT_LE(std::abs(d.dy), 3);
    EXPECT_LE(std::abs(d.dx - prev.dx), 1);
    EXPECT_LE(std::abs(d.dy - prev.dy), 1);
  }
}

TEST(Align, NoDriftIsUnchanged) {
  PhantomConfig cfg;
  cfg.size = 64;
  auto mv = render_movie(make_phantom(1, cfg).signal, 4, 50.0, 1.0, 0, 3);
  EXPECT_EQ(align_frames(mv).frames, mv.frames);
}

TEST(Align, RecoversKnownCleanShift) {
  PhantomConfig cfg;
  cfg.size = 64;
  auto clean = make_phantom(2, cfg).signal.image;
  Movie mv;
  mv.frames = {clean, circular_shift(clean, {3, -2})};
  auto est = estimate_drift(mv);
  EXPECT_EQ(est[1], (Shift{3, -2}));
  EXPECT_EQ(align_frames(mv).frames[1], clean);
}

TEST(Align, NoisyHighDoseShiftsMostlyRecovered) {
  std::size_t hits = 0, total = 0;
  PhantomConfig cfg;
  cfg.size = 64;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto mv = render_movie(make_phantom(seed, cfg).signal, 16, 200.0, 1.0, 4, seed + 100);
    auto est = estimate_drift(mv);
    for (std::size_t i = 1; i < mv.size(); ++i) {
      const auto t = mv.drift_per_frame[i], b = mv.drift_per_frame[0];
      hits += est[i] == Shift{t.dx - b.dx, t.dy - b.dy};
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(hits) / total, 0.95);
}

TEST(Align, ConstantFramesAreDegenerate) {
  Movie mv;
  mv.frames = {Image(16, 16, 2.0f), Image(16, 16, 2.0f)};
  EXPECT_THROW(align_frames(mv), DegenerateInput);
}

TEST(Defects, Taxonomy) {
  PhantomConfig cfg;
  cfg.size = 64;
  auto p = make_phantom(6, cfg);
  auto c = inject_defect(p, DefectKind::clean, 1);
  EXPECT_EQ(c.signal.image, p.signal.image);
  EXPECT_TRUE(c.label.is_accept);

  auto e = inject_defect(p, DefectKind::empty, 1);
  for (float v : e.signal.image.pixels) EXPECT_EQ(v, static_cast<float>(p.background));
  EXPECT_FALSE(e.label.is_accept);

  for (std::uint64_t s = 0; s < 20; ++s) {
    auto ice = inject_defect(make_phantom(s, cfg), DefectKind::ice_blob, s);
    EXPECT_GE(min_max(ice.signal.image).second, 5 * min_max(make_phantom(s, cfg).signal.image).second);
    EXPECT_FALSE(ice.label.is_accept);
  }

  auto blur = inject_defect(p, DefectKind::drift_blur, 3);
  EXPECT_NE(blur.signal.image, p.signal.image);
  EXPECT_LT(moments(blur.signal.image).variance, moments(p.signal.image).variance);
  EXPECT_THROW(parse_defect_kind("ethane"), InvalidArgument);
  EXPECT_EQ(parse_defect_kind("drift_blur"), DefectKind::drift_blur);
}
