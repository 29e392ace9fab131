// Acceptance runner. Each criterion prints one line:
//   criterion N <name>: PASS|FAIL <details>
// Usage: draco_acceptance [--work DIR] [train | N ...]   (no arguments runs all)

#include <CLI11.hpp>

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "draco/cli/run.hpp"
#include "draco/core/rng.hpp"
#include "draco/data/masking.hpp"
#include "draco/eval/benchmark.hpp"
#include "draco/eval/experiment.hpp"
#include "draco/eval/metrics.hpp"
#include "draco/io/mrc.hpp"
#include "draco/model/draco_model.hpp"
#include "draco/sim/cryo_sim.hpp"
#include "draco/train/trainer.hpp"

using namespace draco;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle(const fs::path& work) {
  const auto t0 = Clock::now();
  std::ostringstream out, err;
  const int code = cli::run_cli({"gradcheck", "--instances", "20", "--out", (work / "gradcheck").string()}, out, err);
  const double secs = seconds_since(t0);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  std::size_t cases = 0, failed = 0, min_instances = SIZE_MAX;
  double worst = 0;
  std::string worst_case;
  while (std::getline(in, line)) {
    std::array<std::string, 4> f;
    std::istringstream ls(line);
    for (auto& x : f) std::getline(ls, x, ',');
    ++cases;
    min_instances = std::min<std::size_t>(min_instances, std::stoul(f[1]));
    const double e = std::stod(f[2]);
    if (e > worst) worst = e, worst_case = f[0];
    failed += f[3] != "yes";
  }
  const bool has_loss = out.str().find("draco_total_loss,") != std::string::npos;
  return {code == 0 && failed == 0 && cases > 0 && has_loss && min_instances >= 20 && secs < 120,
          fmt("cases=%zu instances>=%zu failed=%zu worst_rel_err=%.2e (%s) time=%.1fs", cases, min_instances, failed,
              worst, worst_case.c_str(), secs)};
}

// ---------------------------------------------------------------------------

Outcome noise_statistics() {
  const auto t0 = Clock::now();
  const std::size_t S = 256, M = 64;
  const double lambda = 50, sigma = 2;
  sim::CleanSignal clean{Image(S, S, 1.0f)};
  const auto mv = sim::render_movie(clean, M, lambda, sigma, 0, 2024);
  const double expect_var = lambda * 1.0 + sigma * sigma;
  double sum = 0, sq = 0;
  double var_acc = 0;
  double mse4 = 0, mse16 = 0;
  const std::size_t P = S * S;
  for (std::size_t i = 0; i < P; ++i) {
    double s = 0, s2 = 0, a4 = 0, a16 = 0;
    for (std::size_t f = 0; f < M; ++f) {
      const double n = mv.frames[f].pixels[i] - lambda;
      s += n;
      s2 += n * n;
      if (f < 4) a4 += n;
      if (f < 16) a16 += n;
    }
    sum += s;
    sq += s2;
    var_acc += (s2 - s * s / M) / (M - 1);
    mse4 += (a4 / 4) * (a4 / 4);
    mse16 += (a16 / 16) * (a16 / 16);
  }
  const double n_all = static_cast<double>(P * M);
  const double mean = sum / n_all;
  const double sd = std::sqrt(sq / n_all - mean * mean);
  const double se = sd / std::sqrt(n_all);
  const double pix_var = var_acc / static_cast<double>(P);
  const double ratio = mse4 / mse16;
  const double secs = seconds_since(t0);
  const bool ok_mean = std::abs(mean) <= 4 * se;
  const bool ok_var = std::abs(pix_var - expect_var) <= 0.05 * expect_var;
  const bool ok_ratio = ratio >= 2.67 && ratio <= 6.0;
  return {ok_mean && ok_var && ok_ratio && secs < 60,
          fmt("mean=%.4f (%.2f SE) pixel_var=%.3f expected=%.1f mse4/mse16=%.3f time=%.1fs", mean, mean / se, pix_var,
              expect_var, ratio, secs)};
}

// ---------------------------------------------------------------------------

// Upper quantile of Binomial(n, p) at level q by summing the pmf.
std::size_t binomial_upper(std::size_t n, double p, double q) {
  double cdf = 0;
  for (std::size_t k = 0; k <= n; ++k) {
    cdf += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                    (n - k) * std::log1p(-p));
    if (cdf >= q) return k;
  }
  return n;
}

Outcome mask_invariants() {
  const std::size_t samples = 10000;
  std::size_t violations = 0, checked = 0, tests = 0, excursions = 0, rejected = 0, rejection_tries = 0;
  double worst_z = 0;
  for (std::size_t n : {16u, 64u, 256u}) {
    for (double g : {0.5, 0.625, 0.75, 0.875}) {
      const std::size_t k = data::visible_count(n, g);
      std::vector<std::size_t> vis_odd(n, 0), vis_even(n, 0);
      for (std::size_t s = 0; s < samples; ++s) {
        const auto mp = data::sample_mask_pair(n, g, derive_seed(n * 1000 + static_cast<std::uint64_t>(g * 1000), s));
        ++checked;
        const bool count_ok = std::count(mp.m_odd.begin(), mp.m_odd.end(), false) == long(k) &&
                              std::count(mp.m_even.begin(), mp.m_even.end(), false) == long(k);
        if (!data::validate_mask_pair(mp).ok() || !count_ok) ++violations;
        for (std::size_t i = 0; i < n; ++i) {
          vis_odd[i] += !mp.m_odd[i];
          vis_even[i] += !mp.m_even[i];
        }
      }
      const double p = static_cast<double>(k) / static_cast<double>(n);
      const double mu = samples * p, sd = std::sqrt(samples * p * (1 - p));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c : {vis_odd[i], vis_even[i]}) {
          const double z = (static_cast<double>(c) - mu) / sd;
          worst_z = std::max(worst_z, std::abs(z));
          excursions += std::abs(z) > 3;
          ++tests;
        }
      }
    }
    for (double bad : {0.49, 0.25, 0.0, -0.5, 1.5, std::nan("")}) {
      ++rejection_tries;
      try {
        data::sample_mask_pair(n, bad, 1);
      } catch (const InvalidArgument&) {
        ++rejected;
      }
    }
  }
  // Each position-level test exceeds 3 sigma with probability 0.0027 under
  // the null, so the count of excursions is itself binomial.
  const double p3 = std::erfc(3 / std::sqrt(2.0));
  const std::size_t allowed = binomial_upper(tests, p3, 0.999);
  const bool ok = violations == 0 && rejected == rejection_tries && excursions <= allowed;
  return {ok, fmt("pairs=%zu violations=%zu rejected=%zu/%zu excursions>3sd=%zu/%zu (allowed %zu) max|z|=%.2f", checked,
                  violations, rejected, rejection_tries, excursions, tests, allowed, worst_z)};
}

// ---------------------------------------------------------------------------

Outcome structural_selection() {
  std::size_t masks = 0, rows = 0, bad_totals = 0;
  model::SelectionCounters all;
  struct Arch {
    std::size_t patch, out, embed;
  };
  for (Arch a : {Arch{4, 16, 32}, Arch{8, 64, 128}, Arch{4, 64, 32}}) {
    model::ModelConfig c;
    c.patch_size = a.patch;
    c.out_size = a.out;
    c.embed_dim = a.embed;
    if (a.embed != 128) {
      c.depth = 1;
      c.decoder_depth = 1;
      c.neck_channels = {8, 8, 8};
    }
    const auto s = model::init_model<float>(c, 3);
    const std::size_t n = c.tokens();
    Rng rng(n);
    for (double g : {0.5, 0.625, 0.75, 0.875}) {
      const std::size_t k = data::visible_count(n, g);
      for (std::size_t r = 0; r < 25; ++r) {
        ag::NoGradGuard ng;
        Image im(c.out_size, c.out_size);
        for (auto& v : im.pixels) v = static_cast<float>(normal(rng));
        const auto x = model::patches_tensor<float>(data::patchify(im, c.patch_size));
        const auto mp = data::sample_mask_pair(n, g, rng());
        model::SelectionCounters sc;
        model::combine_latents(model::encode(x, mp.m_odd, s), model::encode(x, mp.m_even, s), mp, s, &sc);
        ++masks;
        rows += n;
        if (sc.from_odd != k || sc.from_even != k || sc.from_token != n - 2 * k || sc.mixed != 0) ++bad_totals;
        all.from_odd += sc.from_odd;
        all.from_even += sc.from_even;
        all.from_token += sc.from_token;
        all.mixed += sc.mixed;
      }
    }
  }
  return {all.mixed == 0 && bad_totals == 0 && all.total() == rows,
          fmt("masks=%zu rows=%zu odd=%zu even=%zu token=%zu mixed=%zu count_mismatches=%zu", masks, rows, all.from_odd,
              all.from_even, all.from_token, all.mixed, bad_totals)};
}

// ---------------------------------------------------------------------------

std::vector<data::Triplet> fixed_batch() {
  eval::SimConfig sc;
  sc.phantom.size = 64;
  sc.phantom.n_blobs = 6;
  auto raw = eval::training_triplets(8, 55, sc);
  std::vector<data::Triplet> batch;
  for (const auto& t : raw) batch.push_back(data::normalize_triplet(t));
  return batch;
}

// fixed_masks: every step sees the same inputs, mask draws included.
std::vector<train::StepStats> overfit_run(const std::vector<data::Triplet>& batch, std::size_t steps, bool fixed_masks) {
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.steps_per_epoch = steps;
  train::Trainer<float> tr(model::init_model<float>(model::ModelConfig{}, 0), tc);
  std::vector<std::uint64_t> seeds(batch.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(77, i);
  std::vector<train::StepStats> out;
  for (std::size_t i = 0; i < steps; ++i) out.push_back(fixed_masks ? tr.step_with_masks(batch, seeds) : tr.train_step(batch));
  return out;
}

double relative_drop(const std::vector<train::StepStats>& run) {
  double tail = 0;
  for (std::size_t i = run.size() - 10; i < run.size(); ++i) tail += run[i].loss / 10;
  return 1 - tail / run[0].loss;
}

Outcome overfit_batch() {
  const auto t0 = Clock::now();
  const auto batch = fixed_batch();
  const std::size_t steps = 200;
  const auto a = overfit_run(batch, steps, true);
  const auto b = overfit_run(batch, steps, true);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) {
    same = std::bit_cast<std::uint64_t>(a[i].loss) == std::bit_cast<std::uint64_t>(b[i].loss) &&
           std::bit_cast<std::uint64_t>(a[i].grad_norm) == std::bit_cast<std::uint64_t>(b[i].grad_norm);
  }
  const double drop = relative_drop(a);
  const double secs = seconds_since(t0);
  // Fresh masks every step, reported for comparison only.
  const double drop_fresh = relative_drop(overfit_run(batch, steps, false));
  return {drop >= 0.5 && same && secs < 300,
          fmt("initial=%.4f drop(mean of last 10)=%.1f%% bitwise_repeat=%s time=%.0fs | fresh masks drop=%.1f%%",
              a[0].loss, 100 * drop, same ? "yes" : "no", secs, 100 * drop_fresh)};
}

// ---------------------------------------------------------------------------

eval::SimConfig train_sim() {
  eval::SimConfig c;
  c.phantom.size = 256;
  c.phantom.n_blobs = 30;
  return c;
}

eval::SimConfig test_sim() {
  eval::SimConfig c;
  c.phantom.size = 128;
  c.phantom.n_blobs = 8;
  return c;
}

constexpr std::size_t kWarmupEpochs = 25, kHybridEpochs = 50;

struct Trained {
  std::map<std::string, model::ModelState<float>> arms;
  double train_seconds = 0;
};

fs::path arm_path(const fs::path& work, const std::string& name) { return work / "models" / (name + ".ckpt"); }

Trained train_models(const fs::path& work, bool verbose) {
  Trained t;
  const auto t0 = Clock::now();
  train::Dataset ds{eval::training_triplets(512, 1, train_sim())};
  if (verbose) std::printf("generated %zu training triplets in %.0fs\n", ds.sources.size(), seconds_since(t0));
  train::TrainConfig wc;
  wc.stage = train::Stage::warmup;
  wc.epochs = kWarmupEpochs;
  train::Trainer<float> warm(model::init_model<float>(model::ModelConfig{}, 0), wc);
  for (std::size_t i = 0; i < wc.total_steps(); ++i) {
    const auto st = warm.fit_step(ds);
    if (verbose && (i + 1) % 400 == 0) std::printf("warmup step %zu loss %.4f\n", i + 1, st.loss);
  }
  fs::create_directories(work / "models");
  train::save_checkpoint(arm_path(work, "warmup"), warm);
  for (const auto& arm : eval::loss_arms()) {
    auto s = warm.state().clone();
    s.config.gamma = arm.gamma;
    s.config.lambda = arm.lambda;
    s.config.n2n_weight = arm.n2n_weight;
    train::TrainConfig hc;
    hc.stage = train::Stage::hybrid;
    hc.epochs = kHybridEpochs;
    train::Trainer<float> tr(s, hc);
    for (std::size_t i = 0; i < hc.total_steps(); ++i) {
      const auto st = tr.fit_step(ds);
      if (verbose && (i + 1) % 800 == 0) std::printf("%s step %zu loss %.4f\n", arm.name.c_str(), i + 1, st.loss);
    }
    train::save_checkpoint(arm_path(work, arm.name), tr);
    t.arms.emplace(arm.name, tr.state().clone());
  }
  t.train_seconds = seconds_since(t0);
  if (verbose) std::printf("training finished in %.0fs\n", t.train_seconds);
  return t;
}

Trained& trained(const fs::path& work) {
  static std::optional<Trained> cache;
  if (cache) return *cache;
  bool have = true;
  for (const auto& arm : eval::loss_arms()) have = have && fs::exists(arm_path(work, arm.name));
  if (have) {
    Trained t;
    for (const auto& arm : eval::loss_arms()) t.arms.emplace(arm.name, train::load_checkpoint(arm_path(work, arm.name)).state);
    cache = std::move(t);
  } else {
    cache = train_models(work, true);
  }
  return *cache;
}

const std::vector<eval::SyntheticMicrograph>& test_set() {
  static const auto set = eval::test_micrographs(64, 99, test_sim());
  return set;
}

Outcome denoising_efficacy(const fs::path& work) {
  const auto& s = trained(work).arms.at("full");
  const auto r = eval::score_benchmark(test_set(), s, {});
  const auto& m = r.mean;
  const bool order = m.snr_model >= m.snr_lowpass && m.snr_lowpass >= m.snr_raw;
  return {order && m.snr_model - m.snr_raw >= 3 && m.psnr_model - m.psnr_raw >= 2,
          fmt("images=%zu snr_db raw=%.2f lowpass=%.2f draco=%.2f (+%.2f) psnr_db raw=%.2f lowpass=%.2f draco=%.2f (+%.2f)",
              r.images.size(), m.snr_raw, m.snr_lowpass, m.snr_model, m.snr_model - m.snr_raw, m.psnr_raw,
              m.psnr_lowpass, m.psnr_model, m.psnr_model - m.psnr_raw)};
}

Outcome ablation_direction(const fs::path& work) {
  std::map<std::string, double> snr, psnr, ens;
  for (const auto& [name, s] : trained(work).arms) {
    const auto r = eval::score_benchmark(test_set(), s, {});
    snr[name] = r.mean.snr_model;
    psnr[name] = r.mean.psnr_model;
    eval::DenoiseOptions e;
    e.ensemble = 4;
    ens[name] = eval::score_benchmark(test_set(), s, e).mean.snr_model;
  }
  const bool ok = snr["full"] >= snr["no_recon"] && snr["full"] >= snr["no_n2n"];
  return {ok, fmt("snr_db full=%.2f no_recon=%.2f no_n2n=%.2f | psnr_db full=%.2f no_recon=%.2f no_n2n=%.2f | "
                  "ensemble4 snr_db full=%.2f no_recon=%.2f no_n2n=%.2f",
                  snr["full"], snr["no_recon"], snr["no_n2n"], psnr["full"], psnr["no_recon"], psnr["no_n2n"],
                  ens["full"], ens["no_recon"], ens["no_n2n"])};
}

Outcome curation_probe(const fs::path& work) {
  const auto& s = trained(work).arms.at("full");
  const auto before = train::encoder_hash(s);
  const auto set = eval::curation_set(400, 7, test_sim());
  eval::ProbeOptions po;
  po.reg_strength = 0;  // chosen by cross-validation on the training split
  const auto r = eval::run_curation(set, s, 0.8, po);
  const auto after = train::encoder_hash(s);
  return {r.test.accuracy >= 0.9 && r.test.f1 >= 0.9 && before == after,
          fmt("train=%zu test=%zu cv_reg=%g accuracy=%.3f f1=%.3f precision=%.3f recall=%.3f encoder_hash %016llx -> %016llx",
              r.n_train, r.n_test, r.head.weight.empty() ? 0.0 : r.selection.reg_strength, r.test.accuracy, r.test.f1, r.test.precision, r.test.recall,
              static_cast<unsigned long long>(before), static_cast<unsigned long long>(after))};
}

// ---------------------------------------------------------------------------

bool same_bits(const Image& a, const Image& b) {
  return a.height == b.height && a.width == b.width &&
         std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0;
}

Outcome mrc_roundtrip() {
  Rng rng(9);
  std::size_t mismatches = 0, nan_values = 0;
  std::vector<std::vector<std::uint8_t>> seeds;
  for (std::size_t it = 0; it < 1000; ++it) {
    const std::size_t h = 1 + rng() % 128, w = 1 + rng() % 128, z = 1 + rng() % 8;
    std::vector<Image> stack(z, Image(h, w));
    for (auto& im : stack)
      for (auto& v : im.pixels) {
        const auto mode = rng() % 8;
        if (mode == 0) {
          // NaN with a random payload and sign.
          v = std::bit_cast<float>(std::uint32_t(0x7f800000u | (1u + rng() % 0x7fffffu) | (rng() % 2) << 31));
        } else if (mode == 1) {
          v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
        } else {
          v = static_cast<float>(normal(rng) * 100);
        }
        nan_values += std::isnan(v);
      }
    const auto bytes = io::write_mrc(stack, 1.0f + static_cast<float>(rng() % 4));
    const auto back = io::read_mrc(bytes);
    bool ok = back.sections.size() == z;
    for (std::size_t i = 0; ok && i < z; ++i) ok = same_bits(stack[i], back.sections[i]);
    ok = ok && io::write_mrc(back) == bytes;
    mismatches += !ok;
    if (seeds.size() < 32 && bytes.size() < 20000) seeds.push_back(bytes);
  }

  std::size_t structured = 0, accepted = 0, unstructured = 0;
  std::map<std::string, std::size_t> codes;
  for (std::size_t it = 0; it < 10000; ++it) {
    std::vector<std::uint8_t> buf;
    const auto kind = rng() % 5;
    if (kind == 0) {
      buf.resize(rng() % 2048);
      for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
    } else {
      buf = seeds[rng() % seeds.size()];
      if (kind == 1) {
        buf.resize(rng() % (buf.size() + 1));
      } else if (kind == 2) {
        for (int f = 0; f < 1 + int(rng() % 8); ++f) buf[rng() % std::min<std::size_t>(buf.size(), 1024)] = std::uint8_t(rng());
      } else if (kind == 3) {
        const std::size_t off = 4 * (rng() % 56);
        const auto v = static_cast<std::uint32_t>(rng() % 3 == 0 ? rng() : rng() % 300);
        std::memcpy(buf.data() + off, &v, 4);
      } else {
        buf.resize(buf.size() + 1 + rng() % 64, std::uint8_t(rng()));
      }
    }
    try {
      const auto f = io::read_mrc(buf);
      ++accepted;
      for (const auto& s : f.sections) {
        if (s.pixels.size() != s.height * s.width) ++unstructured;
      }
    } catch (const io::MrcError& e) {
      ++structured;
      ++codes[io::to_string(e.code())];
    } catch (const Error&) {
      ++structured;
      ++codes["other_structured"];
    } catch (...) {
      ++unstructured;
    }
  }
  std::string code_list;
  for (const auto& [k, v] : codes) code_list += " " + k + "=" + std::to_string(v);
  return {mismatches == 0 && unstructured == 0,
          fmt("roundtrip stacks=1000 mismatches=%zu nan_values=%zu | fuzz buffers=10000 structured_errors=%zu "
              "accepted=%zu unstructured=%zu |%s",
              mismatches, nan_values, structured, accepted, unstructured, code_list.c_str())};
}

// ---------------------------------------------------------------------------

Outcome snr_hand_cases() {
  // Signal box constant 3, background box alternating 0/2: contrast 2, variance 1.
  Image im(4, 8, 0.0f);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      im.at(y, x) = 3.0f;
      im.at(y, x + 4) = (x + y) % 2 == 0 ? 0.0f : 2.0f;
    }
  const io::RegionPair p{{0, 0, 4, 4}, {4, 0, 4, 4}};
  const double one = eval::snr_db(im, {p});
  const double expect_one = 10 * std::log10(4.0);

  // Second pair with contrast 1 and variance 1: 0 dB, so the mean is half of the first.
  Image im2(4, 12, 0.0f);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      im2.at(y, x) = 3.0f;
      im2.at(y, x + 4) = (x + y) % 2 == 0 ? 0.0f : 2.0f;
      im2.at(y, x + 8) = 2.0f;
    }
  const io::RegionPair q{{8, 0, 4, 4}, {4, 0, 4, 4}};
  const double avg = eval::snr_db(im2, {p, q});

  // Affine invariance on a grid where 0.25 x - 100 is exact in float.
  Rng rng(4);
  Image a(32, 32);
  for (auto& v : a.pixels) v = std::ldexp(std::round(std::ldexp(static_cast<float>(normal(rng)), 10)), -10);
  for (std::size_t y = 4; y < 12; ++y)
    for (std::size_t x = 4; x < 12; ++x) a.at(y, x) += 3;
  Image b = a;
  for (auto& v : b.pixels) v = 0.25f * v - 100.0f;
  const std::vector<io::RegionPair> pairs{{{4, 4, 8, 8}, {18, 18, 8, 8}}, {{4, 4, 8, 8}, {20, 2, 8, 8}}};
  const double sa = eval::snr_db(a, pairs), sb = eval::snr_db(b, pairs);

  const double e1 = std::abs(one - expect_one), e2 = std::abs(avg - expect_one / 2), e3 = std::abs(sa - sb);
  return {e1 < 1e-6 && e2 < 1e-6 && e3 < 1e-6,
          fmt("single=%.7f (err %.1e) average=%.7f (err %.1e) affine %.7f vs %.7f (err %.1e)", one, e1, avg, e2, sa, sb,
              e3)};
}

// ---------------------------------------------------------------------------

Outcome determinism_resume(const fs::path& work) {
  eval::SimConfig sc;
  sc.phantom.size = 256;
  sc.phantom.n_blobs = 30;
  train::Dataset ds{eval::training_triplets(4, 31, sc)};
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.steps_per_epoch = 15;
  tc.warmup_steps = 3;
  const auto init = model::init_model<float>(model::ModelConfig{}, 8);
  const std::size_t cut = 5, tail = 10;

  train::Trainer<float> full(init, tc);
  std::vector<train::StepStats> ref;
  for (std::size_t i = 0; i < cut + tail; ++i) {
    const auto st = full.fit_step(ds);
    if (i >= cut) ref.push_back(st);
  }

  train::Trainer<float> part(init, tc);
  for (std::size_t i = 0; i < cut; ++i) part.fit_step(ds);
  const auto path = work / "resume" / "cut.ckpt";
  fs::create_directories(path.parent_path());
  train::save_checkpoint(path, part);
  auto resumed = train::resume(train::load_checkpoint(path, &init.config));
  std::size_t diffs = 0;
  for (std::size_t i = 0; i < tail; ++i) {
    const auto st = resumed.fit_step(ds);
    diffs += std::bit_cast<std::uint64_t>(st.loss) != std::bit_cast<std::uint64_t>(ref[i].loss);
    diffs += std::bit_cast<std::uint64_t>(st.grad_norm) != std::bit_cast<std::uint64_t>(ref[i].grad_norm);
  }
  const bool same_weights = train::encode_checkpoint(resumed) == train::encode_checkpoint(full);
  return {diffs == 0 && same_weights,
          fmt("losses compared=%zu bit_differences=%zu final_checkpoint_identical=%s", tail, diffs,
              same_weights ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DRACO acceptance runner"};
  std::string work = (fs::temp_directory_path() / "draco_acceptance").string();
  std::vector<std::string> which;
  app.add_option("--work", work, "scratch directory for checkpoints")->capture_default_str();
  app.add_option("items", which, "criterion numbers, or 'train' to build the shared models");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  if (which.size() == 1 && which[0] == "train") {
    train_models(work, true);
    return 0;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", [&] { return gradient_oracle(work); }},
      {"noise statistics", noise_statistics},
      {"mask invariants", mask_invariants},
      {"latent selection", structural_selection},
      {"overfit fixed batch", overfit_batch},
      {"denoising efficacy", [&] { return denoising_efficacy(work); }},
      {"loss ablation", [&] { return ablation_direction(work); }},
      {"curation probe", [&] { return curation_probe(work); }},
      {"mrc roundtrip and fuzz", mrc_roundtrip},
      {"snr hand cases", snr_hand_cases},
      {"resume determinism", [&] { return determinism_resume(work); }},
  };
  std::vector<std::size_t> run;
  if (which.empty()) {
    for (std::size_t i = 1; i <= criteria.size(); ++i) run.push_back(i);
  } else {
    for (const auto& w : which) {
      const std::size_t i = std::stoul(w);
      if (i < 1 || i > criteria.size()) {
        std::cerr << "unknown criterion " << w << "\n";
        return 2;
      }
      run.push_back(i);
    }
  }
  int failed = 0;
  for (std::size_t i : run) {
    const auto& [name, fn] = criteria[i - 1];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu %s: %s %s\n", i, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
