#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "draco/model/grad_cases.hpp"
#include "draco/sim/cryo_sim.hpp"
#include "draco/train/trainer.hpp"

using namespace draco;
using namespace draco::train;

namespace {

ModelConfig small_model() {
  ModelConfig c = model::tiny_config();
  c.patch_size = 4;
  c.out_size = 16;
  c.embed_dim = 16;
  c.decoder_dim = 8;
  return c;
}

Dataset small_dataset(std::size_t n, std::size_t size) {
  Dataset ds;
  sim::PhantomConfig pc;
  pc.size = size;
  pc.n_blobs = 6;
  for (std::size_t i = 0; i < n; ++i) {
    auto clean = sim::apply_psf(sim::make_phantom(i, pc).signal, 1.0);
    ds.sources.push_back(data::movie_to_triplet(sim::render_movie(clean, 8, 4.0, 1.0, 0, 100 + i)));
  }
  return ds;
}

TrainConfig small_train() {
  TrainConfig t;
  t.batch_size = 2;
  t.epochs = 1;
  t.steps_per_epoch = 40;
  t.warmup_steps = 5;
  t.crop_source = 32;
  return t;
}

std::vector<double> run_losses(Trainer<float>& tr, const Dataset& ds, std::size_t steps) {
  std::vector<double> out;
  for (std::size_t i = 0; i < steps; ++i) out.push_back(tr.fit_step(ds).loss);
  return out;
}

}  // namespace

TEST(Schedule, WarmupPeakAndCosineEnd) {
  EXPECT_EQ(lr_schedule(0, 10, 100, 1e-3), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(10, 10, 100, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(5, 10, 100, 1e-3), 5e-4);
  EXPECT_LT(lr_schedule(100, 10, 100, 1e-3), 1e-8 * 1e-3);
  EXPECT_NEAR(lr_schedule(55, 10, 100, 1e-3), 5e-4, 1e-12);
  for (std::size_t s = 11; s <= 100; ++s) EXPECT_LE(lr_schedule(s, 10, 100, 1.0), lr_schedule(s - 1, 10, 100, 1.0));
}

TEST(Settings, RoundTripAndErrors) {
  ModelConfig m;
  TrainConfig t;
  Settings s(m, t);
  s.apply_text("# comment\nmodel.gamma = 0.625\ntrain.stage = warmup\nmodel.neck_channels = 8, 16,32\ntrain.flips=false\n");
  EXPECT_EQ(m.gamma, 0.625);
  EXPECT_EQ(t.stage, Stage::warmup);
  EXPECT_EQ(m.neck_channels, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_FALSE(t.flips);
  ModelConfig m2;
  TrainConfig t2;
  Settings(m2, t2).apply_text(s.text());
  EXPECT_EQ(Settings(m2, t2).text(), s.text());
  EXPECT_THROW(s.apply_text("model.bogus = 1"), ConfigError);
  EXPECT_THROW(s.apply_text("model.depth = two"), ConfigError);
  EXPECT_THROW(s.apply_text("train.stage = finetune"), ConfigError);
  EXPECT_THROW(s.apply_text("just words"), ConfigError);
}

TEST(Trainer, IdenticalRunsGiveIdenticalLosses) {
  auto ds = small_dataset(3, 32);
  auto s = model::init_model<float>(small_model(), 1);
  Trainer<float> a(s, small_train()), b(s, small_train());
  EXPECT_EQ(run_losses(a, ds, 8), run_losses(b, ds, 8));
}

TEST(Trainer, DoesNotAliasTheCallersState) {
  auto s = model::init_model<float>(small_model(), 1);
  const auto before = encoder_hash(s);
  Trainer<float> tr(s, small_train());
  run_losses(tr, small_dataset(2, 32), 3);
  EXPECT_EQ(encoder_hash(s), before);
  EXPECT_NE(encoder_hash(tr.state()), before);
}

TEST(Trainer, WarmupIgnoresHalfMovies) {
  auto ds = small_dataset(2, 32);
  auto s = model::init_model<float>(small_model(), 2);
  auto cfg = small_train();
  cfg.stage = Stage::warmup;
  Trainer<float> a(s, cfg), b(s, cfg);
  auto batch = a.sample_batch(ds);
  b.sample_batch(ds);
  auto perturbed = batch;
  for (auto& t : perturbed) {
    for (auto& v : t.odd.pixels) v = 100.0f;
    for (auto& v : t.even.pixels) v = -3.0f;
  }
  EXPECT_EQ(a.train_step(batch).loss, b.train_step(perturbed).loss);
}

TEST(Trainer, LossDecreasesOnSmallProblem) {
  auto ds = small_dataset(2, 32);
  auto cfg = small_train();
  cfg.steps_per_epoch = 60;
  cfg.base_lr = 3e-3;
  Trainer<float> tr(model::init_model<float>(small_model(), 3), cfg);
  auto batch = tr.sample_batch(ds);
  const double first = tr.train_step(batch).loss;
  double last = first;
  for (int i = 0; i < 59; ++i) last = tr.train_step(batch).loss;
  EXPECT_LT(last, first);
}

TEST(Trainer, ClippingKeepsGradientSigns) {
  auto ds = small_dataset(2, 32);
  auto cfg = small_train();
  cfg.clip_norm = 1e-3;
  Trainer<float> tr(model::init_model<float>(small_model(), 4), cfg);
  auto batch = tr.sample_batch(ds);
  // Recompute the same step without clipping and compare signs.
  auto cfg2 = cfg;
  cfg2.clip_norm = 0;
  Trainer<float> ref(model::init_model<float>(small_model(), 4), cfg2);
  std::vector<std::uint64_t> seeds{1, 2};
  auto st = tr.step_with_masks(batch, seeds);
  ref.step_with_masks(batch, seeds);
  EXPECT_GT(st.grad_norm, cfg.clip_norm);
  std::vector<std::span<const float>> ga, gb;
  tr.state().visit([&](const std::string&, const ag::Tensor<float>& p) { ga.push_back(p.grad()); });
  ref.state().visit([&](const std::string&, const ag::Tensor<float>& p) { gb.push_back(p.grad()); });
  double sq = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    for (std::size_t j = 0; j < ga[i].size(); ++j) {
      EXPECT_EQ(std::signbit(ga[i][j]), std::signbit(gb[i][j]));
      sq += double(ga[i][j]) * ga[i][j];
    }
  }
  EXPECT_NEAR(std::sqrt(sq), cfg.clip_norm, 1e-6);
}

TEST(Checkpoint, RoundTripsEverything) {
  auto ds = small_dataset(2, 32);
  Trainer<float> tr(model::init_model<float>(small_model(), 5), small_train());
  run_losses(tr, ds, 3);
  auto bytes = encode_checkpoint(tr);
  auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.step, 3u);
  EXPECT_EQ(serialize_rng(ck.rng), serialize_rng(tr.rng()));
  std::vector<ag::Buffer<float>> a, b;
  tr.state().visit([&](const std::string&, const ag::Tensor<float>& p) { a.push_back(p.values()); });
  ck.state.visit([&](const std::string&, const ag::Tensor<float>& p) { b.push_back(p.values()); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(ck.optimizer.m, tr.optimizer().m);
  EXPECT_EQ(ck.optimizer.v, tr.optimizer().v);
  EXPECT_EQ(model_config_hash(ck.model), model_config_hash(tr.state().config));
  EXPECT_EQ(encode_checkpoint(resume(ck)), bytes);
}

TEST(Checkpoint, ResumeIsBitwise) {
  auto ds = small_dataset(3, 32);
  auto s = model::init_model<float>(small_model(), 6);
  Trainer<float> straight(s, small_train());
  run_losses(straight, ds, 5);
  auto bytes = encode_checkpoint(straight);
  const auto expected = run_losses(straight, ds, 10);
  auto resumed = resume(decode_checkpoint(bytes));
  EXPECT_EQ(run_losses(resumed, ds, 10), expected);
}

TEST(Checkpoint, CorruptionAndMismatch) {
  Trainer<float> tr(model::init_model<float>(small_model(), 7), small_train());
  auto bytes = encode_checkpoint(tr);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  try {
    decode_checkpoint(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 3] ^= 1;
  EXPECT_THROW(decode_checkpoint(flipped), Error);
  ModelConfig other = small_model();
  other.depth = 2;
  EXPECT_THROW(decode_checkpoint(bytes, &other), ConfigError);
  const ModelConfig same = small_model();
  EXPECT_NO_THROW(decode_checkpoint(bytes, &same));
}

TEST(Checkpoint, FileSaveIsAtomicAndLoadable) {
  const auto dir = std::filesystem::temp_directory_path() / "draco_ckpt_test";
  std::filesystem::create_directories(dir);
  Trainer<float> tr(model::init_model<float>(small_model(), 8), small_train());
  save_checkpoint(dir / "a.ckpt", tr);
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt").step, 0u);
  for (const auto& e : std::filesystem::directory_iterator(dir)) EXPECT_EQ(e.path().extension(), ".ckpt");
  std::filesystem::remove_all(dir);
}
