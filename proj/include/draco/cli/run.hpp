#pragma once

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "draco/eval/experiment.hpp"
#include "draco/io/mrc.hpp"
#include "draco/io/pgm.hpp"
#include "draco/io/region_pairs.hpp"
#include "draco/model/grad_cases.hpp"
#include "draco/train/trainer.hpp"

namespace draco::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,
  exit_usage = 2,          // unknown flag, bad flag value, missing subcommand
  exit_missing_input = 3,  // input file absent or unreadable
  exit_config = 4,         // conflicting or invalid configuration
  exit_format = 5,
  exit_shape = 6,
  exit_invalid = 7,
  exit_degenerate = 8,
  exit_numeric = 9,
  exit_internal = 10,
  exit_check_failed = 11,  // a verification subcommand ran and found a violation
};

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::io: return exit_missing_input;
    case ErrorKind::config: return exit_config;
    case ErrorKind::format: return exit_format;
    case ErrorKind::shape: return exit_shape;
    case ErrorKind::invalid: return exit_invalid;
    case ErrorKind::degenerate: return exit_degenerate;
    case ErrorKind::numeric: return exit_numeric;
    case ErrorKind::graph: return exit_internal;
  }
  return exit_failure;
}

inline std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

/// One line: `draco: error code=<n> kind=<kind> message="<text>"`.
inline int report_error(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << "draco: error code=" << code << " kind=" << kind << " message=" << quoted(message) << "\n";
  return code;
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  double wall_seconds = 0;

  std::string text() const {
    std::ostringstream o;
    o << "command = " << command << "\n";
    o << "tool_version = " << kVersion << "\n";
    o << "argv =";
    for (const auto& a : argv) o << " " << quoted(a);
    o << "\nseed = " << seed << "\n";
    for (const auto& i : inputs) o << "input = " << i << "\n";
    for (const auto& i : outputs) o << "output = " << i << "\n";
    o << "wall_seconds = " << std::fixed << std::setprecision(3) << wall_seconds << "\n";
    o << "[config]\n" << config;
    return o.str();
  }
};

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::ostringstream o;
  o << f.rdbuf();
  return o.str();
}

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

inline void require_file(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p)) throw IoError("missing input " + p.string());
}

inline std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return stem + buf + ext;
}

/// Imaging flags shared by simulate, curate and ablate.
struct SimFlags {
  eval::SimConfig cfg;
  void add(CLI::App& app) {
    app.add_option("--size", cfg.phantom.size, "micrograph side in pixels");
    app.add_option("--blobs", cfg.phantom.n_blobs, "blobs per phantom");
    app.add_option("--frames", cfg.frames, "movie frames M");
    app.add_option("--dose", cfg.dose, "expected counts per pixel per frame at unit signal");
    app.add_option("--read-noise", cfg.gaussian_sigma, "gaussian read-noise sigma per frame");
    app.add_option("--psf", cfg.psf_sigma, "gaussian PSF sigma in pixels");
    app.add_option("--drift", cfg.max_drift, "maximum integer drift per frame (aligned before the split)");
  }
  std::string text() const {
    std::ostringstream o;
    o << "sim.size = " << cfg.phantom.size << "\nsim.blobs = " << cfg.phantom.n_blobs << "\nsim.frames = " << cfg.frames
      << "\nsim.dose = " << cfg.dose << "\nsim.read_noise = " << cfg.gaussian_sigma << "\nsim.psf = " << cfg.psf_sigma
      << "\nsim.drift = " << cfg.max_drift << "\n";
    return o.str();
  }
};

inline void write_manifest(const std::filesystem::path& path, RunManifest m,
                           std::chrono::steady_clock::time_point start) {
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  io::write_file_atomic(path, m.text());
}

struct DatasetInfo {
  std::size_t count = 0, frames_odd = 0, frames_even = 0;
};

inline DatasetInfo read_dataset_info(const std::filesystem::path& dir) {
  const auto p = dir / "dataset.txt";
  require_file(p);
  DatasetInfo d;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = std::string(train::Settings::trim(std::string_view(line).substr(0, eq)));
    const auto val = std::string(train::Settings::trim(std::string_view(line).substr(eq + 1)));
    try {
      if (key == "count") d.count = std::stoul(val);
      if (key == "frames_odd") d.frames_odd = std::stoul(val);
      if (key == "frames_even") d.frames_even = std::stoul(val);
    } catch (const std::exception&) {
      throw Error(ErrorKind::format, p.string() + ": bad value for " + key);
    }
  }
  if (d.count == 0 || d.frames_odd == 0 || d.frames_even == 0) throw Error(ErrorKind::format, p.string() + " is incomplete");
  return d;
}

inline train::Dataset load_dataset(const std::filesystem::path& dir, std::vector<std::string>* inputs) {
  const auto info = read_dataset_info(dir);
  train::Dataset ds;
  for (std::size_t i = 0; i < info.count; ++i) {
    const auto p = dir / indexed("triplet", i, ".mrc");
    require_file(p);
    ds.sources.push_back(data::triplet_from_mrc(io::read_file_bytes(p), info.frames_odd, info.frames_even));
    if (inputs) inputs->push_back(p.string());
  }
  return ds;
}

// Loss and masking keys may change between stages; everything else is architecture.
inline bool is_architecture_key(const std::string& k) {
  return k.rfind("model.", 0) == 0 && k != "model.gamma" && k != "model.lambda" && k != "model.n2n_weight";
}

inline void check_same_architecture(const model::ModelConfig& a, const model::ModelConfig& b) {
  model::ModelConfig ma = a, mb = b;
  train::TrainConfig ta, tb;
  train::Settings sa(ma, ta), sb(mb, tb);
  for (const auto& k : sa.keys()) {
    if (is_architecture_key(k) && sa.get(k) != sb.get(k)) {
      throw ConfigError("checkpoint has " + k + " = " + sa.get(k) + " but the run asks for " + sb.get(k));
    }
  }
}

inline Image first_section(const std::filesystem::path& p, std::size_t section) {
  require_file(p);
  auto f = io::load_mrc(p);
  if (section >= f.sections.size()) {
    throw InvalidArgument(p.string() + " has " + std::to_string(f.sections.size()) + " sections, asked for " +
                          std::to_string(section));
  }
  return f.sections[section];
}

inline std::vector<eval::SyntheticMicrograph> simulate_set(std::size_t n, std::uint64_t seed, const eval::SimConfig& cfg,
                                                           const std::string& defect, std::size_t pairs) {
  if (defect == "clean") return eval::test_micrographs(n, seed, cfg, pairs);
  if (defect == "mixed") return eval::curation_set(n, seed, cfg);
  const auto kind = sim::parse_defect_kind(defect);
  std::vector<eval::SyntheticMicrograph> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ph = sim::make_phantom(derive_seed(seed, 3 * i), cfg.phantom);
    const auto d = sim::inject_defect(ph, kind, derive_seed(seed, 3 * i + 1));
    auto m = eval::simulate_micrograph(ph, d.signal, cfg, derive_seed(seed, 3 * i + 2), 0);
    m.label = d.label;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace std::string_literals;
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();

  CLI::App app{"DRACO desk-scale denoising-reconstruction autoencoder", "draco"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::simple);

  RunManifest manifest;
  manifest.argv = args;

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "phantoms -> movies -> odd/even/original triplets -> MRC");
  fs::path sim_out;
  std::size_t sim_count = 4, sim_pairs = 20;
  std::uint64_t sim_seed = 0;
  std::string sim_defect = "clean";
  bool sim_movies = false;
  detail::SimFlags sim_flags;
  sim_flags.cfg.phantom.size = 256;
  sim_cmd->add_option("--out", sim_out, "output directory")->required();
  sim_cmd->add_option("--count", sim_count, "number of micrographs");
  sim_cmd->add_option("--seed", sim_seed, "base seed");
  sim_cmd->add_option("--defect", sim_defect, "clean | ice_blob | empty | drift_blur | mixed (balanced accept/reject)");
  sim_cmd->add_option("--pairs", sim_pairs, "region pairs per clean micrograph");
  sim_cmd->add_flag("--movies", sim_movies, "also write each movie as an M-section MRC stack [default: off]");
  sim_flags.add(*sim_cmd);

  // pretrain
  auto* pre_cmd = app.add_subcommand("pretrain", "warm-up (masked reconstruction) or hybrid (N2N + reconstruction) training");
  fs::path pre_data, pre_out = "run", pre_config, pre_init, pre_resume;
  std::vector<std::string> pre_set;
  std::string pre_stage;
  std::uint64_t pre_seed = 0;
  bool pre_scratch = false, pre_show = false;
  std::size_t pre_log_every = 10;
  pre_cmd->add_option("--data", pre_data, "directory written by simulate [default: none]");
  pre_cmd->add_option("--out", pre_out, "output directory for checkpoints, loss log and manifest");
  pre_cmd->add_option("--config", pre_config, "key = value config file [default: none]");
  pre_cmd->add_option("--set", pre_set, "override one config key, KEY=VALUE (repeatable)");
  auto* stage_opt = pre_cmd->add_option("--stage", pre_stage, "warmup | hybrid [default: train.stage]");
  auto* seed_opt = pre_cmd->add_option("--seed", pre_seed, "seed [default: train.seed]");
  pre_cmd->add_option("--init", pre_init, "checkpoint whose weights start this stage (hybrid: a warm-up checkpoint) [default: none]");
  pre_cmd->add_option("--resume", pre_resume, "continue an interrupted run from its checkpoint [default: none]");
  pre_cmd->add_flag("--from-scratch", pre_scratch, "allow the hybrid stage without a warm-up checkpoint [default: off]");
  pre_cmd->add_flag("--show-config", pre_show, "print every config key with its resolved value and exit [default: off]");
  pre_cmd->add_option("--log-every", pre_log_every, "print a loss line every N steps (0: never)");

  // denoise
  auto* den_cmd = app.add_subcommand("denoise", "tiled all-visible inference: MRC in, MRC + PGM preview out");
  fs::path den_model, den_in, den_out;
  std::size_t den_section = 0, den_tile = 64, den_overlap = 32, den_ensemble = 0;
  std::uint64_t den_seed = 0;
  den_cmd->add_option("--model", den_model, "checkpoint")->required();
  den_cmd->add_option("--in", den_in, "input MRC")->required();
  den_cmd->add_option("--section", den_section, "MRC section to denoise (triplets: 0 is the original)");
  den_cmd->add_option("--out", den_out, "output prefix; writes PREFIX.mrc and PREFIX.pgm")->required();
  den_cmd->add_option("--tile", den_tile, "tile side; must equal the model out_size");
  den_cmd->add_option("--overlap", den_overlap, "tile overlap in pixels");
  den_cmd->add_option("--ensemble", den_ensemble, "average K masked passes instead of one all-visible pass (0: off)");
  den_cmd->add_option("--seed", den_seed, "mask seed for --ensemble");

  // eval-snr
  auto* snr_cmd = app.add_subcommand("eval-snr", "region-pair SNR (and PSNR against a clean reference) -> CSV report");
  std::vector<fs::path> snr_images, snr_pairs, snr_clean;
  fs::path snr_report;
  std::size_t snr_section = 0;
  double snr_lowpass = 0;
  snr_cmd->add_option("--image", snr_images, "image MRC (repeatable)")->required();
  snr_cmd->add_option("--pairs", snr_pairs, "region-pair CSV, one per image")->required();
  snr_cmd->add_option("--clean", snr_clean, "clean reference MRC, one per image, enables PSNR [default: none]");
  snr_cmd->add_option("--section", snr_section, "MRC section to score");
  snr_cmd->add_option("--lowpass", snr_lowpass, "score the low-pass baseline at this cutoff (fraction of Nyquist; 0: off)");
  snr_cmd->add_option("--report", snr_report, "CSV report path")->required();

  // curate
  auto* cur_cmd = app.add_subcommand("curate", "linear probe on frozen encoder features over synthetic accept/reject micrographs");
  fs::path cur_model, cur_out = "curate";
  std::size_t cur_count = 400;
  double cur_split = 0.8, cur_reg = 0;
  std::uint64_t cur_seed = 0;
  detail::SimFlags cur_flags;
  cur_flags.cfg.phantom.size = 128;
  cur_flags.cfg.phantom.n_blobs = 8;
  cur_cmd->add_option("--model", cur_model, "checkpoint providing the frozen encoder")->required();
  cur_cmd->add_option("--out", cur_out, "output directory");
  cur_cmd->add_option("--count", cur_count, "micrographs, half accept and half reject");
  cur_cmd->add_option("--split", cur_split, "training fraction per class");
  cur_cmd->add_option("--reg", cur_reg, "L2 strength on standardized probe weights (0: pick by 5-fold cross-validation on the training split)");
  cur_cmd->add_option("--seed", cur_seed, "simulation seed");
  cur_flags.add(*cur_cmd);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "central finite differences over every primitive and both objectives");
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-4, gc_tol = 1e-3;
  fs::path gc_out = "gradcheck";
  gc_cmd->add_option("--instances", gc_instances, "random instances per case");
  gc_cmd->add_option("--seed", gc_seed, "base seed");
  gc_cmd->add_option("--eps", gc_eps, "finite-difference step");
  gc_cmd->add_option("--tol", gc_tol, "maximum accepted relative error");
  gc_cmd->add_option("--out", gc_out, "directory for the report and manifest");

  // ablate
  auto* ab_cmd = app.add_subcommand("ablate", "loss-term or mask-ratio sweep from one warm-up checkpoint");
  fs::path ab_data, ab_init, ab_out = "ablate", ab_config;
  std::vector<std::string> ab_set;
  std::string ab_sweep = "loss";
  std::size_t ab_test = 64;
  std::uint64_t ab_seed = 0;
  detail::SimFlags ab_flags;
  ab_flags.cfg.phantom.size = 128;
  ab_flags.cfg.phantom.n_blobs = 8;
  ab_cmd->add_option("--data", ab_data, "training directory written by simulate")->required();
  ab_cmd->add_option("--init", ab_init, "warm-up checkpoint shared by every arm")->required();
  ab_cmd->add_option("--sweep", ab_sweep, "loss (full / no_recon / no_n2n) or mask (gamma 0.5 ... 0.875)");
  ab_cmd->add_option("--config", ab_config, "key = value config file for the hybrid stage [default: none]");
  ab_cmd->add_option("--set", ab_set, "override one config key, KEY=VALUE (repeatable)");
  ab_cmd->add_option("--test-count", ab_test, "held-out synthetic micrographs");
  ab_cmd->add_option("--test-seed", ab_seed, "seed of the held-out set");
  ab_cmd->add_option("--out", ab_out, "output directory");
  ab_flags.add(*ab_cmd);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    return report_error(err, exit_usage, "usage", e.what());
  }

  try {
    if (sim_cmd->parsed()) {
      manifest.command = "simulate";
      manifest.seed = sim_seed;
      auto cfg = sim_flags.cfg;
      cfg.keep_movie = sim_movies;
      if (sim_defect != "mixed" && sim_defect != "clean") sim::parse_defect_kind(sim_defect);
      detail::ensure_dir(sim_out);
      const auto set = detail::simulate_set(sim_count, sim_seed, cfg, sim_defect, sim_pairs);
      std::string labels = "index,kind,accept\n";
      for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& m = set[i];
        const auto tp = sim_out / detail::indexed("triplet", i, ".mrc");
        const auto ep = sim_out / detail::indexed("expected", i, ".mrc");
        io::write_file_atomic(tp, data::triplet_to_mrc(m.triplet, cfg.phantom.pixel_size));
        io::save_mrc(ep, {m.expected}, cfg.phantom.pixel_size);
        manifest.outputs.insert(manifest.outputs.end(), {tp.string(), ep.string()});
        if (!m.pairs.empty()) {
          const auto pp = sim_out / detail::indexed("pairs", i, ".csv");
          io::write_file_atomic(pp, io::write_region_pairs(m.pairs));
          manifest.outputs.push_back(pp.string());
        }
        if (sim_movies) {
          const auto mp = sim_out / detail::indexed("movie", i, ".mrc");
          io::save_mrc(mp, m.movie.frames, cfg.phantom.pixel_size);
          manifest.outputs.push_back(mp.string());
        }
        labels += std::to_string(i) + "," + std::string(sim::to_string(m.label.kind)) + "," +
                  (m.label.is_accept ? "1" : "0") + "\n";
      }
      const auto& t0 = set.front().triplet;
      io::write_file_atomic(sim_out / "dataset.txt", "count = " + std::to_string(set.size()) +
                                                       "\nframes_odd = " + std::to_string(t0.frames_odd) +
                                                       "\nframes_even = " + std::to_string(t0.frames_even) + "\n");
      io::write_file_atomic(sim_out / "labels.csv", labels);
      manifest.config = sim_flags.text() + "sim.count = " + std::to_string(sim_count) + "\nsim.defect = " + sim_defect +
                        "\nsim.pairs = " + std::to_string(sim_pairs) + "\n";
      detail::write_manifest(sim_out / "manifest.txt", manifest, start);
      out << "simulated " << set.size() << " micrographs into " << sim_out.string() << "\n";
      return exit_ok;
    }

    if (pre_cmd->parsed()) {
      manifest.command = "pretrain";
      model::ModelConfig m;
      train::TrainConfig t;
      train::Settings s(m, t);
      const bool overrides = !pre_config.empty() || !pre_set.empty() || stage_opt->count() || seed_opt->count();
      if (!pre_resume.empty() && overrides) {
        throw ConfigError("--resume continues with the checkpoint's config; drop --config, --set, --stage and --seed");
      }
      if (!pre_resume.empty() && !pre_init.empty()) throw ConfigError("--resume and --init are mutually exclusive");
      if (!pre_config.empty()) s.apply_text(detail::read_text(pre_config));
      for (const auto& kv : pre_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        s.set(std::string(train::Settings::trim(std::string_view(kv).substr(0, eq))),
              train::Settings::trim(std::string_view(kv).substr(eq + 1)));
      }
      if (stage_opt->count()) t.stage = train::parse_stage(pre_stage);
      if (seed_opt->count()) t.seed = pre_seed;
      model::validate(m);
      train::validate(t);
      if (pre_show) {
        out << s.text();
        return exit_ok;
      }
      if (pre_data.empty()) throw IoError("pretrain needs --data");
      const auto ds = detail::load_dataset(pre_data, &manifest.inputs);

      std::optional<train::Trainer<float>> tr;
      if (!pre_resume.empty()) {
        detail::require_file(pre_resume);
        tr.emplace(train::resume(train::load_checkpoint(pre_resume)));
        manifest.inputs.push_back(pre_resume.string());
      } else {
        model::ModelState<float> init;
        if (!pre_init.empty()) {
          detail::require_file(pre_init);
          auto ck = train::load_checkpoint(pre_init);
          if (t.stage == train::Stage::hybrid && ck.train.stage != train::Stage::warmup) {
            throw ConfigError("--init for the hybrid stage must be a warm-up checkpoint; " + pre_init.string() +
                              " is from stage " + train::to_string(ck.train.stage));
          }
          detail::check_same_architecture(ck.model, m);
          init = ck.state.clone();
          init.config = m;
          manifest.inputs.push_back(pre_init.string());
        } else {
          if (t.stage == train::Stage::hybrid && !pre_scratch) {
            throw ConfigError("the hybrid stage needs --init <warm-up checkpoint>; pass --from-scratch to skip warm-up");
          }
          init = model::init_model<float>(m, t.seed);
        }
        tr.emplace(init, t);
      }
      const auto& cfg = tr->config();
      manifest.seed = cfg.seed;
      {
        model::ModelConfig mm = tr->state().config;
        train::TrainConfig tt = cfg;
        manifest.config = train::Settings(mm, tt).text();
      }
      out << manifest.config;
      detail::ensure_dir(pre_out);
      std::string log;
      if (!pre_resume.empty() && fs::exists(pre_out / "loss.csv")) log = detail::read_text(pre_out / "loss.csv");
      if (log.empty()) log = "step,lr,loss,n2n,recon,grad_norm\n";
      auto ckpt_name = [&](std::size_t step) { return pre_out / detail::indexed("ckpt", step, ".ckpt"); };
      while (tr->step() < cfg.total_steps()) {
        const auto st = tr->fit_step(ds);
        std::ostringstream row;
        row << std::setprecision(9) << tr->step() << "," << st.lr << "," << st.loss << "," << st.n2n << "," << st.recon
            << "," << st.grad_norm << "\n";
        log += row.str();
        if (pre_log_every && tr->step() % pre_log_every == 0) out << "step " << row.str();
        if (cfg.snapshot_every && tr->step() % cfg.snapshot_every == 0 && tr->step() < cfg.total_steps()) {
          train::save_checkpoint(ckpt_name(tr->step()), *tr);
          manifest.outputs.push_back(ckpt_name(tr->step()).string());
        }
      }
      const auto final_path = pre_out / (train::to_string(cfg.stage) + ".ckpt");
      train::save_checkpoint(final_path, *tr);
      io::write_file_atomic(pre_out / "loss.csv", log);
      manifest.outputs.insert(manifest.outputs.end(), {final_path.string(), (pre_out / "loss.csv").string()});
      detail::write_manifest(pre_out / "manifest.txt", manifest, start);
      out << "wrote " << final_path.string() << "\n";
      return exit_ok;
    }

    if (den_cmd->parsed()) {
      manifest.command = "denoise";
      manifest.seed = den_seed;
      detail::require_file(den_model);
      const auto ck = train::load_checkpoint(den_model);
      const Image im = detail::first_section(den_in, den_section);
      eval::DenoiseOptions opt{{den_tile, den_overlap}, den_ensemble, den_seed};
      const Image d = eval::denoise(im, ck.state, opt);
      const fs::path mrc = den_out.string() + ".mrc", pgm = den_out.string() + ".pgm";
      if (den_out.has_parent_path()) detail::ensure_dir(den_out.parent_path());
      io::save_mrc(mrc, {d});
      io::write_file_atomic(pgm, io::encode_pgm_preview(d));
      manifest.inputs = {den_model.string(), den_in.string()};
      manifest.outputs = {mrc.string(), pgm.string()};
      manifest.config = "denoise.tile = " + std::to_string(den_tile) + "\ndenoise.overlap = " + std::to_string(den_overlap) +
                        "\ndenoise.ensemble = " + std::to_string(den_ensemble) +
                        "\ndenoise.section = " + std::to_string(den_section) + "\n" +
                        train::model_config_text(ck.model);
      detail::write_manifest(den_out.string() + ".manifest.txt", manifest, start);
      out << "wrote " << mrc.string() << " and " << pgm.string() << " (PGM is min-max scaled, viewing only)\n";
      return exit_ok;
    }

    if (snr_cmd->parsed()) {
      manifest.command = "eval-snr";
      if (snr_pairs.size() != snr_images.size()) throw ConfigError("eval-snr needs one --pairs file per --image");
      if (!snr_clean.empty() && snr_clean.size() != snr_images.size()) {
        throw ConfigError("eval-snr needs one --clean file per --image");
      }
      std::ostringstream csv;
      csv << "image,pairs,zero_contrast_pairs,snr_db,psnr_db\n" << std::setprecision(10);
      double sum_snr = 0, sum_psnr = 0;
      for (std::size_t i = 0; i < snr_images.size(); ++i) {
        Image im = detail::first_section(snr_images[i], snr_section);
        if (snr_lowpass > 0) im = eval::lowpass_filter(im, snr_lowpass);
        detail::require_file(snr_pairs[i]);
        const auto pairs = io::read_region_pairs(detail::read_text(snr_pairs[i]));
        const auto r = eval::snr_detail(im, pairs);
        sum_snr += r.db;
        csv << snr_images[i].string() << "," << pairs.size() << "," << r.zero_contrast << "," << r.db << ",";
        if (!snr_clean.empty()) {
          const double p = eval::psnr(im, detail::first_section(snr_clean[i], 0));
          sum_psnr += p;
          csv << p;
          manifest.inputs.push_back(snr_clean[i].string());
        }
        csv << "\n";
        manifest.inputs.insert(manifest.inputs.end(), {snr_images[i].string(), snr_pairs[i].string()});
      }
      const double n = static_cast<double>(snr_images.size());
      std::ostringstream summary;
      summary << std::setprecision(10) << "images = " << snr_images.size() << "\nmean_snr_db = " << sum_snr / n << "\n";
      if (!snr_clean.empty()) summary << "mean_psnr_db = " << sum_psnr / n << "\n";
      if (snr_report.has_parent_path()) detail::ensure_dir(snr_report.parent_path());
      io::write_file_atomic(snr_report, csv.str());
      io::write_file_atomic(snr_report.string() + ".summary.txt", summary.str());
      manifest.outputs = {snr_report.string(), snr_report.string() + ".summary.txt"};
      manifest.config = "eval.section = " + std::to_string(snr_section) + "\neval.lowpass = " + std::to_string(snr_lowpass) + "\n";
      detail::write_manifest(snr_report.string() + ".manifest.txt", manifest, start);
      out << summary.str();
      return exit_ok;
    }

    if (cur_cmd->parsed()) {
      manifest.command = "curate";
      manifest.seed = cur_seed;
      if (!(cur_split > 0 && cur_split < 1)) throw ConfigError("--split must lie in (0, 1)");
      detail::require_file(cur_model);
      const auto ck = train::load_checkpoint(cur_model);
      const auto before = train::encoder_hash(ck.state);
      const auto set = eval::curation_set(cur_count, cur_seed, cur_flags.cfg);
      const auto r = eval::run_curation(set, ck.state, cur_split, {cur_reg});
      const auto after = train::encoder_hash(ck.state);
      if (before != after) throw Error(ErrorKind::graph, "probe training modified the encoder");
      std::ostringstream rep;
      rep << std::setprecision(6);
      auto line = [&](const char* name, const eval::BinaryMetrics& b) {
        rep << name << ".accuracy = " << b.accuracy << "\n" << name << ".precision = " << b.precision << "\n"
            << name << ".recall = " << b.recall << "\n" << name << ".f1 = " << b.f1 << "\n";
      };
      rep << "n_train = " << r.n_train << "\nn_test = " << r.n_test << "\n";
      rep << "reg_strength = " << (r.selection.grid.empty() ? cur_reg : r.selection.reg_strength) << "\n";
      for (std::size_t i = 0; i < r.selection.grid.size(); ++i) {
        rep << "cv_accuracy[" << r.selection.grid[i] << "] = " << r.selection.cv_accuracy[i] << "\n";
      }
      line("train", r.train);
      line("test", r.test);
      rep << "encoder_hash_before = " << std::hex << before << "\nencoder_hash_after = " << after << std::dec << "\n";
      std::ostringstream head;
      head << std::setprecision(17) << "bias = " << r.head.bias << "\nweight =";
      for (double w : r.head.weight) head << " " << w;
      head << "\n";
      detail::ensure_dir(cur_out);
      io::write_file_atomic(cur_out / "report.txt", rep.str());
      io::write_file_atomic(cur_out / "probe.txt", head.str());
      manifest.inputs = {cur_model.string()};
      manifest.outputs = {(cur_out / "report.txt").string(), (cur_out / "probe.txt").string()};
      manifest.config = cur_flags.text() + "curate.count = " + std::to_string(cur_count) +
                        "\ncurate.split = " + std::to_string(cur_split) + "\ncurate.reg = " + std::to_string(cur_reg) + "\n";
      detail::write_manifest(cur_out / "manifest.txt", manifest, start);
      out << rep.str();
      return exit_ok;
    }

    if (gc_cmd->parsed()) {
      manifest.command = "gradcheck";
      manifest.seed = gc_seed;
      std::ostringstream rep;
      rep << "case,instances,max_rel_error,pass\n" << std::setprecision(6);
      bool ok = true;
      for (auto& c : model::all_grad_cases()) {
        const auto r = ag::run_grad_case(c, gc_instances, gc_eps, gc_seed);
        const bool pass = r.max_rel_error < gc_tol;
        ok = ok && pass;
        rep << c.name << "," << r.instances << "," << r.max_rel_error << "," << (pass ? "yes" : "no") << "\n";
      }
      detail::ensure_dir(gc_out);
      io::write_file_atomic(gc_out / "gradcheck.csv", rep.str());
      manifest.outputs = {(gc_out / "gradcheck.csv").string()};
      manifest.config = "gradcheck.instances = " + std::to_string(gc_instances) + "\ngradcheck.eps = " +
                        std::to_string(gc_eps) + "\ngradcheck.tol = " + std::to_string(gc_tol) + "\n";
      detail::write_manifest(gc_out / "manifest.txt", manifest, start);
      out << rep.str();
      if (!ok) return report_error(err, exit_check_failed, "check", "gradient check exceeded tolerance");
      return exit_ok;
    }

    if (ab_cmd->parsed()) {
      manifest.command = "ablate";
      manifest.seed = ab_seed;
      if (ab_sweep != "loss" && ab_sweep != "mask") throw ConfigError("--sweep must be loss or mask");
      model::ModelConfig m;
      train::TrainConfig t;
      train::Settings s(m, t);
      if (!ab_config.empty()) s.apply_text(detail::read_text(ab_config));
      for (const auto& kv : ab_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        s.set(std::string(train::Settings::trim(std::string_view(kv).substr(0, eq))),
              train::Settings::trim(std::string_view(kv).substr(eq + 1)));
      }
      t.stage = train::Stage::hybrid;
      train::validate(t);
      detail::require_file(ab_init);
      const auto ck = train::load_checkpoint(ab_init);
      if (ck.train.stage != train::Stage::warmup) throw ConfigError("--init must be a warm-up checkpoint");
      const auto ds = detail::load_dataset(ab_data, &manifest.inputs);
      const auto test = eval::test_micrographs(ab_test, ab_seed, ab_flags.cfg);
      std::ostringstream csv;
      csv << "arm,gamma,lambda,n2n_weight,mean_snr_db,mean_psnr_db,final_loss\n" << std::setprecision(8);
      for (const auto& arm : ab_sweep == "loss" ? eval::loss_arms() : eval::mask_arms()) {
        auto init = ck.state.clone();
        init.config.gamma = arm.gamma;
        init.config.lambda = arm.lambda;
        init.config.n2n_weight = arm.n2n_weight;
        model::validate(init.config);
        double last = 0;
        const auto st = eval::run_stage(init, t, ds, [&](std::size_t, const train::StepStats& x) { last = x.loss; });
        const auto sc = eval::score_benchmark(test, st, {{st.config.out_size, st.config.out_size / 2}, 0, 0});
        csv << arm.name << "," << arm.gamma << "," << arm.lambda << "," << arm.n2n_weight << "," << sc.mean.snr_model
            << "," << sc.mean.psnr_model << "," << last << "\n";
        out << arm.name << " mean_snr_db=" << sc.mean.snr_model << "\n";
      }
      detail::ensure_dir(ab_out);
      io::write_file_atomic(ab_out / "ablation.csv", csv.str());
      manifest.inputs.push_back(ab_init.string());
      manifest.outputs = {(ab_out / "ablation.csv").string()};
      manifest.config = s.text() + ab_flags.text() + "ablate.sweep = " + ab_sweep + "\n";
      detail::write_manifest(ab_out / "manifest.txt", manifest, start);
      out << csv.str();
      return exit_ok;
    }
  } catch (const Error& e) {
    return report_error(err, exit_code(e.kind()), to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return report_error(err, exit_failure, "internal", e.what());
  }
  return report_error(err, exit_usage, "usage", "no subcommand");
}

}  // namespace draco::cli
