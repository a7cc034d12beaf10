// mansy: trace generation, viewport predictor and bitrate agent training,
// evaluation reports and plots.

#include "setup.hpp"

#include "mansy/csv.hpp"
#include "mansy/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace mansy;

namespace {

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  return KeyValueConfig::parse("v = " + text, what).get_doubles("v", {});
}

TileGrid frame_from(const std::string& frame, const std::string& grid) {
  const auto f = parse_list(frame, "--frame"), g = parse_list(grid, "--grid");
  if (f.size() != 2 || g.size() != 2) throw std::runtime_error("--frame and --grid take two values each");
  TileGrid t{static_cast<int>(g[0]), static_cast<int>(g[1]), f[0], f[1]};
  t.validate();
  return t;
}

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

void write_json(const fs::path& path, const nlohmann::json& j) { csv::write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

// ---------------------------------------------------------------------------

struct ViewportArgs {
  std::string family = "focus", out, frame = "1920,960";
  int users = 10, video_id = 0;
  double duration = 60.0, rate = 5.0;
  std::uint64_t seed = 0;
  std::optional<double> noise, drift, dwell;
};

void gen_viewport(const ViewportArgs& a) {
  PatternFamily f = a.family == "explore" ? PatternFamily::explore() : PatternFamily::focus();
  f.name = a.family;
  if (a.noise) f.noise = *a.noise;
  if (a.drift) f.drift = *a.drift;
  if (a.dwell) f.dwell_probability = *a.dwell;
  const TileGrid frame = frame_from(a.frame, "1,1");
  save_viewport_csv(a.out, gen_viewport_traces(f, a.users, a.duration, a.rate, frame, a.seed, a.video_id), frame);
}

struct BandwidthArgs {
  BandwidthProfile profile;
  double duration = 600.0, interval = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct ManifestArgs {
  int chunks = 60;
  double chunk_duration = 1.0, jitter = 0.1;
  std::string grid = "8,8", frame = "1920,960", ladder = "1,5,8,16,35", out;
  std::uint64_t seed = 0;
};

void gen_manifest(const ManifestArgs& a) {
  BitrateLadder ladder{parse_list(a.ladder, "--ladder")};
  ladder.validate();
  save_manifest(a.out, synthetic_manifest(frame_from(a.frame, a.grid), ladder, a.chunks, a.chunk_duration, a.seed,
                                          a.jitter));
}

// ---------------------------------------------------------------------------

struct TrainVpArgs {
  std::string config, traces, out, log;
  std::uint64_t seed = 0;
};

void train_vp(const TrainVpArgs& a) {
  const auto cfg = load_config(a.config);
  const auto video = cli::VideoSetup::from_config(cfg);
  const auto pc = cli::predictor_config(cfg);
  const auto options = cli::vp_train_options(cfg, a.seed);
  const int stride = cfg.get_int("stride", 5);
  const double held_out = cfg.get_double("validation_fraction", 0.2);
  cfg.reject_unused();

  vp::WindowedDataset train, validation;
  for (const auto& fam : cli::load_viewport_dir(a.traces, video.grid)) {
    const auto n = fam.traces.size();
    const auto n_val = static_cast<std::size_t>(std::ceil(held_out * static_cast<double>(n)));
    std::vector<Trajectory> fit, val;
    for (std::size_t i = 0; i < n; ++i) (i + n_val < n ? fit : val).push_back(fam.traces[i].trajectory);
    train.append(vp::make_windows(fit, fam.family, pc.history_len, pc.horizon_len, stride));
    validation.append(vp::make_windows(val, fam.family, pc.history_len, pc.horizon_len, stride));
  }
  if (train.empty()) throw std::runtime_error("no training windows; traces are too short or too few");
  std::fprintf(stderr, "train-vp: %zu training windows, %zu validation windows\n", train.size(), validation.size());
  const auto result = vp::train(train, pc, video.grid, options, validation.empty() ? nullptr : &validation);
  save_checkpoint(a.out, result.model.to_checkpoint());

  std::string log = "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < result.train_loss.size(); ++e)
    log += std::to_string(e) + "," + csv::format(result.train_loss[e]) + "," +
           (e < result.validation_loss.size() ? csv::format(result.validation_loss[e]) : "") + "\n";
  csv::write_text(a.log.empty() ? fs::path(a.out).replace_extension(".loss.csv") : fs::path(a.log), log);
}

struct EvalVpArgs {
  std::string ckpt, traces, report, config;
};

void eval_vp(const EvalVpArgs& a) {
  const auto cfg = load_config(a.config);
  const auto video = cli::VideoSetup::from_config(cfg);
  const int stride = cfg.get_int("stride", 5);
  const auto model = vp::MtioTransformer<float>::from_checkpoint(load_checkpoint(a.ckpt));
  std::vector<std::pair<std::string, vp::AccuracyReport>> reports;
  for (const auto& fam : cli::load_viewport_dir(a.traces, model.frame())) {
    std::vector<Trajectory> trajs;
    for (const auto& t : fam.traces) trajs.push_back(t.trajectory);
    const auto data = vp::make_windows(trajs, fam.family, model.config().history_len, model.config().horizon_len, stride);
    const auto rep = vp::evaluate_accuracy(vp::forecaster(model), data, video.fov, video.grid);
    std::fprintf(stderr, "eval-vp: %s mean IoU %.4f over %zu windows\n", fam.family.c_str(), rep.ensemble_mean(),
                 rep.windows);
    reports.emplace_back(fam.family, rep);
  }
  cfg.reject_unused();
  csv::write_text(a.report, vp::accuracy_csv(reports));
}

// ---------------------------------------------------------------------------

struct TrainAbrArgs {
  std::string config, manifests, bandwidth, traces, vp_ckpt, out, preferences;
  std::uint64_t seed = 0;
  std::optional<double> alpha, entropy_coef, discount;
  int checkpoint_every = 10;
  bool resume = false;
};

std::vector<QoEPreference> preference_split(const std::string& file, bool trained) {
  const PreferencePool pool = file.empty() ? preference_pool() : load_preferences(file);
  return trained ? pool.train : pool.held_out;
}

void train_abr(const TrainAbrArgs& a, bool ablation) {
  auto cfg = load_config(a.config);
  if (a.alpha) cfg.set("alpha", csv::format(*a.alpha));
  if (a.entropy_coef) cfg.set("entropy_coef", csv::format(*a.entropy_coef));
  if (a.discount) cfg.set("discount", csv::format(*a.discount));
  const auto video = cli::VideoSetup::from_config(cfg);
  auto tc = cli::training_config(cfg, video, a.seed);
  cfg.reject_unused();
  if (ablation) {
    tc.alpha = 0.0;
    tc.train_identifier = false;
  }
  const auto world = cli::build_world(video, a.manifests, a.bandwidth, a.traces, a.vp_ckpt);
  const auto pool = preference_split(a.preferences, true);
  const fs::path out(a.out);
  fs::create_directories(out);

  const auto abs = [](const std::string& p) { return p.empty() ? std::string() : fs::absolute(p).string(); };
  write_json(out / "run.json", {{"config", cfg.dump()},
                                {"seed", a.seed},
                                {"ablation", ablation},
                                {"manifests", abs(a.manifests)},
                                {"bandwidth", abs(a.bandwidth)},
                                {"traces", abs(a.traces)},
                                {"vp_ckpt", abs(a.vp_ckpt)},
                                {"preferences", abs(a.preferences)},
                                {"environments", world.owned.size()}});

  const fs::path trainer_path = out / "trainer.ckpt";
  rl::Trainer trainer = a.resume && fs::exists(trainer_path)
                            ? rl::Trainer::resume(load_checkpoint(trainer_path), pool, world.environments())
                            : rl::Trainer(tc, pool, world.environments());
  if (trainer.config().iterations != tc.iterations && a.resume)
    std::fprintf(stderr, "train-abr: resuming with the checkpoint's settings\n");
  while (trainer.iteration() < trainer.config().iterations) {
    trainer.run_iteration();
    const auto& d = trainer.diagnostics().back();
    if (d.iteration % 10 == 0 || trainer.iteration() == trainer.config().iterations)
      std::fprintf(stderr, "iter %d  qoe %.4f  reward %.4f  identifier mse %.4f  entropy %.3f\n", d.iteration,
                   d.mean_qoe, d.mean_reward, d.identifier_mse, d.ppo.entropy);
    if (a.checkpoint_every > 0 && trainer.iteration() % a.checkpoint_every == 0)
      save_checkpoint(trainer_path, trainer.save());
  }
  save_checkpoint(trainer_path, trainer.save());
  save_checkpoint(out / "agent.ckpt", trainer.agent().to_checkpoint());
  save_checkpoint(out / "identifier.ckpt", trainer.identifier().to_checkpoint());
  csv::write_text(out / "diagnostics.csv", rl::diagnostics_csv(trainer.diagnostics()));
}

struct EvalAbrArgs {
  std::string ckpt, split = "unseen", report, policy = "agent", logs, manifests, bandwidth, traces, vp_ckpt,
              preferences;
  std::uint64_t seed = 0;
};

void eval_abr(const EvalAbrArgs& a) {
  const fs::path dir(a.ckpt);
  const auto run = read_json(dir / "run.json");
  const auto pick = [&](const std::string& flag, const char* key) {
    return flag.empty() ? run.at(key).get<std::string>() : flag;
  };
  const auto cfg = KeyValueConfig::parse(run.at("config").get<std::string>(), (dir / "run.json").string());
  const auto video = cli::VideoSetup::from_config(cfg);
  const auto world = cli::build_world(video, pick(a.manifests, "manifests"), pick(a.bandwidth, "bandwidth"),
                                      pick(a.traces, "traces"), pick(a.vp_ckpt, "vp_ckpt"));
  if (a.split != "trained" && a.split != "unseen") throw std::runtime_error("--split must be trained or unseen");
  const auto prefs = preference_split(pick(a.preferences, "preferences"), a.split == "trained");

  const auto net = rl::PolicyNetwork<float>::from_checkpoint(load_checkpoint(dir / "agent.ckpt"));
  rl::GreedyPolicy greedy(net);
  rl::HeuristicPolicy heuristic;
  rl::Policy* policy = nullptr;
  if (a.policy == "agent") policy = &greedy;
  else if (a.policy == "heuristic") policy = &heuristic;
  else throw std::runtime_error("--policy must be agent or heuristic");

  rl::EpisodeObserver write_log;
  if (!a.logs.empty()) {
    write_log = [&](std::size_t pi, const rl::Environment& env) {
      const auto& stream = dynamic_cast<const rl::StreamingEnvironment&>(env);
      std::string name = "p" + std::to_string(pi) + "_" + env.name() + ".csv";
      std::replace(name.begin(), name.end(), ':', '_');
      csv::write_text(fs::path(a.logs) / name, episode_log_csv(stream.records()));
    };
  }
  const auto rows = rl::run_evaluation(*policy, prefs, world.environments(), a.seed, write_log);
  csv::write_text(a.report, rl::evaluation_csv(rows));
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> logs;
  std::string out, plot;
};

void make_report(const ReportArgs& a) {
  std::vector<report::EpisodeSummary> rows;
  for (const auto& path : a.logs) {
    const auto table = csv::read(path);
    const auto part = report::summarize_episode_log(table, path, fs::path(path).stem().string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string text = report::summary_csv(rows);
  csv::write_text(a.out, text);
  if (!a.plot.empty() && !report::plot_table(csv::parse(text, a.out), a.out, a.plot))
    std::fprintf(stderr, "report: no episodes, no plot written\n");
}

void plot(const std::string& in, const std::string& out) {
  if (!report::plot_table(csv::read(in), in, out)) std::fprintf(stderr, "plot: %s has no rows, nothing drawn\n", in.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tile-based 360-degree video streaming: viewport prediction and preference-aware bitrate selection"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-traces", "Generate synthetic viewport, bandwidth or manifest files");
  gen->require_subcommand(1);

  ViewportArgs va;
  auto* gv = gen->add_subcommand("viewport", "Viewport trajectories of a viewing-pattern family");
  gv->add_option("--family", va.family, "focus or explore")->check(CLI::IsMember({"focus", "explore"}));
  gv->add_option("--users", va.users)->check(CLI::NonNegativeNumber);
  gv->add_option("--duration", va.duration, "seconds");
  gv->add_option("--rate", va.rate, "samples per second");
  gv->add_option("--video-id", va.video_id);
  gv->add_option("--frame", va.frame, "width,height in pixels");
  gv->add_option("--noise", va.noise);
  gv->add_option("--drift", va.drift, "explore: pixels per sample");
  gv->add_option("--dwell-probability", va.dwell);
  gv->add_option("--seed", va.seed);
  gv->add_option("--out", va.out)->required();
  gv->callback([&] { gen_viewport(va); });

  BandwidthArgs ba;
  auto* gb = gen->add_subcommand("bandwidth", "Throughput trace");
  gb->add_option("--profile", ba.profile.kind)->check(CLI::IsMember({"stable", "stepwise", "bursty"}));
  gb->add_option("--level", ba.profile.level, "Mbps");
  gb->add_option("--alt-level", ba.profile.alt_level, "Mbps");
  gb->add_option("--period", ba.profile.period, "seconds per level (stepwise)");
  gb->add_option("--switch-probability", ba.profile.switch_probability, "bursty");
  gb->add_option("--sigma", ba.profile.sigma, "bursty log-normal spread");
  gb->add_option("--floor", ba.profile.floor, "Mbps");
  gb->add_option("--duration", ba.duration, "seconds");
  gb->add_option("--interval", ba.interval, "seconds per sample");
  gb->add_option("--seed", ba.seed);
  gb->add_option("--out", ba.out)->required();
  gb->callback([&] { save_bandwidth(ba.out, gen_bandwidth_trace(ba.profile, ba.duration, ba.interval, ba.seed)); });

  ManifestArgs ma;
  auto* gm = gen->add_subcommand("manifest", "Tile sizes for every chunk, tile and rung");
  gm->add_option("--chunks", ma.chunks);
  gm->add_option("--chunk-duration", ma.chunk_duration);
  gm->add_option("--grid", ma.grid, "rows,cols");
  gm->add_option("--frame", ma.frame, "width,height in pixels");
  gm->add_option("--ladder", ma.ladder, "Mbps, ascending");
  gm->add_option("--jitter", ma.jitter);
  gm->add_option("--seed", ma.seed);
  gm->add_option("--out", ma.out)->required();
  gm->callback([&] { gen_manifest(ma); });

  TrainVpArgs tva;
  auto* tv = app.add_subcommand("train-vp", "Train the viewport predictor");
  tv->add_option("--config", tva.config);
  tv->add_option("--traces", tva.traces, "viewport CSV file or directory; file stem = family")->required();
  tv->add_option("--seed", tva.seed);
  tv->add_option("--out", tva.out, "checkpoint path")->required();
  tv->add_option("--log", tva.log, "loss CSV (default: next to the checkpoint)");
  tv->callback([&] { train_vp(tva); });

  EvalVpArgs eva;
  auto* ev = app.add_subcommand("eval-vp", "Viewport accuracy per horizon step");
  ev->add_option("--ckpt", eva.ckpt)->required();
  ev->add_option("--traces", eva.traces)->required();
  ev->add_option("--report", eva.report)->required();
  ev->add_option("--config", eva.config, "stride, fov, grid");
  ev->callback([&] { eval_vp(eva); });

  TrainAbrArgs taa;
  const auto add_train_options = [&](CLI::App* c) {
    c->add_option("--config", taa.config);
    c->add_option("--manifests", taa.manifests)->required();
    c->add_option("--bandwidth", taa.bandwidth)->required();
    c->add_option("--traces", taa.traces, "viewport CSV file or directory")->required();
    c->add_option("--vp-ckpt", taa.vp_ckpt, "predictor checkpoint (default: last-position forecast)");
    c->add_option("--preferences", taa.preferences, "preference pool CSV");
    c->add_option("--seed", taa.seed);
    c->add_option("--out", taa.out, "output directory")->required();
    c->add_option("--alpha", taa.alpha);
    c->add_option("--entropy-coef", taa.entropy_coef);
    c->add_option("--discount", taa.discount);
    c->add_option("--checkpoint-every", taa.checkpoint_every, "iterations between trainer checkpoints");
    c->add_flag("--resume", taa.resume, "continue from <out>/trainer.ckpt");
  };
  auto* ta = app.add_subcommand("train-abr", "Train the preference-aware bitrate agent");
  add_train_options(ta);
  ta->callback([&] { train_abr(taa, false); });
  auto* ab = app.add_subcommand("ablate-no-repl", "Train without the identifier reward");
  add_train_options(ab);
  ab->callback([&] { train_abr(taa, true); });

  EvalAbrArgs eaa;
  auto* ea = app.add_subcommand("eval-abr", "Greedy evaluation over a preference split");
  ea->add_option("--ckpt", eaa.ckpt, "train-abr output directory")->required();
  ea->add_option("--split", eaa.split)->check(CLI::IsMember({"trained", "unseen"}));
  ea->add_option("--report", eaa.report)->required();
  ea->add_option("--policy", eaa.policy, "agent or heuristic")->check(CLI::IsMember({"agent", "heuristic"}));
  ea->add_option("--logs", eaa.logs, "directory for per-episode logs");
  ea->add_option("--manifests", eaa.manifests);
  ea->add_option("--bandwidth", eaa.bandwidth);
  ea->add_option("--traces", eaa.traces);
  ea->add_option("--vp-ckpt", eaa.vp_ckpt);
  ea->add_option("--preferences", eaa.preferences);
  ea->add_option("--seed", eaa.seed);
  ea->callback([&] { eval_abr(eaa); });

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "Summarise episode logs");
  rp->add_option("--logs", ra.logs)->required();
  rp->add_option("--out", ra.out)->required();
  rp->add_option("--plot", ra.plot, "PNG chart of the summary");
  rp->callback([&] { make_report(ra); });

  std::string plot_in, plot_out;
  auto* pl = app.add_subcommand("plot", "Draw a report CSV as a PNG chart");
  pl->add_option("--in", plot_in)->required();
  pl->add_option("--out", plot_out)->required();
  pl->callback([&] { plot(plot_in, plot_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
