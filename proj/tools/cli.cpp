#include "cli.hpp"

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "vmfnet/evaluate.hpp"
#include "vmfnet/probe.hpp"
#include "vmfnet/run_manifest.hpp"
#include "vmfnet/training.hpp"
#include "vmfnet/ttt.hpp"
#include "vmfnet/viz.hpp"

namespace vmfnet {

namespace {

using ordered_json = nlohmann::ordered_json;

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
  if (g_log_level >= 1) std::cerr << "[vmfnet] " << msg << "\n";
}

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string log_level = "info";
};

void apply_globals(const GlobalOpts& g) {
#ifdef _OPENMP
  if (g.threads > 0) omp_set_num_threads(g.threads);
#endif
  g_log_level = g.log_level == "quiet" ? 0 : g.log_level == "debug" ? 2 : 1;
}

// Train-style configuration assembly: defaults from the dataset, then the
// config file, then explicit flags (flags win).
struct TrainCliArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void add_override(const std::string& key, const std::string& value) { overrides[key] = value; }

  TrainConfig resolve(const Dataset& ds, const GlobalOpts& g) const {
    TrainConfig cfg;
    cfg.image_size = ds.image_size;
    cfg.classes = ds.num_classes;
    if (!config_path.empty()) cfg = load_train_config(config_path, cfg);
    cfg = apply_kv(cfg, overrides);
    if (g.seed) cfg.seed = *g.seed;
    if (cfg.image_size != ds.image_size)
      throw ConfigError("config image_size " + std::to_string(cfg.image_size) +
                        " does not match the dataset (" + std::to_string(ds.image_size) + ")");
    if (cfg.classes != ds.num_classes)
      throw ConfigError("config classes does not match the dataset");
    cfg.validate();
    return cfg;
  }
};

void attach_train_overrides(CLI::App* cmd, TrainCliArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file mirroring TrainConfig");
  const auto opt = [cmd, &args](const char* flag, const char* key, const char* help) {
    cmd->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) { args.add_override(key, v); }, help);
  };
  opt("--iterations", "iterations", "optimizer steps");
  opt("--lr,--learning-rate", "learning_rate", "Adam learning rate");
  opt("--batch-size", "batch_size", "samples per step");
  opt("--labeled-fraction", "labeled_fraction", "fraction of labeled subjects per source domain");
  opt("--sigma", "sigma", "vMF concentration");
  opt("--kernels", "kernels", "number of vMF kernels");
  opt("--likelihood-norm", "likelihood_norm", "likelihood normalization: l1 | l2");
  opt("--lambda-dice", "lambda_dice", "weight of the gated dice term");
  opt("--image-size", "image_size", "input resolution (must match the dataset)");
  opt("--encoder-depth", "encoder_depth", "down/up stages");
  opt("--encoder-base-channels", "encoder_base_channels", "channels of the first stage");
  opt("--feature-dim", "encoder_feature_dim", "feature dimension D");
  opt("--head-hidden", "head_hidden", "hidden channels of the task/reconstruction heads");
  opt("--precision", "precision", "f32 | f64");
  opt("--log-every", "log_every", "metrics cadence");
  opt("--checkpoint-every", "checkpoint_every", "checkpoint cadence");
  opt("--use-rec-loss", "use_rec_loss", "enable the reconstruction term (true|false)");
  opt("--use-vmf-loss", "use_vmf_loss", "enable the cluster term (true|false)");
}

Dataset load_dataset_checked(const std::string& path) {
  log_info("loading dataset " + path);
  return load_dataset(path);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) seeds.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds: empty list");
  return seeds;
}

// precision-dispatched helpers ------------------------------------------------

template <typename F>
auto with_checkpoint(const std::string& path, F&& fn) {
  const std::string prec = checkpoint_precision(path);
  if (prec == "f64") {
    auto tr = load_trainer<double>(path);
    return fn(tr);
  }
  auto tr = load_trainer<float>(path);
  return fn(tr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

ordered_json metrics_json(const MetricReport& rep) {
  ordered_json subjects = ordered_json::array();
  for (const auto& s : rep.subjects) {
    ordered_json hd = ordered_json::array();
    for (const auto& h : s.hd)
      hd.push_back(h ? ordered_json(*h) : ordered_json(nullptr));
    subjects.push_back(ordered_json{{"subject", s.subject_id},
                                    {"dice", s.dice_pct},
                                    {"hd", hd},
                                    {"mean_dice", s.mean_dice()}});
  }
  return ordered_json{{"variant", hd_variant_name(rep.variant)},
                      {"mean_dice", rep.mean_dice},
                      {"std_dice", rep.std_dice},
                      {"mean_hd", rep.mean_hd},
                      {"std_hd", rep.std_hd},
                      {"mean_foreground_dice", rep.mean_foreground_dice},
                      {"undefined_hd", rep.undefined_hd_count},
                      {"subjects", subjects}};
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"vMF-kernel compositional segmentation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GlobalOpts globals;
  app.add_option("--seed", globals.seed, "seed override for the subcommand")
      ->expected(1);
  app.add_option("--threads", globals.threads, "cap internal parallelism");
  app.add_option("--log-level", globals.log_level, "quiet | info | debug")
      ->check(CLI::IsMember({"quiet", "info", "debug"}));

  // gen-data ------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "render the synthetic multi-domain dataset");
  GeneratorConfig gen_cfg;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--domains", gen_cfg.num_domains, "domain count (<= 8)");
  gen->add_option("--subjects", gen_cfg.subjects_per_domain, "subjects per domain");
  gen->add_option("--slices", gen_cfg.slices_per_subject, "slices per subject");
  gen->add_option("--size", gen_cfg.image_size, "image size (multiple of 4)");

  // train ----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "leave-one-domain-out training");
  TrainCliArgs train_args;
  std::string train_data, train_out, train_holdout;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--holdout", train_holdout, "held-out target domain")->required();
  attach_train_overrides(train, train_args);

  // eval -------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "held-out metrics for a checkpoint");
  std::string eval_ckpt, eval_data, eval_out, eval_holdout, eval_variant = "modified";
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--holdout", eval_holdout, "held-out domain (default: the checkpoint's)");
  eval->add_option("--hd-variant", eval_variant, "standard | modified")
      ->check(CLI::IsMember({"standard", "modified"}));

  // ttt --------------------------------------------------------------
  auto* ttt = app.add_subcommand("ttt", "test-time training on the held-out subjects");
  std::string ttt_ckpt, ttt_data, ttt_out, ttt_holdout, ttt_variant = "modified";
  TTTConfig ttt_cfg;
  ttt->add_option("--checkpoint", ttt_ckpt, "trained checkpoint")->required();
  ttt->add_option("--data", ttt_data, "dataset directory")->required();
  ttt->add_option("--out", ttt_out, "output directory")->required();
  ttt->add_option("--holdout", ttt_holdout, "held-out domain (default: the checkpoint's)");
  ttt->add_option("--iterations", ttt_cfg.iterations, "adaptation steps per subject");
  ttt->add_option("--lr", ttt_cfg.learning_rate, "adaptation learning rate");
  ttt->add_flag("--paper-candidates,!--include-initial",
                [&ttt_cfg](std::int64_t v) { ttt_cfg.include_initial = v == 0; },
                "restrict selection to the adapted snapshots (exclude the initial state)");
  ttt->add_option("--hd-variant", ttt_variant, "standard | modified")
      ->check(CLI::IsMember({"standard", "modified"}));

  // ablate -----------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "loss-term ablation over seeds");
  TrainCliArgs ablate_args;
  std::string ablate_data, ablate_out, ablate_holdout, ablate_seeds = "0,1,2";
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--holdout", ablate_holdout, "held-out target domain")->required();
  ablate->add_option("--seeds", ablate_seeds, "comma-separated seed list");
  attach_train_overrides(ablate, ablate_args);

  // probe --------------------------------------------------------------
  auto* probe = app.add_subcommand("probe", "domain-alignment probe on a trained model");
  std::string probe_ckpt, probe_data, probe_out, probe_holdout, probe_rep = "all";
  bool probe_shuffled = false;
  probe->add_option("--checkpoint", probe_ckpt, "trained checkpoint")->required();
  probe->add_option("--data", probe_data, "dataset directory")->required();
  probe->add_option("--out", probe_out, "output directory")->required();
  probe->add_option("--holdout", probe_holdout, "held-out domain (default: the checkpoint's)");
  probe->add_option("--representation", probe_rep, "image | features | likelihoods | all")
      ->check(CLI::IsMember({"image", "features", "likelihoods", "all"}));
  probe->add_flag("--shuffled-labels", probe_shuffled, "chance-level sanity mode");

  // viz ----------------------------------------------------------------
  auto* viz = app.add_subcommand("viz", "export input, reconstruction, mask and likelihood channels");
  std::string viz_ckpt, viz_data, viz_out, viz_domain, viz_subject;
  int viz_slice = 0, viz_topk = 8;
  viz->add_option("--checkpoint", viz_ckpt, "trained checkpoint")->required();
  viz->add_option("--data", viz_data, "dataset directory")->required();
  viz->add_option("--out", viz_out, "output directory")->required();
  viz->add_option("--domain", viz_domain, "domain id (default: the checkpoint's holdout)");
  viz->add_option("--subject", viz_subject, "subject id (default: first of the domain)");
  viz->add_option("--slice", viz_slice, "slice index");
  viz->add_option("--top-k", viz_topk, "number of likelihood channels");

  // global options (--seed, --threads, --log-level) may appear after the
  // subcommand name
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help text or the usage error
    return code == 0 ? 0 : 2;
  }
  apply_globals(globals);

  if (gen->parsed()) {
    if (globals.seed) gen_cfg.seed = *globals.seed;
    gen_cfg.validate();
    RunManifest manifest;
    manifest.subcommand = "gen-data";
    manifest.seed = gen_cfg.seed;
    manifest.config_json = ordered_json{{"num_domains", gen_cfg.num_domains},
                                        {"subjects_per_domain", gen_cfg.subjects_per_domain},
                                        {"slices_per_subject", gen_cfg.slices_per_subject},
                                        {"image_size", gen_cfg.image_size},
                                        {"seed", gen_cfg.seed}}
                               .dump();
    manifest.stamp_start();
    generate_dataset(gen_cfg, gen_out);
    manifest.add_input(std::filesystem::path(gen_out) / "manifest.json");
    manifest.outputs = {gen_out};
    manifest.stamp_end();
    // sibling file: the dataset tree itself stays byte-identical across
    // identical invocations
    manifest.write(std::filesystem::path(gen_out).parent_path() /
                   (std::filesystem::path(gen_out).filename().string() + ".runmanifest.json"));
    log_info("dataset written to " + gen_out);
    return 0;
  }

  if (train->parsed()) {
    const Dataset ds = load_dataset_checked(train_data);
    TrainConfig cfg = train_args.resolve(ds, globals);
    cfg.holdout = train_holdout;
    cfg.validate();
    RunManifest manifest;
    manifest.subcommand = "train";
    manifest.seed = cfg.seed;
    manifest.config_json = to_json_string(cfg);
    manifest.add_input(std::filesystem::path(train_data) / "manifest.json");
    manifest.stamp_start();
    const std::filesystem::path out_dir(train_out);
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.txt", to_kv(cfg));
    const auto run_and_report = [&](auto tag) {
      using T = decltype(tag);
      auto run = train_on<T>(cfg, ds, &out_dir);
      log_info("final loss " + std::to_string(run.log.back().total));
      const MetricReport rep = evaluate_model(*run.trainer.model, run.split.test);
      write_text(out_dir / "heldout_metrics.txt", rep.table());
      write_text(out_dir / "heldout_metrics.jsonl", metrics_json(rep).dump() + "\n");
      std::cout << rep.table();
    };
    if (cfg.precision == "f64")
      run_and_report(double{});
    else
      run_and_report(float{});
    manifest.outputs = {(out_dir / "final.ckpt").string(), (out_dir / "metrics.jsonl").string(),
                        (out_dir / "heldout_metrics.txt").string()};
    manifest.stamp_end();
    manifest.write(out_dir / "run_manifest.json");
    return 0;
  }

  if (eval->parsed()) {
    const Dataset ds = load_dataset_checked(eval_data);
    RunManifest manifest;
    manifest.subcommand = "eval";
    manifest.add_input(eval_ckpt);
    manifest.add_input(std::filesystem::path(eval_data) / "manifest.json");
    manifest.stamp_start();
    const std::filesystem::path out_dir(eval_out);
    std::filesystem::create_directories(out_dir);
    const HdVariant variant = hd_variant_from_name(eval_variant);
    with_checkpoint(eval_ckpt, [&](auto& tr) {
      const std::string holdout = eval_holdout.empty() ? tr.cfg.holdout : eval_holdout;
      manifest.seed = tr.cfg.seed;
      manifest.config_json = to_json_string(tr.cfg);
      auto split = split_dataset(ds, holdout, tr.cfg.labeled_fraction, tr.cfg.seed);
      const MetricReport rep = evaluate_model(*tr.model, split.test, variant);
      write_text(out_dir / "metrics.txt", rep.table());
      write_text(out_dir / "metrics.jsonl", metrics_json(rep).dump() + "\n");
      std::cout << rep.table();
      return 0;
    });
    manifest.outputs = {(out_dir / "metrics.txt").string(), (out_dir / "metrics.jsonl").string()};
    manifest.stamp_end();
    manifest.write(out_dir / "run_manifest.json");
    return 0;
  }

  if (ttt->parsed()) {
    const Dataset ds = load_dataset_checked(ttt_data);
    ttt_cfg.validate();
    RunManifest manifest;
    manifest.subcommand = "ttt";
    manifest.add_input(ttt_ckpt);
    manifest.add_input(std::filesystem::path(ttt_data) / "manifest.json");
    manifest.stamp_start();
    const std::filesystem::path out_dir(ttt_out);
    std::filesystem::create_directories(out_dir);
    const HdVariant variant = hd_variant_from_name(ttt_variant);
    with_checkpoint(ttt_ckpt, [&](auto& tr) {
      const std::string holdout = ttt_holdout.empty() ? tr.cfg.holdout : ttt_holdout;
      manifest.seed = tr.cfg.seed;
      manifest.config_json =
          ordered_json{{"iterations", ttt_cfg.iterations},
                       {"learning_rate", ttt_cfg.learning_rate},
                       {"include_initial", ttt_cfg.include_initial},
                       {"train_config", ordered_json::parse(to_json_string(tr.cfg))}}
              .dump();
      auto split = split_dataset(ds, holdout, tr.cfg.labeled_fraction, tr.cfg.seed);
      const TTTEvaluation eval_result = ttt_evaluate(*tr.model, split.test, ttt_cfg, variant);
      write_text(out_dir / "ttt_metrics.txt", eval_result.table());
      ordered_json traces = ordered_json::array();
      for (const auto& t : eval_result.traces)
        traces.push_back(ordered_json{{"subject", t.subject_id},
                                      {"candidate_errors", t.candidate_errors},
                                      {"selected_step", t.selected_step},
                                      {"selected_error", t.selected_error}});
      ordered_json out{{"baseline", metrics_json(eval_result.baseline)},
                       {"adapted", metrics_json(eval_result.adapted)},
                       {"mean_rec_before", eval_result.mean_rec_before},
                       {"mean_rec_after", eval_result.mean_rec_after},
                       {"traces", traces}};
      write_text(out_dir / "ttt_metrics.jsonl", out.dump() + "\n");
      std::cout << eval_result.table();
      return 0;
    });
    manifest.outputs = {(out_dir / "ttt_metrics.txt").string(),
                        (out_dir / "ttt_metrics.jsonl").string()};
    manifest.stamp_end();
    manifest.write(out_dir / "run_manifest.json");
    return 0;
  }

  if (ablate->parsed()) {
    const Dataset ds = load_dataset_checked(ablate_data);
    TrainConfig cfg = ablate_args.resolve(ds, globals);
    cfg.holdout = ablate_holdout;
    if (!ablate_args.overrides.count("labeled_fraction") && ablate_args.config_path.empty())
      cfg.labeled_fraction = 0.1;  // the ablation setting of record
    cfg.validate();
    const auto seeds = parse_seed_list(ablate_seeds);
    RunManifest manifest;
    manifest.subcommand = "ablate";
    manifest.seed = seeds[0];
    manifest.config_json = to_json_string(cfg);
    manifest.add_input(std::filesystem::path(ablate_data) / "manifest.json");
    manifest.stamp_start();
    const std::filesystem::path out_dir(ablate_out);
    std::filesystem::create_directories(out_dir);
    AblationResult result;
    if (cfg.precision == "f64")
      result = run_ablation<double>(cfg, ds, seeds);
    else
      result = run_ablation<float>(cfg, ds, seeds);
    write_text(out_dir / "ablation.txt", result.table());
    ordered_json cells = ordered_json::array();
    for (const auto& c : result.cells)
      cells.push_back(ordered_json{{"variant", c.variant},
                                   {"seed", c.seed},
                                   {"mean_dice", c.mean_dice},
                                   {"mean_hd", c.mean_hd ? ordered_json(*c.mean_hd) : ordered_json(nullptr)}});
    write_text(out_dir / "ablation.jsonl", cells.dump() + "\n");
    std::cout << result.table();
    manifest.outputs = {(out_dir / "ablation.txt").string(), (out_dir / "ablation.jsonl").string()};
    manifest.stamp_end();
    manifest.write(out_dir / "run_manifest.json");
    return 0;
  }

  if (probe->parsed()) {
    const Dataset ds = load_dataset_checked(probe_data);
    RunManifest manifest;
    manifest.subcommand = "probe";
    manifest.add_input(probe_ckpt);
    manifest.add_input(std::filesystem::path(probe_data) / "manifest.json");
    manifest.stamp_start();
    const std::filesystem::path out_dir(probe_out);
    std::filesystem::create_directories(out_dir);
    with_checkpoint(probe_ckpt, [&](auto& tr) {
      const std::string holdout = probe_holdout.empty() ? tr.cfg.holdout : probe_holdout;
      ProbeConfig pc;
      pc.seed = globals.seed ? *globals.seed : tr.cfg.seed;
      pc.shuffle_labels = probe_shuffled;
      manifest.seed = pc.seed;
      manifest.config_json = ordered_json{{"representation", probe_rep},
                                          {"shuffled_labels", probe_shuffled},
                                          {"seed", pc.seed}}
                                 .dump();
      auto split = split_dataset(ds, holdout, tr.cfg.labeled_fraction, tr.cfg.seed);
      std::vector<ProbeRepresentation> reps;
      if (probe_rep == "all")
        reps = {ProbeRepresentation::kImage, ProbeRepresentation::kFeatures,
                ProbeRepresentation::kLikelihoods};
      else
        reps = {probe_representation_from_name(probe_rep)};
      ordered_json lines = ordered_json::array();
      for (const auto rep : reps) {
        const ProbeResult res = alignment_probe(*tr.model, split.train, rep, pc);
        std::cout << "probe " << probe_representation_name(rep) << ": test CE " << res.test_ce
                  << " (train CE " << res.train_ce << ", " << res.test_samples << " held-out)\n";
        lines.push_back(ordered_json{{"representation", probe_representation_name(rep)},
                                     {"test_ce", res.test_ce},
                                     {"train_ce", res.train_ce},
                                     {"classes", res.classes},
                                     {"train_samples", res.train_samples},
                                     {"test_samples", res.test_samples}});
      }
      write_text(out_dir / "probe.jsonl", lines.dump() + "\n");
      return 0;
    });
    manifest.outputs = {(out_dir / "probe.jsonl").string()};
    manifest.stamp_end();
    manifest.write(out_dir / "run_manifest.json");
    return 0;
  }

  if (viz->parsed()) {
    const Dataset ds = load_dataset_checked(viz_data);
    RunManifest manifest;
    manifest.subcommand = "viz";
    manifest.add_input(viz_ckpt);
    manifest.add_input(std::filesystem::path(viz_data) / "manifest.json");
    manifest.stamp_start();
    const std::filesystem::path out_dir(viz_out);
    with_checkpoint(viz_ckpt, [&](auto& tr) {
      using T = std::remove_reference_t<decltype(tr.model->kernel_param()[0])>;
      const std::string domain = viz_domain.empty() ? tr.cfg.holdout : viz_domain;
      manifest.seed = tr.cfg.seed;
      manifest.config_json =
          ordered_json{{"domain", domain}, {"slice", viz_slice}, {"top_k", viz_topk}}.dump();
      const auto subject_ids = ds.subjects_in_domain(domain);
      if (subject_ids.empty()) throw ConfigError("no subjects in domain '" + domain + "'");
      int subject = subject_ids[0];
      if (!viz_subject.empty()) {
        subject = -1;
        for (int s : subject_ids)
          if (ds.subjects[static_cast<std::size_t>(s)].id == viz_subject) subject = s;
        if (subject < 0) throw ConfigError("subject '" + viz_subject + "' not in domain " + domain);
      }
      const auto& subj = ds.subjects[static_cast<std::size_t>(subject)];
      if (viz_slice < 0 || viz_slice >= static_cast<int>(subj.sample_indices.size()))
        throw ConfigError("slice index out of range");
      const Sample& sample =
          ds.samples[static_cast<std::size_t>(subj.sample_indices[static_cast<std::size_t>(viz_slice)])];
      Tensor<T> x({1, 1, sample.h, sample.w});
      for (std::size_t p = 0; p < sample.image.size(); ++p)
        x.data[p] = static_cast<T>(sample.image[p]) / T(255);
      const auto files = export_likelihood_maps(*tr.model, x, out_dir, viz_topk);
      for (const auto& f : files) manifest.outputs.push_back(f.string());
      log_info(std::to_string(files.size()) + " files written to " + out_dir.string());
      return 0;
    });
    manifest.stamp_end();
    manifest.write(out_dir / "run_manifest.json");
    return 0;
  }

  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  try {
    return cli_main(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vmfnet
