#include "cli.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "unmix/checkpoint.hpp"
#include "unmix/config.hpp"
#include "unmix/engine.hpp"
#include "unmix/error.hpp"
#include "unmix/eval.hpp"

extern char** environ;

namespace unmix::cli {

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  bool init_only = false;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string protocol = "knn200";
  std::string metrics;
  std::string export_path;
  std::vector<std::string> overrides;
};

struct SweepArgs {
  std::string config;
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::string> overrides;
  int parallel = 1;
  bool quiet = false;
};

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<ConfigEntry> gather_entries(const std::string& config, const std::vector<std::string>& overrides) {
  std::vector<ConfigEntry> entries;
  if (!config.empty()) {
    if (!fs::exists(config)) throw ConfigError("", "config file '" + config + "' does not exist");
    entries = read_config_file(config);
  }
  for (const auto& o : overrides) entries.push_back(parse_override(o));
  return entries;
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(gather_entries(args.config, args.overrides));
  if (args.init_only) {
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "config.resolved") << resolved_text(cfg);
    const Trainer trainer(cfg, nullptr, 0);
    const fs::path path = fs::path(cfg.output_dir) / "checkpoint.umx";
    save_checkpoint(path, trainer.save());
    out << "wrote untrained checkpoint " << path.string() << '\n';
    return kOk;
  }
  const auto report_every = std::max<std::int64_t>(1, cfg.eval_every > 0 ? cfg.eval_every : 50);
  const RunSummary summary =
      run_training(cfg, [&](std::int64_t done, std::int64_t total, const LossReport& r, const std::optional<double>& knn) {
        if (args.quiet || (done % report_every != 0 && done != total)) return;
        err << "step " << done << "/" << total << "  " << r.describe();
        if (knn) err << "  knn=" << fixed(*knn);
        err << '\n';
      });
  out << "steps " << summary.steps;
  if (summary.final_knn) out << "  final knn" << cfg.eval.knn_k << " " << fixed(*summary.final_knn);
  out << "\ncheckpoint " << summary.checkpoint.string() << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  RunConfig cfg = config_from_checkpoint(ckpt);
  if (!args.dataset.empty()) apply_entry(cfg, {"data.source", args.dataset, 0});
  for (const auto& o : args.overrides) apply_entry(cfg, parse_override(o));
  if (cfg.data.dir.empty())
    if (const char* env = std::getenv("UNMIX_DATA_DIR")) cfg.data.dir = env;
  cfg.validate();

  Encoder encoder = encoder_from_checkpoint(ckpt);
  const Datasets data = load_datasets(cfg);
  double acc = 0.0;
  if (args.protocol == "knn5") {
    acc = evaluate_knn(encoder, *data.train, *data.test, cfg.data.norm, 5, cfg.eval.knn_tau, false);
  } else if (args.protocol == "knn200") {
    acc = evaluate_knn(encoder, *data.train, *data.test, cfg.data.norm, 200, cfg.eval.knn_tau, true);
  } else {
    const FeatureIndex train = extract_features(encoder, *data.train, cfg.data.norm);
    const FeatureIndex test = extract_features(encoder, *data.test, cfg.data.norm);
    ProbeConfig probe;
    probe.seed = derive_seed(cfg.seed, {tag(Stream::Probe)});
    acc = linear_probe(train.features, train.labels, test.features, test.labels, train.num_classes, probe);
  }
  out << args.protocol << " accuracy " << fixed(acc) << '\n';

  const fs::path metrics =
      args.metrics.empty() ? fs::absolute(args.checkpoint).parent_path() / "metrics.csv" : fs::path(args.metrics);
  auto step = ckpt.metadata.find("step");
  MetricsWriter(metrics).write_eval(step == ckpt.metadata.end() ? 0 : std::stoll(step->second), args.protocol, acc);

  if (!args.export_path.empty()) {
    export_features(args.export_path, extract_features(encoder, *data.test, cfg.data.norm));
    out << "exported test features to " << args.export_path << '\n';
  }
  return kOk;
}

std::string run_dir_name(const std::string& axis, const std::string& value) {
  std::string name = axis + "=" + value;
  for (char& c : name)
    if (c == '/' || c == ' ' || c == ',' || c == ':') c = '_';
  return name;
}

/// Runs the children in waves of `parallel` processes of this executable.
int spawn_runs(const std::vector<std::vector<std::string>>& argvs, int parallel, std::ostream& err) {
  const std::string self = fs::read_symlink("/proc/self/exe").string();
  int worst = kOk;
  for (std::size_t start = 0; start < argvs.size(); start += static_cast<std::size_t>(parallel)) {
    std::vector<pid_t> pids;
    for (std::size_t i = start; i < std::min(argvs.size(), start + static_cast<std::size_t>(parallel)); ++i) {
      std::vector<char*> argv{const_cast<char*>(self.c_str())};
      for (const auto& a : argvs[i]) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      pid_t pid = 0;
      if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
        err << "failed to launch sweep run " << i << '\n';
        worst = kFailure;
        continue;
      }
      pids.push_back(pid);
    }
    for (pid_t pid : pids) {
      int status = 0;
      waitpid(pid, &status, 0);
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kFailure;
      if (code != kOk && worst == kOk) worst = code;
    }
  }
  return worst;
}

int cmd_sweep(const SweepArgs& args, std::ostream& out, std::ostream& err) {
  if (args.values.empty()) throw ConfigError("", "sweep needs at least one value");
  if (!is_config_key(args.axis)) throw ConfigError(args.axis, "sweep axis is not a configuration key");
  if (args.parallel < 1) throw ConfigError("", "--parallel must be >= 1");
  const std::vector<ConfigEntry> base = gather_entries(args.config, args.overrides);
  const fs::path root = resolve_config(base).output_dir;

  std::vector<RunConfig> runs;
  for (const auto& value : args.values) {
    std::vector<ConfigEntry> entries = base;
    entries.push_back({args.axis, value, 0});
    entries.push_back({"output_dir", (root / run_dir_name(args.axis, value)).string(), 0});
    runs.push_back(resolve_config(entries));
  }
  fs::create_directories(root);

  if (args.parallel == 1) {
    for (const auto& cfg : runs) {
      if (!args.quiet) err << "sweep run " << cfg.output_dir << '\n';
      run_training(cfg);
    }
  } else {
    std::vector<std::vector<std::string>> argvs;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      std::vector<std::string> a{"train", "--quiet"};
      if (!args.config.empty()) a.insert(a.end(), {"--config", args.config});
      for (const auto& o : args.overrides) a.insert(a.end(), {"--override", o});
      a.insert(a.end(), {"--override", args.axis + "=" + args.values[i]});
      a.insert(a.end(), {"--override", "output_dir=" + runs[i].output_dir});
      argvs.push_back(std::move(a));
    }
    if (const int code = spawn_runs(argvs, args.parallel, err); code != kOk) return code;
  }

  std::ofstream summary(root / "summary.csv");
  summary << "value,final_knn\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::string knn;
    std::ifstream metrics(fs::path(runs[i].output_dir) / "metrics.csv");
    for (std::string line; std::getline(metrics, line);) {
      // knn_acc is the ninth column
      std::size_t pos = 0;
      for (int col = 0; col < 8 && pos != std::string::npos; ++col) pos = line.find(',', pos) + 1;
      const auto end = line.find(',', pos);
      const std::string cell = line.substr(pos, end - pos);
      if (!cell.empty() && cell != "knn_acc") knn = cell;
    }
    summary << args.values[i] << ',' << knn << '\n';
    out << args.axis << "=" << args.values[i] << "  final knn " << (knn.empty() ? "n/a" : knn) << '\n';
  }
  out << "summary " << (root / "summary.csv").string() << '\n';
  return kOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(path);
  out << "checkpoint " << path << '\n';
  out << "tensors " << ckpt.tensors.size() << '\n';
  for (const auto& t : ckpt.tensors) out << "  " << t.name << " " << to_string(t.value.shape()) << '\n';
  out << "metadata\n";
  for (const auto& [k, v] : ckpt.metadata) out << "  " << k << " = " << v << '\n';
  return kOk;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised contrastive training with in-batch image mixtures"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train an encoder");
  train_cmd->add_option("-c,--config", train.config, "flat key = value config file");
  train_cmd->add_option("-o,--override", train.overrides, "key=value, repeatable");
  train_cmd->add_flag("--init-only", train.init_only, "write the untrained checkpoint and stop");
  train_cmd->add_flag("-q,--quiet", train.quiet, "no progress lines");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint's backbone features");
  eval_cmd->add_option("checkpoint,--checkpoint", eval.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("-d,--dataset", eval.dataset, "synthetic | cifar10 | cifar100 (default: as trained)");
  eval_cmd->add_option("-p,--protocol", eval.protocol, "knn5 | knn200 | probe")
      ->check(CLI::IsMember({"knn5", "knn200", "probe"}));
  eval_cmd->add_option("-m,--metrics", eval.metrics, "metrics CSV to append to (default: next to the checkpoint)");
  eval_cmd->add_option("-e,--export", eval.export_path, "write test features as UMX1 records");
  eval_cmd->add_option("-o,--override", eval.overrides, "dataset key=value, repeatable");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "one run per value of a config key");
  sweep_cmd->add_option("-c,--config", sweep.config, "base config file");
  sweep_cmd->add_option("-a,--axis", sweep.axis, "config key to vary")->required();
  sweep_cmd->add_option("-v,--values", sweep.values, "values, comma separated")->delimiter(',');
  sweep_cmd->add_option("-o,--override", sweep.overrides, "key=value applied to every run");
  sweep_cmd->add_option("-j,--parallel", sweep.parallel, "concurrent runs (separate processes)");
  sweep_cmd->add_flag("-q,--quiet", sweep.quiet, "no progress lines");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "print a checkpoint's records and metadata");
  inspect_cmd->add_option("checkpoint", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train, out, err);
    if (*eval_cmd) return cmd_eval(eval, out);
    if (*sweep_cmd) return cmd_sweep(sweep, out, err);
    if (*inspect_cmd) return cmd_inspect(inspect_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace unmix::cli
