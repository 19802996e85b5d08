// dgadr: command-line front end for the domain-generalization toolkit.
//
//   dgadr gen       --config <file> --out <csv> [--seed N]
//   dgadr train     --config <file> --data <csv> --target-domain T --out <dir> [--seed N] [--alpha A]
//   dgadr loto      --config <file> [--data <csv>] --out <dir> [--seed N] [--alpha A] [--jobs J]
//   dgadr eval      --params <file> --data <csv> --target-domain T --out <dir>
//   dgadr analyze   [--params <file>] --data <csv> --out <dir> [--config <file>]
//   dgadr gradcheck [--seed N] [--cases K]

#include "dgadr/dgadr.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace dgadr;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string params;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<int> target_domain;
  int jobs = 1;
  int cases = 20;
};

class RunDir {
 public:
  explicit RunDir(const std::string &path) : root_(path) { fs::create_directories(root_); }

  std::ofstream open(const std::string &name) {
    const fs::path p = root_ / name;
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    written_.push_back(name);
    return out;
  }

  void write_manifest(const std::string &command) {
    std::ofstream out(root_ / "manifest.txt");
    out << "command = " << command << '\n';
    for (const auto &f : written_) out << "output = " << f << '\n';
  }

  const fs::path &root() const { return root_; }

 private:
  fs::path root_;
  std::vector<std::string> written_;
};

ExperimentConfig resolve_config(const Options &o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.alpha) cfg.train.loss.alpha = *o.alpha;
  return cfg;
}

Dataset load_data(const Options &o, const ExperimentConfig &cfg) {
  if (o.data.empty()) return generate_synthetic(cfg.synth);
  return load_dataset(o.data);
}

void echo_config(RunDir &dir, const ExperimentConfig &cfg) {
  auto out = dir.open("config.resolved");
  write_config(out, cfg);
}

int cmd_gen(const Options &o) {
  ExperimentConfig cfg = resolve_config(o);
  if (o.seed) cfg.synth.seed = *o.seed;
  const Dataset ds = generate_synthetic(cfg.synth);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, o.out);
  std::ofstream resolved(o.out + ".config.resolved");
  write_config(resolved, cfg);
  std::cout << "wrote " << ds.size() << " samples (" << ds.num_domains() << " domains, " << ds.num_classes()
            << " classes, " << ds.feature_dim() << " features) to " << o.out << '\n';
  return 0;
}

int cmd_train(const Options &o) {
  ExperimentConfig cfg = resolve_config(o);
  if (o.seed) cfg.train.seeds = {*o.seed};
  const Dataset ds = load_data(o, cfg);
  const auto split = split_leave_one_out(ds, *o.target_domain);
  RunDir dir(o.out);
  echo_config(dir, cfg);
  const std::uint64_t seed = cfg.train.seeds.front();
  try {
    const TrainResult r = train_one(split.source, cfg.train, seed, &split.target);
    {
      std::ofstream params = dir.open("params.out");
      write_params(params, r.model);
    }
    {
      auto history = dir.open("history.csv");
      r.history.write_csv(history);
    }
    const MetricsReport report = evaluate(r.model, split.target);
    {
      auto results = dir.open("results.csv");
      results << "target_domain,seed," << MetricsReport::csv_header() << ",dispersion\n"
              << *o.target_domain << ',' << seed << ',' << report.csv_row() << ','
              << format_fixed(feature_dispersion(r.model, ds)) << '\n';
    }
    {
      auto metrics = dir.open("metrics.json");
      metrics << report.to_json().dump(2) << '\n';
    }
    std::cout << "target " << *o.target_domain << ": accuracy " << format_fixed(report.accuracy, 4) << ", AUC "
              << format_fixed(report.ovr_auc, 4) << ", macro-F1 " << format_fixed(report.macro_f1, 4) << '\n';
  } catch (const NonFiniteLoss &e) {
    auto dump = dir.open("bad_batch.csv");
    e.write_batch_csv(dump);
    dir.write_manifest("train");
    throw;
  }
  dir.write_manifest("train");
  return 0;
}

int cmd_loto(const Options &o) {
  ExperimentConfig cfg = resolve_config(o);
  if (o.seed) cfg.train.seeds = {*o.seed};
  const Dataset ds = load_data(o, cfg);
  RunDir dir(o.out);
  echo_config(dir, cfg);
  const LotoResult r = run_loto(ds, cfg.train, o.jobs);
  {
    auto results = dir.open("results.csv");
    r.write_results_csv(results);
  }
  {
    auto aggregate = dir.open("aggregate.csv");
    r.write_aggregate_csv(aggregate);
  }
  dir.write_manifest("loto");
  for (const auto &row : r.aggregate)
    std::cout << row.target << ": acc " << format_fixed(row.accuracy.mean, 4) << " +- " << format_fixed(row.accuracy.std, 4)
              << ", AUC " << format_fixed(row.ovr_auc.mean, 4) << ", F1 " << format_fixed(row.macro_f1.mean, 4) << '\n';
  return 0;
}

int cmd_eval(const Options &o) {
  const Model model = load_params(o.params);
  const Dataset ds = load_dataset(o.data);
  const Dataset target = ds.domain_subset(*o.target_domain);
  const MetricsReport report = evaluate(model, target);
  RunDir dir(o.out);
  {
    auto metrics = dir.open("metrics.json");
    metrics << report.to_json().dump(2) << '\n';
  }
  {
    auto results = dir.open("results.csv");
    results << "target_domain," << MetricsReport::csv_header() << '\n'
            << *o.target_domain << ',' << report.csv_row() << '\n';
  }
  dir.write_manifest("eval");
  std::cout << report.to_json().dump() << '\n';
  return 0;
}

int cmd_analyze(const Options &o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Dataset ds = load_dataset(o.data);
  Matrix features = ds.feature_matrix();
  if (!o.params.empty()) features = forward(load_params(o.params), features).features();
  const auto labels = ds.labels();
  const auto domains = ds.domains();
  RunDir dir(o.out);
  echo_config(dir, cfg);
  const KLMatrix kl = domain_kl_matrix(group_by_domain(features, domains), cfg.train.kl_shrinkage);
  {
    auto out = dir.open("kl.csv");
    kl.write_csv(out);
  }
  const double dispersion = cross_domain_dispersion(features, labels, domains);
  {
    auto out = dir.open("dispersion.txt");
    out << format_fixed(dispersion, 9) << '\n';
  }
  {
    auto out = dir.open("pca.csv");
    write_projection_csv(out, pca_project(features, 2).coords, labels, domains);
  }
  dir.write_manifest("analyze");
  std::cout << "mean off-diagonal KL " << format_fixed(kl.mean_off_diagonal(), 4) << ", dispersion "
            << format_fixed(dispersion, 4) << '\n';
  return 0;
}

int cmd_gradcheck(const Options &o) {
  constexpr double kTolerance = 1e-4;
  const auto summary = run_gradcheck(o.cases, o.seed.value_or(0));
  bool ok = true;
  for (const auto &s : summary) {
    const bool pass = s.max_rel_err < kTolerance;
    ok = ok && pass;
    std::printf("%-12s cases=%d resampled=%d max_rel_err=%.3e %s\n", to_string(s.kind), s.cases, s.resampled,
                s.max_rel_err, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"dgadr: domain-generalization experiments with alignment and focal losses"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App *cmd) {
    cmd->add_option("--seed", o.seed, "Seed override");
  };

  auto *gen = app.add_subcommand("gen", "Generate a synthetic multi-domain dataset");
  gen->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output CSV")->required();
  add_seed(gen);

  auto *train = app.add_subcommand("train", "Train on every domain except the target");
  train->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  train->add_option("--data", o.data, "Dataset CSV (default: synthesize from config)");
  train->add_option("--target-domain", o.target_domain, "Held-out domain id")->required();
  train->add_option("--out", o.out, "Run directory")->required();
  train->add_option("--alpha", o.alpha, "Alignment loss weight override");
  add_seed(train);

  auto *loto = app.add_subcommand("loto", "Leave-one-domain-out protocol over all domains and seeds");
  loto->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  loto->add_option("--data", o.data, "Dataset CSV (default: synthesize from config)");
  loto->add_option("--out", o.out, "Run directory")->required();
  loto->add_option("--alpha", o.alpha, "Alignment loss weight override");
  loto->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  add_seed(loto);

  auto *eval = app.add_subcommand("eval", "Evaluate a parameter file on one domain");
  eval->add_option("--params", o.params, "Parameter file")->required();
  eval->add_option("--data", o.data, "Dataset CSV")->required();
  eval->add_option("--target-domain", o.target_domain, "Domain to evaluate")->required();
  eval->add_option("--out", o.out, "Output directory")->required();

  auto *analyze = app.add_subcommand("analyze", "KL matrix, dispersion and PCA projection");
  analyze->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  analyze->add_option("--params", o.params, "Parameter file (default: analyze raw features)");
  analyze->add_option("--data", o.data, "Dataset CSV")->required();
  analyze->add_option("--out", o.out, "Output directory")->required();

  auto *gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  gradcheck->add_option("--cases", o.cases, "Random instances per loss")->check(CLI::PositiveNumber);
  add_seed(gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*train) return cmd_train(o);
    if (*loto) return cmd_loto(o);
    if (*eval) return cmd_eval(o);
    if (*analyze) return cmd_analyze(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const std::exception &e) {
    std::cerr << "dgadr: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
