#include "cli.hpp"

#include <iomanip>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "lway/errors.hpp"
#include "lway/experiment.hpp"

namespace lway::cli {
namespace {

namespace ex = lway::experiment;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool print_config = false;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Common& common) {
  auto* cmd = app.add_subcommand(name, help);
  cmd->add_option("--config", common.config, "experiment config (JSON)");
  cmd->add_option("--set", common.overrides, "override a config key, e.g. --set finetune.max_iters=150")
      ->take_all()
      ->allow_extra_args(false);
  cmd->add_flag("--print-config", common.print_config, "print the resolved config and exit");
  return cmd;
}

int run(const std::string& name, const ex::ExperimentConfig& cfg, const ex::EvalOptions& eval, std::ostream& out) {
  out << std::setprecision(6);
  if (name == "gen-data") {
    ex::generate_data(cfg);
    out << "dataset written to " << ex::Layout(cfg).data().string() << "\n";
  } else if (name == "pretrain-sr") {
    ex::run_pretrain_sr(cfg);
    out << "SR model saved to " << ex::Layout(cfg).sr_checkpoint().string() << "\n";
  } else if (name == "pretrain-lr") {
    const auto s = ex::run_pretrain_lr(cfg);
    out << "held-out L1 " << s.heldout_l1 << " (bicubic " << s.bicubic_l1 << ")\n";
  } else if (name == "finetune") {
    const auto s = ex::run_finetune(cfg);
    for (std::size_t i = 0; i < s.first_decile.size(); ++i)
      out << "history " << i << ": loss " << s.first_decile[i] << " -> " << s.last_decile[i] << "\n";
    out << "trainable fraction " << s.mask_fraction << "\n";
  } else if (name == "evaluate") {
    for (const auto& [model, rep] : ex::run_evaluate(cfg, eval)) {
      out << model << ": " << rep.rows.size() << " images";
      if (rep.summary.contains("mean_psnr"))
        out << ", PSNR " << rep.summary["mean_psnr"].get<double>() << ", SSIM " << rep.summary["mean_ssim"].get<double>();
      out << ", loss " << rep.summary["mean_loss"].get<double>() << "\n";
    }
  } else if (name == "sweep") {
    for (const auto& r : ex::run_sweep(cfg))
      out << cfg.sweep.axis << "=" << r.value.dump() << ": loss " << r.final_loss << ", PSNR " << r.psnr << " (baseline "
          << r.psnr_baseline << "), trainable " << r.trainable_fraction << "\n";
  } else {
    const auto s = ex::run_export_embeddings(cfg);
    out << s.rows << " embeddings of size " << s.dims << ", probe accuracy " << s.probe_accuracy << "\n";
  }
  return kOk;
}

}  // namespace

int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time adaptation of super-resolution models through LR reconstruction", "lway"};
  app.require_subcommand(1);
  Common common;
  ex::EvalOptions eval;
  std::string lr_dir, hr_dir;

  add_command(app, "gen-data", "synthesise train, held-out and test sets", common);
  add_command(app, "pretrain-sr", "train the SR model on bicubic pairs", common);
  add_command(app, "pretrain-lr", "train the degradation encoder and LR reconstructor", common);
  add_command(app, "finetune", "adapt the SR model on test LR images", common);
  auto* evaluate = add_command(app, "evaluate", "score baseline and adapted models", common);
  evaluate->add_option("--model", eval.model, "baseline, adapted or both")
      ->check(CLI::IsMember({"baseline", "adapted", "both"}));
  evaluate->add_option("--lr-dir", lr_dir, "evaluate these LR PNGs instead of the test split");
  evaluate->add_option("--hr-dir", hr_dir, "HR PNGs matched to --lr-dir by file name");
  add_command(app, "sweep", "repeat fine-tuning along one config axis", common);
  add_command(app, "export-embeddings", "export degradation embeddings and a linear probe", common);

  if (argv.size() > 1 && !argv[1].empty() && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
    err << "lway: unknown subcommand '" << argv[1] << "'\n" << app.help();
    return kUsage;
  }

  std::vector<const char*> args;
  for (const auto& a : argv) args.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(args.size()), args.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }
  const auto* cmd = app.get_subcommands().front();
  if (!lr_dir.empty()) eval.lr_dir = lr_dir;
  if (!hr_dir.empty()) eval.hr_dir = hr_dir;

  ex::ExperimentConfig cfg;
  try {
    std::optional<std::filesystem::path> path;
    if (!common.config.empty()) path = common.config;
    cfg = ex::load_config(path, common.overrides);
  } catch (const std::exception& e) {
    err << "lway " << cmd->get_name() << ": " << e.what() << "\n";
    return kUsage;
  }
  if (common.print_config) {
    out << ex::to_json(cfg).dump(2) << "\n";
    return kOk;
  }

  try {
    return run(cmd->get_name(), cfg, eval, out);
  } catch (const std::exception& e) {
    err << "lway " << cmd->get_name() << ": " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace lway::cli
