// ld3dhs: generate / train / eval / ablate / plot.

#include "ld3dhs/cli.hpp"
#include "ld3dhs/file_util.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace ld3dhs;
  tune_allocator();
  CLI::App app{"Hierarchical point-cloud segmentation: data generation, training, evaluation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  g->add_option("--taxonomy", gen.taxonomy, "Taxonomy file")->required();
  g->add_option("--profile", gen.profile, "uniform | power:<s> | f1,f2,...");
  g->add_option("--count", gen.count, "Number of scenes");
  g->add_option("--points", gen.points, "Points per scene");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--layout-seed", gen.layout_seed, "Seed of the class layout shared by all scenes (default: --seed)");
  g->add_option("--color-noise", gen.color_noise, "Per-point color noise sigma");
  g->add_option("--out", gen.out, "Output directory");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config, "Run config (JSON)")->required();
  t->add_option("--data", train.data, "Dataset manifest")->required();
  t->add_option("--override", train.overrides, "key.path=value, applied after parsing");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--out", train.out, "Run directory");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");

  EvalArgs ev;
  std::string checkpoint;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* ckpt_opt = e->add_option("--checkpoint", checkpoint, "Checkpoint file");
  e->add_flag("--oracle", ev.oracle, "Evaluate the ground-truth predictor")->excludes(ckpt_opt);
  e->add_option("--data", ev.data, "Dataset manifest")->required();
  e->add_option("--out", ev.out, "Report file");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Matched-seed ablation runs");
  a->add_option("--config", ab.config, "Run config (JSON)")->required();
  a->add_option("--train", ab.train_data, "Training dataset manifest")->required();
  a->add_option("--eval", ab.eval_data, "Evaluation dataset manifest")->required();
  a->add_option("--switches", ab.switches, "Subset of LDF,CFG,ADB,L_con,L_chc,L_bis")->delimiter(',');
  a->add_option("--seeds", ab.seeds, "Seeds")->delimiter(',');
  a->add_option("--override", ab.overrides, "key.path=value, applied after parsing");
  a->add_option("--out", ab.out, "Output directory");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "SVG figures from reports and logs");
  p->add_option("--report", pl.reports, "Metrics report (repeatable)");
  p->add_option("--label", pl.labels, "Legend label per report (repeatable)");
  p->add_option("--log", pl.log, "Training log (train_log.jsonl)");
  p->add_option("--out", pl.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded(std::cerr, [&]() -> int {
    if (*g) return cmd_generate(gen, std::cout);
    if (*t) return cmd_train(train, std::cout);
    if (*e) {
      if (!checkpoint.empty()) ev.checkpoint = checkpoint;
      return cmd_eval(ev, std::cout);
    }
    if (*a) return cmd_ablate(ab, std::cout);
    return cmd_plot(pl, std::cout);
  });
}
