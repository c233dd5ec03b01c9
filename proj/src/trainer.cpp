#include "ld3dhs/trainer.hpp"

#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace ld3dhs {

namespace {

constexpr std::uint64_t kDropoutStream = 1;
constexpr std::uint64_t kSubsampleStream = 2;

void require_finite(const std::vector<Eigen::MatrixXd>& grads, const ParameterStore& params) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) throw NumericError("non-finite gradient for parameter " + params[i].key());
  }
}

nlohmann::ordered_json step_record(int epoch, std::int64_t step, double lr, const LossReport& r) {
  nlohmann::ordered_json j;
  j["type"] = "step";
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  const auto fields = to_json(r);
  for (auto it = fields.begin(); it != fields.end(); ++it) j[it.key()] = it.value();
  return j;
}

}  // namespace

StepGraph forward_step(const Model& model, const Batch& batch, std::uint64_t step_seed, bool training) {
  StepGraph g;
  g.ctx = std::make_unique<ForwardContext>(model.params());
  std::mt19937_64 rng(mix_seed(step_seed, kDropoutStream));
  ForwardOptions opts;
  opts.training = training;
  opts.dropout_rng = &rng;
  opts.with_aux = true;
  g.features = model.forward(batch, *g.ctx, opts);
  return g;
}

void update_bank(PrototypeBank& bank, const FeatureBundle& features, const Batch& batch) {
  for (int h = 0; h < bank.num_levels(); ++h) {
    const auto& labels = batch.labels[static_cast<std::size_t>(h)];
    const int k = bank.num_classes(h);
    bank.ema_update(h, Branch::Main, batch_prototypes(features.h_proj[static_cast<std::size_t>(h)].value(), labels, k));
    bank.ema_update(h, Branch::Aux, batch_prototypes(features.f_aux[static_cast<std::size_t>(h)].value(), labels, k));
  }
}

AssembledLoss assemble_losses(const FeatureBundle& features, const Batch& batch, const PrototypeBank& bank,
                              const TrainConfig& cfg, const std::vector<bool>& gates,
                              std::span<const MappingMatrix> mappings, std::uint64_t step_seed) {
  const int levels = batch.num_levels();
  if (static_cast<int>(gates.size()) != levels) throw std::invalid_argument("one gate per level required");
  LossComponents parts;
  std::vector<ag::Var> terms;
  std::vector<double> weights;

  terms.push_back(ces_term(features.y_prob, batch.labels, cfg.label_smoothing, &parts.ces));
  weights.push_back(1.0);
  if (cfg.use_chc && levels > 1) {
    ag::Var chc = chc_term(features.y_prob, mappings, cfg.chc_variant);
    parts.chc = chc.scalar();
    terms.push_back(chc);
    weights.push_back(1.0);
  }

  const bool has_aux = !features.f_aux.empty();
  for (int h = 0; h < levels; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    double con = 0.0;
    double bis = 0.0;
    const double w = cfg.lambda * (gates[hs] ? 1.0 : 0.0);
    if (has_aux && cfg.use_con) {
      ag::Var t = con_term(features.f_aux[hs], batch.labels[hs], cfg.temperature, cfg.per_class_cap,
                           cfg.contrastive_form, mix_seed(step_seed, kSubsampleStream + static_cast<std::uint64_t>(h)));
      con = t.scalar();
      if (w != 0.0) {
        terms.push_back(t);
        weights.push_back(w);
      }
    }
    if (has_aux && cfg.use_bis) {
      ag::Var t = bis_term(features.h_proj[hs], features.f_aux[hs], batch.labels[hs], bank, h);
      bis = t.scalar();
      if (w != 0.0) {
        terms.push_back(t);
        weights.push_back(w);
      }
    }
    parts.con.push_back(con);
    parts.bis.push_back(bis);
  }
  AssembledLoss out;
  try {
    out.report = loss_total(parts, cfg.lambda, gates);
  } catch (const NumericError& e) {
    LossReport diag;
    diag.ces_per_h = parts.ces;
    diag.chc = parts.chc;
    diag.con_per_h = parts.con;
    diag.bis_per_h = parts.bis;
    diag.gini_gate_per_h = gates;
    diag.lambda = cfg.lambda;
    diag.total = std::nan("");
    throw NumericError(std::string(e.what()) + "; losses " + to_json(diag).dump());
  }
  out.total = ag::weighted_sum(terms, weights);
  return out;
}

std::vector<std::vector<double>> split_frequencies(std::span<const Scene> scenes, const HierarchySpec& taxonomy) {
  std::vector<std::vector<double>> f;
  for (int h = 0; h < taxonomy.num_levels(); ++h) f.push_back(class_frequencies(scenes, h, taxonomy.num_classes(h)));
  return f;
}

std::vector<bool> compute_gates(std::span<const Scene> scenes, const HierarchySpec& taxonomy, double threshold) {
  return imbalance_gate(split_frequencies(scenes, taxonomy), threshold);
}

std::uint64_t model_init_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x1d3); }

std::uint64_t step_seed(std::uint64_t run_seed, int epoch, int step_in_epoch) {
  return mix_seed(mix_seed(run_seed, 0x57e9 + static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(step_in_epoch));
}

namespace {

std::vector<int> level_sizes(const HierarchySpec& t) {
  std::vector<int> k;
  for (int h = 0; h < t.num_levels(); ++h) k.push_back(t.num_classes(h));
  return k;
}

AdamWHyper hyper_of(const TrainConfig& t) { return {t.beta1, t.beta2, t.adam_eps, t.weight_decay}; }

}  // namespace

Trainer::Trainer(RunConfig cfg, HierarchySpec taxonomy, std::vector<bool> gates)
    : cfg_(std::move(cfg)),
      model_(cfg_.model, taxonomy, model_init_seed(cfg_.train.seed)),
      bank_(level_sizes(taxonomy), cfg_.model.aux_dim, cfg_.train.ema_beta),
      optimizer_(model_.params(), hyper_of(cfg_.train)),
      gates_(std::move(gates)),
      mappings_(build_all_mappings(taxonomy)) {
  cfg_.train.validate();
  if (static_cast<int>(gates_.size()) != taxonomy.num_levels()) throw std::invalid_argument("one gate per level required");
}

Trainer::Trainer(RunConfig cfg, const Checkpoint& ckpt, std::vector<bool> gates)
    : cfg_(std::move(cfg)),
      model_(restore_model(ckpt)),
      bank_(level_sizes(ckpt.taxonomy), cfg_.model.aux_dim, cfg_.train.ema_beta),
      optimizer_(model_.params(), hyper_of(cfg_.train)),
      gates_(std::move(gates)),
      mappings_(build_all_mappings(ckpt.taxonomy)) {
  cfg_.train.validate();
  if (!(ckpt.model_config == cfg_.model)) throw ConfigError("model", "checkpoint model config differs from the run config");
  if (ckpt.bank) bank_ = *ckpt.bank;
  if (ckpt.optimizer) optimizer_.restore(*ckpt.optimizer);
}

LossReport Trainer::step(const Batch& batch, std::uint64_t seed, double lr) {
  StepGraph g = forward_step(model_, batch, seed, true);
  update_bank(bank_, g.features, batch);
  AssembledLoss loss = assemble_losses(g.features, batch, bank_, cfg_.train, gates_, mappings_, seed);
  ag::backward(loss.total);
  const auto grads = g.ctx->gradients();
  require_finite(grads, model_.params());
  optimizer_.step(model_.params(), grads, lr);
  return loss.report;
}

Split split_scenes(std::span<const Scene> scenes, double val_fraction, std::uint64_t seed) {
  Split s;
  const auto cut = static_cast<std::uint64_t>(std::llround(val_fraction * 10000.0));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::uint64_t bucket = fnv1a(scenes[i].name + "#" + std::to_string(seed)) % 10000;
    (bucket < cut ? s.val : s.train).push_back(i);
  }
  if (s.train.empty() && !s.val.empty()) {
    s.train.push_back(s.val.back());
    s.val.pop_back();
  }
  return s;
}

FitResult fit(std::span<const Scene> scenes, const HierarchySpec& taxonomy, const RunConfig& cfg,
              const FitOptions& options) {
  if (scenes.empty()) throw std::invalid_argument("dataset is empty");
  cfg.train.validate();
  cfg.model.validate(taxonomy.num_levels());
  for (const auto& s : scenes) {
    validate_scene(s, taxonomy);
    if (s.feature_dim() != cfg.model.input_features) {
      throw ConfigError("model.input_features", "dataset scenes carry " + std::to_string(s.feature_dim()) +
                                                    " feature columns, config says " +
                                                    std::to_string(cfg.model.input_features));
    }
  }
  const TrainConfig& tc = cfg.train;
  const Split split = split_scenes(scenes, tc.val_fraction, tc.seed);
  std::vector<Scene> train_scenes;
  for (auto i : split.train) train_scenes.push_back(scenes[i]);
  std::vector<Scene> val_scenes;
  for (auto i : split.val) val_scenes.push_back(scenes[i]);
  const std::span<const Scene> val_view = val_scenes.empty() ? std::span<const Scene>(train_scenes) : std::span<const Scene>(val_scenes);

  FitResult result;
  result.gates = compute_gates(train_scenes, taxonomy, tc.gini_threshold);

  std::optional<Checkpoint> resumed;
  if (options.resume) resumed = load_checkpoint(*options.resume);
  Trainer trainer = resumed ? Trainer(cfg, *resumed, result.gates) : Trainer(cfg, taxonomy, result.gates);
  if (resumed && !(resumed->taxonomy == taxonomy)) {
    throw std::invalid_argument("checkpoint taxonomy '" + resumed->taxonomy.name() + "' differs from dataset taxonomy '" +
                                taxonomy.name() + "'");
  }
  int start_epoch = resumed ? resumed->epochs_completed : 0;
  double best_avg = -1.0;
  if (resumed && resumed->meta.contains("best_avg_miou")) {
    best_avg = resumed->meta.at("best_avg_miou").get<double>();
    result.best_epoch = resumed->meta.value("best_epoch", -1);
  }

  std::ofstream log_file;
  const bool writes = !options.out_dir.empty();
  if (writes) {
    ensure_directory(options.out_dir);
    const auto log_path = options.out_dir / "train_log.jsonl";
    log_file.open(log_path, resumed ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + log_path.string());
  }
  auto emit = [&](nlohmann::ordered_json rec) {
    if (writes) {
      log_file << rec.dump() << '\n';
      log_file.flush();
      if (!log_file) throw IoError("failed writing training log");
    }
    if (options.on_record) options.on_record(rec);
    result.log.push_back(std::move(rec));
  };

  if (!resumed) {
    nlohmann::ordered_json header;
    header["type"] = "header";
    header["train_scenes"] = train_scenes.size();
    header["val_scenes"] = val_scenes.size();
    header["gate"] = result.gates;
    nlohmann::ordered_json gini_values = nlohmann::ordered_json::array();
    for (const auto& f : split_frequencies(train_scenes, taxonomy)) gini_values.push_back(gini(f));
    header["gini"] = std::move(gini_values);
    header["parameters"] = trainer.model().params().scalar_count();
    emit(std::move(header));
  }

  auto meta_for = [&](int epochs_done) {
    nlohmann::json meta;
    meta["config"] = to_json(cfg);
    meta["best_avg_miou"] = best_avg;
    meta["best_epoch"] = result.best_epoch;
    meta["epochs_completed"] = epochs_done;
    return meta;
  };

  std::int64_t global_step = trainer.optimizer().state().step;
  const AugmentParams aug = tc.augment ? tc.augment_params : AugmentParams::identity();
  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc.epochs, tc.lr_start, tc.lr_end);
    std::vector<std::size_t> order(train_scenes.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(tc.seed, 0x5f1e + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<LossReport> reports;
    int step_in_epoch = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(tc.batch_size));
      const std::uint64_t seed = step_seed(tc.seed, epoch, step_in_epoch);
      std::vector<Scene> batch_scenes;
      for (std::size_t b = first; b < last; ++b) {
        const Scene& src = train_scenes[order[b]];
        batch_scenes.push_back(tc.augment ? augment(src, mix_seed(seed, 100 + (b - first)), aug) : src);
      }
      std::vector<const Scene*> ptrs;
      for (const auto& s : batch_scenes) ptrs.push_back(&s);
      const Batch batch = make_batch(ptrs);
      LossReport r = trainer.step(batch, seed, lr);
      ++global_step;
      emit(step_record(epoch, global_step, lr, r));
      reports.push_back(std::move(r));
      ++step_in_epoch;
    }

    nlohmann::ordered_json rec;
    rec["type"] = "epoch";
    rec["epoch"] = epoch;
    rec["lr"] = lr;
    rec["steps"] = reports.size();
    {
      // Per-field means over the epoch's steps.
      LossReport mean = reports.front();
      for (std::size_t i = 1; i < reports.size(); ++i) {
        const LossReport& r = reports[i];
        for (std::size_t h = 0; h < mean.ces_per_h.size(); ++h) {
          mean.ces_per_h[h] += r.ces_per_h[h];
          mean.con_per_h[h] += r.con_per_h[h];
          mean.bis_per_h[h] += r.bis_per_h[h];
          mean.aux_per_h[h] += r.aux_per_h[h];
        }
        mean.chc += r.chc;
        mean.total += r.total;
      }
      const double inv = 1.0 / static_cast<double>(reports.size());
      for (std::size_t h = 0; h < mean.ces_per_h.size(); ++h) {
        mean.ces_per_h[h] *= inv;
        mean.con_per_h[h] *= inv;
        mean.bis_per_h[h] *= inv;
        mean.aux_per_h[h] *= inv;
      }
      mean.chc *= inv;
      mean.total *= inv;
      rec["loss"] = to_json(mean);
    }

    bool improved = false;
    if (options.validate) {
      MetricsReport val = evaluate(trainer.model(), val_view, taxonomy);
      nlohmann::ordered_json vj;
      vj["miou"] = val.miou_per_h;
      vj["avg_miou"] = val.avg_miou;
      vj["consistency"] = val.consistency_rate_per_h;
      rec["val"] = std::move(vj);
      if (val.avg_miou > best_avg) {
        best_avg = val.avg_miou;
        result.best_epoch = epoch;
        result.best_report = std::move(val);
        improved = true;
      }
    }
    rec["best"] = improved;
    emit(std::move(rec));

    if (improved) {
      result.best = make_checkpoint(trainer.model(), &trainer.bank(), nullptr, epoch + 1, meta_for(epoch + 1));
      if (writes) save_checkpoint(*result.best, options.out_dir / "best.ckpt");
    }
    if (writes) {
      save_checkpoint(make_checkpoint(trainer.model(), &trainer.bank(), &trainer.optimizer(), epoch + 1, meta_for(epoch + 1)),
                      options.out_dir / "last.ckpt");
    }
  }
  result.last = make_checkpoint(trainer.model(), &trainer.bank(), &trainer.optimizer(), tc.epochs, meta_for(tc.epochs));
  return result;
}

AblationSwitch parse_ablation_switch(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (n == "ldf") return AblationSwitch::LDF;
  if (n == "cfg") return AblationSwitch::CFG;
  if (n == "adb") return AblationSwitch::ADB;
  if (n == "l_con" || n == "con") return AblationSwitch::Con;
  if (n == "l_chc" || n == "chc") return AblationSwitch::Chc;
  if (n == "l_bis" || n == "bis") return AblationSwitch::Bis;
  throw std::invalid_argument("unknown ablation switch '" + std::string(name) + "'");
}

std::string to_string(AblationSwitch s) {
  switch (s) {
    case AblationSwitch::LDF: return "LDF";
    case AblationSwitch::CFG: return "CFG";
    case AblationSwitch::ADB: return "ADB";
    case AblationSwitch::Con: return "L_con";
    case AblationSwitch::Chc: return "L_chc";
    case AblationSwitch::Bis: return "L_bis";
  }
  return "?";
}

RunConfig disable(RunConfig cfg, AblationSwitch s) {
  switch (s) {
    case AblationSwitch::LDF: cfg.model.shared_decoder = true; break;
    case AblationSwitch::CFG: cfg.model.alpha = 0.0; break;
    case AblationSwitch::ADB: cfg.train.lambda = 0.0; break;
    case AblationSwitch::Con: cfg.train.use_con = false; break;
    case AblationSwitch::Chc: cfg.train.use_chc = false; break;
    case AblationSwitch::Bis: cfg.train.use_bis = false; break;
  }
  return cfg;
}

std::vector<int> minority_classes(std::span<const double> fine_frequencies) {
  std::vector<int> idx(fine_frequencies.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return fine_frequencies[static_cast<std::size_t>(a)] < fine_frequencies[static_cast<std::size_t>(b)];
  });
  idx.resize(std::max<std::size_t>(1, fine_frequencies.size() / 3));
  std::sort(idx.begin(), idx.end());
  return idx;
}

const AblationRun& AblationReport::run(const std::string& variant, std::uint64_t seed) const {
  for (const auto& r : runs) {
    if (r.variant == variant && r.seed == seed) return r;
  }
  throw std::out_of_range("no ablation run " + variant + " for seed " + std::to_string(seed));
}

double AblationReport::mean_avg_miou(const std::string& variant) const {
  double s = 0.0;
  for (auto seed : seeds) s += run(variant, seed).report.avg_miou;
  return s / static_cast<double>(seeds.size());
}

double AblationReport::mean_minority_iou(const std::string& variant) const {
  double s = 0.0;
  for (auto seed : seeds) s += run(variant, seed).minority_iou;
  return s / static_cast<double>(seeds.size());
}

AblationReport ablate(std::span<const Scene> train_scenes, std::span<const Scene> eval_scenes,
                      const HierarchySpec& taxonomy, const RunConfig& base, std::span<const AblationSwitch> switches,
                      std::span<const std::uint64_t> seeds, const std::function<void(const AblationRun&)>& on_run) {
  if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  if (eval_scenes.empty()) throw std::invalid_argument("ablation needs evaluation scenes");
  AblationReport rep;
  rep.variants.push_back("full");
  for (auto s : switches) rep.variants.push_back(to_string(s));
  rep.seeds.assign(seeds.begin(), seeds.end());
  const auto freqs = split_frequencies(train_scenes, taxonomy);
  rep.minority = minority_classes(freqs.back());

  FitOptions opts;
  opts.validate = false;
  for (auto seed : seeds) {
    for (std::size_t v = 0; v < rep.variants.size(); ++v) {
      RunConfig cfg = base;
      cfg.train.seed = seed;
      cfg.train.val_fraction = 0.0;
      if (v > 0) cfg = disable(cfg, switches[v - 1]);
      FitResult fr = fit(train_scenes, taxonomy, cfg, opts);
      const Model model = restore_model(fr.last);
      AblationRun run;
      run.variant = rep.variants[v];
      run.seed = seed;
      run.config = cfg;
      run.report = evaluate(model, eval_scenes, taxonomy);
      run.minority_iou = mean_iou_over(run.report, taxonomy.num_levels() - 1, rep.minority);
      run.trainable_scalars = model.params().scalar_count();
      if (on_run) on_run(run);
      rep.runs.push_back(std::move(run));
    }
  }
  return rep;
}

nlohmann::ordered_json to_json(const AblationReport& rep) {
  nlohmann::ordered_json j;
  j["format"] = "ld3dhs-ablation";
  j["seeds"] = rep.seeds;
  j["minority_classes"] = rep.minority;
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& r : rep.runs) {
    nlohmann::ordered_json rj;
    rj["variant"] = r.variant;
    rj["seed"] = r.seed;
    rj["avg_miou"] = r.report.avg_miou;
    rj["miou"] = r.report.miou_per_h;
    rj["minority_iou"] = r.minority_iou;
    rj["consistency"] = r.report.consistency_rate_per_h;
    rj["trainable_scalars"] = r.trainable_scalars;
    runs.push_back(std::move(rj));
  }
  j["runs"] = std::move(runs);
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  const double full_avg = rep.mean_avg_miou("full");
  const double full_min = rep.mean_minority_iou("full");
  for (const auto& v : rep.variants) {
    summary.push_back({{"variant", v},
                       {"mean_avg_miou", rep.mean_avg_miou(v)},
                       {"mean_minority_iou", rep.mean_minority_iou(v)},
                       {"full_minus_variant_avg_miou", full_avg - rep.mean_avg_miou(v)},
                       {"full_minus_variant_minority_iou", full_min - rep.mean_minority_iou(v)}});
  }
  j["summary"] = std::move(summary);
  return j;
}

std::string format_ablation_table(const AblationReport& rep) {
  std::ostringstream os;
  os << "variant\tAvg mIoU\tminority IoU\tdelta Avg\tdelta minority\n";
  const double full_avg = rep.mean_avg_miou("full");
  const double full_min = rep.mean_minority_iou("full");
  for (const auto& v : rep.variants) {
    const std::string name = v == "full" ? "full" : "w/o " + v;
    const double a = rep.mean_avg_miou(v);
    const double m = rep.mean_minority_iou(v);
    os << name << '\t' << format_percent(a) << '\t' << format_percent(m) << '\t' << format_percent(a - full_avg) << '\t'
       << format_percent(m - full_min) << '\n';
  }
  return os.str();
}

}  // namespace ld3dhs
