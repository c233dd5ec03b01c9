#include "ld3dhs/cli.hpp"

#include "ld3dhs/checkpoint.hpp"
#include "ld3dhs/config.hpp"
#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"
#include "ld3dhs/metrics.hpp"
#include "ld3dhs/plot.hpp"
#include "ld3dhs/predictor.hpp"
#include "ld3dhs/protobank.hpp"
#include "ld3dhs/scene_io.hpp"
#include "ld3dhs/trainer.hpp"

#include <openssl/sha.h>

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <ostream>
#include <sstream>

namespace ld3dhs {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sha1_hex(std::string_view bytes) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : digest) {
    out += kHex[b >> 4];
    out += kHex[b & 15];
  }
  return out;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace

int run_guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

ImbalanceProfile parse_profile(const std::string& text, int fine_classes, std::uint64_t seed) {
  if (text == "uniform") return ImbalanceProfile::uniform(fine_classes, seed);
  if (text.rfind("power:", 0) == 0) {
    const std::string rest = text.substr(6);
    char* end = nullptr;
    const double s = std::strtod(rest.c_str(), &end);
    if (rest.empty() || *end != '\0') throw ConfigError("profile", "bad power-law exponent '" + rest + "'");
    return ImbalanceProfile::power_law(fine_classes, s, seed);
  }
  ImbalanceProfile p;
  p.seed = seed;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double f = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ConfigError("profile", "expected 'uniform', 'power:<s>' or a frequency list");
    p.fine_frequencies.push_back(f);
  }
  if (static_cast<int>(p.fine_frequencies.size()) != fine_classes) {
    throw ConfigError("profile", "frequency list has " + std::to_string(p.fine_frequencies.size()) + " entries, taxonomy has " +
                                     std::to_string(fine_classes) + " fine classes");
  }
  return p;
}

fs::path default_output_root() {
  if (const char* env = std::getenv("LD3DHS_OUT"); env && *env) return env;
  return "runs";
}

std::string blob_hash(std::string_view bytes) {
  std::string data = "blob " + std::to_string(bytes.size());
  data.push_back('\0');
  data.append(bytes);
  return sha1_hex(data);
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["command"] = command;
  j["config"] = config;
  j["dataset_manifest"] = dataset_manifest.generic_string();
  nlohmann::ordered_json in = nlohmann::ordered_json::array();
  for (const auto& [p, h] : inputs) in.push_back({{"path", p.generic_string()}, {"blob", h}});
  j["inputs"] = std::move(in);
  j["input_hash"] = input_hash;
  j["outputs"] = outputs;
  return j;
}

RunManifest make_run_manifest(const std::string& command, const nlohmann::ordered_json& config,
                              const fs::path& dataset_manifest, const std::vector<fs::path>& extra_inputs) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.dataset_manifest = dataset_manifest;
  std::vector<fs::path> files;
  if (!dataset_manifest.empty()) {
    files.push_back(dataset_manifest);
    for (const auto& f : dataset_files(dataset_manifest)) files.push_back(f);
  }
  for (const auto& f : extra_inputs) files.push_back(f);
  std::string digest_input = command + "\n" + config.dump() + "\n";
  for (const auto& f : files) {
    const std::string h = blob_hash(read_text_file(f));
    m.inputs.emplace_back(f, h);
    digest_input += h + " " + f.filename().generic_string() + "\n";
  }
  m.input_hash = sha1_hex(digest_input);
  m.run_id = command + "-" + m.input_hash.substr(0, 12);
  return m;
}

int cmd_generate(const GenerateArgs& args, std::ostream& out) {
  if (args.count < 1) throw ConfigError("count", "count must be >= 1");
  const HierarchySpec spec = load_taxonomy(args.taxonomy);
  const int fine = spec.num_classes(spec.num_levels() - 1);
  if (args.points < fine) {
    throw ConfigError("points", "points must be >= the number of fine classes (" + std::to_string(fine) + ")");
  }
  ImbalanceProfile profile = parse_profile(args.profile, fine, args.layout_seed.value_or(args.seed));
  if (args.color_noise) profile.color_noise = *args.color_noise;
  try {
    profile.validate(spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("profile", e.what());
  }

  const fs::path dir = args.out ? *args.out : default_output_root() / ("dataset-" + std::to_string(args.seed));
  ensure_directory(dir / "scenes");
  save_taxonomy(spec, dir / "taxonomy.txt");

  std::vector<Scene> scenes;
  nlohmann::ordered_json scene_list = nlohmann::ordered_json::array();
  for (int i = 0; i < args.count; ++i) {
    Scene s = generate_scene(spec, profile, args.points, mix_seed(args.seed, static_cast<std::uint64_t>(i) + 1));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    s.name = name;
    const fs::path rel = fs::path("scenes") / (std::string(name) + ".scn");
    write_scene(s, dir / rel);
    scene_list.push_back(rel.generic_string());
    scenes.push_back(std::move(s));
  }

  nlohmann::ordered_json manifest;
  manifest["format"] = "ld3dhs-dataset";
  manifest["version"] = 1;
  manifest["taxonomy"] = "taxonomy.txt";
  manifest["scenes"] = std::move(scene_list);
  nlohmann::ordered_json gen;
  gen["profile"] = args.profile;
  gen["fine_frequencies"] = profile.fine_frequencies;
  gen["color_noise"] = profile.color_noise;
  gen["sibling_spread"] = profile.sibling_spread;
  gen["count"] = args.count;
  gen["points"] = args.points;
  gen["seed"] = args.seed;
  gen["layout_seed"] = profile.seed;
  manifest["generator"] = std::move(gen);
  write_json(dir / "dataset.json", manifest);

  out << "wrote " << args.count << " scenes to " << (dir / "dataset.json").generic_string() << '\n';
  for (int h = 0; h < spec.num_levels(); ++h) {
    const auto f = class_frequencies(scenes, h, spec.num_classes(h));
    out << "gini " << spec.level_name(h) << ": " << fixed(gini(f), 4) << '\n';
  }
  return kExitOk;
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  const RunConfig cfg = load_run_config(args.config, args.overrides);
  const Dataset data = load_dataset(args.data);
  std::vector<fs::path> extra;
  if (args.resume) extra.push_back(*args.resume);
  RunManifest manifest = make_run_manifest("train", to_json(cfg), args.data, extra);
  const fs::path dir = args.out ? *args.out : default_output_root() / manifest.run_id;
  ensure_directory(dir);
  write_json(dir / "config.json", to_json(cfg));

  FitOptions opts;
  opts.out_dir = dir;
  opts.resume = args.resume;
  std::ostream* progress = args.quiet ? nullptr : &out;
  opts.on_record = [&](const nlohmann::ordered_json& rec) {
    if (!progress || rec.at("type") != "epoch") return;
    *progress << "epoch " << rec.at("epoch").get<int>() + 1 << '/' << cfg.train.epochs << "  lr "
              << fixed(rec.at("lr").get<double>(), 6) << "  loss " << fixed(rec.at("loss").at("total").get<double>(), 4);
    if (rec.contains("val")) *progress << "  val Avg mIoU " << format_percent(rec.at("val").at("avg_miou").get<double>());
    *progress << '\n';
  };
  const FitResult result = fit(data.scenes, data.taxonomy, cfg, opts);

  manifest.outputs["log"] = "train_log.jsonl";
  manifest.outputs["last_checkpoint"] = "last.ckpt";
  if (result.best) manifest.outputs["best_checkpoint"] = "best.ckpt";
  manifest.outputs["best_epoch"] = result.best_epoch;
  if (result.best_report) manifest.outputs["best_val_avg_miou"] = result.best_report->avg_miou;
  write_json(dir / "run_manifest.json", manifest.to_json());

  out << "gates:";
  for (int h = 0; h < data.taxonomy.num_levels(); ++h) {
    out << ' ' << data.taxonomy.level_name(h) << '=' << (result.gates[static_cast<std::size_t>(h)] ? "on" : "off");
  }
  out << '\n';
  if (result.best_report) {
    out << "best epoch " << result.best_epoch + 1 << "\n" << format_report_table(*result.best_report);
  }
  out << "run written to " << dir.generic_string() << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  if (args.oracle == args.checkpoint.has_value()) {
    throw ConfigError("checkpoint", "give exactly one of --checkpoint or --oracle");
  }
  const Dataset data = load_dataset(args.data);
  MetricsReport report;
  std::vector<fs::path> extra;
  if (args.checkpoint) {
    const Checkpoint ckpt = load_checkpoint(*args.checkpoint);
    const Model model = restore_model(ckpt);
    report = evaluate(model, data.scenes, data.taxonomy);
    extra.push_back(*args.checkpoint);
  } else {
    const GroundTruthPredictor oracle(data.taxonomy);
    report = evaluate(oracle, data.scenes, data.taxonomy);
  }
  fs::path path;
  if (args.out) {
    path = *args.out;
  } else {
    const RunManifest m = make_run_manifest("eval", {{"oracle", args.oracle}}, args.data, extra);
    path = default_output_root() / m.run_id / "report.json";
  }
  if (path.has_parent_path()) ensure_directory(path.parent_path());
  save_report(report, path);
  out << format_report_table(report);
  out << "report written to " << path.generic_string() << '\n';
  return kExitOk;
}

int cmd_ablate(const AblateArgs& args, std::ostream& out) {
  const RunConfig cfg = load_run_config(args.config, args.overrides);
  std::vector<AblationSwitch> switches;
  for (const auto& s : args.switches) switches.push_back(parse_ablation_switch(s));
  if (args.seeds.empty()) throw ConfigError("seeds", "at least one seed required");
  const Dataset train = load_dataset(args.train_data);
  const Dataset eval = load_dataset(args.eval_data);
  if (!(train.taxonomy == eval.taxonomy)) {
    throw std::invalid_argument("taxonomy mismatch: '" + train.taxonomy.name() + "' vs '" + eval.taxonomy.name() + "'");
  }
  nlohmann::ordered_json snapshot = to_json(cfg);
  snapshot["switches"] = args.switches;
  snapshot["seeds"] = args.seeds;
  RunManifest manifest = make_run_manifest("ablate", snapshot, args.train_data, {args.eval_data});
  for (const auto& f : dataset_files(args.eval_data)) {
    manifest.inputs.emplace_back(f, blob_hash(read_text_file(f)));
  }
  const fs::path dir = args.out ? *args.out : default_output_root() / manifest.run_id;
  ensure_directory(dir);

  const AblationReport rep = ablate(train.scenes, eval.scenes, train.taxonomy, cfg, switches, args.seeds,
                                    [&](const AblationRun& r) {
                                      out << "seed " << r.seed << "  " << r.variant << "  Avg mIoU "
                                          << format_percent(r.report.avg_miou) << "  minority IoU "
                                          << format_percent(r.minority_iou) << '\n';
                                      save_report(r.report, dir / ("report_" + r.variant + "_seed" + std::to_string(r.seed) + ".json"));
                                    });
  write_json(dir / "ablation.json", to_json(rep));
  manifest.outputs["ablation"] = "ablation.json";
  write_json(dir / "run_manifest.json", manifest.to_json());
  out << format_ablation_table(rep);
  out << "ablation written to " << dir.generic_string() << '\n';
  return kExitOk;
}

int cmd_plot(const PlotArgs& args, std::ostream& out) {
  if (args.reports.empty() && !args.log) throw ConfigError("report", "no reports or log to plot");
  if (!args.labels.empty() && args.labels.size() != args.reports.size()) {
    throw ConfigError("label", "give one label per report");
  }
  const fs::path dir = args.out ? *args.out : default_output_root() / "plots";
  ensure_directory(dir);
  if (!args.reports.empty()) {
    std::vector<MetricsReport> reports;
    std::vector<std::string> labels = args.labels;
    for (const auto& p : args.reports) {
      reports.push_back(load_report(p));
      if (args.labels.empty()) labels.push_back(p.stem().string());
    }
    require_same_taxonomy(reports);
    for (std::size_t h = 0; h < reports.front().level_names.size(); ++h) {
      const fs::path file = dir / ("per_class_" + reports.front().level_names[h] + ".svg");
      write_text_file(file, per_class_svg(reports, labels, static_cast<int>(h)));
      out << "wrote " << file.generic_string() << '\n';
    }
  }
  if (args.log) {
    const auto records = read_log(*args.log);
    const fs::path file = dir / "loss_curve.svg";
    write_text_file(file, loss_curve_svg(records));
    out << "wrote " << file.generic_string() << '\n';
  }
  return kExitOk;
}

}  // namespace ld3dhs
