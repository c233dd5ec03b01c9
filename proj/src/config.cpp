#include "ld3dhs/config.hpp"

#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"

#include <cmath>
#include <set>

namespace ld3dhs {

namespace {

using nlohmann::json;

// Strict reader over one JSON object: typed lookups, then a check that no
// unrecognized keys remain.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key, bool required) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) {
      if (required) throw ConfigError(key_path(key), "required key is missing");
      return nullptr;
    }
    return &*it;
  }

  void read(const std::string& key, int& out, bool required = false) {
    if (const json* v = find(key, required)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(key_path(key), "integer out of range");
      out = static_cast<int>(x);
    }
  }

  void read(const std::string& key, std::uint64_t& out, bool required = false) {
    if (const json* v = find(key, required)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      } else {
        throw ConfigError(key_path(key), "expected a nonnegative integer");
      }
    }
  }

  void read(const std::string& key, double& out, bool required = false) {
    if (const json* v = find(key, required)) {
      if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(key_path(key), "expected a finite number");
    }
  }

  void read(const std::string& key, bool& out, bool required = false) {
    if (const json* v = find(key, required)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out, bool required = false) {
    if (const json* v = find(key, required)) {
      if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::vector<int>& out, bool required = false) {
    if (const json* v = find(key, required)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected an array of integers");
      std::vector<int> tmp;
      for (const auto& e : *v) {
        if (!e.is_number_integer()) throw ConfigError(key_path(key), "expected an array of integers");
        tmp.push_back(e.get<int>());
      }
      out = std::move(tmp);
    }
  }

  const json* section(const std::string& key) { return find(key, false); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void rethrow_as_config(const std::string& key, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  TrainConfig t;
  ObjectReader r(j, path);
  r.read("epochs", t.epochs, true);
  r.read("seed", t.seed, true);
  r.read("batch_size", t.batch_size, true);
  r.read("lr_start", t.lr_start);
  r.read("lr_end", t.lr_end);
  r.read("beta1", t.beta1);
  r.read("beta2", t.beta2);
  r.read("adam_eps", t.adam_eps);
  r.read("weight_decay", t.weight_decay);
  r.read("lambda", t.lambda);
  r.read("ema_beta", t.ema_beta);
  r.read("temperature", t.temperature);
  r.read("label_smoothing", t.label_smoothing);
  r.read("gini_threshold", t.gini_threshold);
  r.read("per_class_cap", t.per_class_cap);
  std::string chc = to_string(t.chc_variant);
  r.read("chc_variant", chc);
  rethrow_as_config(r.key_path("chc_variant"), [&] { t.chc_variant = parse_chc_variant(chc); });
  std::string form = to_string(t.contrastive_form);
  r.read("contrastive_form", form);
  rethrow_as_config(r.key_path("contrastive_form"), [&] { t.contrastive_form = parse_contrastive_form(form); });
  r.read("use_con", t.use_con);
  r.read("use_chc", t.use_chc);
  r.read("use_bis", t.use_bis);
  r.read("val_fraction", t.val_fraction);
  r.read("augment", t.augment);
  r.read("scale_min", t.augment_params.scale_min);
  r.read("scale_max", t.augment_params.scale_max);
  r.read("jitter_sigma", t.augment_params.jitter_sigma);
  r.read("color_drop_prob", t.augment_params.color_drop_prob);
  r.finish();
  return t;
}

json* resolve_section(json& doc, const std::string& key) {
  if (!doc.is_object()) return nullptr;
  json* hit = nullptr;
  for (auto& [name, section] : doc.items()) {
    if (section.is_object() && section.contains(key)) {
      if (hit) throw ConfigError(key, "ambiguous override; qualify it with a section name");
      hit = &section;
    }
  }
  return hit;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& what) { throw ConfigError("train." + key, what); };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr_start > 0.0)) fail("lr_start", "must be > 0");
  if (!(lr_end > 0.0)) fail("lr_end", "must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps", "must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(lambda >= 0.0)) fail("lambda", "must be >= 0");
  if (!(ema_beta > 0.0 && ema_beta < 1.0)) fail("ema_beta", "must be in (0, 1)");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing", "must be in [0, 1)");
  if (!(gini_threshold >= 0.0 && gini_threshold <= 1.0)) fail("gini_threshold", "must be in [0, 1]");
  if (per_class_cap < 2) fail("per_class_cap", "must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction", "must be in [0, 1)");
  if (!(augment_params.scale_min > 0.0 && augment_params.scale_min <= augment_params.scale_max)) {
    fail("scale_min", "must satisfy 0 < scale_min <= scale_max");
  }
  if (!(augment_params.jitter_sigma >= 0.0)) fail("jitter_sigma", "must be >= 0");
  if (!(augment_params.color_drop_prob >= 0.0 && augment_params.color_drop_prob <= 1.0)) {
    fail("color_drop_prob", "must be in [0, 1]");
  }
}

bool TrainConfig::operator==(const TrainConfig& o) const {
  return to_json(RunConfig{ModelConfig{}, *this}) == to_json(RunConfig{ModelConfig{}, o});
}

nlohmann::ordered_json to_json(const ModelConfig& m) {
  nlohmann::ordered_json j;
  j["input_features"] = m.input_features;
  j["encoder_hidden"] = m.encoder_hidden;
  j["encoder_dim"] = m.encoder_dim;
  j["decoder_dims"] = m.decoder_dims;
  j["aux_dim"] = m.aux_dim;
  j["aux_width_factor"] = m.aux_width_factor;
  j["alpha"] = m.alpha;
  j["dropout"] = m.dropout;
  j["detach_guidance"] = m.detach_guidance;
  j["shared_decoder"] = m.shared_decoder;
  return j;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  nlohmann::ordered_json tj;
  tj["epochs"] = t.epochs;
  tj["seed"] = t.seed;
  tj["batch_size"] = t.batch_size;
  tj["lr_start"] = t.lr_start;
  tj["lr_end"] = t.lr_end;
  tj["beta1"] = t.beta1;
  tj["beta2"] = t.beta2;
  tj["adam_eps"] = t.adam_eps;
  tj["weight_decay"] = t.weight_decay;
  tj["lambda"] = t.lambda;
  tj["ema_beta"] = t.ema_beta;
  tj["temperature"] = t.temperature;
  tj["label_smoothing"] = t.label_smoothing;
  tj["gini_threshold"] = t.gini_threshold;
  tj["per_class_cap"] = t.per_class_cap;
  tj["chc_variant"] = to_string(t.chc_variant);
  tj["contrastive_form"] = to_string(t.contrastive_form);
  tj["use_con"] = t.use_con;
  tj["use_chc"] = t.use_chc;
  tj["use_bis"] = t.use_bis;
  tj["val_fraction"] = t.val_fraction;
  tj["augment"] = t.augment;
  tj["scale_min"] = t.augment_params.scale_min;
  tj["scale_max"] = t.augment_params.scale_max;
  tj["jitter_sigma"] = t.augment_params.jitter_sigma;
  tj["color_drop_prob"] = t.augment_params.color_drop_prob;
  nlohmann::ordered_json j;
  j["model"] = to_json(cfg.model);
  j["train"] = std::move(tj);
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
  ModelConfig m;
  ObjectReader r(j, path);
  r.read("input_features", m.input_features);
  r.read("encoder_hidden", m.encoder_hidden);
  r.read("encoder_dim", m.encoder_dim);
  r.read("decoder_dims", m.decoder_dims);
  r.read("aux_dim", m.aux_dim);
  r.read("aux_width_factor", m.aux_width_factor);
  r.read("alpha", m.alpha);
  r.read("dropout", m.dropout);
  r.read("detach_guidance", m.detach_guidance);
  r.read("shared_decoder", m.shared_decoder);
  r.finish();
  // Level count is unknown here; a single-level check covers every field but
  // the decoder_dims length, which the model re-validates.
  rethrow_as_config(path, [&] {
    ModelConfig probe = m;
    probe.decoder_dims.resize(1);
    probe.validate(1);
  });
  return m;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  ObjectReader r(j, "");
  RunConfig cfg;
  if (const json* m = r.section("model")) cfg.model = model_config_from_json(*m, "model");
  const json* t = r.section("train");
  if (!t) throw ConfigError("train", "required section is missing");
  cfg.train = train_config_from_json(*t, "train");
  r.finish();
  cfg.train.validate();
  return cfg;
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }

  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts) {
    if (p.empty()) throw ConfigError(key, "empty path component in override");
  }

  json* node = &doc;
  if (parts.size() == 1 && !(doc.is_object() && doc.contains(parts[0]) && doc[parts[0]].is_object())) {
    if (json* section = resolve_section(doc, parts[0])) {
      (*section)[parts[0]] = std::move(value);
      return;
    }
    // Not present in the document: place it where the schema declares it.
    const auto schema = to_json(RunConfig{});
    std::string home = "train";
    for (const auto& [name, section] : schema.items()) {
      if (section.contains(parts[0])) home = name;
    }
    node = &doc[home];
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError(key, "override path crosses a non-object value");
    node = &next;
  }
  (*node)[parts.back()] = std::move(value);
}

RunConfig parse_run_config(std::string_view text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  return parse_run_config(read_text_file(path), overrides);
}

}  // namespace ld3dhs
