#include "ld3dhs/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ld3dhs {

int ModelConfig::decoder_dim(int level) const {
  if (decoder_dims.size() == 1 || shared_decoder) return decoder_dims.front();
  return decoder_dims.at(static_cast<std::size_t>(level));
}

void ModelConfig::validate(int num_levels) const {
  auto positive = [](int v) { return v >= 1; };
  if (input_features < 0) throw std::invalid_argument("input_features must be >= 0");
  if (encoder_hidden.empty() || !std::all_of(encoder_hidden.begin(), encoder_hidden.end(), positive)) {
    throw std::invalid_argument("encoder_hidden widths must be >= 1");
  }
  if (!positive(encoder_dim) || !positive(aux_dim)) throw std::invalid_argument("dims must be >= 1");
  if (decoder_dims.empty() || !std::all_of(decoder_dims.begin(), decoder_dims.end(), positive)) {
    throw std::invalid_argument("decoder_dims must be >= 1");
  }
  if (decoder_dims.size() != 1 && static_cast<int>(decoder_dims.size()) != num_levels) {
    throw std::invalid_argument("decoder_dims needs one entry or one per level");
  }
  if (!(aux_width_factor > 0.0) || !std::isfinite(aux_width_factor)) throw std::invalid_argument("aux_width_factor must be > 0");
  if (!std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
}

std::string Parameter::key() const {
  return module + "/" + (level < 0 ? std::string("-") : std::to_string(level)) + "/" + layer;
}

std::size_t ParameterStore::add(Parameter p) {
  const std::string k = p.key();
  if (index_.count(k)) throw std::logic_error("duplicate parameter " + k);
  index_[k] = params_.size();
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterStore::index(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + key);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<std::size_t> ParameterStore::select(const std::string& module, std::optional<int> level) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].module == module && (!level || params_[i].level == *level)) out.push_back(i);
  }
  return out;
}

ag::Var ForwardContext::param(std::size_t index) {
  auto& v = leaves_.at(index);
  if (!v.defined()) v = ag::leaf((*store_)[index].value);
  return v;
}

std::vector<Eigen::MatrixXd> ForwardContext::gradients() const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (leaves_[i].defined()) {
      out.push_back(leaves_[i].grad());
    } else {
      const auto& v = (*store_)[i].value;
      out.push_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
    }
  }
  return out;
}

namespace {

int scaled(int width, double factor) { return std::max(1, static_cast<int>(std::lround(width * factor))); }

}  // namespace

Model::Model(ModelConfig config, HierarchySpec taxonomy, std::uint64_t init_seed)
    : config_(std::move(config)), taxonomy_(std::move(taxonomy)) {
  config_.validate(taxonomy_.num_levels());
  build(init_seed);
}

Model::Model(ModelConfig config, HierarchySpec taxonomy, ParameterStore params)
    : config_(std::move(config)), taxonomy_(std::move(taxonomy)) {
  config_.validate(taxonomy_.num_levels());
  build(0);
  if (params.size() != params_.size()) throw std::invalid_argument("parameter set does not match the model layout");
  for (const auto& p : params) {
    auto idx = params_.find(p.key());
    if (!idx) throw std::invalid_argument("unexpected parameter " + p.key());
    auto& dst = params_[*idx].value;
    if (dst.rows() != p.value.rows() || dst.cols() != p.value.cols()) {
      throw std::invalid_argument("shape mismatch for parameter " + p.key());
    }
    dst = p.value;
  }
}

std::size_t Model::add_linear(std::mt19937_64& rng, const std::string& module, int level, const std::string& layer,
                              int in, int out, bool bias) {
  // He-uniform: preserves activation variance through ReLU stacks.
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd w(in, out);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  }
  const std::size_t wi = params_.add({module, level, layer + ".W", std::move(w)});
  if (bias) params_.add({module, level, layer + ".b", Eigen::MatrixXd::Zero(1, out)});
  return wi;
}

void Model::build(std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  const int levels = taxonomy_.num_levels();
  const int in = 3 + config_.input_features;

  auto encoder = [&](const std::string& module, double factor) {
    int prev = in;
    for (std::size_t l = 0; l < config_.encoder_hidden.size(); ++l) {
      const int w = scaled(config_.encoder_hidden[l], factor);
      add_linear(rng, module, -1, "fc" + std::to_string(l), prev, w);
      prev = w;
    }
    add_linear(rng, module, -1, "out", 2 * prev, scaled(config_.encoder_dim, factor));
  };
  encoder("encoder", 1.0);

  const int kmax = taxonomy_.max_classes();
  const int d = config_.encoder_dim;
  if (config_.shared_decoder) {
    const int dh = config_.decoder_dim(0);
    add_linear(rng, "decoder", -1, "fc0", d, dh);
    add_linear(rng, "decoder", -1, "fc1", dh, dh);
    add_linear(rng, "guidance", -1, "fc", kmax, dh);
    add_linear(rng, "fusion", -1, "fc", 2 * dh, dh);
    add_linear(rng, "classifier", -1, "fc0", dh, dh);
    add_linear(rng, "classifier", -1, "fc1", dh, kmax);
  } else {
    for (int h = 0; h < levels; ++h) {
      const int dh = config_.decoder_dim(h);
      add_linear(rng, "decoder", h, "fc0", d, dh);
      add_linear(rng, "decoder", h, "fc1", dh, dh);
      if (h > 0) {
        add_linear(rng, "guidance", h, "fc", taxonomy_.num_classes(h - 1), dh);
        add_linear(rng, "fusion", h, "fc", 2 * dh, dh);
      } else {
        add_linear(rng, "fusion", h, "fc", dh, dh);
      }
      add_linear(rng, "classifier", h, "fc0", dh, dh);
      add_linear(rng, "classifier", h, "fc1", dh, taxonomy_.num_classes(h));
    }
  }

  encoder("aux_encoder", config_.aux_width_factor);
  const int aux_in = scaled(config_.encoder_dim, config_.aux_width_factor);
  for (int h = 0; h < levels; ++h) {
    add_linear(rng, "aux_head", h, "fc0", aux_in, config_.aux_dim);
    add_linear(rng, "aux_head", h, "fc1", config_.aux_dim, config_.aux_dim);
  }
  for (int h = 0; h < levels; ++h) {
    const int dh = config_.decoder_dim(h);
    if (dh == config_.aux_dim) {
      params_.add({"bis_proj", h, "W", Eigen::MatrixXd::Identity(dh, dh)});
    } else {
      add_linear(rng, "bis_proj", h, "lin", dh, config_.aux_dim, false);
    }
  }
}

ag::Var Model::linear(const ag::Var& x, const std::string& module, int level, const std::string& layer,
                      ForwardContext& ctx, bool bias) const {
  const std::string prefix = module + "/" + (level < 0 ? std::string("-") : std::to_string(level)) + "/" + layer;
  ag::Var y = ag::matmul(x, ctx.param(prefix + ".W"));
  if (bias) y = ag::add_row(y, ctx.param(prefix + ".b"));
  return y;
}

ag::Var Model::point_encoder(const Batch& batch, const std::string& module, ForwardContext& ctx) const {
  if (batch.inputs.cols() != 3 + config_.input_features) {
    throw std::invalid_argument("batch has " + std::to_string(batch.inputs.cols()) + " input columns, model expects " +
                                std::to_string(3 + config_.input_features));
  }
  if (!batch.inputs.allFinite()) throw std::invalid_argument("non-finite input coordinates or features");
  ag::Var x = ag::constant(batch.inputs);
  for (std::size_t l = 0; l < config_.encoder_hidden.size(); ++l) {
    x = ag::relu(linear(x, module, -1, "fc" + std::to_string(l), ctx));
  }
  ag::Var global = ag::segment_broadcast(ag::segment_max(x, batch.offsets), batch.offsets);
  return ag::relu(linear(ag::concat_cols(x, global), module, -1, "out", ctx));
}

ag::Var Model::encode(const Batch& batch, ForwardContext& ctx) const { return point_encoder(batch, "encoder", ctx); }

ag::Var Model::decode_hierarchy(const ag::Var& z, int level, ForwardContext& ctx) const {
  if (level < 0 || level >= num_levels()) throw std::out_of_range("hierarchy level out of range");
  const int key = level_key(level);
  ag::Var h = ag::relu(linear(z, "decoder", key, "fc0", ctx));
  return ag::relu(linear(h, "decoder", key, "fc1", ctx));
}

ClassifierOutput Model::guide_and_classify(const ag::Var& h_mid, const std::optional<ag::Var>& guidance, int level,
                                           ForwardContext& ctx, const ForwardOptions& opts) const {
  if (level < 0 || level >= num_levels()) throw std::out_of_range("hierarchy level out of range");
  if ((level == 0) != !guidance.has_value()) {
    throw std::invalid_argument("guidance is required exactly for levels below the coarsest");
  }
  const int key = level_key(level);
  ClassifierOutput out;
  if (config_.shared_decoder) {
    const int kmax = taxonomy_.max_classes();
    ag::Var g_in = guidance ? ag::pad_cols(config_.detach_guidance ? ag::detach(*guidance) : *guidance, kmax)
                            : ag::constant(Eigen::MatrixXd::Zero(h_mid.rows(), kmax));
    if (guidance && guidance->cols() != taxonomy_.num_classes(level - 1)) {
      throw std::invalid_argument("guidance width does not match the parent level");
    }
    ag::Var g = ag::scale(ag::relu(linear(g_in, "guidance", key, "fc", ctx)), config_.alpha);
    out.h_fused = ag::relu(linear(ag::concat_cols(h_mid, g), "fusion", key, "fc", ctx));
  } else if (guidance) {
    if (guidance->cols() != taxonomy_.num_classes(level - 1)) {
      throw std::invalid_argument("guidance width " + std::to_string(guidance->cols()) + " does not match K=" +
                                  std::to_string(taxonomy_.num_classes(level - 1)));
    }
    ag::Var src = config_.detach_guidance ? ag::detach(*guidance) : *guidance;
    ag::Var g = ag::scale(ag::relu(linear(src, "guidance", key, "fc", ctx)), config_.alpha);
    out.h_fused = ag::relu(linear(ag::concat_cols(h_mid, g), "fusion", key, "fc", ctx));
  } else {
    out.h_fused = ag::relu(linear(h_mid, "fusion", key, "fc", ctx));
  }

  ag::Var hidden = ag::relu(linear(out.h_fused, "classifier", key, "fc0", ctx));
  if (opts.training && config_.dropout > 0.0) {
    if (opts.dropout_rng == nullptr) throw std::invalid_argument("training with dropout needs an rng");
    const double keep = 1.0 - config_.dropout;
    std::bernoulli_distribution bern(keep);
    Eigen::MatrixXd mask(hidden.rows(), hidden.cols());
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = bern(*opts.dropout_rng) ? 1.0 / keep : 0.0;
    }
    hidden = ag::mask_multiply(hidden, mask);
  }
  ag::Var logits = linear(hidden, "classifier", key, "fc1", ctx);
  if (config_.shared_decoder) logits = ag::slice_cols(logits, 0, taxonomy_.num_classes(level));
  out.logits = logits;
  out.y_prob = ag::row_softmax(logits);
  return out;
}

std::vector<ag::Var> Model::encode_aux(const Batch& batch, ForwardContext& ctx) const {
  ag::Var base = point_encoder(batch, "aux_encoder", ctx);
  std::vector<ag::Var> out;
  for (int h = 0; h < num_levels(); ++h) {
    ag::Var f = ag::relu(linear(base, "aux_head", h, "fc0", ctx));
    f = linear(f, "aux_head", h, "fc1", ctx);
    out.push_back(ag::row_normalize(f));
  }
  return out;
}

ag::Var Model::project_mid_for_bis(const ag::Var& h_mid, int level, ForwardContext& ctx) const {
  if (auto idx = params_.find("bis_proj/" + std::to_string(level) + "/W")) {
    return ag::matmul(h_mid, ctx.param(*idx));
  }
  return linear(h_mid, "bis_proj", level, "lin", ctx, false);
}

FeatureBundle Model::forward(const Batch& batch, ForwardContext& ctx, const ForwardOptions& opts) const {
  FeatureBundle fb;
  fb.z = encode(batch, ctx);
  for (int h = 0; h < num_levels(); ++h) {
    ag::Var mid = decode_hierarchy(fb.z, h, ctx);
    std::optional<ag::Var> guide;
    if (h > 0) guide = fb.y_prob.back();
    ClassifierOutput co = guide_and_classify(mid, guide, h, ctx, opts);
    fb.h_mid.push_back(mid);
    fb.h_fused.push_back(co.h_fused);
    fb.logits.push_back(co.logits);
    fb.y_prob.push_back(co.y_prob);
  }
  if (opts.with_aux) {
    fb.f_aux = encode_aux(batch, ctx);
    for (int h = 0; h < num_levels(); ++h) fb.h_proj.push_back(project_mid_for_bis(fb.h_mid[static_cast<std::size_t>(h)], h, ctx));
  }
  return fb;
}

std::vector<LabelArray> Model::predict(const Scene& scene) const {
  ForwardContext ctx(params_);
  ForwardOptions opts;
  opts.with_aux = false;
  const FeatureBundle fb = forward(make_batch(scene), ctx, opts);
  std::vector<LabelArray> out;
  for (const auto& y : fb.y_prob) {
    LabelArray lab(static_cast<std::size_t>(y.rows()));
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      Eigen::Index arg = 0;
      y.value().row(i).maxCoeff(&arg);
      lab[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    out.push_back(std::move(lab));
  }
  return out;
}

}  // namespace ld3dhs
