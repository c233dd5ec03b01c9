#include "ld3dhs/config.hpp"
#include "ld3dhs/errors.hpp"
#include "ld3dhs/optim.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace ld3dhs;

namespace {

const char* kMinimal = R"({"train": {"epochs": 100, "seed": 0, "batch_size": 4}})";

std::string key_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_run_config(text, overrides);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("defaults carry the published hyperparameters") {
  const RunConfig c = parse_run_config(kMinimal);
  CHECK(c.train.ema_beta == 0.999);
  CHECK(c.train.lambda == 1.0);
  CHECK(c.model.alpha == 1.0);
  CHECK(c.train.temperature == 0.07);
  CHECK(c.train.weight_decay == 1e-4);
  CHECK(c.train.label_smoothing == 0.2);
  CHECK(c.train.epochs == 100);
  CHECK(c.train.lr_start == 0.01);
  CHECK(c.train.lr_end == 1e-5);
  CHECK(c.train.beta1 == 0.9);
  CHECK(c.train.beta2 == 0.999);
  CHECK(c.train.gini_threshold == 0.6);
  CHECK(c.train.chc_variant == ChcVariant::Literal);
  CHECK(c.train.contrastive_form == ContrastiveForm::InfoNce);
  CHECK(c.model.encoder_dim == 64);
  CHECK(c.model.aux_dim == 32);
  CHECK(c == RunConfig{});
}

TEST_CASE("every field round-trips through JSON") {
  RunConfig c;
  c.train.epochs = 7;
  c.train.seed = 123456789012345ULL;
  c.train.lambda = 0.25;
  c.train.chc_variant = ChcVariant::Aggregate;
  c.train.contrastive_form = ContrastiveForm::PaperLiteral;
  c.train.use_bis = false;
  c.train.augment_params.jitter_sigma = 0.01;
  c.model.encoder_hidden = {8, 16, 8};
  c.model.detach_guidance = true;
  c.model.alpha = 2.5;
  const RunConfig back = run_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back == c);
  CHECK(run_config_from_json(nlohmann::json::parse(to_json(RunConfig{}).dump())) == RunConfig{});
}

TEST_CASE("schema violations name the dotted key") {
  CHECK(key_of("{}") == "train");
  CHECK(key_of(R"({"train": {"seed": 0, "batch_size": 4}})") == "train.epochs");
  CHECK(key_of(R"({"train": {"epochs": 1, "seed": 0}})") == "train.batch_size");
  CHECK(key_of(R"({"train": {"epochs": "ten", "seed": 0, "batch_size": 4}})") == "train.epochs");
  CHECK(key_of(kMinimal, {"train.lamda=1"}) == "train.lamda");
  CHECK(key_of(kMinimal, {"model.encoder_hidden=[8, \"x\"]"}) == "model.encoder_hidden");
  CHECK(key_of(kMinimal, {"model.colour=1"}) == "model.colour");
  CHECK(key_of(kMinimal, {"train.ema_beta=1.5"}) == "train.ema_beta");
  CHECK(key_of(kMinimal, {"train.chc_variant=\"sum\""}) == "train.chc_variant");
  CHECK(key_of(kMinimal, {"train.use_con=1"}) == "train.use_con");
  CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
}

TEST_CASE("overrides: dotted paths, bare keys, JSON or string values") {
  const RunConfig c = parse_run_config(kMinimal, {"lambda=0", "train.epochs=3", "model.decoder_dims=[5,6]",
                                                  "contrastive_form=paper_literal"});
  CHECK(c.train.lambda == 0.0);
  CHECK(c.train.epochs == 3);
  CHECK(c.model.decoder_dims == std::vector<int>{5, 6});
  CHECK(c.train.contrastive_form == ContrastiveForm::PaperLiteral);
  CHECK_THROWS_AS(parse_run_config(kMinimal, {"novalue"}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(kMinimal, {"=3"}), ConfigError);
}

TEST_CASE("config files load with overrides; missing files are IO errors") {
  const auto dir = ld3dhs::testing::scratch_dir("config");
  std::ofstream(dir / "c.json") << kMinimal;
  CHECK(load_run_config(dir / "c.json", {"seed=9"}).train.seed == 9);
  CHECK_THROWS_AS(load_run_config(dir / "nope.json"), IoError);
}

TEST_CASE("cosine schedule endpoints, midpoint, monotonicity, and domain") {
  const int e = 100;
  CHECK(std::abs(cosine_lr(0, e, 0.01, 1e-5) - 0.01) <= 1e-9);
  CHECK(std::abs(cosine_lr(e - 1, e, 0.01, 1e-5) - 1e-5) <= 1e-9);
  CHECK(cosine_lr(0, 1, 0.01, 1e-5) == 0.01);
  CHECK(cosine_lr(2, 5, 1.0, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  for (int i = 1; i < e; ++i) CHECK(cosine_lr(i, e, 0.01, 1e-5) < cosine_lr(i - 1, e, 0.01, 1e-5));
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.01, 1e-5), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(e, e, 0.01, 1e-5), std::out_of_range);
  CHECK_THROWS_AS(cosine_lr(-1, e, 0.01, 1e-5), std::out_of_range);
}

TEST_CASE("AdamW: first step moves each weight by lr against its gradient sign, plus decay") {
  ParameterStore store;
  store.add(Parameter{"w", -1, "W", Eigen::MatrixXd::Constant(1, 3, 2.0)});
  AdamW opt(store, AdamWHyper{});
  Eigen::MatrixXd g(1, 3);
  g << 0.5, -3.0, 0.0;
  opt.step(store, {g}, 0.1);
  const Eigen::MatrixXd& w = store[0].value;
  const double decayed = 2.0 * (1.0 - 0.1 * 1e-4);
  CHECK(w(0, 0) == doctest::Approx(decayed - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(w(0, 1) == doctest::Approx(decayed + 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
  CHECK(w(0, 2) == doctest::Approx(decayed).epsilon(1e-15));
  CHECK(opt.state().step == 1);
}
