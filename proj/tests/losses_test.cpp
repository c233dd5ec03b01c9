#include "ld3dhs/errors.hpp"
#include "ld3dhs/losses.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace ld3dhs;
using namespace ld3dhs::testing;

namespace {

MatrixXd onehot(const std::vector<int>& labels, int k) {
  MatrixXd m = MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return m;
}

PrototypeBank bank_with(const MatrixXd& main, const MatrixXd& aux) {
  PrototypeBank bank({static_cast<int>(main.rows())}, static_cast<int>(main.cols()), 0.999);
  const std::vector<bool> flags(static_cast<std::size_t>(main.rows()), true);
  bank.restore(0, Branch::Main, main, flags);
  bank.restore(0, Branch::Aux, aux, flags);
  return bank;
}

// Direct transcription of the bi-branch sum with explicit loops over classes.
double bis_oracle(const MatrixXd& h, const MatrixXd& f, const std::vector<int>& labels, const MatrixXd& p_main,
                  const MatrixXd& p_aux) {
  auto sl1 = [](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; };
  double total = 0.0;
  for (int c = 0; c < p_main.rows(); ++c) {
    int n_c = 0;
    for (int l : labels) n_c += l == c;
    if (n_c == 0) continue;
    double class_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      double a = 0.0, b = 0.0;
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        a += sl1(p_main(c, j) - f(static_cast<Eigen::Index>(i), j));
        b += sl1(p_aux(c, j) - h(static_cast<Eigen::Index>(i), j));
      }
      class_sum += (a + b) / static_cast<double>(h.cols());
    }
    total += class_sum / n_c;
  }
  return total;
}

// Per-anchor contrastive value evaluated pair by pair.
double con_oracle(const MatrixXd& f, const std::vector<int>& labels, double tau, ContrastiveForm form) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) return 0.0;
  double total = 0.0;
  int pairs = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    long double neg = 0.0L;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (labels[b] != labels[a]) neg += std::exp(static_cast<long double>(f.row(a).dot(f.row(b)) / tau));
    }
    if (neg == 0.0L) continue;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const long double pos = std::exp(static_cast<long double>(f.row(a).dot(f.row(p)) / tau));
      const double term = form == ContrastiveForm::InfoNce ? static_cast<double>(-std::log(pos / (pos + neg)))
                                                           : static_cast<double>(-(std::log(pos) - std::log(neg)));
      total += term;
      ++pairs;
    }
  }
  return pairs ? total / pairs : 0.0;
}

}  // namespace

TEST_CASE("ces: worked values") {
  const std::vector<LabelArray> labels{{0, 1, 2}, {1, 1, 0}};
  SUBCASE("perfect one-hot, no smoothing") {
    const std::vector<MatrixXd> y{onehot(labels[0], 3), onehot(labels[1], 3)};
    const CesResult r = loss_ces(y, labels, 0.0);
    CHECK(r.total == 0.0);
    CHECK(r.per_level == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("uniform predictions give H log K") {
    const std::vector<MatrixXd> y{MatrixXd::Constant(3, 3, 1.0 / 3), MatrixXd::Constant(3, 3, 1.0 / 3)};
    CHECK(loss_ces(y, labels, 0.0).total == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-14));
  }
  SUBCASE("prediction equal to the smoothed target gives its entropy") {
    const double eps = 0.2;
    const int k = 4;
    const std::vector<LabelArray> l{{2}};
    MatrixXd t = MatrixXd::Constant(1, k, eps / k);
    t(0, 2) += 1.0 - eps;
    const double entropy = -(t.array() * t.array().log()).sum();
    const std::vector<MatrixXd> y{t};
    CHECK(loss_ces(y, l, eps).total == doctest::Approx(entropy).epsilon(1e-14));
  }
  SUBCASE("zero probability is clamped, label range is checked") {
    const std::vector<MatrixXd> y{onehot({1}, 2)};
    const std::vector<LabelArray> l{{0}};
    CHECK(loss_ces(y, l, 0.0).total == doctest::Approx(-std::log(1e-12)));
    const std::vector<LabelArray> bad{{2}};
    CHECK_THROWS(loss_ces(y, bad, 0.0));
  }
}

TEST_CASE("chc: consistency invariants") {
  const HierarchySpec spec = desk_taxonomy();
  const std::vector<MappingMatrix> maps{build_mapping(spec, 1)};
  std::mt19937_64 rng(4);
  const auto fine = random_labels(200, 10, rng);
  std::vector<int> coarse, siblings;
  for (int c : fine) {
    coarse.push_back(spec.parent(1, c));
    siblings.push_back(static_cast<int>(maps[0].entries.col(coarse.back()).sum()));
  }
  const std::vector<MatrixXd> y{onehot(coarse, 4), onehot(fine, 10)};
  CHECK(loss_chc(y, maps, ChcVariant::Aggregate).value <= 1e-12);
  const double expected = std::accumulate(siblings.begin(), siblings.end(), 0.0, [](double a, int s) { return a + (s - 1); }) / 200.0;
  CHECK(loss_chc(y, maps, ChcVariant::Literal).value == expected);

  SUBCASE("parent with three children gives 2 per point under the literal form") {
    const std::vector<MatrixXd> one{onehot({2}, 4), onehot({5}, 10)};
    CHECK(loss_chc(one, maps, ChcVariant::Literal).value == 2.0);
    CHECK(loss_chc(one, maps, ChcVariant::Aggregate).value == 0.0);
  }
  SUBCASE("identity mapping, identical distributions") {
    const HierarchySpec id("id", {"a", "b"}, {{"x", "y", "z"}, {"x1", "y1", "z1"}}, {{}, {0, 1, 2}});
    const std::vector<MappingMatrix> m{build_mapping(id, 1)};
    const MatrixXd p = random_simplex_rows(7, 3, rng);
    const std::vector<MatrixXd> same{p, p};
    CHECK(loss_chc(same, m, ChcVariant::Literal).value == 0.0);
  }
}

TEST_CASE("chc aggregate vanishes exactly when the coarse row equals the child-mass sum") {
  const HierarchySpec spec = desk_taxonomy();
  const std::vector<MappingMatrix> maps{build_mapping(spec, 1)};
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd fine = random_simplex_rows(9, 10, rng);
    const MatrixXd coarse = fine * maps[0].entries;
    const std::vector<MatrixXd> y{coarse, fine};
    CHECK(loss_chc(y, maps, ChcVariant::Aggregate).value < 1e-28);
    MatrixXd off = coarse;
    off(trial % 9, 0) += 1e-3;
    const std::vector<MatrixXd> z{off, fine};
    CHECK(loss_chc(z, maps, ChcVariant::Aggregate).value > 0.0);
  }
}

TEST_CASE("variant and form names") {
  CHECK(parse_chc_variant("literal") == ChcVariant::Literal);
  CHECK(parse_chc_variant("aggregate") == ChcVariant::Aggregate);
  CHECK_THROWS_AS(parse_chc_variant("mean"), std::invalid_argument);
  CHECK(parse_contrastive_form("infonce") == ContrastiveForm::InfoNce);
  CHECK(parse_contrastive_form("paper_literal") == ContrastiveForm::PaperLiteral);
  CHECK_THROWS_AS(parse_contrastive_form("triplet"), std::invalid_argument);
  CHECK(to_string(ChcVariant::Aggregate) == "aggregate");
  CHECK(to_string(ContrastiveForm::PaperLiteral) == "paper_literal");
}

TEST_CASE("contrastive: worked values") {
  MatrixXd f(3, 2);
  f << 1, 0, 1, 0, 0, 1;
  const std::vector<int> labels{0, 0, 1};
  const double tau = 0.07;
  const ContrastiveResult nce = loss_con(f, labels, tau, ContrastiveForm::InfoNce);
  CHECK(nce.value == doctest::Approx(std::log1p(std::exp(-1.0 / tau))).epsilon(1e-9));
  CHECK(nce.value == doctest::Approx(6.2e-7).epsilon(0.05));
  CHECK(nce.pairs == 2);
  const ContrastiveResult lit = loss_con(f, labels, tau, ContrastiveForm::PaperLiteral);
  CHECK(lit.value == doctest::Approx(-1.0 / tau).epsilon(1e-12));

  const ContrastiveResult single = loss_con(f, std::vector<int>{3, 3, 3}, tau, ContrastiveForm::InfoNce);
  CHECK(single.value == 0.0);
  CHECK(single.skipped);
  CHECK(single.grad.isZero(0.0));
  CHECK_THROWS_AS(loss_con(f, labels, 0.0, ContrastiveForm::InfoNce), std::invalid_argument);
}

TEST_CASE("contrastive matches the pairwise oracle and is stable at small temperature") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd f = random_unit_rows(24, 5, rng);
    const auto labels = random_labels(24, 3, rng);
    for (auto form : {ContrastiveForm::InfoNce, ContrastiveForm::PaperLiteral}) {
      CHECK(loss_con(f, labels, 0.3, form).value == doctest::Approx(con_oracle(f, labels, 0.3, form)).epsilon(1e-10));
    }
    const ContrastiveResult cold = loss_con(f, labels, 1e-3, ContrastiveForm::InfoNce);
    CHECK(std::isfinite(cold.value));
    CHECK(cold.grad.allFinite());
    CHECK(cold.value >= 0.0);
  }
}

TEST_CASE("contrastive is invariant to a global rotation of feature space") {
  std::mt19937_64 rng(7);
  const MatrixXd f = random_unit_rows(20, 4, rng);
  const auto labels = random_labels(20, 3, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd a(4, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(a).householderQ();
  for (auto form : {ContrastiveForm::InfoNce, ContrastiveForm::PaperLiteral}) {
    CHECK(loss_con(f * q, labels, 0.07, form).value == doctest::Approx(loss_con(f, labels, 0.07, form).value).epsilon(1e-10));
  }
}

TEST_CASE("per-class subsampling: capped, sorted, deterministic, gradient scattered") {
  std::mt19937_64 rng(8);
  const auto labels = random_labels(300, 4, rng);
  const auto idx = subsample_per_class(labels, 10, 99);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  std::vector<int> per(4, 0);
  for (auto i : idx) ++per[labels[i]];
  for (int c : per) CHECK(c == 10);
  CHECK(idx == subsample_per_class(labels, 10, 99));
  CHECK(idx != subsample_per_class(labels, 10, 100));
  CHECK_THROWS_AS(subsample_per_class(labels, 1, 0), std::invalid_argument);

  const MatrixXd f = random_unit_rows(300, 6, rng);
  const ContrastiveResult r = loss_con_sampled(f, labels, 0.1, 10, ContrastiveForm::InfoNce, 99);
  std::vector<int> sub_labels;
  MatrixXd sub(static_cast<Eigen::Index>(idx.size()), 6);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    sub.row(static_cast<Eigen::Index>(k)) = f.row(idx[k]);
    sub_labels.push_back(labels[idx[k]]);
  }
  CHECK(r.value == doctest::Approx(loss_con(sub, sub_labels, 0.1, ContrastiveForm::InfoNce).value).epsilon(1e-14));
  std::set<Eigen::Index> chosen(idx.begin(), idx.end());
  for (Eigen::Index i = 0; i < 300; ++i) {
    if (!chosen.count(i)) CHECK(r.grad.row(i).isZero(0.0));
  }
}

TEST_CASE("smooth L1 piecewise values") {
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(-2.0) == 1.5);
  CHECK(smooth_l1(1.0) == 0.5);
  CHECK(smooth_l1_grad(0.5) == 0.5);
  CHECK(smooth_l1_grad(-2.0) == -1.0);
}

TEST_CASE("bi-branch: zero at the prototypes, oracle agreement, permutation invariance") {
  std::mt19937_64 rng(9);
  const PrototypeBank bank = bank_with(random_unit_rows(3, 4, rng), random_unit_rows(3, 4, rng));
  const MatrixXd& p_main = bank.prototypes(0, Branch::Main);
  const MatrixXd& p_aux = bank.prototypes(0, Branch::Aux);
  const std::vector<int> labels{0, 2, 2, 0, 0};

  MatrixXd h(5, 4), f(5, 4);
  for (int i = 0; i < 5; ++i) {
    h.row(i) = p_aux.row(labels[i]);
    f.row(i) = p_main.row(labels[i]);
  }
  CHECK(loss_bis(h, f, labels, bank, 0).value == 0.0);

  std::normal_distribution<double> g(0.0, 1.5);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] += g(rng), f.data()[i] += g(rng);
  const double v = loss_bis(h, f, labels, bank, 0).value;
  CHECK(v == doctest::Approx(bis_oracle(h, f, labels, p_main, p_aux)).epsilon(1e-14));

  // Swap two rows of class 0.
  MatrixXd h2 = h, f2 = f;
  h2.row(0).swap(h2.row(4));
  f2.row(0).swap(f2.row(4));
  CHECK(loss_bis(h2, f2, labels, bank, 0).value == doctest::Approx(v).epsilon(1e-15));

  PrototypeBank empty({3}, 4, 0.999);
  CHECK_THROWS_AS(loss_bis(h, f, labels, empty, 0), std::logic_error);
}

TEST_CASE("bi-branch: scalar residual contributions") {
  MatrixXd h(1, 1), f(1, 1);
  const PrototypeBank bank = bank_with(MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1));
  f << 0.5;   // residual 0.5 against the unit prototype
  h << 3.0;   // residual -2
  CHECK(loss_bis(h, f, std::vector<int>{0}, bank, 0).value == 0.125 + 1.5);
}

TEST_CASE("loss_total: arithmetic, gating, and non-finite diagnostics") {
  LossComponents parts;
  parts.ces = {1.0, 2.0};
  parts.chc = 0.5;
  parts.con = {0.25, 4.0};
  parts.bis = {0.125, 8.0};
  const LossReport all = loss_total(parts, 1.0, {true, true});
  CHECK(all.total == 1.0 + 2.0 + 0.5 + 0.25 + 0.125 + 4.0 + 8.0);
  CHECK(all.aux_per_h == std::vector<double>{0.375, 12.0});
  CHECK(loss_total(parts, 2.0, {false, true}).total == 3.5 + 2.0 * 12.0);
  const LossReport off = loss_total(parts, 1.0, {false, false});
  CHECK(off.total == 3.5);
  CHECK(off.total == loss_total(parts, 0.0, {true, true}).total);
  CHECK(off.con_per_h == parts.con);  // still recorded

  parts.bis[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(loss_total(parts, 1.0, {true, true}), doctest::Contains("bis[1]"), NumericError);
}

TEST_CASE("loss report serialization keeps the documented field order and round-trips") {
  LossComponents parts;
  parts.ces = {1.5, 2.25};
  parts.chc = 0.1;
  parts.con = {0.3, 0.7};
  parts.bis = {0.01, 0.02};
  const LossReport r = loss_total(parts, 0.5, {false, true});
  const auto j = to_json(r);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"ces", "chc", "con", "bis", "aux", "gate", "lambda", "total"});
  const LossReport back = loss_report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.total == r.total);
  CHECK(back.ces_per_h == r.ces_per_h);
  CHECK(back.gini_gate_per_h == r.gini_gate_per_h);
}

TEST_CASE("analytic loss gradients match central differences") {
  std::mt19937_64 rng(10);
  const HierarchySpec spec = desk_taxonomy();
  const std::vector<MappingMatrix> maps{build_mapping(spec, 1)};

  SUBCASE("ces") {
    std::vector<MatrixXd> y{random_simplex_rows(12, 4, rng), random_simplex_rows(12, 10, rng)};
    const std::vector<LabelArray> labels{random_labels(12, 4, rng), random_labels(12, 10, rng)};
    const CesResult r = loss_ces(y, labels, 0.2);
    GradCheck gc;
    for (int h = 0; h < 2; ++h) check_matrix(gc, y[h], r.grads[h], [&] { return loss_ces(y, labels, 0.2).total; }, 16, rng, "y");
    CHECK(gc.worst < 1e-6);
  }
  for (auto variant : {ChcVariant::Literal, ChcVariant::Aggregate}) {
    CAPTURE(to_string(variant));
    std::vector<MatrixXd> y{random_simplex_rows(12, 4, rng), random_simplex_rows(12, 10, rng)};
    const LossValue r = loss_chc(y, maps, variant);
    GradCheck gc;
    for (int h = 0; h < 2; ++h) check_matrix(gc, y[h], r.grads[h], [&] { return loss_chc(y, maps, variant).value; }, 16, rng, "y");
    CHECK(gc.worst < 1e-6);
  }
  for (auto form : {ContrastiveForm::InfoNce, ContrastiveForm::PaperLiteral}) {
    CAPTURE(to_string(form));
    MatrixXd f = random_unit_rows(20, 6, rng);
    const auto labels = random_labels(20, 3, rng);
    const ContrastiveResult r = loss_con(f, labels, 0.07, form);
    GradCheck gc;
    check_matrix(gc, f, r.grad, [&] { return loss_con(f, labels, 0.07, form).value; }, 32, rng, "f");
    CHECK(gc.worst < 1e-6);
  }
  SUBCASE("bis") {
    const PrototypeBank bank = bank_with(random_unit_rows(3, 5, rng), random_unit_rows(3, 5, rng));
    MatrixXd h = random_unit_rows(15, 5, rng) * 1.7, f = random_unit_rows(15, 5, rng);
    const auto labels = random_labels(15, 3, rng);
    const BisResult r = loss_bis(h, f, labels, bank, 0);
    GradCheck gc;
    auto value = [&] { return loss_bis(h, f, labels, bank, 0).value; };
    check_matrix(gc, h, r.grad_main, value, 16, rng, "h");
    check_matrix(gc, f, r.grad_aux, value, 16, rng, "f");
    CHECK(gc.worst < 1e-6);
  }
}

TEST_CASE("graph adapters expose the same values and gradients") {
  std::mt19937_64 rng(11);
  const MatrixXd f = random_unit_rows(30, 4, rng);
  const auto labels = random_labels(30, 3, rng);
  ag::Var leaf = ag::leaf(f);
  ag::Var term = con_term(leaf, labels, 0.07, 64, ContrastiveForm::InfoNce, 5);
  const ContrastiveResult direct = loss_con_sampled(f, labels, 0.07, 64, ContrastiveForm::InfoNce, 5);
  CHECK(term.scalar() == direct.value);
  ag::backward(term);
  CHECK(leaf.grad() == direct.grad);
}
