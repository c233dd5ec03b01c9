#pragma once

// Training objectives. Each loss is a pure function returning its value and
// the analytic gradient with respect to its matrix inputs; the *_term
// adapters wrap those results as autodiff nodes.

#include "ld3dhs/autograd.hpp"
#include "ld3dhs/protobank.hpp"
#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ld3dhs {

using Eigen::MatrixXd;

enum class ChcVariant { Literal, Aggregate };
enum class ContrastiveForm { InfoNce, PaperLiteral };

ChcVariant parse_chc_variant(std::string_view name);
ContrastiveForm parse_contrastive_form(std::string_view name);
std::string to_string(ChcVariant v);
std::string to_string(ContrastiveForm f);

struct CesResult {
  double total = 0.0;
  std::vector<double> per_level;
  std::vector<MatrixXd> grads;  // d total / d y_prob[h]
};

// Label-smoothed cross-entropy summed over levels, averaged over points.
// Targets are (1 - eps) * onehot + eps / K; log is clamped at 1e-12.
CesResult loss_ces(std::span<const MatrixXd> y_prob, std::span<const LabelArray> labels, double smoothing);

struct LossValue {
  double value = 0.0;
  std::vector<MatrixXd> grads;
};

// Cross-level consistency over probability matrices. mappings[h-1] links
// level h to level h-1.
//   Literal:   (1/N) sum_i sum_h || y_i^h - A y_i^{h-1} ||^2
//   Aggregate: (1/N) sum_i sum_h || A^T y_i^h - y_i^{h-1} ||^2
LossValue loss_chc(std::span<const MatrixXd> y_prob, std::span<const MappingMatrix> mappings, ChcVariant variant);

struct ContrastiveResult {
  double value = 0.0;
  MatrixXd grad;       // same shape as the feature input
  bool skipped = false;  // fewer than two classes or no positive pairs
  std::size_t pairs = 0;
};

// Supervised contrastive loss over every row of `features` (unit rows).
// Similarities are dot products divided by tau; each ordered same-class pair
// (a, p) contributes one term against the anchor's negatives.
ContrastiveResult loss_con(const MatrixXd& features, std::span<const int> labels, double tau, ContrastiveForm form);

// Row indices with at most `cap` per class, chosen by a generator seeded with
// `seed`; sorted ascending.
std::vector<Eigen::Index> subsample_per_class(std::span<const int> labels, int cap, std::uint64_t seed);

// loss_con restricted to a per-class subsample; the gradient is scattered back
// to the full feature matrix.
ContrastiveResult loss_con_sampled(const MatrixXd& features, std::span<const int> labels, double tau, int cap,
                                   ContrastiveForm form, std::uint64_t seed);

double smooth_l1(double x);
double smooth_l1_grad(double x);

struct BisResult {
  double value = 0.0;
  MatrixXd grad_main;  // d / d h_proj
  MatrixXd grad_aux;   // d / d f_aux
};

// Bi-branch supervision at one level:
//   sum_c 1/N_c sum_{i in c} [ sl1(P_main[c] - f_i) + sl1(P_aux[c] - h_i) ]
// with sl1 averaged over feature dimensions. Prototypes come from `bank` and
// are constants here. Throws std::logic_error if a class present in `labels`
// has no prototype yet.
BisResult loss_bis(const MatrixXd& h_proj, const MatrixXd& f_aux, std::span<const int> labels,
                   const PrototypeBank& bank, int level);

struct LossComponents {
  std::vector<double> ces;  // per level
  double chc = 0.0;
  std::vector<double> con;  // per level
  std::vector<double> bis;  // per level
};

struct LossReport {
  std::vector<double> ces_per_h;
  double chc = 0.0;
  std::vector<double> con_per_h;
  std::vector<double> bis_per_h;
  std::vector<double> aux_per_h;
  double total = 0.0;
  std::vector<bool> gini_gate_per_h;
  double lambda = 1.0;

  double ces_sum() const;
};

// total = sum_h ces_h + chc + lambda * sum_{h: gate_h} (con_h + bis_h).
// Throws NumericError naming the first non-finite component.
LossReport loss_total(const LossComponents& parts, double lambda, const std::vector<bool>& gates);

// Field order: ces, chc, con, bis, aux, gate, lambda, total.
nlohmann::ordered_json to_json(const LossReport& r);
LossReport loss_report_from_json(const nlohmann::json& j);

// Autodiff adapters.
ag::Var ces_term(std::span<const ag::Var> y_prob, std::span<const LabelArray> labels, double smoothing,
                 std::vector<double>* per_level = nullptr);
ag::Var chc_term(std::span<const ag::Var> y_prob, std::span<const MappingMatrix> mappings, ChcVariant variant);
ag::Var con_term(const ag::Var& features, std::span<const int> labels, double tau, int cap, ContrastiveForm form,
                 std::uint64_t seed);
ag::Var bis_term(const ag::Var& h_proj, const ag::Var& f_aux, std::span<const int> labels, const PrototypeBank& bank,
                 int level);

}  // namespace ld3dhs
