#include "ld3dhs/losses.hpp"

#include "ld3dhs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ld3dhs {

ChcVariant parse_chc_variant(std::string_view name) {
  if (name == "literal") return ChcVariant::Literal;
  if (name == "aggregate") return ChcVariant::Aggregate;
  throw std::invalid_argument("unknown consistency variant '" + std::string(name) + "'");
}

ContrastiveForm parse_contrastive_form(std::string_view name) {
  if (name == "infonce") return ContrastiveForm::InfoNce;
  if (name == "paper_literal") return ContrastiveForm::PaperLiteral;
  throw std::invalid_argument("unknown contrastive form '" + std::string(name) + "'");
}

std::string to_string(ChcVariant v) { return v == ChcVariant::Literal ? "literal" : "aggregate"; }
std::string to_string(ContrastiveForm f) { return f == ContrastiveForm::InfoNce ? "infonce" : "paper_literal"; }

CesResult loss_ces(std::span<const MatrixXd> y_prob, std::span<const LabelArray> labels, double smoothing) {
  if (y_prob.size() != labels.size()) throw std::invalid_argument("one label array per level required");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw std::invalid_argument("label smoothing must be in [0, 1)");
  constexpr double kFloor = 1e-12;
  CesResult out;
  for (std::size_t h = 0; h < y_prob.size(); ++h) {
    const MatrixXd& y = y_prob[h];
    const auto& lab = labels[h];
    const Eigen::Index n = y.rows();
    const Eigen::Index k = y.cols();
    if (static_cast<Eigen::Index>(lab.size()) != n) throw std::invalid_argument("label count does not match rows");
    MatrixXd grad = MatrixXd::Zero(n, k);
    double loss = 0.0;
    const double off = smoothing / static_cast<double>(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int t = lab[static_cast<std::size_t>(i)];
      if (t < 0 || t >= k) throw std::out_of_range("label " + std::to_string(t) + " out of range at level " + std::to_string(h));
      for (Eigen::Index j = 0; j < k; ++j) {
        const double target = (j == t ? 1.0 - smoothing : 0.0) + off;
        if (target == 0.0) continue;
        const double p = y(i, j);
        if (p > kFloor) {
          loss -= target * std::log(p);
          grad(i, j) = -target / (p * static_cast<double>(n));
        } else {
          loss -= target * std::log(kFloor);
        }
      }
    }
    loss /= static_cast<double>(std::max<Eigen::Index>(n, 1));
    out.per_level.push_back(loss);
    out.total += loss;
    out.grads.push_back(std::move(grad));
  }
  return out;
}

LossValue loss_chc(std::span<const MatrixXd> y_prob, std::span<const MappingMatrix> mappings, ChcVariant variant) {
  if (y_prob.empty()) throw std::invalid_argument("no levels");
  if (mappings.size() + 1 != y_prob.size()) throw std::invalid_argument("one mapping per adjacent level pair required");
  LossValue out;
  for (const auto& y : y_prob) out.grads.push_back(MatrixXd::Zero(y.rows(), y.cols()));
  const double n = static_cast<double>(std::max<Eigen::Index>(y_prob[0].rows(), 1));
  // One division at the end: integer residual sums stay exact.
  double squared = 0.0;
  for (std::size_t h = 1; h < y_prob.size(); ++h) {
    const MatrixXd& fine = y_prob[h];
    const MatrixXd& coarse = y_prob[h - 1];
    const MatrixXd& a = mappings[h - 1].entries;
    if (a.rows() != fine.cols() || a.cols() != coarse.cols() || fine.rows() != coarse.rows()) {
      throw std::invalid_argument("mapping does not conform to level shapes");
    }
    if (variant == ChcVariant::Literal) {
      const MatrixXd r = fine - coarse * a.transpose();
      squared += r.squaredNorm();
      out.grads[h] += (2.0 / n) * r;
      out.grads[h - 1] -= (2.0 / n) * r * a;
    } else {
      const MatrixXd r = fine * a - coarse;
      squared += r.squaredNorm();
      out.grads[h] += (2.0 / n) * r * a.transpose();
      out.grads[h - 1] -= (2.0 / n) * r;
    }
  }
  out.value = squared / n;
  return out;
}

namespace {

double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }
double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace

ContrastiveResult loss_con(const MatrixXd& features, std::span<const int> labels, double tau, ContrastiveForm form) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const Eigen::Index n = features.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("one label per feature row required");
  ContrastiveResult out;
  out.grad = MatrixXd::Zero(n, features.cols());

  const MatrixXd s = (features * features.transpose()) / tau;
  MatrixXd ds = MatrixXd::Zero(n, n);
  double total = 0.0;
  std::size_t pairs = 0;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (Eigen::Index a = 0; a < n; ++a) {
    const int la = labels[static_cast<std::size_t>(a)];
    // log-sum-exp over the anchor's negatives, with softmax weights kept.
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < n; ++b) {
      if (labels[static_cast<std::size_t>(b)] != la) m = std::max(m, s(a, b));
    }
    if (!std::isfinite(m)) continue;  // no negatives
    double z = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      w[static_cast<std::size_t>(b)] = 0.0;
      if (labels[static_cast<std::size_t>(b)] != la) {
        w[static_cast<std::size_t>(b)] = std::exp(s(a, b) - m);
        z += w[static_cast<std::size_t>(b)];
      }
    }
    const double neg_lse = m + std::log(z);
    double weight_on_negatives = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == a || labels[static_cast<std::size_t>(p)] != la) continue;
      ++pairs;
      if (form == ContrastiveForm::InfoNce) {
        const double u = neg_lse - s(a, p);
        total += softplus(u);
        const double g = sigmoid(u);
        ds(a, p) -= g;
        weight_on_negatives += g;
      } else {
        total += -s(a, p) + neg_lse;
        ds(a, p) -= 1.0;
        weight_on_negatives += 1.0;
      }
    }
    if (weight_on_negatives != 0.0) {
      for (Eigen::Index b = 0; b < n; ++b) {
        if (labels[static_cast<std::size_t>(b)] != la) ds(a, b) += weight_on_negatives * w[static_cast<std::size_t>(b)] / z;
      }
    }
  }
  out.pairs = pairs;
  if (pairs == 0) {
    out.skipped = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(pairs);
  out.value = total * inv;
  out.grad = ((ds + ds.transpose()) * features) * (inv / tau);
  return out;
}

std::vector<Eigen::Index> subsample_per_class(std::span<const int> labels, int cap, std::uint64_t seed) {
  if (cap < 2) throw std::invalid_argument("per-class cap must be >= 2");
  int kmax = 0;
  for (int l : labels) {
    if (l < 0) throw std::out_of_range("negative label");
    kmax = std::max(kmax, l + 1);
  }
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(kmax));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> out;
  for (auto& idx : by_class) {
    if (static_cast<int>(idx.size()) > cap) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(cap));
    }
    out.insert(out.end(), idx.begin(), idx.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ContrastiveResult loss_con_sampled(const MatrixXd& features, std::span<const int> labels, double tau, int cap,
                                   ContrastiveForm form, std::uint64_t seed) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) throw std::invalid_argument("one label per feature row required");
  const auto idx = subsample_per_class(labels, cap, seed);
  MatrixXd sub(static_cast<Eigen::Index>(idx.size()), features.cols());
  std::vector<int> sub_labels(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    sub.row(static_cast<Eigen::Index>(r)) = features.row(idx[r]);
    sub_labels[r] = labels[static_cast<std::size_t>(idx[r])];
  }
  ContrastiveResult part = loss_con(sub, sub_labels, tau, form);
  ContrastiveResult out;
  out.value = part.value;
  out.skipped = part.skipped;
  out.pairs = part.pairs;
  out.grad = MatrixXd::Zero(features.rows(), features.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.grad.row(idx[r]) = part.grad.row(static_cast<Eigen::Index>(r));
  return out;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0 ? 1.0 : -1.0;
}

BisResult loss_bis(const MatrixXd& h_proj, const MatrixXd& f_aux, std::span<const int> labels,
                   const PrototypeBank& bank, int level) {
  const Eigen::Index n = h_proj.rows();
  const Eigen::Index d = h_proj.cols();
  if (f_aux.rows() != n || f_aux.cols() != d || d != bank.dim()) {
    throw std::invalid_argument("bi-branch feature widths must equal the prototype dim");
  }
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("one label per row required");
  const int k = bank.num_classes(level);
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (int l : labels) {
    if (l < 0 || l >= k) throw std::out_of_range("label out of range");
    count[static_cast<std::size_t>(l)] += 1.0;
  }
  for (int c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] > 0.0 &&
        (!bank.initialized(level, Branch::Main, c) || !bank.initialized(level, Branch::Aux, c))) {
      throw std::logic_error("prototype bank not initialized for class " + std::to_string(c) + " at level " +
                             std::to_string(level));
    }
  }
  const MatrixXd& p_main = bank.prototypes(level, Branch::Main);
  const MatrixXd& p_aux = bank.prototypes(level, Branch::Aux);
  BisResult out;
  out.grad_main = MatrixXd::Zero(n, d);
  out.grad_aux = MatrixXd::Zero(n, d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    const double w = inv_d / count[static_cast<std::size_t>(c)];
    for (Eigen::Index j = 0; j < d; ++j) {
      const double r_aux = p_main(c, j) - f_aux(i, j);
      const double r_main = p_aux(c, j) - h_proj(i, j);
      out.value += w * (smooth_l1(r_aux) + smooth_l1(r_main));
      out.grad_aux(i, j) = -w * smooth_l1_grad(r_aux);
      out.grad_main(i, j) = -w * smooth_l1_grad(r_main);
    }
  }
  return out;
}

double LossReport::ces_sum() const {
  double s = 0.0;
  for (double v : ces_per_h) s += v;
  return s;
}

LossReport loss_total(const LossComponents& parts, double lambda, const std::vector<bool>& gates) {
  const std::size_t levels = parts.ces.size();
  if (parts.con.size() != levels || parts.bis.size() != levels || gates.size() != levels) {
    throw std::invalid_argument("loss components disagree on the number of levels");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  auto check = [](double v, const std::string& name) {
    if (!std::isfinite(v)) throw NumericError("loss component " + name + " is not finite");
  };
  for (std::size_t h = 0; h < levels; ++h) {
    check(parts.ces[h], "ces[" + std::to_string(h) + "]");
    check(parts.con[h], "con[" + std::to_string(h) + "]");
    check(parts.bis[h], "bis[" + std::to_string(h) + "]");
  }
  check(parts.chc, "chc");

  LossReport r;
  r.ces_per_h = parts.ces;
  r.chc = parts.chc;
  r.con_per_h = parts.con;
  r.bis_per_h = parts.bis;
  r.gini_gate_per_h = gates;
  r.lambda = lambda;
  double main = 0.0;
  for (double v : parts.ces) main += v;
  main += parts.chc;
  double aux = 0.0;
  for (std::size_t h = 0; h < levels; ++h) {
    r.aux_per_h.push_back(parts.con[h] + parts.bis[h]);
    if (gates[h]) aux += r.aux_per_h.back();
  }
  r.total = aux == 0.0 ? main : main + lambda * aux;
  return r;
}

nlohmann::ordered_json to_json(const LossReport& r) {
  nlohmann::ordered_json j;
  j["ces"] = r.ces_per_h;
  j["chc"] = r.chc;
  j["con"] = r.con_per_h;
  j["bis"] = r.bis_per_h;
  j["aux"] = r.aux_per_h;
  j["gate"] = r.gini_gate_per_h;
  j["lambda"] = r.lambda;
  j["total"] = r.total;
  return j;
}

LossReport loss_report_from_json(const nlohmann::json& j) {
  LossReport r;
  r.ces_per_h = j.at("ces").get<std::vector<double>>();
  r.chc = j.at("chc").get<double>();
  r.con_per_h = j.at("con").get<std::vector<double>>();
  r.bis_per_h = j.at("bis").get<std::vector<double>>();
  r.aux_per_h = j.at("aux").get<std::vector<double>>();
  r.gini_gate_per_h = j.at("gate").get<std::vector<bool>>();
  r.lambda = j.at("lambda").get<double>();
  r.total = j.at("total").get<double>();
  return r;
}

ag::Var ces_term(std::span<const ag::Var> y_prob, std::span<const LabelArray> labels, double smoothing,
                 std::vector<double>* per_level) {
  std::vector<MatrixXd> values;
  for (const auto& y : y_prob) values.push_back(y.value());
  CesResult r = loss_ces(values, labels, smoothing);
  if (per_level) *per_level = r.per_level;
  return ag::scalar_op(std::vector<ag::Var>(y_prob.begin(), y_prob.end()), r.total, std::move(r.grads));
}

ag::Var chc_term(std::span<const ag::Var> y_prob, std::span<const MappingMatrix> mappings, ChcVariant variant) {
  std::vector<MatrixXd> values;
  for (const auto& y : y_prob) values.push_back(y.value());
  LossValue r = loss_chc(values, mappings, variant);
  return ag::scalar_op(std::vector<ag::Var>(y_prob.begin(), y_prob.end()), r.value, std::move(r.grads));
}

ag::Var con_term(const ag::Var& features, std::span<const int> labels, double tau, int cap, ContrastiveForm form,
                 std::uint64_t seed) {
  ContrastiveResult r = loss_con_sampled(features.value(), labels, tau, cap, form, seed);
  return ag::scalar_op({features}, r.value, {std::move(r.grad)});
}

ag::Var bis_term(const ag::Var& h_proj, const ag::Var& f_aux, std::span<const int> labels, const PrototypeBank& bank,
                 int level) {
  BisResult r = loss_bis(h_proj.value(), f_aux.value(), labels, bank, level);
  return ag::scalar_op({h_proj, f_aux}, r.value, {std::move(r.grad_main), std::move(r.grad_aux)});
}

}  // namespace ld3dhs
