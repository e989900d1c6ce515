#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <stdexcept>

#include "concordia/harness.hpp"

namespace concordia::harness {

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

ComponentMetrics score_classification(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("truth and prediction sizes differ");
  ComponentMetrics m;
  m.n = truth.size();
  if (truth.empty()) return m;
  std::set<std::size_t> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  for (auto c : classes) {
    std::size_t tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && pred[i] == c;
      predicted += pred[i] == c;
      actual += truth[i] == c;
    }
    m.precision += predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall += actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
  }
  m.precision /= static_cast<double>(classes.size());
  m.recall /= static_cast<double>(classes.size());
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

ComponentMetrics score_regression(const std::vector<double>& truth, const std::vector<double>& pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("truth and prediction sizes differ");
  ComponentMetrics m;
  m.n = truth.size();
  if (truth.empty()) return m;
  double sq = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sq += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  m.rmse = std::sqrt(sq / static_cast<double>(m.n));
  return m;
}

Evaluation evaluate(const fusion::ConcordiaModel& model, const std::vector<fusion::Example>& test,
                    const std::vector<std::size_t>& rows, const Dataset& d, const MappingConfig& mapping) {
  if (test.size() != rows.size()) throw std::invalid_argument("evaluate: examples and rows differ in size");
  Evaluation e;
  e.metrics.task = mapping.task;
  const bool regression = mapping.task == neural::Task::regression;
  const bool with_logic = model.hyper.use_logic;
  std::vector<std::size_t> truth_c, mix_c, nn_c, logic_c;
  std::vector<double> truth_r, mix_r, nn_r, logic_r;
  for (std::size_t k = 0; k < test.size(); ++k) {
    const auto& row = d.data.at(rows[k]);
    if (!row.label) continue;
    double kappa = 1.0;
    const auto p = fusion::infer_concordia(model, test[k], &kappa);
    PredictionRow out;
    out.id = row.id;
    out.truth = *row.label;
    out.kappa = kappa;
    if (regression) {
      const double y = fusion::unscale_regression(mapping.label_value(*row.label), mapping.lo, mapping.hi);
      const double nn = fusion::unscale_regression(p.neural.at(0), mapping.lo, mapping.hi);
      truth_r.push_back(y);
      mix_r.push_back(p.value);
      nn_r.push_back(nn);
      out.mixture = logic::format_number(p.value);
      out.neural = logic::format_number(nn);
      if (with_logic) {
        const double lv = fusion::unscale_regression(p.logic.at(0), mapping.lo, mapping.hi);
        logic_r.push_back(lv);
        out.logic = logic::format_number(lv);
      }
    } else {
      truth_c.push_back(mapping.class_index(*row.label));
      mix_c.push_back(p.label);
      nn_c.push_back(argmax(p.neural));
      out.mixture = mapping.classes.at(p.label);
      out.neural = mapping.classes.at(nn_c.back());
      if (with_logic) {
        logic_c.push_back(argmax(p.logic));
        out.logic = mapping.classes.at(logic_c.back());
      }
    }
    if (!with_logic) out.logic = "-";
    e.rows.push_back(std::move(out));
  }
  if (regression) {
    e.metrics.mixture = score_regression(truth_r, mix_r);
    e.metrics.neural = score_regression(truth_r, nn_r);
    if (with_logic) e.metrics.logic = score_regression(truth_r, logic_r);
  } else {
    e.metrics.mixture = score_classification(truth_c, mix_c);
    e.metrics.neural = score_classification(truth_c, nn_c);
    if (with_logic) e.metrics.logic = score_classification(truth_c, logic_c);
  }
  return e;
}

void write_predictions(std::ostream& out, const Evaluation& e) {
  out << "id\ttruth\tmixture\tneural\tlogic\tkappa\n";
  for (const auto& r : e.rows) {
    out << r.id << '\t' << r.truth << '\t' << r.mixture << '\t' << r.neural << '\t' << r.logic << '\t'
        << logic::format_number(r.kappa) << '\n';
  }
}

}  // namespace concordia::harness
