#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/errors.hpp"

namespace camulenet {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : n_classes(c), counts(c * c, 0) {}
  std::size_t& operator()(std::size_t t, std::size_t p) { return counts[t * n_classes + p]; }
  std::size_t operator()(std::size_t t, std::size_t p) const { return counts[t * n_classes + p]; }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto c : counts) n += c;
    return n;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& truth, std::size_t n_classes) {
  if (preds.size() != truth.size()) {
    throw ShapeError("prediction count " + std::to_string(preds.size()) + " != label count " + std::to_string(truth.size()));
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= n_classes || preds[i] < 0 ||
        static_cast<std::size_t>(preds[i]) >= n_classes) {
      throw LabelError("label out of range at index " + std::to_string(i));
    }
    ++cm(truth[i], preds[i]);
  }
  return cm;
}

enum class AccuracyKind { balanced, plain };

struct Metrics {
  double wa = 0.0;
  double wf1 = 0.0;
};

inline Metrics weighted_metrics(const ConfusionMatrix& cm, AccuracyKind kind = AccuracyKind::balanced) {
  const std::size_t c = cm.n_classes;
  const std::size_t n = cm.total();
  if (n == 0) throw ShapeError("metrics need at least one prediction");
  std::vector<std::size_t> support(c, 0), predicted(c, 0);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < c; ++t) {
    for (std::size_t p = 0; p < c; ++p) {
      support[t] += cm(t, p);
      predicted[p] += cm(t, p);
    }
    correct += cm(t, t);
  }
  Metrics m;
  std::size_t present = 0;
  double recall_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    if (support[k] == 0) continue;
    ++present;
    const double tp = static_cast<double>(cm(k, k));
    const double recall = tp / static_cast<double>(support[k]);
    const double precision = predicted[k] ? tp / static_cast<double>(predicted[k]) : 0.0;
    recall_sum += recall;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.wf1 += static_cast<double>(support[k]) / static_cast<double>(n) * f1;
  }
  m.wa = kind == AccuracyKind::balanced ? recall_sum / static_cast<double>(present)
                                        : static_cast<double>(correct) / static_cast<double>(n);
  return m;
}

inline Metrics weighted_metrics(const std::vector<int>& preds, const std::vector<int>& truth, std::size_t n_classes,
                                AccuracyKind kind = AccuracyKind::balanced) {
  if (preds.empty()) throw ShapeError("metrics need at least one prediction");
  return weighted_metrics(confusion_matrix(preds, truth, n_classes), kind);
}

// Ties go to the lowest index.
template <class It>
int argmax(It first, It last) {
  int best = 0, i = 0;
  for (It it = first; it != last; ++it, ++i) {
    if (*it > *(first + best)) best = i;
  }
  return best;
}

inline nlohmann::json confusion_to_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    nlohmann::json r = nlohmann::json::array();
    for (std::size_t p = 0; p < cm.n_classes; ++p) r.push_back(cm(t, p));
    rows.push_back(r);
  }
  return rows;
}

inline std::string confusion_to_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  std::string out = "true\\pred";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    out += names.at(t);
    for (std::size_t p = 0; p < cm.n_classes; ++p) out += "," + std::to_string(cm(t, p));
    out += "\n";
  }
  return out;
}

}  // namespace camulenet
