#pragma once

#include <span>
#include <vector>

namespace fedadapt {

struct ScoredBatch {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 / 1
};

// Probability that a random positive outscores a random negative, ties
// counted 1/2, via average ranks. Throws MetricError on a single-class batch.
double auc(std::span<const double> scores, std::span<const int> labels);

// TP / (TP + FP) with predicted positive = score > threshold. Throws
// MetricError when nothing is predicted positive.
double precision(std::span<const double> scores, std::span<const int> labels,
                 double threshold = 0.5);

inline double auc(const ScoredBatch& b) { return auc(b.scores, b.labels); }
inline double precision(const ScoredBatch& b, double threshold = 0.5) {
  return precision(b.scores, b.labels, threshold);
}

}  // namespace fedadapt
