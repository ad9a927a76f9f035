#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <ranges>
#include <string>
#include <vector>

#include "napmon/error.hpp"

namespace napmon {

/// Area under the ROC curve with OOD (label true) as the positive class:
/// the probability that a random OOD score exceeds a random ID score, ties
/// counting one half. Computed from average ranks (Mann-Whitney U).
template <std::ranges::random_access_range Scores, std::ranges::random_access_range Labels>
[[nodiscard]] double auroc(const Scores& score_range, const Labels& label_range) {
  const auto scores = std::ranges::begin(score_range);
  const auto labels = std::ranges::begin(label_range);
  const auto n = static_cast<std::size_t>(std::ranges::size(score_range));
  if (n != static_cast<std::size_t>(std::ranges::size(label_range))) {
    throw Error(ErrorKind::length_mismatch, "auroc: score and label counts differ");
  }
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) n_pos += labels[i] ? 1 : 0;
  const auto n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorKind::invalid_argument, "auroc needs both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return static_cast<double>(scores[a]) < static_cast<double>(scores[b]);
  });

  // Ranks are 1-based; a tie block occupying ranks [i+1, j] gets (i+1+j)/2.
  // Summing 2*rank keeps everything integral.
  std::size_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t twice_rank = (i + 1) + j;
    for (std::size_t m = i; m < j; ++m) {
      if (labels[order[m]]) twice_rank_sum += twice_rank;
    }
    i = j;
  }
  const double u = static_cast<double>(twice_rank_sum) / 2.0 -
                   static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Balanced accuracy: mean of the correct rate on OOD (true) and ID (false)
/// samples.
template <std::ranges::random_access_range Predicted, std::ranges::random_access_range Labels>
[[nodiscard]] double balanced_accuracy(const Predicted& predicted_range, const Labels& label_range) {
  const auto predicted = std::ranges::begin(predicted_range);
  const auto labels = std::ranges::begin(label_range);
  const auto n = static_cast<std::size_t>(std::ranges::size(predicted_range));
  if (n != static_cast<std::size_t>(std::ranges::size(label_range))) {
    throw Error(ErrorKind::length_mismatch, "accuracy: verdict and label counts differ");
  }
  if (n == 0) throw Error(ErrorKind::empty_input, "accuracy of no samples");
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i]) {
      ++pos;
      tp += predicted[i] ? 1 : 0;
    } else {
      ++neg;
      tn += predicted[i] ? 0 : 1;
    }
  }
  if (pos == 0 || neg == 0) {
    throw Error(ErrorKind::invalid_argument, "balanced accuracy is undefined with a single class");
  }
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

template <std::ranges::random_access_range Predicted, std::ranges::random_access_range Labels>
[[nodiscard]] double accuracy(const Predicted& predicted, const Labels& labels) {
  return balanced_accuracy(predicted, labels);
}

}  // namespace napmon
