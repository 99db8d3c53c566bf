#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "symlab/model.hpp"
#include "symlab/tasks.hpp"

namespace symlab {

struct CmaConfig {
  std::size_t n_pairs = 200;  // per rule direction
  std::size_t n_permutations = 5000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  /// Drop pairs the model answers incorrectly in either context.
  bool filter_correct = true;
};

/// Per-trial causal mediation scores, one column per attention head.
struct HeadScores {
  std::size_t n_layers = 0, n_heads = 0;
  std::vector<std::vector<double>> trials;  // trials[t][layer * n_heads + head]

  std::size_t col(std::size_t layer, std::size_t head) const { return layer * n_heads + head; }
  std::vector<double> mean() const;
  void append(const HeadScores& other);
};

struct PermutationResult {
  double threshold = 0.0;  // (1 - alpha) quantile of the max-over-heads null
  std::vector<double> mean_scores;
  std::vector<char> significant;

  std::vector<std::pair<std::size_t, std::size_t>> significant_heads(std::size_t n_heads) const;
};

/// Causal mediation score of patching one head at the pair's positions:
/// s = (f(c1*)[y*] - f(c1*)[y]) - (f(c1)[y*] - f(c1)[y]). With
/// PatchMode::kSumPerPosition the per-position scores are summed.
double compute_cm_score(const Model& m, const ContextPair& pair, std::size_t layer,
                        std::size_t head);

/// Scores for every head on one pair, sharing the source cache and the
/// unpatched baseline across heads.
std::vector<double> cm_scores_all_heads(const Model& m, const ContextPair& pair);

/// Does the model produce y_c1 for c1 and y_c2 for c2 greedily?
bool pair_answered_correctly(const Model& m, const ContextPair& pair);

/// Runs n_pairs trials from the generator, optionally keeping only
/// correctly-answered pairs (topping up until n_pairs survive).
template <typename PairGen>
HeadScores collect_head_scores(const Model& m, const CmaConfig& cfg, PairGen&& gen) {
  HeadScores hs;
  hs.n_layers = m.config().n_layers;
  hs.n_heads = m.config().n_heads;
  std::size_t kept = 0, attempts = 0;
  const std::size_t max_attempts = cfg.n_pairs * 20 + 100;
  while (kept < cfg.n_pairs) {
    if (++attempts > max_attempts)
      throw TensorError("collect_head_scores: model too inaccurate to collect pairs");
    ContextPair pair = gen();
    if (cfg.filter_correct && !pair_answered_correctly(m, pair)) continue;
    hs.trials.push_back(cm_scores_all_heads(m, pair));
    ++kept;
  }
  return hs;
}

/// Sign-flip permutation test with flips shared across heads; one-sided,
/// family-wise corrected via the max-over-heads statistic.
PermutationResult permutation_test(const HeadScores& scores, std::size_t n_permutations,
                                   double alpha, std::uint64_t seed);

/// Mean CM score per (layer, position) from patching the attention
/// sublayer output (component kBlockOutput) or the MLP output
/// (kMlpOutput) at single positions. Rows are layers, columns positions.
Tensor scan_layer_position(const Model& m, const std::vector<ContextPair>& pairs,
                           Component component);

}  // namespace symlab
