#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "symlab/model.hpp"
#include "symlab/tasks.hpp"

namespace symlab {

enum class AblationCondition { kRanked, kControl, kRandom };

struct AblationReport {
  AblationCondition condition = AblationCondition::kRanked;
  /// curve[h] = mean correct-answer probability with h heads ablated
  /// (curve[0] is the unablated baseline).
  std::vector<double> curve;
  std::vector<double> std_dev;  // per h; nonzero only for kRandom
  std::size_t random_runs = 0;
  /// ablated_sets[h] holds the head sets ablated at step h, one per run;
  /// ablated_sets[0] is empty (aligned with curve[0], the baseline).
  std::vector<std::vector<std::set<std::pair<std::size_t, std::size_t>>>> ablated_sets;
};

struct EvalPrompt {
  Prompt prompt;
  AnswerSpec answer;
};

/// Softmax probability of the (first) correct-answer token at the final
/// position, averaged over prompts.
double mean_correct_probability(const Model& m, const std::vector<EvalPrompt>& prompts,
                                const std::set<std::pair<std::size_t, std::size_t>>& ablate);

/// Cumulative zero-ablation in descending order of `scores` (layers x
/// heads). Control ablates, at each step h, the lowest-scored heads
/// drawn from the same layers as the top-h ranked heads. Random ablates
/// h uniform heads over `random_runs` runs and reports the std.
AblationReport cumulative_ablation(const Model& m, const std::vector<EvalPrompt>& prompts,
                                   const Tensor& scores, AblationCondition condition,
                                   std::size_t max_heads = 0, std::size_t random_runs = 10,
                                   std::uint64_t seed = 0);

/// Prefix-matching score per head: attention from each token in the
/// second repeat of a 50-token random sequence to the position directly
/// after the previous occurrence of the same token; averaged over
/// `n_seeds` random sequences. Rows are layers, columns heads.
Tensor prefix_matching_score(const Model& m, std::uint64_t seed = 0, std::size_t n_tokens = 50,
                             std::size_t n_seeds = 4);

/// Greedy continuation accuracy on the second repeat of a random
/// sequence (literal-copy diagnostic).
double repeated_sequence_accuracy(const Model& m, std::uint64_t seed = 0,
                                  std::size_t n_tokens = 50);

enum class FvPositionMode { kFinalPosition, kThirdItem };

struct FunctionVectorReport {
  FvPositionMode position_mode = FvPositionMode::kFinalPosition;
  Tensor aie;  // layers x heads
  std::size_t n_prompts = 0;
};

/// Function-vector average indirect effect. For each prompt, in-context
/// answers are shuffled to corrupt the rule; CIE(head) is the gain in
/// correct-answer probability from patching the head's output at the
/// mode's positions with its mean clean activation.
FunctionVectorReport function_vector_aie(const Model& m, const std::vector<EvalPrompt>& prompts,
                                         FvPositionMode mode, std::uint64_t seed);

struct ScoreCorrelation {
  double r = 0.0;
  double p_value = 1.0;  // two-sided, permutation over head labels
};

/// Pearson r between two flattened head-score matrices with a
/// permutation p-value over head-label shuffles.
ScoreCorrelation score_correlation(const Tensor& a, const Tensor& b,
                                   std::size_t n_permutations = 10000, std::uint64_t seed = 0);

}  // namespace symlab
