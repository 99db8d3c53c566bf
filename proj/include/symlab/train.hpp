#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "symlab/model.hpp"
#include "symlab/tasks.hpp"

namespace symlab {

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t warmup = 500;  // linear warmup steps
  double weight_decay = 0.0;
  std::vector<std::pair<Rule, double>> mixture = {{Rule::kABA, 0.5}, {Rule::kABB, 0.5}};
  std::size_t n_shots = 2;
  std::size_t eval_every = 500;
  std::size_t eval_prompts = 200;
  std::uint64_t seed = 0;
  double target_accuracy = 0.9;
  /// Cross-entropy at the answer position only; false trains full LM loss.
  bool answer_only = true;
  /// Freeze token embeddings at their random init. With tied
  /// embeddings this makes train-pool and held-out tokens exchangeable
  /// (held-out embeddings are never distorted by softmax suppression),
  /// which is what lets a learned copy circuit generalize to them.
  bool train_embeddings = true;
  /// Redraw frozen content-token embeddings every step (reserved
  /// scaffold rows stay fixed). Token vectors then carry no stable
  /// identity, so the only circuits that reduce the loss are
  /// content-independent ones — which is what transfers to held-out
  /// tokens. Requires train_embeddings == false. The model's original
  /// embedding is restored after training.
  bool resample_embeddings = false;

  void validate() const;
};

struct TrainMetrics {
  struct Row {
    std::size_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // NaN when not evaluated at this step
  };
  std::vector<Row> rows;
  bool reached_target = false;
  std::size_t final_step = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
};

/// Disjoint content-token pools for training and held-out evaluation.
struct PoolSplit {
  std::vector<int> train, held_out;
};
PoolSplit split_content_pool(const Vocab& vocab);

/// Adam with linear warmup on next-token cross-entropy over the task
/// mixture; evaluates on the held-out pool every eval_every steps and
/// stops early at target_accuracy. Throws on divergence (NaN loss).
/// Optionally appends "step,loss,accuracy" rows to metrics_csv.
TrainMetrics train(Model& m, const TrainConfig& cfg, const Vocab& vocab,
                   const std::string& metrics_csv = "");

enum class Scoring { kArgmax, kLogitComparison };

struct EvalItem {
  Prompt prompt;
  AnswerSpec answer;
  std::optional<AnswerSpec> foil;  // required for logit comparison
};

struct AccuracyReport {
  double accuracy = 0.0;
  double ci_low = 0.0, ci_high = 1.0;  // Wilson 95% interval
  std::size_t n = 0;
};

/// Accuracy over n_prompts drawn from the stream. Argmax scoring
/// requires every answer token to win greedily; logit comparison
/// requires the answer to outscore the foil.
AccuracyReport evaluate_accuracy(const Model& m, const std::function<EvalItem()>& stream,
                                 std::size_t n_prompts, Scoring scoring);

/// Wilson 95% binomial interval.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n);

}  // namespace symlab
