#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "symlab/model.hpp"
#include "symlab/tasks.hpp"

namespace symlab {

struct WeightedHead {
  std::size_t layer = 0, head = 0;
  double weight = 1.0;
};

// ---- attention analyses ----

struct AttentionMap {
  Tensor map;  // [seq, seq], lower-triangular, weighted over heads
  std::vector<std::string> labels;
};

/// Weighted average over heads (weights normalized), mean over prompts.
/// All prompts must share one template length.
AttentionMap aggregate_attention(const Model& m, const std::vector<Prompt>& prompts,
                                 const std::vector<WeightedHead>& heads,
                                 const Vocab* vocab = nullptr);

/// Fraction of attention mass on the cells the three-stage mechanism
/// predicts: abstraction, from example-final items to the same-token
/// item earlier in the example; induction, from the final position to
/// the example-final items; retrieval, from the final position to the
/// query item holding the answer. Mean over query rows.
double attention_prediction_score(const AttentionMap& map, const Prompt& tmpl, Rule rule,
                                  TargetHeadType head_type);

// ---- representational similarity ----

enum class HypothesisKind { kAbstract, kToken, kWithinInstancePosition, kPreviousAbstract };

std::string hypothesis_name(HypothesisKind k);

/// One compared embedding: rows of one context's activations at
/// `positions`, averaged; hypothesis matrices compare the labels.
struct RsaItem {
  std::size_t context = 0;
  std::vector<std::size_t> positions;
  int variable = -1;       // abstract variable index
  int token = -1;          // token id
  int within_pos = -1;     // within-example item slot
  int prev_variable = -1;  // variable of the preceding item
};

/// Four contexts over one token set: ABA, ABA with the two query items
/// swapped, ABB (same tokens, roles swapped), ABB with query swapped.
/// In this order the abstract hypothesis forms two blocks and the token
/// hypothesis forms 3 diagonal bands.
struct RsaContexts {
  std::vector<Prompt> prompts;
  std::vector<AnswerSpec> answers;  // correct completion per context
};
RsaContexts make_rsa_contexts(const TaskConfig& cfg, TaskRng& rng);

enum class HeadComponent { kQuery, kKey, kValue, kOutput };

/// Items (with labels) for the four-context design, per App. B.4
/// position conventions: abstraction measures queries/outputs at the
/// in-context third items and keys/values at the first two items;
/// induction measures values at third items, outputs/queries at the
/// final position; retrieval measures queries/outputs at the final
/// position and keys/values at the query items.
std::vector<RsaItem> four_context_items(const RsaContexts& ctxs, TargetHeadType target,
                                        HeadComponent comp);

/// Length-4-rule design (AABA/ABCB/ABCC) dissociating the two induction
/// key/query hypotheses; items at the third and fourth in-context items.
struct Length4Design {
  std::vector<Prompt> prompts;  // one per rule
  std::vector<RsaItem> items;
};
Length4Design make_length4_design(const Vocab& vocab, std::size_t n_shots, TaskRng& rng);

/// Entries in {0,1}: 1 iff the kind's label matches; unit diagonal.
Tensor build_hypothesis_matrix(HypothesisKind kind, const std::vector<RsaItem>& items);

/// Cosine-similarity matrix of the item embeddings, averaged over token
/// sets, weighted over heads by max(weight, 0). `designs[t]` holds the
/// prompts for token set t; items index into each design's prompts.
Tensor empirical_similarity(const Model& m, const std::vector<std::vector<Prompt>>& designs,
                            const std::vector<RsaItem>& items,
                            const std::vector<WeightedHead>& heads, HeadComponent comp);

/// Pearson r over the strict lower triangle.
double rsa_correlation(const Tensor& empirical, const Tensor& hypothesis);

// ---- linear probes ----

struct ProbeSplits {
  std::vector<std::size_t> train, val, test;
};

struct ProbeReport {
  double train_acc = 0.0, val_acc = 0.0, test_acc = 0.0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  bool token_disjoint = false;
};

/// Logistic-regression probe on binary labels; selected on val across
/// epochs, reported on test. If sample_tokens is given, train/test
/// token sets must be disjoint.
ProbeReport linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeSplits& splits, std::uint64_t seed,
                         const std::vector<std::set<int>>* sample_tokens = nullptr);

// ---- error analysis ----

struct CorrectnessRsa {
  bool applicable = false;
  double r_correct = 0.0, r_error = 0.0;
  double p_value = 1.0;  // one-sided, for r_correct > r_error
};

/// Abstract-hypothesis RSA computed separately over correct and error
/// trials (per-trial similarity matrices), with a group-label
/// permutation test on the difference.
CorrectnessRsa rsa_by_correctness(const std::vector<Tensor>& sims_correct,
                                  const std::vector<Tensor>& sims_error, const Tensor& hypothesis,
                                  std::size_t n_permutations, std::uint64_t seed);

}  // namespace symlab
