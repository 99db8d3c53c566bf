#include "symlab/cma.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace symlab {

std::vector<double> HeadScores::mean() const {
  if (trials.empty()) throw TensorError("HeadScores::mean: no trials");
  std::vector<double> m(trials.front().size(), 0.0);
  for (const auto& t : trials)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += t[i];
  for (double& v : m) v /= static_cast<double>(trials.size());
  return m;
}

void HeadScores::append(const HeadScores& other) {
  if (n_layers == 0) {
    *this = other;
    return;
  }
  if (other.n_layers != n_layers || other.n_heads != n_heads)
    throw TensorError("HeadScores::append: shape mismatch");
  trials.insert(trials.end(), other.trials.begin(), other.trials.end());
}

std::vector<std::pair<std::size_t, std::size_t>> PermutationResult::significant_heads(
    std::size_t n_heads) const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < significant.size(); ++i)
    if (significant[i]) out.emplace_back(i / n_heads, i % n_heads);
  return out;
}

namespace {

struct PairContext {
  std::vector<int> c2_ext;   // c2 tokens plus teacher-forced answer prefix
  ActivationCache source;
  double base_diff = 0.0;    // f(c1)[y*] - f(c1)[y]
  bool single = false;       // both answers single-token
};

PairContext prepare_pair(const Model& m, const ContextPair& pair) {
  if (pair.y_c1.tokens.size() != pair.y_c1_star.tokens.size() ||
      pair.y_c1.tokens.size() != pair.y_c2.tokens.size())
    throw TensorError("cma: answer lengths must match within a pair");
  PairContext ctx;
  ctx.single = pair.y_c1.tokens.size() == 1;
  ctx.c2_ext = pair.c2.tokens;
  if (!ctx.single)
    ctx.c2_ext.insert(ctx.c2_ext.end(), pair.y_c2.tokens.begin(), pair.y_c2.tokens.end() - 1);
  m.forward_with_cache(ctx.c2_ext, ctx.source);
  ctx.base_diff = score_answer(m, pair.c1.tokens, pair.y_c1_star) -
                  score_answer(m, pair.c1.tokens, pair.y_c1);
  return ctx;
}

/// f(c1*)[y*] - f(c1*)[y] for one set of patch sites.
double patched_diff(const Model& m, const ContextPair& pair, const PairContext& ctx,
                    const std::vector<HookSite>& sites) {
  if (ctx.single) {
    Tensor logits = m.forward_with_patch(pair.c1.tokens, ctx.source, sites);
    return logits.at(0, static_cast<std::size_t>(pair.y_c1_star.tokens[0])) -
           logits.at(0, static_cast<std::size_t>(pair.y_c1.tokens[0]));
  }
  return score_answer(m, pair.c1.tokens, pair.y_c1_star, &ctx.source, &sites) -
         score_answer(m, pair.c1.tokens, pair.y_c1, &ctx.source, &sites);
}

double head_score(const Model& m, const ContextPair& pair, const PairContext& ctx,
                  std::size_t layer, std::size_t head) {
  if (pair.patch_mode == PatchMode::kSimultaneous) {
    HookSite site{layer, Component::kHeadOutput, head,
                  {pair.patch_positions.begin(), pair.patch_positions.end()}};
    return patched_diff(m, pair, ctx, {site}) - ctx.base_diff;
  }
  double s = 0.0;
  for (std::size_t p : pair.patch_positions) {
    HookSite site{layer, Component::kHeadOutput, head, {p}};
    s += patched_diff(m, pair, ctx, {site}) - ctx.base_diff;
  }
  return s;
}

}  // namespace

double compute_cm_score(const Model& m, const ContextPair& pair, std::size_t layer,
                        std::size_t head) {
  PairContext ctx = prepare_pair(m, pair);
  return head_score(m, pair, ctx, layer, head);
}

std::vector<double> cm_scores_all_heads(const Model& m, const ContextPair& pair) {
  PairContext ctx = prepare_pair(m, pair);
  std::vector<double> out;
  out.reserve(m.config().n_layers * m.config().n_heads);
  for (std::size_t l = 0; l < m.config().n_layers; ++l)
    for (std::size_t h = 0; h < m.config().n_heads; ++h)
      out.push_back(head_score(m, pair, ctx, l, h));
  return out;
}

namespace {

bool answers_greedily(const Model& m, const std::vector<int>& prompt, const AnswerSpec& answer) {
  std::vector<int> seq = prompt;
  for (int want : answer.tokens) {
    Tensor logits = m.forward(seq);
    std::size_t best = 0;
    for (std::size_t t = 1; t < logits.cols(); ++t)
      if (logits.at(0, t) > logits.at(0, best)) best = t;
    if (static_cast<int>(best) != want) return false;
    seq.push_back(want);
  }
  return true;
}

}  // namespace

bool pair_answered_correctly(const Model& m, const ContextPair& pair) {
  return answers_greedily(m, pair.c1.tokens, pair.y_c1) &&
         answers_greedily(m, pair.c2.tokens, pair.y_c2);
}

PermutationResult permutation_test(const HeadScores& scores, std::size_t n_permutations,
                                   double alpha, std::uint64_t seed) {
  if (scores.trials.empty()) throw TensorError("permutation_test: no trials");
  const std::size_t n_cols = scores.trials.front().size();
  const std::size_t n_trials = scores.trials.size();

  PermutationResult res;
  res.mean_scores = scores.mean();

  std::mt19937_64 rng(seed);
  std::vector<double> null_stats(n_permutations);
  std::vector<double> sums(n_cols);
  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t t = 0; t < n_trials; ++t) {
      // one flip per trial, shared across heads, preserving the
      // cross-head correlation structure under the null
      const double sign = (rng() & 1u) ? 1.0 : -1.0;
      const auto& row = scores.trials[t];
      for (std::size_t c = 0; c < n_cols; ++c) sums[c] += sign * row[c];
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_cols; ++c)
      mx = std::max(mx, sums[c] / static_cast<double>(n_trials));
    null_stats[p] = mx;
  }
  std::sort(null_stats.begin(), null_stats.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(n_permutations))) - 1;
  res.threshold = null_stats[std::min(idx, n_permutations - 1)];
  res.significant.resize(n_cols, 0);
  for (std::size_t c = 0; c < n_cols; ++c)
    res.significant[c] = res.mean_scores[c] > res.threshold ? 1 : 0;
  return res;
}

Tensor scan_layer_position(const Model& m, const std::vector<ContextPair>& pairs,
                           Component component) {
  if (pairs.empty()) throw TensorError("scan_layer_position: no pairs");
  if (component == Component::kHeadOutput)
    throw TensorError("scan_layer_position: use cm_scores_all_heads for head sites");
  const std::size_t n_layers = m.config().n_layers;
  const std::size_t seq = pairs.front().c1.size();
  Tensor out({n_layers, seq});
  for (const ContextPair& pair : pairs) {
    if (pair.c1.size() != seq) throw TensorError("scan_layer_position: pair lengths differ");
    PairContext ctx = prepare_pair(m, pair);
    for (std::size_t l = 0; l < n_layers; ++l)
      for (std::size_t p = 0; p < seq; ++p) {
        HookSite site{l, component, std::nullopt, {p}};
        out.at(l, p) += patched_diff(m, pair, ctx, {site}) - ctx.base_diff;
      }
  }
  for (double& v : out.data) v /= static_cast<double>(pairs.size());
  return out;
}

}  // namespace symlab
