#include "symlab/causal_aux.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace symlab {

namespace {

double correct_probability(const Tensor& final_logits, int answer_token) {
  // final_logits: [1, vocab] or last row of [seq, vocab]
  const std::size_t row = final_logits.rows() - 1;
  double mx = final_logits.at(row, 0);
  for (std::size_t t = 1; t < final_logits.cols(); ++t) mx = std::max(mx, final_logits.at(row, t));
  double z = 0.0;
  for (std::size_t t = 0; t < final_logits.cols(); ++t)
    z += std::exp(final_logits.at(row, t) - mx);
  return std::exp(final_logits.at(row, static_cast<std::size_t>(answer_token)) - mx) / z;
}

}  // namespace

double mean_correct_probability(const Model& m, const std::vector<EvalPrompt>& prompts,
                                const std::set<std::pair<std::size_t, std::size_t>>& ablate) {
  if (prompts.empty()) throw TensorError("mean_correct_probability: no prompts");
  double acc = 0.0;
  for (const EvalPrompt& p : prompts) {
    Tensor logits = m.forward_ablated_all(p.prompt.tokens, ablate);
    acc += correct_probability(logits, p.answer.tokens.front());
  }
  return acc / static_cast<double>(prompts.size());
}

AblationReport cumulative_ablation(const Model& m, const std::vector<EvalPrompt>& prompts,
                                   const Tensor& scores, AblationCondition condition,
                                   std::size_t max_heads, std::size_t random_runs,
                                   std::uint64_t seed) {
  const std::size_t n_layers = m.config().n_layers;
  const std::size_t n_heads = m.config().n_heads;
  if (scores.rows() != n_layers || scores.cols() != n_heads)
    throw TensorError("cumulative_ablation: score shape mismatch");
  const std::size_t total = n_layers * n_heads;
  if (max_heads == 0) max_heads = total;
  if (max_heads > total) throw TensorError("cumulative_ablation: h exceeds head count");

  // descending score order, ties broken by head index for determinism
  std::vector<std::pair<std::size_t, std::size_t>> ranked;
  for (std::size_t l = 0; l < n_layers; ++l)
    for (std::size_t h = 0; h < n_heads; ++h) ranked.emplace_back(l, h);
  std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    return scores.at(a.first, a.second) > scores.at(b.first, b.second);
  });

  AblationReport rep;
  rep.condition = condition;
  rep.random_runs = condition == AblationCondition::kRandom ? random_runs : 1;
  rep.curve.push_back(mean_correct_probability(m, prompts, {}));
  rep.std_dev.push_back(0.0);
  rep.ablated_sets.emplace_back();  // h == 0: nothing ablated

  std::mt19937_64 rng(seed);
  for (std::size_t h = 1; h <= max_heads; ++h) {
    std::vector<std::set<std::pair<std::size_t, std::size_t>>> sets;
    switch (condition) {
      case AblationCondition::kRanked:
        sets.push_back({ranked.begin(), ranked.begin() + static_cast<long>(h)});
        break;
      case AblationCondition::kControl: {
        // per layer of the top-h ranked heads, substitute that layer's
        // lowest-scored heads
        std::vector<std::size_t> need(n_layers, 0);
        for (std::size_t i = 0; i < h; ++i) ++need[ranked[i].first];
        std::set<std::pair<std::size_t, std::size_t>> s;
        for (std::size_t l = 0; l < n_layers; ++l) {
          if (need[l] == 0) continue;
          std::vector<std::size_t> order(n_heads);
          std::iota(order.begin(), order.end(), 0);
          std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores.at(l, a) < scores.at(l, b);
          });
          for (std::size_t i = 0; i < need[l]; ++i) s.emplace(l, order[i]);
        }
        sets.push_back(std::move(s));
        break;
      }
      case AblationCondition::kRandom:
        for (std::size_t run = 0; run < random_runs; ++run) {
          std::vector<std::size_t> order(total);
          std::iota(order.begin(), order.end(), 0);
          std::shuffle(order.begin(), order.end(), rng);
          std::set<std::pair<std::size_t, std::size_t>> s;
          for (std::size_t i = 0; i < h; ++i) s.emplace(order[i] / n_heads, order[i] % n_heads);
          sets.push_back(std::move(s));
        }
        break;
    }
    std::vector<double> probs;
    for (const auto& s : sets) probs.push_back(mean_correct_probability(m, prompts, s));
    const double mean = std::accumulate(probs.begin(), probs.end(), 0.0) /
                        static_cast<double>(probs.size());
    double var = 0.0;
    for (double p : probs) var += (p - mean) * (p - mean);
    rep.curve.push_back(mean);
    rep.std_dev.push_back(probs.size() > 1 ? std::sqrt(var / static_cast<double>(probs.size()))
                                           : 0.0);
    rep.ablated_sets.push_back(std::move(sets));
  }
  return rep;
}

namespace {

std::vector<int> random_token_sequence(const Model& m, std::mt19937_64& rng,
                                       std::size_t n_tokens) {
  // reserved ids 0..6 are control tokens; sample distinct content ids
  const int lo = Vocab::kReserved;
  const int hi = static_cast<int>(m.config().vocab_size);
  if (hi - lo < static_cast<int>(n_tokens))
    throw TensorError("prefix matching: vocabulary too small for unique sequence");
  std::vector<int> pool;
  for (int t = lo; t < hi; ++t) pool.push_back(t);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(n_tokens);
  return pool;
}

}  // namespace

Tensor prefix_matching_score(const Model& m, std::uint64_t seed, std::size_t n_tokens,
                             std::size_t n_seeds) {
  const std::size_t n = n_tokens;
  if (2 * n + 1 > m.config().max_seq_len)
    throw TensorError("prefix_matching_score: context too short for repeated sequence");
  Tensor out({m.config().n_layers, m.config().n_heads});
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    std::vector<int> toks = random_token_sequence(m, rng, n);
    std::vector<int> prompt = {Vocab::kBos};
    prompt.insert(prompt.end(), toks.begin(), toks.end());
    prompt.insert(prompt.end(), toks.begin(), toks.end());
    ActivationCache cache;
    m.forward_with_cache(prompt, cache);
    for (std::size_t l = 0; l < m.config().n_layers; ++l)
      for (std::size_t h = 0; h < m.config().n_heads; ++h) {
        const Tensor& pat = cache.layers[l].patterns[h];
        double acc = 0.0;
        for (std::size_t p = n + 1; p <= 2 * n; ++p)
          acc += pat.at(p, p - n + 1);  // position after the previous instance
        out.at(l, h) += acc / static_cast<double>(n);
      }
  }
  for (double& v : out.data) v /= static_cast<double>(n_seeds);
  return out;
}

double repeated_sequence_accuracy(const Model& m, std::uint64_t seed, std::size_t n_tokens) {
  const std::size_t n = n_tokens;
  std::mt19937_64 rng(seed);
  std::vector<int> toks = random_token_sequence(m, rng, n);
  std::vector<int> prompt = {Vocab::kBos};
  prompt.insert(prompt.end(), toks.begin(), toks.end());
  prompt.insert(prompt.end(), toks.begin(), toks.end());
  Tensor all = m.forward_all(prompt);
  std::size_t correct = 0, count = 0;
  for (std::size_t p = n + 1; p < 2 * n; ++p) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < all.cols(); ++t)
      if (all.at(p, t) > all.at(p, best)) best = t;
    if (static_cast<int>(best) == prompt[p + 1]) ++correct;
    ++count;
  }
  return static_cast<double>(correct) / static_cast<double>(count);
}

FunctionVectorReport function_vector_aie(const Model& m, const std::vector<EvalPrompt>& prompts,
                                         FvPositionMode mode, std::uint64_t seed) {
  if (prompts.empty()) throw TensorError("function_vector_aie: no prompts");
  const std::size_t n_layers = m.config().n_layers;
  const std::size_t n_heads = m.config().n_heads;
  const std::size_t seq = prompts.front().prompt.size();
  const std::size_t dh = m.config().d_head;

  const std::vector<std::size_t> positions =
      mode == FvPositionMode::kFinalPosition
          ? std::vector<std::size_t>{prompts.front().prompt.final_position()}
          : prompts.front().prompt.example_final_positions();
  if (positions.empty()) throw TensorError("function_vector_aie: no target positions");

  // mean clean head outputs at the target positions, per head
  std::vector<std::vector<Tensor>> mean_out(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l)
    mean_out[l].assign(n_heads, Tensor({seq, dh}));
  for (const EvalPrompt& p : prompts) {
    if (p.prompt.size() != seq) throw TensorError("function_vector_aie: template mismatch");
    ActivationCache cache;
    m.forward_with_cache(p.prompt.tokens, cache);
    for (std::size_t l = 0; l < n_layers; ++l)
      for (std::size_t h = 0; h < n_heads; ++h)
        for (std::size_t pos : positions)
          for (std::size_t c = 0; c < dh; ++c)
            mean_out[l][h].at(pos, c) += cache.layers[l].head_outputs[h].at(pos, c);
  }
  for (std::size_t l = 0; l < n_layers; ++l)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (double& v : mean_out[l][h].data) v /= static_cast<double>(prompts.size());

  // synthetic source cache carrying the mean activations
  ActivationCache mean_cache;
  mean_cache.layers.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) mean_cache.layers[l].head_outputs = mean_out[l];

  std::mt19937_64 rng(seed);
  FunctionVectorReport rep;
  rep.position_mode = mode;
  rep.n_prompts = prompts.size();
  rep.aie = Tensor({n_layers, n_heads});

  for (const EvalPrompt& p : prompts) {
    // corrupt: shuffle the in-context example answers until changed
    std::vector<std::size_t> ans_pos = p.prompt.example_final_positions();
    if (ans_pos.size() < 2)
      throw TensorError("function_vector_aie: need >= 2 in-context examples");
    std::vector<int> corrupted = p.prompt.tokens;
    std::vector<int> answers;
    for (std::size_t a : ans_pos) answers.push_back(corrupted[a]);
    do {
      std::shuffle(answers.begin(), answers.end(), rng);
      bool same = true;
      for (std::size_t i = 0; i < ans_pos.size(); ++i)
        if (corrupted[ans_pos[i]] != answers[i]) same = false;
      if (!same) break;
    } while (true);
    for (std::size_t i = 0; i < ans_pos.size(); ++i) corrupted[ans_pos[i]] = answers[i];

    const double p_corrupt =
        correct_probability(m.forward(corrupted), p.answer.tokens.front());
    for (std::size_t l = 0; l < n_layers; ++l)
      for (std::size_t h = 0; h < n_heads; ++h) {
        HookSite site{l, Component::kHeadOutput, h, {positions.begin(), positions.end()}};
        Tensor logits = m.forward_with_patch(corrupted, mean_cache, {site});
        rep.aie.at(l, h) +=
            correct_probability(logits, p.answer.tokens.front()) - p_corrupt;
      }
  }
  for (double& v : rep.aie.data) v /= static_cast<double>(prompts.size());
  return rep;
}

ScoreCorrelation score_correlation(const Tensor& a, const Tensor& b, std::size_t n_permutations,
                                   std::uint64_t seed) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw TensorError("score_correlation: shape mismatch");
  const std::size_t n = a.data.size();
  auto pearson = [n](const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw TensorError("score_correlation: zero variance");
    return sxy / std::sqrt(sxx * syy);
  };

  ScoreCorrelation out;
  out.r = pearson(a.data, b.data);
  std::mt19937_64 rng(seed);
  std::vector<double> shuffled = b.data;
  std::size_t ge = 0;
  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (std::abs(pearson(a.data, shuffled)) >= std::abs(out.r)) ++ge;
  }
  out.p_value = static_cast<double>(ge + 1) / static_cast<double>(n_permutations + 1);
  return out;
}

}  // namespace symlab
