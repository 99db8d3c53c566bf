#include "symlab/repr.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace symlab {

namespace {

double safe_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return (na == nb) ? 1.0 : 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

AttentionMap aggregate_attention(const Model& m, const std::vector<Prompt>& prompts,
                                 const std::vector<WeightedHead>& heads, const Vocab* vocab) {
  if (prompts.empty()) throw TensorError("aggregate_attention: no prompts");
  if (heads.empty()) throw TensorError("aggregate_attention: no heads");
  const std::size_t seq = prompts.front().size();
  double wsum = 0.0;
  for (const auto& h : heads) wsum += std::max(h.weight, 0.0);
  if (wsum <= 0.0) throw TensorError("aggregate_attention: no positive head weights");

  AttentionMap out;
  out.map = Tensor({seq, seq});
  for (const Prompt& p : prompts) {
    if (p.size() != seq) throw TensorError("aggregate_attention: template mismatch");
    ActivationCache cache;
    m.forward_with_cache(p.tokens, cache);
    for (const auto& h : heads) {
      const double w = std::max(h.weight, 0.0) / wsum;
      if (w == 0.0) continue;
      const Tensor& pat = cache.layers[h.layer].patterns[h.head];
      for (std::size_t i = 0; i < seq * seq; ++i) out.map.data[i] += w * pat.data[i];
    }
  }
  for (double& v : out.map.data) v /= static_cast<double>(prompts.size());
  if (vocab) {
    for (int t : prompts.front().tokens)
      out.labels.push_back(t == Vocab::kBos ? "<bos>" : vocab->str(t));
  }
  return out;
}

namespace {

/// Item position of a given slot within a given example, or npos.
std::vector<std::size_t> slot_positions(const Prompt& p, int example, int slot) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.annotations.size(); ++i)
    if (p.annotations[i].example_index == example && p.annotations[i].within_example_position == slot)
      out.push_back(i);
  return out;
}

int n_examples(const Prompt& p) {
  int n = 0;
  for (const auto& a : p.annotations) n = std::max(n, a.example_index + 1);
  return n;
}

}  // namespace

double attention_prediction_score(const AttentionMap& map, const Prompt& tmpl, Rule rule,
                                  TargetHeadType head_type) {
  const std::vector<int> roles = rule_roles(rule);
  const int last_slot = static_cast<int>(roles.size());
  // slot holding the same variable as the final item, earlier in the example
  int match_slot = 0;
  for (int s = 0; s < last_slot - 1; ++s)
    if (roles[static_cast<std::size_t>(s)] == roles.back()) match_slot = s + 1;
  const int nex = n_examples(tmpl);

  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> cells;
  switch (head_type) {
    case TargetHeadType::kAbstraction:
      for (int e = 0; e < nex - 1; ++e) {
        auto q = slot_positions(tmpl, e, last_slot);
        if (q.size() != 1) throw TensorError("attention_prediction_score: bad template");
        cells.emplace_back(q.front(), slot_positions(tmpl, e, match_slot));
      }
      break;
    case TargetHeadType::kSymbolicInduction: {
      std::vector<std::size_t> keys;
      for (int e = 0; e < nex - 1; ++e) {
        auto s3 = slot_positions(tmpl, e, last_slot);
        keys.insert(keys.end(), s3.begin(), s3.end());
      }
      cells.emplace_back(tmpl.final_position(), keys);
      break;
    }
    case TargetHeadType::kRetrieval:
      cells.emplace_back(tmpl.final_position(), slot_positions(tmpl, nex - 1, match_slot));
      break;
  }

  double score = 0.0;
  for (const auto& [q, keys] : cells) {
    double mass = 0.0;
    for (std::size_t k : keys) mass += map.map.at(q, k);
    score += mass;
  }
  return score / static_cast<double>(cells.size());
}

std::string hypothesis_name(HypothesisKind k) {
  switch (k) {
    case HypothesisKind::kAbstract: return "abstract";
    case HypothesisKind::kToken: return "token";
    case HypothesisKind::kWithinInstancePosition: return "within_instance_position";
    case HypothesisKind::kPreviousAbstract: return "previous_abstract";
  }
  return "?";
}

RsaContexts make_rsa_contexts(const TaskConfig& cfg, TaskRng& rng) {
  TaskConfig base = cfg;
  base.rule = Rule::kABA;
  ContextPair pair = make_abstract_pair(base, rng);
  const std::vector<std::size_t> qp = pair.c1.query_item_positions();
  if (qp.size() != 2) throw TensorError("make_rsa_contexts: expected 2 query items");

  auto swap_query = [&](const Prompt& p) {
    Prompt s = p;
    std::swap(s.tokens[qp[0]], s.tokens[qp[1]]);
    return s;
  };
  auto tok_answer = [&](const Prompt& p, std::size_t pos) {
    return AnswerSpec{{p.tokens[pos]}, cfg.vocab->str(p.tokens[pos])};
  };

  RsaContexts out;
  out.prompts = {pair.c1, swap_query(pair.c1), pair.c2, swap_query(pair.c2)};
  // ABA completes with the first query item, ABB with the second
  out.answers = {tok_answer(pair.c1, qp[0]), tok_answer(swap_query(pair.c1), qp[0]),
                 tok_answer(pair.c2, qp[1]), tok_answer(swap_query(pair.c2), qp[1])};
  return out;
}

std::vector<RsaItem> four_context_items(const RsaContexts& ctxs, TargetHeadType target,
                                        HeadComponent comp) {
  std::vector<RsaItem> items;
  const std::size_t n_ctx = ctxs.prompts.size();
  // contexts 0,1 share the ABA rule; 2,3 the ABB rule
  auto ctx_rule = [](std::size_t c) { return c < 2 ? Rule::kABA : Rule::kABB; };

  const bool per_item =
      (target == TargetHeadType::kAbstraction &&
       (comp == HeadComponent::kKey || comp == HeadComponent::kValue)) ||
      (target == TargetHeadType::kRetrieval &&
       (comp == HeadComponent::kKey || comp == HeadComponent::kValue));

  for (std::size_t c = 0; c < n_ctx; ++c) {
    const Prompt& p = ctxs.prompts[c];
    const std::vector<int> roles = rule_roles(ctx_rule(c));
    const int nex = n_examples(p);
    if (per_item) {
      // one item per (context, slot) over the first two variable slots
      const bool query_example = target == TargetHeadType::kRetrieval;
      for (int slot = 1; slot <= 2; ++slot) {
        RsaItem it;
        it.context = c;
        const int ex = query_example ? nex - 1 : 0;
        it.positions = slot_positions(p, ex, slot);
        if (it.positions.empty()) throw TensorError("four_context_items: missing slot");
        it.variable = roles[static_cast<std::size_t>(slot - 1)];
        it.token = p.tokens[it.positions.front()];
        it.within_pos = slot;
        it.prev_variable = slot >= 2 ? roles[static_cast<std::size_t>(slot - 2)] : -1;
        items.push_back(it);
      }
      continue;
    }
    RsaItem it;
    it.context = c;
    if (target == TargetHeadType::kAbstraction ||
        (target == TargetHeadType::kSymbolicInduction &&
         (comp == HeadComponent::kKey || comp == HeadComponent::kValue))) {
      // third items of the in-context examples, averaged
      it.positions = p.example_final_positions();
      it.within_pos = static_cast<int>(roles.size());
    } else {
      it.positions = {p.final_position()};
      it.within_pos = 0;
    }
    it.variable = roles.back();
    it.token = ctxs.answers[c].tokens.front();
    it.prev_variable = roles[roles.size() - 2];
    items.push_back(it);
  }
  return items;
}

Length4Design make_length4_design(const Vocab& vocab, std::size_t n_shots, TaskRng& rng) {
  Length4Design out;
  std::size_t ctx = 0;
  for (Rule r : {Rule::kAABA, Rule::kABCB, Rule::kABCC}) {
    TaskConfig cfg;
    cfg.rule = r;
    cfg.n_shots = n_shots;
    cfg.vocab = &vocab;
    Prompt p = make_identity_prompt(cfg, rng).first;
    const std::vector<int> roles = rule_roles(r);
    for (int slot : {3, 4}) {
      RsaItem it;
      it.context = ctx;
      for (int e = 0; e < static_cast<int>(n_shots); ++e) {
        auto sp = slot_positions(p, e, slot);
        it.positions.insert(it.positions.end(), sp.begin(), sp.end());
      }
      it.variable = roles[static_cast<std::size_t>(slot - 1)];
      it.prev_variable = roles[static_cast<std::size_t>(slot - 2)];
      it.within_pos = slot;
      out.items.push_back(it);
    }
    out.prompts.push_back(std::move(p));
    ++ctx;
  }
  return out;
}

Tensor build_hypothesis_matrix(HypothesisKind kind, const std::vector<RsaItem>& items) {
  const std::size_t k = items.size();
  Tensor m({k, k});
  auto label = [&](const RsaItem& it) {
    switch (kind) {
      case HypothesisKind::kAbstract: return it.variable;
      case HypothesisKind::kToken: return it.token;
      case HypothesisKind::kWithinInstancePosition: return it.within_pos;
      case HypothesisKind::kPreviousAbstract: return it.prev_variable;
    }
    throw TensorError("build_hypothesis_matrix: unknown kind");
  };
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      m.at(i, j) = (i == j || label(items[i]) == label(items[j])) ? 1.0 : 0.0;
  return m;
}

Tensor empirical_similarity(const Model& m, const std::vector<std::vector<Prompt>>& designs,
                            const std::vector<RsaItem>& items,
                            const std::vector<WeightedHead>& heads, HeadComponent comp) {
  if (designs.empty()) throw TensorError("empirical_similarity: no token sets");
  if (heads.empty()) throw TensorError("empirical_similarity: no heads");
  const std::size_t k = items.size();
  double wsum = 0.0;
  for (const auto& h : heads) wsum += std::max(h.weight, 0.0);
  if (wsum <= 0.0) throw TensorError("empirical_similarity: no positive head weights");

  Tensor acc({k, k});
  for (const auto& prompts : designs) {
    // cache every context once per token set
    std::vector<ActivationCache> caches(prompts.size());
    for (std::size_t c = 0; c < prompts.size(); ++c)
      m.forward_with_cache(prompts[c].tokens, caches[c]);

    for (const auto& h : heads) {
      const double w = std::max(h.weight, 0.0) / wsum;
      if (w == 0.0) continue;
      std::vector<std::vector<double>> emb(k);
      for (std::size_t i = 0; i < k; ++i) {
        const RsaItem& it = items[i];
        if (it.context >= caches.size())
          throw TensorError("empirical_similarity: item context out of range");
        const LayerCache& lc = caches[it.context].layers[h.layer];
        const Tensor* src = nullptr;
        switch (comp) {
          case HeadComponent::kQuery: src = &lc.queries[h.head]; break;
          case HeadComponent::kKey: src = &lc.keys[h.head]; break;
          case HeadComponent::kValue: src = &lc.values[h.head]; break;
          case HeadComponent::kOutput: src = &lc.head_outputs[h.head]; break;
        }
        const std::size_t d = src->cols();
        emb[i].assign(d, 0.0);
        for (std::size_t p : it.positions)
          for (std::size_t c = 0; c < d; ++c) emb[i][c] += src->at(p, c);
        for (double& v : emb[i]) v /= static_cast<double>(it.positions.size());
      }
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
          acc.at(i, j) += w * safe_cosine(emb[i], emb[j]) / static_cast<double>(designs.size());
    }
  }
  return acc;
}

double rsa_correlation(const Tensor& empirical, const Tensor& hypothesis) {
  if (empirical.rows() != hypothesis.rows() || empirical.cols() != hypothesis.cols())
    throw TensorError("rsa_correlation: shape mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 1; i < empirical.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      a.push_back(empirical.at(i, j));
      b.push_back(hypothesis.at(i, j));
    }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw TensorError("rsa_correlation: zero variance");
  return sab / std::sqrt(saa * sbb);
}

namespace {

double probe_accuracy(const Tensor& x, const std::vector<int>& y,
                      const std::vector<std::size_t>& idx, const std::vector<double>& w, double b) {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    double z = b;
    for (std::size_t c = 0; c < x.cols(); ++c) z += w[c] * x.at(i, c);
    if ((z > 0.0) == (y[i] == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

ProbeReport linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeSplits& splits, std::uint64_t seed,
                         const std::vector<std::set<int>>* sample_tokens) {
  if (features.rows() != labels.size()) throw TensorError("linear_probe: label count mismatch");
  for (int l : labels)
    if (l != 0 && l != 1) throw TensorError("linear_probe: labels must be 0/1");

  ProbeReport rep;
  if (sample_tokens) {
    std::set<int> train_toks, test_toks;
    for (std::size_t i : splits.train)
      train_toks.insert((*sample_tokens)[i].begin(), (*sample_tokens)[i].end());
    for (std::size_t i : splits.test)
      test_toks.insert((*sample_tokens)[i].begin(), (*sample_tokens)[i].end());
    for (int t : test_toks)
      if (train_toks.count(t))
        throw TensorError("linear_probe: train/test token sets overlap (token " +
                          std::to_string(t) + ")");
    rep.token_disjoint = true;
  }

  const std::size_t d = features.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 0.01);
  std::vector<double> w(d);
  for (double& v : w) v = init(rng);
  double b = 0.0;

  std::vector<double> best_w = w;
  double best_b = b, best_val = -1.0;
  const double lr = 0.5;
  const std::size_t epochs = 300;
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(splits.train.size(), 1));
  std::vector<double> gw(d);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i : splits.train) {
      double z = b;
      for (std::size_t c = 0; c < d; ++c) z += w[c] * features.at(i, c);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - static_cast<double>(labels[i]);
      for (std::size_t c = 0; c < d; ++c) gw[c] += err * features.at(i, c);
      gb += err;
    }
    for (std::size_t c = 0; c < d; ++c) w[c] -= lr * inv_n * gw[c];
    b -= lr * inv_n * gb;
    const double val = probe_accuracy(features, labels, splits.val, w, b);
    if (val > best_val) {
      best_val = val;
      best_w = w;
      best_b = b;
    }
  }

  rep.train_acc = probe_accuracy(features, labels, splits.train, best_w, best_b);
  rep.val_acc = best_val;
  rep.test_acc = probe_accuracy(features, labels, splits.test, best_w, best_b);
  rep.n_train = splits.train.size();
  rep.n_val = splits.val.size();
  rep.n_test = splits.test.size();
  return rep;
}

namespace {

Tensor mean_matrix(const std::vector<const Tensor*>& group) {
  Tensor m({group.front()->rows(), group.front()->cols()});
  for (const Tensor* t : group)
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += t->data[i];
  for (double& v : m.data) v /= static_cast<double>(group.size());
  return m;
}

}  // namespace

CorrectnessRsa rsa_by_correctness(const std::vector<Tensor>& sims_correct,
                                  const std::vector<Tensor>& sims_error, const Tensor& hypothesis,
                                  std::size_t n_permutations, std::uint64_t seed) {
  CorrectnessRsa out;
  if (sims_correct.empty() || sims_error.empty()) return out;  // not applicable
  out.applicable = true;

  std::vector<const Tensor*> pool;
  for (const Tensor& t : sims_correct) pool.push_back(&t);
  for (const Tensor& t : sims_error) pool.push_back(&t);
  const std::size_t nc = sims_correct.size();

  auto stat = [&](const std::vector<const Tensor*>& p) {
    std::vector<const Tensor*> a(p.begin(), p.begin() + static_cast<long>(nc));
    std::vector<const Tensor*> b(p.begin() + static_cast<long>(nc), p.end());
    return std::pair<double, double>{rsa_correlation(mean_matrix(a), hypothesis),
                                     rsa_correlation(mean_matrix(b), hypothesis)};
  };
  auto [rc, re] = stat(pool);
  out.r_correct = rc;
  out.r_error = re;
  const double observed = rc - re;

  std::mt19937_64 rng(seed);
  std::size_t ge = 0;
  std::vector<const Tensor*> perm = pool;
  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto [prc, pre] = stat(perm);
    if (prc - pre >= observed) ++ge;
  }
  out.p_value = static_cast<double>(ge + 1) / static_cast<double>(n_permutations + 1);
  return out;
}

}  // namespace symlab
