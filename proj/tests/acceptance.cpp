// Acceptance gate: one pass/fail line per criterion, non-zero exit if
// any criterion fails. Criteria follow the project acceptance list; the
// wired three-stage oracle provides the known-ground-truth mechanism.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "symlab/causal_aux.hpp"
#include "symlab/cma.hpp"
#include "symlab/oracle.hpp"
#include "symlab/repr.hpp"
#include "symlab/report.hpp"
#include "symlab/tasks.hpp"
#include "symlab/train.hpp"

using namespace symlab;

namespace {

int g_failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int criterion, bool pass, const std::string& detail, double seconds) {
  std::printf("%s  criterion %2d  (%6.1fs)  %s\n", pass ? "PASS" : "FAIL", criterion, seconds,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

struct OracleLab {
  Vocab vocab = Vocab::synthetic(56);
  OracleHandles handles;
  Model model;
  OracleLab() { model = build_symbolic_oracle(OracleSpec{}, vocab, &handles); }

  TaskConfig cfg(Rule r) const {
    TaskConfig c;
    c.rule = r;
    c.vocab = &vocab;
    return c;
  }

  std::vector<EvalPrompt> eval_prompts(std::size_t n, std::uint64_t seed) const {
    std::vector<EvalPrompt> out;
    std::size_t dir = 0;
    for (Rule r : {Rule::kABA, Rule::kABB}) {
      TaskRng rng(seed + dir++);
      TaskConfig c = cfg(r);
      for (std::size_t i = 0; i < n / 2; ++i) {
        auto [p, a] = make_identity_prompt(c, rng);
        out.push_back({std::move(p), std::move(a)});
      }
    }
    return out;
  }
};

int argmax_row(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c)
    if (logits.at(0, c) > logits.at(0, best)) best = c;
  return static_cast<int>(best);
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& x : t.data) x = d(rng);
  return t;
}

// ---- criterion 1: gradient fidelity ----
void criterion_1() {
  Timer timer;
  double worst = 0.0;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 20 && ok; ++seed) {
    // every differentiable op against central finite differences
    Tensor x = random_tensor({3, 4}, 1000 + seed);
    auto end = [](const ad::Var& v) { return ad::sum_squares(v); };
    const Tensor w = random_tensor({4, 3}, 2000 + seed);
    const Tensor same = random_tensor({3, 4}, 3000 + seed);
    const std::vector<std::function<ad::Var(const ad::Var&)>> ops = {
        [&](const ad::Var& v) { return end(ad::matmul(v, ad::constant(w))); },
        [&](const ad::Var& v) { return end(ad::matmul_nt(v, ad::constant(same))); },
        [&](const ad::Var& v) { return end(ad::add(v, ad::constant(same))); },
        [&](const ad::Var& v) { return end(ad::sub(ad::constant(same), v)); },
        [&](const ad::Var& v) { return end(ad::mul(v, ad::constant(same))); },
        [&](const ad::Var& v) { return end(ad::scale(v, 1.7)); },
        [&](const ad::Var& v) { return end(ad::softmax_rows(v)); },
        // norms are projected onto a constant first; sum_squares of a
        // normalized row alone is (near-)constant with ~0 gradient
        [&](const ad::Var& v) { return end(ad::mul(ad::rmsnorm_rows(v), ad::constant(same))); },
        [&](const ad::Var& v) { return end(ad::mul(ad::layernorm_rows(v), ad::constant(same))); },
        [&](const ad::Var& v) { return end(ad::gelu(v)); },
        [&](const ad::Var& v) { return end(ad::slice_cols(v, 1, 2)); },
        [&](const ad::Var& v) { return end(ad::select_rows(v, {2, 0})); },
        [&](const ad::Var& v) { return end(ad::concat_cols({v, ad::constant(same)})); },
        [&](const ad::Var& v) { return end(ad::rotary(v, {0, 2, 5})); },
        [&](const ad::Var& v) { return ad::cross_entropy(v, {1, 0, 3}); },
    };
    for (const auto& op : ops) worst = std::max(worst, ad::grad_check(op, x));
    worst = std::max(
        worst, ad::grad_check([&](const ad::Var& v) { return end(ad::softmax_rows_causal(v)); },
                              random_tensor({4, 4}, 4000 + seed)));
    worst = std::max(
        worst, ad::grad_check([&](const ad::Var& v) { return end(ad::embedding(v, {1, 0, 2})); },
                              random_tensor({3, 4}, 5000 + seed)));
    worst = std::max(
        worst,
        ad::grad_check(
            [&](const ad::Var& v) { return end(ad::add_bias(ad::constant(same), v)); },
            random_tensor({1, 4}, 6000 + seed)));

    // full model loss against finite differences on sampled coordinates
    ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 12;
    mc.d_head = 6;
    mc.d_ff = 16;
    mc.vocab_size = 9;
    mc.max_seq_len = 8;
    mc.pos_encoding = seed % 2 ? PosEncoding::kRotary : PosEncoding::kLearnedAbsolute;
    Model m(mc, static_cast<long>(seed));
    const std::vector<int> prompt = {0, 3, 7, 2, 5};
    const std::vector<int> targets = {4};

    Model::VarWeights vw;
    std::vector<std::pair<Tensor*, ad::Var*>> tracked;
    auto track = [&](Tensor& t, ad::Var& var) {
      var = ad::leaf(t);
      tracked.push_back({&t, &var});
    };
    track(m.embed, vw.embed);
    if (mc.pos_encoding == PosEncoding::kLearnedAbsolute)
      track(m.pos, vw.pos);
    else
      vw.pos = ad::leaf(m.pos, false);
    track(m.unembed, vw.unembed);
    vw.layers.resize(mc.n_layers);
    for (std::size_t l = 0; l < mc.n_layers; ++l) {
      track(m.layers[l].wq, vw.layers[l].wq);
      track(m.layers[l].wk, vw.layers[l].wk);
      track(m.layers[l].wv, vw.layers[l].wv);
      track(m.layers[l].wo, vw.layers[l].wo);
      track(m.layers[l].mlp_in, vw.layers[l].mlp_in);
      track(m.layers[l].mlp_out, vw.layers[l].mlp_out);
    }
    ad::Var loss = ad::cross_entropy(
        ad::select_rows(m.forward_ad(prompt, vw), {prompt.size() - 1}), targets);
    ad::backward(loss);

    const double eps = 1e-5;
    for (auto [tensor, var] : tracked) {
      for (std::size_t i = seed % 7; i < tensor->data.size(); i += 23) {
        const double orig = tensor->data[i];
        tensor->data[i] = orig + eps;
        const double hi = kernels::cross_entropy_logits(m.forward(prompt), targets);
        tensor->data[i] = orig - eps;
        const double lo = kernels::cross_entropy_logits(m.forward(prompt), targets);
        tensor->data[i] = orig;
        const double fd = (hi - lo) / (2.0 * eps);
        const double an = (*var)->grad.data[i];
        worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}));
      }
    }
    ok = worst < 1e-4;
  }
  const double secs = timer.seconds();
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "gradient fidelity: max relative error %.2e over 20 seeds (limit 1e-4)", worst);
  report(1, ok && secs < 60.0, buf, secs);
}

// ---- criterion 2: oracle behavior ----
void criterion_2(const OracleLab& lab) {
  Timer timer;
  std::size_t correct = 0, total = 0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(r == Rule::kABA ? 101 : 102);
    TaskConfig cfg = lab.cfg(r);
    for (int i = 0; i < 1000; ++i) {
      auto [p, answer] = make_identity_prompt(cfg, rng);
      if (argmax_row(lab.model.forward(p.tokens)) == answer.tokens[0]) ++correct;
      ++total;
    }
  }
  const double secs = timer.seconds();
  char buf[160];
  std::snprintf(buf, sizeof buf, "oracle accuracy %zu/%zu on 2-shot ABA+ABB", correct, total);
  report(2, correct == total && secs < 60.0, buf, secs);
}

// ---- criterion 3: CMA flags exactly the wired heads ----
void criterion_3(const OracleLab& lab) {
  Timer timer;
  CmaConfig cc;
  cc.n_pairs = 200;
  cc.n_permutations = 5000;
  cc.alpha = 0.05;
  bool ok = true;
  std::string detail = "significant sets:";
  struct Scan {
    TargetHeadType target;
    std::pair<std::size_t, std::size_t> expect;
  };
  const Scan scans[] = {{TargetHeadType::kAbstraction, lab.handles.abstraction},
                        {TargetHeadType::kSymbolicInduction, lab.handles.induction},
                        {TargetHeadType::kRetrieval, lab.handles.retrieval}};
  for (const Scan& s : scans) {
    HeadScores scores;
    std::uint64_t dir = 0;
    for (Rule r : {Rule::kABA, Rule::kABB}) {
      TaskRng rng(200 + dir++);
      TaskConfig cfg = lab.cfg(r);
      scores.append(collect_head_scores(lab.model, cc, [&]() {
        return s.target == TargetHeadType::kRetrieval ? make_token_pair(cfg, rng)
                                                      : make_abstract_pair(cfg, rng, s.target);
      }));
    }
    PermutationResult res = permutation_test(scores, cc.n_permutations, cc.alpha, 777);
    auto sig = res.significant_heads(lab.model.config().n_heads);
    const bool exact = sig.size() == 1 && sig[0] == s.expect;
    ok = ok && exact;
    detail += " " + target_name(s.target) + "=" + std::to_string(sig.size()) +
              (exact ? "(correct)" : "(WRONG)");
  }
  const double secs = timer.seconds();
  report(3, ok && secs < 600.0, detail + " over 200 pairs/direction, 5000 permutations", secs);
}

// ---- criterion 4: layer x position scan structure ----
void criterion_4(const OracleLab& lab) {
  Timer timer;
  std::vector<ContextPair> abs_pairs, tok_pairs;
  std::uint64_t dir = 0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(300 + dir++);
    TaskConfig cfg = lab.cfg(r);
    for (int i = 0; i < 50; ++i) {
      abs_pairs.push_back(make_abstract_pair(cfg, rng));
      tok_pairs.push_back(make_token_pair(cfg, rng));
    }
  }
  Tensor abs_scan = scan_layer_position(lab.model, abs_pairs, Component::kBlockOutput);
  Tensor tok_scan = scan_layer_position(lab.model, tok_pairs, Component::kBlockOutput);

  bool ok = true;
  double worst_off = 0.0;
  const std::set<std::size_t> stage1(lab.handles.example_final_positions.begin(),
                                     lab.handles.example_final_positions.end());
  for (std::size_t l = 0; l < abs_scan.rows(); ++l)
    for (std::size_t p = 0; p < abs_scan.cols(); ++p) {
      const bool expected =
          (l == 0 && stage1.count(p)) || (l == 1 && p == lab.handles.final_position);
      if (expected)
        ok = ok && abs_scan.at(l, p) > 1.0;
      else
        worst_off = std::max(worst_off, std::abs(abs_scan.at(l, p)));
      const bool tok_expected = l == 2 && p == lab.handles.final_position;
      if (tok_expected)
        ok = ok && tok_scan.at(l, p) > 1.0;
      else
        worst_off = std::max(worst_off, std::abs(tok_scan.at(l, p)));
    }
  ok = ok && worst_off < 1e-6;
  const double secs = timer.seconds();
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "two-stage early/late structure exact; max off-target |s| = %.2e", worst_off);
  report(4, ok, buf, secs);
}

// ---- criterion 5: self-patching is exactly zero ----
void criterion_5(const OracleLab& lab) {
  Timer timer;
  bool ok = true;
  double worst = 0.0;
  std::uint64_t dir = 0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(400 + dir++);
    TaskConfig cfg = lab.cfg(r);
    for (int i = 0; i < 50; ++i) {
      ContextPair pair =
          i % 2 ? make_token_pair(cfg, rng)
                : make_abstract_pair(cfg, rng, i % 4 ? TargetHeadType::kSymbolicInduction
                                                     : TargetHeadType::kAbstraction);
      pair.c2 = pair.c1;  // degenerate: source context equals base context
      pair.y_c2 = pair.y_c1;

      // head-output sites
      for (std::size_t l = 0; l < lab.model.config().n_layers; ++l)
        for (std::size_t h = 0; h < lab.model.config().n_heads; ++h)
          worst = std::max(worst, std::abs(compute_cm_score(lab.model, pair, l, h)));

      // block/MLP-output sites via direct patched scoring
      ActivationCache source;
      lab.model.forward_with_cache(pair.c1.tokens, source);
      const double base = score_answer(lab.model, pair.c1.tokens, pair.y_c1_star) -
                          score_answer(lab.model, pair.c1.tokens, pair.y_c1);
      for (std::size_t l = 0; l < lab.model.config().n_layers; ++l)
        for (Component comp : {Component::kBlockOutput, Component::kMlpOutput}) {
          HookSite site{l, comp, std::nullopt,
                        {pair.patch_positions.begin(), pair.patch_positions.end()}};
          const std::vector<HookSite> patches = {site};
          const double patched =
              score_answer(lab.model, pair.c1.tokens, pair.y_c1_star, &source, &patches) -
              score_answer(lab.model, pair.c1.tokens, pair.y_c1, &source, &patches);
          worst = std::max(worst, std::abs(patched - base));
        }
    }
  }
  ok = worst == 0.0;
  const double secs = timer.seconds();
  char buf[160];
  std::snprintf(buf, sizeof buf, "self-patch score over 100 pairs, all site kinds: max |s| = %g",
                worst);
  report(5, ok, buf, secs);
}

// ---- criterion 6: permutation-test calibration ----
void criterion_6() {
  Timer timer;
  const std::size_t n_sims = 200, n_trials = 100, n_cols = 12;
  std::size_t false_positives = 0;
  for (std::size_t sim = 0; sim < n_sims; ++sim) {
    std::mt19937_64 rng(9000 + sim);
    std::normal_distribution<double> d(0.0, 1.0);
    HeadScores hs;
    hs.n_layers = 3;
    hs.n_heads = 4;
    for (std::size_t t = 0; t < n_trials; ++t) {
      std::vector<double> row(n_cols);
      for (double& v : row) v = d(rng);
      hs.trials.push_back(std::move(row));
    }
    PermutationResult res = permutation_test(hs, 2000, 0.05, 5000 + sim);
    bool any = false;
    for (char s : res.significant) any = any || s;
    if (any) ++false_positives;
  }
  const double fwer = static_cast<double>(false_positives) / n_sims;
  const double secs = timer.seconds();
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "family-wise false-positive rate %.3f over %zu null simulations (limit 0.07)",
                fwer, n_sims);
  report(6, fwer <= 0.07, buf, secs);
}

// ---- criterion 7: attention predictions ----
void criterion_7(const OracleLab& lab) {
  Timer timer;
  bool ok = true;
  double worst = 1.0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(r == Rule::kABA ? 501 : 502);
    TaskConfig cfg = lab.cfg(r);
    std::vector<Prompt> prompts;
    for (int i = 0; i < 100; ++i) prompts.push_back(make_identity_prompt(cfg, rng).first);
    struct Case {
      std::pair<std::size_t, std::size_t> head;
      TargetHeadType type;
    };
    for (const Case& c : {Case{lab.handles.abstraction, TargetHeadType::kAbstraction},
                          Case{lab.handles.induction, TargetHeadType::kSymbolicInduction},
                          Case{lab.handles.retrieval, TargetHeadType::kRetrieval}}) {
      AttentionMap map = aggregate_attention(lab.model, prompts,
                                             {{c.head.first, c.head.second, 1.0}}, &lab.vocab);
      const double score = attention_prediction_score(map, prompts.front(), r, c.type);
      worst = std::min(worst, score);
      ok = ok && score >= 0.99;
    }
  }
  const double secs = timer.seconds();
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "predicted-cell attention mass >= 0.99 for 3 head types x 2 rules (min %.4f)",
                worst);
  report(7, ok, buf, secs);
}

// ---- criterion 8: RSA ----
void criterion_8(const OracleLab& lab) {
  Timer timer;
  TaskRng rng(601);
  std::vector<std::vector<Prompt>> designs;
  std::vector<RsaItem> abs_items, ind_items, ret_items;
  for (int s = 0; s < 40; ++s) {
    RsaContexts ctx = make_rsa_contexts(lab.cfg(Rule::kABA), rng);
    if (s == 0) {
      abs_items = four_context_items(ctx, TargetHeadType::kAbstraction, HeadComponent::kOutput);
      ind_items =
          four_context_items(ctx, TargetHeadType::kSymbolicInduction, HeadComponent::kOutput);
      ret_items = four_context_items(ctx, TargetHeadType::kRetrieval, HeadComponent::kOutput);
    }
    designs.push_back(ctx.prompts);
  }

  Tensor abs_hyp = build_hypothesis_matrix(HypothesisKind::kAbstract, abs_items);
  Tensor tok_hyp = build_hypothesis_matrix(HypothesisKind::kToken, ret_items);

  // programmatic structure checks: two 2x2 blocks / 3 diagonal bands
  bool structure = true;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      const double block = (r / 2 == c / 2) ? 1.0 : 0.0;
      const double band = (r % 2 == c % 2) ? 1.0 : 0.0;  // offsets 0 and +/-2
      structure = structure && abs_hyp.at(r, c) == block && tok_hyp.at(r, c) == band;
    }

  auto emp = [&](const std::vector<RsaItem>& items, std::pair<std::size_t, std::size_t> head) {
    return empirical_similarity(lab.model, designs, items, {{head.first, head.second, 1.0}},
                                HeadComponent::kOutput);
  };
  const double r_abs = rsa_correlation(emp(abs_items, lab.handles.abstraction), abs_hyp);
  const double r_ind =
      rsa_correlation(emp(ind_items, lab.handles.induction),
                      build_hypothesis_matrix(HypothesisKind::kAbstract, ind_items));
  const double r_ret = rsa_correlation(emp(ret_items, lab.handles.retrieval), tok_hyp);

  const bool ok = structure && r_abs > 0.9 && r_ind > 0.9 && r_ret > 0.9;
  const double secs = timer.seconds();
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "r(abstraction)=%.3f r(induction)=%.3f vs abstract, r(retrieval)=%.3f vs token; "
                "block/3-band structure %s",
                r_abs, r_ind, r_ret, structure ? "exact" : "WRONG");
  report(8, ok, buf, secs);
}

// ---- criterion 9: ablation ----
void criterion_9(const OracleLab& lab) {
  Timer timer;
  std::vector<EvalPrompt> prompts = lab.eval_prompts(20, 700);
  Tensor scores({lab.model.config().n_layers, lab.model.config().n_heads});
  scores.at(lab.handles.abstraction.first, lab.handles.abstraction.second) = 20.0;
  scores.at(lab.handles.induction.first, lab.handles.induction.second) = 15.0;
  scores.at(lab.handles.retrieval.first, lab.handles.retrieval.second) = 10.0;
  const std::set<std::pair<std::size_t, std::size_t>> critical = {
      lab.handles.abstraction, lab.handles.induction, lab.handles.retrieval};
  const double chance = 1.0 / static_cast<double>(lab.vocab.size());

  AblationReport ranked =
      cumulative_ablation(lab.model, prompts, scores, AblationCondition::kRanked, 6);
  const double baseline = ranked.curve[0];
  const bool ranked_ok = ranked.curve[3] <= chance;

  AblationReport control =
      cumulative_ablation(lab.model, prompts, scores, AblationCondition::kControl, 6);
  bool control_ok = true;
  for (std::size_t h = 0; h < control.curve.size(); ++h) {
    bool hit = false;
    for (auto head : critical)
      if (h >= 1 && control.ablated_sets[h][0].count(head)) hit = true;
    if (!hit) control_ok = control_ok && std::abs(control.curve[h] - baseline) < 1e-3;
  }

  AblationReport random =
      cumulative_ablation(lab.model, prompts, scores, AblationCondition::kRandom, 6, 10, 701);
  bool random_ok = true;
  for (std::size_t h = 1; h < random.curve.size(); ++h)
    for (const auto& set : random.ablated_sets[h]) {
      bool hit = false;
      for (auto head : critical) hit = hit || set.count(head) > 0;
      if (!hit) {
        const double p = mean_correct_probability(lab.model, prompts, set);
        random_ok = random_ok && std::abs(p - baseline) < 1e-3;
      }
    }

  const double secs = timer.seconds();
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "ranked p drops %.4f -> %.4f (chance %.4f); control %s, random(10 runs) %s off "
                "critical heads",
                baseline, ranked.curve[3], chance, control_ok ? "flat" : "MOVED",
                random_ok ? "flat" : "MOVED");
  report(9, ranked_ok && control_ok && random_ok, buf, secs);
}

// ---- criterion 10: dissociation properties ----
void criterion_10(const OracleLab& lab) {
  Timer timer;
  Model literal = build_literal_induction_oracle(lab.vocab);
  Tensor lit = prefix_matching_score(literal, 801);
  const double lit_score = lit.at(1, 0);

  Tensor sym = prefix_matching_score(lab.model, 801);
  double sym_max = 0.0;
  for (double v : sym.data) sym_max = std::max(sym_max, v);

  // function vectors encode the rule: extract per rule, average the AIE
  auto aie_for = [&](FvPositionMode mode) {
    Tensor total({lab.model.config().n_layers, lab.model.config().n_heads});
    std::uint64_t dir = 0;
    for (Rule r : {Rule::kABA, Rule::kABB}) {
      TaskRng rng(802 + dir++);
      TaskConfig cfg = lab.cfg(r);
      std::vector<EvalPrompt> prompts;
      for (int i = 0; i < 10; ++i) {
        auto [p, a] = make_identity_prompt(cfg, rng);
        prompts.push_back({std::move(p), std::move(a)});
      }
      FunctionVectorReport rep = function_vector_aie(lab.model, prompts, mode, 803);
      for (std::size_t i = 0; i < total.size(); ++i) total.data[i] += rep.aie.data[i] / 2.0;
    }
    return total;
  };
  auto argmax_head = [&](const Tensor& aie) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < aie.size(); ++i)
      if (aie.data[i] > aie.data[best]) best = i;
    return std::make_pair(best / lab.model.config().n_heads, best % lab.model.config().n_heads);
  };
  const bool fv_ok = argmax_head(aie_for(FvPositionMode::kFinalPosition)) == lab.handles.induction &&
                     argmax_head(aie_for(FvPositionMode::kThirdItem)) == lab.handles.abstraction;

  const bool ok = lit_score >= 0.99 && sym_max < 0.1 && fv_ok;
  const double secs = timer.seconds();
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "prefix-matching literal %.3f vs symbolic max %.3f; FV peak at induction "
                "(final) / abstraction (third item): %s",
                lit_score, sym_max, fv_ok ? "yes" : "NO");
  report(10, ok, buf, secs);
}

// ---- criterion 11: linear probe ----
ProbeReport run_probe(const OracleLab& lab, bool shuffled) {
  const std::size_t dh = lab.model.config().d_head;
  std::vector<int> ids = lab.vocab.content_ids();
  std::vector<std::vector<int>> pools(3);
  for (std::size_t i = 0; i < ids.size(); ++i) pools[i % 3].push_back(ids[i]);
  const std::size_t per_split[3] = {100, 50, 100};  // x2 rules = 200/100/200 samples

  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  std::vector<std::set<int>> sample_tokens;
  ProbeSplits splits;
  TaskRng rng(900);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < per_split[s]; ++i)
      for (Rule r : {Rule::kABA, Rule::kABB}) {
        TaskConfig cfg = lab.cfg(r);
        cfg.pool = pools[s];
        auto [p, a] = make_identity_prompt(cfg, rng);
        ActivationCache cache;
        lab.model.forward_with_cache(p.tokens, cache);
        std::vector<double> f(dh, 0.0);
        const std::vector<std::size_t> pos = p.example_final_positions();
        for (std::size_t q : pos)
          for (std::size_t c = 0; c < dh; ++c)
            f[c] += cache.layers[lab.handles.abstraction.first]
                        .head_outputs[lab.handles.abstraction.second]
                        .at(q, c);
        for (double& x : f) x /= static_cast<double>(pos.size());
        const std::size_t idx = feats.size();
        feats.push_back(std::move(f));
        labels.push_back(r == Rule::kABA ? 0 : 1);
        // disjointness is over content items; scaffold tokens appear everywhere
        std::set<int> content;
        for (int t : p.tokens)
          if (lab.vocab.is_content(t)) content.insert(t);
        sample_tokens.push_back(std::move(content));
        (s == 0 ? splits.train : s == 1 ? splits.val : splits.test).push_back(idx);
      }
  if (shuffled) {
    std::mt19937_64 srng(901);
    std::shuffle(labels.begin(), labels.end(), srng);
  }
  Tensor x({feats.size(), dh});
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t c = 0; c < dh; ++c) x.at(i, c) = feats[i][c];
  return linear_probe(x, labels, splits, 902, shuffled ? nullptr : &sample_tokens);
}

void criterion_11(const OracleLab& lab) {
  Timer timer;
  ProbeReport real = run_probe(lab, false);
  ProbeReport ctrl = run_probe(lab, true);
  const bool ok = real.test_acc >= 0.99 && real.token_disjoint && ctrl.test_acc > 0.35 &&
                  ctrl.test_acc < 0.65;
  const double secs = timer.seconds();
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "probe test accuracy %.3f (token-disjoint %zu/%zu/%zu); shuffled control %.3f",
                real.test_acc, real.n_train, real.n_val, real.n_test, ctrl.test_acc);
  report(11, ok, buf, secs);
}

// ---- criterion 12: trained toy model + full pipeline report ----
void criterion_12() {
  Timer timer;
  const std::uint64_t pinned_seeds[4] = {1, 2, 3, 4};
  Vocab vocab = Vocab::synthetic(64 - Vocab::kReserved);

  ModelConfig mc;
  mc.n_layers = 4;
  mc.n_heads = 4;
  mc.d_model = 64;
  mc.d_head = 16;
  mc.d_ff = 128;
  mc.vocab_size = 64;
  mc.max_seq_len = 24;
  mc.pos_encoding = PosEncoding::kRotary;
  mc.norm = NormKind::kRmsNorm;
  // tied unembedding is required for held-out generalization: untied
  // unembedding rows of never-seen tokens only receive negative gradient
  mc.tie_embeddings = true;

  TrainConfig tc;
  tc.steps = 20000;
  tc.batch_size = 32;
  tc.learning_rate = 1e-3;
  tc.warmup = 500;
  tc.eval_every = 250;
  tc.eval_prompts = 200;
  tc.target_accuracy = 0.9;
  tc.train_embeddings = false;    // frozen: held-out tokens stay exchangeable
  tc.resample_embeddings = true;  // random symbols force content-independent circuits

  bool reached = false;
  std::uint64_t winning_seed = 0;
  std::size_t steps_used = 0;
  double final_acc = 0.0;
  Model trained;
  for (std::uint64_t seed : pinned_seeds) {
    mc.seed = static_cast<long>(seed);
    tc.seed = seed;
    Model m(mc, static_cast<long>(seed));
    TrainMetrics metrics = train(m, tc, vocab);
    std::printf("       criterion 12: seed %llu -> accuracy %.3f at step %zu%s\n",
                static_cast<unsigned long long>(seed), metrics.final_accuracy,
                metrics.final_step, metrics.reached_target ? " (target reached)" : "");
    std::fflush(stdout);
    if (metrics.reached_target) {
      reached = true;
      winning_seed = seed;
      steps_used = metrics.final_step;
      final_acc = metrics.final_accuracy;
      trained = std::move(m);
      break;
    }
  }

  bool pipeline_ok = false;
  std::string run_path;
  if (reached) {
    // full analysis pipeline on the trained checkpoint, into a run dir
    try {
      RunDir run("runs", "acceptance-trained");
      run_path = run.path();
      trained.save(run.file("model.json"));
      run.record("model.json");

      TaskConfig cfg;
      cfg.vocab = &vocab;
      CmaConfig cc;
      cc.n_pairs = 50;
      cc.n_permutations = 2000;
      cc.seed = winning_seed;

      auto head_labels = [&](std::size_t n, const char* stem) {
        std::vector<std::string> l;
        for (std::size_t i = 0; i < n; ++i) l.push_back(stem + std::to_string(i));
        return l;
      };
      const std::vector<std::string> rows = head_labels(mc.n_layers, "layer");
      const std::vector<std::string> cols = head_labels(mc.n_heads, "head");

      Tensor abstraction_means({mc.n_layers, mc.n_heads});
      std::vector<std::pair<std::size_t, std::size_t>> top_heads;
      for (TargetHeadType tgt : {TargetHeadType::kAbstraction, TargetHeadType::kSymbolicInduction,
                                 TargetHeadType::kRetrieval}) {
        HeadScores scores;
        std::uint64_t dir = 0;
        for (Rule r : {Rule::kABA, Rule::kABB}) {
          TaskRng rng(winning_seed * 100 + dir++);
          cfg.rule = r;
          scores.append(collect_head_scores(trained, cc, [&]() {
            return tgt == TargetHeadType::kRetrieval ? make_token_pair(cfg, rng)
                                                     : make_abstract_pair(cfg, rng, tgt);
          }));
        }
        PermutationResult res = permutation_test(scores, cc.n_permutations, cc.alpha, 42);
        Tensor mean({mc.n_layers, mc.n_heads});
        std::size_t best = 0;
        for (std::size_t i = 0; i < mean.size(); ++i) {
          mean.data[i] = res.mean_scores[i];
          if (res.mean_scores[i] > res.mean_scores[best]) best = i;
        }
        top_heads.push_back({best / mc.n_heads, best % mc.n_heads});
        if (tgt == TargetHeadType::kAbstraction) abstraction_means = mean;
        const std::string stem = "cma_" + target_name(tgt);
        write_matrix_csv(run.file(stem + ".csv"), mean, rows, cols);
        run.record(stem + ".csv");
        render_heatmap(mean, rows, cols, run.file(stem + ".svg"));
        run.record(stem + ".svg");
      }

      // attention map of the top abstraction-scored head
      TaskRng arng(winning_seed + 5);
      cfg.rule = Rule::kABA;
      std::vector<Prompt> prompts;
      std::vector<EvalPrompt> eval_prompts;
      for (int i = 0; i < 40; ++i) {
        auto [p, a] = make_identity_prompt(cfg, arng);
        prompts.push_back(p);
        eval_prompts.push_back({std::move(p), std::move(a)});
      }
      AttentionMap amap = aggregate_attention(
          trained, prompts, {{top_heads[0].first, top_heads[0].second, 1.0}}, &vocab);
      write_matrix_csv(run.file("attention.csv"), amap.map, amap.labels, amap.labels);
      run.record("attention.csv");
      render_heatmap(amap.map, amap.labels, amap.labels, run.file("attention.svg"));
      run.record("attention.svg");

      // RSA on the top abstraction head
      TaskRng rrng(winning_seed + 6);
      std::vector<std::vector<Prompt>> designs;
      std::vector<RsaItem> items;
      for (int s = 0; s < 20; ++s) {
        RsaContexts ctx = make_rsa_contexts(cfg, rrng);
        if (s == 0)
          items = four_context_items(ctx, TargetHeadType::kAbstraction, HeadComponent::kOutput);
        designs.push_back(ctx.prompts);
      }
      Tensor emp = empirical_similarity(trained, designs, items,
                                        {{top_heads[0].first, top_heads[0].second, 1.0}},
                                        HeadComponent::kOutput);
      std::vector<std::string> rsa_labels = {"c0", "c1", "c2", "c3"};
      write_matrix_csv(run.file("rsa_empirical.csv"), emp, rsa_labels, rsa_labels);
      run.record("rsa_empirical.csv");
      const double r_abs =
          rsa_correlation(emp, build_hypothesis_matrix(HypothesisKind::kAbstract, items));
      const double r_tok =
          rsa_correlation(emp, build_hypothesis_matrix(HypothesisKind::kToken, items));

      // ablation curve ranked by abstraction scores
      AblationReport abl = cumulative_ablation(trained, eval_prompts, abstraction_means,
                                               AblationCondition::kRanked, 8);
      std::vector<std::vector<std::string>> abl_rows;
      for (std::size_t h = 0; h < abl.curve.size(); ++h)
        abl_rows.push_back({std::to_string(h), format_number(abl.curve[h])});
      write_csv(run.file("ablation.csv"), {"h", "mean_prob"}, abl_rows);
      run.record("ablation.csv");

      // prefix matching + function vectors
      // the repeated sequence (BOS + 2n tokens) must fit max_seq_len
      Tensor prefix = prefix_matching_score(trained, winning_seed + 7,
                                            (trained.config().max_seq_len - 1) / 2);
      write_matrix_csv(run.file("prefix_matching.csv"), prefix, rows, cols);
      run.record("prefix_matching.csv");
      FunctionVectorReport fv =
          function_vector_aie(trained, eval_prompts, FvPositionMode::kFinalPosition,
                              winning_seed + 8);
      write_matrix_csv(run.file("fv_aie.csv"), fv.aie, rows, cols);
      run.record("fv_aie.csv");

      write_csv(run.file("summary.csv"),
                {"seed", "steps", "held_out_accuracy", "rsa_r_abstract", "rsa_r_token"},
                {{std::to_string(winning_seed), std::to_string(steps_used),
                  format_number(final_acc), format_number(r_abs), format_number(r_tok)}});
      run.record("summary.csv");

      Config cfg_out;
      cfg_out.set("command", "acceptance-trained");
      cfg_out.set_num("seed", static_cast<double>(winning_seed));
      run.finalize(cfg_out, winning_seed, timer.seconds());
      pipeline_ok = verify_manifest(run.file("manifest.json")).empty();
    } catch (const std::exception& e) {
      std::printf("       criterion 12: pipeline error: %s\n", e.what());
      pipeline_ok = false;
    }
  }

  const double secs = timer.seconds();
  char buf[240];
  if (reached)
    std::snprintf(buf, sizeof buf,
                  "seed %llu reached %.3f held-out accuracy at step %zu; pipeline report %s (%s)",
                  static_cast<unsigned long long>(winning_seed), final_acc, steps_used,
                  pipeline_ok ? "complete" : "INCOMPLETE", run_path.c_str());
  else
    std::snprintf(buf, sizeof buf, "no pinned seed reached 90%% within 20k steps");
  report(12, reached && pipeline_ok && secs < 1800.0, buf, secs);
}

// ---- criterion 13: manifest replay reproduces outputs byte-identically ----
RunManifest deterministic_pipeline(const Config& cfg, const OracleLab& lab,
                                   const std::string& root) {
  RunDir run(root, cfg.get("command"));
  const std::uint64_t seed = cfg.seed();
  CmaConfig cc;
  cc.n_pairs = static_cast<std::size_t>(cfg.get_num("pairs", 10));
  cc.n_permutations = 500;
  cc.seed = seed;
  TaskRng rng(seed);
  TaskConfig tcfg = lab.cfg(Rule::kABA);
  HeadScores scores =
      collect_head_scores(lab.model, cc, [&]() { return make_abstract_pair(tcfg, rng); });
  PermutationResult res = permutation_test(scores, cc.n_permutations, cc.alpha, seed);
  Tensor mean({lab.model.config().n_layers, lab.model.config().n_heads});
  for (std::size_t i = 0; i < mean.size(); ++i) mean.data[i] = res.mean_scores[i];
  std::vector<std::string> rows = {"layer0", "layer1", "layer2"};
  std::vector<std::string> cols;
  for (std::size_t h = 0; h < lab.model.config().n_heads; ++h)
    cols.push_back("head" + std::to_string(h));
  write_matrix_csv(run.file("scores.csv"), mean, rows, cols);
  run.record("scores.csv");
  render_heatmap(mean, rows, cols, run.file("scores.svg"));
  run.record("scores.svg");
  run.finalize(cfg, seed, 0.0);
  return run.manifest();
}

void criterion_13(const OracleLab& lab) {
  Timer timer;
  Config cfg;
  cfg.set("command", "replay-check");
  cfg.set_num("seed", 1301);
  cfg.set_num("pairs", 10);
  RunManifest first = deterministic_pipeline(cfg, lab, "runs");

  // replay purely from the recorded manifest config
  Config replay_cfg;
  for (const auto& [k, v] : first.config) replay_cfg.set(k, v);
  RunManifest second = deterministic_pipeline(replay_cfg, lab, "runs");

  bool ok = first.outputs.size() == second.outputs.size();
  for (const auto& [rel, hash] : first.outputs)
    ok = ok && second.outputs.count(rel) && second.outputs.at(rel) == hash;
  const double secs = timer.seconds();
  report(13, ok,
         ok ? "replayed manifest reproduced all CSV/SVG outputs byte-identically"
            : "replay produced differing outputs",
         secs);
}

}  // namespace

int main() {
  Timer total;
  OracleLab lab;
  // an exception in one criterion must register as its failure, not
  // abort the remaining criteria
  auto guarded = [](int criterion, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(criterion, false, std::string("exception: ") + e.what(), 0.0);
    }
  };
  guarded(1, [&] { criterion_1(); });
  guarded(2, [&] { criterion_2(lab); });
  guarded(3, [&] { criterion_3(lab); });
  guarded(4, [&] { criterion_4(lab); });
  guarded(5, [&] { criterion_5(lab); });
  guarded(6, [&] { criterion_6(); });
  guarded(7, [&] { criterion_7(lab); });
  guarded(8, [&] { criterion_8(lab); });
  guarded(9, [&] { criterion_9(lab); });
  guarded(10, [&] { criterion_10(lab); });
  guarded(11, [&] { criterion_11(lab); });
  guarded(12, [&] { criterion_12(); });
  guarded(13, [&] { criterion_13(lab); });
  std::printf("%d/13 criteria passed in %.1fs\n", 13 - g_failures, total.seconds());
  return g_failures == 0 ? 0 : 1;
}
