// Command-line front end: every subcommand materializes its effective
// options into a flat config, executes into a fresh run directory, and
// writes a manifest so the run can be replayed byte-identically.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "symlab/causal_aux.hpp"
#include "symlab/cma.hpp"
#include "symlab/model.hpp"
#include "symlab/oracle.hpp"
#include "symlab/repr.hpp"
#include "symlab/report.hpp"
#include "symlab/tasks.hpp"
#include "symlab/train.hpp"

namespace symlab {
namespace {

std::vector<WeightedHead> parse_heads(const std::string& spec) {
  std::vector<WeightedHead> heads;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    WeightedHead h;
    std::size_t a = item.find(':');
    std::size_t b = item.find(':', a + 1);
    if (a == std::string::npos) throw TensorError("bad --heads entry: " + item);
    h.layer = std::stoul(item.substr(0, a));
    h.head = std::stoul(item.substr(a + 1, b - a - 1));
    if (b != std::string::npos) h.weight = std::stod(item.substr(b + 1));
    heads.push_back(h);
  }
  if (heads.empty()) throw TensorError("--heads: no heads given");
  return heads;
}

Vocab vocab_for(const Model& m, const std::string& task) {
  if (task == "letter") return Vocab::letters();
  if (m.config().vocab_size < Vocab::kReserved + 2)
    throw TensorError("checkpoint vocabulary too small");
  return Vocab::synthetic(m.config().vocab_size - Vocab::kReserved);
}

std::vector<std::string> head_row_labels(const Model& m) {
  std::vector<std::string> l;
  for (std::size_t i = 0; i < m.config().n_layers; ++i) l.push_back("layer" + std::to_string(i));
  return l;
}

std::vector<std::string> head_col_labels(const Model& m) {
  std::vector<std::string> l;
  for (std::size_t i = 0; i < m.config().n_heads; ++i) l.push_back("head" + std::to_string(i));
  return l;
}

void write_head_matrix(RunDir& run, const std::string& rel, const Model& m, const Tensor& t) {
  write_matrix_csv(run.file(rel), t, head_row_labels(m), head_col_labels(m));
  run.record(rel);
  const std::string svg = rel.substr(0, rel.rfind('.')) + ".svg";
  render_heatmap(t, head_row_labels(m), head_col_labels(m), run.file(svg));
  run.record(svg);
}

Rule cli_rule(const Config& cfg, const std::string& def = "ABA") {
  return rule_from_name(cfg.get("rule", def));
}

// ---- subcommand bodies (shared between direct invocation and replay) ----

void cmd_oracle_build(const Config& cfg, RunDir& run) {
  if (cfg.get("literal", "0") == "1") {
    Vocab v = Vocab::synthetic(static_cast<std::size_t>(cfg.get_num("content", 56)));
    Model m = build_literal_induction_oracle(v);
    m.save(run.file("model.json"));
    run.record("model.json");
    return;
  }
  OracleSpec spec;
  spec.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
  spec.scale = cfg.get_num("scale", 40.0);
  spec.retrieval_gain = cfg.get_num("gain", 10.0);
  Vocab v = Vocab::synthetic(static_cast<std::size_t>(cfg.get_num("content", 56)));
  OracleHandles h;
  Model m = build_symbolic_oracle(spec, v, &h);
  m.save(run.file("model.json"));
  run.record("model.json");
  std::vector<std::vector<std::string>> rows = {
      {"abstraction", std::to_string(h.abstraction.first), std::to_string(h.abstraction.second)},
      {"induction", std::to_string(h.induction.first), std::to_string(h.induction.second)},
      {"retrieval", std::to_string(h.retrieval.first), std::to_string(h.retrieval.second)}};
  write_csv(run.file("heads.csv"), {"role", "layer", "head"}, rows);
  run.record("heads.csv");
}

void cmd_train(const Config& cfg, RunDir& run) {
  ModelConfig mc;
  mc.n_layers = static_cast<std::size_t>(cfg.get_num("layers", 4));
  mc.n_heads = static_cast<std::size_t>(cfg.get_num("heads", 4));
  mc.d_model = static_cast<std::size_t>(cfg.get_num("d_model", 64));
  mc.d_head = mc.d_model / mc.n_heads;
  mc.d_ff = static_cast<std::size_t>(cfg.get_num("d_ff", 128));
  mc.vocab_size = static_cast<std::size_t>(cfg.get_num("vocab", 64));
  mc.max_seq_len = static_cast<std::size_t>(cfg.get_num("max_seq_len", 32));
  mc.pos_encoding = pos_encoding_from_name(cfg.get("pos", "rotary"));
  mc.norm = norm_from_name(cfg.get("norm", "rmsnorm"));
  mc.tie_embeddings = cfg.get("tie", "1") == "1";
  mc.seed = static_cast<long>(cfg.seed());
  mc.validate();

  TrainConfig tc;
  tc.steps = static_cast<std::size_t>(cfg.get_num("steps", 20000));
  tc.batch_size = static_cast<std::size_t>(cfg.get_num("batch", 32));
  tc.learning_rate = cfg.get_num("lr", 1e-3);
  tc.warmup = static_cast<std::size_t>(cfg.get_num("warmup", 500));
  tc.weight_decay = cfg.get_num("weight_decay", 0.0);
  tc.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
  tc.eval_every = static_cast<std::size_t>(cfg.get_num("eval_every", 500));
  tc.eval_prompts = static_cast<std::size_t>(cfg.get_num("eval_prompts", 200));
  tc.target_accuracy = cfg.get_num("target_accuracy", 0.9);
  // tied runs freeze the embedding so held-out tokens stay exchangeable
  tc.train_embeddings = cfg.get("train_embed", mc.tie_embeddings ? "0" : "1") == "1";
  tc.resample_embeddings = cfg.get("resample", tc.train_embeddings ? "0" : "1") == "1";
  tc.seed = cfg.seed();

  Vocab v = Vocab::synthetic(mc.vocab_size - Vocab::kReserved);
  Model m(mc, static_cast<long>(cfg.seed()));
  TrainMetrics metrics = train(m, tc, v, run.file("metrics.csv"));
  run.record("metrics.csv");
  m.save(run.file("model.json"));
  run.record("model.json");
  std::vector<std::vector<std::string>> rows = {
      {std::to_string(metrics.final_step), format_number(metrics.final_loss),
       format_number(metrics.final_accuracy), metrics.reached_target ? "1" : "0"}};
  write_csv(run.file("summary.csv"), {"final_step", "final_loss", "final_accuracy", "reached_target"},
            rows);
  run.record("summary.csv");
  std::printf("trained %zu steps, loss %.4f, held-out accuracy %.3f%s\n", metrics.final_step,
              metrics.final_loss, metrics.final_accuracy,
              metrics.reached_target ? " (target reached)" : "");
}

void cmd_eval(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  const std::string task = cfg.get("task", "identity");
  const std::size_t n = static_cast<std::size_t>(cfg.get_num("n", 1000));
  const std::size_t shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
  Vocab v = vocab_for(m, task);
  std::vector<std::vector<std::string>> rows;
  std::vector<Rule> rules;
  const std::string rule_opt = cfg.get("rule", "both");
  if (rule_opt == "both")
    rules = task == "letter" ? std::vector<Rule>{Rule::kSuccessor, Rule::kPredecessor}
            : task == "verbal" ? std::vector<Rule>{Rule::kSynonym, Rule::kAntonym}
                               : std::vector<Rule>{Rule::kABA, Rule::kABB};
  else
    rules = {rule_from_name(rule_opt)};
  std::vector<WordSet> sets;
  if (task == "verbal") sets = load_wordsets(cfg.get("wordsets", "data/wordsets.txt"));

  for (Rule r : rules) {
    TaskRng rng(cfg.seed());
    TaskConfig tcfg;
    tcfg.rule = r;
    tcfg.n_shots = shots;
    tcfg.vocab = &v;
    AccuracyReport rep;
    if (task == "verbal") {
      auto stream = [&]() {
        VerbalPrompt vp = make_verbal_prompt(tcfg, sets, rng);
        return EvalItem{std::move(vp.prompt), std::move(vp.answer), std::move(vp.foil)};
      };
      rep = evaluate_accuracy(m, stream, n, Scoring::kLogitComparison);
    } else {
      auto stream = [&]() {
        auto [p, a] = task == "letter" ? make_letter_prompt(tcfg, rng)
                                       : make_identity_prompt(tcfg, rng);
        return EvalItem{std::move(p), std::move(a), std::nullopt};
      };
      rep = evaluate_accuracy(m, stream, n, Scoring::kArgmax);
    }
    rows.push_back({task, rule_name(r), std::to_string(rep.n), format_number(rep.accuracy),
                    format_number(rep.ci_low), format_number(rep.ci_high)});
    std::printf("%s/%s: %.4f [%.4f, %.4f] (n=%zu)\n", task.c_str(), rule_name(r).c_str(),
                rep.accuracy, rep.ci_low, rep.ci_high, rep.n);
  }
  write_csv(run.file("eval.csv"), {"task", "rule", "n", "accuracy", "ci_low", "ci_high"}, rows);
  run.record("eval.csv");
}

void cmd_cma(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  const std::string target = cfg.get("target", "abstraction");
  const std::size_t n_pairs = static_cast<std::size_t>(cfg.get_num("pairs", 200));
  Vocab v = vocab_for(m, cfg.get("task", "identity"));
  CmaConfig cc;
  cc.n_pairs = n_pairs;
  cc.n_permutations = static_cast<std::size_t>(cfg.get_num("perms", 5000));
  cc.alpha = cfg.get_num("alpha", 0.05);
  cc.seed = cfg.seed();
  cc.filter_correct = cfg.get("filter_correct", "1") == "1";

  TaskConfig tcfg;
  tcfg.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
  tcfg.vocab = &v;

  if (target == "layer-position" || target == "mlp") {
    std::vector<ContextPair> pairs;
    std::size_t dir = 0;
    for (Rule r : {Rule::kABA, Rule::kABB}) {
      TaskRng rng(cc.seed + dir++);
      tcfg.rule = r;
      const bool token_cond = cfg.get("condition", "abstract") == "token";
      for (std::size_t i = 0; i < n_pairs; ++i)
        pairs.push_back(token_cond ? make_token_pair(tcfg, rng)
                                   : make_abstract_pair(tcfg, rng));
    }
    Tensor scan = scan_layer_position(
        m, pairs, target == "mlp" ? Component::kMlpOutput : Component::kBlockOutput);
    std::vector<std::string> cols;
    for (std::size_t p = 0; p < scan.cols(); ++p) cols.push_back("pos" + std::to_string(p));
    write_matrix_csv(run.file("scan.csv"), scan, head_row_labels(m), cols);
    run.record("scan.csv");
    render_heatmap(scan, head_row_labels(m), cols, run.file("scan.svg"));
    run.record("scan.svg");
    return;
  }

  const TargetHeadType tgt = target_from_name(target);
  HeadScores scores;
  std::size_t dir = 0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(cc.seed + dir++);
    tcfg.rule = r;
    auto gen = [&]() {
      return tgt == TargetHeadType::kRetrieval ? make_token_pair(tcfg, rng)
                                               : make_abstract_pair(tcfg, rng, tgt);
    };
    scores.append(collect_head_scores(m, cc, gen));
  }
  PermutationResult res = permutation_test(scores, cc.n_permutations, cc.alpha, cc.seed);

  std::vector<std::vector<std::string>> rows;
  Tensor mean({m.config().n_layers, m.config().n_heads});
  for (std::size_t l = 0; l < m.config().n_layers; ++l)
    for (std::size_t h = 0; h < m.config().n_heads; ++h) {
      const std::size_t c = scores.col(l, h);
      mean.at(l, h) = res.mean_scores[c];
      rows.push_back({std::to_string(l), std::to_string(h), format_number(res.mean_scores[c]),
                      res.significant[c] ? "1" : "0"});
    }
  write_csv(run.file("head_scores.csv"), {"layer", "head", "mean_score", "significant"}, rows);
  run.record("head_scores.csv");
  write_head_matrix(run, "mean_scores.csv", m, mean);
  write_csv(run.file("summary.csv"), {"target", "threshold", "n_trials"},
            {{target, format_number(res.threshold), std::to_string(scores.trials.size())}});
  run.record("summary.csv");
  for (auto [l, h] : res.significant_heads(m.config().n_heads))
    std::printf("significant: layer %zu head %zu (score %.4f)\n", l, h, mean.at(l, h));
  std::printf("threshold %.6f over %zu trials\n", res.threshold, scores.trials.size());
}

void cmd_attn(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Vocab v = vocab_for(m, "identity");
  const std::vector<WeightedHead> heads = parse_heads(cfg.get("heads"));
  const TargetHeadType tgt = target_from_name(cfg.get("target", "abstraction"));
  const std::size_t n = static_cast<std::size_t>(cfg.get_num("n", 200));

  std::vector<std::vector<std::string>> rows;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(cfg.seed());
    TaskConfig tcfg;
    tcfg.rule = r;
    tcfg.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
    tcfg.vocab = &v;
    std::vector<Prompt> prompts;
    for (std::size_t i = 0; i < n; ++i) prompts.push_back(make_identity_prompt(tcfg, rng).first);
    AttentionMap map = aggregate_attention(m, prompts, heads, &v);
    std::vector<std::string> pos_labels;
    for (std::size_t p = 0; p < map.map.rows(); ++p) pos_labels.push_back("pos" + std::to_string(p));
    const std::string rel = "attention_" + rule_name(r) + ".csv";
    write_matrix_csv(run.file(rel), map.map, pos_labels, pos_labels);
    run.record(rel);
    const std::string svg = "attention_" + rule_name(r) + ".svg";
    render_heatmap(map.map, pos_labels, pos_labels, run.file(svg));
    run.record(svg);
    const double score = attention_prediction_score(map, prompts.front(), r, tgt);
    rows.push_back({rule_name(r), target_name(tgt), format_number(score)});
    std::printf("%s %s prediction score %.6f\n", rule_name(r).c_str(), target_name(tgt).c_str(),
                score);
  }
  write_csv(run.file("predictions.csv"), {"rule", "head_type", "score"}, rows);
  run.record("predictions.csv");
}

HeadComponent component_from_name(const std::string& s) {
  if (s == "query") return HeadComponent::kQuery;
  if (s == "key") return HeadComponent::kKey;
  if (s == "value") return HeadComponent::kValue;
  if (s == "output") return HeadComponent::kOutput;
  throw TensorError("unknown component: " + s);
}

void cmd_rsa(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Vocab v = vocab_for(m, "identity");
  const std::vector<WeightedHead> heads = parse_heads(cfg.get("heads"));
  const TargetHeadType tgt = target_from_name(cfg.get("target", "abstraction"));
  const HeadComponent comp = component_from_name(cfg.get("component", "output"));
  const std::size_t n_sets = static_cast<std::size_t>(cfg.get_num("sets", 40));
  TaskRng rng(cfg.seed());
  TaskConfig tcfg;
  tcfg.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
  tcfg.vocab = &v;

  std::vector<std::vector<Prompt>> designs;
  std::vector<RsaItem> items;
  for (std::size_t s = 0; s < n_sets; ++s) {
    RsaContexts ctx = make_rsa_contexts(tcfg, rng);
    if (s == 0) items = four_context_items(ctx, tgt, comp);
    designs.push_back(ctx.prompts);
  }
  Tensor emp = empirical_similarity(m, designs, items, heads, comp);
  std::vector<std::string> labels;
  for (const RsaItem& it : items)
    labels.push_back("c" + std::to_string(it.context) + "/v" + std::to_string(it.variable));
  write_matrix_csv(run.file("empirical.csv"), emp, labels, labels);
  run.record("empirical.csv");
  render_heatmap(emp, labels, labels, run.file("empirical.svg"));
  run.record("empirical.svg");

  std::vector<std::vector<std::string>> rows;
  for (HypothesisKind k : {HypothesisKind::kAbstract, HypothesisKind::kToken}) {
    Tensor hyp = build_hypothesis_matrix(k, items);
    const double r = rsa_correlation(emp, hyp);
    rows.push_back({hypothesis_name(k), format_number(r)});
    std::printf("r(%s) = %.4f\n", hypothesis_name(k).c_str(), r);
  }
  write_csv(run.file("correlations.csv"), {"hypothesis", "r"}, rows);
  run.record("correlations.csv");
}

Tensor load_head_scores_csv(const std::string& path, const Model& m) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open scores file " + path);
  Tensor t({m.config().n_layers, m.config().n_heads});
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string l, h, s;
    std::getline(ss, l, ',');
    std::getline(ss, h, ',');
    std::getline(ss, s, ',');
    t.at(std::stoul(l), std::stoul(h)) = std::stod(s);
  }
  return t;
}

void cmd_ablate(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Vocab v = vocab_for(m, "identity");
  Tensor scores = load_head_scores_csv(cfg.get("scores"), m);
  const std::size_t n = static_cast<std::size_t>(cfg.get_num("n", 40));
  std::vector<EvalPrompt> prompts;
  std::size_t dir = 0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(cfg.seed() + 1000 + dir++);  // offset: disjoint from CMA streams
    TaskConfig tcfg;
    tcfg.rule = r;
    tcfg.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
    tcfg.vocab = &v;
    for (std::size_t i = 0; i < n / 2; ++i) {
      auto [p, a] = make_identity_prompt(tcfg, rng);
      prompts.push_back({std::move(p), std::move(a)});
    }
  }
  const std::string cond_s = cfg.get("condition", "ranked");
  const AblationCondition cond = cond_s == "control" ? AblationCondition::kControl
                                 : cond_s == "random" ? AblationCondition::kRandom
                                                      : AblationCondition::kRanked;
  AblationReport rep = cumulative_ablation(m, prompts, scores, cond,
                                           static_cast<std::size_t>(cfg.get_num("max_heads", 0)),
                                           10, cfg.seed());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t h = 0; h < rep.curve.size(); ++h)
    rows.push_back({std::to_string(h), format_number(rep.curve[h]), format_number(rep.std_dev[h])});
  write_csv(run.file("ablation_" + cond_s + ".csv"), {"h", "mean_prob", "std"}, rows);
  run.record("ablation_" + cond_s + ".csv");
}

void cmd_prefix_match(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Tensor scores = prefix_matching_score(m, cfg.seed(),
                                        static_cast<std::size_t>(cfg.get_num("tokens", 50)),
                                        static_cast<std::size_t>(cfg.get_num("seeds", 4)));
  write_head_matrix(run, "prefix_matching.csv", m, scores);
}

void cmd_fv(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Vocab v = vocab_for(m, "identity");
  const FvPositionMode mode = cfg.get("mode", "final") == "third" ? FvPositionMode::kThirdItem
                                                                  : FvPositionMode::kFinalPosition;
  const std::size_t n = static_cast<std::size_t>(cfg.get_num("n", 50));
  Tensor total({m.config().n_layers, m.config().n_heads});
  std::size_t dir = 0;
  for (Rule r : {Rule::kABA, Rule::kABB}) {
    TaskRng rng(cfg.seed() + dir++);
    TaskConfig tcfg;
    tcfg.rule = r;
    tcfg.n_shots = static_cast<std::size_t>(cfg.get_num("shots", 2));
    tcfg.vocab = &v;
    std::vector<EvalPrompt> prompts;
    for (std::size_t i = 0; i < n; ++i) {
      auto [p, a] = make_identity_prompt(tcfg, rng);
      prompts.push_back({std::move(p), std::move(a)});
    }
    FunctionVectorReport rep = function_vector_aie(m, prompts, mode, cfg.seed());
    for (std::size_t i = 0; i < total.data.size(); ++i) total.data[i] += rep.aie.data[i] / 2.0;
  }
  write_head_matrix(run, "fv_aie.csv", m, total);
}

void cmd_probe(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Vocab v = vocab_for(m, "identity");
  const std::size_t layer = static_cast<std::size_t>(cfg.get_num("layer", 0));
  const std::size_t head = static_cast<std::size_t>(cfg.get_num("head", 0));
  const std::size_t per_split[3] = {static_cast<std::size_t>(cfg.get_num("n_train", 200)),
                                    static_cast<std::size_t>(cfg.get_num("n_val", 100)),
                                    static_cast<std::size_t>(cfg.get_num("n_test", 200))};
  const bool shuffled = cfg.get("shuffled", "0") == "1";
  const std::size_t shots = static_cast<std::size_t>(cfg.get_num("shots", 2));

  // three token-disjoint content pools, one per split
  std::vector<int> ids = v.content_ids();
  std::vector<std::vector<int>> pools(3);
  for (std::size_t i = 0; i < ids.size(); ++i) pools[i % 3].push_back(ids[i]);

  const std::size_t dh = m.config().d_head;
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  std::vector<std::set<int>> sample_tokens;
  ProbeSplits splits;
  TaskRng rng(cfg.seed());
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < per_split[s]; ++i) {
      for (Rule r : {Rule::kABA, Rule::kABB}) {
        TaskConfig tcfg;
        tcfg.rule = r;
        tcfg.n_shots = shots;
        tcfg.vocab = &v;
        tcfg.pool = pools[s];
        auto [p, a] = make_identity_prompt(tcfg, rng);
        ActivationCache cache;
        m.forward_with_cache(p.tokens, cache);
        std::vector<double> f(dh, 0.0);
        const std::vector<std::size_t> pos = p.example_final_positions();
        for (std::size_t q : pos)
          for (std::size_t c = 0; c < dh; ++c)
            f[c] += cache.layers[layer].head_outputs[head].at(q, c);
        for (double& x : f) x /= static_cast<double>(pos.size());
        const std::size_t idx = feats.size();
        feats.push_back(std::move(f));
        labels.push_back(r == Rule::kABA ? 0 : 1);
        sample_tokens.emplace_back(p.tokens.begin(), p.tokens.end());
        (s == 0 ? splits.train : s == 1 ? splits.val : splits.test).push_back(idx);
      }
    }
  }
  if (shuffled) {
    std::mt19937_64 srng(cfg.seed() + 1);
    std::shuffle(labels.begin(), labels.end(), srng);
  }
  Tensor x({feats.size(), dh});
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t c = 0; c < dh; ++c) x.at(i, c) = feats[i][c];
  ProbeReport rep = linear_probe(x, labels, splits, cfg.seed(), shuffled ? nullptr : &sample_tokens);
  write_csv(run.file("probe.csv"),
            {"train_acc", "val_acc", "test_acc", "n_train", "n_val", "n_test", "token_disjoint"},
            {{format_number(rep.train_acc), format_number(rep.val_acc), format_number(rep.test_acc),
              std::to_string(rep.n_train), std::to_string(rep.n_val), std::to_string(rep.n_test),
              rep.token_disjoint ? "1" : "0"}});
  run.record("probe.csv");
  std::printf("probe test accuracy %.4f (train %.4f, val %.4f)\n", rep.test_acc, rep.train_acc,
              rep.val_acc);
}

void cmd_correlate(const Config& cfg, RunDir& run) {
  Model m = Model::load(cfg.get("checkpoint"));
  Tensor a = load_head_scores_csv(cfg.get("a"), m);
  Tensor b = load_head_scores_csv(cfg.get("b"), m);
  ScoreCorrelation c = score_correlation(a, b,
                                         static_cast<std::size_t>(cfg.get_num("perms", 10000)),
                                         cfg.seed());
  write_csv(run.file("correlation.csv"), {"r", "p_value"},
            {{format_number(c.r), format_number(c.p_value)}});
  run.record("correlation.csv");
  std::printf("r = %.4f (p = %.4g)\n", c.r, c.p_value);
}

void dispatch(const Config& cfg, RunDir& run) {
  const std::string cmd = cfg.get("command");
  if (cmd == "oracle-build") return cmd_oracle_build(cfg, run);
  if (cmd == "train") return cmd_train(cfg, run);
  if (cmd == "eval") return cmd_eval(cfg, run);
  if (cmd == "cma") return cmd_cma(cfg, run);
  if (cmd == "attn") return cmd_attn(cfg, run);
  if (cmd == "rsa") return cmd_rsa(cfg, run);
  if (cmd == "ablate") return cmd_ablate(cfg, run);
  if (cmd == "prefix-match") return cmd_prefix_match(cfg, run);
  if (cmd == "fv") return cmd_fv(cfg, run);
  if (cmd == "probe") return cmd_probe(cfg, run);
  if (cmd == "correlate") return cmd_correlate(cfg, run);
  throw TensorError("unknown command: " + cmd);
}

int run_command(Config cfg, const std::string& runs_root) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.set_num("seed", static_cast<double>(cfg.seed()));  // freeze env override into the manifest
  RunDir run(runs_root, cfg.get("command"));
  dispatch(cfg, run);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.finalize(cfg, cfg.seed(), wall);
  std::printf("run: %s\n", run.path().c_str());
  return 0;
}

int cmd_report(const std::string& runs_root) {
  namespace fs = std::filesystem;
  if (!fs::exists(runs_root)) {
    std::fprintf(stderr, "error: no results directory at '%s'; run an analysis first\n",
                 runs_root.c_str());
    return 1;
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(runs_root))
    if (e.is_directory()) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  for (const std::string& d : dirs) {
    const std::string mpath = d + "/manifest.json";
    if (!fs::exists(mpath)) continue;
    RunManifest man = RunManifest::load(mpath);
    for (const auto& [rel, hash] : man.outputs)
      rows.push_back({fs::path(d).filename().string(), man.config.count("command")
                                                           ? man.config.at("command")
                                                           : man.name,
                      rel, hash});
  }
  if (rows.empty()) {
    std::fprintf(stderr, "error: no completed runs under '%s'; run an analysis first\n",
                 runs_root.c_str());
    return 1;
  }
  write_csv(runs_root + "/index.csv", {"run", "command", "file", "hash"}, rows);
  std::printf("indexed %zu artifacts into %s/index.csv\n", rows.size(), runs_root.c_str());
  return 0;
}

int cmd_replay(const std::string& manifest_arg, const std::string& runs_root) {
  std::string manifest_path = manifest_arg;
  if (std::filesystem::is_directory(manifest_path))
    manifest_path = (std::filesystem::path(manifest_path) / "manifest.json").string();
  RunManifest man = RunManifest::load(manifest_path);
  Config cfg;
  for (const auto& [k, val] : man.config) cfg.set(k, val);
  RunDir run(runs_root, cfg.get("command") + "-replay");
  dispatch(cfg, run);
  Config snapshot;
  for (const auto& [k, val] : man.config) snapshot.set(k, val);
  run.finalize(snapshot, man.seed, 0.0);
  bool ok = true;
  for (const auto& [rel, hash] : man.outputs) {
    const std::string got = run.manifest().outputs.count(rel) ? run.manifest().outputs.at(rel) : "";
    const bool match = got == hash;
    std::printf("%s %s\n", match ? "match:" : "MISMATCH:", rel.c_str());
    ok = ok && match;
  }
  if (run.manifest().outputs.size() != man.outputs.size()) ok = false;
  std::printf("replay %s (%s)\n", ok ? "reproduced byte-identically" : "FAILED",
              run.path().c_str());
  return ok ? 0 : 1;
}

}  // namespace
}  // namespace symlab

int main(int argc, char** argv) {
  using symlab::Config;
  CLI::App app{"desk-scale mechanistic-interpretability laboratory"};
  app.require_subcommand(1);

  std::string runs_root = "runs";
  app.add_option("--runs-dir", runs_root, "output root for run directories");

  Config cfg;
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file");

  // generic option plumbing: every flag lands in the flat config so the
  // manifest captures the full effective command
  auto add = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                 const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&cfg, key](const std::string& v) { cfg.set(key, v); }, help);
  };

  auto* oracle = app.add_subcommand("oracle-build", "write a hand-wired oracle checkpoint");
  add(oracle, "--content", "content", "content vocabulary size");
  add(oracle, "--shots", "shots", "in-context examples");
  add(oracle, "--scale", "scale", "attention saturation scale");
  add(oracle, "--gain", "gain", "retrieval output gain");
  oracle->add_flag_callback("--literal", [&] { cfg.set("literal", "1"); },
                            "build the literal-induction baseline instead");

  auto* train_cmd = app.add_subcommand("train", "train the toy transformer");
  for (const char* k : {"layers", "heads", "d_model", "d_ff", "vocab", "max_seq_len", "steps",
                        "batch", "lr", "warmup", "weight_decay", "shots", "eval_every",
                        "eval_prompts", "target_accuracy", "seed"})
    add(train_cmd, std::string("--") + k, k, k);
  add(train_cmd, "--pos", "pos", "learned_absolute|rotary");
  add(train_cmd, "--norm", "norm", "identity|rmsnorm");
  add(train_cmd, "--tie", "tie", "1 to tie unembedding to embedding (default)");
  add(train_cmd, "--train_embed", "train_embed", "1 to train embeddings (default: frozen when tied)");
  add(train_cmd, "--resample", "resample", "1 to redraw frozen content embeddings each step");

  auto* eval_cmd = app.add_subcommand("eval", "task accuracy with 95% CI");
  for (const char* k : {"checkpoint", "task", "rule", "shots", "n", "seed", "wordsets"})
    add(eval_cmd, std::string("--") + k, k, k);

  auto* cma_cmd = app.add_subcommand("cma", "causal mediation analysis");
  for (const char* k : {"checkpoint", "target", "pairs", "perms", "alpha", "seed", "shots",
                        "condition", "filter_correct"})
    add(cma_cmd, std::string("--") + k, k, k);

  auto* attn_cmd = app.add_subcommand("attn", "aggregated attention maps");
  for (const char* k : {"checkpoint", "heads", "target", "n", "seed", "shots"})
    add(attn_cmd, std::string("--") + k, k, k);

  auto* rsa_cmd = app.add_subcommand("rsa", "representational similarity analysis");
  for (const char* k : {"checkpoint", "heads", "target", "component", "sets", "seed", "shots"})
    add(rsa_cmd, std::string("--") + k, k, k);

  auto* ablate_cmd = app.add_subcommand("ablate", "cumulative head ablation");
  for (const char* k : {"checkpoint", "scores", "condition", "n", "max_heads", "seed", "shots"})
    add(ablate_cmd, std::string("--") + k, k, k);

  auto* prefix_cmd = app.add_subcommand("prefix-match", "prefix-matching scores");
  for (const char* k : {"checkpoint", "tokens", "seeds", "seed"})
    add(prefix_cmd, std::string("--") + k, k, k);

  auto* fv_cmd = app.add_subcommand("fv", "function-vector average indirect effect");
  for (const char* k : {"checkpoint", "mode", "n", "seed", "shots"})
    add(fv_cmd, std::string("--") + k, k, k);

  auto* probe_cmd = app.add_subcommand("probe", "linear probe on head outputs");
  for (const char* k : {"checkpoint", "layer", "head", "n_train", "n_val", "n_test", "seed",
                        "shots", "shuffled"})
    add(probe_cmd, std::string("--") + k, k, k);

  auto* corr_cmd = app.add_subcommand("correlate", "correlate two head-score tables");
  for (const char* k : {"checkpoint", "a", "b", "perms", "seed"})
    add(corr_cmd, std::string("--") + k, k, k);

  auto* report_cmd = app.add_subcommand("report", "index all run artifacts");
  auto* replay_cmd = app.add_subcommand("replay", "re-run a manifest and verify outputs");
  std::string manifest_path;
  replay_cmd->add_option("manifest", manifest_path, "path to manifest.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      Config file_cfg = Config::load(config_path);
      for (const auto& [k, v] : file_cfg.entries())
        if (!cfg.has(k)) cfg.set(k, v);
    }
    if (report_cmd->parsed()) return symlab::cmd_report(runs_root);
    if (replay_cmd->parsed()) return symlab::cmd_replay(manifest_path, runs_root);
    cfg.set("command", app.get_subcommands().front()->get_name());
    return symlab::run_command(cfg, runs_root);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
