#include "symlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace symlab {

void TrainConfig::validate() const {
  if (steps == 0 || batch_size == 0) throw TensorError("TrainConfig: steps/batch_size must be > 0");
  if (resample_embeddings && train_embeddings)
    throw TensorError("TrainConfig: resample_embeddings requires frozen embeddings");
  if (learning_rate <= 0.0) throw TensorError("TrainConfig: learning_rate must be > 0");
  if (weight_decay < 0.0) throw TensorError("TrainConfig: weight_decay must be >= 0");
  if (mixture.empty()) throw TensorError("TrainConfig: empty task mixture");
  double s = 0.0;
  for (const auto& [r, w] : mixture) {
    if (w < 0.0) throw TensorError("TrainConfig: negative mixture weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw TensorError("TrainConfig: mixture weights must sum to 1");
  if (target_accuracy <= 0.0 || target_accuracy > 1.0)
    throw TensorError("TrainConfig: target_accuracy in (0, 1]");
}

PoolSplit split_content_pool(const Vocab& vocab) {
  PoolSplit s;
  std::vector<int> ids = vocab.content_ids();
  for (std::size_t i = 0; i < ids.size(); ++i)
    (i < ids.size() / 2 ? s.train : s.held_out).push_back(ids[i]);
  if (s.train.empty() || s.held_out.empty())
    throw TensorError("split_content_pool: vocabulary too small to split");
  return s;
}

namespace {

struct AdamSlot {
  Tensor* weight;
  ad::Var var;
  Tensor m, v;
};

Rule sample_rule(const std::vector<std::pair<Rule, double>>& mixture, TaskRng& rng) {
  // discretize weights onto a 2^20 grid for a portable draw
  const std::size_t grid = 1u << 20;
  double u = static_cast<double>(rng.below(grid)) / static_cast<double>(grid);
  for (const auto& [r, w] : mixture) {
    if (u < w) return r;
    u -= w;
  }
  return mixture.back().first;
}

}  // namespace

TrainMetrics train(Model& model, const TrainConfig& cfg, const Vocab& vocab,
                   const std::string& metrics_csv) {
  cfg.validate();
  if (model.config().vocab_size < vocab.size())
    throw TensorError("train: model vocab smaller than task vocab");

  // persistent leaves sharing storage layout with the model weights
  Model::VarWeights w;
  std::vector<AdamSlot> slots;
  auto track = [&](Tensor& t, ad::Var& var) {
    var = ad::leaf(t);
    slots.push_back({&t, var, Tensor(t.shape), Tensor(t.shape)});
  };
  if (cfg.train_embeddings)
    track(model.embed, w.embed);
  else
    w.embed = ad::leaf(model.embed, false);
  if (model.config().tie_embeddings)
    w.unembed = ad::leaf(model.unembed, false);  // unused when tied
  else
    track(model.unembed, w.unembed);
  if (model.config().pos_encoding == PosEncoding::kLearnedAbsolute)
    track(model.pos, w.pos);
  else
    w.pos = ad::leaf(model.pos, false);
  w.layers.resize(model.config().n_layers);
  for (std::size_t l = 0; l < model.config().n_layers; ++l) {
    track(model.layers[l].wq, w.layers[l].wq);
    track(model.layers[l].wk, w.layers[l].wk);
    track(model.layers[l].wv, w.layers[l].wv);
    track(model.layers[l].wo, w.layers[l].wo);
    track(model.layers[l].mlp_in, w.layers[l].mlp_in);
    track(model.layers[l].mlp_out, w.layers[l].mlp_out);
  }

  const PoolSplit pools = split_content_pool(vocab);
  TaskRng data_rng(cfg.seed);

  auto held_out_accuracy = [&](std::uint64_t eval_seed) {
    TaskRng eval_rng(eval_seed);
    TaskConfig tcfg;
    tcfg.n_shots = cfg.n_shots;
    tcfg.vocab = &vocab;
    tcfg.pool = pools.held_out;
    auto stream = [&]() {
      tcfg.rule = sample_rule(cfg.mixture, eval_rng);
      auto [p, a] = make_identity_prompt(tcfg, eval_rng);
      return EvalItem{std::move(p), std::move(a), std::nullopt};
    };
    return evaluate_accuracy(model, stream, cfg.eval_prompts, Scoring::kArgmax).accuracy;
  };

  std::ofstream csv;
  if (!metrics_csv.empty()) {
    csv.open(metrics_csv);
    if (!csv) throw TensorError("train: cannot open " + metrics_csv);
    csv << "step,loss,accuracy\n";
  }

  TrainMetrics metrics;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  const Tensor embed_init = model.embed;
  std::mt19937_64 embed_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);
  std::normal_distribution<double> embed_dist(
      0.0, 1.0 / std::sqrt(static_cast<double>(model.config().d_model)));

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& s : slots) s.var->zero_grad();
    if (cfg.resample_embeddings) {
      const std::size_t dm = model.config().d_model;
      for (std::size_t r = Vocab::kReserved; r < model.config().vocab_size; ++r)
        for (std::size_t c = 0; c < dm; ++c) {
          const double v = embed_dist(embed_rng);
          model.embed.at(r, c) = v;
          w.embed->value.at(r, c) = v;
        }
    }

    ad::Var total;
    TaskConfig tcfg;
    tcfg.n_shots = cfg.n_shots;
    tcfg.vocab = &vocab;
    tcfg.pool = pools.train;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      tcfg.rule = sample_rule(cfg.mixture, data_rng);
      auto [prompt, answer] = make_identity_prompt(tcfg, data_rng);
      ad::Var logits = model.forward_ad(prompt.tokens, w);
      ad::Var loss;
      if (cfg.answer_only) {
        loss = ad::cross_entropy(ad::select_rows(logits, {prompt.size() - 1}),
                                 {answer.tokens.front()});
      } else {
        std::vector<std::size_t> rows(prompt.size() - 1);
        std::vector<int> targets(prompt.size() - 1);
        for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
          rows[i] = i;
          targets[i] = prompt.tokens[i + 1];
        }
        // answer target is not part of the prompt; append it
        rows.push_back(prompt.size() - 1);
        targets.push_back(answer.tokens.front());
        loss = ad::cross_entropy(ad::select_rows(logits, rows), targets);
      }
      total = total ? ad::add(total, loss) : loss;
    }
    total = ad::scale(total, 1.0 / static_cast<double>(cfg.batch_size));
    const double loss_val = total->value.at(0, 0);
    if (!std::isfinite(loss_val))
      throw TensorError("train: loss diverged (NaN/inf) at step " + std::to_string(step));
    ad::backward(total);

    const double lr = cfg.learning_rate *
                      (cfg.warmup > 0 ? std::min(1.0, static_cast<double>(step) /
                                                          static_cast<double>(cfg.warmup))
                                      : 1.0);
    b1t *= b1;
    b2t *= b2;
    for (auto& s : slots) {
      Tensor& g = s.var->grad;
      Tensor& val = s.var->value;
      for (std::size_t i = 0; i < val.data.size(); ++i) {
        s.m.data[i] = b1 * s.m.data[i] + (1.0 - b1) * g.data[i];
        s.v.data[i] = b2 * s.v.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
        const double mhat = s.m.data[i] / (1.0 - b1t);
        const double vhat = s.v.data[i] / (1.0 - b2t);
        val.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + cfg.weight_decay * val.data[i]);
      }
      *s.weight = val;  // keep the model tensors in sync for evaluation
    }

    TrainMetrics::Row row{step, loss_val, std::numeric_limits<double>::quiet_NaN()};
    const bool eval_now = cfg.eval_every > 0 && step % cfg.eval_every == 0;
    if (eval_now) {
      row.accuracy = held_out_accuracy(cfg.seed ^ 0x9e3779b97f4a7c15ull ^ step);
      metrics.final_accuracy = row.accuracy;
    }
    metrics.rows.push_back(row);
    metrics.final_step = step;
    metrics.final_loss = loss_val;
    if (csv.is_open()) {
      csv << step << ',' << loss_val << ',';
      if (eval_now) csv << row.accuracy;
      csv << '\n';
    }
    if (eval_now && row.accuracy >= cfg.target_accuracy) {
      metrics.reached_target = true;
      break;
    }
  }
  if (cfg.resample_embeddings) model.embed = embed_init;
  return metrics;
}

AccuracyReport evaluate_accuracy(const Model& m, const std::function<EvalItem()>& stream,
                                 std::size_t n_prompts, Scoring scoring) {
  if (n_prompts == 0) throw TensorError("evaluate_accuracy: n_prompts must be >= 1");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_prompts; ++i) {
    EvalItem item = stream();
    if (scoring == Scoring::kArgmax) {
      std::vector<int> seq = item.prompt.tokens;
      bool ok = true;
      for (int want : item.answer.tokens) {
        Tensor logits = m.forward(seq);
        std::size_t best = 0;
        for (std::size_t t = 1; t < logits.cols(); ++t)
          if (logits.at(0, t) > logits.at(0, best)) best = t;
        if (static_cast<int>(best) != want) {
          ok = false;
          break;
        }
        seq.push_back(want);
      }
      if (ok) ++correct;
    } else {
      if (!item.foil) throw TensorError("evaluate_accuracy: logit comparison needs a foil");
      const double a = score_answer(m, item.prompt.tokens, item.answer);
      const double f = score_answer(m, item.prompt.tokens, *item.foil);
      if (a > f) ++correct;
    }
  }
  AccuracyReport rep;
  rep.n = n_prompts;
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(n_prompts);
  std::tie(rep.ci_low, rep.ci_high) = wilson_interval(correct, n_prompts);
  return rep;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;  // 97.5th normal percentile
  const double p = static_cast<double>(successes) / static_cast<double>(n);
  const double nn = static_cast<double>(n);
  const double denom = 1.0 + z * z / nn;
  const double center = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

}  // namespace symlab
