#include "symlab/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace symlab {

namespace k = symlab::kernels;
using json = nlohmann::ordered_json;

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_head == 0 || vocab_size == 0 ||
      max_seq_len == 0 || d_ff == 0)
    throw TensorError("ModelConfig: zero extent");
  if (n_heads * d_head != d_model)
    throw TensorError("ModelConfig: n_heads * d_head != d_model");
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  embed = Tensor({cfg_.vocab_size, cfg_.d_model});
  pos = Tensor({cfg_.max_seq_len, cfg_.d_model});
  unembed = Tensor({cfg_.d_model, cfg_.vocab_size});
  layers.resize(cfg_.n_layers);
  for (auto& l : layers) {
    l.wq = Tensor({cfg_.d_model, cfg_.n_heads * cfg_.d_head});
    l.wk = Tensor({cfg_.d_model, cfg_.n_heads * cfg_.d_head});
    l.wv = Tensor({cfg_.d_model, cfg_.n_heads * cfg_.d_head});
    l.wo = Tensor({cfg_.n_heads * cfg_.d_head, cfg_.d_model});
    l.mlp_in = Tensor({cfg_.d_model, cfg_.d_ff});
    l.mlp_out = Tensor({cfg_.d_ff, cfg_.d_model});
  }
}

Model::Model(ModelConfig cfg, long init_seed) : Model(cfg) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(init_seed));
  std::normal_distribution<double> dist(0.0, 1.0);
  auto fill = [&](Tensor& t, double std) {
    for (double& v : t.data) v = std * dist(rng);
  };
  const double ws = 0.5 / std::sqrt(static_cast<double>(cfg_.d_model));
  // tied embeddings double as the readout, so give them unit row norm
  fill(embed, cfg_.tie_embeddings ? 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)) : 0.02);
  if (cfg_.pos_encoding == PosEncoding::kLearnedAbsolute) fill(pos, 0.02);
  fill(unembed, ws);
  for (auto& l : layers) {
    fill(l.wq, ws);
    fill(l.wk, ws);
    fill(l.wv, ws);
    fill(l.wo, ws);
    fill(l.mlp_in, ws);
    fill(l.mlp_out, 0.5 / std::sqrt(static_cast<double>(cfg_.d_ff)));
  }
}

void Model::check_prompt(const std::vector<int>& prompt) const {
  if (prompt.empty()) throw TensorError("forward: empty prompt");
  if (prompt.size() > cfg_.max_seq_len)
    throw TensorError("forward: prompt length " + std::to_string(prompt.size()) +
                      " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  for (int t : prompt)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size)
      throw TensorError("forward: token " + std::to_string(t) + " out of vocab");
}

namespace {

Tensor apply_norm(const Tensor& x, NormKind n) {
  return n == NormKind::kRmsNorm ? k::rmsnorm_rows(x) : x;
}

void patch_rows(Tensor& dst, const Tensor& src, const std::set<std::size_t>& positions) {
  if (src.rows() != dst.rows() || src.cols() != dst.cols())
    throw TensorError("patch: source activation shape mismatch (pairing error)");
  const std::size_t c = dst.cols();
  for (std::size_t p : positions) {
    if (p >= dst.rows()) throw TensorError("patch: position out of range");
    std::copy(src.data.data() + p * c, src.data.data() + (p + 1) * c, dst.data.data() + p * c);
  }
}

}  // namespace

Tensor Model::run(const std::vector<int>& prompt, ActivationCache* cache,
                  const ActivationCache* source, const std::vector<HookSite>* patches,
                  const std::set<std::pair<std::size_t, std::size_t>>* ablate, bool mean_ablation,
                  const ActivationCache* mean_source) const {
  check_prompt(prompt);
  const std::size_t seq = prompt.size();
  const std::size_t dh = cfg_.d_head;

  // organize patch lookup
  std::map<std::pair<std::size_t, std::size_t>, std::set<std::size_t>> head_patches;
  std::map<std::size_t, std::set<std::size_t>> block_patches, mlp_patches;
  if (patches) {
    if (!source) throw TensorError("patch: missing source cache");
    if (source->layers.size() != cfg_.n_layers)
      throw TensorError("patch: source cache layer count mismatch");
    for (const auto& s : *patches) {
      if (s.layer >= cfg_.n_layers) throw TensorError("patch: layer out of range");
      for (std::size_t p : s.positions)
        if (p >= seq) throw TensorError("patch: position out of range");
      switch (s.component) {
        case Component::kHeadOutput:
          if (!s.head) throw TensorError("patch: head index required for head_output");
          if (*s.head >= cfg_.n_heads) throw TensorError("patch: head out of range");
          head_patches[{s.layer, *s.head}].insert(s.positions.begin(), s.positions.end());
          break;
        case Component::kBlockOutput:
          block_patches[s.layer].insert(s.positions.begin(), s.positions.end());
          break;
        case Component::kMlpOutput:
          mlp_patches[s.layer].insert(s.positions.begin(), s.positions.end());
          break;
      }
    }
  }

  std::vector<std::size_t> positions(seq);
  for (std::size_t i = 0; i < seq; ++i) positions[i] = i;

  Tensor x = k::embedding_lookup(embed, prompt);
  if (cfg_.pos_encoding == PosEncoding::kLearnedAbsolute) {
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t j = 0; j < cfg_.d_model; ++j) x.at(i, j) += pos.at(i, j);
  }

  if (cache) cache->layers.assign(cfg_.n_layers, LayerCache{});

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const LayerWeights& w = layers[l];
    Tensor xn = apply_norm(x, cfg_.norm);
    Tensor q_all = k::matmul(xn, w.wq);
    Tensor k_all = k::matmul(xn, w.wk);
    Tensor v_all = k::matmul(xn, w.wv);

    Tensor concat({seq, cfg_.n_heads * dh});
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) {
      lc->queries.resize(cfg_.n_heads);
      lc->keys.resize(cfg_.n_heads);
      lc->values.resize(cfg_.n_heads);
      lc->patterns.resize(cfg_.n_heads);
      lc->head_outputs.resize(cfg_.n_heads);
    }
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      Tensor q({seq, dh}), kk({seq, dh}), v({seq, dh});
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < dh; ++j) {
          q.at(i, j) = q_all.at(i, h * dh + j);
          kk.at(i, j) = k_all.at(i, h * dh + j);
          v.at(i, j) = v_all.at(i, h * dh + j);
        }
      if (cfg_.pos_encoding == PosEncoding::kRotary) {
        q = ad::rotary_forward(q, positions, 10000.0);
        kk = ad::rotary_forward(kk, positions, 10000.0);
      }
      Tensor scores = k::scale(k::matmul_nt(q, kk), inv_sqrt_dh);
      Tensor pattern = k::softmax_rows_causal(scores);
      Tensor ho = k::matmul(pattern, v);

      if (ablate && ablate->count({l, h})) {
        if (mean_ablation) {
          const Tensor& ref = mean_source ? mean_source->layers[l].head_outputs[h] : ho;
          std::vector<double> mean(dh, 0.0);
          for (std::size_t i = 0; i < ref.rows(); ++i)
            for (std::size_t j = 0; j < dh; ++j) mean[j] += ref.at(i, j);
          for (std::size_t j = 0; j < dh; ++j) mean[j] /= static_cast<double>(ref.rows());
          for (std::size_t i = 0; i < seq; ++i)
            for (std::size_t j = 0; j < dh; ++j) ho.at(i, j) = mean[j];
        } else {
          std::fill(ho.data.begin(), ho.data.end(), 0.0);
        }
      }
      auto hp = head_patches.find({l, h});
      if (hp != head_patches.end())
        patch_rows(ho, source->layers[l].head_outputs[h], hp->second);

      if (lc) {
        lc->queries[h] = q;
        lc->keys[h] = kk;
        lc->values[h] = v;
        lc->patterns[h] = pattern;
        lc->head_outputs[h] = ho;
      }
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < dh; ++j) concat.at(i, h * dh + j) = ho.at(i, j);
    }
    Tensor attn = k::matmul(concat, w.wo);
    auto bp = block_patches.find(l);
    if (bp != block_patches.end()) patch_rows(attn, source->layers[l].block_output, bp->second);
    if (lc) lc->block_output = attn;
    x = k::add(x, attn);

    Tensor xn2 = apply_norm(x, cfg_.norm);
    Tensor mlp = k::matmul(k::gelu(k::matmul(xn2, w.mlp_in)), w.mlp_out);
    auto mp = mlp_patches.find(l);
    if (mp != mlp_patches.end()) patch_rows(mlp, source->layers[l].mlp_output, mp->second);
    if (lc) lc->mlp_output = mlp;
    x = k::add(x, mlp);
    if (lc) lc->residual_post = x;
  }

  Tensor logits = cfg_.tie_embeddings ? k::matmul_nt(apply_norm(x, cfg_.norm), embed)
                                      : k::matmul(apply_norm(x, cfg_.norm), unembed);
  logits.check_finite("logits");
  return logits;
}

Tensor Model::forward_all(const std::vector<int>& prompt) const {
  return run(prompt, nullptr, nullptr, nullptr, nullptr, false, nullptr);
}

Tensor Model::forward(const std::vector<int>& prompt) const {
  Tensor all = forward_all(prompt);
  const std::size_t v = all.cols();
  Tensor out({1, v});
  std::copy(all.data.end() - static_cast<long>(v), all.data.end(), out.data.begin());
  return out;
}

Tensor Model::forward_with_cache(const std::vector<int>& prompt, ActivationCache& cache) const {
  Tensor all = run(prompt, &cache, nullptr, nullptr, nullptr, false, nullptr);
  const std::size_t v = all.cols();
  Tensor out({1, v});
  std::copy(all.data.end() - static_cast<long>(v), all.data.end(), out.data.begin());
  return out;
}

Tensor Model::forward_with_patch_all(const std::vector<int>& prompt_c1,
                                     const ActivationCache& source,
                                     const std::vector<HookSite>& patches,
                                     ActivationCache* cache) const {
  return run(prompt_c1, cache, &source, &patches, nullptr, false, nullptr);
}

Tensor Model::forward_with_patch(const std::vector<int>& prompt_c1, const ActivationCache& source,
                                 const std::vector<HookSite>& patches) const {
  Tensor all = forward_with_patch_all(prompt_c1, source, patches);
  const std::size_t v = all.cols();
  Tensor out({1, v});
  std::copy(all.data.end() - static_cast<long>(v), all.data.end(), out.data.begin());
  return out;
}

Tensor Model::forward_ablated_all(const std::vector<int>& prompt,
                                  const std::set<std::pair<std::size_t, std::size_t>>& ablate,
                                  bool mean_ablation, const ActivationCache* mean_source) const {
  return run(prompt, nullptr, nullptr, nullptr, &ablate, mean_ablation, mean_source);
}

ad::Var Model::forward_ad(const std::vector<int>& prompt, const VarWeights& w) const {
  check_prompt(prompt);
  const std::size_t seq = prompt.size();
  const std::size_t dh = cfg_.d_head;
  std::vector<std::size_t> positions(seq);
  for (std::size_t i = 0; i < seq; ++i) positions[i] = i;

  ad::Var x = ad::embedding(w.embed, prompt);
  if (cfg_.pos_encoding == PosEncoding::kLearnedAbsolute) {
    std::vector<int> pos_ids(seq);
    for (std::size_t i = 0; i < seq; ++i) pos_ids[i] = static_cast<int>(i);
    x = ad::add(x, ad::embedding(w.pos, pos_ids));
  }
  auto norm = [&](const ad::Var& v) {
    return cfg_.norm == NormKind::kRmsNorm ? ad::rmsnorm_rows(v) : v;
  };
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const auto& lw = w.layers[l];
    ad::Var xn = norm(x);
    ad::Var q_all = ad::matmul(xn, lw.wq);
    ad::Var k_all = ad::matmul(xn, lw.wk);
    ad::Var v_all = ad::matmul(xn, lw.wv);
    std::vector<ad::Var> heads(cfg_.n_heads);
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      ad::Var q = ad::slice_cols(q_all, h * dh, dh);
      ad::Var kk = ad::slice_cols(k_all, h * dh, dh);
      ad::Var v = ad::slice_cols(v_all, h * dh, dh);
      if (cfg_.pos_encoding == PosEncoding::kRotary) {
        q = ad::rotary(q, positions);
        kk = ad::rotary(kk, positions);
      }
      ad::Var pattern = ad::softmax_rows_causal(ad::scale(ad::matmul_nt(q, kk), inv_sqrt_dh));
      heads[h] = ad::matmul(pattern, v);
    }
    x = ad::add(x, ad::matmul(ad::concat_cols(heads), lw.wo));
    ad::Var mlp = ad::matmul(ad::gelu(ad::matmul(norm(x), lw.mlp_in)), lw.mlp_out);
    x = ad::add(x, mlp);
  }
  if (cfg_.tie_embeddings) return ad::matmul_nt(norm(x), w.embed);
  return ad::matmul(norm(x), w.unembed);
}

double score_answer(const Model& model, const std::vector<int>& prompt, const AnswerSpec& answer,
                    const ActivationCache* source, const std::vector<HookSite>* patches) {
  if (answer.tokens.empty()) throw TensorError("score_answer: empty answer");
  auto run_all = [&](const std::vector<int>& seq) {
    if (patches) return model.forward_with_patch_all(seq, *source, *patches);
    return model.forward_all(seq);
  };
  if (answer.tokens.size() == 1) {
    Tensor all = run_all(prompt);
    return all.at(all.rows() - 1, static_cast<std::size_t>(answer.tokens[0]));
  }
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), answer.tokens.begin(), answer.tokens.end() - 1);
  Tensor all = run_all(seq);
  Tensor ls = kernels::log_softmax_rows(all);
  double lp = 0.0;
  for (std::size_t t = 0; t < answer.tokens.size(); ++t)
    lp += ls.at(prompt.size() - 1 + t, static_cast<std::size_t>(answer.tokens[t]));
  return lp;
}

std::string pos_encoding_name(PosEncoding p) {
  return p == PosEncoding::kRotary ? "rotary" : "learned_absolute";
}
std::string norm_name(NormKind n) { return n == NormKind::kRmsNorm ? "rmsnorm" : "identity"; }

PosEncoding pos_encoding_from_name(const std::string& s) {
  if (s == "rotary") return PosEncoding::kRotary;
  if (s == "learned_absolute") return PosEncoding::kLearnedAbsolute;
  throw TensorError("unknown pos_encoding: " + s);
}
NormKind norm_from_name(const std::string& s) {
  if (s == "rmsnorm") return NormKind::kRmsNorm;
  if (s == "identity") return NormKind::kIdentity;
  throw TensorError("unknown norm: " + s);
}

namespace {

json tensor_to_json(const Tensor& t) { return json(t.data); }

void tensor_from_json(const json& j, Tensor& t) {
  std::vector<double> d = j.get<std::vector<double>>();
  if (d.size() != t.size())
    throw TensorError("checkpoint: weight length mismatch, got " + std::to_string(d.size()) +
                      " want " + std::to_string(t.size()));
  t.data = std::move(d);
}

}  // namespace

void Model::save(const std::string& path) const {
  json j;
  j["version"] = 1;
  json c;
  c["n_layers"] = cfg_.n_layers;
  c["n_heads"] = cfg_.n_heads;
  c["d_model"] = cfg_.d_model;
  c["d_head"] = cfg_.d_head;
  c["d_ff"] = cfg_.d_ff;
  c["vocab_size"] = cfg_.vocab_size;
  c["max_seq_len"] = cfg_.max_seq_len;
  c["pos_encoding"] = pos_encoding_name(cfg_.pos_encoding);
  c["norm"] = norm_name(cfg_.norm);
  c["tie_embeddings"] = cfg_.tie_embeddings;
  c["seed"] = cfg_.seed;
  j["config"] = c;
  json w;
  w["embed"] = tensor_to_json(embed);
  w["pos"] = tensor_to_json(pos);
  w["unembed"] = tensor_to_json(unembed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    w[p + "attn.q"] = tensor_to_json(layers[l].wq);
    w[p + "attn.k"] = tensor_to_json(layers[l].wk);
    w[p + "attn.v"] = tensor_to_json(layers[l].wv);
    w[p + "attn.o"] = tensor_to_json(layers[l].wo);
    w[p + "mlp.in"] = tensor_to_json(layers[l].mlp_in);
    w[p + "mlp.out"] = tensor_to_json(layers[l].mlp_out);
  }
  j["weights"] = w;
  std::ofstream f(path);
  if (!f) throw TensorError("save: cannot open " + path);
  f << j.dump() << "\n";
}

Model Model::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("load: cannot open " + path);
  json j = json::parse(f);
  if (j.at("version").get<int>() != 1) throw TensorError("load: unsupported checkpoint version");
  const json& c = j.at("config");
  ModelConfig cfg;
  cfg.n_layers = c.at("n_layers").get<std::size_t>();
  cfg.n_heads = c.at("n_heads").get<std::size_t>();
  cfg.d_model = c.at("d_model").get<std::size_t>();
  cfg.d_head = c.at("d_head").get<std::size_t>();
  cfg.d_ff = c.at("d_ff").get<std::size_t>();
  cfg.vocab_size = c.at("vocab_size").get<std::size_t>();
  cfg.max_seq_len = c.at("max_seq_len").get<std::size_t>();
  cfg.pos_encoding = pos_encoding_from_name(c.at("pos_encoding").get<std::string>());
  cfg.norm = norm_from_name(c.at("norm").get<std::string>());
  cfg.tie_embeddings = c.value("tie_embeddings", false);
  cfg.seed = c.at("seed").get<long>();
  Model m(cfg);
  const json& w = j.at("weights");
  tensor_from_json(w.at("embed"), m.embed);
  tensor_from_json(w.at("pos"), m.pos);
  tensor_from_json(w.at("unembed"), m.unembed);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    tensor_from_json(w.at(p + "attn.q"), m.layers[l].wq);
    tensor_from_json(w.at(p + "attn.k"), m.layers[l].wk);
    tensor_from_json(w.at(p + "attn.v"), m.layers[l].wv);
    tensor_from_json(w.at(p + "attn.o"), m.layers[l].wo);
    tensor_from_json(w.at(p + "mlp.in"), m.layers[l].mlp_in);
    tensor_from_json(w.at(p + "mlp.out"), m.layers[l].mlp_out);
  }
  return m;
}

}  // namespace symlab
