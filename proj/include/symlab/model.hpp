#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "symlab/autodiff.hpp"
#include "symlab/tensor.hpp"

namespace symlab {

enum class PosEncoding { kLearnedAbsolute, kRotary };
enum class NormKind { kIdentity, kRmsNorm };

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 32;
  std::size_t d_head = 16;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 16;
  std::size_t max_seq_len = 32;
  PosEncoding pos_encoding = PosEncoding::kLearnedAbsolute;
  NormKind norm = NormKind::kRmsNorm;
  /// Use embed^T as the unembedding. Required for held-out-token
  /// generalization: untied unembedding rows of never-seen tokens only
  /// receive negative gradient, so the model can never emit them.
  bool tie_embeddings = false;
  long seed = 0;

  void validate() const;
};

/// Patchable/cachable activation sites inside a forward pass.
/// head_output is the per-head output before the output projection;
/// block_output is the attention sublayer output after the projection,
/// before the residual add; mlp_output is the MLP sublayer output
/// before the residual add.
enum class Component { kHeadOutput, kBlockOutput, kMlpOutput };

struct HookSite {
  std::size_t layer = 0;
  Component component = Component::kHeadOutput;
  std::optional<std::size_t> head;  // required iff component == kHeadOutput
  std::set<std::size_t> positions;
};

struct LayerCache {
  // per head: [seq, d_head] except pattern which is [seq, seq]
  std::vector<Tensor> queries, keys, values, patterns, head_outputs;
  Tensor mlp_output;      // [seq, d_model]
  Tensor block_output;    // [seq, d_model], attention sublayer output
  Tensor residual_post;   // [seq, d_model], after both residual adds
};

struct ActivationCache {
  std::vector<LayerCache> layers;
};

struct LayerWeights {
  Tensor wq, wk, wv;  // [d_model, n_heads*d_head]
  Tensor wo;          // [n_heads*d_head, d_model]
  Tensor mlp_in;      // [d_model, d_ff]
  Tensor mlp_out;     // [d_ff, d_model]
};

/// Decoder-only transformer with causal masking. Weights are immutable
/// during analysis; forward/cache/patch calls share nothing but the
/// weights and may run concurrently.
class Model {
 public:
  Model() = default;
  Model(ModelConfig cfg, long init_seed);  // random init from seed
  explicit Model(ModelConfig cfg);         // zero weights (filled by builders)

  const ModelConfig& config() const { return cfg_; }

  Tensor embed;    // [vocab, d_model]
  Tensor pos;      // [max_seq_len, d_model]; zero rows when rotary
  Tensor unembed;  // [d_model, vocab]
  std::vector<LayerWeights> layers;

  /// Logits at every position, [seq, vocab].
  Tensor forward_all(const std::vector<int>& prompt) const;
  /// Logit vector at the final position.
  Tensor forward(const std::vector<int>& prompt) const;
  Tensor forward_with_cache(const std::vector<int>& prompt, ActivationCache& cache) const;
  /// Runs prompt_c1 substituting activations from `source` at each site.
  Tensor forward_with_patch(const std::vector<int>& prompt_c1, const ActivationCache& source,
                            const std::vector<HookSite>& patches) const;
  Tensor forward_with_patch_all(const std::vector<int>& prompt_c1, const ActivationCache& source,
                                const std::vector<HookSite>& patches,
                                ActivationCache* cache = nullptr) const;
  /// Zero-ablates the given (layer, head) pairs at all positions.
  Tensor forward_ablated_all(const std::vector<int>& prompt,
                             const std::set<std::pair<std::size_t, std::size_t>>& ablate,
                             bool mean_ablation = false,
                             const ActivationCache* mean_source = nullptr) const;

  /// Differentiable forward for training. Weight Vars must be supplied
  /// by Trainer (one Var per weight tensor, same layout as members).
  struct VarWeights {
    ad::Var embed, pos, unembed;
    struct L {
      ad::Var wq, wk, wv, wo, mlp_in, mlp_out;
    };
    std::vector<L> layers;
  };
  ad::Var forward_ad(const std::vector<int>& prompt, const VarWeights& w) const;

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  Tensor run(const std::vector<int>& prompt, ActivationCache* cache, const ActivationCache* source,
             const std::vector<HookSite>* patches,
             const std::set<std::pair<std::size_t, std::size_t>>* ablate, bool mean_ablation,
             const ActivationCache* mean_source) const;
  void check_prompt(const std::vector<int>& prompt) const;

  ModelConfig cfg_;
};

struct AnswerSpec {
  std::vector<int> tokens;
  std::string display;
};

/// Raw logit for single-token answers; teacher-forced joint log
/// probability for multi-token answers. `patches`/`source` apply the
/// same substitutions at every forward involved.
double score_answer(const Model& model, const std::vector<int>& prompt, const AnswerSpec& answer,
                    const ActivationCache* source = nullptr,
                    const std::vector<HookSite>* patches = nullptr);

std::string pos_encoding_name(PosEncoding p);
std::string norm_name(NormKind n);
PosEncoding pos_encoding_from_name(const std::string& s);
NormKind norm_from_name(const std::string& s);

}  // namespace symlab
