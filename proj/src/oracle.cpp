#include "symlab/oracle.hpp"

#include <cmath>

namespace symlab {

namespace {

// Within-example slots used by the positional encoding.
enum Slot { kSlot1 = 0, kSlot2 = 1, kSlot3 = 2, kSep = 3, kBosSlot = 4, kNumSlots = 5 };

/// Subspace layout for the symbolic oracle. The residual stream holds
/// token, position, slot and symbol one-hots; each head's feature space
/// holds the key features it matches on, and values reuse the low dims.
struct Dims {
  std::size_t V, P;
  // residual stream
  std::size_t rtok0, rpos0, rwep0, rsymA, rsymB, d_model;
  // per-head key space
  std::size_t ktok0, kpos0, kwep0, kbindA, kbindB, kexfinal, d_head;
  // per-head value space
  std::size_t vsymA, vsymB, vtok0;

  Dims(std::size_t vocab, std::size_t template_len, std::size_t n_heads) : V(vocab), P(template_len) {
    rtok0 = 0;
    rpos0 = V;
    rwep0 = V + P;
    rsymA = V + P + kNumSlots;
    rsymB = rsymA + 1;
    ktok0 = 0;
    kpos0 = V;
    kwep0 = V + P;
    kbindA = kwep0 + 3;
    kbindB = kbindA + 1;
    kexfinal = kbindB + 1;
    d_head = kexfinal + 1;
    vsymA = 0;
    vsymB = 1;
    vtok0 = 2;
    if (vtok0 + V > d_head) throw TensorError("oracle: value space exceeds d_head");
    d_model = n_heads * d_head;
    if (rsymB + 1 > d_model) throw TensorError("oracle: residual layout exceeds d_model");
  }
};

struct HeadWriter {
  Model& m;
  std::size_t layer, head, d_head;
  void q(std::size_t r, std::size_t k, double v) { m.layers[layer].wq.at(r, head * d_head + k) = v; }
  void k(std::size_t r, std::size_t kk, double v) { m.layers[layer].wk.at(r, head * d_head + kk) = v; }
  void v(std::size_t r, std::size_t vv, double val) { m.layers[layer].wv.at(r, head * d_head + vv) = val; }
  void o(std::size_t vv, std::size_t r, double val) { m.layers[layer].wo.at(head * d_head + vv, r) = val; }
};

/// Slot of each template position, read off a reference prompt.
std::vector<int> template_slots(const Prompt& ref) {
  std::vector<int> slots(ref.size(), kSep);
  for (std::size_t p = 0; p < ref.size(); ++p) {
    const auto& a = ref.annotations[p];
    if (a.role == Role::kBos)
      slots[p] = kBosSlot;
    else if (a.within_example_position >= 1 && a.within_example_position <= 3)
      slots[p] = a.within_example_position - 1;
  }
  return slots;
}

}  // namespace

Model build_symbolic_oracle(const OracleSpec& spec, const Vocab& vocab, OracleHandles* handles) {
  // reference prompt fixes the template geometry; tokens are irrelevant
  TaskConfig tcfg;
  tcfg.rule = Rule::kABA;
  tcfg.n_shots = spec.n_shots;
  tcfg.vocab = &vocab;
  TaskRng rng(0);
  const Prompt ref = make_identity_prompt(tcfg, rng).first;
  const std::vector<int> slots = template_slots(ref);
  const std::size_t P = ref.size();
  const std::size_t P_final = ref.final_position();
  const std::vector<std::size_t> ex_final = ref.example_final_positions();
  const std::vector<std::size_t> q_items = ref.query_item_positions();

  const Dims d(vocab.size(), P, /*n_heads=*/4);
  ModelConfig cfg;
  cfg.n_layers = 3;
  cfg.n_heads = 4;
  cfg.d_head = d.d_head;
  cfg.d_model = d.d_model;
  cfg.d_ff = 8;
  cfg.vocab_size = d.V;
  cfg.max_seq_len = spec.max_seq_len;
  cfg.pos_encoding = PosEncoding::kLearnedAbsolute;
  cfg.norm = NormKind::kIdentity;
  Model m(cfg);

  // embeddings: token one-hot; position one-hot plus slot one-hot for
  // template positions, zero rows beyond the template
  for (std::size_t t = 0; t < d.V; ++t) m.embed.at(t, d.rtok0 + t) = 1.0;
  for (std::size_t p = 0; p < P; ++p) {
    m.pos.at(p, d.rpos0 + p) = 1.0;
    m.pos.at(p, d.rwep0 + static_cast<std::size_t>(slots[p])) = 1.0;
  }
  for (std::size_t t = 0; t < d.V; ++t) m.unembed.at(d.rtok0 + t, t) = 1.0;

  // W_q coefficients are pre-multiplied by sqrt(d_head) so score gaps
  // equal spec.scale after the attention scaling
  const double S = spec.scale * std::sqrt(static_cast<double>(d.d_head));

  {  // symbol abstraction head: writes symA at slot 1, symB at slot 2,
     // and the recurring variable's symbol at slot 3 (via token match)
    HeadWriter h{m, 0, 0, d.d_head};
    for (std::size_t t = 0; t < d.V; ++t) h.k(d.rtok0 + t, d.ktok0 + t, 1.0);
    for (std::size_t p = 0; p < P; ++p) h.k(d.rpos0 + p, d.kpos0 + p, 1.0);
    for (int s = kSlot1; s <= kSlot3; ++s)
      h.k(d.rwep0 + static_cast<std::size_t>(s), d.kwep0 + static_cast<std::size_t>(s), 1.0);

    for (std::size_t t = 0; t < d.V; ++t) h.q(d.rtok0 + t, d.ktok0 + t, S);  // token match
    for (std::size_t p = 0; p < P; ++p) h.q(d.rpos0 + p, d.kpos0 + p, -2.0 * S);  // no self-match
    h.q(d.rwep0 + kSlot1, d.kwep0 + kSlot1, 4.0 * S);
    h.q(d.rwep0 + kSlot2, d.kwep0 + kSlot2, 4.0 * S);
    h.q(d.rwep0 + kSep, d.kpos0 + 0, 4.0 * S);  // separators park on BOS
    h.q(d.rwep0 + kBosSlot, d.kpos0 + 0, 4.0 * S);

    h.v(d.rwep0 + kSlot1, d.vsymA, 1.0);
    h.v(d.rwep0 + kSlot2, d.vsymB, 1.0);
    h.o(d.vsymA, d.rsymA, 1.0);
    h.o(d.vsymB, d.rsymB, 1.0);
  }

  {  // symbolic induction head: the final position reads the rule
     // symbol from the example-final (slot 3) positions
    HeadWriter h{m, 1, 0, d.d_head};
    h.k(d.rwep0 + kSlot3, d.kwep0 + kSlot3, 1.0);
    h.k(d.rpos0 + 0, d.kpos0 + 0, 1.0);

    h.q(d.rpos0 + P_final, d.kwep0 + kSlot3, 4.0 * S);
    for (int s = kSlot1; s < kNumSlots; ++s)
      h.q(d.rwep0 + static_cast<std::size_t>(s), d.kpos0 + 0, 2.0 * S);  // everyone else sinks

    h.v(d.rsymA, d.vsymA, 1.0);
    h.v(d.rsymB, d.vsymB, 1.0);
    h.o(d.vsymA, d.rsymA, 1.0);
    h.o(d.vsymB, d.rsymB, 1.0);
  }

  {  // retrieval head: the final position matches its rule symbol
     // against the bound symbols of the query items and copies the token
    HeadWriter h{m, 2, 0, d.d_head};
    h.k(d.rsymA, d.kbindA, 1.0);
    h.k(d.rsymB, d.kbindB, 1.0);
    for (std::size_t p : q_items) h.k(d.rpos0 + p, d.kexfinal, 1.0);
    h.k(d.rpos0 + 0, d.kpos0 + 0, 1.0);

    h.q(d.rsymA, d.kbindA, 4.0 * S);
    h.q(d.rsymB, d.kbindB, 4.0 * S);
    h.q(d.rpos0 + P_final, d.kexfinal, 4.0 * S);
    for (int s : {kSlot1, kSlot2, kSep, kBosSlot})
      h.q(d.rwep0 + static_cast<std::size_t>(s), d.kpos0 + 0, 6.0 * S);

    for (std::size_t t = 0; t < d.V; ++t) h.v(d.rtok0 + t, d.vtok0 + t, 1.0);
    for (std::size_t t = 0; t < d.V; ++t) h.o(d.vtok0 + t, d.rtok0 + t, spec.retrieval_gain);
  }

  // remaining heads stay all-zero: uniform attention, zero output

  if (handles) {
    handles->template_len = P;
    handles->final_position = P_final;
    handles->example_final_positions = ex_final;
    handles->query_item_positions = q_items;
  }
  return m;
}

Model build_literal_induction_oracle(const Vocab& vocab, std::size_t max_seq_len) {
  const std::size_t V = vocab.size();
  const std::size_t P = max_seq_len;
  // residual: token one-hot, position one-hot, previous-token one-hot
  const std::size_t rtok0 = 0, rpos0 = V, rprev0 = V + P;
  const std::size_t d_head = std::max(P, V);  // keys and values can share dims
  const std::size_t n_heads = (rprev0 + V + d_head - 1) / d_head;  // fit the residual layout
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = n_heads;
  cfg.d_head = d_head;
  cfg.d_model = n_heads * d_head;
  cfg.d_ff = 8;
  cfg.vocab_size = V;
  cfg.max_seq_len = max_seq_len;
  cfg.pos_encoding = PosEncoding::kLearnedAbsolute;
  cfg.norm = NormKind::kIdentity;
  Model m(cfg);

  for (std::size_t t = 0; t < V; ++t) m.embed.at(t, rtok0 + t) = 1.0;
  for (std::size_t p = 0; p < P; ++p) m.pos.at(p, rpos0 + p) = 1.0;
  for (std::size_t t = 0; t < V; ++t) m.unembed.at(rtok0 + t, t) = 1.0;

  const double S = 40.0 * std::sqrt(static_cast<double>(d_head));

  {  // previous-token head
    HeadWriter h{m, 0, 0, d_head};
    for (std::size_t p = 0; p < P; ++p) h.k(rpos0 + p, p, 1.0);
    h.q(rpos0 + 0, 0, S);  // BOS attends itself
    for (std::size_t p = 1; p < P; ++p) h.q(rpos0 + p, p - 1, S);
    for (std::size_t t = 0; t < V; ++t) h.v(rtok0 + t, t, 1.0);
    for (std::size_t t = 0; t < V; ++t) h.o(t, rprev0 + t, 1.0);
  }
  {  // literal induction head: match own token against previous-token keys
    HeadWriter h{m, 1, 0, d_head};
    for (std::size_t t = 0; t < V; ++t) h.k(rprev0 + t, t, 1.0);
    for (std::size_t t = 0; t < V; ++t) h.q(rtok0 + t, t, S);
    for (std::size_t t = 0; t < V; ++t) h.v(rtok0 + t, t, 1.0);
    for (std::size_t t = 0; t < V; ++t) h.o(t, rtok0 + t, 10.0);
  }
  return m;
}

}  // namespace symlab
