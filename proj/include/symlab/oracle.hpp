#pragma once

#include "symlab/model.hpp"
#include "symlab/tasks.hpp"

namespace symlab {

/// Parameters for the hand-wired three-stage transformer.
struct OracleSpec {
  std::size_t n_shots = 2;
  /// Attention saturation: score gaps of `scale` after the 1/sqrt(d_head)
  /// scaling, so off-target attention mass is ~exp(-scale).
  double scale = 40.0;
  /// Output gain of the retrieval head; must exceed the logit the final
  /// position's own token embedding produces (which is 1).
  double retrieval_gain = 10.0;
  std::size_t max_seq_len = 128;
};

/// Locations of the three wired heads and the template positions the
/// wiring assumes (identity prompts with `n_shots` in-context examples).
struct OracleHandles {
  std::pair<std::size_t, std::size_t> abstraction{0, 0};
  std::pair<std::size_t, std::size_t> induction{1, 0};
  std::pair<std::size_t, std::size_t> retrieval{2, 0};
  std::size_t template_len = 0;
  std::size_t final_position = 0;
  std::vector<std::size_t> example_final_positions;
  std::vector<std::size_t> query_item_positions;
};

/// Three-layer oracle implementing symbol abstraction (layer 0, head 0),
/// symbolic induction (layer 1, head 0) and retrieval (layer 2, head 0)
/// for ABA/ABB identity prompts over `vocab`. All other heads are inert
/// (zero output), MLPs are zero, norms are identity.
Model build_symbolic_oracle(const OracleSpec& spec, const Vocab& vocab,
                            OracleHandles* handles = nullptr);

/// Two-layer literal-copy baseline: layer 0 head 0 is a previous-token
/// head, layer 1 head 0 is a literal induction head that continues any
/// repeated token sequence. Used as the positive control for the
/// prefix-matching analysis.
Model build_literal_induction_oracle(const Vocab& vocab, std::size_t max_seq_len = 128);

}  // namespace symlab
