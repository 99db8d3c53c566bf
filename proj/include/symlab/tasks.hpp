#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "symlab/model.hpp"

namespace symlab {

/// Token table. Ids 0..6 are reserved (BOS and separators) and are
/// never sampled as content tokens.
class Vocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kCaret = 1;    // '^'
  static constexpr int kNewline = 2;  // '\n'
  static constexpr int kLBracket = 3;
  static constexpr int kRBracket = 4;
  static constexpr int kColon = 5;
  static constexpr int kSpace = 6;
  static constexpr int kReserved = 7;

  static Vocab synthetic(std::size_t n_content);
  static Vocab letters();  // a..z as content tokens
  static Vocab from_content_strings(const std::vector<std::string>& content);

  int id(const std::string& s) const;
  const std::string& str(int id) const;
  std::size_t size() const { return id_to_str_.size(); }
  std::size_t n_content() const { return size() - kReserved; }
  bool is_content(int id) const { return id >= kReserved && id < static_cast<int>(size()); }
  /// All content ids, in id order.
  std::vector<int> content_ids() const;

 private:
  std::vector<std::string> id_to_str_;
  std::map<std::string, int> str_to_id_;
};

enum class Rule { kABA, kABB, kAABA, kABCB, kABCC, kSuccessor, kPredecessor, kSynonym, kAntonym };

std::string rule_name(Rule r);
Rule rule_from_name(const std::string& s);
/// Variable index (0=A,1=B,2=C) per item of an identity rule.
std::vector<int> rule_roles(Rule r);

enum class Role { kBos, kA, kB, kC, kSeparator, kQueryBlank };

struct PositionAnnotation {
  int example_index = -1;            // -1 for BOS
  int within_example_position = 0;   // 1-based item slot; 0 for non-items
  Role role = Role::kSeparator;
};

struct Prompt {
  std::vector<int> tokens;
  std::vector<PositionAnnotation> annotations;

  std::size_t size() const { return tokens.size(); }
  /// Positions of the final item in each in-context example.
  std::vector<std::size_t> example_final_positions() const;
  /// Positions of items in the final (query) example.
  std::vector<std::size_t> query_item_positions() const;
  std::size_t final_position() const { return tokens.size() - 1; }
};

struct TaskConfig {
  Rule rule = Rule::kABA;
  std::size_t n_shots = 2;
  std::uint64_t seed = 0;
  const Vocab* vocab = nullptr;
  /// Content ids to sample from; empty means all content ids.
  std::vector<int> pool;
};

enum class PairCondition { kAbstract, kToken };
enum class TargetHeadType { kAbstraction, kSymbolicInduction, kRetrieval };
enum class PatchMode { kSimultaneous, kSumPerPosition };

std::string target_name(TargetHeadType t);
TargetHeadType target_from_name(const std::string& s);

struct ContextPair {
  Prompt c1, c2;
  AnswerSpec y_c1;       // correct answer for c1
  AnswerSpec y_c1_star;  // expected answer for the patched context
  AnswerSpec y_c2;       // correct answer for c2 (teacher-forcing the source cache)
  PairCondition condition = PairCondition::kAbstract;
  TargetHeadType target = TargetHeadType::kAbstraction;
  std::vector<std::size_t> patch_positions;
  PatchMode patch_mode = PatchMode::kSimultaneous;
};

/// Deterministic generator state; independent seeds are independent streams.
class TaskRng {
 public:
  explicit TaskRng(std::uint64_t seed) : rng_(seed) {}
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  /// k distinct samples from ids, order randomized.
  std::vector<int> sample_distinct(const std::vector<int>& ids, std::size_t k);
  std::mt19937_64& raw() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

std::pair<Prompt, AnswerSpec> make_identity_prompt(const TaskConfig& cfg, TaskRng& rng);
ContextPair make_abstract_pair(const TaskConfig& cfg, TaskRng& rng,
                               TargetHeadType target = TargetHeadType::kAbstraction);
ContextPair make_token_pair(const TaskConfig& cfg, TaskRng& rng);

struct WordSet {
  std::string syn_a1, syn_a2, ant_b1, ant_b2;
};
std::vector<WordSet> load_wordsets(const std::string& path);

std::pair<Prompt, AnswerSpec> make_letter_prompt(const TaskConfig& cfg, TaskRng& rng);
ContextPair make_letter_pair(const TaskConfig& cfg, TaskRng& rng, TargetHeadType target);

/// Verbal-analogy prompt; returns prompt, correct answer, and the
/// wrong-relation foil used by logit-comparison scoring.
struct VerbalPrompt {
  Prompt prompt;
  AnswerSpec answer;
  AnswerSpec foil;
};
VerbalPrompt make_verbal_prompt(const TaskConfig& cfg, const std::vector<WordSet>& sets,
                                TaskRng& rng);
ContextPair make_verbal_pair(const TaskConfig& cfg, const std::vector<WordSet>& sets, TaskRng& rng,
                             TargetHeadType target);

/// Display string of a prompt (BOS omitted), e.g. "X^Y^X\nP^Q^P\nks^ixe^".
std::string render_prompt(const Vocab& v, const Prompt& p);
/// Inverse of render_prompt for identity-rule prompts.
Prompt parse_identity_prompt(const Vocab& v, const std::string& text);

/// JSON-lines dump {tokens, annotations, answer}.
std::string prompt_to_jsonl(const Vocab& v, const Prompt& p, const AnswerSpec& answer);

}  // namespace symlab
