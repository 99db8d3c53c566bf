#include "symlab/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace symlab {

Vocab Vocab::from_content_strings(const std::vector<std::string>& content) {
  Vocab v;
  v.id_to_str_ = {"<bos>", "^", "\n", "[", "]", ":", " "};
  for (const auto& s : content) v.id_to_str_.push_back(s);
  for (std::size_t i = 0; i < v.id_to_str_.size(); ++i) {
    if (!v.str_to_id_.emplace(v.id_to_str_[i], static_cast<int>(i)).second)
      throw TensorError("Vocab: duplicate token string '" + v.id_to_str_[i] + "'");
  }
  return v;
}

Vocab Vocab::synthetic(std::size_t n_content) {
  std::vector<std::string> content;
  content.reserve(n_content);
  for (std::size_t i = 0; i < n_content; ++i) content.push_back("t" + std::to_string(i));
  return from_content_strings(content);
}

Vocab Vocab::letters() {
  std::vector<std::string> content;
  for (char c = 'a'; c <= 'z'; ++c) content.push_back(std::string(1, c));
  return from_content_strings(content);
}

int Vocab::id(const std::string& s) const {
  auto it = str_to_id_.find(s);
  if (it == str_to_id_.end()) throw TensorError("Vocab: unknown token '" + s + "'");
  return it->second;
}

const std::string& Vocab::str(int id) const {
  if (id < 0 || id >= static_cast<int>(id_to_str_.size()))
    throw TensorError("Vocab: id out of range");
  return id_to_str_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::content_ids() const {
  std::vector<int> ids;
  for (int i = kReserved; i < static_cast<int>(size()); ++i) ids.push_back(i);
  return ids;
}

std::string rule_name(Rule r) {
  switch (r) {
    case Rule::kABA: return "ABA";
    case Rule::kABB: return "ABB";
    case Rule::kAABA: return "AABA";
    case Rule::kABCB: return "ABCB";
    case Rule::kABCC: return "ABCC";
    case Rule::kSuccessor: return "successor";
    case Rule::kPredecessor: return "predecessor";
    case Rule::kSynonym: return "synonym";
    case Rule::kAntonym: return "antonym";
  }
  return "?";
}

Rule rule_from_name(const std::string& s) {
  for (Rule r : {Rule::kABA, Rule::kABB, Rule::kAABA, Rule::kABCB, Rule::kABCC, Rule::kSuccessor,
                 Rule::kPredecessor, Rule::kSynonym, Rule::kAntonym})
    if (rule_name(r) == s) return r;
  throw TensorError("unknown rule: " + s);
}

std::vector<int> rule_roles(Rule r) {
  switch (r) {
    case Rule::kABA: return {0, 1, 0};
    case Rule::kABB: return {0, 1, 1};
    case Rule::kAABA: return {0, 0, 1, 0};
    case Rule::kABCB: return {0, 1, 2, 1};
    case Rule::kABCC: return {0, 1, 2, 2};
    default: throw TensorError("rule_roles: not an identity rule: " + rule_name(r));
  }
}

std::string target_name(TargetHeadType t) {
  switch (t) {
    case TargetHeadType::kAbstraction: return "abstraction";
    case TargetHeadType::kSymbolicInduction: return "induction";
    case TargetHeadType::kRetrieval: return "retrieval";
  }
  return "?";
}

TargetHeadType target_from_name(const std::string& s) {
  if (s == "abstraction") return TargetHeadType::kAbstraction;
  if (s == "induction") return TargetHeadType::kSymbolicInduction;
  if (s == "retrieval") return TargetHeadType::kRetrieval;
  throw TensorError("unknown target: " + s);
}

std::vector<std::size_t> Prompt::example_final_positions() const {
  // final item slot of each complete (in-context) example
  int max_slot_per_example = 0;
  int n_examples = 0;
  for (const auto& a : annotations) {
    n_examples = std::max(n_examples, a.example_index + 1);
    if (a.within_example_position > 0)
      max_slot_per_example = std::max(max_slot_per_example, a.within_example_position);
  }
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < annotations.size(); ++p) {
    const auto& a = annotations[p];
    if (a.example_index >= 0 && a.example_index < n_examples - 1 &&
        a.within_example_position == max_slot_per_example)
      out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> Prompt::query_item_positions() const {
  int n_examples = 0;
  for (const auto& a : annotations) n_examples = std::max(n_examples, a.example_index + 1);
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < annotations.size(); ++p) {
    const auto& a = annotations[p];
    if (a.example_index == n_examples - 1 && a.within_example_position > 0) out.push_back(p);
  }
  return out;
}

std::size_t TaskRng::below(std::size_t n) {
  if (n == 0) throw TensorError("TaskRng: empty range");
  // fixed-width rejection sampling; portable across standard libraries
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

std::vector<int> TaskRng::sample_distinct(const std::vector<int>& ids, std::size_t k) {
  if (k > ids.size())
    throw TensorError("sample_distinct: pool exhausted (" + std::to_string(ids.size()) +
                      " < " + std::to_string(k) + ")");
  std::vector<int> pool = ids;
  std::vector<int> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = below(pool.size());
    out.push_back(pool[j]);
    pool[j] = pool.back();
    pool.pop_back();
  }
  return out;
}

namespace {

const std::vector<int>& content_pool(const TaskConfig& cfg, std::vector<int>& storage) {
  if (!cfg.vocab) throw TensorError("TaskConfig: vocab not set");
  if (!cfg.pool.empty()) return cfg.pool;
  storage = cfg.vocab->content_ids();
  return storage;
}

Role role_of(int var) {
  return var == 0 ? Role::kA : (var == 1 ? Role::kB : Role::kC);
}

/// Builds an identity prompt from per-example variable->token maps.
/// vars[e][v] is the token for variable v in example e. The last
/// example is the query, truncated before its final item.
Prompt build_identity(const std::vector<std::vector<int>>& vars, Rule rule) {
  const std::vector<int> roles = rule_roles(rule);
  Prompt p;
  p.tokens.push_back(Vocab::kBos);
  p.annotations.push_back({-1, 0, Role::kBos});
  const int n_examples = static_cast<int>(vars.size());
  for (int e = 0; e < n_examples; ++e) {
    const bool query = (e == n_examples - 1);
    const std::size_t n_items = query ? roles.size() - 1 : roles.size();
    for (std::size_t i = 0; i < n_items; ++i) {
      p.tokens.push_back(vars[static_cast<std::size_t>(e)][static_cast<std::size_t>(roles[i])]);
      p.annotations.push_back({e, static_cast<int>(i) + 1, role_of(roles[i])});
      p.tokens.push_back(Vocab::kCaret);
      p.annotations.push_back(
          {e, 0, (query && i + 1 == n_items) ? Role::kQueryBlank : Role::kSeparator});
    }
    if (!query) {
      // replace trailing caret with newline after the final item
      p.tokens.back() = Vocab::kNewline;
    }
  }
  return p;
}

AnswerSpec one_token_answer(const Vocab& v, int id) { return {{id}, v.str(id)}; }

int identity_answer_token(const std::vector<int>& example_vars, Rule rule) {
  const std::vector<int> roles = rule_roles(rule);
  return example_vars[static_cast<std::size_t>(roles.back())];
}

std::vector<std::vector<int>> sample_identity_vars(const TaskConfig& cfg, TaskRng& rng) {
  const std::vector<int> roles = rule_roles(cfg.rule);
  const std::size_t n_vars =
      static_cast<std::size_t>(*std::max_element(roles.begin(), roles.end())) + 1;
  std::vector<int> storage;
  const auto& pool = content_pool(cfg, storage);
  std::vector<int> flat = rng.sample_distinct(pool, n_vars * (cfg.n_shots + 1));
  std::vector<std::vector<int>> vars(cfg.n_shots + 1);
  for (std::size_t e = 0; e <= cfg.n_shots; ++e)
    vars[e] = {flat.begin() + static_cast<long>(e * n_vars),
               flat.begin() + static_cast<long>((e + 1) * n_vars)};
  return vars;
}

Rule opposite_rule(Rule r) {
  if (r == Rule::kABA) return Rule::kABB;
  if (r == Rule::kABB) return Rule::kABA;
  throw TensorError("opposite_rule: only ABA/ABB");
}

}  // namespace

std::pair<Prompt, AnswerSpec> make_identity_prompt(const TaskConfig& cfg, TaskRng& rng) {
  if (cfg.n_shots < 1) throw TensorError("make_identity_prompt: n_shots must be >= 1");
  auto vars = sample_identity_vars(cfg, rng);
  Prompt p = build_identity(vars, cfg.rule);
  return {p, one_token_answer(*cfg.vocab, identity_answer_token(vars.back(), cfg.rule))};
}

ContextPair make_abstract_pair(const TaskConfig& cfg, TaskRng& rng, TargetHeadType target) {
  if (target == TargetHeadType::kRetrieval)
    throw TensorError("make_abstract_pair: retrieval uses the token condition");
  auto vars = sample_identity_vars(cfg, rng);  // vars[e] = {A_e, B_e}
  const Rule r1 = cfg.rule, r2 = opposite_rule(cfg.rule);
  std::vector<std::vector<int>> swapped = vars;
  for (auto& v : swapped) std::swap(v[0], v[1]);

  ContextPair pair;
  pair.c1 = build_identity(vars, r1);
  pair.c2 = build_identity(swapped, r2);
  pair.y_c1 = one_token_answer(*cfg.vocab, identity_answer_token(vars.back(), r1));
  // expected answer after patching: the alternative rule applied to c1's query
  pair.y_c1_star = one_token_answer(*cfg.vocab, identity_answer_token(vars.back(), r2));
  pair.y_c2 = one_token_answer(*cfg.vocab, identity_answer_token(swapped.back(), r2));
  pair.condition = PairCondition::kAbstract;
  pair.target = target;
  if (target == TargetHeadType::kAbstraction)
    pair.patch_positions = pair.c1.example_final_positions();
  else
    pair.patch_positions = {pair.c1.final_position()};
  return pair;
}

ContextPair make_token_pair(const TaskConfig& cfg, TaskRng& rng) {
  auto vars = sample_identity_vars(cfg, rng);
  std::vector<std::vector<int>> swapped = vars;
  std::swap(swapped.back()[0], swapped.back()[1]);  // only the query example

  ContextPair pair;
  pair.c1 = build_identity(vars, cfg.rule);
  pair.c2 = build_identity(swapped, cfg.rule);
  pair.y_c1 = one_token_answer(*cfg.vocab, identity_answer_token(vars.back(), cfg.rule));
  pair.y_c2 = one_token_answer(*cfg.vocab, identity_answer_token(swapped.back(), cfg.rule));
  pair.y_c1_star = pair.y_c2;
  pair.condition = PairCondition::kToken;
  pair.target = TargetHeadType::kRetrieval;
  pair.patch_positions = {pair.c1.final_position()};
  return pair;
}

std::vector<WordSet> load_wordsets(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("load_wordsets: cannot open " + path);
  std::vector<WordSet> sets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::stringstream ss(line);
    std::string w;
    while (std::getline(ss, w, ',')) parts.push_back(w);
    if (parts.size() != 4)
      throw TensorError("load_wordsets: line " + std::to_string(lineno) +
                        ": expected 4 comma-separated words");
    sets.push_back({parts[0], parts[1], parts[2], parts[3]});
  }
  return sets;
}

namespace {

struct LetterTriple {
  int a, b, c;
};

// One paired in-context example for the letter task: the successor and
// predecessor renderings share the first and third completion letters.
struct LetterExample {
  LetterTriple succ_src, succ_dst;
  LetterTriple pred_src, pred_dst;
};

int letter_id(char c) { return Vocab::kReserved + (c - 'a'); }
char id_letter(int id) { return static_cast<char>('a' + (id - Vocab::kReserved)); }

LetterExample sample_letter_example(TaskRng& rng) {
  // completion letters: first f, third t; middles differ per relation.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const char f = static_cast<char>('a' + rng.below(26));
    const char t = static_cast<char>('a' + rng.below(26));
    const char ms = static_cast<char>('a' + rng.below(26));
    const char mp = static_cast<char>('a' + rng.below(26));
    if (f == 'z' || t == 'a') continue;  // degenerate at the transformed slot
    if (f == t || f == ms || t == ms) continue;
    if (f + 1 == mp || f + 1 == t || mp == t || f == mp) continue;
    LetterExample e;
    e.succ_src = {letter_id(f), letter_id(ms), letter_id(static_cast<char>(t - 1))};
    e.succ_dst = {letter_id(f), letter_id(ms), letter_id(t)};
    e.pred_src = {letter_id(static_cast<char>(f + 1)), letter_id(mp), letter_id(t)};
    e.pred_dst = {letter_id(f), letter_id(mp), letter_id(t)};
    if (e.succ_src.c == e.succ_src.a || e.succ_src.c == e.succ_src.b) continue;
    return e;
  }
  throw TensorError("sample_letter_example: rejection sampling failed");
}

void push_bracket_group(Prompt& p, const LetterTriple& t, int example, int slot_base, Role role) {
  p.tokens.push_back(Vocab::kLBracket);
  p.annotations.push_back({example, 0, Role::kSeparator});
  const int ids[3] = {t.a, t.b, t.c};
  for (int i = 0; i < 3; ++i) {
    p.tokens.push_back(ids[i]);
    p.annotations.push_back({example, slot_base + i + 1, role});
  }
  p.tokens.push_back(Vocab::kRBracket);
  p.annotations.push_back({example, 0, Role::kSeparator});
}

/// "[a b c] [a b d]\n..." with the query truncated after its second '['.
Prompt build_letter_prompt(const std::vector<LetterExample>& examples, Rule rule) {
  Prompt p;
  p.tokens.push_back(Vocab::kBos);
  p.annotations.push_back({-1, 0, Role::kBos});
  const int n = static_cast<int>(examples.size());
  for (int e = 0; e < n; ++e) {
    const bool query = (e == n - 1);
    const LetterTriple& src =
        rule == Rule::kSuccessor ? examples[static_cast<std::size_t>(e)].succ_src
                                 : examples[static_cast<std::size_t>(e)].pred_src;
    const LetterTriple& dst =
        rule == Rule::kSuccessor ? examples[static_cast<std::size_t>(e)].succ_dst
                                 : examples[static_cast<std::size_t>(e)].pred_dst;
    push_bracket_group(p, src, e, 0, Role::kA);
    if (query) {
      p.tokens.push_back(Vocab::kLBracket);
      p.annotations.push_back({e, 0, Role::kQueryBlank});
    } else {
      push_bracket_group(p, dst, e, 3, Role::kB);
      p.tokens.push_back(Vocab::kNewline);
      p.annotations.push_back({e, 0, Role::kSeparator});
    }
  }
  return p;
}

AnswerSpec letter_answer(const Vocab& v, const LetterTriple& dst) {
  AnswerSpec a;
  a.tokens = {dst.a, dst.b, dst.c, Vocab::kRBracket};
  a.display = std::string("[") + id_letter(dst.a) + " " + id_letter(dst.b) + " " +
              id_letter(dst.c) + "]";
  return a;
}

/// Applies the other relation to a query source triple.
LetterTriple alternative_completion(const LetterTriple& src, Rule rule) {
  if (rule == Rule::kSuccessor)  // alternative is predecessor: first letter - 1
    return {letter_id(static_cast<char>(id_letter(src.a) - 1)), src.b, src.c};
  return {src.a, src.b, letter_id(static_cast<char>(id_letter(src.c) + 1))};
}

}  // namespace

std::pair<Prompt, AnswerSpec> make_letter_prompt(const TaskConfig& cfg, TaskRng& rng) {
  if (cfg.rule != Rule::kSuccessor && cfg.rule != Rule::kPredecessor)
    throw TensorError("make_letter_prompt: rule must be successor/predecessor");
  std::vector<LetterExample> examples;
  for (std::size_t e = 0; e <= cfg.n_shots; ++e) examples.push_back(sample_letter_example(rng));
  Prompt p = build_letter_prompt(examples, cfg.rule);
  const LetterTriple& dst =
      cfg.rule == Rule::kSuccessor ? examples.back().succ_dst : examples.back().pred_dst;
  return {p, letter_answer(*cfg.vocab, dst)};
}

ContextPair make_letter_pair(const TaskConfig& cfg, TaskRng& rng, TargetHeadType target) {
  if (cfg.rule != Rule::kSuccessor && cfg.rule != Rule::kPredecessor)
    throw TensorError("make_letter_pair: rule must be successor/predecessor");
  std::vector<LetterExample> examples;
  for (std::size_t e = 0; e <= cfg.n_shots; ++e) examples.push_back(sample_letter_example(rng));

  ContextPair pair;
  pair.patch_mode = PatchMode::kSumPerPosition;
  pair.target = target;
  const Rule other = cfg.rule == Rule::kSuccessor ? Rule::kPredecessor : Rule::kSuccessor;

  if (target == TargetHeadType::kRetrieval) {
    // same rule, disjoint query tokens
    std::vector<LetterExample> alt = examples;
    alt.back() = sample_letter_example(rng);
    pair.c1 = build_letter_prompt(examples, cfg.rule);
    pair.c2 = build_letter_prompt(alt, cfg.rule);
    const LetterTriple& d1 =
        cfg.rule == Rule::kSuccessor ? examples.back().succ_dst : examples.back().pred_dst;
    const LetterTriple& d2 =
        cfg.rule == Rule::kSuccessor ? alt.back().succ_dst : alt.back().pred_dst;
    pair.y_c1 = letter_answer(*cfg.vocab, d1);
    pair.y_c2 = letter_answer(*cfg.vocab, d2);
    pair.y_c1_star = pair.y_c2;
    pair.condition = PairCondition::kToken;
    // positions preceding the three completion letters: the open
    // bracket (last prompt token) plus the first two appended letters
    const std::size_t L = pair.c1.size();
    pair.patch_positions = {L - 1, L, L + 1};
    return pair;
  }

  pair.c1 = build_letter_prompt(examples, cfg.rule);
  pair.c2 = build_letter_prompt(examples, other);
  const LetterTriple& src_q =
      cfg.rule == Rule::kSuccessor ? examples.back().succ_src : examples.back().pred_src;
  const LetterTriple& dst_q =
      cfg.rule == Rule::kSuccessor ? examples.back().succ_dst : examples.back().pred_dst;
  const LetterTriple& dst_q2 =
      cfg.rule == Rule::kSuccessor ? examples.back().pred_dst : examples.back().succ_dst;
  pair.y_c1 = letter_answer(*cfg.vocab, dst_q);
  pair.y_c1_star = letter_answer(*cfg.vocab, alternative_completion(src_q, cfg.rule));
  pair.y_c2 = letter_answer(*cfg.vocab, dst_q2);
  pair.condition = PairCondition::kAbstract;

  if (target == TargetHeadType::kAbstraction) {
    // first and third completion letters of each in-context example
    for (std::size_t p = 0; p < pair.c1.annotations.size(); ++p) {
      const auto& a = pair.c1.annotations[p];
      if (a.example_index >= 0 && a.example_index < static_cast<int>(cfg.n_shots) &&
          (a.within_example_position == 4 || a.within_example_position == 6))
        pair.patch_positions.push_back(p);
    }
  } else {
    // tokens preceding the first and third completion letters of the query
    const std::size_t L = pair.c1.size();
    pair.patch_positions = {L - 1, L + 1};
  }
  return pair;
}

namespace {

void push_verbal_example(Prompt& p, int w1, int w2, int example) {
  p.tokens.push_back(w1);
  p.annotations.push_back({example, 1, Role::kA});
  p.tokens.push_back(Vocab::kColon);
  p.annotations.push_back({example, 0, Role::kSeparator});
  p.tokens.push_back(w2);
  p.annotations.push_back({example, 2, Role::kB});
  p.tokens.push_back(Vocab::kNewline);
  p.annotations.push_back({example, 0, Role::kSeparator});
}

struct VerbalIds {
  int a1, a2, b1, b2;
};

VerbalIds set_ids(const Vocab& v, const WordSet& s) {
  return {v.id(s.syn_a1), v.id(s.syn_a2), v.id(s.ant_b1), v.id(s.ant_b2)};
}

Prompt build_verbal_prompt(const Vocab& v, const std::vector<VerbalIds>& sets, Rule rule) {
  Prompt p;
  p.tokens.push_back(Vocab::kBos);
  p.annotations.push_back({-1, 0, Role::kBos});
  const int n = static_cast<int>(sets.size());
  for (int e = 0; e < n - 1; ++e) {
    const VerbalIds& s = sets[static_cast<std::size_t>(e)];
    if (rule == Rule::kSynonym)
      push_verbal_example(p, s.a1, s.a2, e);
    else
      push_verbal_example(p, s.a1, s.b1, e);
  }
  const VerbalIds& q = sets.back();
  p.tokens.push_back(rule == Rule::kSynonym ? q.a1 : q.b1);
  p.annotations.push_back({n - 1, 1, Role::kA});
  p.tokens.push_back(Vocab::kColon);
  p.annotations.push_back({n - 1, 0, Role::kQueryBlank});
  return p;
}

}  // namespace

VerbalPrompt make_verbal_prompt(const TaskConfig& cfg, const std::vector<WordSet>& sets,
                                TaskRng& rng) {
  if (cfg.rule != Rule::kSynonym && cfg.rule != Rule::kAntonym)
    throw TensorError("make_verbal_prompt: rule must be synonym/antonym");
  if (sets.size() < cfg.n_shots + 1)
    throw TensorError("make_verbal_prompt: need at least " + std::to_string(cfg.n_shots + 1) +
                      " word sets");
  std::vector<int> idx(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) idx[i] = static_cast<int>(i);
  std::vector<int> chosen = rng.sample_distinct(idx, cfg.n_shots + 1);
  std::vector<VerbalIds> ids;
  for (int i : chosen) ids.push_back(set_ids(*cfg.vocab, sets[static_cast<std::size_t>(i)]));
  VerbalPrompt out;
  out.prompt = build_verbal_prompt(*cfg.vocab, ids, cfg.rule);
  // correct answer is the syn-pair completion; the foil applies the
  // other relation to the query word
  out.answer = one_token_answer(*cfg.vocab, ids.back().a2);
  out.foil = one_token_answer(*cfg.vocab, ids.back().b2);
  return out;
}

ContextPair make_verbal_pair(const TaskConfig& cfg, const std::vector<WordSet>& sets, TaskRng& rng,
                             TargetHeadType target) {
  if (cfg.rule != Rule::kSynonym && cfg.rule != Rule::kAntonym)
    throw TensorError("make_verbal_pair: rule must be synonym/antonym");
  const Rule other = cfg.rule == Rule::kSynonym ? Rule::kAntonym : Rule::kSynonym;
  std::vector<int> idx(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) idx[i] = static_cast<int>(i);
  const std::size_t need = cfg.n_shots + 1 + (target == TargetHeadType::kRetrieval ? 1 : 0);
  std::vector<int> chosen = rng.sample_distinct(idx, need);
  std::vector<VerbalIds> ids;
  for (std::size_t i = 0; i < cfg.n_shots + 1; ++i)
    ids.push_back(set_ids(*cfg.vocab, sets[static_cast<std::size_t>(chosen[i])]));

  ContextPair pair;
  pair.target = target;
  if (target == TargetHeadType::kRetrieval) {
    std::vector<VerbalIds> alt = ids;
    alt.back() = set_ids(*cfg.vocab, sets[static_cast<std::size_t>(chosen.back())]);
    pair.c1 = build_verbal_prompt(*cfg.vocab, ids, cfg.rule);
    pair.c2 = build_verbal_prompt(*cfg.vocab, alt, cfg.rule);
    pair.y_c1 = one_token_answer(*cfg.vocab, ids.back().a2);
    pair.y_c2 = one_token_answer(*cfg.vocab, alt.back().a2);
    pair.y_c1_star = pair.y_c2;
    pair.condition = PairCondition::kToken;
    pair.patch_positions = {pair.c1.final_position()};
    return pair;
  }

  pair.c1 = build_verbal_prompt(*cfg.vocab, ids, cfg.rule);
  pair.c2 = build_verbal_prompt(*cfg.vocab, ids, other);
  pair.y_c1 = one_token_answer(*cfg.vocab, ids.back().a2);
  pair.y_c1_star = one_token_answer(*cfg.vocab, ids.back().b2);
  pair.y_c2 = one_token_answer(*cfg.vocab, ids.back().a2);  // same answer by design
  pair.condition = PairCondition::kAbstract;
  if (target == TargetHeadType::kAbstraction) {
    for (std::size_t p = 0; p < pair.c1.annotations.size(); ++p) {
      const auto& a = pair.c1.annotations[p];
      if (a.example_index >= 0 && a.example_index < static_cast<int>(cfg.n_shots) &&
          a.within_example_position == 2)
        pair.patch_positions.push_back(p);
    }
  } else {
    pair.patch_positions = {pair.c1.final_position()};
  }
  return pair;
}

std::string render_prompt(const Vocab& v, const Prompt& p) {
  std::string out;
  for (std::size_t i = 0; i < p.tokens.size(); ++i) {
    if (p.tokens[i] == Vocab::kBos) continue;
    out += v.str(p.tokens[i]);
  }
  return out;
}

Prompt parse_identity_prompt(const Vocab& v, const std::string& text) {
  std::vector<std::vector<std::string>> lines;
  std::stringstream ss(text);
  std::string line;
  bool truncated = false;
  while (std::getline(ss, line)) {
    std::vector<std::string> items;
    std::string cur;
    for (char c : line) {
      if (c == '^') {
        items.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty())
      items.push_back(cur);
    else
      truncated = true;  // line ended with '^': query example
    lines.push_back(items);
  }
  if (lines.empty() || !truncated)
    throw TensorError("parse_identity_prompt: not a truncated identity prompt");

  Prompt p;
  p.tokens.push_back(Vocab::kBos);
  p.annotations.push_back({-1, 0, Role::kBos});
  for (std::size_t e = 0; e < lines.size(); ++e) {
    const bool query = (e == lines.size() - 1);
    // roles cannot be recovered from text alone for the A/B labels of
    // length-3 rules; infer by token equality within the example
    const auto& items = lines[e];
    std::vector<int> role(items.size(), -1);
    int next = 0;
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto it = seen.find(items[i]);
      if (it == seen.end()) {
        seen.emplace(items[i], next);
        role[i] = next++;
      } else {
        role[i] = it->second;
      }
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      p.tokens.push_back(v.id(items[i]));
      p.annotations.push_back(
          {static_cast<int>(e), static_cast<int>(i) + 1, role_of(role[i])});
      p.tokens.push_back(query && i + 1 == items.size() ? Vocab::kCaret
                         : (i + 1 == items.size() ? Vocab::kNewline : Vocab::kCaret));
      p.annotations.push_back({static_cast<int>(e), 0,
                               query && i + 1 == items.size() ? Role::kQueryBlank
                                                              : Role::kSeparator});
    }
  }
  return p;
}

std::string prompt_to_jsonl(const Vocab& v, const Prompt& p, const AnswerSpec& answer) {
  nlohmann::ordered_json j;
  j["tokens"] = p.tokens;
  nlohmann::ordered_json anns = nlohmann::ordered_json::array();
  for (const auto& a : p.annotations) {
    nlohmann::ordered_json e;
    e["example"] = a.example_index;
    e["item"] = a.within_example_position;
    e["role"] = static_cast<int>(a.role);
    anns.push_back(e);
  }
  j["annotations"] = anns;
  j["answer"] = answer.display;
  return j.dump();
}

}  // namespace symlab
