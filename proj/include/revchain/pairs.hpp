#pragma once

// Preference pairs built from A/B judgments and improvement chains, and the
// trainer-facing export files.

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "revchain/annotation.hpp"
#include "revchain/chain.hpp"
#include "revchain/corpus.hpp"
#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/tagged.hpp"

namespace revchain {

enum class Strategy { ab, first_edit, full_rewrite, stepwise, stepwise_downsampled };

NLOHMANN_JSON_SERIALIZE_ENUM(Strategy, {
                                           {Strategy::ab, "ab"},
                                           {Strategy::first_edit, "first_edit"},
                                           {Strategy::full_rewrite, "full_rewrite"},
                                           {Strategy::stepwise, "stepwise"},
                                           {Strategy::stepwise_downsampled, "stepwise_downsampled"},
                                       })

inline constexpr std::array<Strategy, 5> kAllStrategies = {Strategy::ab, Strategy::first_edit, Strategy::full_rewrite,
                                                           Strategy::stepwise, Strategy::stepwise_downsampled};

inline std::string strategy_name(Strategy s) { return Json(s).get<std::string>(); }

inline Strategy parse_strategy(const std::string& s) {
  for (auto st : kAllStrategies) {
    if (strategy_name(st) == s) return st;
  }
  throw Error(ErrorKind::invalid_input, "unknown strategy '" + s + "'");
}

// (loser x, winner y) for one prompt.
struct PreferencePair {
  std::string document_id;
  std::string query_id;
  std::string loser;
  std::string winner;
  Strategy strategy = Strategy::ab;
  std::string sequence_id;
  std::optional<std::size_t> step_index;
  std::string annotator_id;

  bool operator==(const PreferencePair&) const = default;
};

inline void to_json(Json& j, const PreferencePair& p) {
  j = Json{{"document_id", p.document_id},
           {"query_id", p.query_id},
           {"loser", p.loser},
           {"winner", p.winner},
           {"strategy", p.strategy},
           {"sequence_id", p.sequence_id},
           {"step_index", p.step_index ? Json(*p.step_index) : Json(nullptr)},
           {"annotator_id", p.annotator_id}};
}
inline void from_json(const Json& j, PreferencePair& p) {
  j.at("document_id").get_to(p.document_id);
  j.at("query_id").get_to(p.query_id);
  j.at("loser").get_to(p.loser);
  j.at("winner").get_to(p.winner);
  j.at("strategy").get_to(p.strategy);
  j.at("sequence_id").get_to(p.sequence_id);
  const auto& si = j.at("step_index");
  p.step_index = si.is_null() ? std::nullopt : std::optional<std::size_t>(si.get<std::size_t>());
  p.annotator_id = j.value("annotator_id", std::string{});
  const bool stepwise = p.strategy == Strategy::stepwise || p.strategy == Strategy::stepwise_downsampled;
  if (stepwise != p.step_index.has_value()) {
    throw Error(ErrorKind::schema_error, "step_index must be present exactly for stepwise pairs");
  }
  if (p.loser == p.winner) throw Error(ErrorKind::schema_error, "pair has identical loser and winner");
}

struct PairSet {
  std::vector<PreferencePair> pairs;
  std::optional<std::uint64_t> seed;

  std::map<Strategy, std::size_t> counts() const {
    std::map<Strategy, std::size_t> c;
    for (auto s : kAllStrategies) c[s] = 0;
    for (const auto& p : pairs) ++c[p.strategy];
    return c;
  }

  PairSet& operator+=(const PairSet& o) {
    pairs.insert(pairs.end(), o.pairs.begin(), o.pairs.end());
    if (!seed) seed = o.seed;
    return *this;
  }
};

inline Json counts_json(const PairSet& set) {
  Json c = Json::object();
  for (const auto& [s, n] : set.counts()) c[strategy_name(s)] = n;
  return c;
}

// Internal PairSet file: a header line, then one pair per line.
inline std::string pairset_to_jsonl(const PairSet& set) {
  std::vector<Json> rows;
  rows.push_back(Json{{"kind", "pair_set"}, {"seed", set.seed ? Json(*set.seed) : Json(nullptr)},
                      {"counts", counts_json(set)}});
  for (const auto& p : set.pairs) rows.push_back(p);
  return to_jsonl(rows);
}

inline PairSet pairset_from_jsonl(std::string_view text) {
  const auto rows = parse_jsonl(text, "pair set");
  if (rows.empty() || rows.front().value("kind", std::string{}) != "pair_set") {
    throw Error(ErrorKind::schema_error, "pair set file lacks its header line");
  }
  PairSet set;
  const auto& seed = rows.front().at("seed");
  if (!seed.is_null()) set.seed = seed.get<std::uint64_t>();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    try {
      set.pairs.push_back(rows[i].get<PreferencePair>());
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::schema_error, "pair line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (counts_json(set) != rows.front().at("counts")) throw Error(ErrorKind::schema_error, "pair counts disagree");
  return set;
}

// ---- Construction -------------------------------------------------------

struct ABItem {
  std::string item_id;
  std::string document_id;
  std::string query_id;
  std::string response_a;
  std::string response_b;
};

namespace detail {

inline PreferencePair make_pair(std::string doc, std::string query, std::string loser, std::string winner, Strategy s,
                                std::string seq, std::optional<std::size_t> step, std::string annotator) {
  if (loser == winner) throw Error(ErrorKind::invalid_input, "loser and winner are identical");
  return PreferencePair{std::move(doc), std::move(query), std::move(loser), std::move(winner),
                        s,              std::move(seq),  step,             std::move(annotator)};
}

inline void require_valid(const ImprovementChain& chain) {
  if (!chain.valid()) throw Error(ErrorKind::rejected_chain, "chain " + chain.sequence_id + " failed validation");
  if (chain.steps.size() < 2) throw Error(ErrorKind::rejected_chain, "chain " + chain.sequence_id + " has no edits");
}

}  // namespace detail

inline std::vector<PreferencePair> pairs_ab(const ABJudgment& judgment, const ABItem& item) {
  if (judgment.choice == Choice::tie) return {};
  const bool a_wins = judgment.choice == Choice::A;
  return {detail::make_pair(item.document_id, item.query_id, a_wins ? item.response_b : item.response_a,
                            a_wins ? item.response_a : item.response_b, Strategy::ab, item.item_id, std::nullopt,
                            judgment.annotator_id)};
}

inline std::vector<PreferencePair> pairs_first_edit(const ImprovementChain& chain) {
  detail::require_valid(chain);
  return {detail::make_pair(chain.document_id, chain.query_id, strip_tags(chain.steps[0]), strip_tags(chain.steps[1]),
                            Strategy::first_edit, chain.sequence_id, std::nullopt, chain.annotator_id)};
}

inline std::vector<PreferencePair> pairs_full_rewrite(const ImprovementChain& chain) {
  detail::require_valid(chain);
  return {detail::make_pair(chain.document_id, chain.query_id, strip_tags(chain.steps.front()),
                            strip_tags(chain.steps.back()), Strategy::full_rewrite, chain.sequence_id, std::nullopt,
                            chain.annotator_id)};
}

inline std::vector<PreferencePair> pairs_stepwise(const ImprovementChain& chain) {
  detail::require_valid(chain);
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i + 1 < chain.steps.size(); ++i) {
    out.push_back(detail::make_pair(chain.document_id, chain.query_id, strip_tags(chain.steps[i]),
                                    strip_tags(chain.steps[i + 1]), Strategy::stepwise, chain.sequence_id, i,
                                    chain.annotator_id));
  }
  return out;
}

// Keeps one uniformly chosen adjacent pair per sequence, visiting sequences
// in order of first appearance.
inline PairSet downsample_stepwise(const PairSet& stepwise, std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < stepwise.pairs.size(); ++i) {
    const auto& p = stepwise.pairs[i];
    if (p.strategy != Strategy::stepwise) {
      throw Error(ErrorKind::invalid_input, "downsampling expects stepwise pairs only");
    }
    auto [it, inserted] = groups.try_emplace(p.sequence_id);
    if (inserted) order.push_back(p.sequence_id);
    it->second.push_back(i);
  }
  std::mt19937_64 rng(seed);
  PairSet out;
  out.seed = seed;
  for (const auto& seq : order) {
    const auto& idx = groups.at(seq);
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    auto p = stepwise.pairs[idx[pick(rng)]];
    p.strategy = Strategy::stepwise_downsampled;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

inline PairSet make_pairs(std::span<const ImprovementChain> chains, Strategy strategy, std::uint64_t seed = 0) {
  PairSet set;
  for (const auto& c : chains) {
    std::vector<PreferencePair> ps;
    switch (strategy) {
      case Strategy::first_edit: ps = pairs_first_edit(c); break;
      case Strategy::full_rewrite: ps = pairs_full_rewrite(c); break;
      case Strategy::stepwise:
      case Strategy::stepwise_downsampled: ps = pairs_stepwise(c); break;
      case Strategy::ab: throw Error(ErrorKind::invalid_input, "A/B pairs come from judgments, not chains");
    }
    set.pairs.insert(set.pairs.end(), ps.begin(), ps.end());
  }
  if (strategy == Strategy::stepwise_downsampled) return downsample_stepwise(set, seed);
  return set;
}

// ---- Export -------------------------------------------------------------

enum class ExportFormat { preference_jsonl, sft_jsonl };

struct ExportReport {
  std::filesystem::path path;
  std::size_t lines = 0;
  std::string sha256;
};

inline Json to_json_value(const ExportReport& r) {
  return Json{{"path", r.path.filename().string()}, {"lines", r.lines}, {"sha256", r.sha256}};
}

inline std::string preference_jsonl(const PairSet& set, const Corpus& corpus) {
  std::string out;
  for (const auto& p : set.pairs) {
    const auto prompt = assemble_response_prompt(corpus.document(p.document_id), corpus.query(p.query_id));
    Json meta{{"strategy", p.strategy},
              {"sequence_id", p.sequence_id},
              {"step_index", p.step_index ? Json(*p.step_index) : Json(nullptr)},
              {"annotator_id", p.annotator_id}};
    out += dump_line(Json{{"prompt", prompt}, {"chosen", p.winner}, {"rejected", p.loser}, {"meta", meta}}) + "\n";
  }
  return out;
}

inline std::string sft_jsonl(std::span<const ImprovementChain> chains, const Corpus& corpus) {
  std::string out;
  for (const auto& c : chains) {
    detail::require_valid(c);
    const auto prompt = assemble_response_prompt(corpus.document(c.document_id), corpus.query(c.query_id));
    out += dump_line(Json{{"prompt", prompt}, {"completion", strip_tags(c.steps.back())}}) + "\n";
  }
  return out;
}

inline std::string sft_jsonl(const PairSet& set, const Corpus& corpus) {
  std::string out;
  for (const auto& p : set.pairs) {
    if (p.strategy != Strategy::full_rewrite) {
      throw Error(ErrorKind::invalid_input, "SFT export from pairs needs full_rewrite pairs");
    }
    const auto prompt = assemble_response_prompt(corpus.document(p.document_id), corpus.query(p.query_id));
    out += dump_line(Json{{"prompt", prompt}, {"completion", p.winner}}) + "\n";
  }
  return out;
}

namespace detail {

inline ExportReport write_export(const std::filesystem::path& path, const std::string& content) {
  write_file(path, content);
  return ExportReport{path, static_cast<std::size_t>(std::count(content.begin(), content.end(), '\n')),
                      sha256_hex(content)};
}

}  // namespace detail

inline ExportReport export_training_file(const PairSet& set, const Corpus& corpus, const std::filesystem::path& path,
                                         ExportFormat format) {
  if (set.pairs.empty()) throw Error(ErrorKind::invalid_input, "nothing to export");
  return detail::write_export(path, format == ExportFormat::preference_jsonl ? preference_jsonl(set, corpus)
                                                                              : sft_jsonl(set, corpus));
}

inline ExportReport export_sft(std::span<const ImprovementChain> chains, const Corpus& corpus,
                               const std::filesystem::path& path) {
  if (chains.empty()) throw Error(ErrorKind::invalid_input, "nothing to export");
  return detail::write_export(path, sft_jsonl(chains, corpus));
}

// Hyperparameters handed to the external trainer. Recorded, never used here.
inline Json trainer_metadata() {
  return Json{{"preference",
               {{"optimizer", "AdamW"},
                {"learning_rate", 5e-7},
                {"lr_schedule", "cosine"},
                {"warmup_steps", 0},
                {"batch_size", 4},
                {"max_length", 8192},
                {"precision", "fp16"},
                {"gradient_checkpointing", true},
                {"beta", 0.1}}},
              {"sft",
               {{"learning_rate", 5e-6},
                {"learning_rate_grid", {5e-6, 2e-6, 1e-6, 5e-7, 2e-7}}}}};
}

struct PairManifest {
  std::map<Strategy, std::size_t> counts;
  std::uint64_t seed = 0;
  std::size_t zero_dislike_responses = 0;
  std::size_t chain_failures = 0;
  std::vector<ExportReport> files;
};

inline Json to_json_value(const PairManifest& m) {
  Json counts = Json::object();
  for (auto s : kAllStrategies) counts[strategy_name(s)] = m.counts.count(s) ? m.counts.at(s) : 0;
  Json files = Json::array();
  for (const auto& f : m.files) files.push_back(to_json_value(f));
  return Json{{"counts", counts},
              {"seed", m.seed},
              {"zero_dislike_responses", m.zero_dislike_responses},
              {"chain_failures", m.chain_failures},
              {"files", files},
              {"trainer", trainer_metadata()}};
}

}  // namespace revchain
