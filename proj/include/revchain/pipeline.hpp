#pragma once

// Batch run: finalized annotations -> improvement chains -> preference pairs
// for every strategy -> trainer files, tied together by a manifest.

#include <filesystem>
#include <string>
#include <vector>

#include "revchain/chain.hpp"
#include "revchain/config.hpp"
#include "revchain/corpus.hpp"
#include "revchain/error.hpp"
#include "revchain/generation_client.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/pairs.hpp"
#include "revchain/store.hpp"
#include "revchain/tagged.hpp"

namespace revchain {

struct PipelineConfig {
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::string rewriter_model = "gpt-4o";
  int max_attempts = 3;
  SamplingConfig sampling{1.0, 1.0};
  ChainValidationConfig validation;

  static PipelineConfig from_config(const Config& c) {
    PipelineConfig p;
    p.output_dir = c.get<std::string>("pipeline.output_dir", "");
    p.seed = c.get<std::uint64_t>("pipeline.seed", 0);
    p.rewriter_model = c.get<std::string>("models.rewriter", p.rewriter_model);
    p.max_attempts = c.get<int>("pipeline.max_attempts", p.max_attempts);
    p.sampling.temperature = c.get<double>("pipeline.temperature", p.sampling.temperature);
    p.sampling.top_p = c.get<double>("pipeline.top_p", p.sampling.top_p);
    return p;
  }
};

inline void to_json(Json& j, const PipelineConfig& p) {
  j = Json{{"seed", p.seed},
           {"rewriter_model", p.rewriter_model},
           {"max_attempts", p.max_attempts},
           {"sampling", p.sampling},
           {"validation", p.validation}};
}
inline void from_json(const Json& j, PipelineConfig& p) {
  p.seed = j.value("seed", std::uint64_t{0});
  p.rewriter_model = j.value("rewriter_model", p.rewriter_model);
  p.max_attempts = j.value("max_attempts", p.max_attempts);
  if (j.contains("sampling")) j.at("sampling").get_to(p.sampling);
  if (j.contains("validation")) j.at("validation").get_to(p.validation);
  if (p.max_attempts < 1) throw Error(ErrorKind::config_error, "max_attempts must be >= 1");
}

struct ChainFailureEntry {
  std::string sequence_id;
  std::string item_id;
  std::string response_id;
  std::string error;  // error kind
  std::string message;
  int attempts = 0;
  std::optional<ChainVerdict> last_verdict;
};

inline Json to_json_value(const ChainFailureEntry& f) {
  return Json{{"sequence_id", f.sequence_id}, {"item_id", f.item_id}, {"response_id", f.response_id},
              {"error", f.error},             {"message", f.message}, {"attempts", f.attempts},
              {"last_verdict", f.last_verdict ? Json(*f.last_verdict) : Json(nullptr)}};
}

struct RunManifest {
  PipelineConfig config;
  std::size_t items = 0;
  std::size_t responses = 0;
  std::size_t chains = 0;
  PairManifest pairs;
  std::vector<ChainFailureEntry> failures;
};

inline Json to_json_value(const RunManifest& m) {
  Json failures = Json::array();
  for (const auto& f : m.failures) failures.push_back(to_json_value(f));
  Json pairs = to_json_value(m.pairs);
  return Json{{"config", m.config},
              {"items", m.items},
              {"responses", m.responses},
              {"chains", m.chains},
              {"chain_failures", failures},
              {"zero_dislike_responses", m.pairs.zero_dislike_responses},
              {"pair_counts", pairs.at("counts")},
              {"seeds", {{"downsample", m.pairs.seed}}},
              {"files", pairs.at("files")},
              {"trainer", pairs.at("trainer")}};
}

inline Corpus corpus_from_bundle(const std::vector<FinalizedItem>& items) {
  Corpus c;
  for (const auto& it : items) {
    c.add(it.document);
    c.add(it.query);
  }
  return c;
}

inline std::string chains_jsonl(const std::vector<ImprovementChain>& chains) {
  std::vector<Json> rows(chains.begin(), chains.end());
  return to_jsonl(rows);
}

inline std::vector<ImprovementChain> parse_chains_jsonl(std::string_view text) {
  std::vector<ImprovementChain> out;
  for (const auto& row : parse_jsonl(text, "chains")) out.push_back(row.get<ImprovementChain>());
  return out;
}

struct ChainBuildResult {
  std::vector<ImprovementChain> chains;
  std::vector<ChainFailureEntry> failures;
  std::size_t responses = 0;
  std::size_t zero_dislike = 0;
};

// One chain per annotated response that carries at least one dislike, in
// bundle order (record a, then record b).
inline ChainBuildResult build_chains(GenerationClient& client, const std::vector<FinalizedItem>& items,
                                     const PipelineConfig& cfg) {
  ChainBuildResult out;
  BuildChainOptions opts;
  opts.model = cfg.rewriter_model;
  opts.max_attempts = cfg.max_attempts;
  opts.sampling = cfg.sampling;
  opts.validation = cfg.validation;
  for (const auto& it : items) {
    for (const ValidatedRecord* rec : {&it.record_a, &it.record_b}) {
      ++out.responses;
      if (rec->record.count(Polarity::dislike) == 0) {
        ++out.zero_dislike;
        continue;
      }
      const ChainContext ctx{it.item_id + "/" + rec->record.response_id, it.item_id, rec->record.annotator_id,
                             rec->record.response_id};
      ChainFailureEntry failure{ctx.sequence_id, ctx.item_id, ctx.response_id, "", "", 0, std::nullopt};
      try {
        const auto tagged = serialize_tagged(*rec);
        out.chains.push_back(build_chain(client, tagged, it.document, it.query, opts, ctx));
        continue;
      } catch (const ChainFailure& e) {
        failure.attempts = e.attempts();
        failure.last_verdict = e.last_verdict();
        failure.error = std::string(to_string(e.kind()));
        failure.message = e.what();
      } catch (const TransportError& e) {
        failure.attempts = e.attempts();
        failure.error = std::string(to_string(e.kind()));
        failure.message = e.what();
      } catch (const Error& e) {
        failure.error = std::string(to_string(e.kind()));
        failure.message = e.what();
      }
      out.failures.push_back(std::move(failure));
    }
  }
  return out;
}

inline std::vector<PreferencePair> ab_pairs(const std::vector<FinalizedItem>& items) {
  std::vector<PreferencePair> out;
  for (const auto& it : items) {
    const ABItem ab{it.item_id, it.document.id, it.query.id, it.record_a.response_text, it.record_b.response_text};
    for (auto& p : pairs_ab(it.judgment, ab)) out.push_back(std::move(p));
  }
  return out;
}

// Pairs for every strategy from an already built set of chains.
inline PairSet all_pairs(const std::vector<FinalizedItem>& items, const std::vector<ImprovementChain>& chains,
                         std::uint64_t seed) {
  PairSet set;
  set.pairs = ab_pairs(items);
  for (auto s : {Strategy::first_edit, Strategy::full_rewrite, Strategy::stepwise, Strategy::stepwise_downsampled}) {
    set += make_pairs(chains, s, seed);
  }
  set.seed = seed;
  return set;
}

inline PairSet only(const PairSet& set, Strategy s) {
  PairSet out;
  out.seed = set.seed;
  for (const auto& p : set.pairs) {
    if (p.strategy == s) out.pairs.push_back(p);
  }
  return out;
}

inline RunManifest run_pipeline(const std::vector<FinalizedItem>& items, const PipelineConfig& cfg,
                                GenerationClient& client) {
  if (items.empty()) throw Error(ErrorKind::nothing_to_do, "no completed annotations");
  if (cfg.output_dir.empty()) throw Error(ErrorKind::config_error, "pipeline output directory not set");
  std::filesystem::create_directories(cfg.output_dir);
  const auto corpus = corpus_from_bundle(items);

  RunManifest m;
  m.config = cfg;
  m.items = items.size();
  auto built = build_chains(client, items, cfg);
  m.responses = built.responses;
  m.chains = built.chains.size();
  m.failures = std::move(built.failures);

  const auto set = all_pairs(items, built.chains, cfg.seed);
  m.pairs.counts = set.counts();
  m.pairs.seed = cfg.seed;
  m.pairs.zero_dislike_responses = built.zero_dislike;
  m.pairs.chain_failures = m.failures.size();

  auto record = [&](const std::string& name, const std::string& content) {
    m.pairs.files.push_back(detail::write_export(cfg.output_dir / name, content));
  };
  record("annotations.jsonl", annotation_bundle_jsonl(items));
  record("chains.jsonl", chains_jsonl(built.chains));
  record("pairs.jsonl", pairset_to_jsonl(set));
  for (auto s : kAllStrategies) {
    record("preference_" + strategy_name(s) + ".jsonl", preference_jsonl(only(set, s), corpus));
  }
  record("sft.jsonl", sft_jsonl(built.chains, corpus));
  write_file(cfg.output_dir / "manifest.json", to_json_value(m).dump(2) + "\n");
  return m;
}

}  // namespace revchain
