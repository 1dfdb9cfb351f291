#pragma once

// Improvement chains: a tagged response is rewritten one dislike span at a
// time, left to right, and every adjacent pair of steps must differ by a
// single targeted revision.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <revchain/assets.hpp>

#include "revchain/corpus.hpp"
#include "revchain/diff.hpp"
#include "revchain/error.hpp"
#include "revchain/generation_client.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/prompt_template.hpp"
#include "revchain/tagged.hpp"
#include "revchain/utf8.hpp"

namespace revchain {

// ---- Verdicts -----------------------------------------------------------

enum class FailureReason { multi_edit, non_contiguous, wrong_span, tag_bookkeeping, order_violation, length_blowup };

NLOHMANN_JSON_SERIALIZE_ENUM(FailureReason, {
                                                {FailureReason::multi_edit, "multi_edit"},
                                                {FailureReason::non_contiguous, "non_contiguous"},
                                                {FailureReason::wrong_span, "wrong_span"},
                                                {FailureReason::tag_bookkeeping, "tag_bookkeeping"},
                                                {FailureReason::order_violation, "order_violation"},
                                                {FailureReason::length_blowup, "length_blowup"},
                                            })

struct StepFailure {
  std::size_t step_index = 0;  // index of the later step of the offending pair
  FailureReason reason = FailureReason::multi_edit;
  std::string detail;

  bool operator==(const StepFailure& o) const { return step_index == o.step_index && reason == o.reason; }
};

// Thresholds of the structural check. They are reported with every verdict.
struct ChainValidationConfig {
  std::size_t context_margin = 50;   // chars around the addressed span an edit may touch
  std::size_t min_gap = 30;          // unchanged run that separates two edits
  double region_growth_limit = 3.0;  // replacement length vs. replaced length
  double length_band = 0.30;         // whole-response relative length change
};

struct ChainVerdict {
  std::vector<StepFailure> failures;
  ChainValidationConfig config;

  bool valid() const { return failures.empty(); }
  bool has(FailureReason r) const {
    return std::any_of(failures.begin(), failures.end(), [&](const StepFailure& f) { return f.reason == r; });
  }
};

inline void to_json(Json& j, const ChainValidationConfig& c) {
  j = Json{{"context_margin", c.context_margin},
           {"min_gap", c.min_gap},
           {"region_growth_limit", c.region_growth_limit},
           {"length_band", c.length_band}};
}
inline void from_json(const Json& j, ChainValidationConfig& c) {
  const ChainValidationConfig d;
  c.context_margin = j.value("context_margin", d.context_margin);
  c.min_gap = j.value("min_gap", d.min_gap);
  c.region_growth_limit = j.value("region_growth_limit", d.region_growth_limit);
  c.length_band = j.value("length_band", d.length_band);
}

inline void to_json(Json& j, const ChainVerdict& v) {
  Json failures = Json::array();
  for (const auto& f : v.failures) {
    failures.push_back(Json{{"step_index", f.step_index}, {"reason", f.reason}, {"detail", f.detail}});
  }
  j = Json{{"status", v.valid() ? "valid" : "invalid"}, {"failures", failures}, {"config", v.config}};
}
inline void from_json(const Json& j, ChainVerdict& v) {
  v.failures.clear();
  for (const auto& f : j.at("failures")) {
    v.failures.push_back({f.at("step_index").get<std::size_t>(), f.at("reason").get<FailureReason>(),
                          f.value("detail", std::string{})});
  }
  v.config = j.value("config", ChainValidationConfig{});
  const auto status = j.value("status", std::string(v.valid() ? "valid" : "invalid"));
  if ((status == "valid") != v.valid()) throw Error(ErrorKind::schema_error, "verdict status contradicts failures");
}

// ---- Rewrite prompt -----------------------------------------------------

struct RewritePrompt {
  std::string system;
  std::string user;
};

inline std::string escape_reason(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

inline std::string render_reasons(const std::vector<HighlightReason>& reasons) {
  std::string out;
  for (const auto& r : reasons) {
    if (!out.empty()) out += '\n';
    out += "{'id': " + std::to_string(r.id) + ", 'type': '" + std::string(polarity_name(r.polarity)) +
           "', 'explanation': \"" + escape_reason(r.explanation) + "\"}";
  }
  return out;
}

namespace detail {

inline std::vector<int> check_tagged(const TaggedResponse& tagged) {
  const auto parsed = parse_tagged(tagged.text_with_tags);
  std::vector<std::pair<std::size_t, int>> by_start;
  for (const auto& h : parsed.highlights) {
    const bool has_reason = std::any_of(tagged.reasons.begin(), tagged.reasons.end(), [&](const HighlightReason& r) {
      return r.id == h.id && r.polarity == h.polarity;
    });
    if (!has_reason) {
      throw Error(ErrorKind::invalid_input, std::string(polarity_name(h.polarity)) + " id " + std::to_string(h.id) +
                                                " has no matching reason");
    }
    if (h.polarity == Polarity::dislike) by_start.emplace_back(h.start, h.id);
  }
  std::stable_sort(by_start.begin(), by_start.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> ids;
  for (std::size_t i = 0; i < by_start.size(); ++i) {
    if (by_start[i].second != static_cast<int>(i) + 1) {
      throw Error(ErrorKind::invalid_input, "dislike ids must be numbered 1..k left to right");
    }
    ids.push_back(by_start[i].second);
  }
  return ids;
}

}  // namespace detail

inline std::string rewrite_system_prompt() {
  return std::string(assets::rewrite_system_v1) + "\n\n" + std::string(assets::rewrite_step_format_v1);
}

inline RewritePrompt assemble_rewrite_prompt(const TaggedResponse& tagged, const SourceDocument& doc, const Query& q) {
  if (q.document_id != doc.id) throw Error(ErrorKind::invalid_input, "query and document do not match");
  const auto ids = detail::check_tagged(tagged);
  if (ids.empty()) throw Error(ErrorKind::nothing_to_rewrite, "response has no dislike spans");
  RewritePrompt p;
  p.system = rewrite_system_prompt();
  p.user = render_template(assets::rewrite_user_v1, {{"User Query", q.text},
                                                     {"Knowledge Source", doc.text},
                                                     {"Response with Feedback Highlights", tagged.text_with_tags},
                                                     {"Highlight Reasons", render_reasons(tagged.reasons)}});
  return p;
}

// ---- Step parsing -------------------------------------------------------

struct StepBlock {
  int number = 0;
  std::string text;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Accepts "Step 3", "Step 3:", "### Step 3", "**Step 3**".
inline std::optional<int> step_label(std::string_view line) {
  auto s = trim(line);
  while (!s.empty() && (s.front() == '#' || s.front() == '*')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == '*' || s.back() == ':')) s.remove_suffix(1);
  s = trim(s);
  if (s.substr(0, 5) != "Step ") return std::nullopt;
  s.remove_prefix(5);
  s = trim(s);
  if (s.empty() || s.size() > 6) return std::nullopt;
  int n = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    n = n * 10 + (c - '0');
  }
  return n;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (true) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

}  // namespace detail

// Extracts every "Step N" label followed by a fenced block. The closing fence
// must repeat the opening backtick run exactly, so responses may contain
// shorter fences of their own.
inline std::vector<StepBlock> extract_step_blocks(std::string_view raw) {
  const auto lines = detail::split_lines(raw);
  std::vector<StepBlock> blocks;
  std::size_t i = 0;
  while (i < lines.size()) {
    const auto label = detail::step_label(lines[i]);
    if (!label) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < lines.size() && detail::trim(lines[j]).empty()) ++j;
    if (j >= lines.size()) break;
    const auto opener = detail::trim(lines[j]);
    std::size_t ticks = 0;
    while (ticks < opener.size() && opener[ticks] == '`') ++ticks;
    if (ticks < 3) {
      i = j;
      continue;
    }
    const std::string fence(ticks, '`');
    std::size_t end = j + 1;
    while (end < lines.size() && detail::trim(lines[end]) != fence) ++end;
    std::string body;
    for (std::size_t k = j + 1; k < end && k < lines.size(); ++k) {
      if (k > j + 1) body += '\n';
      body += lines[k];
    }
    blocks.push_back({*label, std::move(body)});
    i = end + 1;
  }
  return blocks;
}

inline std::vector<std::string> parse_steps(std::string_view raw_model_output, int k) {
  if (k < 1) throw Error(ErrorKind::invalid_input, "expected step count must be >= 1");
  const auto blocks = extract_step_blocks(raw_model_output);
  if (blocks.size() != static_cast<std::size_t>(k)) {
    throw Error(ErrorKind::step_count_error,
                "expected " + std::to_string(k) + " steps, found " + std::to_string(blocks.size()));
  }
  std::vector<std::string> steps;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].number != static_cast<int>(i) + 1) {
      throw Error(ErrorKind::step_count_error, "steps are not numbered 1.." + std::to_string(k));
    }
    ParsedTagged parsed;
    try {
      parsed = parse_tagged(blocks[i].text);
    } catch (const Error& e) {
      throw Error(ErrorKind::tag_error, "step " + std::to_string(i + 1) + ": " + e.what());
    }
    const auto ids = dislike_ids(parsed);
    for (int id = static_cast<int>(i) + 2; id <= k; ++id) {
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
        throw Error(ErrorKind::tag_error, "step " + std::to_string(i + 1) + " dropped the tag of unaddressed dislike " +
                                              std::to_string(id));
      }
    }
    steps.push_back(blocks[i].text);
  }
  return steps;
}

inline std::string format_steps(const std::vector<std::string>& steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += "Step " + std::to_string(i + 1) + "\n```\n" + steps[i] + "\n```";
  }
  return out;
}

// ---- Structural validation ---------------------------------------------

namespace detail {

struct Range {
  std::size_t start = 0;
  std::size_t end = 0;
};

struct Cluster {
  std::size_t a_start, a_end;
  std::size_t b_start, b_end;
};

inline bool touches(const Range& cluster, const Range& w) {
  if (cluster.start == cluster.end) return w.start <= cluster.start && cluster.start <= w.end;
  return cluster.start < w.end && w.start < cluster.end;
}

inline bool touches_core(const Range& cluster, const Range& span) {
  if (cluster.start == cluster.end) return span.start < cluster.start && cluster.start < span.end;
  return cluster.start < span.end && span.start < cluster.end;
}

inline std::size_t remap(std::size_t x, std::size_t region_start, std::size_t region_end_before,
                         std::size_t region_end_after, bool is_end) {
  if (x <= region_start) return x;
  if (x >= region_end_before) return x - region_end_before + region_end_after;
  return is_end ? region_end_after : region_start;
}

inline std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (int id : ids) s += (s.empty() ? "" : ",") + std::to_string(id);
  return s;
}

}  // namespace detail

inline ChainVerdict validate_chain(const std::vector<std::string>& chain_steps, const ChainValidationConfig& cfg = {}) {
  ChainVerdict verdict;
  verdict.config = cfg;
  auto fail = [&](std::size_t step, FailureReason r, std::string detail) {
    verdict.failures.push_back({step, r, std::move(detail)});
  };
  if (chain_steps.size() < 2) {
    fail(0, FailureReason::tag_bookkeeping, "a chain needs at least two steps");
    return verdict;
  }

  std::vector<std::optional<ParsedTagged>> parsed(chain_steps.size());
  for (std::size_t i = 0; i < chain_steps.size(); ++i) {
    try {
      parsed[i] = parse_tagged(chain_steps[i]);
    } catch (const Error& e) {
      fail(i, FailureReason::tag_bookkeeping, e.what());
    }
  }
  if (!parsed[0]) return verdict;

  std::map<int, detail::Range> positions;
  {
    std::vector<std::pair<std::size_t, int>> by_start;
    for (const auto& h : parsed[0]->highlights) {
      if (h.polarity != Polarity::dislike) continue;
      positions[h.id] = {h.start, h.end};
      by_start.emplace_back(h.start, h.id);
    }
    std::stable_sort(by_start.begin(), by_start.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < by_start.size(); ++i) {
      if (by_start[i].second != static_cast<int>(i) + 1) {
        fail(0, FailureReason::tag_bookkeeping, "initial dislike ids are not 1..k left to right");
        break;
      }
    }
  }
  const std::size_t k = positions.size();
  if (chain_steps.size() != k + 1) {
    fail(chain_steps.size() - 1, FailureReason::tag_bookkeeping,
         "expected " + std::to_string(k + 1) + " steps for " + std::to_string(k) + " dislike spans, got " +
             std::to_string(chain_steps.size()));
  }

  std::set<int> remaining;
  for (const auto& [id, r] : positions) remaining.insert(id);
  std::optional<std::u32string> prev = utf8::decode(parsed[0]->plain_text);

  for (std::size_t i = 1; i < chain_steps.size(); ++i) {
    if (!parsed[i]) {
      prev.reset();
      continue;
    }
    const auto cur = utf8::decode(parsed[i]->plain_text);
    std::map<int, detail::Range> tag_pos;
    for (const auto& h : parsed[i]->highlights) {
      if (h.polarity == Polarity::dislike) tag_pos[h.id] = {h.start, h.end};
    }
    if (!prev) {
      // The previous step could not be read; resynchronise on this one.
      std::set<int> kept;
      for (int id : remaining) {
        if (tag_pos.count(id)) {
          kept.insert(id);
          positions[id] = tag_pos[id];
        }
      }
      remaining = std::move(kept);
      prev = cur;
      continue;
    }

    std::vector<int> removed;
    std::vector<int> added;
    for (int id : remaining) {
      if (!tag_pos.count(id)) removed.push_back(id);
    }
    for (const auto& [id, r] : tag_pos) {
      if (!remaining.count(id)) added.push_back(id);
    }
    const std::optional<int> expected =
        remaining.empty() ? std::nullopt : std::optional<int>(*remaining.begin());
    if (!added.empty()) fail(i, FailureReason::tag_bookkeeping, "unexpected dislike ids " + detail::join_ids(added));
    bool multi_reported = false;
    if (!expected) {
      fail(i, FailureReason::tag_bookkeeping, "step has no dislike span left to address");
    } else if (removed.empty()) {
      fail(i, FailureReason::tag_bookkeeping, "no dislike tag was removed");
    } else if (removed.size() > 1) {
      fail(i, FailureReason::multi_edit, "removed dislike ids " + detail::join_ids(removed) + " in one step");
      multi_reported = true;
    } else if (removed.front() != *expected) {
      fail(i, FailureReason::order_violation, "addressed dislike " + std::to_string(removed.front()) +
                                                  " before dislike " + std::to_string(*expected));
    }

    const int addressed = removed.size() == 1 ? removed.front() : expected.value_or(-1);
    if (prev && addressed > 0 && positions.count(addressed)) {
      const auto& a = *prev;
      const auto trim = diff::common_affixes(a, cur);
      const std::size_t p = trim.prefix;
      const std::size_t a_end = a.size() - trim.suffix;
      const std::size_t b_end = cur.size() - trim.suffix;
      const std::size_t replaced = a_end - p;
      const std::size_t replacement = b_end - p;
      const auto span = positions.at(addressed);

      if (replaced == 0 && replacement == 0) {
        fail(i, FailureReason::wrong_span, "step leaves the text unchanged");
      } else {
        const detail::Range window{span.start > cfg.context_margin ? span.start - cfg.context_margin : 0,
                                   std::min(a.size(), span.end + cfg.context_margin)};
        const auto runs = diff::edit_script(std::u32string_view(a).substr(p, replaced),
                                            std::u32string_view(cur).substr(p, replacement));
        std::vector<detail::Cluster> clusters;
        bool open = false;
        for (const auto& run : runs) {
          const std::size_t ra = p + run.a_pos;
          const std::size_t rb = p + run.b_pos;
          if (run.op == diff::Op::equal) {
            const bool inside_window = window.start <= ra && ra + run.length <= window.end;
            if (run.length >= cfg.min_gap && !inside_window) open = false;
            continue;
          }
          const std::size_t a_after = run.op == diff::Op::remove ? ra + run.length : ra;
          const std::size_t b_after = run.op == diff::Op::insert ? rb + run.length : rb;
          if (!open) {
            clusters.push_back({ra, a_after, rb, b_after});
            open = true;
          } else {
            clusters.back().a_end = a_after;
            clusters.back().b_end = b_after;
          }
        }

        if (clusters.size() > 1 && !multi_reported) {
          fail(i, FailureReason::multi_edit, std::to_string(clusters.size()) + " disjoint edited regions");
          multi_reported = true;
        }
        const bool on_span = std::any_of(clusters.begin(), clusters.end(), [&](const detail::Cluster& c) {
          return detail::touches({c.a_start, c.a_end}, window);
        });
        if (!on_span) {
          fail(i, FailureReason::wrong_span, "edit does not touch dislike span " + std::to_string(addressed));
        } else if (clusters.size() == 1 &&
                   (clusters.front().a_start < window.start || clusters.front().a_end > window.end)) {
          fail(i, FailureReason::non_contiguous, "edit runs past the context window of dislike span " +
                                                     std::to_string(addressed));
        }
        for (const auto& [id, r] : positions) {
          if (id == addressed || !remaining.count(id) || multi_reported) continue;
          const bool overlaps_addressed = r.start < span.end && span.start < r.end;
          if (overlaps_addressed) continue;
          const bool hit = std::any_of(clusters.begin(), clusters.end(), [&](const detail::Cluster& c) {
            return detail::touches_core({c.a_start, c.a_end}, r);
          });
          if (hit) {
            fail(i, FailureReason::multi_edit, "edit also rewrites dislike span " + std::to_string(id));
            multi_reported = true;
          }
        }

        const std::size_t base = std::max(replaced, span.end - span.start);
        const double growth = static_cast<double>(replacement) / static_cast<double>(std::max<std::size_t>(base, 1));
        const double change = a.empty() ? 0.0
                                        : std::abs(static_cast<double>(cur.size()) - static_cast<double>(a.size())) /
                                              static_cast<double>(a.size());
        if (growth > cfg.region_growth_limit || change > cfg.length_band) {
          std::ostringstream d;
          d << "replacement/replaced = " << growth << ", response length change = " << change * 100.0 << "%";
          fail(i, FailureReason::length_blowup, d.str());
        }

        for (auto& [id, r] : positions) {
          if (id == addressed || !remaining.count(id)) continue;
          const bool damaged = detail::touches_core({p, a_end}, r);
          r.start = detail::remap(r.start, p, a_end, b_end, false);
          r.end = detail::remap(r.end, p, a_end, b_end, true);
          const auto tp = tag_pos.find(id);
          if (!damaged && tp != tag_pos.end() && (tp->second.start != r.start || tp->second.end != r.end)) {
            fail(i, FailureReason::tag_bookkeeping, "tag of dislike " + std::to_string(id) + " moved");
          }
        }
      }
    }
    for (int id : removed) remaining.erase(id);
    prev = cur;
  }
  if (!remaining.empty()) {
    fail(chain_steps.size() - 1, FailureReason::tag_bookkeeping,
         "final step still carries dislike ids " +
             detail::join_ids(std::vector<int>(remaining.begin(), remaining.end())));
  }
  return verdict;
}

// ---- Chains -------------------------------------------------------------

struct ImprovementChain {
  std::string sequence_id;
  std::string item_id;
  std::string annotator_id;
  std::string response_id;
  std::string document_id;
  std::string query_id;
  std::vector<std::string> steps;  // tagged a0 .. a*
  std::vector<int> addressed_ids;
  ChainVerdict verdict;
  int attempt_count = 0;

  bool valid() const { return verdict.valid(); }
  std::size_t dislike_count() const { return steps.empty() ? 0 : steps.size() - 1; }
};

inline void to_json(Json& j, const ImprovementChain& c) {
  j = Json{{"sequence_id", c.sequence_id},   {"item_id", c.item_id},         {"annotator_id", c.annotator_id},
           {"steps", c.steps},               {"addressed_ids", c.addressed_ids}, {"verdict", c.verdict},
           {"attempt_count", c.attempt_count}, {"response_id", c.response_id}, {"document_id", c.document_id},
           {"query_id", c.query_id}};
}
inline void from_json(const Json& j, ImprovementChain& c) {
  j.at("sequence_id").get_to(c.sequence_id);
  j.at("item_id").get_to(c.item_id);
  j.at("annotator_id").get_to(c.annotator_id);
  j.at("steps").get_to(c.steps);
  j.at("addressed_ids").get_to(c.addressed_ids);
  j.at("verdict").get_to(c.verdict);
  c.attempt_count = j.value("attempt_count", 1);
  c.response_id = j.value("response_id", std::string{});
  c.document_id = j.value("document_id", std::string{});
  c.query_id = j.value("query_id", std::string{});
}

class ChainFailure : public Error {
 public:
  ChainFailure(ChainVerdict last, int attempts)
      : Error(ErrorKind::chain_failure, "no valid improvement chain after " + std::to_string(attempts) + " attempt" +
                                            (attempts == 1 ? "" : "s")),
        last_(std::move(last)),
        attempts_(attempts) {}

  const ChainVerdict& last_verdict() const { return last_; }
  int attempts() const { return attempts_; }

 private:
  ChainVerdict last_;
  int attempts_;
};

struct ChainContext {
  std::string sequence_id;
  std::string item_id;
  std::string annotator_id;
  std::string response_id;
};

struct BuildChainOptions {
  std::string model;
  int max_attempts = 3;
  SamplingConfig sampling;
  ChainValidationConfig validation;
};

// Requests the whole sequence, validates it, and regenerates from scratch on
// failure until a valid chain appears or the attempt budget runs out.
inline ImprovementChain build_chain(GenerationClient& client, const TaggedResponse& tagged, const SourceDocument& doc,
                                    const Query& q, const BuildChainOptions& opts, const ChainContext& ctx = {}) {
  if (opts.max_attempts < 1) throw Error(ErrorKind::invalid_input, "max_attempts must be >= 1");
  const auto prompt = assemble_rewrite_prompt(tagged, doc, q);
  const auto k = dislike_ids(parse_tagged(tagged.text_with_tags)).size();

  ChatRequest req;
  req.model = opts.model;
  req.messages = {{"system", prompt.system}, {"user", prompt.user}};
  req.temperature = opts.sampling.temperature;
  req.top_p = opts.sampling.top_p;

  ChainVerdict last;
  for (int attempt = 1; attempt <= opts.max_attempts; ++attempt) {
    const auto raw = client.chat_completion(req);
    const auto blocks = extract_step_blocks(raw);
    std::vector<std::string> steps = {tagged.text_with_tags};
    for (const auto& b : blocks) steps.push_back(b.text);
    bool numbered = true;
    for (std::size_t i = 0; i < blocks.size(); ++i) numbered = numbered && blocks[i].number == static_cast<int>(i) + 1;
    last = validate_chain(steps, opts.validation);
    if (!numbered) {
      last.failures.push_back({0, FailureReason::tag_bookkeeping, "step labels are not numbered 1..k"});
    }
    if (blocks.size() != k && !last.has(FailureReason::tag_bookkeeping)) {
      last.failures.push_back({0, FailureReason::tag_bookkeeping,
                               "expected " + std::to_string(k) + " steps, found " + std::to_string(blocks.size())});
    }
    if (last.valid()) {
      ImprovementChain chain;
      chain.sequence_id = ctx.sequence_id;
      chain.item_id = ctx.item_id;
      chain.annotator_id = ctx.annotator_id;
      chain.response_id = ctx.response_id;
      chain.document_id = doc.id;
      chain.query_id = q.id;
      chain.steps = std::move(steps);
      for (std::size_t id = 1; id <= k; ++id) chain.addressed_ids.push_back(static_cast<int>(id));
      chain.verdict = last;
      chain.attempt_count = attempt;
      return chain;
    }
  }
  throw ChainFailure(last, opts.max_attempts);
}

}  // namespace revchain
