#pragma once

// Span-level feedback records, A/B judgments, and the dataset statistics
// computed over them: per-domain counts, agreement, and annotation time.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "revchain/corpus.hpp"
#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/taxonomy.hpp"
#include "revchain/utf8.hpp"

namespace revchain {

// Offsets are Unicode scalar-value indices, half-open [start, end).
struct SpanHighlight {
  int id = 0;
  Polarity polarity = Polarity::dislike;
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<std::string> attributes;
  std::optional<std::string> free_text;

  bool operator==(const SpanHighlight&) const = default;

  bool has_rationale() const {
    return !attributes.empty() || (free_text.has_value() && !free_text->empty());
  }
};

struct ResponseLevelFeedback {
  std::vector<std::string> liked;
  std::vector<std::string> disliked;
  std::string free_text;

  bool operator==(const ResponseLevelFeedback&) const = default;
};

struct AnnotationRecord {
  std::string annotator_id;
  std::string item_id;
  std::string response_id;
  Domain domain = Domain::wikipedia;
  std::vector<SpanHighlight> highlights;
  ResponseLevelFeedback response_level;
  double duration_seconds = 0.0;

  bool operator==(const AnnotationRecord&) const = default;

  std::size_t count(Polarity p) const {
    return static_cast<std::size_t>(std::count_if(highlights.begin(), highlights.end(),
                                                  [&](const SpanHighlight& h) { return h.polarity == p; }));
  }
};

// A record whose offsets, rationales, and dislike numbering were checked
// against the text it annotates.
struct ValidatedRecord {
  AnnotationRecord record;
  std::string response_text;

  bool operator==(const ValidatedRecord&) const = default;
};

enum class Choice { A, B, tie };

NLOHMANN_JSON_SERIALIZE_ENUM(Choice, {{Choice::A, "A"}, {Choice::B, "B"}, {Choice::tie, "tie"}})

struct ABJudgment {
  std::string annotator_id;
  std::string item_id;
  Choice choice = Choice::A;
  std::string explanation;

  bool operator==(const ABJudgment&) const = default;

  // Ties are permitted but expected to be very rare.
  bool flagged_rare() const { return choice == Choice::tie; }

  void validate() const {
    if (explanation.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorKind::invalid_input, "A/B judgment requires an explanation");
    }
  }
};

// ---- JSON ---------------------------------------------------------------

inline void to_json(Json& j, const SpanHighlight& h) {
  j = Json{{"id", h.id},
           {"polarity", h.polarity},
           {"start", h.start},
           {"end", h.end},
           {"attributes", h.attributes}};
  if (h.free_text) j["free_text"] = *h.free_text;
}
inline void from_json(const Json& j, SpanHighlight& h) {
  h.id = j.value("id", 0);
  j.at("polarity").get_to(h.polarity);
  const auto start = j.at("start").get<long long>();
  const auto end = j.at("end").get<long long>();
  if (start < 0 || end < 0) throw Error(ErrorKind::bounds_error, "negative span offset");
  h.start = static_cast<std::size_t>(start);
  h.end = static_cast<std::size_t>(end);
  h.attributes = j.value("attributes", std::vector<std::string>{});
  if (j.contains("free_text") && !j.at("free_text").is_null()) {
    h.free_text = j.at("free_text").get<std::string>();
  } else {
    h.free_text.reset();
  }
}

inline void to_json(Json& j, const ResponseLevelFeedback& f) {
  j = Json{{"liked", f.liked}, {"disliked", f.disliked}, {"free_text", f.free_text}};
}
inline void from_json(const Json& j, ResponseLevelFeedback& f) {
  f.liked = j.value("liked", std::vector<std::string>{});
  f.disliked = j.value("disliked", std::vector<std::string>{});
  f.free_text = j.value("free_text", std::string{});
}

inline void to_json(Json& j, const AnnotationRecord& r) {
  j = Json{{"annotator_id", r.annotator_id},
           {"item_id", r.item_id},
           {"response_id", r.response_id},
           {"domain", r.domain},
           {"highlights", r.highlights},
           {"response_level", r.response_level},
           {"duration_seconds", r.duration_seconds}};
}
inline void from_json(const Json& j, AnnotationRecord& r) {
  j.at("annotator_id").get_to(r.annotator_id);
  j.at("item_id").get_to(r.item_id);
  j.at("response_id").get_to(r.response_id);
  r.domain = parse_domain(j.at("domain").get<std::string>());
  r.highlights = j.value("highlights", std::vector<SpanHighlight>{});
  r.response_level = j.value("response_level", ResponseLevelFeedback{});
  r.duration_seconds = j.value("duration_seconds", 0.0);
}

inline void to_json(Json& j, const ValidatedRecord& v) {
  to_json(j, v.record);
  j["response_text"] = v.response_text;
}
inline void from_json(const Json& j, ValidatedRecord& v) {
  from_json(j, v.record);
  j.at("response_text").get_to(v.response_text);
}

inline void to_json(Json& j, const ABJudgment& a) {
  j = Json{{"annotator_id", a.annotator_id},
           {"item_id", a.item_id},
           {"choice", a.choice},
           {"explanation", a.explanation}};
}
inline void from_json(const Json& j, ABJudgment& a) {
  j.at("annotator_id").get_to(a.annotator_id);
  j.at("item_id").get_to(a.item_id);
  const auto c = j.at("choice").get<std::string>();
  if (c != "A" && c != "B" && c != "tie") throw Error(ErrorKind::schema_error, "bad choice '" + c + "'");
  j.at("choice").get_to(a.choice);
  j.at("explanation").get_to(a.explanation);
}

// ---- Validation ---------------------------------------------------------

inline void validate_highlight(const SpanHighlight& h, std::size_t text_length,
                               const AttributeTaxonomy& tax = default_taxonomy()) {
  if (h.start == h.end) {
    throw Error(ErrorKind::empty_span_error, "highlight at " + std::to_string(h.start) + " has zero length");
  }
  if (h.start > h.end || h.end > text_length) {
    throw Error(ErrorKind::bounds_error, "span [" + std::to_string(h.start) + "," + std::to_string(h.end) +
                                             ") outside response of length " + std::to_string(text_length));
  }
  std::set<std::string> seen;
  for (const auto& a : h.attributes) {
    if (!tax.contains(h.polarity, a)) {
      throw Error(ErrorKind::taxonomy_error,
                  "'" + a + "' is not a " + std::string(polarity_name(h.polarity)) + " attribute");
    }
    if (!seen.insert(a).second) throw Error(ErrorKind::taxonomy_error, "attribute '" + a + "' ticked twice");
  }
  if (!h.has_rationale()) {
    throw Error(ErrorKind::invalid_input, "highlight needs at least one attribute or free-text reason");
  }
}

inline void validate_response_level(const ResponseLevelFeedback& f,
                                    const AttributeTaxonomy& tax = default_taxonomy()) {
  for (const auto& a : f.liked) {
    if (!tax.contains(Polarity::like, a)) throw Error(ErrorKind::taxonomy_error, "'" + a + "' is not a like attribute");
  }
  for (const auto& a : f.disliked) {
    if (!tax.contains(Polarity::dislike, a)) {
      throw Error(ErrorKind::taxonomy_error, "'" + a + "' is not a dislike attribute");
    }
  }
}

// Checks every highlight against the response and renumbers ids so that each
// polarity is numbered 1..k left-to-right by start offset.
inline ValidatedRecord validate_record(AnnotationRecord rec, std::string response_text,
                                       const AttributeTaxonomy& tax = default_taxonomy()) {
  const std::size_t length = utf8::length(response_text);
  if (!(rec.duration_seconds >= 0.0)) throw Error(ErrorKind::invalid_input, "duration must be >= 0");
  for (const auto& h : rec.highlights) validate_highlight(h, length, tax);
  validate_response_level(rec.response_level, tax);

  auto& hs = rec.highlights;
  std::stable_sort(hs.begin(), hs.end(), [](const SpanHighlight& a, const SpanHighlight& b) {
    return std::tie(a.start, a.end, a.polarity, a.id) < std::tie(b.start, b.end, b.polarity, b.id);
  });
  int next_like = 1;
  int next_dislike = 1;
  for (auto& h : hs) h.id = h.polarity == Polarity::like ? next_like++ : next_dislike++;
  return ValidatedRecord{std::move(rec), std::move(response_text)};
}

// ---- Statistics ---------------------------------------------------------

inline bool is_unicode_space(char32_t c) {
  return c == U' ' || (c >= U'\t' && c <= U'\r') || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

inline std::size_t whitespace_token_count(std::u32string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char32_t c : text) {
    if (is_unicode_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

struct StatsRow {
  std::size_t responses = 0;       // N
  std::size_t like_spans = 0;      // H+
  std::size_t dislike_spans = 0;   // H-
  std::size_t attributes = 0;      // sigma A
  std::size_t words = 0;           // #w

  bool operator==(const StatsRow&) const = default;

  StatsRow& operator+=(const StatsRow& o) {
    responses += o.responses;
    like_spans += o.like_spans;
    dislike_spans += o.dislike_spans;
    attributes += o.attributes;
    words += o.words;
    return *this;
  }
};

inline constexpr std::array<Domain, 4> kAllDomains = {Domain::yelp, Domain::news, Domain::wikipedia,
                                                      Domain::arxiv};

struct AnnotationStats {
  std::map<Domain, StatsRow> rows = {
      {Domain::yelp, {}}, {Domain::news, {}}, {Domain::wikipedia, {}}, {Domain::arxiv, {}}};

  bool operator==(const AnnotationStats&) const = default;

  StatsRow total() const {
    StatsRow t;
    for (const auto& [d, r] : rows) t += r;
    return t;
  }

  AnnotationStats& operator+=(const AnnotationStats& o) {
    for (const auto& [d, r] : o.rows) rows[d] += r;
    return *this;
  }
  friend AnnotationStats operator+(AnnotationStats a, const AnnotationStats& b) { return a += b; }
};

inline AnnotationStats compute_stats(std::span<const ValidatedRecord> records) {
  AnnotationStats stats;
  for (const auto& v : records) {
    const auto text = utf8::decode(v.response_text);
    auto& row = stats.rows[v.record.domain];
    ++row.responses;
    for (const auto& h : v.record.highlights) {
      (h.polarity == Polarity::like ? row.like_spans : row.dislike_spans) += 1;
      row.attributes += h.attributes.size();
      const auto end = std::min(h.end, text.size());
      const auto start = std::min(h.start, end);
      row.words += whitespace_token_count(std::u32string_view(text).substr(start, end - start));
    }
  }
  return stats;
}

struct SpanAverages {
  double like_avg = 0.0;
  double dislike_avg = 0.0;
  std::size_t total_spans = 0;
  std::size_t total_attributes = 0;

  // Undefined when no spans were marked.
  double attrs_per_span() const {
    if (total_spans == 0) throw Error(ErrorKind::undefined_error, "attributes per span undefined with zero spans");
    return static_cast<double>(total_attributes) / static_cast<double>(total_spans);
  }
};

inline SpanAverages mean_spans_per_response(const StatsRow& totals) {
  if (totals.responses == 0) throw Error(ErrorKind::undefined_error, "no responses annotated");
  const auto n = static_cast<double>(totals.responses);
  return SpanAverages{static_cast<double>(totals.like_spans) / n, static_cast<double>(totals.dislike_spans) / n,
                      totals.like_spans + totals.dislike_spans, totals.attributes};
}

inline SpanAverages mean_spans_per_response(const AnnotationStats& stats) {
  return mean_spans_per_response(stats.total());
}

inline Json stats_to_json(const AnnotationStats& stats) {
  auto row_json = [](const StatsRow& r) {
    return Json{{"N", r.responses}, {"H_plus", r.like_spans}, {"H_minus", r.dislike_spans},
                {"sigma_A", r.attributes}, {"word_count", r.words}};
  };
  Json j = Json::object();
  for (const auto d : kAllDomains) j[std::string(domain_name(d))] = row_json(stats.rows.at(d));
  j["total"] = row_json(stats.total());
  return j;
}

inline std::string stats_table(const AnnotationStats& stats) {
  std::ostringstream out;
  auto line = [&](const std::string& name, const StatsRow& r) {
    out << std::left << std::setw(12) << name << std::right << std::setw(6) << r.responses << std::setw(6)
        << r.like_spans << std::setw(6) << r.dislike_spans << std::setw(8) << r.attributes << std::setw(9)
        << r.words << '\n';
  };
  out << std::left << std::setw(12) << "Domain" << std::right << std::setw(6) << "N" << std::setw(6) << "H+"
      << std::setw(6) << "H-" << std::setw(8) << "SumA" << std::setw(9) << "#w" << '\n';
  for (const auto d : kAllDomains) line(std::string(domain_name(d)), stats.rows.at(d));
  line("Total", stats.total());
  return out.str();
}

// ---- Agreement ----------------------------------------------------------

// items x categories; entry (i, c) counts raters assigning item i to c.
struct AgreementMatrix {
  std::vector<std::vector<int>> counts;

  int raters_per_item() const {
    if (counts.empty()) return 0;
    return std::accumulate(counts.front().begin(), counts.front().end(), 0);
  }
};

inline double fleiss_kappa(const AgreementMatrix& m) {
  if (m.counts.empty()) throw Error(ErrorKind::matrix_error, "agreement matrix has no items");
  const std::size_t categories = m.counts.front().size();
  if (categories == 0) throw Error(ErrorKind::matrix_error, "agreement matrix has no categories");
  const int n = m.raters_per_item();
  if (n < 2) throw Error(ErrorKind::matrix_error, "need at least 2 raters per item");
  const auto items = static_cast<double>(m.counts.size());

  std::vector<double> column(categories, 0.0);
  double p_bar = 0.0;
  for (std::size_t i = 0; i < m.counts.size(); ++i) {
    const auto& row = m.counts[i];
    if (row.size() != categories) throw Error(ErrorKind::matrix_error, "row " + std::to_string(i) + " has wrong width");
    long long sum = 0;
    long long sq = 0;
    for (std::size_t c = 0; c < categories; ++c) {
      if (row[c] < 0) throw Error(ErrorKind::matrix_error, "negative count");
      sum += row[c];
      sq += static_cast<long long>(row[c]) * row[c];
      column[c] += row[c];
    }
    if (sum != n) {
      throw Error(ErrorKind::matrix_error, "row " + std::to_string(i) + " sums to " + std::to_string(sum) +
                                               ", expected " + std::to_string(n));
    }
    p_bar += static_cast<double>(sq - n) / (static_cast<double>(n) * (n - 1));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (double c : column) {
    const double p = c / (items * n);
    p_e += p * p;
  }
  // Every rating fell into one category: agreement is perfect by definition.
  if (p_e >= 1.0) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

// ---- Annotation time ----------------------------------------------------

// Quantile by linear interpolation between order statistics of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::undefined_error, "quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Drops values farther than 1.5 IQR from the median; kept values retain
// their original order.
inline std::vector<double> trim_durations(std::span<const double> durations) {
  if (durations.empty()) return {};
  std::vector<double> sorted(durations.begin(), durations.end());
  std::sort(sorted.begin(), sorted.end());
  const double median = quantile_sorted(sorted, 0.5);
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  std::vector<double> kept;
  for (double x : durations) {
    if (std::abs(x - median) <= 1.5 * iqr) kept.push_back(x);
  }
  return kept;
}

struct TimedJudgment {
  ABJudgment judgment;
  double duration_seconds = 0.0;
};

struct TimingReport {
  double full_protocol_mean = 0.0;
  double ab_only_mean = 0.0;
  double ratio = 0.0;
  double overhead_pct = 0.0;
  double pairs_per_annotation = 0.0;
  std::size_t full_kept = 0;
  std::size_t full_total = 0;
  std::size_t ab_kept = 0;
  std::size_t ab_total = 0;
};

inline double timing_ratio(double full_mean, double ab_mean) {
  if (!(ab_mean > 0.0)) throw Error(ErrorKind::undefined_error, "A/B-only mean must be positive");
  return full_mean / ab_mean;
}

// One A/B pair plus one synthetic stepwise pair per dislike span on each side.
inline double pairs_per_annotation(double dislike_avg_a, double dislike_avg_b) {
  return 1.0 + dislike_avg_a + dislike_avg_b;
}

inline TimingReport timing_report(std::span<const AnnotationRecord> records_pairwise,
                                  std::span<const TimedJudgment> ab_only) {
  if (records_pairwise.empty() || ab_only.empty()) {
    throw Error(ErrorKind::undefined_error, "timing report needs both full-protocol and A/B-only durations");
  }
  // Both records of an item share one duration; count each item once.
  std::map<std::pair<std::string, std::string>, double> per_item;
  std::map<std::pair<std::string, std::string>, std::size_t> dislikes;
  for (const auto& r : records_pairwise) {
    const auto key = std::make_pair(r.annotator_id, r.item_id);
    auto& d = per_item[key];
    d = std::max(d, r.duration_seconds);
    dislikes[key] += r.count(Polarity::dislike);
  }
  auto mean_of = [](const std::vector<double>& xs) {
    if (xs.empty()) throw Error(ErrorKind::undefined_error, "every duration was trimmed");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  };
  std::vector<double> full;
  for (const auto& [k, d] : per_item) full.push_back(d);
  std::vector<double> ab;
  for (const auto& t : ab_only) ab.push_back(t.duration_seconds);
  const auto full_kept = trim_durations(full);
  const auto ab_kept = trim_durations(ab);

  TimingReport rep;
  rep.full_protocol_mean = mean_of(full_kept);
  rep.ab_only_mean = mean_of(ab_kept);
  rep.ratio = timing_ratio(rep.full_protocol_mean, rep.ab_only_mean);
  rep.overhead_pct = (rep.ratio - 1.0) * 100.0;
  std::size_t total_dislikes = 0;
  for (const auto& [k, n] : dislikes) total_dislikes += n;
  rep.pairs_per_annotation = 1.0 + static_cast<double>(total_dislikes) / static_cast<double>(per_item.size());
  rep.full_kept = full_kept.size();
  rep.full_total = full.size();
  rep.ab_kept = ab_kept.size();
  rep.ab_total = ab.size();
  return rep;
}

inline Json to_json_value(const TimingReport& r) {
  return Json{{"full_protocol_mean_seconds", r.full_protocol_mean},
              {"ab_only_mean_seconds", r.ab_only_mean},
              {"ratio", r.ratio},
              {"overhead_percent", r.overhead_pct},
              {"pairs_per_annotation", r.pairs_per_annotation},
              {"full_protocol_kept", r.full_kept},
              {"full_protocol_total", r.full_total},
              {"ab_only_kept", r.ab_kept},
              {"ab_only_total", r.ab_total}};
}

inline std::string timing_table(const TimingReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "Protocol          Mean (s)   Kept\n";
  out << "Full protocol   " << std::setw(10) << r.full_protocol_mean << std::setw(7) << r.full_kept << "/"
      << r.full_total << '\n';
  out << "A/B only        " << std::setw(10) << r.ab_only_mean << std::setw(7) << r.ab_kept << "/" << r.ab_total
      << '\n';
  out << std::setprecision(3) << "Ratio " << r.ratio << " (" << std::setprecision(1) << r.overhead_pct
      << "% overhead), " << std::setprecision(2) << r.pairs_per_annotation << " pairs per annotation\n";
  return out.str();
}

}  // namespace revchain
