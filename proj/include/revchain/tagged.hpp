#pragma once

// Inline highlight tags: <like id='N'>…</like id='N'> and
// <dislike id='N'>…</dislike id='N'>.
//
// Dislike tags are emitted as single well-nested segments. A like span that
// crosses a dislike boundary is split into segments carrying the same id;
// parsing recovers the like span as the hull of its segments.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "revchain/annotation.hpp"
#include "revchain/error.hpp"
#include "revchain/taxonomy.hpp"
#include "revchain/utf8.hpp"

namespace revchain {

struct HighlightReason {
  int id = 0;
  Polarity polarity = Polarity::dislike;
  std::string explanation;

  bool operator==(const HighlightReason&) const = default;
};

struct TaggedResponse {
  std::string text_with_tags;
  std::vector<HighlightReason> reasons;

  bool operator==(const TaggedResponse&) const = default;
};

struct ParsedTagged {
  std::string plain_text;
  std::vector<SpanHighlight> highlights;  // sorted by (polarity, id); no attributes
};

inline std::string open_tag(Polarity p, int id) {
  return "<" + std::string(polarity_name(p)) + " id='" + std::to_string(id) + "'>";
}
inline std::string close_tag(Polarity p, int id) {
  return "</" + std::string(polarity_name(p)) + " id='" + std::to_string(id) + "'>";
}

namespace detail {

struct TagPiece {
  std::size_t start;
  std::size_t end;
  Polarity polarity;
  int id;
};

// Splits a like span at the boundaries of dislike spans inside it, dropping
// interior pieces already covered by a dislike. Edge pieces always survive so
// the hull of the output equals the like span.
inline std::vector<TagPiece> like_pieces(const SpanHighlight& like, std::span<const SpanHighlight> dislikes) {
  std::set<std::size_t> cuts = {like.start, like.end};
  for (const auto& d : dislikes) {
    if (d.start > like.start && d.start < like.end) cuts.insert(d.start);
    if (d.end > like.start && d.end < like.end) cuts.insert(d.end);
  }
  struct Raw {
    std::size_t s, e;
    bool covered;
  };
  std::vector<Raw> raw;
  for (auto it = cuts.begin(); std::next(it) != cuts.end(); ++it) {
    const auto s = *it;
    const auto e = *std::next(it);
    const bool covered = std::any_of(dislikes.begin(), dislikes.end(),
                                     [&](const SpanHighlight& d) { return d.start <= s && e <= d.end; });
    raw.push_back({s, e, covered});
  }
  std::vector<TagPiece> out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].covered) {
      const bool uncovered_before =
          std::any_of(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(i), [](const Raw& r) { return !r.covered; });
      const bool uncovered_after = std::any_of(raw.begin() + static_cast<std::ptrdiff_t>(i) + 1, raw.end(),
                                               [](const Raw& r) { return !r.covered; });
      if (uncovered_before && uncovered_after) continue;
    }
    out.push_back({raw[i].s, raw[i].e, Polarity::like, like.id});
  }
  return out;
}

}  // namespace detail

inline std::string highlight_explanation(const SpanHighlight& h, const AttributeTaxonomy& tax = default_taxonomy()) {
  std::string out;
  for (const auto& a : h.attributes) {
    if (!out.empty()) out += ' ';
    out += tax.reason_sentence(h.polarity, a);
  }
  if (h.free_text && !h.free_text->empty()) {
    if (!out.empty()) out += ' ';
    out += *h.free_text;
  }
  return out;
}

inline TaggedResponse serialize_tagged(std::string_view response_text, std::span<const SpanHighlight> highlights,
                                       const AttributeTaxonomy& tax = default_taxonomy()) {
  const auto text = utf8::decode(response_text);
  std::vector<SpanHighlight> dislikes;
  std::vector<SpanHighlight> likes;
  for (const auto& h : highlights) {
    if (h.start >= h.end || h.end > text.size()) {
      throw Error(ErrorKind::bounds_error, "highlight " + std::to_string(h.id) + " does not fit the response");
    }
    (h.polarity == Polarity::dislike ? dislikes : likes).push_back(h);
  }
  for (std::size_t i = 0; i < dislikes.size(); ++i) {
    for (std::size_t k = 0; k < dislikes.size(); ++k) {
      const auto& a = dislikes[i];
      const auto& b = dislikes[k];
      if (i != k && a.start < b.start && b.start < a.end && a.end < b.end) {
        throw Error(ErrorKind::nesting_error, "dislike spans " + std::to_string(a.id) + " and " +
                                                  std::to_string(b.id) + " cross");
      }
    }
  }

  std::vector<detail::TagPiece> pieces;
  for (const auto& d : dislikes) pieces.push_back({d.start, d.end, Polarity::dislike, d.id});
  for (const auto& l : likes) {
    auto lp = detail::like_pieces(l, dislikes);
    pieces.insert(pieces.end(), lp.begin(), lp.end());
  }
  // Outer spans open first: earlier start, then later end, then dislike.
  std::sort(pieces.begin(), pieces.end(), [](const detail::TagPiece& a, const detail::TagPiece& b) {
    const int pa = a.polarity == Polarity::dislike ? 0 : 1;
    const int pb = b.polarity == Polarity::dislike ? 0 : 1;
    return std::make_tuple(a.start, -static_cast<long long>(a.end), pa, a.id) <
           std::make_tuple(b.start, -static_cast<long long>(b.end), pb, b.id);
  });

  std::set<std::size_t> positions;
  for (const auto& p : pieces) {
    positions.insert(p.start);
    positions.insert(p.end);
  }

  std::string out;
  std::vector<detail::TagPiece> stack;
  std::size_t next_piece = 0;
  std::size_t cursor = 0;
  for (const auto pos : positions) {
    out += utf8::encode(std::u32string_view(text).substr(cursor, pos - cursor));
    cursor = pos;
    std::vector<detail::TagPiece> reopen;
    while (std::any_of(stack.begin(), stack.end(), [&](const detail::TagPiece& p) { return p.end == pos; })) {
      const auto top = stack.back();
      stack.pop_back();
      out += close_tag(top.polarity, top.id);
      if (top.end != pos) {
        if (top.polarity == Polarity::dislike) {
          throw Error(ErrorKind::nesting_error, "dislike span " + std::to_string(top.id) + " cannot nest");
        }
        reopen.push_back(top);
      }
    }
    for (auto it = reopen.rbegin(); it != reopen.rend(); ++it) {
      out += open_tag(it->polarity, it->id);
      stack.push_back(*it);
    }
    while (next_piece < pieces.size() && pieces[next_piece].start == pos) {
      out += open_tag(pieces[next_piece].polarity, pieces[next_piece].id);
      stack.push_back(pieces[next_piece]);
      ++next_piece;
    }
  }
  out += utf8::encode(std::u32string_view(text).substr(cursor));

  TaggedResponse tagged;
  tagged.text_with_tags = std::move(out);
  std::vector<SpanHighlight> ordered(highlights.begin(), highlights.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const SpanHighlight& a, const SpanHighlight& b) {
    return std::tie(a.start, a.end) < std::tie(b.start, b.end);
  });
  for (const auto& h : ordered) tagged.reasons.push_back({h.id, h.polarity, highlight_explanation(h, tax)});
  return tagged;
}

inline TaggedResponse serialize_tagged(const ValidatedRecord& v, const AttributeTaxonomy& tax = default_taxonomy()) {
  return serialize_tagged(v.response_text, v.record.highlights, tax);
}

namespace detail {

struct TagToken {
  bool closing;
  Polarity polarity;
  int id;
  std::size_t length;  // bytes consumed
};

// Recognises a highlight tag at the start of `s`. Returns nullopt for text
// that is not tag-like; throws for a malformed highlight tag.
inline std::optional<TagToken> match_tag(std::string_view s) {
  if (s.empty() || s[0] != '<') return std::nullopt;
  std::size_t i = 1;
  bool closing = false;
  if (i < s.size() && s[i] == '/') {
    closing = true;
    ++i;
  }
  Polarity pol;
  const auto rest = s.substr(i);
  if (rest.substr(0, 7) == "dislike") {
    pol = Polarity::dislike;
    i += 7;
  } else if (rest.substr(0, 4) == "like") {
    pol = Polarity::like;
    i += 4;
  } else {
    return std::nullopt;
  }
  if (i >= s.size() || (s[i] != ' ' && s[i] != '>')) return std::nullopt;  // e.g. "<likely"
  auto bad = [&] {
    return Error(ErrorKind::parse_error, "malformed highlight tag near '" + std::string(s.substr(0, 24)) + "'");
  };
  if (s.substr(i, 4) != " id=") throw bad();
  i += 4;
  if (i >= s.size() || (s[i] != '\'' && s[i] != '"')) throw bad();
  const char quote = s[i++];
  const auto digits_start = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i == digits_start || i - digits_start > 9) throw bad();
  const int id = std::stoi(std::string(s.substr(digits_start, i - digits_start)));
  if (i >= s.size() || s[i] != quote) throw bad();
  ++i;
  if (i >= s.size() || s[i] != '>') throw bad();
  ++i;
  return TagToken{closing, pol, id, i};
}

}  // namespace detail

inline ParsedTagged parse_tagged(std::string_view tagged) {
  std::string plain;
  std::size_t plain_len = 0;  // scalar values emitted so far
  struct Open {
    Polarity polarity;
    int id;
    std::size_t start;
  };
  std::vector<Open> stack;
  std::map<int, std::pair<std::size_t, std::size_t>> dislike_spans;
  std::map<int, std::pair<std::size_t, std::size_t>> like_hulls;
  std::set<int> dislikes_seen;

  std::size_t i = 0;
  while (i < tagged.size()) {
    if (tagged[i] == '<') {
      if (auto tok = detail::match_tag(tagged.substr(i))) {
        if (!tok->closing) {
          if (tok->polarity == Polarity::dislike && !dislikes_seen.insert(tok->id).second) {
            throw Error(ErrorKind::parse_error, "dislike id " + std::to_string(tok->id) + " opened twice");
          }
          for (const auto& o : stack) {
            if (o.polarity == tok->polarity && o.id == tok->id) {
              throw Error(ErrorKind::parse_error, std::string(polarity_name(tok->polarity)) + " id " +
                                                      std::to_string(tok->id) + " opened while already open");
            }
          }
          stack.push_back({tok->polarity, tok->id, plain_len});
        } else {
          const auto it = std::find_if(stack.rbegin(), stack.rend(), [&](const Open& o) {
            return o.polarity == tok->polarity && o.id == tok->id;
          });
          if (it == stack.rend()) {
            throw Error(ErrorKind::parse_error, "closing tag for " + std::string(polarity_name(tok->polarity)) +
                                                    " id " + std::to_string(tok->id) + " without an open tag");
          }
          const Open o = *it;
          stack.erase(std::next(it).base());
          if (o.polarity == Polarity::dislike) {
            dislike_spans[o.id] = {o.start, plain_len};
          } else {
            auto [hit, inserted] = like_hulls.try_emplace(o.id, o.start, plain_len);
            if (!inserted) {
              hit->second.first = std::min(hit->second.first, o.start);
              hit->second.second = std::max(hit->second.second, plain_len);
            }
          }
        }
        i += tok->length;
        continue;
      }
    }
    // Copy one UTF-8 encoded scalar value.
    const auto lead = static_cast<unsigned char>(tagged[i]);
    const std::size_t len = lead < 0x80 ? 1 : (lead & 0xE0) == 0xC0 ? 2 : (lead & 0xF0) == 0xE0 ? 3 : 4;
    plain.append(tagged.substr(i, len));
    ++plain_len;
    i += len;
  }
  if (!stack.empty()) {
    throw Error(ErrorKind::parse_error, std::string(polarity_name(stack.back().polarity)) + " id " +
                                            std::to_string(stack.back().id) + " is never closed");
  }
  // Validates the copied bytes.
  (void)utf8::decode(plain);

  ParsedTagged parsed;
  parsed.plain_text = std::move(plain);
  for (const auto& [id, span] : like_hulls) {
    SpanHighlight h;
    h.id = id;
    h.polarity = Polarity::like;
    h.start = span.first;
    h.end = span.second;
    parsed.highlights.push_back(std::move(h));
  }
  for (const auto& [id, span] : dislike_spans) {
    SpanHighlight h;
    h.id = id;
    h.polarity = Polarity::dislike;
    h.start = span.first;
    h.end = span.second;
    parsed.highlights.push_back(std::move(h));
  }
  return parsed;
}

inline std::string strip_tags(std::string_view tagged) { return parse_tagged(tagged).plain_text; }

inline std::vector<int> dislike_ids(const ParsedTagged& parsed) {
  std::vector<int> ids;
  for (const auto& h : parsed.highlights) {
    if (h.polarity == Polarity::dislike) ids.push_back(h.id);
  }
  return ids;
}

}  // namespace revchain
