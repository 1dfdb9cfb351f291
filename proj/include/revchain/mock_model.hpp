#pragma once

// An offline stand-in for the generation endpoint. It recognises the three
// prompt kinds the pipeline sends and answers each one deterministically, so
// the whole pipeline can run without network access.

#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "revchain/chain.hpp"
#include "revchain/generation_client.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/tagged.hpp"
#include "revchain/utf8.hpp"

namespace revchain {

namespace detail {

inline char32_t rotate_char(char32_t c) {
  if (c >= U'a' && c <= U'z') return c == U'z' ? U'a' : c + 1;
  if (c >= U'A' && c <= U'Z') return c == U'Z' ? U'A' : c + 1;
  if (c >= U'0' && c <= U'9') return c == U'9' ? U'0' : c + 1;
  return c;
}

inline bool is_ascii_alnum(char32_t c) {
  return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') || (c >= U'0' && c <= U'9');
}

// Returns the text between `header` and the next "\n## " heading.
inline std::optional<std::string> section_after(std::string_view text, std::string_view header) {
  const auto at = text.find(header);
  if (at == std::string_view::npos) return std::nullopt;
  auto body = text.substr(at + header.size());
  const auto next = body.find("\n## ");
  if (next != std::string_view::npos) body = body.substr(0, next);
  const auto b = body.find_first_not_of('\n');
  if (b == std::string_view::npos) return std::string{};
  const auto e = body.find_last_not_of('\n');
  return std::string(body.substr(b, e - b + 1));
}

}  // namespace detail

inline constexpr std::string_view kTaggedSectionHeader = "## Generated Response with User Feedback Highlights";

// Rewrites the content of one dislike span in place, keeping its length in
// code points, and drops that span's tags. Letters and digits are rotated by
// one; content without any is replaced by tildes.
inline std::string rewrite_dislike_span(std::string_view tagged, int id) {
  const auto open = open_tag(Polarity::dislike, id);
  const auto close = close_tag(Polarity::dislike, id);
  const auto o = tagged.find(open);
  const auto c = tagged.find(close);
  if (o == std::string_view::npos || c == std::string_view::npos || c < o) {
    throw Error(ErrorKind::tag_error, "dislike " + std::to_string(id) + " is not tagged");
  }
  const auto inner = tagged.substr(o + open.size(), c - o - open.size());
  bool has_alnum = false;
  for (char32_t ch : utf8::decode(inner)) has_alnum = has_alnum || detail::is_ascii_alnum(ch);

  std::string out(tagged.substr(0, o));
  std::size_t i = 0;
  while (i < inner.size()) {
    if (inner[i] == '<') {
      if (const auto tok = detail::match_tag(inner.substr(i))) {
        out += inner.substr(i, tok->length);
        i += tok->length;
        continue;
      }
    }
    std::size_t j = i + 1;
    while (j < inner.size() && (static_cast<unsigned char>(inner[j]) & 0xC0) == 0x80) ++j;
    const auto cp = utf8::decode(inner.substr(i, j - i));
    const char32_t ch = cp.empty() ? U'~' : cp.front();
    utf8::append(out, has_alnum ? detail::rotate_char(ch) : (ch == U'~' ? U'-' : U'~'));
    i = j;
  }
  out += tagged.substr(c + close.size());
  return out;
}

inline std::vector<std::string> mock_rewrite_steps(std::string_view tagged) {
  const auto ids = dislike_ids(parse_tagged(tagged));
  std::vector<std::string> steps;
  std::string cur(tagged);
  for (int id : ids) {
    cur = rewrite_dislike_span(cur, id);
    steps.push_back(cur);
  }
  return steps;
}

class MockModel final : public GenerationClient {
 public:
  // The first `broken_rewrites` rewrite requests get a malformed answer.
  explicit MockModel(int broken_rewrites = 0) : broken_(broken_rewrites) {}

  Capabilities capabilities() const override { return {true, true}; }
  std::string describe() const override { return "mock"; }

  std::string chat_completion(const ChatRequest& request) override {
    std::string user;
    for (const auto& m : request.messages) {
      if (m.role == "user") user = m.content;
    }
    int call = 0;
    {
      std::lock_guard lock(mu_);
      call = seen_[user]++;
      ++calls_;
    }
    if (const auto tagged = detail::section_after(user, kTaggedSectionHeader)) {
      bool broken = false;
      {
        std::lock_guard lock(mu_);
        if (broken_ > 0) {
          --broken_;
          broken = true;
        }
      }
      if (broken) return "Step 1\n```\n" + strip_tags(*tagged) + " (rewritten)\n```";
      return format_steps(mock_rewrite_steps(*tagged));
    }
    const auto doc = detail::section_after(user, "## Document").value_or(user);
    if (user.find("{\"queries\"") != std::string::npos) return queries_for(doc);
    const auto query = detail::section_after(user, "## Query").value_or("");
    return response_for(doc, query, call);
  }

  double sequence_logprob(const LogprobRequest& request) override {
    const auto h = fnv1a64(request.model + "\x1f" + request.prompt + "\x1f" + request.completion);
    return -1.0 - static_cast<double>(h % 399000ULL) / 1000.0;
  }

  int calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  static std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
  }

  static std::string queries_for(std::string_view doc) {
    const auto w = words(doc);
    auto pick = [&](std::size_t k) { return w.empty() ? std::string("it") : w[k % w.size()]; };
    const auto h = fnv1a64(doc);
    Json q = Json::array();
    static constexpr std::string_view kForms[] = {
        "Design a workshop that teaches the ideas around '%' to newcomers.",
        "Argue for and against the central claim involving '%', then take a side.",
        "Write a short strategy memo that builds on '%' for a skeptical executive.",
        "Compare how '%' would be perceived by two very different audiences.",
        "Invent a follow-up experiment that would test the role of '%'.",
    };
    for (std::size_t i = 0; i < 5; ++i) {
      std::string s(kForms[i]);
      s.replace(s.find('%'), 1, pick(static_cast<std::size_t>(h >> (i * 7)) + i));
      q.push_back(s);
    }
    return dump_line(Json{{"queries", q}});
  }

  static std::string response_for(std::string_view doc, std::string_view query, int call) {
    const auto w = words(doc);
    const auto h = fnv1a64(std::string(doc) + "\x1f" + std::string(query) + "\x1f" + std::to_string(call));
    std::string out = "Here is an answer grounded in the document. ";
    const std::size_t sentences = 3 + h % 3;
    for (std::size_t s = 0; s < sentences; ++s) {
      const std::size_t len = 8 + (h >> (s * 5)) % 9;
      std::string sentence;
      for (std::size_t k = 0; k < len; ++k) {
        const auto& word = w.empty() ? std::string("text") : w[(h + s * 131 + k * 17) % w.size()];
        sentence += (k ? " " : "") + word;
      }
      out += "Point " + std::to_string(s + 1) + ": " + sentence + ". ";
    }
    out.pop_back();
    return out;
  }

  mutable std::mutex mu_;
  std::map<std::string, int> seen_;
  int calls_ = 0;
  int broken_ = 0;
};

}  // namespace revchain
