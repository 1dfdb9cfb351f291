#pragma once

// Documents, queries, and sampled responses, plus assembly of the query- and
// response-generation prompts.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <revchain/assets.hpp>

#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/prompt_template.hpp"

namespace revchain {

enum class Domain { yelp, news, wikipedia, arxiv };

NLOHMANN_JSON_SERIALIZE_ENUM(Domain, {
                                         {Domain::yelp, "yelp"},
                                         {Domain::news, "news"},
                                         {Domain::wikipedia, "wikipedia"},
                                         {Domain::arxiv, "arxiv"},
                                     })

inline constexpr std::string_view domain_name(Domain d) {
  switch (d) {
    case Domain::yelp: return "yelp";
    case Domain::news: return "news";
    case Domain::wikipedia: return "wikipedia";
    case Domain::arxiv: return "arxiv";
  }
  return "?";
}

inline Domain parse_domain(std::string_view s) {
  if (s == "yelp") return Domain::yelp;
  if (s == "news") return Domain::news;
  if (s == "wikipedia") return Domain::wikipedia;
  if (s == "arxiv") return Domain::arxiv;
  throw Error(ErrorKind::schema_error, "unknown domain '" + std::string(s) + "'");
}

struct SourceDocument {
  std::string id;
  Domain domain = Domain::wikipedia;
  std::string text;

  bool operator==(const SourceDocument&) const = default;
};

enum class QueryOrigin { llm_generated, manual };

NLOHMANN_JSON_SERIALIZE_ENUM(QueryOrigin, {
                                              {QueryOrigin::llm_generated, "llm_generated"},
                                              {QueryOrigin::manual, "manual"},
                                          })

struct Query {
  std::string id;
  std::string document_id;
  std::string text;
  QueryOrigin origin = QueryOrigin::llm_generated;

  bool operator==(const Query&) const = default;
};

struct SamplingConfig {
  double temperature = 0.8;
  double top_p = 0.95;

  bool operator==(const SamplingConfig&) const = default;

  void validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorKind::invalid_input, "temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::invalid_input, "top_p must be in (0,1]");
  }
};

struct ResponseSample {
  std::string id;
  std::string query_id;
  std::string text;
  SamplingConfig sampling;
  std::string model_tag;

  bool operator==(const ResponseSample&) const = default;
};

inline void to_json(Json& j, const SourceDocument& d) {
  j = Json{{"id", d.id}, {"domain", d.domain}, {"text", d.text}};
}
inline void from_json(const Json& j, SourceDocument& d) {
  j.at("id").get_to(d.id);
  d.domain = parse_domain(j.at("domain").get<std::string>());
  j.at("text").get_to(d.text);
  if (d.text.empty()) throw Error(ErrorKind::schema_error, "document " + d.id + " has empty text");
}

inline void to_json(Json& j, const Query& q) {
  j = Json{{"id", q.id}, {"document_id", q.document_id}, {"text", q.text}, {"origin", q.origin}};
}
inline void from_json(const Json& j, Query& q) {
  j.at("id").get_to(q.id);
  j.at("document_id").get_to(q.document_id);
  j.at("text").get_to(q.text);
  q.origin = j.value("origin", QueryOrigin::llm_generated);
}

inline void to_json(Json& j, const SamplingConfig& c) {
  j = Json{{"temperature", c.temperature}, {"top_p", c.top_p}};
}
inline void from_json(const Json& j, SamplingConfig& c) {
  c.temperature = j.value("temperature", 0.8);
  c.top_p = j.value("top_p", 0.95);
}

inline void to_json(Json& j, const ResponseSample& r) {
  j = Json{{"id", r.id},
           {"query_id", r.query_id},
           {"text", r.text},
           {"sampling", r.sampling},
           {"model_tag", r.model_tag}};
}
inline void from_json(const Json& j, ResponseSample& r) {
  j.at("id").get_to(r.id);
  j.at("query_id").get_to(r.query_id);
  j.at("text").get_to(r.text);
  r.sampling = j.value("sampling", SamplingConfig{});
  r.model_tag = j.value("model_tag", std::string{});
}

// Lookup of documents and queries by id; the home of every prompt context
// referenced from chains and pairs.
class Corpus {
 public:
  void add(SourceDocument doc) {
    auto id = doc.id;
    documents_.insert_or_assign(std::move(id), std::move(doc));
  }
  void add(Query q) {
    auto id = q.id;
    queries_.insert_or_assign(std::move(id), std::move(q));
  }

  const SourceDocument& document(const std::string& id) const {
    const auto it = documents_.find(id);
    if (it == documents_.end()) throw Error(ErrorKind::not_found, "unknown document " + id);
    return it->second;
  }
  const Query& query(const std::string& id) const {
    const auto it = queries_.find(id);
    if (it == queries_.end()) throw Error(ErrorKind::not_found, "unknown query " + id);
    return it->second;
  }

  std::size_t document_count() const { return documents_.size(); }
  std::size_t query_count() const { return queries_.size(); }

 private:
  std::map<std::string, SourceDocument> documents_;
  std::map<std::string, Query> queries_;
};

inline constexpr std::string_view kPromptVersion = "v1";

inline std::string assemble_query_gen_prompt(const SourceDocument& doc) {
  if (doc.text.empty()) throw Error(ErrorKind::invalid_input, "document text is empty");
  return render_template(assets::query_generation_v1, {{"DOCUMENT", doc.text}});
}

inline std::string assemble_response_prompt(const SourceDocument& doc, const Query& q) {
  if (q.document_id != doc.id) {
    throw Error(ErrorKind::invalid_input,
                "query " + q.id + " references document " + q.document_id + ", not " + doc.id);
  }
  if (doc.text.empty()) throw Error(ErrorKind::invalid_input, "document text is empty");
  if (q.text.empty()) throw Error(ErrorKind::invalid_input, "query text is empty");
  return render_template(assets::response_generation_v1, {{"DOCUMENT", doc.text}, {"QUERY", q.text}});
}

inline constexpr std::size_t kQueriesPerDocument = 5;

namespace detail {

// Chat models often wrap JSON in a ```json fence; accept that framing.
inline std::string_view strip_code_fence(std::string_view raw) {
  const auto first = raw.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return raw;
  raw.remove_prefix(first);
  if (raw.substr(0, 3) != "```") return raw;
  const auto body = raw.find('\n');
  const auto end = raw.rfind("```");
  if (body == std::string_view::npos || end <= body) return raw;
  return raw.substr(body + 1, end - body - 1);
}

}  // namespace detail

inline std::vector<Query> parse_queries_json(std::string_view raw, const std::string& document_id = "") {
  const Json j = parse_json(detail::strip_code_fence(raw), "queries");
  if (!j.is_object() || !j.contains("queries") || !j.at("queries").is_array()) {
    throw Error(ErrorKind::schema_error, "expected an object with a \"queries\" array");
  }
  const auto& arr = j.at("queries");
  if (arr.size() != kQueriesPerDocument) {
    throw Error(ErrorKind::schema_error,
                "expected 5 queries, got " + std::to_string(arr.size()));
  }
  std::vector<Query> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string() || arr[i].get<std::string>().empty()) {
      throw Error(ErrorKind::schema_error, "query " + std::to_string(i) + " is empty or not a string");
    }
    Query q;
    q.id = (document_id.empty() ? std::string("q") : document_id + "-q") + std::to_string(i + 1);
    q.document_id = document_id;
    q.text = arr[i].get<std::string>();
    q.origin = QueryOrigin::llm_generated;
    out.push_back(std::move(q));
  }
  return out;
}

inline std::string serialize_queries_json(const std::vector<Query>& queries) {
  Json arr = Json::array();
  for (const auto& q : queries) arr.push_back(q.text);
  return dump_line(Json{{"queries", arr}});
}

}  // namespace revchain
