#pragma once

// Event-sourced annotation state. Every change to an item is an event
// appended to a JSONL log; item state is a fold over that log. Snapshots
// only shorten replay.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "revchain/annotation.hpp"
#include "revchain/corpus.hpp"
#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/taxonomy.hpp"
#include "revchain/utf8.hpp"

namespace revchain {

enum class ItemStatus { pending, in_progress, complete };

NLOHMANN_JSON_SERIALIZE_ENUM(ItemStatus, {
                                             {ItemStatus::pending, "pending"},
                                             {ItemStatus::in_progress, "in_progress"},
                                             {ItemStatus::complete, "complete"},
                                         })

struct AnnotationItem {
  std::string item_id;
  Query query;
  SourceDocument document;
  ResponseSample response_a;
  ResponseSample response_b;
  ItemStatus status = ItemStatus::pending;

  bool operator==(const AnnotationItem&) const = default;

  void validate() const {
    if (item_id.empty()) throw Error(ErrorKind::schema_error, "item without id");
    if (query.document_id != document.id) {
      throw Error(ErrorKind::schema_error, "item " + item_id + ": query does not belong to the document");
    }
    if (response_a.query_id != query.id || response_b.query_id != query.id) {
      throw Error(ErrorKind::schema_error, "item " + item_id + ": responses answer a different query");
    }
    if (response_a.id == response_b.id) throw Error(ErrorKind::schema_error, "item " + item_id + ": same response twice");
  }
};

inline void to_json(Json& j, const AnnotationItem& it) {
  j = Json{{"item_id", it.item_id},       {"query", it.query},           {"document", it.document},
           {"response_a", it.response_a}, {"response_b", it.response_b}, {"status", it.status}};
}
inline void from_json(const Json& j, AnnotationItem& it) {
  j.at("item_id").get_to(it.item_id);
  j.at("query").get_to(it.query);
  j.at("document").get_to(it.document);
  j.at("response_a").get_to(it.response_a);
  j.at("response_b").get_to(it.response_b);
  it.status = j.value("status", ItemStatus::pending);
  it.validate();
}

// ---- Events -------------------------------------------------------------

// The six feedback events plus two lifecycle events (claim, finalize), so a
// single log carries the whole history.
enum class EventType {
  highlight_created,
  highlight_updated,
  highlight_deleted,
  response_level_set,
  judgment_set,
  timing_mark,
  item_claimed,
  item_finalized,
};

NLOHMANN_JSON_SERIALIZE_ENUM(EventType, {
                                            {EventType::highlight_created, "highlight_created"},
                                            {EventType::highlight_updated, "highlight_updated"},
                                            {EventType::highlight_deleted, "highlight_deleted"},
                                            {EventType::response_level_set, "response_level_set"},
                                            {EventType::judgment_set, "judgment_set"},
                                            {EventType::timing_mark, "timing_mark"},
                                            {EventType::item_claimed, "item_claimed"},
                                            {EventType::item_finalized, "item_finalized"},
                                        })

inline EventType parse_event_type(const std::string& s) {
  static const std::set<std::string> known = {"highlight_created",  "highlight_updated", "highlight_deleted",
                                              "response_level_set", "judgment_set",      "timing_mark"};
  if (!known.count(s)) throw Error(ErrorKind::schema_error, "unknown event type '" + s + "'");
  return Json(s).get<EventType>();
}

struct Event {
  std::uint64_t seq = 0;
  double received_at = 0.0;  // server clock, seconds
  std::string annotator_id;
  std::string item_id;
  EventType type = EventType::timing_mark;
  Json payload = Json::object();

  bool operator==(const Event&) const = default;
};

inline void to_json(Json& j, const Event& e) {
  j = Json{{"seq", e.seq},         {"received_at", e.received_at}, {"annotator_id", e.annotator_id},
           {"item_id", e.item_id}, {"type", e.type},               {"payload", e.payload}};
}
inline void from_json(const Json& j, Event& e) {
  j.at("seq").get_to(e.seq);
  j.at("received_at").get_to(e.received_at);
  j.at("annotator_id").get_to(e.annotator_id);
  j.at("item_id").get_to(e.item_id);
  const auto t = j.at("type").get<std::string>();
  if (t == "item_claimed" || t == "item_finalized") {
    e.type = Json(t).get<EventType>();
  } else {
    e.type = parse_event_type(t);
  }
  e.payload = j.at("payload");
}

// ---- Item state ---------------------------------------------------------

enum class Side { a, b };

NLOHMANN_JSON_SERIALIZE_ENUM(Side, {{Side::a, "a"}, {Side::b, "b"}})

struct SideState {
  std::map<int, SpanHighlight> highlights;  // by server-assigned id
  ResponseLevelFeedback response_level;

  bool operator==(const SideState&) const = default;
};

struct FinalizedItem {
  std::string item_id;
  std::string annotator_id;
  SourceDocument document;
  Query query;
  ValidatedRecord record_a;
  ValidatedRecord record_b;
  ABJudgment judgment;
  double duration_seconds = 0.0;

  bool operator==(const FinalizedItem&) const = default;
};

// One line of the annotation export bundle.
inline void to_json(Json& j, const FinalizedItem& f) {
  j = Json{{"item_id", f.item_id},
           {"annotator_id", f.annotator_id},
           {"document", f.document},
           {"query", f.query},
           {"records", Json::array({f.record_a, f.record_b})},
           {"judgment", f.judgment},
           {"duration_seconds", f.duration_seconds}};
}
inline void from_json(const Json& j, FinalizedItem& f) {
  j.at("item_id").get_to(f.item_id);
  j.at("annotator_id").get_to(f.annotator_id);
  j.at("document").get_to(f.document);
  j.at("query").get_to(f.query);
  const auto& recs = j.at("records");
  if (!recs.is_array() || recs.size() != 2) throw Error(ErrorKind::schema_error, "bundle needs exactly two records");
  recs.at(0).get_to(f.record_a);
  recs.at(1).get_to(f.record_b);
  j.at("judgment").get_to(f.judgment);
  f.duration_seconds = j.value("duration_seconds", 0.0);
}

inline std::vector<FinalizedItem> parse_annotation_bundle(std::string_view jsonl) {
  std::vector<FinalizedItem> out;
  std::size_t line = 0;
  for (const auto& row : parse_jsonl(jsonl, "annotation bundle")) {
    ++line;
    try {
      out.push_back(row.get<FinalizedItem>());
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::schema_error, "annotation bundle line " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

inline std::string annotation_bundle_jsonl(const std::vector<FinalizedItem>& items) {
  std::vector<Json> rows(items.begin(), items.end());
  return to_jsonl(rows);
}

struct ItemState {
  AnnotationItem item;
  std::string claimant;
  double claimed_at = 0.0;
  int next_highlight_id = 1;
  SideState a;
  SideState b;
  std::optional<ABJudgment> judgment;
  std::vector<double> timing_marks;
  std::optional<FinalizedItem> finalized;

  bool operator==(const ItemState&) const = default;

  SideState& side(Side s) { return s == Side::a ? a : b; }
  const SideState& side(Side s) const { return s == Side::a ? a : b; }
  const ResponseSample& response(Side s) const { return s == Side::a ? item.response_a : item.response_b; }

  void reset_work() {
    next_highlight_id = 1;
    a = {};
    b = {};
    judgment.reset();
    timing_marks.clear();
  }
};

namespace detail {

inline Side payload_side(const Json& p) {
  const auto s = p.at("response").get<std::string>();
  if (s == "a" || s == "A") return Side::a;
  if (s == "b" || s == "B") return Side::b;
  throw Error(ErrorKind::schema_error, "response must be \"a\" or \"b\"");
}

inline std::vector<std::string> string_list(const Json& p, const char* key) {
  if (!p.contains(key)) return {};
  return p.at(key).get<std::vector<std::string>>();
}

inline void merge_highlight_fields(SpanHighlight& h, const Json& p) {
  if (p.contains("polarity")) h.polarity = Json(p.at("polarity").get<std::string>()).get<Polarity>();
  if (p.contains("start")) h.start = p.at("start").get<std::size_t>();
  if (p.contains("end")) h.end = p.at("end").get<std::size_t>();
  if (p.contains("attributes")) h.attributes = string_list(p, "attributes");
  if (p.contains("free_text")) {
    const auto& f = p.at("free_text");
    h.free_text = f.is_null() ? std::nullopt : std::optional<std::string>(f.get<std::string>());
  }
}

inline void check_polarity(const Json& p) {
  if (!p.contains("polarity")) return;
  const auto s = p.at("polarity").get<std::string>();
  if (s != "like" && s != "dislike") throw Error(ErrorKind::schema_error, "polarity must be like or dislike");
}

inline double duration_of(const std::vector<double>& marks) {
  if (marks.size() < 2) return 0.0;
  return marks.back() - marks.front();
}

inline FinalizedItem finalize_state(const ItemState& st, const std::string& annotator,
                                    const AttributeTaxonomy& tax) {
  if (!st.judgment) throw Error(ErrorKind::incomplete_error, "item " + st.item.item_id + " has no A/B judgment");
  st.judgment->validate();
  FinalizedItem f;
  f.item_id = st.item.item_id;
  f.annotator_id = annotator;
  f.document = st.item.document;
  f.query = st.item.query;
  f.judgment = *st.judgment;
  f.duration_seconds = duration_of(st.timing_marks);
  for (Side s : {Side::a, Side::b}) {
    AnnotationRecord rec;
    rec.annotator_id = annotator;
    rec.item_id = st.item.item_id;
    rec.response_id = st.response(s).id;
    rec.domain = st.item.document.domain;
    for (const auto& [id, h] : st.side(s).highlights) rec.highlights.push_back(h);
    rec.response_level = st.side(s).response_level;
    rec.duration_seconds = f.duration_seconds;
    (s == Side::a ? f.record_a : f.record_b) = validate_record(std::move(rec), st.response(s).text, tax);
  }
  return f;
}

}  // namespace detail

// Applies one event. Feedback events are assumed to belong to the claimant;
// the store checks ownership and content before anything is appended.
inline void apply_event(ItemState& st, const Event& e, const AttributeTaxonomy& tax = default_taxonomy()) {
  const Json& p = e.payload;
  switch (e.type) {
    case EventType::item_claimed:
      if (st.claimant != e.annotator_id) st.reset_work();
      st.claimant = e.annotator_id;
      st.claimed_at = e.received_at;
      st.item.status = ItemStatus::in_progress;
      return;
    case EventType::highlight_created: {
      SpanHighlight h;
      detail::check_polarity(p);
      detail::merge_highlight_fields(h, p);
      h.id = p.at("highlight_id").get<int>();
      st.side(detail::payload_side(p)).highlights[h.id] = h;
      st.next_highlight_id = std::max(st.next_highlight_id, h.id + 1);
      return;
    }
    case EventType::highlight_updated: {
      auto& hs = st.side(detail::payload_side(p)).highlights;
      const int id = p.at("highlight_id").get<int>();
      const auto it = hs.find(id);
      if (it == hs.end()) throw Error(ErrorKind::not_found, "no highlight " + std::to_string(id));
      detail::check_polarity(p);
      detail::merge_highlight_fields(it->second, p);
      return;
    }
    case EventType::highlight_deleted: {
      auto& hs = st.side(detail::payload_side(p)).highlights;
      const int id = p.at("highlight_id").get<int>();
      if (hs.erase(id) == 0) throw Error(ErrorKind::not_found, "no highlight " + std::to_string(id));
      return;
    }
    case EventType::response_level_set: {
      auto& rl = st.side(detail::payload_side(p)).response_level;
      rl.liked = detail::string_list(p, "liked");
      rl.disliked = detail::string_list(p, "disliked");
      rl.free_text = p.value("free_text", std::string{});
      return;
    }
    case EventType::judgment_set: {
      const auto c = p.at("choice").get<std::string>();
      if (c != "A" && c != "B" && c != "tie") throw Error(ErrorKind::schema_error, "bad choice '" + c + "'");
      st.judgment = ABJudgment{e.annotator_id, st.item.item_id, Json(c).get<Choice>(), p.value("explanation", "")};
      return;
    }
    case EventType::timing_mark:
      st.timing_marks.push_back(e.received_at);
      return;
    case EventType::item_finalized:
      st.finalized = detail::finalize_state(st, e.annotator_id, tax);
      st.item.status = ItemStatus::complete;
      return;
  }
}

// ---- Snapshot serialization ---------------------------------------------

inline void to_json(Json& j, const SideState& s) {
  Json hs = Json::array();
  for (const auto& [id, h] : s.highlights) hs.push_back(h);
  j = Json{{"highlights", hs}, {"response_level", s.response_level}};
}
inline void from_json(const Json& j, SideState& s) {
  s.highlights.clear();
  for (const auto& h : j.at("highlights")) {
    auto sh = h.get<SpanHighlight>();
    s.highlights[sh.id] = sh;
  }
  j.at("response_level").get_to(s.response_level);
}

inline void to_json(Json& j, const ItemState& s) {
  j = Json{{"item", s.item},
           {"claimant", s.claimant},
           {"claimed_at", s.claimed_at},
           {"next_highlight_id", s.next_highlight_id},
           {"a", s.a},
           {"b", s.b},
           {"judgment", s.judgment ? Json(*s.judgment) : Json(nullptr)},
           {"timing_marks", s.timing_marks},
           {"finalized", s.finalized ? Json(*s.finalized) : Json(nullptr)}};
}
inline void from_json(const Json& j, ItemState& s) {
  j.at("item").get_to(s.item);
  j.at("claimant").get_to(s.claimant);
  j.at("claimed_at").get_to(s.claimed_at);
  j.at("next_highlight_id").get_to(s.next_highlight_id);
  j.at("a").get_to(s.a);
  j.at("b").get_to(s.b);
  s.judgment = j.at("judgment").is_null() ? std::nullopt : std::optional<ABJudgment>(j.at("judgment").get<ABJudgment>());
  j.at("timing_marks").get_to(s.timing_marks);
  s.finalized = j.at("finalized").is_null() ? std::nullopt
                                            : std::optional<FinalizedItem>(j.at("finalized").get<FinalizedItem>());
}

// ---- Store --------------------------------------------------------------

using Clock = std::function<double()>;

inline double wall_clock_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct StoreOptions {
  std::filesystem::path data_dir;  // empty: in memory only
  std::set<std::string> annotators;
  double claim_expiry_seconds = 24 * 3600.0;
  std::size_t snapshot_every = 100;
  Clock clock = wall_clock_seconds;
};

struct EventAck {
  std::uint64_t seq = 0;
  std::optional<int> highlight_id;
  bool flagged_rare = false;
};

inline Json to_json_value(const EventAck& a) {
  return Json{{"seq", a.seq},
              {"highlight_id", a.highlight_id ? Json(*a.highlight_id) : Json(nullptr)},
              {"flagged_rare", a.flagged_rare}};
}

// All mutations go through one mutex and one log append, so claims are
// serialized and no item is handed to two annotators at once.
class AnnotationStore {
 public:
  AnnotationStore(std::vector<AnnotationItem> items, StoreOptions opts,
                  const AttributeTaxonomy& tax = default_taxonomy())
      : opts_(std::move(opts)), tax_(tax) {
    for (auto& it : items) {
      it.validate();
      if (index_.count(it.item_id)) throw Error(ErrorKind::schema_error, "duplicate item " + it.item_id);
      it.status = ItemStatus::pending;
      index_[it.item_id] = states_.size();
      ItemState st;
      st.item = std::move(it);
      states_.push_back(std::move(st));
    }
    if (!opts_.data_dir.empty()) recover();
  }

  std::size_t item_count() const { return states_.size(); }
  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return last_seq_;
  }

  bool registered(const std::string& annotator) const { return opts_.annotators.count(annotator) > 0; }

  AnnotationItem next_item(const std::string& annotator) {
    std::lock_guard lock(mu_);
    require_registered(annotator);
    for (const auto& st : states_) {
      if (st.item.status == ItemStatus::in_progress && st.claimant == annotator) return st.item;
    }
    const double now = opts_.clock();
    for (auto& st : states_) {
      const bool free = st.item.status == ItemStatus::pending ||
                        (st.item.status == ItemStatus::in_progress &&
                         now - st.claimed_at > opts_.claim_expiry_seconds);
      if (!free) continue;
      append_locked(make_event(annotator, st.item.item_id, EventType::item_claimed, Json::object(), now));
      return st.item;
    }
    throw Error(ErrorKind::exhausted, "no pending items");
  }

  EventAck submit(const std::string& annotator, const std::string& item_id, EventType type, Json payload) {
    if (type == EventType::item_claimed || type == EventType::item_finalized) {
      throw Error(ErrorKind::schema_error, "lifecycle events cannot be submitted");
    }
    if (!payload.is_object()) throw Error(ErrorKind::schema_error, "event payload must be an object");
    std::lock_guard lock(mu_);
    auto& st = owned(annotator, item_id);
    EventAck ack;
    if (type == EventType::highlight_created) {
      payload["highlight_id"] = st.next_highlight_id;
      ack.highlight_id = st.next_highlight_id;
    }
    auto e = make_event(annotator, item_id, type, std::move(payload), opts_.clock());
    ItemState trial = st;
    try {
      apply_event(trial, e, tax_);
      check(trial, e);
    } catch (const Json::exception& ex) {
      throw Error(ErrorKind::schema_error, std::string("bad event payload: ") + ex.what());
    }
    if (type == EventType::judgment_set) ack.flagged_rare = trial.judgment->flagged_rare();
    ack.seq = append_locked(std::move(e));
    return ack;
  }

  FinalizedItem finalize(const std::string& annotator, const std::string& item_id) {
    std::lock_guard lock(mu_);
    auto& st = owned(annotator, item_id);
    auto e = make_event(annotator, item_id, EventType::item_finalized, Json::object(), opts_.clock());
    ItemState trial = st;
    apply_event(trial, e, tax_);
    append_locked(std::move(e));
    return *st.finalized;
  }

  std::vector<FinalizedItem> completed() const {
    std::lock_guard lock(mu_);
    std::vector<FinalizedItem> out;
    for (const auto& st : states_) {
      if (st.finalized) out.push_back(*st.finalized);
    }
    return out;
  }

  std::string export_annotations() const { return annotation_bundle_jsonl(completed()); }

  ItemState state(const std::string& item_id) const {
    std::lock_guard lock(mu_);
    return states_.at(find(item_id));
  }

  std::vector<Event> events() const {
    std::lock_guard lock(mu_);
    return log_;
  }

  // Replays `events` over fresh copies of the items this store was built with.
  std::vector<ItemState> replay(const std::vector<Event>& events) const {
    std::vector<ItemState> out;
    {
      std::lock_guard lock(mu_);
      for (const auto& st : states_) {
        ItemState fresh;
        fresh.item = st.item;
        fresh.item.status = ItemStatus::pending;
        out.push_back(std::move(fresh));
      }
    }
    for (const auto& e : events) apply_event(out.at(find(e.item_id)), e, tax_);
    return out;
  }

  std::vector<ItemState> states() const {
    std::lock_guard lock(mu_);
    return states_;
  }

  void write_snapshot() {
    std::lock_guard lock(mu_);
    snapshot_locked();
  }

 private:
  std::size_t find(const std::string& item_id) const {
    const auto it = index_.find(item_id);
    if (it == index_.end()) throw Error(ErrorKind::not_found, "no item " + item_id);
    return it->second;
  }

  void require_registered(const std::string& annotator) const {
    if (!registered(annotator)) throw Error(ErrorKind::ownership_error, "annotator '" + annotator + "' is not registered");
  }

  ItemState& owned(const std::string& annotator, const std::string& item_id) {
    require_registered(annotator);
    auto& st = states_.at(find(item_id));
    if (st.item.status == ItemStatus::complete) {
      throw Error(ErrorKind::ownership_error, "item " + item_id + " is finalized and cannot be edited");
    }
    if (st.item.status != ItemStatus::in_progress || st.claimant != annotator) {
      throw Error(ErrorKind::ownership_error, "item " + item_id + " is not claimed by " + annotator);
    }
    return st;
  }

  void check(const ItemState& st, const Event& e) const {
    const Json& p = e.payload;
    switch (e.type) {
      case EventType::highlight_created:
      case EventType::highlight_updated: {
        const Side s = detail::payload_side(p);
        const auto& h = st.side(s).highlights.at(p.at("highlight_id").get<int>());
        validate_highlight(h, utf8::length(st.response(s).text), tax_);
        return;
      }
      case EventType::response_level_set:
        validate_response_level(st.side(detail::payload_side(p)).response_level, tax_);
        return;
      case EventType::judgment_set:
        st.judgment->validate();
        return;
      default:
        return;
    }
  }

  Event make_event(const std::string& annotator, const std::string& item_id, EventType type, Json payload,
                   double now) const {
    return Event{last_seq_ + 1, now, annotator, item_id, type, std::move(payload)};
  }

  std::uint64_t append_locked(Event e) {
    auto& st = states_.at(find(e.item_id));
    apply_event(st, e, tax_);
    if (!opts_.data_dir.empty()) {
      std::ofstream out(opts_.data_dir / "events.jsonl", std::ios::app | std::ios::binary);
      out << dump_line(e) << '\n';
      out.flush();
      if (!out) throw Error(ErrorKind::io_error, "cannot append to the event log");
    }
    last_seq_ = e.seq;
    log_.push_back(std::move(e));
    if (!opts_.data_dir.empty() && opts_.snapshot_every > 0 && last_seq_ % opts_.snapshot_every == 0) {
      snapshot_locked();
    }
    return last_seq_;
  }

  void snapshot_locked() const {
    if (opts_.data_dir.empty()) return;
    Json items = Json::array();
    for (const auto& st : states_) items.push_back(st);
    const auto tmp = opts_.data_dir / "snapshot.json.tmp";
    write_file(tmp, dump_line(Json{{"last_seq", last_seq_}, {"items", items}}) + "\n");
    std::filesystem::rename(tmp, opts_.data_dir / "snapshot.json");
  }

  void recover() {
    std::filesystem::create_directories(opts_.data_dir);
    std::uint64_t snap_seq = 0;
    const auto snap_path = opts_.data_dir / "snapshot.json";
    if (std::filesystem::exists(snap_path)) {
      const auto snap = parse_json(read_file(snap_path), "snapshot");
      snap_seq = snap.at("last_seq").get<std::uint64_t>();
      for (const auto& j : snap.at("items")) {
        auto st = j.get<ItemState>();
        const auto it = index_.find(st.item.item_id);
        if (it == index_.end()) throw Error(ErrorKind::schema_error, "snapshot item " + st.item.item_id + " unknown");
        states_[it->second] = std::move(st);
      }
    }
    const auto log_path = opts_.data_dir / "events.jsonl";
    if (!std::filesystem::exists(log_path)) return;
    for (const auto& row : parse_jsonl(read_file(log_path), "event log")) {
      auto e = row.get<Event>();
      if (e.seq != last_seq_ + 1) throw Error(ErrorKind::schema_error, "event log has a gap at seq " + std::to_string(e.seq));
      if (e.seq > snap_seq) apply_event(states_.at(find(e.item_id)), e, tax_);
      last_seq_ = e.seq;
      log_.push_back(std::move(e));
    }
    if (last_seq_ < snap_seq) throw Error(ErrorKind::schema_error, "snapshot is newer than the event log");
  }

  StoreOptions opts_;
  const AttributeTaxonomy& tax_;
  mutable std::mutex mu_;
  std::vector<ItemState> states_;
  std::map<std::string, std::size_t> index_;
  std::vector<Event> log_;
  std::uint64_t last_seq_ = 0;
};

}  // namespace revchain
