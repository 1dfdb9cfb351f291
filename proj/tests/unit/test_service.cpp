#include <gtest/gtest.h>

#include <revchain/mock_model.hpp>
#include <revchain/pipeline.hpp>
#include <revchain/server.hpp>
#include <revchain/store.hpp>

#include "../support/service_fixtures.hpp"

#include <filesystem>
#include <thread>

using namespace revchain;
using fixtures::dislike;
using fixtures::like;

namespace {

struct FakeClock {
  double now = 1000.0;
  Clock fn() {
    return [this] { return now; };
  }
};

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::invalid_input;
}

std::pair<std::size_t, std::size_t> span_of(const std::string& text, const std::string& piece) {
  const auto b = text.find(piece);
  return {utf8::length(text.substr(0, b)), utf8::length(text.substr(0, b)) + utf8::length(piece)};
}

StoreOptions options(FakeClock& clock, std::filesystem::path dir = {}) {
  StoreOptions o;
  o.data_dir = std::move(dir);
  o.annotators = {"ann1", "ann2"};
  o.clock = clock.fn();
  o.snapshot_every = 5;
  return o;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  return d;
}

// Annotates an item with `ka` dislikes on A and `kb` on B, then finalizes.
FinalizedItem annotate(AnnotationStore& store, FakeClock& clock, const std::string& ann, int ka, int kb) {
  const auto item = store.next_item(ann);
  const auto& ta = item.response_a.text;
  const auto& tb = item.response_b.text;
  store.submit(ann, item.item_id, EventType::timing_mark, Json{{"label", "load"}});
  const char* pieces_a[] = {"said yes", "on Monday", "expect works"};
  const char* pieces_b[] = {"on Tuesday", "focused on cost", "faster route"};
  for (int i = 0; i < ka; ++i) {
    const auto [s, e] = span_of(ta, pieces_a[i]);
    store.submit(ann, item.item_id, EventType::highlight_created, dislike("a", s, e));
  }
  for (int i = 0; i < kb; ++i) {
    const auto [s, e] = span_of(tb, pieces_b[i]);
    store.submit(ann, item.item_id, EventType::highlight_created, dislike("b", s, e, {"its_too_wordy"}));
  }
  store.submit(ann, item.item_id, EventType::judgment_set, Json{{"choice", "B"}, {"explanation", "more accurate"}});
  clock.now += 42;
  store.submit(ann, item.item_id, EventType::timing_mark, Json{{"label", "finalize"}});
  return store.finalize(ann, item.item_id);
}

}  // namespace

TEST(Store, ClaimsAreIdempotentAndExclusive) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(3), options(clock));
  EXPECT_EQ(store.next_item("ann1").item_id, "item1");
  EXPECT_EQ(store.next_item("ann1").item_id, "item1");
  EXPECT_EQ(store.next_item("ann2").item_id, "item2");
  EXPECT_EQ(kind_of([&] { store.next_item("stranger"); }), ErrorKind::ownership_error);
}

TEST(Store, ExhaustedWhenAllComplete) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(1), options(clock));
  annotate(store, clock, "ann1", 1, 0);
  EXPECT_EQ(kind_of([&] { store.next_item("ann1"); }), ErrorKind::exhausted);
  EXPECT_EQ(kind_of([&] { store.next_item("ann2"); }), ErrorKind::exhausted);
}

TEST(Store, ExpiredClaimsCanBeReassigned) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(1), options(clock));
  store.next_item("ann1");
  store.submit("ann1", "item1", EventType::highlight_created, like("a", 0, 3));
  EXPECT_EQ(kind_of([&] { store.next_item("ann2"); }), ErrorKind::exhausted);
  clock.now += 24 * 3600 + 1;
  EXPECT_EQ(store.next_item("ann2").item_id, "item1");
  EXPECT_TRUE(store.state("item1").a.highlights.empty());
  EXPECT_EQ(kind_of([&] { store.submit("ann1", "item1", EventType::timing_mark, Json::object()); }),
            ErrorKind::ownership_error);
}

TEST(Store, FeedbackIsValidatedBeforeAppend) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(1), options(clock));
  store.next_item("ann1");
  const auto before = store.last_seq();
  auto bare = dislike("a", 0, 3);
  bare["attributes"] = Json::array();
  EXPECT_EQ(kind_of([&] { store.submit("ann1", "item1", EventType::highlight_created, bare); }),
            ErrorKind::invalid_input);
  EXPECT_EQ(kind_of([&] { store.submit("ann1", "item1", EventType::highlight_created, dislike("a", 0, 999)); }),
            ErrorKind::bounds_error);
  EXPECT_EQ(kind_of([&] { store.submit("ann1", "item1", EventType::highlight_created, dislike("a", 0, 3, {"its_well_written"})); }),
            ErrorKind::taxonomy_error);
  EXPECT_EQ(kind_of([&] { store.submit("ann2", "item1", EventType::timing_mark, Json::object()); }),
            ErrorKind::ownership_error);
  EXPECT_EQ(store.last_seq(), before);

  const auto ack = store.submit("ann1", "item1", EventType::highlight_created,
                                dislike("a", 0, 3, {"its_too_wordy", "it_feels_generic_or_incomplete"}));
  EXPECT_EQ(ack.highlight_id, 1);
  EXPECT_EQ(store.state("item1").a.highlights.size(), 1u);
  const auto tie = store.submit("ann1", "item1", EventType::judgment_set, Json{{"choice", "tie"}, {"explanation", "same"}});
  EXPECT_TRUE(tie.flagged_rare);
}

TEST(Store, UpdatesAndDeletesAreEvents) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(1), options(clock));
  store.next_item("ann1");
  const auto id = *store.submit("ann1", "item1", EventType::highlight_created, dislike("a", 0, 3)).highlight_id;
  store.submit("ann1", "item1", EventType::highlight_updated,
               Json{{"response", "a"}, {"highlight_id", id}, {"attributes", {"its_too_wordy"}}});
  EXPECT_EQ(store.state("item1").a.highlights.at(id).attributes, std::vector<std::string>{"its_too_wordy"});
  store.submit("ann1", "item1", EventType::highlight_deleted, Json{{"response", "a"}, {"highlight_id", id}});
  EXPECT_TRUE(store.state("item1").a.highlights.empty());
  EXPECT_EQ(store.events().size(), 4u);
  EXPECT_EQ(kind_of([&] {
              store.submit("ann1", "item1", EventType::highlight_deleted, Json{{"response", "a"}, {"highlight_id", id}});
            }),
            ErrorKind::not_found);
}

TEST(Store, FinalizeNeedsJudgmentAndComputesDuration) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(2), options(clock));
  store.next_item("ann1");
  EXPECT_EQ(kind_of([&] { store.finalize("ann1", "item1"); }), ErrorKind::incomplete_error);
  store.submit("ann1", "item1", EventType::timing_mark, Json::object());
  clock.now += 10;
  store.submit("ann1", "item1", EventType::timing_mark, Json::object());
  store.submit("ann1", "item1", EventType::highlight_created, dislike("b", 5, 9));
  store.submit("ann1", "item1", EventType::highlight_created, dislike("b", 0, 3));
  store.submit("ann1", "item1", EventType::response_level_set,
               Json{{"response", "a"}, {"liked", {"its_well_organized"}}, {"disliked", Json::array()}, {"free_text", ""}});
  store.submit("ann1", "item1", EventType::judgment_set, Json{{"choice", "A"}, {"explanation", "clearer"}});
  clock.now += 20;
  store.submit("ann1", "item1", EventType::timing_mark, Json::object());
  const auto f = store.finalize("ann1", "item1");
  EXPECT_DOUBLE_EQ(f.duration_seconds, 30.0);
  EXPECT_EQ(f.record_a.record.response_level.liked, std::vector<std::string>{"its_well_organized"});
  ASSERT_EQ(f.record_b.record.highlights.size(), 2u);
  EXPECT_EQ(f.record_b.record.highlights[0].start, 0u);
  EXPECT_EQ(f.record_b.record.highlights[0].id, 1);
  EXPECT_EQ(f.judgment.choice, Choice::A);
  EXPECT_EQ(kind_of([&] { store.submit("ann1", "item1", EventType::timing_mark, Json::object()); }),
            ErrorKind::ownership_error);
  EXPECT_EQ(store.state("item1").item.status, ItemStatus::complete);
}

TEST(Store, ReplayReproducesFinalizedRecords) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(3), options(clock));
  annotate(store, clock, "ann1", 2, 1);
  annotate(store, clock, "ann2", 0, 3);
  store.next_item("ann1");
  store.submit("ann1", "item3", EventType::highlight_created, like("a", 1, 4));
  EXPECT_EQ(store.replay(store.events()), store.states());
}

TEST(Store, RecoversFromLogAndSnapshot) {
  const auto dir = fresh_dir("revchain_store_recover");
  FakeClock clock;
  std::vector<FinalizedItem> done;
  {
    AnnotationStore store(fixtures::make_items(3), options(clock, dir));
    done.push_back(annotate(store, clock, "ann1", 2, 1));
    done.push_back(annotate(store, clock, "ann2", 1, 1));
    store.next_item("ann1");
    store.submit("ann1", "item3", EventType::highlight_created, like("a", 1, 4));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "snapshot.json"));
  AnnotationStore again(fixtures::make_items(3), options(clock, dir));
  EXPECT_EQ(again.completed(), done);
  EXPECT_EQ(again.state("item3").a.highlights.size(), 1u);
  EXPECT_EQ(again.next_item("ann1").item_id, "item3");

  // The log alone gives the same state.
  std::filesystem::remove(dir / "snapshot.json");
  AnnotationStore from_log(fixtures::make_items(3), options(clock, dir));
  EXPECT_EQ(from_log.states(), again.states());
  std::filesystem::remove_all(dir);
}

TEST(Store, BundleRoundTrips) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(2), options(clock));
  annotate(store, clock, "ann1", 2, 1);
  annotate(store, clock, "ann1", 0, 0);
  const auto bundle = store.export_annotations();
  EXPECT_EQ(parse_annotation_bundle(bundle), store.completed());
  EXPECT_EQ(annotation_bundle_jsonl(parse_annotation_bundle(bundle)), bundle);
}

TEST(Config, ParsesTomlSubset) {
  const auto c = Config::parse(R"(# pipeline settings
top = 1
[endpoint]
url = "http://localhost:8000/api"  # trailing comment
max_in_flight = 4
[pipeline]
seed = 7
temperature = 0.5
verbose = true
annotators = ["ann1", 'ann2']
)");
  EXPECT_EQ(c.get<int>("top", 0), 1);
  EXPECT_EQ(c.get<std::string>("endpoint.url", ""), "http://localhost:8000/api");
  EXPECT_EQ(c.get<int>("pipeline.seed", 0), 7);
  EXPECT_DOUBLE_EQ(c.get<double>("pipeline.temperature", 0), 0.5);
  EXPECT_TRUE(c.get<bool>("pipeline.verbose", false));
  EXPECT_EQ(c.get<std::vector<std::string>>("pipeline.annotators", {}), (std::vector<std::string>{"ann1", "ann2"}));
  EXPECT_EQ(c.get<int>("missing", 3), 3);
  EXPECT_EQ(kind_of([&] { c.get<int>("endpoint.url", 0); }), ErrorKind::config_error);
  EXPECT_EQ(kind_of([] { Config::parse("a = 1\na = 2\n"); }), ErrorKind::config_error);
  EXPECT_EQ(kind_of([] { Config::parse("a = nope\n"); }), ErrorKind::config_error);
  EXPECT_EQ(PipelineConfig::from_config(c).seed, 7u);
}

// ---- Pipeline -----------------------------------------------------------

TEST(Pipeline, CountsFollowDislikes) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(1), options(clock));
  annotate(store, clock, "ann1", 2, 3);
  MockModel model;
  PipelineConfig cfg;
  cfg.output_dir = fresh_dir("revchain_pipeline_counts");
  const auto m = run_pipeline(store.completed(), cfg, model);
  EXPECT_EQ(m.chains, 2u);
  EXPECT_EQ(m.pairs.counts.at(Strategy::stepwise), 5u);
  EXPECT_EQ(m.pairs.counts.at(Strategy::full_rewrite), 2u);
  EXPECT_EQ(m.pairs.counts.at(Strategy::first_edit), 2u);
  EXPECT_EQ(m.pairs.counts.at(Strategy::stepwise_downsampled), 2u);
  EXPECT_EQ(m.pairs.counts.at(Strategy::ab), 1u);
  EXPECT_TRUE(m.failures.empty());
  const auto manifest = parse_json(read_file(cfg.output_dir / "manifest.json"));
  EXPECT_EQ(manifest.at("pair_counts").at("stepwise"), 5);
  std::filesystem::remove_all(cfg.output_dir);
}

TEST(Pipeline, OneFailureLeavesOtherOutputsIntact) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(1), options(clock));
  annotate(store, clock, "ann1", 2, 1);
  MockModel good;
  MockClient model(
      [&](const ChatRequest& r, int) {
        const auto& user = r.messages.back().content;
        if (user.find("said yes") != std::string::npos) return std::string("Step 1\n```\nnothing\n```");
        return good.chat_completion(r);
      },
      nullptr);
  PipelineConfig cfg;
  cfg.output_dir = fresh_dir("revchain_pipeline_failure");
  const auto m = run_pipeline(store.completed(), cfg, model);
  ASSERT_EQ(m.failures.size(), 1u);
  EXPECT_EQ(m.failures[0].response_id, "r1a");
  EXPECT_EQ(m.failures[0].attempts, 3);
  EXPECT_EQ(m.chains, 1u);
  EXPECT_EQ(m.pairs.counts.at(Strategy::stepwise), 1u);
  EXPECT_EQ(to_json_value(m).at("chain_failures").size(), 1u);
  std::filesystem::remove_all(cfg.output_dir);
}

TEST(Pipeline, RerunGivesIdenticalHashes) {
  FakeClock clock;
  AnnotationStore store(fixtures::make_items(2), options(clock));
  annotate(store, clock, "ann1", 3, 1);
  annotate(store, clock, "ann2", 0, 2);
  PipelineConfig cfg;
  cfg.seed = 11;
  cfg.output_dir = fresh_dir("revchain_pipeline_rerun_1");
  MockModel m1;
  const auto a = to_json_value(run_pipeline(store.completed(), cfg, m1));
  cfg.output_dir = fresh_dir("revchain_pipeline_rerun_2");
  MockModel m2;
  const auto b = to_json_value(run_pipeline(store.completed(), cfg, m2));
  EXPECT_EQ(a.at("files"), b.at("files"));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.at("zero_dislike_responses"), 1);
  std::filesystem::remove_all(cfg.output_dir);
  std::filesystem::remove_all(std::filesystem::temp_directory_path() / "revchain_pipeline_rerun_1");
}

TEST(Pipeline, NothingToDoWithoutAnnotations) {
  MockModel model;
  PipelineConfig cfg;
  cfg.output_dir = fresh_dir("revchain_pipeline_empty");
  EXPECT_EQ(kind_of([&] { run_pipeline({}, cfg, model); }), ErrorKind::nothing_to_do);
}

// ---- HTTP ---------------------------------------------------------------

namespace {

struct Harness {
  FakeClock clock;
  std::filesystem::path runs = fresh_dir("revchain_http_runs");
  AnnotationStore store{fixtures::make_items(2), options(clock)};
  RunManager manager{runs, [] { return std::make_shared<MockModel>(); }};
  AnnotationServer server{store, manager};
  int port = server.start();
  httplib::Client cli{"127.0.0.1", port};

  ~Harness() {
    server.stop();
    manager.wait();
    std::filesystem::remove_all(runs);
  }

  httplib::Result post(const std::string& path, const Json& body) {
    return cli.Post(path, body.dump(), "application/json");
  }
};

}  // namespace

TEST(Http, TaxonomyAndClaims) {
  Harness h;
  auto tax = h.cli.Get("/taxonomy");
  ASSERT_TRUE(tax);
  EXPECT_EQ(tax->status, 200);
  EXPECT_EQ(Json::parse(tax->body).at("version"), default_taxonomy().version());
  auto next = h.cli.Get("/items/next?annotator=ann1");
  ASSERT_TRUE(next);
  EXPECT_EQ(next->status, 200);
  EXPECT_EQ(Json::parse(next->body).get<AnnotationItem>().item_id, "item1");
  EXPECT_EQ(h.cli.Get("/items/next?annotator=ghost")->status, 403);
  h.cli.Get("/items/next?annotator=ann2");
  EXPECT_EQ(h.cli.Get("/items/next", {{"X-Annotator-Id", "ann2"}})->status, 200);
}

TEST(Http, EventsFinalizeExportAndRuns) {
  Harness h;
  const auto item = Json::parse(h.cli.Get("/items/next?annotator=ann1")->body).get<AnnotationItem>();
  const auto [s, e] = span_of(item.response_a.text, "on Monday");
  auto ack = h.post("/items/item1/events", Json{{"annotator_id", "ann1"}, {"type", "highlight_created"},
                                                {"payload", dislike("a", s, e)}});
  ASSERT_TRUE(ack);
  EXPECT_EQ(ack->status, 200);
  EXPECT_EQ(Json::parse(ack->body).at("highlight_id"), 1);

  auto bad = h.post("/items/item1/events",
                    Json{{"annotator_id", "ann1"}, {"type", "highlight_created"}, {"payload", dislike("a", 0, 999)}});
  EXPECT_EQ(bad->status, 422);
  EXPECT_EQ(Json::parse(bad->body).at("error"), "bounds-error");
  EXPECT_EQ(h.post("/items/item1/events", Json{{"annotator_id", "ann2"}, {"type", "timing_mark"}})->status, 403);
  EXPECT_EQ(h.post("/items/item1/events", Json{{"annotator_id", "ann1"}, {"type", "item_finalized"}})->status, 422);
  EXPECT_EQ(h.post("/items/item1/finalize", Json{{"annotator_id", "ann1"}})->status, 409);

  EXPECT_EQ(h.post("/runs", Json::object())->status, 422);  // nothing finalized yet

  h.post("/items/item1/events", Json{{"annotator_id", "ann1"},
                                     {"type", "judgment_set"},
                                     {"payload", {{"choice", "B"}, {"explanation", "fewer errors"}}}});
  auto fin = h.post("/items/item1/finalize", Json{{"annotator_id", "ann1"}});
  ASSERT_EQ(fin->status, 200);
  EXPECT_EQ(Json::parse(fin->body).get<FinalizedItem>(), h.store.completed().at(0));

  auto exp = h.cli.Get("/export/annotations");
  EXPECT_EQ(parse_annotation_bundle(exp->body), h.store.completed());

  auto run = h.post("/runs", Json{{"seed", 3}});
  ASSERT_EQ(run->status, 202);
  const auto id = Json::parse(run->body).at("run_id").get<std::string>();
  h.manager.wait();
  auto man = h.cli.Get("/runs/" + id + "/manifest");
  ASSERT_EQ(man->status, 200);
  const auto m = Json::parse(man->body);
  EXPECT_EQ(m.at("chains"), 1);
  EXPECT_EQ(m.at("pair_counts").at("stepwise"), 1);
  EXPECT_EQ(m.at("pair_counts").at("ab"), 1);
  EXPECT_EQ(h.cli.Get("/runs/run-99/manifest")->status, 404);
}
