// Drives the annotation service over HTTP the way the browser client does:
// claim an item, mark spans, judge, finalize, then start a pipeline run with
// the offline mock model and print its manifest.
//
//   annotate_and_run samples/items.jsonl [items-to-annotate]

#include <revchain/mock_model.hpp>
#include <revchain/server.hpp>
#include <revchain/store.hpp>

#include <httplib.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <thread>

using namespace revchain;

namespace {

// First whitespace-delimited word, as scalar-value offsets.
std::pair<std::size_t, std::size_t> first_word(const std::string& text) {
  const auto u = utf8::decode(text);
  std::size_t end = 0;
  while (end < u.size() && u[end] != U' ') ++end;
  return {0, end};
}

Json post(httplib::Client& cli, const std::string& path, const Json& body) {
  auto res = cli.Post(path, body.dump(), "application/json");
  if (!res) throw std::runtime_error("no response from " + path);
  if (res->status >= 400) throw std::runtime_error(path + " -> " + std::to_string(res->status) + " " + res->body);
  return Json::parse(res->body);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: annotate_and_run ITEMS.jsonl [N]\n";
    return 1;
  }
  const int n = argc > 2 ? std::stoi(argv[2]) : 3;
  std::vector<AnnotationItem> items;
  for (const auto& row : read_jsonl(argv[1])) items.push_back(row.get<AnnotationItem>());

  const auto root = std::filesystem::temp_directory_path() / "revchain_sample";
  std::filesystem::remove_all(root);
  StoreOptions opts;
  opts.data_dir = root / "data";
  opts.annotators = {"ann1"};
  AnnotationStore store(std::move(items), opts);
  RunManager runs(root / "runs", [] { return std::make_shared<MockModel>(); });
  AnnotationServer server(store, runs);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);

  std::cout << "taxonomy categories: " << Json::parse(cli.Get("/taxonomy")->body).size() << "\n";
  for (int i = 0; i < n; ++i) {
    auto next = cli.Get("/items/next?annotator=ann1");
    if (next->status != 200) break;
    const auto item = Json::parse(next->body);
    const auto id = item.at("item_id").get<std::string>();
    const auto events = "/items/" + id + "/events";
    auto send = [&](const char* type, Json payload) {
      return post(cli, events, Json{{"annotator_id", "ann1"}, {"type", type}, {"payload", std::move(payload)}});
    };
    send("timing_mark", {{"label", "load"}});
    for (const char* side : {"a", "b"}) {
      const auto text = item.at(std::string("response_") + side).at("text").get<std::string>();
      const auto [s, e] = first_word(text);
      send("highlight_created", {{"response", side}, {"polarity", "dislike"}, {"start", s}, {"end", e},
                                 {"attributes", {"its_too_wordy"}}});
    }
    send("judgment_set", {{"choice", "A"}, {"explanation", "more direct"}});
    send("timing_mark", {{"label", "submit"}});
    const auto done = post(cli, "/items/" + id + "/finalize", Json{{"annotator_id", "ann1"}});
    std::cout << "finalized " << id << " (" << done.at("records").size() << " records)\n";
  }

  const auto run_id = post(cli, "/runs", Json{{"seed", 7}}).at("run_id").get<std::string>();
  for (;;) {
    auto res = cli.Get("/runs/" + run_id + "/manifest");
    if (res->status == 202) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      continue;
    }
    std::cout << Json::parse(res->body).dump(2) << "\n";
    break;
  }
  server.stop();
  return 0;
}
