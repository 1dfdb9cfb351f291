#pragma once

#include <revchain/store.hpp>

#include <string>
#include <vector>

namespace fixtures {

inline revchain::AnnotationItem make_item(int n) {
  using namespace revchain;
  const auto sn = std::to_string(n);
  AnnotationItem it;
  it.item_id = "item" + sn;
  it.document = SourceDocument{"doc" + sn, Domain::news,
                               "The council approved a new tram line on Tuesday after a long debate about its cost."};
  it.query = Query{"doc" + sn + "-q1", "doc" + sn, "Explain the decision to a commuter.", QueryOrigin::llm_generated};
  it.response_a = ResponseSample{"r" + sn + "a", it.query.id,
                                 "The council said yes to a tram line. It will cost a lot, and the vote was on Monday. "
                                 "Commuters should expect works soon.",
                                 {}, "llama"};
  it.response_b = ResponseSample{"r" + sn + "b", it.query.id,
                                 "A new tram line was approved on Tuesday. The debate focused on cost. Daily riders "
                                 "gain a faster route once it opens.",
                                 {}, "llama"};
  return it;
}

inline std::vector<revchain::AnnotationItem> make_items(int n) {
  std::vector<revchain::AnnotationItem> out;
  for (int i = 1; i <= n; ++i) out.push_back(make_item(i));
  return out;
}

inline revchain::Json dislike(const char* side, std::size_t start, std::size_t end,
                              std::vector<std::string> attrs = {"it_states_something_thats_factually_wrong"}) {
  return revchain::Json{{"response", side}, {"polarity", "dislike"}, {"start", start}, {"end", end},
                        {"attributes", attrs}};
}

inline revchain::Json like(const char* side, std::size_t start, std::size_t end) {
  return revchain::Json{{"response", side}, {"polarity", "like"}, {"start", start}, {"end", end},
                        {"attributes", {"its_well_written"}}};
}

}  // namespace fixtures
