#include <gtest/gtest.h>

#include <revchain/pairs.hpp>

#include "../support/random_chains.hpp"

#include <filesystem>
#include <set>

using namespace revchain;

namespace {

Corpus small_corpus() {
  Corpus c;
  c.add(SourceDocument{"doc1", Domain::news, "Quarterly revenue rose nine percent."});
  c.add(Query{"doc1-q1", "doc1", "Summarise the quarter.", QueryOrigin::llm_generated});
  return c;
}

std::vector<ImprovementChain> chains_with(const std::vector<int>& ks, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<ImprovementChain> out;
  for (std::size_t i = 0; i < ks.size(); ++i) out.push_back(fixtures::random_chain(rng, ks[i], "s" + std::to_string(i)));
  return out;
}

}  // namespace

TEST(Pairs, RandomChainsAreValid) {
  for (const auto& c : chains_with({1, 2, 3, 4, 5})) EXPECT_TRUE(c.valid()) << c.sequence_id;
}

TEST(Pairs, CountsFollowDislikeCounts) {
  const auto chains = chains_with({2, 3});
  EXPECT_EQ(make_pairs(chains, Strategy::stepwise).pairs.size(), 5u);
  EXPECT_EQ(make_pairs(chains, Strategy::full_rewrite).pairs.size(), 2u);
  EXPECT_EQ(make_pairs(chains, Strategy::first_edit).pairs.size(), 2u);
  EXPECT_EQ(make_pairs(chains, Strategy::stepwise_downsampled, 9).pairs.size(), 2u);
}

TEST(Pairs, StepwiseLinksAdjacentStepsWithoutTags) {
  const auto chains = chains_with({3});
  const auto set = make_pairs(chains, Strategy::stepwise);
  ASSERT_EQ(set.pairs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(set.pairs[i].loser, strip_tags(chains[0].steps[i]));
    EXPECT_EQ(set.pairs[i].winner, strip_tags(chains[0].steps[i + 1]));
    EXPECT_EQ(set.pairs[i].step_index, i);
    EXPECT_EQ(set.pairs[i].loser.find("<dislike"), std::string::npos);
  }
  const auto full = make_pairs(chains, Strategy::full_rewrite);
  EXPECT_EQ(full.pairs[0].loser, set.pairs.front().loser);
  EXPECT_EQ(full.pairs[0].winner, set.pairs.back().winner);
}

TEST(Pairs, SingleDislikeStrategiesCoincide) {
  const auto chains = chains_with({1});
  const auto a = make_pairs(chains, Strategy::first_edit).pairs[0];
  const auto b = make_pairs(chains, Strategy::full_rewrite).pairs[0];
  const auto c = make_pairs(chains, Strategy::stepwise).pairs[0];
  EXPECT_EQ(a.loser, b.loser);
  EXPECT_EQ(a.winner, b.winner);
  EXPECT_EQ(a.winner, c.winner);
}

TEST(Pairs, DownsamplingIsSeededAndKeepsOnePerSequence) {
  const auto chains = chains_with({5, 5, 5, 5, 5, 5});
  const auto a = make_pairs(chains, Strategy::stepwise_downsampled, 42);
  const auto b = make_pairs(chains, Strategy::stepwise_downsampled, 42);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.seed, 42u);
  std::set<std::string> seqs;
  for (const auto& p : a.pairs) seqs.insert(p.sequence_id);
  EXPECT_EQ(seqs.size(), chains.size());
  bool differs = false;
  for (std::uint64_t s = 0; s < 20 && !differs; ++s) {
    differs = make_pairs(chains, Strategy::stepwise_downsampled, s).pairs != a.pairs;
  }
  EXPECT_TRUE(differs);
}

TEST(Pairs, InvalidChainsAreRejected) {
  auto chains = chains_with({2});
  chains[0].verdict.failures.push_back({1, FailureReason::multi_edit, ""});
  try {
    make_pairs(chains, Strategy::stepwise);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::rejected_chain);
  }
}

TEST(Pairs, ABJudgmentsGiveOnePairUnlessTied) {
  const ABItem item{"item1", "doc1", "doc1-q1", "first answer", "second answer"};
  const auto p = pairs_ab({"ann", "item1", Choice::B, "more precise"}, item);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].winner, "second answer");
  EXPECT_EQ(p[0].loser, "first answer");
  EXPECT_FALSE(p[0].step_index.has_value());
  EXPECT_TRUE(pairs_ab({"ann", "item1", Choice::tie, "same"}, item).empty());
}

TEST(Pairs, PairSetRoundTripsThroughJsonl) {
  auto set = make_pairs(chains_with({2, 4}), Strategy::stepwise);
  set += make_pairs(chains_with({2, 4}), Strategy::stepwise_downsampled, 3);
  const auto back = pairset_from_jsonl(pairset_to_jsonl(set));
  EXPECT_EQ(back.pairs, set.pairs);
  EXPECT_EQ(back.seed, set.seed);

  Json bad = set.pairs[0];
  bad["step_index"] = nullptr;
  EXPECT_THROW(bad.get<PreferencePair>(), Error);
}

TEST(Export, PreferenceAndSftFilesAreHashed) {
  const auto corpus = small_corpus();
  const auto chains = chains_with({2, 3});
  const auto dir = std::filesystem::temp_directory_path() / "revchain_export_test";
  std::filesystem::create_directories(dir);
  const auto rep = export_training_file(make_pairs(chains, Strategy::stepwise), corpus, dir / "stepwise.jsonl",
                                        ExportFormat::preference_jsonl);
  EXPECT_EQ(rep.lines, 5u);
  const auto content = read_file(dir / "stepwise.jsonl");
  EXPECT_EQ(rep.sha256, sha256_hex(content));
  const auto rows = parse_jsonl(content);
  EXPECT_EQ(rows[0].at("prompt").get<std::string>(),
            assemble_response_prompt(corpus.document("doc1"), corpus.query("doc1-q1")));
  EXPECT_EQ(rows[0].at("meta").at("strategy"), "stepwise");

  const auto sft = export_sft(chains, corpus, dir / "sft.jsonl");
  EXPECT_EQ(sft.lines, 2u);
  EXPECT_EQ(sft_jsonl(make_pairs(chains, Strategy::full_rewrite), corpus), read_file(dir / "sft.jsonl"));
  std::filesystem::remove_all(dir);
}
