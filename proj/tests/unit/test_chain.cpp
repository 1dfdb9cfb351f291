#include <gtest/gtest.h>

#include <revchain/chain.hpp>
#include <revchain/diff.hpp>
#include <revchain/mock_model.hpp>

#include "../support/chain_fixtures.hpp"

#include <random>

using namespace revchain;

namespace {

const SourceDocument kDoc{"doc1", Domain::news, "Quarterly revenue rose nine percent."};
const Query kQuery{"doc1-q1", "doc1", "Summarise the quarter.", QueryOrigin::llm_generated};

TaggedResponse two_dislikes() {
  TaggedResponse t;
  t.text_with_tags = fixtures::render({{fixtures::P0}, {fixtures::D1, 1}, {fixtures::P1}, {fixtures::D2, 2}, {fixtures::P2}});
  t.reasons = {{1, Polarity::dislike, "I dislike this because it states something that\xE2\x80\x99s factually wrong."},
               {2, Polarity::dislike, "I dislike this because it feels generic or incomplete."}};
  return t;
}

std::set<FailureReason> reasons(const ChainVerdict& v) {
  std::set<FailureReason> out;
  for (const auto& f : v.failures) out.insert(f.reason);
  return out;
}

}  // namespace

TEST(Diff, AffixesDoNotOverlap) {
  const auto t = diff::common_affixes(U"aaa", U"aaaa");
  EXPECT_EQ(t.prefix + t.suffix, 3u);
  EXPECT_EQ(diff::levenshtein(U"kitten", U"sitting"), 3u);
}

TEST(Diff, EditScriptReconstructsTarget) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::u32string a, b;
    for (std::size_t i = rng() % 30; i > 0; --i) a.push_back(U'a' + rng() % 3);
    for (std::size_t i = rng() % 30; i > 0; --i) b.push_back(U'a' + rng() % 3);
    std::u32string rebuilt;
    std::size_t cost = 0;
    for (const auto& r : diff::edit_script(a, b)) {
      if (r.op == diff::Op::equal) rebuilt += a.substr(r.a_pos, r.length);
      if (r.op == diff::Op::insert) rebuilt += b.substr(r.b_pos, r.length);
      if (r.op != diff::Op::equal) cost += r.length;
    }
    EXPECT_EQ(rebuilt, b);
    EXPECT_GE(cost, diff::levenshtein(a, b));
  }
}

TEST(RewritePrompt, ContainsInstructionsAndSections) {
  const auto p = assemble_rewrite_prompt(two_dislikes(), kDoc, kQuery);
  EXPECT_NE(p.system.find("ORDER OF DISLIKE IDS"), std::string::npos);
  EXPECT_NE(p.system.find("\"Step N\""), std::string::npos);
  EXPECT_NE(p.user.find("## Knowledge Source"), std::string::npos);
  EXPECT_NE(p.user.find(kDoc.text), std::string::npos);
  EXPECT_NE(p.user.find("<dislike id='2'>"), std::string::npos);
  EXPECT_LT(p.user.find("{'id': 1"), p.user.find("{'id': 2"));
  EXPECT_EQ(p.user.find("{{"), std::string::npos);
}

TEST(RewritePrompt, NothingToRewrite) {
  TaggedResponse t{"plain <like id='1'>fine</like id='1'>", {{1, Polarity::like, "I like this because it's well-written."}}};
  try {
    assemble_rewrite_prompt(t, kDoc, kQuery);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::nothing_to_rewrite);
  }
  TaggedResponse missing_reason{"<dislike id='1'>x</dislike id='1'>", {}};
  EXPECT_THROW(assemble_rewrite_prompt(missing_reason, kDoc, kQuery), Error);
}

TEST(Steps, ParsesEmittedSequence) {
  const auto t = two_dislikes();
  const auto steps = mock_rewrite_steps(t.text_with_tags);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(parse_steps(format_steps(steps), 2), steps);
  EXPECT_NE(steps[0].find("<dislike id='2'>"), std::string::npos);
  const std::string decorated = "Sure.\n\n**Step 1:**\n````\n" + steps[0] + "\n```inner```\n````\n### Step 2\n```\n" +
                                steps[1] + "\n```\n";
  const auto parsed = parse_steps(decorated, 2);
  EXPECT_EQ(parsed[1], steps[1]);
  EXPECT_EQ(parsed[0], steps[0] + "\n```inner```");
}

TEST(Steps, CountAndTagErrors) {
  const auto steps = mock_rewrite_steps(two_dislikes().text_with_tags);
  try {
    parse_steps(format_steps({steps[0]}), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::step_count_error);
  }
  try {
    parse_steps(format_steps({strip_tags(steps[0]), steps[1]}), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::tag_error);
  }
}

TEST(Validate, HandLabelledFixtures) {
  for (const auto& f : fixtures::chain_fixtures()) {
    const auto v = validate_chain(f.steps);
    EXPECT_EQ(reasons(v), f.expected) << f.name << "\n" << Json(v).dump(2);
    EXPECT_EQ(v.valid(), f.expected.empty()) << f.name;
  }
}

TEST(Validate, SingleEditPropertyOnValidChains) {
  for (const auto& f : fixtures::chain_fixtures()) {
    if (!f.expected.empty()) continue;
    for (std::size_t i = 1; i < f.steps.size(); ++i) {
      const auto a = utf8::decode(strip_tags(f.steps[i - 1]));
      const auto b = utf8::decode(strip_tags(f.steps[i]));
      const auto t = diff::common_affixes(a, b);
      const auto ra = std::u32string_view(a).substr(t.prefix, a.size() - t.prefix - t.suffix);
      const auto rb = std::u32string_view(b).substr(t.prefix, b.size() - t.prefix - t.suffix);
      EXPECT_EQ(diff::levenshtein(a, b), diff::levenshtein(ra, rb)) << f.name;
    }
    EXPECT_EQ(strip_tags(f.steps.back()).find("<dislike"), std::string::npos);
  }
}

TEST(Validate, TooFewSteps) {
  EXPECT_FALSE(validate_chain({"only one"}).valid());
}

TEST(Validate, VerdictJsonRoundTrip) {
  const auto fx = fixtures::chain_fixtures();
  for (const auto& f : fx) {
    const auto v = validate_chain(f.steps);
    const Json j = v;
    EXPECT_EQ(j["status"], v.valid() ? "valid" : "invalid");
    EXPECT_EQ(j.get<ChainVerdict>().failures, v.failures);
  }
}

TEST(BuildChain, ValidOnFirstAttempt) {
  MockModel model;
  const auto chain = build_chain(model, two_dislikes(), kDoc, kQuery, {}, {"i1/a1/r1", "i1", "a1", "r1"});
  EXPECT_TRUE(chain.valid());
  EXPECT_EQ(chain.attempt_count, 1);
  EXPECT_EQ(chain.steps.size(), 3u);
  EXPECT_EQ(chain.addressed_ids, (std::vector<int>{1, 2}));
  const Json j = chain;
  EXPECT_EQ(j.get<ImprovementChain>().steps, chain.steps);
  EXPECT_EQ(j.begin().key(), "sequence_id");
}

TEST(BuildChain, RegeneratesUntilValid) {
  MockModel model(2);
  BuildChainOptions opts;
  opts.max_attempts = 3;
  const auto chain = build_chain(model, two_dislikes(), kDoc, kQuery, opts);
  EXPECT_TRUE(chain.valid());
  EXPECT_EQ(chain.attempt_count, 3);
  EXPECT_EQ(model.calls(), 3);
}

TEST(BuildChain, ExhaustedAttemptsCarryVerdict) {
  const auto t = two_dislikes();
  MockClient always_multi([&](const ChatRequest&, int) {
    // both spans fixed in step 1
    auto s1 = rewrite_dislike_span(rewrite_dislike_span(t.text_with_tags, 1), 2);
    return format_steps({s1, s1});
  });
  BuildChainOptions opts;
  opts.max_attempts = 2;
  try {
    build_chain(always_multi, t, kDoc, kQuery, opts);
    FAIL();
  } catch (const ChainFailure& e) {
    EXPECT_EQ(e.kind(), ErrorKind::chain_failure);
    EXPECT_EQ(e.attempts(), 2);
    EXPECT_TRUE(e.last_verdict().has(FailureReason::multi_edit));
  }
  EXPECT_EQ(always_multi.chat_calls(), 2);
}
