#include <gtest/gtest.h>

#include <revchain/annotation.hpp>
#include <revchain/error.hpp>

#include <random>

using namespace revchain;

namespace {

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

SpanHighlight span(int id, Polarity p, std::size_t s, std::size_t e, std::vector<std::string> attrs) {
  SpanHighlight h;
  h.id = id;
  h.polarity = p;
  h.start = s;
  h.end = e;
  h.attributes = std::move(attrs);
  return h;
}

// Agreement as the fraction of agreeing rater pairs, enumerated explicitly.
double kappa_by_pairs(const std::vector<std::vector<int>>& m) {
  const std::size_t cats = m.front().size();
  double p_bar = 0;
  std::vector<double> totals(cats, 0);
  double ratings = 0;
  for (const auto& row : m) {
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < cats; ++c) {
      for (int r = 0; r < row[c]; ++r) labels.push_back(c);
      totals[c] += row[c];
      ratings += row[c];
    }
    int agree = 0;
    int pairs = 0;
    for (std::size_t a = 0; a < labels.size(); ++a) {
      for (std::size_t b = 0; b < labels.size(); ++b) {
        if (a == b) continue;
        ++pairs;
        agree += labels[a] == labels[b];
      }
    }
    p_bar += static_cast<double>(agree) / pairs;
  }
  p_bar /= static_cast<double>(m.size());
  double p_e = 0;
  for (double t : totals) p_e += (t / ratings) * (t / ratings);
  return (p_bar - p_e) / (1 - p_e);
}

}  // namespace

TEST(Validation, HighlightErrorKinds) {
  const auto like = "it_states_a_useful_fact";
  EXPECT_EQ(kind_of([&] { validate_highlight(span(1, Polarity::like, 3, 3, {like}), 10); }),
            ErrorKind::empty_span_error);
  EXPECT_EQ(kind_of([&] { validate_highlight(span(1, Polarity::like, 3, 11, {like}), 10); }),
            ErrorKind::bounds_error);
  EXPECT_EQ(kind_of([&] { validate_highlight(span(1, Polarity::like, 5, 3, {like}), 10); }),
            ErrorKind::bounds_error);
  EXPECT_EQ(kind_of([&] { validate_highlight(span(1, Polarity::dislike, 0, 3, {like}), 10); }),
            ErrorKind::taxonomy_error);
  EXPECT_EQ(kind_of([&] { validate_highlight(span(1, Polarity::like, 0, 3, {like, like}), 10); }),
            ErrorKind::taxonomy_error);
  EXPECT_EQ(kind_of([&] { validate_highlight(span(1, Polarity::like, 0, 3, {}), 10); }), ErrorKind::invalid_input);
  auto free_only = span(1, Polarity::like, 0, 3, {});
  free_only.free_text = "clear";
  EXPECT_NO_THROW(validate_highlight(free_only, 10));
}

TEST(Validation, OffsetsCountScalarValues) {
  // "héllo wörld": 11 scalar values, 13 bytes
  const std::string text = "h\xC3\xA9llo w\xC3\xB6rld";
  EXPECT_NO_THROW(validate_highlight(span(1, Polarity::like, 6, 11, {"its_well_written"}), utf8::length(text)));
  AnnotationRecord rec;
  rec.highlights = {span(9, Polarity::like, 6, 11, {"its_well_written"})};
  EXPECT_NO_THROW(validate_record(rec, text));
  rec.highlights[0].end = 12;
  EXPECT_EQ(kind_of([&] { validate_record(rec, text); }), ErrorKind::bounds_error);
}

TEST(Validation, RenumbersDislikesLeftToRight) {
  AnnotationRecord rec;
  rec.highlights = {span(7, Polarity::dislike, 20, 25, {"its_too_wordy"}),
                    span(3, Polarity::dislike, 2, 5, {"its_too_wordy"}),
                    span(5, Polarity::like, 10, 12, {"its_well_written"})};
  const auto v = validate_record(rec, std::string(30, 'x'));
  ASSERT_EQ(v.record.highlights.size(), 3u);
  EXPECT_EQ(v.record.highlights[0].start, 2u);
  EXPECT_EQ(v.record.highlights[0].id, 1);
  EXPECT_EQ(v.record.highlights[1].id, 1);  // the like
  EXPECT_EQ(v.record.highlights[2].id, 2);
}

TEST(Judgment, TieNeedsExplanationAndIsFlagged) {
  ABJudgment j{"ann", "item", Choice::tie, " "};
  EXPECT_EQ(kind_of([&] { j.validate(); }), ErrorKind::invalid_input);
  j.explanation = "equally good";
  EXPECT_NO_THROW(j.validate());
  EXPECT_TRUE(j.flagged_rare());
  const Json js = j;
  EXPECT_EQ(js.get<ABJudgment>(), j);
}

TEST(Records, JsonRoundTrip) {
  AnnotationRecord rec{"a1", "i1", "r1", Domain::arxiv, {span(1, Polarity::like, 0, 2, {"its_well_written"})},
                       {{"its_well_organized"}, {}, "ok"}, 12.5};
  rec.highlights[0].free_text = "tidy";
  const ValidatedRecord v{rec, "hello"};
  const Json j = v;
  EXPECT_EQ(j.get<ValidatedRecord>(), v);
  EXPECT_EQ(j.dump(), Json::parse(j.dump()).dump());
}

TEST(Stats, WordsAreCountedInsideHighlights) {
  AnnotationRecord rec;
  rec.domain = Domain::yelp;
  rec.highlights = {span(1, Polarity::like, 0, 7, {"its_well_written", "its_well_organized"}),
                    span(1, Polarity::dislike, 9, 19, {"its_too_wordy"})};
  rec.response_level.liked = {"it_directly_answers_my_question"};
  std::vector<ValidatedRecord> vs = {validate_record(rec, "one two  three four five")};
  const auto s = compute_stats(vs);
  const auto& row = s.rows.at(Domain::yelp);
  EXPECT_EQ(row.responses, 1u);
  EXPECT_EQ(row.like_spans, 1u);
  EXPECT_EQ(row.dislike_spans, 1u);
  EXPECT_EQ(row.attributes, 3u);  // response-level attributes excluded
  EXPECT_EQ(row.words, 2u + 2u);
  EXPECT_EQ(s.total(), row);
}

TEST(Stats, AveragesUndefinedWhenEmpty) {
  EXPECT_EQ(kind_of([] { mean_spans_per_response(AnnotationStats{}); }), ErrorKind::undefined_error);
  EXPECT_EQ(kind_of([] { SpanAverages{}.attrs_per_span(); }), ErrorKind::undefined_error);
}

TEST(Stats, AdditiveOverDisjointSets) {
  std::mt19937_64 rng(3);
  std::vector<ValidatedRecord> all;
  for (int i = 0; i < 40; ++i) {
    AnnotationRecord r;
    r.domain = kAllDomains[rng() % 4];
    const std::size_t n = rng() % 4;
    for (std::size_t k = 0; k < n; ++k) {
      r.highlights.push_back(span(1, rng() % 2 ? Polarity::like : Polarity::dislike, k * 5, k * 5 + 4,
                                  {rng() % 2 ? "its_too_wordy" : "it_lacks_depth_or_useful_detail"}));
      if (r.highlights.back().polarity == Polarity::like) r.highlights.back().attributes = {"its_well_written"};
    }
    all.push_back(validate_record(r, "word word word word word word word word word"));
  }
  const std::span<const ValidatedRecord> s(all);
  EXPECT_EQ(compute_stats(s.subspan(0, 17)) + compute_stats(s.subspan(17)), compute_stats(s));
}

TEST(Kappa, PerfectAgreementIsOne) {
  EXPECT_DOUBLE_EQ(fleiss_kappa({{{3, 0}, {0, 3}, {3, 0}}}), 1.0);
  EXPECT_DOUBLE_EQ(fleiss_kappa({{{4, 0, 0}, {4, 0, 0}}}), 1.0);
}

TEST(Kappa, MatchesPairEnumeration) {
  const std::vector<std::vector<int>> m = {{3, 0, 0}, {2, 1, 0}, {0, 3, 0}, {1, 1, 1}, {0, 0, 3},
                                           {3, 0, 0}, {0, 2, 1}, {1, 0, 2}, {3, 0, 0}, {0, 3, 0}};
  EXPECT_NEAR(fleiss_kappa({m}), 52.0 / 97.0, 1e-12);
  EXPECT_NEAR(fleiss_kappa({m}), kappa_by_pairs(m), 1e-12);
  EXPECT_LE(fleiss_kappa({m}), 1.0);
}

TEST(Kappa, RejectsBadMatrices) {
  EXPECT_EQ(kind_of([] { fleiss_kappa({{{2, 1}, {1, 1}}}); }), ErrorKind::matrix_error);
  EXPECT_EQ(kind_of([] { fleiss_kappa({{{1, 0}, {0, 1}}}); }), ErrorKind::matrix_error);
  EXPECT_EQ(kind_of([] { fleiss_kappa({}); }), ErrorKind::matrix_error);
}

TEST(Timing, TrimIsIdempotentSubsequence) {
  const std::vector<double> xs = {10, 12, 14, 16, 100};
  const auto once = trim_durations(xs);
  EXPECT_EQ(once, (std::vector<double>{10, 12, 14, 16}));
  EXPECT_EQ(trim_durations(std::vector<double>{5, 5, 5}), (std::vector<double>{5, 5, 5}));
  const std::vector<double> mixed = {100, 10, 12, 16, 14};
  EXPECT_EQ(trim_durations(mixed), (std::vector<double>{10, 12, 16, 14}));
  EXPECT_EQ(trim_durations(trim_durations(std::vector<double>{5, 5, 5})), (std::vector<double>{5, 5, 5}));
}

TEST(Timing, ReportCountsItemsOnce) {
  std::vector<AnnotationRecord> recs;
  for (int i = 0; i < 4; ++i) {
    for (int side = 0; side < 2; ++side) {
      AnnotationRecord r;
      r.annotator_id = "a";
      r.item_id = "item" + std::to_string(i);
      r.duration_seconds = 60 + i;
      if (side == 0) r.highlights = {span(1, Polarity::dislike, 0, 1, {"its_too_wordy"})};
      recs.push_back(r);
    }
  }
  std::vector<TimedJudgment> ab = {{{}, 30}, {{}, 31}, {{}, 32}, {{}, 33}};
  const auto rep = timing_report(recs, ab);
  EXPECT_EQ(rep.full_total, 4u);
  EXPECT_NEAR(rep.full_protocol_mean, 61.5, 1e-12);
  EXPECT_NEAR(rep.ab_only_mean, 31.5, 1e-12);
  EXPECT_NEAR(rep.ratio, 61.5 / 31.5, 1e-12);
  EXPECT_NEAR(rep.pairs_per_annotation, 2.0, 1e-12);
  EXPECT_NEAR(pairs_per_annotation(4.7, 4.7), 10.4, 1e-12);
  EXPECT_EQ(kind_of([] { timing_ratio(10, 0); }), ErrorKind::undefined_error);
}
