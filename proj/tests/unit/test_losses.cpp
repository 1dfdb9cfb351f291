#include <gtest/gtest.h>

#include <revchain/losses.hpp>
#include <revchain/mock_model.hpp>

#include "../support/loss_oracle.hpp"
#include "../support/random_chains.hpp"

#include <cmath>
#include <random>

using namespace revchain;
using fixtures::oracle;

namespace {

double rel_err(double a, double n) {
  const double scale = std::max(std::abs(a), std::abs(n));
  return scale < 1e-12 ? 0.0 : std::abs(a - n) / scale;
}

}  // namespace

TEST(Losses, ValuesAtZeroMargin) {
  const LogProbQuad q{-10, -12, -10, -12};
  EXPECT_NEAR(loss_dpo(q).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(loss_dpo_positive(q).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(loss_apo_zero(q).value, 0.0, 1e-12);
  EXPECT_NEAR(loss_apo_down(q).value, 0.0, 1e-12);
}

TEST(Losses, DpoPositiveReducesToDpoWhenWinnerImproves) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-300, -1);
  for (int i = 0; i < 200; ++i) {
    LogProbQuad q{u(rng), u(rng), u(rng), u(rng)};
    if (q.lp_w_policy < q.lp_w_ref) std::swap(q.lp_w_policy, q.lp_w_ref);
    const auto a = loss_dpo(q);
    const auto b = loss_dpo_positive(q);
    EXPECT_DOUBLE_EQ(a.value, b.value);
    EXPECT_EQ(a.gradient, b.gradient);
  }
}

TEST(Losses, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-20, 20);
  const LossConfig cfg;
  const long double h = 1e-5L;
  for (auto v : kAllLossVariants) {
    LossConfig c = cfg;
    c.variant = v;
    int checked = 0;
    while (checked < 250) {
      const LogProbQuad q{u(rng), u(rng), u(rng), u(rng)};
      if (v == LossVariant::dpo_positive && std::abs(q.lp_w_ref - q.lp_w_policy) < 1e-4) continue;
      const auto r = loss(q, c);
      const auto base = q.as_array();
      for (int k = 0; k < 4; ++k) {
        std::array<long double, 4> up{}, down{};
        for (int m = 0; m < 4; ++m) up[m] = down[m] = base[m];
        up[k] += h;
        down[k] -= h;
        const double numeric =
            static_cast<double>((oracle(v, up, c.beta, c.lambda_dpop) - oracle(v, down, c.beta, c.lambda_dpop)) /
                                (2 * h));
        EXPECT_LE(rel_err(r.gradient[k], numeric), 1e-6) << Json(v) << " k=" << k;
      }
      EXPECT_NEAR(r.value, static_cast<double>(oracle(v, {base[0], base[1], base[2], base[3]}, c.beta, c.lambda_dpop)),
                  1e-12);
      ++checked;
    }
  }
}

TEST(Losses, ExtremeMarginsStayFinite) {
  const LogProbQuad q{-1, -5000, -5000, -1};
  for (auto v : kAllLossVariants) {
    const auto r = loss(q, {0.1, 50, v});
    EXPECT_TRUE(std::isfinite(r.value));
    for (double g : r.gradient) EXPECT_TRUE(std::isfinite(g));
  }
  EXPECT_NEAR(loss_dpo({-5000, -1, -1, -5000}).value, 999.8, 1e-9);
}

TEST(Losses, ErrorsAreTyped) {
  auto kind = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::invalid_input;
  };
  EXPECT_EQ(kind([] { loss_dpo({NAN, 0, 0, 0}); }), ErrorKind::numeric_error);
  EXPECT_EQ(kind([] { loss_dpo({0, 0, 0, 0}, {0.0}); }), ErrorKind::config_error);
  EXPECT_EQ(kind([] { batch_loss({}, {}); }), ErrorKind::empty_batch);
}

TEST(Losses, BatchMeanAndReport) {
  const std::vector<LogProbQuad> qs = {{-1, -2, -1, -2}, {-3, -1, -2, -2}};
  const auto b = batch_loss(qs, {});
  EXPECT_NEAR(b.mean, (loss_dpo(qs[0]).value + loss_dpo(qs[1]).value) / 2, 1e-15);
  EXPECT_EQ(b.gradients.size(), 2u);
}

TEST(Scoring, MockModelProducesQuadsPerPair) {
  std::mt19937_64 rng(2);
  const std::vector<ImprovementChain> chains = {fixtures::random_chain(rng, 2, "s0")};
  const auto pairs = make_pairs(chains, Strategy::stepwise);
  Corpus corpus;
  corpus.add(SourceDocument{"doc1", Domain::news, "Quarterly revenue rose nine percent."});
  corpus.add(Query{"doc1-q1", "doc1", "Summarise the quarter.", QueryOrigin::llm_generated});
  MockModel model;
  const auto quads = score_pairs(model, pairs, corpus, "policy", "reference");
  ASSERT_EQ(quads.size(), 2u);
  EXPECT_EQ(quads, score_pairs(model, pairs, corpus, "policy", "reference"));
  EXPECT_NE(quads[0].lp_w_policy, quads[0].lp_w_ref);
  const auto rep = loss_report(pairs, quads);
  EXPECT_EQ(rep.at("strategies").at("stepwise").at("pairs"), 2);
  EXPECT_THROW(score_pairs(model, pairs, corpus, "", "reference"), Error);
}
