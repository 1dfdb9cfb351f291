#pragma once

// Preference losses over sequence log-probabilities, with analytic gradients.
//
//   h_w = beta * (lp_w_policy - lp_w_ref)
//   h_l = beta * (lp_l_policy - lp_l_ref)

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "revchain/annotation.hpp"
#include "revchain/corpus.hpp"
#include "revchain/error.hpp"
#include "revchain/generation_client.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/pairs.hpp"
#include "revchain/utf8.hpp"

namespace revchain {

struct LogProbQuad {
  double lp_w_policy = 0.0;
  double lp_l_policy = 0.0;
  double lp_w_ref = 0.0;
  double lp_l_ref = 0.0;

  bool operator==(const LogProbQuad&) const = default;

  std::array<double, 4> as_array() const { return {lp_w_policy, lp_l_policy, lp_w_ref, lp_l_ref}; }
  static LogProbQuad from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

inline void to_json(Json& j, const LogProbQuad& q) {
  j = Json{{"lp_w_policy", q.lp_w_policy}, {"lp_l_policy", q.lp_l_policy}, {"lp_w_ref", q.lp_w_ref},
           {"lp_l_ref", q.lp_l_ref}};
}
inline void from_json(const Json& j, LogProbQuad& q) {
  j.at("lp_w_policy").get_to(q.lp_w_policy);
  j.at("lp_l_policy").get_to(q.lp_l_policy);
  j.at("lp_w_ref").get_to(q.lp_w_ref);
  j.at("lp_l_ref").get_to(q.lp_l_ref);
}

enum class LossVariant { dpo, dpo_positive, apo_zero, apo_down };

NLOHMANN_JSON_SERIALIZE_ENUM(LossVariant, {
                                              {LossVariant::dpo, "dpo"},
                                              {LossVariant::dpo_positive, "dpo_positive"},
                                              {LossVariant::apo_zero, "apo_zero"},
                                              {LossVariant::apo_down, "apo_down"},
                                          })

inline constexpr std::array<LossVariant, 4> kAllLossVariants = {LossVariant::dpo, LossVariant::dpo_positive,
                                                                LossVariant::apo_zero, LossVariant::apo_down};

struct LossConfig {
  double beta = 0.1;
  double lambda_dpop = 50.0;
  LossVariant variant = LossVariant::dpo;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw Error(ErrorKind::config_error, "beta must be > 0");
    if (!(lambda_dpop >= 0.0) || !std::isfinite(lambda_dpop)) {
      throw Error(ErrorKind::config_error, "lambda must be >= 0");
    }
  }
};

// Gradient order follows LogProbQuad: w_policy, l_policy, w_ref, l_ref.
struct LossResult {
  double value = 0.0;
  std::array<double, 4> gradient{};
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

namespace detail {

inline void check_finite(const LogProbQuad& q) {
  for (double v : q.as_array()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::numeric_error, "non-finite log-probability");
  }
}

inline double sigmoid_prime(double x) {
  return sigmoid(x) * sigmoid(-x);
}

// Chain rule through h_w and h_l.
inline std::array<double, 4> through_margins(double beta, double d_hw, double d_hl) {
  return {beta * d_hw, beta * d_hl, -beta * d_hw, -beta * d_hl};
}

}  // namespace detail

inline LossResult loss_dpo(const LogProbQuad& q, const LossConfig& c = {}) {
  detail::check_finite(q);
  c.validate();
  const double z = c.beta * (q.lp_w_policy - q.lp_w_ref) - c.beta * (q.lp_l_policy - q.lp_l_ref);
  const double d_z = -sigmoid(-z);
  return {-log_sigmoid(z), detail::through_margins(c.beta, d_z, -d_z)};
}

inline LossResult loss_dpo_positive(const LogProbQuad& q, const LossConfig& c = {}) {
  detail::check_finite(q);
  c.validate();
  const double gap = q.lp_w_ref - q.lp_w_policy;
  const bool active = gap > 0.0;
  const double z = c.beta * (q.lp_w_policy - q.lp_w_ref) - c.beta * (q.lp_l_policy - q.lp_l_ref) -
                   c.beta * c.lambda_dpop * (active ? gap : 0.0);
  const double d_z = -sigmoid(-z);
  auto g = detail::through_margins(c.beta, d_z, -d_z);
  if (active) {
    g[0] += c.beta * c.lambda_dpop * d_z;
    g[2] -= c.beta * c.lambda_dpop * d_z;
  }
  return {-log_sigmoid(z), g};
}

inline LossResult loss_apo_zero(const LogProbQuad& q, const LossConfig& c = {}) {
  detail::check_finite(q);
  c.validate();
  const double hw = c.beta * (q.lp_w_policy - q.lp_w_ref);
  const double hl = c.beta * (q.lp_l_policy - q.lp_l_ref);
  return {-sigmoid(hw) + sigmoid(hl),
          detail::through_margins(c.beta, -detail::sigmoid_prime(hw), detail::sigmoid_prime(hl))};
}

inline LossResult loss_apo_down(const LogProbQuad& q, const LossConfig& c = {}) {
  detail::check_finite(q);
  c.validate();
  const double hw = c.beta * (q.lp_w_policy - q.lp_w_ref);
  const double hl = c.beta * (q.lp_l_policy - q.lp_l_ref);
  const double z = hw - hl;
  const double sz = detail::sigmoid_prime(z);
  return {sigmoid(hw) - sigmoid(z), detail::through_margins(c.beta, detail::sigmoid_prime(hw) - sz, sz)};
}

inline LossResult loss(const LogProbQuad& q, const LossConfig& c) {
  switch (c.variant) {
    case LossVariant::dpo: return loss_dpo(q, c);
    case LossVariant::dpo_positive: return loss_dpo_positive(q, c);
    case LossVariant::apo_zero: return loss_apo_zero(q, c);
    case LossVariant::apo_down: return loss_apo_down(q, c);
  }
  throw Error(ErrorKind::config_error, "unknown loss variant");
}

struct BatchLoss {
  double mean = 0.0;
  std::vector<std::array<double, 4>> gradients;
};

inline BatchLoss batch_loss(std::span<const LogProbQuad> quads, const LossConfig& c) {
  if (quads.empty()) throw Error(ErrorKind::empty_batch, "batch is empty");
  BatchLoss out;
  double sum = 0.0;
  for (const auto& q : quads) {
    const auto r = loss(q, c);
    sum += r.value;
    out.gradients.push_back(r.gradient);
  }
  out.mean = sum / static_cast<double>(quads.size());
  return out;
}

// ---- Scoring ------------------------------------------------------------

struct ScoreOptions {
  bool length_normalize = false;  // divide by whitespace token count
};

inline std::vector<LogProbQuad> score_pairs(GenerationClient& client, const PairSet& pairs, const Corpus& corpus,
                                            const std::string& policy_tag, const std::string& ref_tag,
                                            const ScoreOptions& opts = {}) {
  if (policy_tag.empty() || ref_tag.empty()) throw Error(ErrorKind::config_error, "model tag missing");
  if (!client.capabilities().sequence_logprob) {
    throw Error(ErrorKind::config_error, client.describe() + " cannot score sequences");
  }
  std::vector<LogProbQuad> quads;
  for (const auto& p : pairs.pairs) {
    const auto prompt = assemble_response_prompt(corpus.document(p.document_id), corpus.query(p.query_id));
    auto score = [&](const std::string& model, const std::string& completion) {
      double lp = client.sequence_logprob(LogprobRequest{model, prompt, completion});
      if (opts.length_normalize) {
        const auto n = whitespace_token_count(utf8::decode(completion));
        lp /= static_cast<double>(std::max<std::size_t>(n, 1));
      }
      return lp;
    };
    quads.push_back({score(policy_tag, p.winner), score(policy_tag, p.loser), score(ref_tag, p.winner),
                     score(ref_tag, p.loser)});
  }
  return quads;
}

// Mean loss per strategy under every variant.
inline Json loss_report(const PairSet& pairs, std::span<const LogProbQuad> quads, LossConfig base = {}) {
  if (pairs.pairs.size() != quads.size()) throw Error(ErrorKind::invalid_input, "one quad per pair required");
  std::map<Strategy, std::vector<LogProbQuad>> by_strategy;
  for (std::size_t i = 0; i < quads.size(); ++i) by_strategy[pairs.pairs[i].strategy].push_back(quads[i]);
  Json strategies = Json::object();
  for (const auto& [s, qs] : by_strategy) {
    Json row{{"pairs", qs.size()}};
    for (auto v : kAllLossVariants) {
      base.variant = v;
      row[Json(v).get<std::string>()] = batch_loss(qs, base).mean;
    }
    strategies[strategy_name(s)] = row;
  }
  return Json{{"beta", base.beta}, {"lambda_dpop", base.lambda_dpop}, {"strategies", strategies}};
}

}  // namespace revchain
