#pragma once

// Bradley-Terry ratings on the logistic Elo scale,
//   P(i beats j) = 1 / (1 + 10^((R_j - R_i) / 400)),
// fitted by minorization-maximization, plus prompt-level bootstrap intervals
// on pairwise rating differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "revchain/annotation.hpp"
#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"

namespace revchain {

enum class Outcome { i_wins, j_wins, draw };
enum class Judge { human, automated };

NLOHMANN_JSON_SERIALIZE_ENUM(Outcome, {{Outcome::i_wins, "i_wins"}, {Outcome::j_wins, "j_wins"}, {Outcome::draw, "draw"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Judge, {{Judge::human, "human"}, {Judge::automated, "automated"}})

struct ComparisonRecord {
  std::string prompt_id;
  std::string model_i;
  std::string model_j;
  Outcome outcome = Outcome::draw;
  Judge judge = Judge::automated;

  bool operator==(const ComparisonRecord&) const = default;
};

inline void to_json(Json& j, const ComparisonRecord& r) {
  j = Json{{"prompt_id", r.prompt_id}, {"model_i", r.model_i}, {"model_j", r.model_j}, {"outcome", r.outcome},
           {"judge", r.judge}};
}
inline void from_json(const Json& j, ComparisonRecord& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  j.at("model_i").get_to(r.model_i);
  j.at("model_j").get_to(r.model_j);
  const auto o = j.at("outcome").get<std::string>();
  if (o != "i_wins" && o != "j_wins" && o != "draw") throw Error(ErrorKind::schema_error, "bad outcome '" + o + "'");
  r.outcome = j.at("outcome").get<Outcome>();
  const auto jd = j.value("judge", std::string("automated"));
  if (jd != "human" && jd != "automated") throw Error(ErrorKind::schema_error, "bad judge '" + jd + "'");
  r.judge = Json(jd).get<Judge>();
  if (r.model_i == r.model_j) throw Error(ErrorKind::schema_error, "a model cannot be compared with itself");
}

struct Game {
  std::string winner;
  std::string loser;
  double weight = 1.0;

  bool operator==(const Game&) const = default;
};

// Wins count 1; a draw is half a win for each side.
inline std::vector<Game> expand_games(std::span<const ComparisonRecord> records) {
  std::vector<Game> games;
  for (const auto& r : records) {
    if (r.model_i == r.model_j) throw Error(ErrorKind::invalid_input, "a model cannot be compared with itself");
    switch (r.outcome) {
      case Outcome::i_wins: games.push_back({r.model_i, r.model_j, 1.0}); break;
      case Outcome::j_wins: games.push_back({r.model_j, r.model_i, 1.0}); break;
      case Outcome::draw:
        games.push_back({r.model_i, r.model_j, 0.5});
        games.push_back({r.model_j, r.model_i, 0.5});
        break;
    }
  }
  return games;
}

// Dense win-weight matrix over a fixed model index.
struct WinMatrix {
  std::vector<std::string> models;
  std::vector<double> w;  // w[i * n + j] = weight of i beating j

  std::size_t size() const { return models.size(); }
  double& at(std::size_t i, std::size_t j) { return w[i * models.size() + j]; }
  double at(std::size_t i, std::size_t j) const { return w[i * models.size() + j]; }
};

inline WinMatrix win_matrix(std::span<const Game> games, std::vector<std::string> models = {}) {
  if (models.empty()) {
    for (const auto& g : games) {
      models.push_back(g.winner);
      models.push_back(g.loser);
    }
    std::sort(models.begin(), models.end());
    models.erase(std::unique(models.begin(), models.end()), models.end());
  }
  WinMatrix m{models, std::vector<double>(models.size() * models.size(), 0.0)};
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < models.size(); ++i) index[models[i]] = i;
  for (const auto& g : games) {
    m.at(index.at(g.winner), index.at(g.loser)) += g.weight;
  }
  return m;
}

struct FitOptions {
  double anchor = 1500.0;
  double tolerance = 1e-9;
  int max_iterations = 10000;
};

struct RatingTable {
  std::map<std::string, double> ratings;
  std::string anchor;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::vector<double> log_likelihood_trace;

  double diff(const std::string& a, const std::string& b) const { return ratings.at(a) - ratings.at(b); }
};

inline Json to_json_value(const RatingTable& t) {
  Json r = Json::object();
  for (const auto& [m, v] : t.ratings) r[m] = v;
  return Json{{"ratings", r}, {"anchor", t.anchor}, {"log_likelihood", t.log_likelihood}, {"iterations", t.iterations}};
}

namespace detail {

// The maximum-likelihood estimate exists and is unique exactly when every
// model can reach every other through chains of wins.
inline void check_identifiable(const WinMatrix& m) {
  const std::size_t n = m.size();
  if (n < 2) throw Error(ErrorKind::identifiability_error, "need at least two models");
  for (std::size_t i = 0; i < n; ++i) {
    double games = 0;
    for (std::size_t j = 0; j < n; ++j) games += m.at(i, j) + m.at(j, i);
    if (games <= 0) throw Error(ErrorKind::identifiability_error, "model " + m.models[i] + " has no games");
  }
  auto reach = [&](bool forward) {
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> stack = {0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < n; ++j) {
        const double w = forward ? m.at(i, j) : m.at(j, i);
        if (w > 0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    return seen;
  };
  for (bool dir : {true, false}) {
    const auto seen = reach(dir);
    for (std::size_t j = 0; j < n; ++j) {
      if (!seen[j]) {
        throw Error(ErrorKind::identifiability_error,
                    "comparison graph is not strongly connected: " + m.models[j] +
                        (dir ? " is never beaten by a chain from " : " never beats a chain back to ") + m.models[0]);
      }
    }
  }
}

inline double log_logistic(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double log_likelihood(const WinMatrix& m, const std::vector<double>& r) {
  const double k = std::log(10.0) / 400.0;
  double ll = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double w = m.at(i, j);
      if (w > 0) ll += w * log_logistic(k * (r[i] - r[j]));
    }
  }
  return ll;
}

}  // namespace detail

inline RatingTable fit_bt(const WinMatrix& m, const FitOptions& opts = {}) {
  detail::check_identifiable(m);
  const std::size_t n = m.size();
  std::vector<double> wins(n, 0.0);
  std::vector<double> games(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      wins[i] += m.at(i, j);
      games[i * n + j] = m.at(i, j) + m.at(j, i);
    }
  }
  // Work with gamma = 10^((R - anchor) / 400), starting from equal ratings.
  std::vector<double> gamma(n, 1.0);
  std::vector<double> ratings(n, opts.anchor);
  RatingTable t;
  t.log_likelihood_trace.push_back(detail::log_likelihood(m, ratings));
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i && games[i * n + j] > 0) denom += games[i * n + j] / (gamma[i] + gamma[j]);
      }
      next[i] = wins[i] / denom;
    }
    // Fix the gauge: mean rating equals the anchor.
    double mean_log = 0.0;
    for (double g : next) mean_log += std::log10(g);
    mean_log /= static_cast<double>(n);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = opts.anchor + 400.0 * (std::log10(next[i]) - mean_log);
      change = std::max(change, std::abs(r - ratings[i]));
      ratings[i] = r;
      gamma[i] = std::pow(10.0, (r - opts.anchor) / 400.0);
    }
    t.log_likelihood_trace.push_back(detail::log_likelihood(m, ratings));
    if (change < opts.tolerance) {
      ++it;
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) t.ratings[m.models[i]] = ratings[i];
  t.anchor = "mean rating = " + std::to_string(opts.anchor);
  t.log_likelihood = t.log_likelihood_trace.back();
  t.iterations = it;
  return t;
}

inline RatingTable fit_bt(std::span<const ComparisonRecord> records, const FitOptions& opts = {}) {
  const auto games = expand_games(records);
  return fit_bt(win_matrix(games), opts);
}

// ---- Bootstrap ----------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool operator==(const Interval&) const = default;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

struct BootstrapReport {
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::size_t skipped = 0;  // resamples without a unique fit
  std::vector<std::string> models;
  std::map<std::pair<std::string, std::string>, Interval> pairwise_diff_ci;  // CI of R_first - R_second

  bool operator==(const BootstrapReport&) const = default;

  const Interval& ci(const std::string& a, const std::string& b) const { return pairwise_diff_ci.at({a, b}); }
};

inline Json to_json_value(const BootstrapReport& r) {
  Json cis = Json::array();
  for (const auto& [k, v] : r.pairwise_diff_ci) {
    cis.push_back(Json{{"model", k.first}, {"versus", k.second}, {"lo", v.lo}, {"hi", v.hi}});
  }
  return Json{{"n_samples", r.n_samples}, {"seed", r.seed}, {"skipped", r.skipped}, {"models", r.models},
              {"pairwise_diff_ci", cis}};
}

struct BootstrapOptions {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  FitOptions fit;
};

// Resamples prompts with replacement and refits from scratch each time.
// Resample b draws from its own generator seeded with seed + b, so the report
// does not depend on the thread count.
inline BootstrapReport bootstrap_ci(std::span<const ComparisonRecord> records, const BootstrapOptions& opts = {}) {
  if (records.empty()) throw Error(ErrorKind::invalid_input, "bootstrap needs at least one prompt");
  if (opts.n_samples == 0) throw Error(ErrorKind::invalid_input, "n_samples must be >= 1");

  const auto all_games = expand_games(records);
  const auto full = win_matrix(all_games);
  const std::size_t n = full.size();

  std::vector<std::string> prompts;
  std::map<std::string, std::size_t> prompt_index;
  for (const auto& r : records) {
    if (prompt_index.try_emplace(r.prompt_id, prompts.size()).second) prompts.push_back(r.prompt_id);
  }
  std::vector<WinMatrix> per_prompt(prompts.size(), WinMatrix{full.models, std::vector<double>(n * n, 0.0)});
  {
    std::map<std::string, std::size_t> mi;
    for (std::size_t i = 0; i < n; ++i) mi[full.models[i]] = i;
    for (const auto& r : records) {
      const ComparisonRecord one[] = {r};
      for (const auto& g : expand_games(one)) {
        per_prompt[prompt_index.at(r.prompt_id)].at(mi.at(g.winner), mi.at(g.loser)) += g.weight;
      }
    }
  }

  std::vector<std::optional<std::vector<double>>> samples(opts.n_samples);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      std::mt19937_64 rng(opts.seed + b);
      std::uniform_int_distribution<std::size_t> pick(0, prompts.size() - 1);
      WinMatrix m{full.models, std::vector<double>(n * n, 0.0)};
      for (std::size_t k = 0; k < prompts.size(); ++k) {
        const auto& src = per_prompt[pick(rng)].w;
        for (std::size_t x = 0; x < src.size(); ++x) m.w[x] += src[x];
      }
      try {
        const auto t = fit_bt(m, opts.fit);
        std::vector<double> r;
        for (const auto& name : full.models) r.push_back(t.ratings.at(name));
        samples[b] = std::move(r);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::identifiability_error) throw;
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(opts.n_samples)));
  if (threads == 1) {
    run(0, opts.n_samples);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (opts.n_samples + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(opts.n_samples, b + chunk);
      if (b < e) pool.emplace_back(run, b, e);
    }
    for (auto& th : pool) th.join();
  }

  BootstrapReport rep;
  rep.n_samples = opts.n_samples;
  rep.seed = opts.seed;
  rep.models = full.models;
  std::vector<std::vector<double>> kept;
  for (auto& s : samples) {
    if (s) {
      kept.push_back(std::move(*s));
    } else {
      ++rep.skipped;
    }
  }
  if (kept.empty()) {
    throw Error(ErrorKind::bootstrap_failure, "all " + std::to_string(opts.n_samples) +
                                                  " resamples lacked a unique fit (comparison graph not strongly "
                                                  "connected within any resample)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> d;
      d.reserve(kept.size());
      for (const auto& r : kept) d.push_back(r[i] - r[j]);
      std::sort(d.begin(), d.end());
      const Interval ci{quantile_sorted(d, 0.025), quantile_sorted(d, 0.975)};
      rep.pairwise_diff_ci[{full.models[i], full.models[j]}] = ci;
      rep.pairwise_diff_ci[{full.models[j], full.models[i]}] = Interval{-ci.hi, -ci.lo};
    }
  }
  return rep;
}

// ---- Report -------------------------------------------------------------

struct RatingRow {
  std::string model;
  double rating = 0.0;
  std::optional<Interval> diff_from_best;
};

inline std::vector<RatingRow> rating_rows(const RatingTable& table, const BootstrapReport* report = nullptr) {
  std::vector<RatingRow> rows;
  for (const auto& [m, r] : table.ratings) rows.push_back({m, r, std::nullopt});
  std::stable_sort(rows.begin(), rows.end(), [](const RatingRow& a, const RatingRow& b) { return a.rating > b.rating; });
  if (report != nullptr && !report->pairwise_diff_ci.empty() && !rows.empty()) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto it = report->pairwise_diff_ci.find({rows[i].model, rows[0].model});
      if (it == report->pairwise_diff_ci.end()) {
        throw Error(ErrorKind::invalid_input, "bootstrap report lacks model " + rows[i].model);
      }
      rows[i].diff_from_best = it->second;
    }
  }
  return rows;
}

inline Json rating_report_json(const RatingTable& table, const BootstrapReport* report = nullptr) {
  Json rows = Json::array();
  for (const auto& r : rating_rows(table, report)) {
    Json row{{"model", r.model}, {"rating", r.rating}};
    row["diff_from_best_ci"] =
        r.diff_from_best ? Json{{"lo", r.diff_from_best->lo}, {"hi", r.diff_from_best->hi}} : Json(nullptr);
    rows.push_back(row);
  }
  Json j{{"fit", to_json_value(table)}, {"rows", rows}};
  if (report != nullptr) j["bootstrap"] = to_json_value(*report);
  return j;
}

inline std::string rating_report(const RatingTable& table, const BootstrapReport* report = nullptr) {
  const auto rows = rating_rows(table, report);
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.model.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Model" << std::right << std::setw(10) << "Elo";
  if (report != nullptr) out << "   95% CI of difference from best";
  out << '\n' << std::fixed << std::setprecision(1);
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.model << std::right << std::setw(10) << r.rating;
    if (r.diff_from_best) out << "   [" << r.diff_from_best->lo << ", " << r.diff_from_best->hi << "]";
    out << '\n';
  }
  return out.str();
}

}  // namespace revchain
