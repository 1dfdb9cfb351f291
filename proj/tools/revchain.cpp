// revchain: command-line driver for the feedback-to-preference-data pipeline.

#include <csignal>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <revchain/annotation.hpp>
#include <revchain/chain.hpp>
#include <revchain/config.hpp>
#include <revchain/corpus.hpp>
#include <revchain/elo.hpp>
#include <revchain/endpoint.hpp>
#include <revchain/jsonl.hpp>
#include <revchain/losses.hpp>
#include <revchain/pairs.hpp>
#include <revchain/pipeline.hpp>
#include <revchain/server.hpp>
#include <revchain/store.hpp>

using namespace revchain;

namespace {

struct Globals {
  std::string config_path;
  std::string endpoint;
  Config config;

  void load() {
    if (!config_path.empty()) config = Config::load(config_path);
    if (!endpoint.empty()) config.set("endpoint.url", endpoint);
  }
  std::shared_ptr<GenerationClient> client() const { return make_client(EndpointConfig::from_config(config)); }
};

template <typename T>
std::vector<T> read_rows(const std::string& path, const char* what) {
  std::vector<T> out;
  std::size_t line = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(row.get<T>());
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::schema_error, std::string(what) + " line " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
std::string rows_jsonl(const std::vector<T>& xs) {
  std::vector<Json> rows(xs.begin(), xs.end());
  return to_jsonl(rows);
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    write_file(path, content);
  }
}

struct CorpusSource {
  std::string annotations;
  std::string documents;
  std::string queries;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--annotations", annotations, "Annotation bundle (JSONL); supplies documents and queries");
    cmd->add_option("--documents", documents, "Documents JSONL");
    cmd->add_option("--queries", queries, "Queries JSONL");
  }

  Corpus load() const {
    Corpus c;
    if (!annotations.empty()) c = corpus_from_bundle(parse_annotation_bundle(read_file(annotations)));
    if (!documents.empty()) {
      for (auto& d : read_rows<SourceDocument>(documents, "documents")) c.add(std::move(d));
    }
    if (!queries.empty()) {
      for (auto& q : read_rows<Query>(queries, "queries")) c.add(std::move(q));
    }
    if (annotations.empty() && (documents.empty() || queries.empty())) {
      throw Error(ErrorKind::config_error, "need --annotations, or both --documents and --queries");
    }
    return c;
  }
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

AnnotationServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span-level feedback to improvement chains, preference pairs and ratings"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "TOML-style configuration file");
  app.add_option("--endpoint", g.endpoint, "Generation endpoint URL, or 'mock' for the offline model");

  // gen-queries
  std::string gq_docs, gq_out = "-", gq_model;
  auto* gen_queries = app.add_subcommand("gen-queries", "Generate five queries per document");
  gen_queries->add_option("--documents", gq_docs, "Documents JSONL")->required();
  gen_queries->add_option("--out", gq_out, "Output queries JSONL");
  gen_queries->add_option("--model", gq_model, "Generator model tag");

  // gen-responses
  std::string gr_docs, gr_queries, gr_out = "-", gr_items, gr_model;
  int gr_n = 2;
  SamplingConfig gr_sampling;
  auto* gen_responses = app.add_subcommand("gen-responses", "Sample responses for every query");
  gen_responses->add_option("--documents", gr_docs, "Documents JSONL")->required();
  gen_responses->add_option("--queries", gr_queries, "Queries JSONL")->required();
  gen_responses->add_option("--out", gr_out, "Output responses JSONL");
  gen_responses->add_option("--items-out", gr_items, "Also write annotation items pairing the first two responses");
  gen_responses->add_option("--n", gr_n, "Responses per query")->check(CLI::PositiveNumber);
  gen_responses->add_option("--model", gr_model, "Generator model tag");
  gen_responses->add_option("--temperature", gr_sampling.temperature, "Sampling temperature");
  gen_responses->add_option("--top-p", gr_sampling.top_p, "Nucleus sampling mass");

  // serve
  std::string sv_items, sv_dir, sv_annotators, sv_host = "127.0.0.1";
  int sv_port = 8080;
  double sv_expiry_hours = 24;
  std::size_t sv_snapshot = 100;
  auto* serve = app.add_subcommand("serve", "Serve annotation items and pipeline runs over HTTP");
  serve->add_option("--items", sv_items, "Annotation items JSONL");
  serve->add_option("--data-dir", sv_dir, "Directory for the event log, snapshots and runs");
  serve->add_option("--annotators", sv_annotators, "Comma-separated registered annotator ids");
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port");
  serve->add_option("--claim-expiry-hours", sv_expiry_hours, "Hours before an unfinished claim can be reassigned");
  serve->add_option("--snapshot-every", sv_snapshot, "Write a snapshot every N events");

  // build-chains
  std::string bc_annotations, bc_out = "-", bc_failures, bc_model;
  int bc_attempts = 0;
  auto* build = app.add_subcommand("build-chains", "Rewrite disliked spans one at a time into improvement chains");
  build->add_option("--annotations", bc_annotations, "Annotation bundle JSONL")->required();
  build->add_option("--out", bc_out, "Output chains JSONL");
  build->add_option("--failures", bc_failures, "Write chain failures JSONL here");
  build->add_option("--model", bc_model, "Rewriter model tag");
  build->add_option("--max-attempts", bc_attempts, "Regeneration budget per response");

  // make-pairs
  std::string mp_annotations, mp_chains, mp_strategy = "all", mp_out = "-";
  std::uint64_t mp_seed = 0;
  auto* make = app.add_subcommand("make-pairs", "Construct preference pairs");
  make->add_option("--annotations", mp_annotations, "Annotation bundle JSONL (for A/B pairs)");
  make->add_option("--chains", mp_chains, "Chains JSONL");
  make->add_option("--strategy", mp_strategy,
                   "ab, first_edit, full_rewrite, stepwise, stepwise_downsampled, or all");
  make->add_option("--seed", mp_seed, "Seed for stepwise downsampling");
  make->add_option("--out", mp_out, "Output pair set JSONL");

  // export
  std::string ex_pairs, ex_format = "preference", ex_out = "-", ex_strategy;
  CorpusSource ex_corpus;
  auto* exporter = app.add_subcommand("export", "Write trainer-facing JSONL");
  exporter->add_option("--pairs", ex_pairs, "Pair set JSONL")->required();
  exporter->add_option("--format", ex_format, "preference or sft")->check(CLI::IsMember({"preference", "sft"}));
  exporter->add_option("--strategy", ex_strategy, "Only export pairs of this strategy");
  exporter->add_option("--out", ex_out, "Output file");
  ex_corpus.add_to(exporter);

  // score-pairs
  std::string sp_pairs, sp_policy, sp_reference, sp_out;
  bool sp_normalize = false;
  LossConfig sp_loss;
  CorpusSource sp_corpus;
  auto* score = app.add_subcommand("score-pairs", "Score pairs under policy and reference models; report losses");
  score->add_option("--pairs", sp_pairs, "Pair set JSONL")->required();
  score->add_option("--policy", sp_policy, "Policy model tag");
  score->add_option("--reference", sp_reference, "Reference model tag");
  score->add_option("--out", sp_out, "Write one log-probability quad per pair here");
  score->add_flag("--length-normalize", sp_normalize, "Divide log-probabilities by whitespace token count");
  score->add_option("--beta", sp_loss.beta, "Loss temperature");
  score->add_option("--lambda", sp_loss.lambda_dpop, "DPO-Positive penalty weight");
  sp_corpus.add_to(score);

  // fit-elo
  std::string fe_comparisons, fe_format = "table";
  BootstrapOptions fe_boot;
  fe_boot.n_samples = 0;
  double fe_anchor = -1e300;
  auto* fit = app.add_subcommand("fit-elo", "Fit Bradley-Terry ratings with bootstrap intervals");
  fit->add_option("--comparisons", fe_comparisons, "Comparison records JSONL")->required();
  fit->add_option("--n-samples", fe_boot.n_samples, "Bootstrap resamples (0 = from config, default 1000)");
  fit->add_option("--seed", fe_boot.seed, "Bootstrap seed");
  fit->add_option("--threads", fe_boot.threads, "Worker threads");
  fit->add_option("--anchor", fe_anchor, "Mean rating");
  fit->add_option("--format", fe_format, "table or json")->check(CLI::IsMember({"table", "json"}));

  // stats
  std::string st_annotations, st_format = "table";
  auto* stats = app.add_subcommand("stats", "Annotation statistics per domain");
  stats->add_option("--annotations", st_annotations, "Annotation bundle JSONL")->required();
  stats->add_option("--format", st_format, "table or json")->check(CLI::IsMember({"table", "json"}));

  // run
  std::string rn_annotations, rn_out;
  std::uint64_t rn_seed = 0;
  bool rn_seed_set = false;
  auto* run = app.add_subcommand("run", "Chains, pairs and exports in one batch, with a manifest");
  run->add_option("--annotations", rn_annotations, "Annotation bundle JSONL")->required();
  run->add_option("--out-dir", rn_out, "Output directory")->required();
  run->add_option("--seed", rn_seed, "Downsampling seed")->each([&](const std::string&) { rn_seed_set = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    g.load();
    const auto& cfg = g.config;

    if (*gen_queries) {
      auto client = g.client();
      const auto model = gq_model.empty() ? cfg.get<std::string>("models.generator", "llama-3.1-8b-instruct") : gq_model;
      std::vector<Query> all;
      for (const auto& d : read_rows<SourceDocument>(gq_docs, "documents")) {
        for (auto& q : generate_queries(*client, d, model)) all.push_back(std::move(q));
      }
      emit(gq_out, rows_jsonl(all));
    } else if (*gen_responses) {
      auto client = g.client();
      const auto model = gr_model.empty() ? cfg.get<std::string>("models.generator", "llama-3.1-8b-instruct") : gr_model;
      Corpus corpus;
      for (auto& d : read_rows<SourceDocument>(gr_docs, "documents")) corpus.add(std::move(d));
      std::vector<ResponseSample> all;
      std::vector<AnnotationItem> items;
      for (const auto& q : read_rows<Query>(gr_queries, "queries")) {
        const auto& doc = corpus.document(q.document_id);
        auto rs = sample_responses(*client, assemble_response_prompt(doc, q), gr_n, gr_sampling, model, q.id);
        if (rs.size() >= 2) items.push_back(AnnotationItem{q.id, q, doc, rs[0], rs[1], ItemStatus::pending});
        for (auto& r : rs) all.push_back(std::move(r));
      }
      emit(gr_out, rows_jsonl(all));
      if (!gr_items.empty()) write_file(gr_items, rows_jsonl(items));
    } else if (*serve) {
      StoreOptions opts;
      const auto items_path = sv_items.empty() ? cfg.require<std::string>("service.items") : sv_items;
      opts.data_dir = sv_dir.empty() ? cfg.get<std::string>("service.data_dir", "revchain-data") : sv_dir;
      for (const auto& a : sv_annotators.empty() ? cfg.get<std::vector<std::string>>("service.annotators", {})
                                                 : split_csv(sv_annotators)) {
        opts.annotators.insert(a);
      }
      if (opts.annotators.empty()) throw Error(ErrorKind::config_error, "no annotators registered");
      if (!serve->count("--claim-expiry-hours")) {
        sv_expiry_hours = cfg.get<double>("service.claim_expiry_hours", sv_expiry_hours);
      }
      opts.claim_expiry_seconds = sv_expiry_hours * 3600.0;
      opts.snapshot_every = serve->count("--snapshot-every")
                                ? sv_snapshot
                                : cfg.get<std::size_t>("service.snapshot_every", sv_snapshot);
      const auto data_dir = opts.data_dir;
      AnnotationStore store(read_rows<AnnotationItem>(items_path, "items"), std::move(opts));
      const auto endpoint = EndpointConfig::from_config(cfg);
      RunManager runs(data_dir / "runs", [endpoint] { return make_client(endpoint); });
      AnnotationServer server(store, runs);
      if (!serve->count("--port")) sv_port = cfg.get<int>("service.port", sv_port);
      if (!serve->count("--host")) sv_host = cfg.get<std::string>("service.host", sv_host);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving " << store.item_count() << " items on http://" << sv_host << ":" << sv_port << "\n";
      server.listen(sv_host, sv_port);
      g_server = nullptr;
    } else if (*build) {
      auto client = g.client();
      auto pc = PipelineConfig::from_config(cfg);
      if (!bc_model.empty()) pc.rewriter_model = bc_model;
      if (bc_attempts > 0) pc.max_attempts = bc_attempts;
      const auto built = build_chains(*client, parse_annotation_bundle(read_file(bc_annotations)), pc);
      emit(bc_out, chains_jsonl(built.chains));
      if (!bc_failures.empty()) {
        std::vector<Json> rows;
        for (const auto& f : built.failures) rows.push_back(to_json_value(f));
        write_file(bc_failures, to_jsonl(rows));
      }
      std::cerr << built.chains.size() << " chains, " << built.failures.size() << " failures, " << built.zero_dislike
                << " responses without dislikes\n";
    } else if (*make) {
      std::vector<FinalizedItem> items;
      if (!mp_annotations.empty()) items = parse_annotation_bundle(read_file(mp_annotations));
      std::vector<ImprovementChain> chains;
      if (!mp_chains.empty()) chains = parse_chains_jsonl(read_file(mp_chains));
      PairSet set;
      if (mp_strategy == "all") {
        set = all_pairs(items, chains, mp_seed);
      } else {
        const auto s = parse_strategy(mp_strategy);
        if (s == Strategy::ab) {
          set.pairs = ab_pairs(items);
        } else {
          set = make_pairs(chains, s, mp_seed);
        }
        set.seed = mp_seed;
      }
      emit(mp_out, pairset_to_jsonl(set));
      std::cerr << counts_json(set).dump() << "\n";
    } else if (*exporter) {
      auto set = pairset_from_jsonl(read_file(ex_pairs));
      if (!ex_strategy.empty()) set = only(set, parse_strategy(ex_strategy));
      const auto corpus = ex_corpus.load();
      if (ex_format == "sft") {
        if (ex_strategy.empty()) set = only(set, Strategy::full_rewrite);
        emit(ex_out, sft_jsonl(set, corpus));
      } else {
        emit(ex_out, preference_jsonl(set, corpus));
      }
    } else if (*score) {
      auto client = g.client();
      const auto set = pairset_from_jsonl(read_file(sp_pairs));
      const auto policy = sp_policy.empty() ? cfg.get<std::string>("models.policy", "") : sp_policy;
      const auto reference = sp_reference.empty() ? cfg.get<std::string>("models.reference", "") : sp_reference;
      const auto quads = score_pairs(*client, set, sp_corpus.load(), policy, reference, {sp_normalize});
      if (!sp_out.empty()) write_file(sp_out, rows_jsonl(quads));
      std::cout << loss_report(set, quads, sp_loss).dump(2) << "\n";
    } else if (*fit) {
      const auto records = read_rows<ComparisonRecord>(fe_comparisons, "comparisons");
      if (fe_boot.n_samples == 0) fe_boot.n_samples = cfg.get<std::size_t>("elo.n_samples", 1000);
      if (!fit->count("--seed")) fe_boot.seed = cfg.get<std::uint64_t>("elo.seed", 0);
      fe_boot.fit.anchor = fit->count("--anchor") ? fe_anchor : cfg.get<double>("elo.anchor", 1500.0);
      const auto table = fit_bt(records, fe_boot.fit);
      const auto rep = bootstrap_ci(records, fe_boot);
      if (fe_format == "json") {
        std::cout << rating_report_json(table, &rep).dump(2) << "\n";
      } else {
        std::cout << rating_report(table, &rep);
        if (rep.skipped > 0) std::cout << rep.skipped << " of " << rep.n_samples << " resamples had no unique fit\n";
      }
    } else if (*stats) {
      std::vector<ValidatedRecord> recs;
      for (const auto& it : parse_annotation_bundle(read_file(st_annotations))) {
        recs.push_back(it.record_a);
        recs.push_back(it.record_b);
      }
      const auto s = compute_stats(recs);
      if (st_format == "json") {
        std::cout << stats_to_json(s).dump(2) << "\n";
      } else {
        std::cout << stats_table(s);
      }
    } else if (*run) {
      auto client = g.client();
      auto pc = PipelineConfig::from_config(cfg);
      pc.output_dir = rn_out;
      if (rn_seed_set) pc.seed = rn_seed;
      const auto m = run_pipeline(parse_annotation_bundle(read_file(rn_annotations)), pc, *client);
      std::cout << to_json_value(m).dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
