// styleproto — retrieval-guided stylistic dialogue generation, end to end:
// corpus synthesis, lexicon extraction, retrieval indexing, training-data
// preparation, training, decoding, and evaluation. Every subcommand records
// a run manifest (resolved config, input digests, output paths) so artifacts
// stay traceable; identical invocations produce byte-identical artifacts.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "styleproto/common.hpp"
#include "styleproto/corpus.hpp"
#include "styleproto/evaluation.hpp"
#include "styleproto/generation.hpp"
#include "styleproto/lexicon.hpp"
#include "styleproto/manifest.hpp"
#include "styleproto/model.hpp"
#include "styleproto/prototype.hpp"
#include "styleproto/retrieval.hpp"
#include "styleproto/training.hpp"

namespace sp = styleproto;
using nlohmann::json;

namespace {

int g_exit = 0;

std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// decode flags shared by generate/chat/eval/xeval
struct DecodeFlags {
  std::string mode = "greedy";
  int k = 10;
  double temperature = 1.0;
  int max_len = 32;
};

void add_decode_flags(CLI::App* sc, DecodeFlags& d) {
  sc->add_option("--mode", d.mode, "decoding mode: greedy or top-k")
      ->capture_default_str();
  sc->add_option("--k", d.k, "candidate pool size for top-k sampling")
      ->capture_default_str();
  sc->add_option("--temperature", d.temperature, "sampling temperature")
      ->capture_default_str();
  sc->add_option("--max-len", d.max_len, "maximum response length in tokens")
      ->capture_default_str();
}

sp::GenerationConfig make_gen_config(const DecodeFlags& d, uint64_t seed) {
  sp::GenerationConfig cfg;
  cfg.mode = sp::decode_mode_from_name(d.mode);
  cfg.k = d.k;
  cfg.temperature = d.temperature;
  cfg.max_len = d.max_len;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

json gen_config_json(const sp::GenerationConfig& cfg) {
  return json{{"mode", sp::decode_mode_name(cfg.mode)},
              {"k", cfg.k},
              {"temperature", cfg.temperature},
              {"max_len", cfg.max_len},
              {"seed", cfg.seed}};
}

// trained-pipeline file set shared by generate/chat/eval/xeval
struct PipelineArgs {
  std::string ckpt, index, lexicon, vocab, styles;
};

void add_pipeline_flags(CLI::App* sc, PipelineArgs& a) {
  sc->add_option("--ckpt", a.ckpt, "model checkpoint")->required();
  sc->add_option("--index", a.index, "retrieval index file")->required();
  sc->add_option("--lexicon", a.lexicon, "stylistic lexicon file")->required();
  sc->add_option("--vocab", a.vocab, "vocabulary file")->required();
  sc->add_option("--styles", a.styles, "style table file")->required();
}

struct Pipeline {
  sp::Checkpoint ckpt;
  sp::RetrievalIndex index;
  sp::StyleLexicon lexicon;
  std::vector<std::string> lexicon_labels;
  sp::Vocab vocab;
  sp::StyleTable styles;
};

Pipeline load_pipeline(const PipelineArgs& a) {
  Pipeline p{sp::load_checkpoint(a.ckpt),
             sp::RetrievalIndex::load(a.index),
             {},
             {},
             sp::Vocab::load(a.vocab),
             sp::StyleTable::load(a.styles)};
  std::tie(p.lexicon, p.lexicon_labels) = sp::StyleLexicon::load(a.lexicon);
  const sp::ModelConfig& mc = p.ckpt.params.config;
  if (mc.vocab_size != p.vocab.size())
    throw std::runtime_error("checkpoint vocab_size " +
                             std::to_string(mc.vocab_size) +
                             " does not match vocabulary size " +
                             std::to_string(p.vocab.size()));
  if (mc.n_styles != p.styles.size())
    throw std::runtime_error("checkpoint n_styles " +
                             std::to_string(mc.n_styles) +
                             " does not match style table size " +
                             std::to_string(p.styles.size()));
  const auto& subset = p.lexicon.styles();
  for (size_t i = 0; i < subset.size(); ++i) {
    if (p.styles.id_of(p.lexicon_labels[i]) != subset[i])
      throw std::runtime_error("lexicon style '" + p.lexicon_labels[i] +
                               "' does not line up with the style table");
  }
  return p;
}

void manifest_out(const sp::RunManifest& m, const std::string& path) {
  // path empty: no file artifact to pair with, so the manifest goes to stdout
  if (path.empty())
    std::cout << "manifest: " << json::parse(m.to_json()).dump() << "\n";
  else
    m.write(path);
}

sp::StyleId resolve_style(const sp::StyleTable& styles,
                          const std::string& label) {
  sp::StyleId id = styles.id_of(label);
  if (id < 0) throw std::runtime_error("unknown style '" + label + "'");
  return id;
}

// ---------------------------------------------------------------------------
// subcommands

void cmd_synth(const sp::SynthConfig& cfg, const std::string& out) {
  sp::Dataset data = sp::gen_synthetic(cfg);
  sp::save_corpus(data, out);
  sp::RunManifest m;
  m.subcommand = "synth";
  m.seed = cfg.seed;
  m.config_json = json{{"n_pairs", cfg.n_pairs},
                       {"styles", cfg.styles},
                       {"markers_per_style", cfg.markers_per_style},
                       {"paired", cfg.paired},
                       {"content_words", cfg.content_words}}
                      .dump();
  m.add_output(out);
  m.write(out + ".manifest.json");
  std::cout << "wrote " << data.size() << " pairs to " << out << "\n";
}

void cmd_build_lexicon(const std::string& corpus, const std::string& out,
                       double ratio, int64_t min_count, bool include_neutral,
                       uint64_t seed) {
  sp::Dataset data = sp::load_corpus(corpus);
  sp::StyleCounts counts = sp::count_statistics(data);
  auto subset = sp::default_style_subset(data.styles, include_neutral);
  sp::StyleLexicon lex = sp::StyleLexicon::build(counts, subset, ratio, min_count);
  lex.save(out, data.styles);

  sp::RunManifest m;
  m.subcommand = "build-lexicon";
  m.seed = seed;
  m.config_json = json{{"ratio", ratio},
                       {"min_count", min_count},
                       {"include_neutral", include_neutral}}
                      .dump();
  m.add_input(corpus);
  m.add_output(out);
  m.write(out + ".manifest.json");

  for (sp::StyleId s : lex.styles())
    std::cout << "style " << data.styles.label(s) << ": threshold "
              << lex.threshold(s) << ", " << lex.entries(s).size()
              << " words\n";
  std::cout << "union: " << lex.union_sorted().size() << " words, wrote "
            << out << "\n";
}

void cmd_index(const std::string& corpus, const std::string& out,
               uint64_t seed) {
  sp::Dataset data = sp::load_corpus(corpus);
  sp::RetrievalIndex index = sp::RetrievalIndex::build(data);
  index.save(out);

  sp::RunManifest m;
  m.subcommand = "index";
  m.seed = seed;
  m.config_json = "{}";
  m.add_input(corpus);
  m.add_output(out);
  m.write(out + ".manifest.json");
  std::cout << "indexed " << index.size() << " pairs into " << out << "\n";
}

void cmd_prepare(const std::string& corpus, const std::string& lexicon_path,
                 const std::string& out_dir, size_t vocab_cap, int max_seq_len,
                 double corruption_rate, double mask_prob, uint64_t seed) {
  sp::Dataset data = sp::load_corpus(corpus);
  auto [lex, labels] = sp::StyleLexicon::load(lexicon_path);
  sp::Vocab vocab = sp::Vocab::build(data, vocab_cap);

  sp::ModelConfig mc;
  mc.max_seq_len = max_seq_len;
  mc.vocab_size = vocab.size();
  mc.n_styles = data.styles.size();
  sp::TrainConfig tc;
  tc.seed = seed;
  tc.corruption_rate = corruption_rate;
  tc.mask_prob = mask_prob;

  std::vector<size_t> indices(data.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  auto batch = sp::make_batch(data, indices, lex, vocab, mc, tc, /*epoch=*/0);

  std::filesystem::create_directories(out_dir);
  std::string rows;
  for (const auto& ex : batch) {
    json row{{"query", vocab.decode(ex.query_ids)},
             {"prototype", vocab.decode(ex.proto_ids)},
             {"response", vocab.decode(ex.response_ids)},
             {"style", data.styles.label(ex.style)},
             {"sv", std::vector<int>(ex.response_sv.begin(),
                                     ex.response_sv.end())}};
    rows += row.dump() + "\n";
  }
  sp::write_file(out_dir + "/examples.jsonl", rows);
  vocab.save(out_dir + "/vocab.json");
  data.styles.save(out_dir + "/styles.json");

  sp::RunManifest m;
  m.subcommand = "prepare";
  m.seed = seed;
  m.config_json = json{{"vocab_cap", vocab_cap},
                       {"max_seq_len", max_seq_len},
                       {"corruption_rate", corruption_rate},
                       {"mask_prob", mask_prob}}
                      .dump();
  m.add_input(corpus);
  m.add_input(lexicon_path);
  m.add_output(out_dir + "/examples.jsonl");
  m.add_output(out_dir + "/vocab.json");
  m.add_output(out_dir + "/styles.json");
  m.write(out_dir + "/manifest.json");
  std::cout << "prepared " << batch.size() << " examples in " << out_dir
            << " (vocab " << vocab.size() << ")\n";
}

struct TrainCli {
  std::string corpus, lexicon, out_dir, vocab_path, preset, config_path, resume;
  size_t vocab_cap = 20000;
  uint64_t seed = 0;
};

void cmd_train(const TrainCli& a, CLI::App* sc, sp::ModelConfig mcfg,
               sp::TrainConfig tcfg) {
  // flags win over the config file / preset
  auto override_d = [&](const char* flag, double& dst) {
    if (sc->count(flag)) dst = sc->get_option(flag)->as<double>();
  };
  auto override_i = [&](const char* flag, int& dst) {
    if (sc->count(flag)) dst = sc->get_option(flag)->as<int>();
  };
  override_d("--lr", tcfg.lr);
  override_i("--batch-size", tcfg.batch_size);
  override_i("--epochs", tcfg.epochs);
  override_d("--alpha", tcfg.alpha);
  override_d("--beta", tcfg.beta);
  override_d("--corruption-rate", tcfg.corruption_rate);
  override_d("--mask-prob", tcfg.mask_prob);
  override_d("--grad-clip", tcfg.grad_clip);
  if (sc->count("--max-steps"))
    tcfg.max_steps = sc->get_option("--max-steps")->as<uint64_t>();
  override_i("--warmup-epochs", tcfg.warmup_epochs);
  if (sc->count("--style-specific-weighting")) tcfg.style_specific_weighting = true;
  override_i("--layers", mcfg.n_layers);
  override_i("--dim", mcfg.model_dim);
  override_i("--heads", mcfg.n_heads);
  override_i("--ff-dim", mcfg.ff_dim);
  override_i("--max-seq-len", mcfg.max_seq_len);
  override_d("--dropout", mcfg.dropout);
  override_d("--init-std", mcfg.init_std);
  tcfg.seed = a.seed;

  sp::Dataset data = sp::load_corpus(a.corpus);
  auto [lex, labels] = sp::StyleLexicon::load(a.lexicon);
  for (size_t i = 0; i < lex.styles().size(); ++i) {
    if (data.styles.id_of(labels[i]) != lex.styles()[i])
      throw std::runtime_error("lexicon style '" + labels[i] +
                               "' does not line up with the corpus styles");
  }
  sp::Vocab vocab = a.vocab_path.empty() ? sp::Vocab::build(data, a.vocab_cap)
                                         : sp::Vocab::load(a.vocab_path);
  mcfg.vocab_size = vocab.size();
  mcfg.n_styles = data.styles.size();

  sp::Checkpoint resume;
  if (!a.resume.empty()) resume = sp::load_checkpoint(a.resume);

  sp::TrainOutput out =
      sp::train(data, tcfg, mcfg, lex, vocab, a.out_dir,
                a.resume.empty() ? nullptr : &resume);

  vocab.save(a.out_dir + "/vocab.json");
  data.styles.save(a.out_dir + "/styles.json");

  sp::RunManifest m;
  m.subcommand = "train";
  m.seed = tcfg.seed;
  m.config_json = sp::combined_config_to_json(mcfg, tcfg);
  m.add_input(a.corpus);
  m.add_input(a.lexicon);
  if (!a.vocab_path.empty()) m.add_input(a.vocab_path);
  if (!a.resume.empty()) m.add_input(a.resume);
  uint64_t first_epoch = a.resume.empty() ? 1 : resume.epochs_completed + 1;
  for (uint64_t e = first_epoch; e <= out.epochs_completed; ++e)
    m.add_output(a.out_dir + "/epoch-" + std::to_string(e) + ".ckpt");
  m.add_output(a.out_dir + "/final.ckpt");
  m.add_output(a.out_dir + "/loss.csv");
  m.add_output(a.out_dir + "/vocab.json");
  m.add_output(a.out_dir + "/styles.json");
  m.write(a.out_dir + "/manifest.json");

  if (out.log.empty()) {
    std::cout << "no steps run (already at the requested epoch/step budget)\n";
  } else {
    const sp::LossRow& last = out.log.back();
    std::printf("trained %" PRIu64 " steps (%" PRIu64
                " epochs); final loss %.6g (s-mle %.6g, lm %.6g)\n",
                last.step, out.epochs_completed, last.total, last.s_mle,
                last.lm);
  }
  std::cout << "wrote " << a.out_dir << "/final.ckpt\n";
}

void cmd_generate(const PipelineArgs& pa, const std::string& style_label,
                  const std::string& query, const DecodeFlags& d,
                  uint64_t seed, const std::string& out) {
  Pipeline p = load_pipeline(pa);
  sp::GenerationConfig cfg = make_gen_config(d, seed);
  sp::StyleId style = resolve_style(p.styles, style_label);
  std::vector<std::string> query_tokens = split_tokens(query);
  if (query_tokens.empty()) throw std::runtime_error("empty query");

  sp::PsResponse r = sp::ps_respond(p.index, p.lexicon, p.ckpt.params, p.vocab,
                                    query_tokens, style, cfg);
  std::cout << "retrieved: " << join_tokens(r.retrieved) << "\n"
            << "prototype: " << join_tokens(r.prototype) << "\n"
            << "response: " << join_tokens(r.response) << "\n";

  sp::RunManifest m;
  m.subcommand = "generate";
  m.seed = seed;
  json cfg_json = gen_config_json(cfg);
  cfg_json["style"] = style_label;
  cfg_json["query"] = query_tokens;
  m.config_json = cfg_json.dump();
  m.add_input(pa.ckpt);
  m.add_input(pa.index);
  m.add_input(pa.lexicon);
  m.add_input(pa.vocab);
  m.add_input(pa.styles);
  if (!out.empty()) {
    json doc{{"query", query_tokens},
             {"style", style_label},
             {"retrieved", r.retrieved},
             {"prototype", r.prototype},
             {"response", r.response}};
    sp::write_file(out, doc.dump(2) + "\n");
    m.add_output(out);
    manifest_out(m, out + ".manifest.json");
  } else {
    manifest_out(m, "");
  }
}

void cmd_chat(const PipelineArgs& pa, const DecodeFlags& d, uint64_t seed) {
  Pipeline p = load_pipeline(pa);
  sp::GenerationConfig base = make_gen_config(d, seed);

  std::string style_line, query_line;
  uint64_t turn = 0;
  while (std::getline(std::cin, style_line)) {
    if (!std::getline(std::cin, query_line)) break;
    sp::StyleId style = p.styles.id_of(style_line);
    if (style < 0) {
      std::cerr << "error: unknown style '" << style_line << "'\n";
      ++turn;
      continue;
    }
    std::vector<std::string> query_tokens = split_tokens(query_line);
    if (query_tokens.empty()) {
      std::cerr << "error: empty query\n";
      ++turn;
      continue;
    }
    sp::GenerationConfig cfg = base;
    cfg.seed = sp::mix_seed(seed, "chat", turn);
    sp::PsResponse r = sp::ps_respond(p.index, p.lexicon, p.ckpt.params,
                                      p.vocab, query_tokens, style, cfg);
    std::cout << "retrieved: " << join_tokens(r.retrieved) << "\n"
              << "prototype: " << join_tokens(r.prototype) << "\n"
              << "response: " << join_tokens(r.response) << "\n\n"
              << std::flush;
    ++turn;
  }

  sp::RunManifest m;
  m.subcommand = "chat";
  m.seed = seed;
  json cfg_json = gen_config_json(base);
  cfg_json["turns"] = turn;
  m.config_json = cfg_json.dump();
  m.add_input(pa.ckpt);
  m.add_input(pa.index);
  m.add_input(pa.lexicon);
  m.add_input(pa.vocab);
  m.add_input(pa.styles);
  manifest_out(m, "");
}

void cmd_eval(const char* name, const PipelineArgs& pa, const std::string& test,
              const std::string& out_prefix, const DecodeFlags& d,
              uint64_t seed) {
  Pipeline p = load_pipeline(pa);
  sp::GenerationConfig cfg = make_gen_config(d, seed);
  // cross-domain test sets may carry labels the model never saw; load the
  // corpus with its own label registration, not the model's table
  sp::Dataset test_set = sp::load_corpus(test);
  const bool cross = std::string(name) == "xeval";
  sp::EvalReport report =
      cross ? sp::cross_domain_eval(p.ckpt.params, test_set, p.index, p.lexicon,
                                    p.vocab, p.styles, cfg,
                                    sp::file_digest(pa.ckpt),
                                    sp::file_digest(test))
            : sp::evaluate(p.ckpt.params, test_set, p.index, p.lexicon, p.vocab,
                           p.styles, cfg, sp::file_digest(pa.ckpt),
                           sp::file_digest(test));

  sp::write_file(out_prefix + ".json", sp::eval_report_to_json(report));
  sp::write_file(out_prefix + ".txt", sp::eval_report_to_text(report));
  sp::write_file(out_prefix + ".records.jsonl",
                 sp::gen_records_to_jsonl(report.records));

  sp::RunManifest m;
  m.subcommand = name;
  m.seed = seed;
  m.config_json = gen_config_json(cfg).dump();
  m.add_input(pa.ckpt);
  m.add_input(pa.index);
  m.add_input(pa.lexicon);
  m.add_input(pa.vocab);
  m.add_input(pa.styles);
  m.add_input(test);
  m.add_output(out_prefix + ".json");
  m.add_output(out_prefix + ".txt");
  m.add_output(out_prefix + ".records.jsonl");
  m.write(out_prefix + ".manifest.json");

  std::cout << sp::eval_report_to_text(report);
}

void cmd_gradcheck(const sp::ModelConfig& cfg, uint64_t seed, double epsilon,
                   double alpha, double beta, double threshold) {
  sp::GradCheckReport report = sp::grad_check(cfg, seed, epsilon, alpha, beta);
  for (const auto& a : report.per_array)
    std::printf("%-24s %.3e\n", a.name.c_str(), a.max_rel_err);
  std::printf("max relative error: %.3e\n", report.max_rel_err);

  sp::RunManifest m;
  m.subcommand = "gradcheck";
  m.seed = seed;
  m.config_json = json{{"config", json::parse(sp::model_config_to_json(cfg))},
                       {"epsilon", epsilon},
                       {"alpha", alpha},
                       {"beta", beta},
                       {"threshold", threshold}}
                      .dump();
  manifest_out(m, "");
  if (!(report.max_rel_err < threshold)) g_exit = 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototype-and-style dialogue generation pipeline"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  int threads = 0;
  app.add_option("--threads", threads,
                 "cap on OpenMP threads (0 = library default)")
      ->envname("STYLEPROTO_THREADS");
  auto apply_threads = [&threads]() {
    if (threads > 0) sp::set_thread_cap(threads);
  };

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->fallthrough();
  sp::SynthConfig synth_cfg;
  std::string synth_out;
  std::vector<std::string> synth_styles{"happy", "sad"};
  bool synth_paired = true;
  synth->add_option("--out", synth_out, "corpus JSONL path")->required();
  synth->add_option("--pairs", synth_cfg.n_pairs, "number of dialogue pairs")
      ->required();
  synth->add_option("--styles", synth_styles, "style labels")
      ->delimiter(',')
      ->capture_default_str();
  synth->add_option("--markers-per-style", synth_cfg.markers_per_style,
                    "distinct marker words per style")
      ->capture_default_str();
  synth->add_option("--content-words", synth_cfg.content_words,
                    "size of the shared content vocabulary")
      ->capture_default_str();
  synth->add_flag("--paired,!--unpaired", synth_paired,
                  "repeat each query once per style with shared content");
  synth->add_option("--seed", synth_cfg.seed, "random seed")
      ->capture_default_str();
  synth->callback([&]() {
    apply_threads();
    synth_cfg.styles = synth_styles;
    synth_cfg.paired = synth_paired;
    cmd_synth(synth_cfg, synth_out);
  });

  // --- build-lexicon ---------------------------------------------------------
  auto* blex = app.add_subcommand(
      "build-lexicon", "extract the PMI stylistic lexicon from a corpus");
  blex->fallthrough();
  std::string blex_corpus, blex_out = "lexicon.json";
  double blex_ratio = 0.75;
  int64_t blex_min_count = 1;
  bool blex_neutral = false;
  uint64_t blex_seed = 0;
  blex->add_option("--corpus", blex_corpus, "training corpus JSONL")->required();
  blex->add_option("--out", blex_out, "lexicon output path")
      ->capture_default_str();
  blex->add_option("--ratio", blex_ratio,
                   "threshold ratio of the per-style max PMI")
      ->capture_default_str();
  blex->add_option("--min-count", blex_min_count,
                   "minimum corpus count c(x) for lexicon words")
      ->capture_default_str();
  blex->add_flag("--include-neutral", blex_neutral,
                 "also build a vocabulary for the neutral-like style");
  blex->add_option("--seed", blex_seed, "random seed (recorded only)")
      ->capture_default_str();
  blex->callback([&]() {
    apply_threads();
    cmd_build_lexicon(blex_corpus, blex_out, blex_ratio, blex_min_count,
                      blex_neutral, blex_seed);
  });

  // --- index -----------------------------------------------------------------
  auto* idx = app.add_subcommand("index", "build the Jaccard retrieval index");
  idx->fallthrough();
  std::string idx_corpus, idx_out = "index.bin";
  uint64_t idx_seed = 0;
  idx->add_option("--corpus", idx_corpus, "training corpus JSONL")->required();
  idx->add_option("--out", idx_out, "index output path")->capture_default_str();
  idx->add_option("--seed", idx_seed, "random seed (recorded only)")
      ->capture_default_str();
  idx->callback([&]() {
    apply_threads();
    cmd_index(idx_corpus, idx_out, idx_seed);
  });

  // --- prepare ---------------------------------------------------------------
  auto* prep = app.add_subcommand(
      "prepare", "materialize de-noising training examples for audit");
  prep->fallthrough();
  std::string prep_corpus, prep_lexicon, prep_out;
  size_t prep_cap = 20000;
  int prep_max_seq = 128;
  double prep_rate = 0.4, prep_mask = 0.5;
  uint64_t prep_seed = 0;
  prep->add_option("--corpus", prep_corpus, "training corpus JSONL")->required();
  prep->add_option("--lexicon", prep_lexicon, "stylistic lexicon file")
      ->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--vocab-cap", prep_cap, "content vocabulary cap")
      ->capture_default_str();
  prep->add_option("--max-seq-len", prep_max_seq, "model context length")
      ->capture_default_str();
  prep->add_option("--corruption-rate", prep_rate,
                   "fraction of surviving prototype positions to alter")
      ->capture_default_str();
  prep->add_option("--mask-prob", prep_mask,
                   "MASK share among altered positions")
      ->capture_default_str();
  prep->add_option("--seed", prep_seed, "random seed")->capture_default_str();
  prep->callback([&]() {
    apply_threads();
    cmd_prepare(prep_corpus, prep_lexicon, prep_out, prep_cap, prep_max_seq,
                prep_rate, prep_mask, prep_seed);
  });

  // --- train -----------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train the style-conditioned model");
  tr->fallthrough();
  TrainCli tr_args;
  tr->add_option("--corpus", tr_args.corpus, "training corpus JSONL")
      ->required();
  tr->add_option("--lexicon", tr_args.lexicon, "stylistic lexicon file")
      ->required();
  tr->add_option("--out", tr_args.out_dir, "output directory")->required();
  tr->add_option("--vocab", tr_args.vocab_path,
                 "vocabulary file (default: built from the corpus)");
  tr->add_option("--vocab-cap", tr_args.vocab_cap,
                 "content vocabulary cap when building")
      ->capture_default_str();
  tr->add_option("--preset", tr_args.preset,
                 "hyperparameter preset: default or desk");
  tr->add_option("--config", tr_args.config_path,
                 "JSON config file (model plus training keys)");
  tr->add_option("--resume", tr_args.resume, "checkpoint to resume from");
  tr->add_option("--seed", tr_args.seed, "random seed")->capture_default_str();
  // value-carrying overrides; defaults come from the preset/config file
  tr->add_option("--lr", "learning rate");
  tr->add_option("--batch-size", "examples per step");
  tr->add_option("--epochs", "training epochs");
  tr->add_option("--alpha", "stylistic-word loss boost");
  tr->add_option("--beta", "auxiliary query-LM weight");
  tr->add_option("--corruption-rate", "prototype corruption rate");
  tr->add_option("--mask-prob", "MASK share among corrupted positions");
  tr->add_option("--grad-clip", "global gradient-norm cap (0 disables)");
  tr->add_option("--max-steps", "hard cap on optimizer steps (0 = none)");
  tr->add_option("--warmup-epochs", "leading style-free LM epochs");
  tr->add_flag("--style-specific-weighting",
               "weight targets by SV_style instead of the union SV");
  tr->add_option("--layers", "transformer layers");
  tr->add_option("--dim", "model width");
  tr->add_option("--heads", "attention heads");
  tr->add_option("--ff-dim", "feed-forward width");
  tr->add_option("--max-seq-len", "context length");
  tr->add_option("--dropout", "dropout rate");
  tr->add_option("--init-std", "init scale for embedding/linear weights");
  tr->get_option("--preset")->excludes(tr->get_option("--config"));
  tr->callback([&]() {
    apply_threads();
    sp::ModelConfig mcfg;
    sp::TrainConfig tcfg;
    if (!tr_args.preset.empty()) tcfg = sp::train_preset(tr_args.preset);
    if (!tr_args.config_path.empty())
      std::tie(mcfg, tcfg) =
          sp::combined_config_from_json(sp::read_file(tr_args.config_path));
    cmd_train(tr_args, tr, mcfg, tcfg);
  });

  // --- generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate",
                                 "one retrieve-mask-generate pipeline pass");
  gen->fallthrough();
  PipelineArgs gen_pipe;
  DecodeFlags gen_decode;
  std::string gen_style, gen_query, gen_out;
  uint64_t gen_seed = 0;
  add_pipeline_flags(gen, gen_pipe);
  gen->add_option("--style", gen_style, "target style label")->required();
  gen->add_option("--query", gen_query, "whitespace-tokenized query")
      ->required();
  gen->add_option("--out", gen_out, "optional JSON result path");
  gen->add_option("--seed", gen_seed, "random seed")->capture_default_str();
  add_decode_flags(gen, gen_decode);
  gen->callback([&]() {
    apply_threads();
    cmd_generate(gen_pipe, gen_style, gen_query, gen_decode, gen_seed, gen_out);
  });

  // --- chat -------------------------------------------------------------------
  auto* chat = app.add_subcommand(
      "chat", "REPL: style label line + query line per turn");
  chat->fallthrough();
  PipelineArgs chat_pipe;
  DecodeFlags chat_decode;
  uint64_t chat_seed = 0;
  add_pipeline_flags(chat, chat_pipe);
  chat->add_option("--seed", chat_seed, "random seed")->capture_default_str();
  add_decode_flags(chat, chat_decode);
  chat->callback([&]() {
    apply_threads();
    cmd_chat(chat_pipe, chat_decode, chat_seed);
  });

  // --- eval / xeval ------------------------------------------------------------
  for (const char* name : {"eval", "xeval"}) {
    const bool cross = std::string(name) == "xeval";
    auto* ev = app.add_subcommand(
        name, cross ? "cross-domain evaluation against another corpus"
                    : "automatic evaluation on a test corpus");
    ev->fallthrough();
    auto pipe = std::make_shared<PipelineArgs>();
    auto decode = std::make_shared<DecodeFlags>();
    auto test = std::make_shared<std::string>();
    auto out_prefix = std::make_shared<std::string>();
    auto seed = std::make_shared<uint64_t>(0);
    add_pipeline_flags(ev, *pipe);
    ev->add_option("--test", *test, "test corpus JSONL")->required();
    ev->add_option("--out", *out_prefix,
                   "report path prefix (.json/.txt/.records.jsonl)")
        ->required();
    ev->add_option("--seed", *seed, "random seed")->capture_default_str();
    add_decode_flags(ev, *decode);
    ev->callback([&apply_threads, name, pipe, decode, test, out_prefix, seed]() {
      apply_threads();
      cmd_eval(name, *pipe, *test, *out_prefix, *decode, *seed);
    });
  }

  // --- gradcheck ----------------------------------------------------------------
  auto* gc = app.add_subcommand(
      "gradcheck", "verify analytic gradients against finite differences");
  gc->fallthrough();
  sp::ModelConfig gc_cfg;
  gc_cfg.n_layers = 2;
  gc_cfg.model_dim = 32;
  gc_cfg.n_heads = 2;
  gc_cfg.ff_dim = 64;
  gc_cfg.max_seq_len = 64;
  gc_cfg.vocab_size = 50;
  gc_cfg.n_styles = 2;
  uint64_t gc_seed = 0;
  double gc_eps = 1e-5, gc_alpha = 0.2, gc_beta = 1.0, gc_threshold = 1e-4;
  gc->add_option("--seed", gc_seed, "random seed")->capture_default_str();
  gc->add_option("--epsilon", gc_eps, "finite-difference step")
      ->capture_default_str();
  gc->add_option("--alpha", gc_alpha, "stylistic-word loss boost")
      ->capture_default_str();
  gc->add_option("--beta", gc_beta, "auxiliary query-LM weight")
      ->capture_default_str();
  gc->add_option("--threshold", gc_threshold, "pass/fail bound on the error")
      ->capture_default_str();
  gc->add_option("--layers", gc_cfg.n_layers, "transformer layers")
      ->capture_default_str();
  gc->add_option("--dim", gc_cfg.model_dim, "model width")
      ->capture_default_str();
  gc->add_option("--heads", gc_cfg.n_heads, "attention heads")
      ->capture_default_str();
  gc->add_option("--ff-dim", gc_cfg.ff_dim, "feed-forward width")
      ->capture_default_str();
  gc->add_option("--max-seq-len", gc_cfg.max_seq_len, "context length")
      ->capture_default_str();
  gc->add_option("--vocab-size", gc_cfg.vocab_size, "vocabulary size")
      ->capture_default_str();
  gc->add_option("--styles", gc_cfg.n_styles, "style count")
      ->capture_default_str();
  gc->callback([&]() {
    apply_threads();
    cmd_gradcheck(gc_cfg, gc_seed, gc_eps, gc_alpha, gc_beta, gc_threshold);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return g_exit;
}
