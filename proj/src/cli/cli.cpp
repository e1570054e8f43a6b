#include "ctxalign/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ctxalign/adversarial_align.hpp"
#include "ctxalign/anchor_space.hpp"
#include "ctxalign/bilm.hpp"
#include "ctxalign/corpus_io.hpp"
#include "ctxalign/dep_parser.hpp"
#include "ctxalign/linalg_align.hpp"
#include "ctxalign/logging.hpp"
#include "ctxalign/manifest.hpp"
#include "ctxalign/retrieval.hpp"
#include "ctxalign/synth.hpp"

namespace ctxalign {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string log_level = "info";
  std::string manifest;
};

// State of one subcommand run: resolved config, files touched, and the
// stdout buffer (flushed only on success).
struct Session {
  std::string subcommand;
  Globals globals;
  json config = json::object();
  std::vector<FileDigest> inputs;
  std::vector<std::string> output_files;
  std::vector<std::string> output_locations;
  std::string primary_output;
  std::ostringstream out;

  std::uint64_t seed() const { return globals.seed; }
  int threads() const { return globals.threads; }

  const std::string& input(const std::string& path) {
    inputs.push_back({path, sha256_file(path)});
    return path;
  }
  // An output file named directly by an argument.
  const std::string& output(const std::string& path) {
    output_locations.push_back(path);
    output_files.push_back(path);
    if (primary_output.empty()) primary_output = path;
    return path;
  }
  // A file created inside an output directory argument.
  std::string output_in(const std::string& dir, const std::string& name) {
    std::string path = (fs::path(dir) / name).string();
    output_files.push_back(path);
    return path;
  }
  // JSON results go to `path` when given, else to stdout.
  void emit(const json& j, const std::string& path) {
    if (path.empty()) {
      out << j.dump(2) << '\n';
      return;
    }
    std::ofstream f(path);
    if (!f) throw DataError("cannot write '" + path + "'");
    f << j.dump(2) << '\n';
    if (!f) throw DataError("write failed for '" + path + "'");
    output(path);
  }
};

using Handler = std::function<void(Session&)>;
using Registry = std::map<std::string, Handler>;

std::pair<std::string, std::string> split_lang(const std::string& spec, const std::string& flag) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw UsageError(flag + " expects lang=path, got '" + spec + "'");
  }
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

std::map<std::string, std::string> lang_map(const std::vector<std::string>& specs, const std::string& flag) {
  std::map<std::string, std::string> out;
  for (const auto& s : specs) {
    auto [lang, path] = split_lang(s, flag);
    if (!out.emplace(lang, path).second) throw UsageError(flag + " given twice for language '" + lang + "'");
  }
  return out;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

AnchorTable read_table(Session& s, const std::string& path) {
  return load_static_embeddings(s.input(path), stem(path));
}

std::vector<std::string> read_lines(Session& s, const std::string& path) {
  std::ifstream in(s.input(path));
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

json geometry_json(const GeometryStats& g) {
  json j = {{"mean_within_cloud", g.mean_within_cloud},
            {"mean_between_anchors", g.mean_between_anchors},
            {"tokens_counted", g.tokens_counted},
            {"occurrences_counted", g.occurrences_counted},
            {"anchor_pairs", g.anchor_pairs}};
  if (g.mean_within_subset) j["mean_within_subset"] = *g.mean_within_subset;
  return j;
}

// ---- anchors ---------------------------------------------------------------

void add_anchors(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string input, model, corpus, output, space_id;
    std::uint64_t min_count = 1, max_occ = 0;
    bool alphabetic = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("anchors", "Average contextual vectors per token into an anchor table");
  auto* in = sub->add_option("--input", o->input, "CTXEMB occurrence file");
  auto* model = sub->add_option("--model", o->model, "Language model (with --corpus, embeds layer 1 directly)");
  sub->add_option("--corpus", o->corpus, "Tokenized corpus for --model")->needs(model);
  model->needs("--corpus");
  in->excludes(model);
  sub->add_option("--min-count", o->min_count, "Drop tokens seen fewer times");
  sub->add_flag("--alphabetic-only", o->alphabetic, "Keep tokens made of letters only");
  sub->add_option("--max-occurrences-per-token", o->max_occ, "Average at most this many occurrences (0 = all)");
  sub->add_option("--space-id", o->space_id, "Identifier stored with the table");
  sub->add_option("--output", o->output, "Anchor table (word2vec text)")->required();
  reg["anchors"] = [o](Session& s) {
    if (o->input.empty() && o->model.empty()) throw UsageError("anchors needs --input or --model/--corpus");
    AnchorOptions opts;
    opts.min_count = o->min_count;
    opts.alphabetic_only = o->alphabetic;
    opts.max_occurrences_per_token = o->max_occ;
    opts.space_id = o->space_id;
    s.config = {{"min_count", o->min_count},
                {"alphabetic_only", o->alphabetic},
                {"max_occurrences_per_token", o->max_occ},
                {"source", o->input.empty() ? "model" : "occurrences"}};
    AnchorTable table;
    if (!o->input.empty()) {
      OccurrenceReader reader(s.input(o->input));
      table = compute_anchors(occurrences_from(reader), opts);
    } else {
      auto lm = BiLMModel::load(s.input(o->model));
      table = anchors_of(lm, load_corpus(s.input(o->corpus)), opts, s.threads());
    }
    if (table.empty()) throw DataError("no token passed the anchor filters");
    save_static_embeddings(table, s.output(o->output));
    log_info("anchors: " + std::to_string(table.size()) + " tokens, dim " + std::to_string(table.dim()));
  };
}

// ---- geometry --------------------------------------------------------------

void add_geometry(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string occurrences, anchors, subset, output;
    std::size_t exact_limit = GeometryOptions{}.exact_pairs_limit;
    std::uint64_t sampled = GeometryOptions{}.sampled_pairs;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("geometry", "Within-cloud versus between-anchor cosine distances");
  sub->add_option("--occurrences", o->occurrences, "CTXEMB occurrence file")->required();
  sub->add_option("--anchors", o->anchors, "Anchor table (computed from the occurrences when omitted)");
  sub->add_option("--subset", o->subset, "File with one token per line for mean_within_subset");
  sub->add_option("--exact-pairs-limit", o->exact_limit, "Use all anchor pairs up to this many anchors");
  sub->add_option("--sampled-pairs", o->sampled, "Anchor pairs sampled above the limit");
  sub->add_option("--output", o->output, "Write the JSON report here instead of stdout");
  reg["geometry"] = [o](Session& s) {
    GeometryOptions opts;
    opts.exact_pairs_limit = o->exact_limit;
    opts.sampled_pairs = o->sampled;
    opts.seed = s.seed();
    s.config = {{"exact_pairs_limit", o->exact_limit}, {"sampled_pairs", o->sampled}};
    AnchorTable table;
    s.input(o->occurrences);
    if (!o->anchors.empty()) {
      table = read_table(s, o->anchors);
    } else {
      OccurrenceReader reader(o->occurrences);
      table = compute_anchors(occurrences_from(reader), {});
    }
    std::vector<std::string> subset;
    if (!o->subset.empty()) subset = read_lines(s, o->subset);
    OccurrenceReader reader(o->occurrences);
    auto stats = geometry_report(occurrences_from(reader), table, o->subset.empty() ? nullptr : &subset, opts);
    s.emit(geometry_json(stats), o->output);
  };
}

// ---- align-supervised ------------------------------------------------------

void add_align_supervised(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string src, tgt, dict, output;
    bool normalize = false, center = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("align-supervised", "Orthogonal Procrustes on dictionary anchor pairs");
  sub->add_option("--src-anchors", o->src, "Source anchor table")->required();
  sub->add_option("--tgt-anchors", o->tgt, "Target anchor table")->required();
  sub->add_option("--dict", o->dict, "Source-target dictionary")->required();
  sub->add_flag("--normalize", o->normalize, "Length-normalize anchors before fitting");
  sub->add_flag("--center", o->center, "Mean-center each table before fitting");
  sub->add_option("--output", o->output, "Alignment matrix")->required();
  reg["align-supervised"] = [o](Session& s) {
    s.config = {{"normalize", o->normalize}, {"center", o->center}};
    auto src = read_table(s, o->src);
    auto tgt = read_table(s, o->tgt);
    auto dict = load_dictionary(s.input(o->dict));
    auto prep = [&](const AnchorTable& t) {
      Matrix v = t.vectors();
      if (o->center) v = center_rows(v);
      if (o->normalize) v = normalize_rows(v);
      return t.with_vectors(std::move(v));
    };
    auto pairing = pairs_from_dictionary(prep(src), prep(tgt), dict);
    log_info("align-supervised: " + std::to_string(pairing.used) + " pairs used, " +
             std::to_string(pairing.skipped_oov) + " skipped (out of vocabulary)");
    auto w = orthogonal_procrustes(pairing.points);
    w.source_space = src.space_id();
    w.target_space = tgt.space_id();
    log_info("align-supervised: residual " + format_double(procrustes_objective(w.w, pairing.points)));
    save_matrix(w, s.output(o->output));
  };
}

// ---- align-unsupervised ----------------------------------------------------

Matrix occurrence_matrix(const std::string& path, AnchorAccumulator* acc) {
  OccurrenceReader reader(path);
  std::vector<RowVector> rows;
  ContextualOccurrence occ;
  while (reader.next(occ)) {
    if (acc) acc->add(occ.token, occ.vector);
    rows.push_back(occ.vector.transpose());
  }
  if (rows.empty()) throw DataError(path + ": no occurrences");
  Matrix m(static_cast<Index>(rows.size()), reader.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i];
  return m;
}

void add_align_unsupervised(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string variant = "anchored";
    std::string src_anchors, src_occ, tgt_anchors, tgt_occ, output;
    int refine_iters = 5;
    int restarts = 1;
    AdversarialConfig cfg;
    std::size_t refine_rank = RefineConfig{}.max_rank;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("align-unsupervised", "Adversarial alignment followed by refinement");
  sub->add_option("--variant", o->variant, "anchored or context")
      ->check(CLI::IsMember({"anchored", "context", "context-based"}));
  sub->add_option("--src-anchors", o->src_anchors, "Source anchor table");
  sub->add_option("--src-occurrences", o->src_occ, "Source CTXEMB file (context variant)");
  sub->add_option("--tgt-anchors", o->tgt_anchors, "Target anchor table")->required();
  sub->add_option("--tgt-occurrences", o->tgt_occ, "Target CTXEMB file (context variant)");
  sub->add_option("--refine-iters", o->refine_iters, "Refinement iterations (0 disables)");
  sub->add_option("--refine-rank", o->refine_rank, "Frequency rank cap for the synthetic dictionary");
  sub->add_option("--restarts", o->restarts, "Adversarial runs with seeds seed, seed+1, ...")
      ->check(CLI::PositiveNumber);
  sub->add_option("--steps", o->cfg.steps, "Mapping updates");
  sub->add_option("--batch", o->cfg.batch, "Samples per side and update");
  sub->add_option("--disc-hidden", o->cfg.disc_hidden, "Discriminator hidden width");
  sub->add_option("--disc-layers", o->cfg.disc_layers, "Discriminator hidden layers");
  sub->add_option("--disc-steps", o->cfg.disc_steps, "Discriminator updates per mapping update");
  sub->add_option("--map-lr", o->cfg.map_lr, "Mapping learning rate");
  sub->add_option("--disc-lr", o->cfg.disc_lr, "Discriminator learning rate");
  sub->add_option("--ortho-beta", o->cfg.ortho_beta, "Orthogonalization strength");
  sub->add_option("--epoch-steps", o->cfg.epoch_steps, "Updates between learning-rate decays");
  sub->add_option("--eval-every", o->cfg.eval_every, "Updates between criterion evaluations");
  sub->add_option("--feed-top-k", o->cfg.feed_top_k, "Most frequent anchors fed to the discriminator");
  sub->add_option("--criterion-rank", o->cfg.criterion_rank, "Source anchors scored by the criterion");
  sub->add_option("--output", o->output, "Alignment matrix")->required();
  reg["align-unsupervised"] = [o](Session& s) {
    AdversarialConfig cfg = o->cfg;
    cfg.variant = parse_variant(o->variant);
    cfg.seed = s.seed();
    cfg.threads = s.threads();
    bool context = cfg.variant == AdversarialVariant::context_based;
    if (o->src_anchors.empty() && o->src_occ.empty()) {
      throw UsageError("align-unsupervised needs --src-anchors or --src-occurrences");
    }
    if (context && o->src_occ.empty()) throw UsageError("the context variant needs --src-occurrences");

    AnchorTable src, tgt = read_table(s, o->tgt_anchors);
    Matrix src_occ, tgt_occ;
    AnchorAccumulator acc;
    if (!o->src_occ.empty()) {
      src_occ = occurrence_matrix(s.input(o->src_occ), o->src_anchors.empty() ? &acc : nullptr);
    }
    src = o->src_anchors.empty() ? acc.finish({}) : read_table(s, o->src_anchors);
    if (!o->tgt_occ.empty()) tgt_occ = occurrence_matrix(s.input(o->tgt_occ), nullptr);

    AdversarialData data;
    data.src_anchors = &src;
    data.tgt_anchors = &tgt;
    if (context) {
      data.src_occurrences = &src_occ;
      if (!o->tgt_occ.empty()) data.tgt_occurrences = &tgt_occ;
    }
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(o->restarts));
    std::iota(seeds.begin(), seeds.end(), s.seed());

    s.config = {{"variant", variant_name(cfg.variant)}, {"steps", cfg.steps},
                {"batch", cfg.batch},                   {"disc_hidden", cfg.disc_hidden},
                {"disc_layers", cfg.disc_layers},       {"disc_steps", cfg.disc_steps},
                {"disc_input_dropout", cfg.disc_input_dropout},
                {"leaky_slope", cfg.leaky_slope},       {"label_smoothing", cfg.label_smoothing},
                {"map_lr", cfg.map_lr},                 {"disc_lr", cfg.disc_lr},
                {"lr_decay", cfg.lr_decay},             {"lr_shrink", cfg.lr_shrink},
                {"epoch_steps", cfg.epoch_steps},       {"ortho_beta", cfg.ortho_beta},
                {"feed_top_k", cfg.feed_top_k},         {"eval_every", cfg.eval_every},
                {"criterion_rank", cfg.criterion_rank}, {"k_csls", cfg.k_csls},
                {"restarts", o->restarts},              {"refine_iters", o->refine_iters},
                {"refine_rank", o->refine_rank}};

    auto progress = [](const AdversarialProgress& p) {
      log_info("step " + std::to_string(p.step) + " disc_acc " + format_double(p.disc_accuracy) + " criterion " +
               format_double(p.criterion) + " ortho " + format_double(p.max_orthogonality) +
               (p.best ? " *" : ""));
    };
    auto adv = train_adversarial_restarts(data, cfg, seeds, progress);
    log_info("adversarial: best criterion " + format_double(adv.criterion) + " at step " +
             std::to_string(adv.best_step));
    AlignmentMatrix w = adv.w;
    if (o->refine_iters > 0) {
      RefineConfig rc;
      rc.iterations = o->refine_iters;
      rc.max_rank = o->refine_rank;
      rc.k_csls = cfg.k_csls;
      rc.criterion_rank = cfg.criterion_rank;
      rc.threads = s.threads();
      auto r = refine(w, src, tgt, rc);
      for (std::size_t i = 0; i < r.criteria.size(); ++i) {
        log_info("refine " + std::to_string(i) + " criterion " + format_double(r.criteria[i]) +
                 (i > 0 ? " dictionary " + std::to_string(r.dictionary_sizes[i - 1]) : ""));
      }
      w = r.w;
    }
    w.source_space = src.space_id();
    w.target_space = tgt.space_id();
    save_matrix(w, s.output(o->output));
  };
}

// ---- translate / translate-eval --------------------------------------------

void add_translate(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string matrix, src, tgt, words_file, output, metric = "csls";
    std::vector<std::string> words;
    int k = 5, k_csls = 10;
    std::size_t vocab_cap = 50000;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("translate", "Nearest target neighbors of mapped source words");
  sub->add_option("--matrix", o->matrix, "Alignment matrix")->required();
  sub->add_option("--src-anchors", o->src, "Source anchor table")->required();
  sub->add_option("--tgt-anchors", o->tgt, "Target anchor table")->required();
  sub->add_option("--word", o->words, "Query word (repeatable)");
  sub->add_option("--words", o->words_file, "File with one query word per line");
  sub->add_option("--k", o->k, "Neighbors per query")->check(CLI::PositiveNumber);
  sub->add_option("--metric", o->metric, "csls or cosine")->check(CLI::IsMember({"csls", "cosine", "nn"}));
  sub->add_option("--k-csls", o->k_csls, "CSLS neighborhood size")->check(CLI::PositiveNumber);
  sub->add_option("--vocab-cap", o->vocab_cap, "Most frequent words considered on each side");
  sub->add_option("--output", o->output, "Write the JSON report here instead of stdout");
  reg["translate"] = [o](Session& s) {
    auto metric = parse_metric(o->metric);
    s.config = {{"k", o->k}, {"metric", metric_name(metric)}, {"k_csls", o->k_csls}, {"vocab_cap", o->vocab_cap}};
    auto w = load_matrix(s.input(o->matrix));
    auto src = read_table(s, o->src).top(o->vocab_cap);
    auto tgt = read_table(s, o->tgt).top(o->vocab_cap);
    std::vector<std::string> queries = o->words;
    if (!o->words_file.empty()) {
      auto more = read_lines(s, o->words_file);
      queries.insert(queries.end(), more.begin(), more.end());
    }
    if (queries.empty()) queries = src.tokens();
    auto lists = csls_knn(apply_alignment(w, src), tgt, o->k, o->k_csls, metric, s.threads());
    json results = json::array();
    for (const auto& q : queries) {
      auto row = src.find(q);
      if (!row) {
        log_warn("translate: '" + q + "' not in the source table");
        continue;
      }
      json nb = json::array();
      for (const auto& n : lists[*row].neighbors) nb.push_back({{"token", n.token}, {"score", n.score}});
      results.push_back({{"query", q}, {"neighbors", nb}});
    }
    s.emit({{"k", o->k}, {"metric", metric_name(metric)}, {"results", results}}, o->output);
  };
}

void add_translate_eval(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string matrix, src, tgt, dict, output, metric = "csls";
    int k = 5, k_csls = 10;
    std::size_t vocab_cap = 50000;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("translate-eval", "Word-translation precision@k against a dictionary");
  sub->add_option("--matrix", o->matrix, "Alignment matrix")->required();
  sub->add_option("--src-anchors", o->src, "Source anchor table")->required();
  sub->add_option("--tgt-anchors", o->tgt, "Target anchor table")->required();
  sub->add_option("--dict", o->dict, "Gold dictionary")->required();
  sub->add_option("--k", o->k, "Precision at k")->check(CLI::PositiveNumber);
  sub->add_option("--metric", o->metric, "csls or cosine")->check(CLI::IsMember({"csls", "cosine", "nn"}));
  sub->add_option("--k-csls", o->k_csls, "CSLS neighborhood size")->check(CLI::PositiveNumber);
  sub->add_option("--vocab-cap", o->vocab_cap, "Most frequent words considered on each side");
  sub->add_option("--output", o->output, "Write the JSON report here instead of stdout");
  reg["translate-eval"] = [o](Session& s) {
    auto metric = parse_metric(o->metric);
    s.config = {{"k", o->k}, {"metric", metric_name(metric)}, {"k_csls", o->k_csls}, {"vocab_cap", o->vocab_cap}};
    auto w = load_matrix(s.input(o->matrix));
    auto src = read_table(s, o->src);
    auto tgt = read_table(s, o->tgt);
    auto dict = load_dictionary(s.input(o->dict));
    TranslationOptions opts;
    opts.vocab_cap = o->vocab_cap;
    opts.k_csls = o->k_csls;
    opts.threads = s.threads();
    auto r = translation_precision(w, src, tgt, dict, o->k, metric, opts);
    s.emit({{"k", r.k},
            {"metric", metric_name(r.metric)},
            {"precision_at_k", r.precision_at_k},
            {"evaluated", r.evaluated},
            {"skipped_oov", r.skipped_oov}},
           o->output);
  };
}

// ---- language model --------------------------------------------------------

void add_train_lm(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string corpus, dev, dict, target_anchors, output;
    BiLMConfig cfg;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train-lm", "Train a word-level bidirectional LSTM language model");
  sub->add_option("--corpus", o->corpus, "Training corpus, one tokenized sentence per line")->required();
  sub->add_option("--dev", o->dev, "Dev corpus; the epoch with the lowest dev perplexity is kept");
  sub->add_option("--lambda-anchor", o->cfg.lambda_anchor, "Weight of the anchoring penalty");
  auto* dict = sub->add_option("--dict", o->dict, "Dictionary from corpus words to target words");
  auto* ta = sub->add_option("--target-anchors", o->target_anchors, "Frozen target vectors");
  dict->needs(ta);
  ta->needs(dict);
  sub->add_option("--vocab-cap", o->cfg.vocab_cap, "Vocabulary size without specials");
  sub->add_option("--emb-dim", o->cfg.emb_dim, "Input embedding width");
  sub->add_option("--hidden", o->cfg.hidden, "LSTM width per direction");
  sub->add_option("--layers", o->cfg.layers, "LSTM layers per direction");
  sub->add_option("--epochs", o->cfg.epochs, "Training epochs");
  sub->add_option("--batch", o->cfg.batch, "Sentences per update");
  sub->add_option("--lr", o->cfg.lr, "Adam learning rate");
  sub->add_option("--dropout", o->cfg.dropout, "Dropout rate");
  sub->add_flag("--tied", o->cfg.tied, "Tie input and output embeddings");
  sub->add_option("--output,--out", o->output, "Model file")->required();
  reg["train-lm"] = [o](Session& s) {
    BiLMConfig cfg = o->cfg;
    cfg.seed = s.seed();
    if (!o->dict.empty()) {
      cfg.anchor_targets = AnchorTargets{load_dictionary(s.input(o->dict)), read_table(s, o->target_anchors)};
    }
    if (cfg.lambda_anchor > 0 && !cfg.anchor_targets) {
      throw UsageError("--lambda-anchor > 0 needs --dict and --target-anchors");
    }
    if (cfg.lambda_anchor == 0 && cfg.anchor_targets) {
      log_warn("train-lm: --lambda-anchor is 0, ignoring --dict/--target-anchors");
      cfg.anchor_targets.reset();
    }
    cfg.validate();
    s.config = {{"vocab_cap", cfg.vocab_cap}, {"emb_dim", cfg.emb_dim}, {"hidden", cfg.hidden},
                {"layers", cfg.layers},       {"epochs", cfg.epochs},   {"batch", cfg.batch},
                {"lr", cfg.lr},               {"dropout", cfg.dropout}, {"tied", cfg.tied},
                {"lambda_anchor", cfg.lambda_anchor}};
    auto corpus = load_corpus(s.input(o->corpus));
    TokenizedCorpus dev;
    if (!o->dev.empty()) dev = load_corpus(s.input(o->dev));
    auto model = train_bilm(corpus, cfg, o->dev.empty() ? nullptr : &dev, [](const BiLMEpochReport& r) {
      std::string line = "epoch " + std::to_string(r.epoch) + " loss " + format_double(r.train_loss);
      if (r.dev_perplexity) line += " dev_ppl " + format_double(*r.dev_perplexity);
      if (!std::isnan(r.mean_anchor_distance)) line += " anchor_dist " + format_double(r.mean_anchor_distance);
      log_info(line);
    });
    model.save(s.output(o->output));
  };
}

void add_perplexity(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string model, corpus, output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("perplexity", "Perplexity of a language model on a corpus");
  sub->add_option("--model", o->model, "Model file")->required();
  sub->add_option("--corpus", o->corpus, "Tokenized corpus")->required();
  sub->add_option("--output", o->output, "Write the JSON report here instead of stdout");
  reg["perplexity"] = [o](Session& s) {
    auto model = BiLMModel::load(s.input(o->model));
    auto corpus = load_corpus(s.input(o->corpus));
    std::size_t tokens = 0;
    for (const auto& line : corpus) tokens += line.size();
    double ppl = perplexity(model, corpus, s.threads());
    s.emit({{"perplexity", ppl}, {"sentences", corpus.size()}, {"tokens", tokens}}, o->output);
  };
}

TokenizedCorpus corpus_of(const std::vector<Sentence>& sentences) {
  TokenizedCorpus c;
  for (const auto& s : sentences) c.push_back(s.forms());
  return c;
}

void add_embed(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string model, corpus, conllu, center_by, output;
    int layer = 1;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("embed", "Write contextual vectors for every token of a corpus");
  sub->add_option("--model", o->model, "Model file")->required();
  auto* corpus = sub->add_option("--corpus", o->corpus, "Tokenized corpus");
  sub->add_option("--conllu", o->conllu, "Take the sentences from a CoNLL-U file")->excludes(corpus);
  sub->add_option("--layer", o->layer, "0 = token embeddings, 1 = first LSTM layer")
      ->check(CLI::IsMember({0, 1}));
  sub->add_option("--center-by", o->center_by, "Subtract the mean vector of this anchor table from every output");
  sub->add_option("--output", o->output, "CTXEMB file")->required();
  reg["embed"] = [o](Session& s) {
    if (o->corpus.empty() && o->conllu.empty()) throw UsageError("embed needs --corpus or --conllu");
    s.config = {{"layer", o->layer},
                {"source", o->corpus.empty() ? "conllu" : "corpus"},
                {"centered", !o->center_by.empty()}};
    auto model = BiLMModel::load(s.input(o->model));
    TokenizedCorpus corpus = o->corpus.empty()
                                 ? corpus_of(load_conllu(s.input(o->conllu), {false, {}}))
                                 : load_corpus(s.input(o->corpus));
    std::optional<RowVector> mean;
    if (!o->center_by.empty()) {
      auto table = read_table(s, o->center_by);
      if (table.empty() || table.dim() != model.output_dim(o->layer)) {
        throw DataError("--center-by table is empty or its dimension differs from layer " + std::to_string(o->layer));
      }
      mean = table.vectors().colwise().mean();
    }
    OccurrenceWriter writer(s.output(o->output), model.output_dim(o->layer));
    EmbedStats stats;
    if (mean) {
      stats = embed_corpus(
          model, corpus, o->layer,
          [&](const std::string& token, std::uint64_t sid, std::uint64_t pos, const Eigen::Ref<const RowVector>& v) {
            writer.write(token, sid, pos, v - *mean);
          },
          s.threads());
    } else {
      stats = embed_corpus(model, corpus, o->layer, writer, s.threads());
    }
    writer.close();
    log_info("embed: " + std::to_string(stats.sentences) + " sentences, " + std::to_string(stats.occurrences) +
             " occurrences, " + std::to_string(stats.unknown) + " unknown");
  };
}

// ---- parser ----------------------------------------------------------------

TreebankData treebank_data(Session& s, const std::string& lang, const std::string& conllu,
                           const std::string& embeddings, const std::string& matrix, bool require_tree) {
  auto sentences = load_conllu(s.input(conllu), {require_tree, lang});
  auto emb = load_sentence_embeddings(s.input(embeddings));
  std::optional<AlignmentMatrix> w;
  if (!matrix.empty()) w = load_matrix(s.input(matrix));
  return make_treebank_data(lang, std::move(sentences), emb, w ? &*w : nullptr);
}

void add_train_parser(CLI::App& app, Registry& reg) {
  struct Opts {
    std::vector<std::string> treebanks, devs, embeddings, dev_embeddings, matrices;
    std::string pivot, output;
    bool no_pos = false, multi_root = false;
    ParserConfig cfg;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train-parser", "Train the biaffine parser on one or more treebanks");
  sub->add_option("--treebank", o->treebanks, "lang=path of a CoNLL-U training file (repeatable)")->required();
  sub->add_option("--dev", o->devs, "lang=path of a CoNLL-U dev file (repeatable)")->required();
  sub->add_option("--embeddings", o->embeddings, "lang=path of CTXEMB vectors for a training treebank")->required();
  sub->add_option("--dev-embeddings", o->dev_embeddings, "lang=path of CTXEMB vectors for a dev treebank")
      ->required();
  sub->add_option("--matrix", o->matrices, "lang=path of the alignment into the pivot space");
  sub->add_option("--pivot", o->pivot, "Language whose space is the shared space");
  sub->add_flag("--no-pos", o->no_pos, "Do not concatenate part-of-speech embeddings");
  sub->add_flag("--multi-root", o->multi_root, "Allow several root children when decoding");
  sub->add_option("--pos-dim", o->cfg.pos_dim, "Part-of-speech embedding width");
  sub->add_option("--lstm-hidden", o->cfg.lstm_hidden, "Encoder width per direction");
  sub->add_option("--lstm-layers", o->cfg.lstm_layers, "Encoder layers");
  sub->add_option("--dropout", o->cfg.dropout, "Dropout rate");
  sub->add_option("--arc-mlp", o->cfg.arc_mlp_dim, "Arc MLP width");
  sub->add_option("--rel-mlp", o->cfg.rel_mlp_dim, "Relation MLP width");
  sub->add_option("--batch", o->cfg.batch_sentences, "Sentences per update");
  sub->add_option("--instances", o->cfg.instances_per_epoch, "Training sentences per epoch");
  sub->add_option("--max-epochs", o->cfg.max_epochs, "Epoch limit");
  sub->add_option("--patience", o->cfg.patience, "Epochs without dev improvement before stopping");
  sub->add_option("--lr", o->cfg.adam.lr, "Adam learning rate");
  sub->add_option("--beta1", o->cfg.adam.beta1, "Adam beta1");
  sub->add_option("--beta2", o->cfg.adam.beta2, "Adam beta2");
  sub->add_option("--output", o->output, "Model file")->required();
  reg["train-parser"] = [o](Session& s) {
    ParserConfig cfg = o->cfg;
    cfg.use_pos = !o->no_pos;
    cfg.single_root = !o->multi_root;
    cfg.seed = s.seed();
    cfg.threads = s.threads();
    cfg.validate();
    auto train_files = lang_map(o->treebanks, "--treebank");
    auto dev_files = lang_map(o->devs, "--dev");
    auto emb = lang_map(o->embeddings, "--embeddings");
    auto dev_emb = lang_map(o->dev_embeddings, "--dev-embeddings");
    auto mats = lang_map(o->matrices, "--matrix");
    auto matrix_of = [&](const std::string& lang) -> std::string {
      auto it = mats.find(lang);
      if (it != mats.end()) {
        if (lang == o->pivot) throw UsageError("--matrix given for the pivot language '" + lang + "'");
        return it->second;
      }
      if (!o->pivot.empty() && lang != o->pivot) {
        throw UsageError("language '" + lang + "' is not the pivot and has no --matrix");
      }
      return {};
    };
    auto lookup = [](const std::map<std::string, std::string>& m, const std::string& lang, const char* flag) {
      auto it = m.find(lang);
      if (it == m.end()) throw UsageError(std::string("no ") + flag + " for language '" + lang + "'");
      return it->second;
    };
    std::vector<TreebankData> train, dev;
    for (const auto& [lang, path] : train_files) {
      train.push_back(treebank_data(s, lang, path, lookup(emb, lang, "--embeddings"), matrix_of(lang), true));
    }
    for (const auto& [lang, path] : dev_files) {
      dev.push_back(treebank_data(s, lang, path, lookup(dev_emb, lang, "--dev-embeddings"), matrix_of(lang), true));
    }
    s.config = {{"use_pos", cfg.use_pos},
                {"pos_dim", cfg.pos_dim},
                {"lstm_hidden", cfg.lstm_hidden},
                {"lstm_layers", cfg.lstm_layers},
                {"dropout", cfg.dropout},
                {"arc_mlp_dim", cfg.arc_mlp_dim},
                {"rel_mlp_dim", cfg.rel_mlp_dim},
                {"batch_sentences", cfg.batch_sentences},
                {"instances_per_epoch", cfg.instances_per_epoch},
                {"max_epochs", cfg.max_epochs},
                {"patience", cfg.patience},
                {"adam", {{"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}}},
                {"single_root", cfg.single_root},
                {"pivot", o->pivot}};
    ParserTrainResult result;
    auto model = train_parser(train, dev, cfg, &result, [](const EpochReport& r) {
      log_info("epoch " + std::to_string(r.epoch) + " loss " + format_double(r.train_loss) + " dev_las " +
               format_double(r.dev_las) + (r.improved ? " *" : ""));
    });
    log_info("train-parser: best epoch " + std::to_string(result.best_epoch) + " dev LAS " +
             format_double(result.best_dev_las));
    model.save(s.output(o->output));
  };
}

void add_parse(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string model, treebank, embeddings, matrix, output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("parse", "Predict trees for a CoNLL-U file");
  sub->add_option("--model", o->model, "Parser model")->required();
  sub->add_option("--treebank", o->treebank, "CoNLL-U input (heads may be '_')")->required();
  sub->add_option("--embeddings", o->embeddings, "CTXEMB vectors for the input")->required();
  sub->add_option("--matrix", o->matrix, "Alignment into the parser's space");
  sub->add_option("--output", o->output, "CoNLL-U output")->required();
  reg["parse"] = [o](Session& s) {
    auto model = ParserModel::load(s.input(o->model));
    auto data = treebank_data(s, "", o->treebank, o->embeddings, o->matrix, false);
    save_conllu(parse_all(model, data, s.threads()), s.output(o->output));
  };
}

void add_eval_parser(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string model, treebank, embeddings, matrix, output;
    bool exclude_punct = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("eval-parser", "Attachment scores against a gold CoNLL-U file");
  sub->add_option("--model", o->model, "Parser model")->required();
  sub->add_option("--treebank", o->treebank, "Gold CoNLL-U file")->required();
  sub->add_option("--embeddings", o->embeddings, "CTXEMB vectors for the treebank")->required();
  sub->add_option("--matrix", o->matrix, "Alignment into the parser's space");
  sub->add_flag("--exclude-punct", o->exclude_punct, "Skip tokens tagged PUNCT");
  sub->add_option("--output", o->output, "Write the JSON report here instead of stdout");
  reg["eval-parser"] = [o](Session& s) {
    s.config = {{"exclude_punct", o->exclude_punct}};
    auto model = ParserModel::load(s.input(o->model));
    auto data = treebank_data(s, "", o->treebank, o->embeddings, o->matrix, true);
    auto all = evaluate(model, data, false, s.threads());
    auto no_punct = evaluate(model, data, true, s.threads());
    auto block = [](const AttachmentScores& a) { return json{{"uas", a.uas}, {"las", a.las}, {"tokens", a.tokens}}; };
    const auto& chosen = o->exclude_punct ? no_punct : all;
    s.emit({{"uas", chosen.uas},
            {"las", chosen.las},
            {"tokens", chosen.tokens},
            {"exclude_punct", o->exclude_punct},
            {"all_tokens", block(all)},
            {"without_punct", block(no_punct)}},
           o->output);
  };
}

// ---- synth -----------------------------------------------------------------

void add_synth(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string kind, out_dir, distribution = "gaussian";
    Index dim = 0;
    std::size_t vocab = 0;
    double sigma = 0.0;
    bool proper = false, pair = false;
    double shift_sigma = GaussianCloudsSpec{}.shift_sigma;
    std::size_t min_occ = GaussianCloudsSpec{}.min_occurrences, max_occ = GaussianCloudsSpec{}.max_occurrences;
    ToyTreebankPairSpec tb;
    std::size_t sentences = ToyCorpusSpec{}.sentences, pair_sentences = 0;
    std::size_t homographs = ToyGrammarSpec{}.homographs;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("synth", "Generate synthetic fixtures");
  sub->add_option("--kind", o->kind, "rotated-anchors, gaussian-clouds, toy-treebank-pair or toy-corpus")
      ->required()
      ->check(CLI::IsMember({"rotated-anchors", "gaussian-clouds", "toy-treebank-pair", "toy-corpus"}));
  sub->add_option("--out-dir", o->out_dir, "Directory for the generated files")->required();
  sub->add_option("--dim", o->dim, "Vector dimension");
  sub->add_option("--vocab", o->vocab, "Vocabulary size");
  sub->add_option("--sigma", o->sigma, "Target noise (rotated-anchors)");
  sub->add_option("--distribution", o->distribution, "gaussian, skewed or mixture")
      ->check(CLI::IsMember({"gaussian", "skewed", "mixture"}));
  sub->add_flag("--proper", o->proper, "Draw a rotation with determinant +1");
  sub->add_flag("--pair", o->pair, "Also generate a rotated target language (gaussian-clouds)");
  sub->add_option("--shift-sigma", o->shift_sigma, "Occurrence spread around anchors (gaussian-clouds)");
  sub->add_option("--min-occurrences", o->min_occ, "Occurrences of the rarest token (gaussian-clouds)");
  sub->add_option("--max-occurrences", o->max_occ, "Occurrences of the most frequent token (gaussian-clouds)");
  sub->add_option("--train", o->tb.train, "Training sentences (toy-treebank-pair)");
  sub->add_option("--dev", o->tb.dev, "Dev sentences (toy-treebank-pair)");
  sub->add_option("--test", o->tb.test, "Test sentences (toy-treebank-pair)");
  sub->add_option("--corpus-size", o->tb.corpus, "LM sentences per language (toy-treebank-pair)");
  sub->add_option("--sentences", o->sentences, "Sentences (toy-corpus)");
  sub->add_option("--pair-sentences", o->pair_sentences, "Sentences of the renamed clone (toy-corpus)");
  sub->add_option("--homographs", o->homographs, "Noun/verb homographs in the toy grammar");
  reg["synth"] = [o](Session& s) {
    fs::create_directories(o->out_dir);
    s.output_locations.push_back(o->out_dir);
    s.primary_output = (fs::path(o->out_dir) / "synth").string();
    auto dist = parse_distribution(o->distribution);
    json cfg = {{"kind", o->kind}};
    if (o->kind == "rotated-anchors") {
      RotatedAnchorsSpec spec;
      if (o->dim > 0) spec.dim = o->dim;
      if (o->vocab > 0) spec.vocab = o->vocab;
      spec.sigma = o->sigma;
      spec.distribution = dist;
      spec.proper_rotation = o->proper;
      spec.seed = s.seed();
      cfg.update({{"dim", spec.dim}, {"vocab", spec.vocab}, {"sigma", spec.sigma},
                  {"distribution", distribution_name(dist)}, {"proper", spec.proper_rotation}});
      auto r = synth_rotated_anchors(spec);
      save_static_embeddings(r.src, s.output_in(o->out_dir, "src.vec"));
      save_static_embeddings(r.tgt, s.output_in(o->out_dir, "tgt.vec"));
      save_dictionary(r.dict, s.output_in(o->out_dir, "dict.txt"));
      save_matrix({"src", "tgt", r.q}, s.output_in(o->out_dir, "q.mat"));
    } else if (o->kind == "gaussian-clouds") {
      GaussianCloudsSpec spec;
      if (o->dim > 0) spec.dim = o->dim;
      if (o->vocab > 0) spec.vocab = o->vocab;
      spec.min_occurrences = o->min_occ;
      spec.max_occurrences = o->max_occ;
      spec.shift_sigma = o->shift_sigma;
      spec.distribution = dist;
      spec.pair = o->pair;
      spec.proper_rotation = o->proper;
      spec.seed = s.seed();
      cfg.update({{"dim", spec.dim}, {"vocab", spec.vocab}, {"min_occurrences", spec.min_occurrences},
                  {"max_occurrences", spec.max_occurrences}, {"shift_sigma", spec.shift_sigma},
                  {"distribution", distribution_name(dist)}, {"pair", spec.pair}, {"proper", spec.proper_rotation}});
      auto g = synth_gaussian_clouds(spec);
      auto write_set = [&](const CloudSet& set, const std::string& prefix) {
        OccurrenceWriter w(s.output_in(o->out_dir, prefix + ".ctxemb"), set.anchors.dim());
        for (const auto& occ : set.occurrences) w.write(occ.token, occ.sentence_id, occ.position, occ.vector.transpose());
        w.close();
        save_static_embeddings(set.anchors, s.output_in(o->out_dir, prefix + "_anchors.vec"));
      };
      write_set(g.src, "src");
      if (g.tgt) {
        write_set(*g.tgt, "tgt");
        save_dictionary(g.dict, s.output_in(o->out_dir, "dict.txt"));
        save_matrix({"src", "tgt", g.q}, s.output_in(o->out_dir, "q.mat"));
      }
    } else if (o->kind == "toy-treebank-pair") {
      ToyTreebankPairSpec spec = o->tb;
      spec.grammar.homographs = o->homographs;
      spec.grammar.seed = s.seed();
      spec.seed = s.seed();
      cfg.update({{"train", spec.train}, {"dev", spec.dev}, {"test", spec.test}, {"corpus_size", spec.corpus},
                  {"homographs", spec.grammar.homographs}});
      auto p = synth_toy_treebank_pair(spec);
      save_conllu(p.a_train, s.output_in(o->out_dir, "a_train.conllu"));
      save_conllu(p.a_dev, s.output_in(o->out_dir, "a_dev.conllu"));
      save_conllu(p.a_test, s.output_in(o->out_dir, "a_test.conllu"));
      save_conllu(p.b_test, s.output_in(o->out_dir, "b_test.conllu"));
      save_corpus(p.a_corpus, s.output_in(o->out_dir, "a_corpus.txt"));
      save_corpus(p.b_corpus, s.output_in(o->out_dir, "b_corpus.txt"));
      save_dictionary(p.a_to_b, s.output_in(o->out_dir, "dict_a_b.txt"));
    } else {
      ToyCorpusSpec spec;
      spec.sentences = o->sentences;
      spec.pair_sentences = o->pair_sentences;
      spec.grammar.homographs = o->homographs;
      spec.grammar.seed = s.seed();
      spec.seed = s.seed();
      cfg.update({{"sentences", spec.sentences}, {"pair_sentences", spec.pair_sentences},
                  {"homographs", spec.grammar.homographs}});
      auto c = synth_toy_corpus(spec);
      save_corpus(c.corpus, s.output_in(o->out_dir, "corpus.txt"));
      if (spec.pair_sentences > 0) {
        save_corpus(c.pair_corpus, s.output_in(o->out_dir, "pair_corpus.txt"));
        save_dictionary(c.dict, s.output_in(o->out_dir, "dict.txt"));
      }
    }
    s.config = cfg;
  };
}

// ---- run -------------------------------------------------------------------

LogLevel parse_log_level(const std::string& name) {
  static const std::map<std::string, LogLevel> levels = {{"debug", LogLevel::debug}, {"info", LogLevel::info},
                                                         {"warn", LogLevel::warn},   {"error", LogLevel::error},
                                                         {"quiet", LogLevel::quiet}};
  return levels.at(name);
}

std::string redirect(const std::string& path, const std::map<std::string, std::string>& moves) {
  for (const auto& [from, to] : moves) {
    if (path == from) return to;
    std::string prefix = (fs::path(from) / "").string();
    if (path.rfind(prefix, 0) == 0) return (fs::path(to) / path.substr(prefix.size())).string();
  }
  return path;
}

int run_replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  auto m = load_manifest(manifest_path);
  if (m.version != CTXALIGN_VERSION) {
    log_warn("replay: manifest written by version " + m.version + ", running " + CTXALIGN_VERSION);
  }
  for (const auto& in : m.inputs) {
    if (sha256_file(in.path) != in.sha256) throw DataError("replay: input '" + in.path + "' changed since the run");
  }
  std::map<std::string, std::string> moves;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    for (const auto& loc : m.output_locations) moves[loc] = (fs::path(out_dir) / fs::path(loc).filename()).string();
  }
  std::vector<std::string> args;
  for (const auto& a : m.argv) args.push_back(redirect(a, moves));
  // the replayed run keeps its manifest next to the redirected outputs
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--manifest" && !out_dir.empty()) {
      args[i + 1] = (fs::path(out_dir) / fs::path(args[i + 1]).filename()).string();
    }
  }
  std::ostringstream captured;
  int code = run_cli(args, captured, err);
  if (code != kExitOk) throw DataError("replay: the recorded command failed with exit code " + std::to_string(code));

  bool all = true;
  json files = json::array();
  for (const auto& f : m.outputs) {
    std::string path = redirect(f.path, moves);
    std::string actual = fs::exists(path) ? sha256_file(path) : "";
    bool match = actual == f.sha256;
    all = all && match;
    files.push_back({{"path", path}, {"expected", f.sha256}, {"actual", actual.empty() ? json(nullptr) : json(actual)}, {"match", match}});
  }
  json report = {{"manifest", manifest_path}, {"files", files}};
  if (m.stdout_sha256) {
    bool match = sha256_hex(captured.str()) == *m.stdout_sha256;
    all = all && match;
    report["stdout_match"] = match;
  }
  report["reproduced"] = all;
  out << report.dump(2) << '\n';
  return all ? kExitOk : kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-lingual alignment of contextual embeddings, anchored language models and zero-shot parsing",
               "ctxalign"};
  app.fallthrough();
  Globals g;
  bool version = false;
  std::string replay_manifest, replay_dir;
  app.add_flag("--version", version, "Print the version and exit");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (1 gives reproducible results)")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or quiet")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "quiet"}));
  app.add_option("--manifest", g.manifest, "Manifest path (default: <output>.manifest.json)");

  Registry reg;
  add_anchors(app, reg);
  add_geometry(app, reg);
  add_align_supervised(app, reg);
  add_align_unsupervised(app, reg);
  add_translate(app, reg);
  add_translate_eval(app, reg);
  add_train_lm(app, reg);
  add_perplexity(app, reg);
  add_embed(app, reg);
  add_train_parser(app, reg);
  add_parse(app, reg);
  add_eval_parser(app, reg);
  add_synth(app, reg);
  auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  replay->add_option("manifest", replay_manifest, "Manifest to replay (or the global --manifest)");
  replay->add_option("--out-dir", replay_dir, "Write the replayed outputs here instead of over the originals");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (version) {
      out << "ctxalign " << CTXALIGN_VERSION << '\n';
      return kExitOk;
    }
    // Requirement checks run before extras are rejected; name unknown flags first.
    std::vector<std::string> extras = app.remaining();
    for (auto* sub : app.get_subcommands()) {
      auto more = sub->remaining();
      extras.insert(extras.end(), more.begin(), more.end());
    }
    if (!extras.empty()) {
      err << "error: unrecognized arguments:";
      for (const auto& x : extras) err << ' ' << x;
      err << '\n';
    } else {
      err << "error: " << e.what() << '\n';
    }
    return kExitUsage;
  }
  if (version) {
    out << "ctxalign " << CTXALIGN_VERSION << '\n';
    return kExitOk;
  }
  auto chosen = app.get_subcommands();
  if (chosen.empty()) {
    err << "error: a subcommand is required\n" << app.help();
    return kExitUsage;
  }
  set_log_level(parse_log_level(g.log_level));
  const std::string name = chosen.front()->get_name();
  try {
    if (name == "replay") {
      if (replay_manifest.empty()) replay_manifest = g.manifest;
      if (replay_manifest.empty()) throw UsageError("replay needs a manifest path");
      return run_replay(replay_manifest, replay_dir, out, err);
    }

    Session s;
    s.subcommand = name;
    s.globals = g;
    reg.at(name)(s);

    std::string text = s.out.str();
    out << text;
    std::string manifest_path = g.manifest;
    if (manifest_path.empty() && !s.primary_output.empty()) manifest_path = s.primary_output + ".manifest.json";
    if (!manifest_path.empty()) {
      RunManifest m;
      m.subcommand = name;
      m.argv = args;
      m.config = s.config;
      m.seed = g.seed;
      m.threads = g.threads;
      m.version = CTXALIGN_VERSION;
      m.inputs = s.inputs;
      for (const auto& f : s.output_files) m.outputs.push_back({f, sha256_file(f)});
      m.output_locations = s.output_locations;
      if (!g.manifest.empty()) m.output_locations.push_back(g.manifest);
      if (!text.empty()) m.stdout_sha256 = sha256_hex(text);
      save_manifest(m, manifest_path);
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace ctxalign
