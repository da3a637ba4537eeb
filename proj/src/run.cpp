#include "slmicl/run.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "slmicl/corpus.hpp"

namespace slmicl {

namespace fs = std::filesystem;

namespace {

// Desk preset. Seeds for every component are derived from "seed".
const std::vector<std::pair<std::string, std::string>>& default_entries() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"seed", "0"},
      {"out", "out"},
      {"checkpoint", ""},
      {"prompts", ""},
      // tasks and tokenizer
      {"units", "32"},
      {"d_feat", "8"},
      {"feature_jitter", "0.05"},
      {"motif_pool_size", "256"},
      {"motif_len", "3"},
      {"noise_rate", "0.1"},
      {"bias_alpha", "0.1"},
      {"num_classes", "4"},
      {"n_train_tasks", "3"},
      {"n_test_tasks", "2"},
      {"codebook_utterances", "400"},
      {"kmeans_iters", "50"},
      // episodes
      {"n", "4"},
      {"L", "20"},
      {"utt_len_min", "20"},
      {"utt_len_max", "20"},
      {"max_collision_attempts", "100"},
      // model
      {"d_model", "64"},
      {"n_layers", "4"},
      {"n_heads", "4"},
      {"d_ff", "256"},
      {"max_seq_len", "512"},
      {"tie_embeddings", "true"},
      // pretraining
      {"pretrain_steps", "12000"},
      {"pretrain_batch", "16"},
      {"pretrain_lr", "1e-3"},
      {"pretrain_lr_warmup", "100"},
      {"corpus_seq_len", "115"},
      {"corpus_classes", "2"},
      {"corpus_repeat_frac", "0.3"},
      {"corpus_repeat_min", "8"},
      {"corpus_repeat_max", "24"},
      {"corpus_label_weight", "5"},
      // warmup
      {"warmup_mode", "prompt_tuning"},
      {"prompt_len", "5"},
      {"warmup_steps", "2000"},
      {"warmup_batch", "32"},
      {"warmup_lr", "1e-3"},
      {"warmup_lr_warmup", "100"},
      {"clip_norm", "1.0"},
      // evaluation
      {"eval_episodes", "200"},
      {"eval_repeats", "5"},
      {"attention_episodes", "100"},
      {"ablate_lengths", "10,30,50,none"},
      {"ablate_utt_len_min", "10"},
      {"ablate_utt_len_max", "50"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Stream seeds of the world components.
enum SeedSlot : std::uint64_t {
  kSpace = 1,
  kPool,
  kTrainTasks,
  kTestTasks,
  kCodebookData,
  kKMeans,
  kModelInit,
  kCorpus,
  kWarmup,
  kEval,
  kAttention,
};

std::uint64_t slot_seed(const RunConfig& cfg, SeedSlot s) { return derive_seed(cfg.u64("seed"), s); }

}  // namespace

// ---- RunConfig -------------------------------------------------------------

RunConfig::RunConfig() {
  for (const auto& [k, v] : default_entries()) values_[k] = v;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot read config '" + path + "'");
  RunConfig cfg;
  cfg.source_ = path;
  std::map<std::string, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::config, path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (seen.count(key)) fail(ErrorCode::config, path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::config, "unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::config, "unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::integer(const std::string& key) const {
  const std::string& v = str(key);
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) fail(ErrorCode::config, "key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& v = str(key);
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    fail(ErrorCode::config, "key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = str(key);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) fail(ErrorCode::config, "key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorCode::config, "key '" + key + "' expects true/false, got '" + v + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

// ---- world -----------------------------------------------------------------

int parse_length(const std::string& s) {
  if (s == "none") return 0;
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || v < 1) fail(ErrorCode::config, "length must be a positive integer or 'none', got '" + s + "'");
  return v;
}

World build_world(const RunConfig& cfg) {
  World w;
  const int units = static_cast<int>(cfg.integer("units"));
  if (units < 2) fail(ErrorCode::config, "units must be >= 2");
  w.space = make_feature_space(units, static_cast<int>(cfg.integer("d_feat")), slot_seed(cfg, kSpace),
                               cfg.real("feature_jitter"));
  w.difficulty.noise_rate = cfg.real("noise_rate");
  w.difficulty.motif_len = static_cast<int>(cfg.integer("motif_len"));
  w.difficulty.bias_alpha = cfg.real("bias_alpha");
  w.pool = make_motif_pool(units, w.difficulty.motif_len, static_cast<int>(cfg.integer("motif_pool_size")),
                           slot_seed(cfg, kPool));
  const int classes = static_cast<int>(cfg.integer("num_classes"));
  for (long i = 0; i < cfg.integer("n_train_tasks"); ++i)
    w.train_tasks.push_back(gen_task_spec(derive_seed(slot_seed(cfg, kTrainTasks), i), classes, w.difficulty,
                                          TaskGroup::train, w.pool, units, "train" + std::to_string(i)));
  for (long i = 0; i < cfg.integer("n_test_tasks"); ++i)
    w.test_tasks.push_back(gen_task_spec(derive_seed(slot_seed(cfg, kTestTasks), i), classes, w.difficulty,
                                         TaskGroup::test, w.pool, units, "test" + std::to_string(i)));
  if (w.train_tasks.empty()) fail(ErrorCode::config, "n_train_tasks must be >= 1");
  w.vocab.units = units;
  w.lm.vocab_size = w.vocab.size();
  w.lm.d_model = static_cast<int>(cfg.integer("d_model"));
  w.lm.n_layers = static_cast<int>(cfg.integer("n_layers"));
  w.lm.n_heads = static_cast<int>(cfg.integer("n_heads"));
  w.lm.d_ff = static_cast<int>(cfg.integer("d_ff"));
  w.lm.max_seq_len = static_cast<int>(cfg.integer("max_seq_len"));
  w.lm.tie_embeddings = cfg.flag("tie_embeddings");
  w.lm.validate();
  return w;
}

Codebook fit_world_codebook(const RunConfig& cfg, const World& w) {
  Rng rng(slot_seed(cfg, kCodebookData));
  const int lo = static_cast<int>(std::min(cfg.integer("utt_len_min"), cfg.integer("ablate_utt_len_min")));
  const int hi = static_cast<int>(std::max(cfg.integer("utt_len_max"), cfg.integer("ablate_utt_len_max")));
  std::vector<double> points;
  for (long i = 0; i < cfg.integer("codebook_utterances"); ++i) {
    const TaskSpec& t = w.train_tasks[static_cast<std::size_t>(i) % w.train_tasks.size()];
    const auto f = sample_features(w.space, t, rng.uniform_int(t.num_classes), rng.uniform_int(lo, hi), rng);
    points.insert(points.end(), f.frames.begin(), f.frames.end());
  }
  auto fit = kmeans_fit(points, w.space.d_feat, w.vocab.units, static_cast<int>(cfg.integer("kmeans_iters")),
                        slot_seed(cfg, kKMeans));
  // Later stages reload the f32 copy from the checkpoint; use it from the start.
  return round_codebook(fit.codebook);
}

EpisodeContext make_context(const RunConfig& cfg, const World& w, int L) {
  EpisodeContext ctx;
  ctx.space = &w.space;
  ctx.codebook = &w.codebook;
  ctx.vocab = w.vocab;
  ctx.n = static_cast<int>(cfg.integer("n"));
  ctx.L = L;
  ctx.utt_len_min = static_cast<int>(cfg.integer("utt_len_min"));
  ctx.utt_len_max = static_cast<int>(cfg.integer("utt_len_max"));
  ctx.max_collision_attempts = static_cast<int>(cfg.integer("max_collision_attempts"));
  if (ctx.n < 1) fail(ErrorCode::config, "n must be >= 1");
  if (ctx.utt_len_min < 1 || ctx.utt_len_max < ctx.utt_len_min) fail(ErrorCode::config, "bad utterance length range");
  return ctx;
}

PretrainConfig pretrain_config(const RunConfig& cfg) {
  PretrainConfig p;
  p.steps = cfg.integer("pretrain_steps");
  p.batch_size = static_cast<int>(cfg.integer("pretrain_batch"));
  p.adam.lr = cfg.real("pretrain_lr");
  p.adam.warmup_steps = static_cast<int>(cfg.integer("pretrain_lr_warmup"));
  p.adam.clip_norm = cfg.real("clip_norm");
  Vocab v;
  v.units = static_cast<int>(cfg.integer("units"));
  p.target_weight = cfg.real("corpus_label_weight");
  p.weighted_begin = v.label_begin();
  p.weighted_end = v.label_end();
  if (p.target_weight <= 0.0) fail(ErrorCode::config, "corpus_label_weight must be positive");
  if (p.steps < 0 || p.batch_size < 1) fail(ErrorCode::config, "pretrain_steps must be >= 0 and pretrain_batch >= 1");
  return p;
}

WarmupConfig warmup_config(const RunConfig& cfg) {
  WarmupConfig c;
  c.mode = warmup_mode_from_string(cfg.str("warmup_mode"));
  c.prompt_len = static_cast<int>(cfg.integer("prompt_len"));
  c.steps = cfg.integer("warmup_steps");
  c.batch_size = static_cast<int>(cfg.integer("warmup_batch"));
  c.lr = cfg.real("warmup_lr");
  c.lr_warmup_steps = static_cast<int>(cfg.integer("warmup_lr_warmup"));
  c.clip_norm = cfg.real("clip_norm");
  c.seed = slot_seed(cfg, kWarmup);
  if (c.prompt_len < 0 || c.steps < 0 || c.batch_size < 1) fail(ErrorCode::config, "bad warmup sizes");
  return c;
}

EvalSpec eval_spec(const RunConfig& cfg, const std::string& split) {
  EvalSpec s;
  s.split = split;
  s.n_episodes = static_cast<int>(cfg.integer("eval_episodes"));
  s.n_repeats = static_cast<int>(cfg.integer("eval_repeats"));
  s.seed = derive_seed(slot_seed(cfg, kEval), split == "train_tasks" ? 0 : 1);
  if (s.n_episodes < 1 || s.n_repeats < 1) fail(ErrorCode::config, "eval_episodes and eval_repeats must be >= 1");
  return s;
}

// ---- output directory -----------------------------------------------------

OutputDir::OutputDir(const std::string& dir, const std::string& command) : dir_(dir), command_(command) {
  if (dir.empty()) fail(ErrorCode::config, "empty output directory");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorCode::io, "cannot create output directory '" + dir + "'");
}

std::string OutputDir::path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

void OutputDir::wrote(const std::string& name) {
  if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
}

void OutputDir::add_input(const std::string& role, const std::string& file) { inputs_.emplace_back(role, file); }

void OutputDir::finish(const RunConfig& cfg) {
  if (!cfg.source().empty()) inputs_.insert(inputs_.begin(), {"config", cfg.source()});
  {
    std::ofstream f(path("config.txt"));
    f << cfg.to_text();
    if (!f) fail(ErrorCode::io, "cannot write " + path("config.txt"));
  }
  wrote("config.txt");
  {
    std::ofstream f(path("inputs.sha256"));
    for (const auto& [role, file] : inputs_) f << file_sha256(file) << "  " << role << "  " << file << "\n";
    if (!f) fail(ErrorCode::io, "cannot write " + path("inputs.sha256"));
  }
  wrote("inputs.sha256");
  nlohmann::json m;
  m["command"] = command_;
  m["files"] = nlohmann::json::array();
  for (const auto& name : files_) {
    m["files"].push_back({{"name", name},
                          {"bytes", static_cast<std::uint64_t>(fs::file_size(path(name)))},
                          {"sha256", file_sha256(path(name))}});
  }
  std::ofstream f(path("manifest.json"));
  f << m.dump(2) << "\n";
  if (!f) fail(ErrorCode::io, "cannot write " + path("manifest.json"));
}

// ---- commands ---------------------------------------------------------------

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) fail(ErrorCode::io, "cannot write '" + path + "'");
}

void write_tasks_json(const World& w, const std::string& path) {
  nlohmann::json j;
  j["train"] = w.train_tasks;
  j["test"] = w.test_tasks;
  write_text(path, j.dump(1) + "\n");
}

struct Loaded {
  World world;
  ModelParams<float> model;
  std::optional<PromptBank<float>> prompts;
};

// Model and codebook from "checkpoint", prompts from "prompts" when set. A
// prompt checkpoint must carry the same backbone as the model checkpoint.
Loaded load_inputs(const RunConfig& cfg, OutputDir& out, bool want_prompts) {
  const std::string& ck = cfg.str("checkpoint");
  if (ck.empty()) fail(ErrorCode::config, "this command needs --checkpoint");
  out.add_input("checkpoint", ck);
  CheckpointBundle b = load_checkpoint(ck);
  if (!b.codebook) fail(ErrorCode::config, "checkpoint '" + ck + "' has no codebook");
  Loaded l{build_world(cfg), std::move(b.model), std::move(b.prompts)};
  l.world.codebook = *b.codebook;
  if (l.model.config.vocab_size != l.world.vocab.size())
    fail(ErrorCode::config, "checkpoint vocabulary does not match units=" + cfg.str("units"));
  l.world.lm = l.model.config;
  if (l.world.codebook.k != l.world.vocab.units || l.world.codebook.d_feat != l.world.space.d_feat)
    fail(ErrorCode::config, "checkpoint codebook does not match units/d_feat");
  const std::string& pp = cfg.str("prompts");
  if (want_prompts && !pp.empty()) {
    out.add_input("prompts", pp);
    CheckpointBundle pb = load_checkpoint(pp);
    if (!pb.prompts) fail(ErrorCode::config, "'" + pp + "' holds no prompts");
    if (backbone_hash(pb.model) != backbone_hash(l.model))
      fail(ErrorCode::invariant, "prompt checkpoint was trained on a different backbone");
    l.prompts = std::move(pb.prompts);
  }
  if (!want_prompts) l.prompts.reset();
  return l;
}

std::vector<EvalReport> all_rows(const std::vector<EvalReport>& rows) {
  std::vector<EvalReport> out;
  for (const auto& r : rows)
    if (r.task_id == "all") out.push_back(r);
  return out;
}

void append(std::vector<EvalReport>& dst, const std::vector<EvalReport>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

const std::vector<TaskSpec>& split_tasks(const World& w, const std::string& split) {
  return split == "train_tasks" ? w.train_tasks : w.test_tasks;
}

const std::vector<std::string> kSplits = {"train_tasks", "test_tasks"};

}  // namespace

void cmd_pretrain(const RunConfig& cfg) {
  OutputDir out(cfg.str("out"), "pretrain");
  World w = build_world(cfg);
  w.codebook = fit_world_codebook(cfg, w);
  const EpisodeContext ctx = make_context(cfg, w, parse_length(cfg.str("L")));
  CorpusConfig cc;
  cc.seq_len = static_cast<int>(cfg.integer("corpus_seq_len"));
  cc.classes = static_cast<int>(cfg.integer("corpus_classes"));
  cc.repeat_frac = cfg.real("corpus_repeat_frac");
  cc.repeat_min = static_cast<int>(cfg.integer("corpus_repeat_min"));
  cc.repeat_max = static_cast<int>(cfg.integer("corpus_repeat_max"));
  if (cc.seq_len - 1 > w.lm.max_seq_len) fail(ErrorCode::config, "corpus_seq_len exceeds max_seq_len + 1");
  const CorpusFn corpus = make_pretrain_corpus(ctx, w.pool, w.difficulty, cc, slot_seed(cfg, kCorpus));

  ModelParams<float> model = init_model<float>(w.lm, slot_seed(cfg, kModelInit));
  const auto trace = pretrain(model, corpus, pretrain_config(cfg));

  save_checkpoint(model, &w.codebook, nullptr, out.path("model.ckpt"));
  out.wrote("model.ckpt");
  write_loss_trace_csv(trace, out.path("pretrain_loss.csv"));
  out.wrote("pretrain_loss.csv");
  write_tasks_json(w, out.path("tasks.json"));
  out.wrote("tasks.json");
  out.finish(cfg);
}

void cmd_warmup(const RunConfig& cfg) {
  OutputDir out(cfg.str("out"), "warmup");
  Loaded in = load_inputs(cfg, out, false);
  const World& w = in.world;
  const EpisodeContext ctx = make_context(cfg, w, parse_length(cfg.str("L")));
  WarmupConfig wc = warmup_config(cfg);

  std::vector<LossTraceRow> trace;
  const std::string before = backbone_hash(in.model);
  wc.mode = WarmupMode::prompt_tuning;
  auto pt = warmup_train(in.model, ctx, w.train_tasks, wc);
  if (backbone_hash(in.model) != before) fail(ErrorCode::invariant, "backbone changed during prompt warmup");
  trace = pt.trace;
  save_checkpoint(in.model, &w.codebook, &pt.prompts, out.path("prompts.ckpt"));
  out.wrote("prompts.ckpt");

  if (warmup_mode_from_string(cfg.str("warmup_mode")) == WarmupMode::fine_tuning) {
    wc.mode = WarmupMode::fine_tuning;
    auto ft = finetune_warmup(in.model, ctx, w.train_tasks, wc);
    trace.insert(trace.end(), ft.trace.begin(), ft.trace.end());
    save_checkpoint(ft.model, &w.codebook, nullptr, out.path("model.ckpt"));
    out.wrote("model.ckpt");

    // Prompt tuning vs fine tuning, pooled over each split's tasks.
    std::ofstream f(out.path("warmup_comparison.csv"));
    f << "warmup_mode,split,accuracy_mean,accuracy_std,guessing_rate,n_repeats,n_episodes\n"
      << std::setprecision(9);
    for (const auto& split : kSplits) {
      if (split_tasks(w, split).empty()) continue;
      const EvalSpec spec = eval_spec(cfg, split);
      const auto p = all_rows(eval_accuracy(in.model, &pt.prompts, ctx, split_tasks(w, split), spec)).front();
      const auto q = all_rows(eval_accuracy(ft.model, nullptr, ctx, split_tasks(w, split), spec)).front();
      for (const auto& [mode, r] : {std::pair{"prompt_tuning", p}, std::pair{"fine_tuning", q}})
        f << mode << ',' << split << ',' << r.accuracy_mean << ',' << r.accuracy_std << ',' << r.guessing_rate << ','
          << r.n_repeats << ',' << r.n_episodes << '\n';
    }
    if (!f) fail(ErrorCode::io, "cannot write " + out.path("warmup_comparison.csv"));
    out.wrote("warmup_comparison.csv");
  }
  write_loss_trace_csv(trace, out.path("warmup_loss.csv"));
  out.wrote("warmup_loss.csv");
  out.finish(cfg);
}

void cmd_eval(const RunConfig& cfg) {
  OutputDir out(cfg.str("out"), "eval");
  Loaded in = load_inputs(cfg, out, true);
  const World& w = in.world;
  const EpisodeContext ctx = make_context(cfg, w, parse_length(cfg.str("L")));
  std::vector<EvalReport> rows;
  for (const auto& split : kSplits) {
    const auto& tasks = split_tasks(w, split);
    if (tasks.empty()) continue;
    const EvalSpec spec = eval_spec(cfg, split);
    if (in.prompts) append(rows, eval_accuracy(in.model, &*in.prompts, ctx, tasks, spec));
    append(rows, eval_accuracy(in.model, nullptr, ctx, tasks, spec));
    append(rows, eval_random(ctx, tasks, spec));
    append(rows, eval_linear_clf(ctx, tasks, spec));
  }
  write_eval_csv(rows, out.path("accuracy.csv"));
  out.wrote("accuracy.csv");
  write_guessing_csv(rows, out.path("guessing.csv"));
  out.wrote("guessing.csv");
  out.finish(cfg);
}

void cmd_attention(const RunConfig& cfg) {
  OutputDir out(cfg.str("out"), "attention");
  Loaded in = load_inputs(cfg, out, true);
  const World& w = in.world;
  const EpisodeContext ctx = make_context(cfg, w, parse_length(cfg.str("L")));
  const int total = static_cast<int>(cfg.integer("attention_episodes"));
  if (total < 1) fail(ErrorCode::config, "attention_episodes must be >= 1");
  const Dataset ds = build_balanced_dataset(ctx, w.train_tasks, total, EpisodeMode::icl, slot_seed(cfg, kAttention));
  std::vector<Layout> layouts;
  for (const auto& e : ds.episodes) layouts.push_back(assemble(e, w.vocab.sep(), ctx.L > 0));
  const auto profile = attention_profile(in.model, in.prompts ? &*in.prompts : nullptr, layouts);
  write_attention_csv(profile, out.path("attention.csv"));
  out.wrote("attention.csv");
  write_attention_pgm(profile, out.path("attention.pgm"));
  out.wrote("attention.pgm");
  out.finish(cfg);
}

void cmd_ablate_length(const RunConfig& cfg) {
  OutputDir out(cfg.str("out"), "ablate-length");
  Loaded in = load_inputs(cfg, out, false);
  const World& w = in.world;
  const auto lengths = split_list(cfg.str("ablate_lengths"));
  if (lengths.empty()) fail(ErrorCode::config, "ablate_lengths is empty");
  WarmupConfig wc = warmup_config(cfg);
  wc.mode = WarmupMode::prompt_tuning;

  std::ofstream f(out.path("length_ablation.csv"));
  f << "length,split,method,accuracy_mean,accuracy_std,guessing_rate,n_repeats,n_episodes\n" << std::setprecision(9);
  for (const auto& name : lengths) {
    const int L = parse_length(name);
    EpisodeContext ctx = make_context(cfg, w, L);
    ctx.utt_len_min = static_cast<int>(cfg.integer("ablate_utt_len_min"));
    ctx.utt_len_max = static_cast<int>(cfg.integer("ablate_utt_len_max"));
    if (ctx.utt_len_min < 1 || ctx.utt_len_max < ctx.utt_len_min) fail(ErrorCode::config, "bad ablation length range");
    const int longest = L > 0 ? L : ctx.utt_len_max;
    if (static_cast<int>(layout_length(ctx.n, longest)) > in.model.config.max_seq_len)
      fail(ErrorCode::config, "episodes at length " + name + " exceed max_seq_len");
    const auto pt = warmup_train(in.model, ctx, w.train_tasks, wc);
    for (const auto& split : kSplits) {
      const auto& tasks = split_tasks(w, split);
      if (tasks.empty()) continue;
      const EvalSpec spec = eval_spec(cfg, split);
      std::vector<EvalReport> rows;
      append(rows, all_rows(eval_accuracy(in.model, &pt.prompts, ctx, tasks, spec)));
      append(rows, all_rows(eval_accuracy(in.model, nullptr, ctx, tasks, spec)));
      append(rows, all_rows(eval_random(ctx, tasks, spec)));
      for (const auto& r : rows)
        f << (L > 0 ? name : "not_fixed") << ',' << split << ',' << to_string(r.method) << ',' << r.accuracy_mean
          << ',' << r.accuracy_std << ',' << r.guessing_rate << ',' << r.n_repeats << ',' << r.n_episodes << '\n';
    }
  }
  if (!f) fail(ErrorCode::io, "cannot write " + out.path("length_ablation.csv"));
  f.close();
  out.wrote("length_ablation.csv");
  out.finish(cfg);
}

void run_command(const std::string& name, const RunConfig& cfg) {
  if (name == "pretrain") return cmd_pretrain(cfg);
  if (name == "warmup") return cmd_warmup(cfg);
  if (name == "eval") return cmd_eval(cfg);
  if (name == "attention") return cmd_attention(cfg);
  if (name == "ablate-length") return cmd_ablate_length(cfg);
  fail(ErrorCode::config, "unknown command '" + name + "'");
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::invalid_argument:
      return 2;
    case ErrorCode::io:
    case ErrorCode::bad_magic:
    case ErrorCode::version_mismatch:
    case ErrorCode::truncated_file:
      return 3;
    case ErrorCode::invariant:
      return 4;
  }
  return 1;
}

}  // namespace slmicl
