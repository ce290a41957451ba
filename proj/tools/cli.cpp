#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <optional>
#include <sstream>

#include "gist/binary_io.hpp"
#include "gist/checkpoint.hpp"
#include "gist/config.hpp"
#include "gist/datagen.hpp"
#include "gist/error.hpp"
#include "gist/eval.hpp"
#include "gist/trainer.hpp"

namespace gist::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::string ckpt;
  std::string select;
  std::string dump_out;
  std::string seeds = "1,2,3";
  std::string rows;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> m;
  std::optional<std::string> g;
  std::optional<std::string> mode;
  std::optional<double> lambda;
  std::size_t jobs = 1;
  std::size_t save_every = 0;
  bool ablate = false;
  bool m_sweep = false;
};

struct RunConfig {
  fs::path path;
  DataConfig data;
  TrainConfig train;

  // Canonical merged text; the shared seed appears once.
  std::string text() const {
    std::string out = data.to_text();
    std::istringstream t(train.to_text());
    for (std::string line; std::getline(t, line);)
      if (line.rfind("seed = ", 0) != 0) out += line + "\n";
    return out;
  }
};

std::string fmt_number(std::uint64_t v) { return std::to_string(v); }

std::string format_double(double v, int digits = 6) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunConfig load_config(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config", 0, "--config is required");
  auto kv = KeyValues::load(o.config);
  auto known = DataConfig::keys();
  for (const auto& k : TrainConfig::keys()) known.insert(k);
  kv.check_known(known);
  if (o.seed) kv.set("seed", fmt_number(*o.seed));
  if (o.m) kv.set("displacements", std::to_string(*o.m));
  if (o.g) kv.set("g", *o.g);
  if (o.mode) kv.set("mode", *o.mode);
  if (o.lambda) {
    std::ostringstream s;
    s.precision(17);
    s << *o.lambda;
    kv.set("lambda", s.str());
  }
  RunConfig rc;
  rc.path = o.config;
  rc.data = DataConfig::from(kv);
  rc.train = TrainConfig::from(kv);
  try {
    rc.data.validate();
    rc.train.validate();
  } catch (const ContractError& e) {
    throw ConfigError("", 0, o.config + ": " + e.what());
  }
  return rc;
}

/// Records what a command did and every file it wrote.
class Manifest {
 public:
  Manifest(fs::path dir, std::string command) : dir_(std::move(dir)) {
    set("command", std::move(command));
    set("started", timestamp());
  }
  void set(const std::string& key, std::string value) {
    for (auto& [k, v] : fields_)
      if (k == key) {
        v = std::move(value);
        return;
      }
    fields_.emplace_back(key, std::move(value));
  }
  void add(const fs::path& file) { artifacts_.push_back(file); }

  void write() {
    set("finished", timestamp());
    std::ostringstream s;
    s << "# gistlab run manifest\n";
    for (const auto& [k, v] : fields_) s << k << " = " << v << "\n";
    for (std::size_t i = 0; i < artifacts_.size(); ++i) {
      const auto rel = fs::relative(artifacts_[i], dir_).generic_string();
      s << "artifact." << i << " = " << rel << " " << hex64(fnv1a(read_file(artifacts_[i])))
        << "\n";
    }
    write_text_atomic(dir_ / "manifest", s.str());
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> fields_;
  std::vector<fs::path> artifacts_;
};

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void describe_config(Manifest& m, const RunConfig& rc) {
  m.set("config_path", rc.path.string());
  m.set("config_hash", hex64(fnv1a(rc.text())));
  m.set("data_hash", hex64(rc.data.hash()));
  m.set("train_hash", hex64(rc.train.hash()));
  m.set("seed", fmt_number(rc.train.seed));
}

std::vector<fs::path> save_pair(const fs::path& dir, const DatasetPair& pair) {
  make_dirs(dir);
  const auto train = dir / "train.gds";
  const auto test = dir / "test.gds";
  save_dataset(train, pair.train);
  save_dataset(test, pair.test);
  return {train, test, fs::path(train.string() + ".meta"), fs::path(test.string() + ".meta")};
}

DatasetPair load_pair(const fs::path& dir) {
  return {load_dataset(dir / "train.gds"), load_dataset(dir / "test.gds")};
}

void check_compatible(const Checkpoint& ckpt, const LongTailDataset& ds) {
  const auto& net = ckpt.model.embedding;
  if (net.input_dim() != ds.dim() || ckpt.model.classifier.num_classes() != ds.num_classes())
    throw FormatError("checkpoint expects " + std::to_string(net.input_dim()) + "-d inputs and " +
                      std::to_string(ckpt.model.classifier.num_classes()) +
                      " classes; dataset has " + std::to_string(ds.dim()) + "-d inputs and " +
                      std::to_string(ds.num_classes()) + " classes");
  if (ds.config_hash != 0 && ckpt.data_hash != ds.config_hash)
    throw FormatError("checkpoint data hash " + hex64(ckpt.data_hash) +
                      " does not match dataset hash " + hex64(ds.config_hash));
}

std::string metrics_header() { return "epoch,phase,L,L_c,L_r,lr,tau,overall,many,medium,few\n"; }

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream s;
  s << m.epoch << "," << to_string(m.phase) << "," << format_double(m.loss, 8) << ","
    << format_double(m.loss_balanced, 8) << "," << format_double(m.loss_random, 8) << ","
    << format_double(m.lr, 8) << "," << format_double(m.tau, 6);
  if (m.test) {
    s << "," << format_double(m.test->overall);
    for (auto sp : {Split::many, Split::medium, Split::few}) {
      const auto v = (*m.test)[sp];
      s << "," << (v ? format_double(*v) : "");
    }
  } else {
    s << ",,,,";
  }
  return s.str() + "\n";
}

// Rows of an earlier metrics file up to and including `epoch`.
std::string previous_metrics(const fs::path& path, std::size_t epoch) {
  if (!fs::exists(path)) return metrics_header();
  std::istringstream in(read_text_file(path));
  std::string out = metrics_header();
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) <= epoch) out += line + "\n";
  }
  return out;
}

std::string audit_summary(const std::vector<AuditRecord>& audit) {
  std::size_t steps = 0, delta_from_c = 0, w_from_r = 0, v_from_c = 0, tau_decayed = 0;
  std::size_t gist_steps = 0;
  for (const auto& a : audit) {
    ++steps;
    if (a.phase != Phase::gist) continue;
    ++gist_steps;
    if (a.audit.displacements & kFromBalanced) ++delta_from_c;
    if (a.audit.mlp & kFromBalanced) ++delta_from_c;
    if (a.audit.centers & kFromRandom) ++w_from_r;
    if (a.audit.aux_centers & kFromBalanced) ++v_from_c;
    if (a.audit.tau_decayed) ++tau_decayed;
  }
  std::ostringstream s;
  s << "steps = " << steps << "\n"
    << "second_phase_steps = " << gist_steps << "\n"
    << "structure_grads_from_L_c = " << delta_from_c << "\n"
    << "center_grads_from_L_r = " << w_from_r << "\n"
    << "aux_center_grads_from_L_c = " << v_from_c << "\n"
    << "tau_weight_decay_steps = " << tau_decayed << "\n";
  return s.str();
}

void write_ablation(const fs::path& reports, Manifest& manifest, const std::vector<BatteryRow>& rows,
                    std::ostream& out) {
  make_dirs(reports);
  const auto txt = reports / "ablation.txt";
  const auto csv = reports / "ablation.csv";
  const auto table = format_ablation(rows);
  write_text_atomic(txt, table);
  write_text_atomic(csv, ablation_csv(rows));
  manifest.add(txt);
  manifest.add(csv);
  out << table;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const auto rc = load_config(o);
  if (o.out.empty()) throw ConfigError("--out", 0, "--out is required");
  const fs::path dir = o.out;
  make_dirs(dir);
  Manifest manifest(dir, "gen-data");
  describe_config(manifest, rc);
  const auto pair = generate(rc.data);
  for (const auto& f : save_pair(dir, pair)) manifest.add(f);
  manifest.write();
  out << "wrote " << pair.train.size() << " training and " << pair.test.size()
      << " test samples to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err, bool pretrain_only) {
  const auto rc = load_config(o);
  if (o.out.empty()) throw ConfigError("--out", 0, "--out is required");
  const fs::path run = o.out;
  const auto ckpt_dir = run / "ckpt";
  const auto reports = run / "reports";
  make_dirs(ckpt_dir);
  make_dirs(reports);
  Manifest manifest(run, pretrain_only ? "pretrain" : o.ablate ? "train --ablate" : "train");
  describe_config(manifest, rc);
  const auto config_copy = run / "config.cfg";
  write_text_atomic(config_copy, rc.text());
  manifest.add(config_copy);

  DatasetPair pair;
  if (!o.data.empty()) {
    pair = load_pair(o.data);
    manifest.set("data", fs::absolute(o.data).string());
  } else {
    pair = generate(rc.data);
    for (const auto& f : save_pair(run / "data", pair)) manifest.add(f);
    manifest.set("data", "data");
  }

  if (o.ablate) {
    std::vector<BatteryRow> rows;
    for (auto& r : run_ablation(pair, ablation_variants(rc.train), o.jobs))
      rows.push_back({r.name, {r.report}});
    write_ablation(reports, manifest, rows, out);
    manifest.write();
    return kOk;
  }

  std::optional<Trainer> trainer;
  if (!o.resume.empty()) {
    const auto ckpt = load_checkpoint(o.resume);
    trainer.emplace(rc.train, pair.train, ckpt);
    manifest.set("resumed_from", o.resume + " (epoch " + std::to_string(ckpt.epoch) + ")");
  } else {
    trainer.emplace(rc.train, pair.train);
  }
  auto& t = *trainer;
  t.set_test_set(&pair.test);

  const auto metrics_path = run / "metrics.csv";
  std::string metrics = o.resume.empty() ? metrics_header() : previous_metrics(metrics_path, t.epoch());
  const std::size_t total = rc.train.total_epochs();
  const auto pretrain_path = ckpt_dir / "pretrain.ckpt";
  std::vector<fs::path> epoch_ckpts;
  t.set_epoch_observer([&](const EpochMetrics& m, const Trainer& tr) {
    metrics += metrics_row(m);
    write_text_atomic(metrics_path, metrics);
    if (m.epoch == rc.train.epochs_pretrain) save_checkpoint(pretrain_path, tr.checkpoint());
    if (o.save_every && m.epoch % o.save_every == 0 && m.epoch < total) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03zu.ckpt", m.epoch);
      save_checkpoint(ckpt_dir / name, tr.checkpoint());
      epoch_ckpts.push_back(ckpt_dir / name);
    }
    out << "epoch " << m.epoch << "/" << total << " [" << to_string(m.phase)
        << "] L=" << format_double(m.loss, 5) << " lr=" << format_double(m.lr, 5)
        << " tau=" << format_double(m.tau, 3);
    if (m.test) {
      out << " acc=" << format_double(m.test->overall, 4);
      if (const auto few = (*m.test)[Split::few]) out << " few=" << format_double(*few, 4);
    }
    out << "\n";
  });

  const auto finish_manifest = [&] {
    if (fs::exists(metrics_path)) manifest.add(metrics_path);
    if (fs::exists(pretrain_path)) manifest.add(pretrain_path);
    for (const auto& p : epoch_ckpts) manifest.add(p);
    const auto audit_path = reports / "routing_audit.txt";
    write_text_atomic(audit_path, audit_summary(t.audit()));
    manifest.add(audit_path);
  };

  try {
    t.run_until(pretrain_only ? rc.train.epochs_pretrain : total);
  } catch (const DivergenceError& e) {
    const auto last_good = ckpt_dir / "last_good.ckpt";
    save_checkpoint(last_good, t.last_good());
    finish_manifest();
    manifest.add(last_good);
    manifest.set("status", "diverged");
    manifest.write();
    err << "error: " << e.what() << "\nlast good checkpoint (epoch " << t.last_good().epoch
        << "): " << last_good.string() << "\n";
    return kDivergence;
  }

  finish_manifest();
  const auto final_ckpt = t.checkpoint();
  if (!pretrain_only) {
    const auto final_path = ckpt_dir / "final.ckpt";
    save_checkpoint(final_path, final_ckpt);
    manifest.add(final_path);
  }
  const auto report = evaluate(final_ckpt, pair.test);
  const auto report_path = reports / (pretrain_only ? "pretrain.txt" : "final.txt");
  write_text_atomic(report_path, format_report(report));
  manifest.add(report_path);
  manifest.set("final_fingerprint", hex64(fingerprint(final_ckpt)));
  manifest.set("status", "ok");
  manifest.write();
  out << format_table(report);
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.ckpt.empty()) throw ConfigError("--ckpt", 0, "--ckpt is required");
  if (o.data.empty()) throw ConfigError("--data", 0, "--data is required");
  const auto ckpt = load_checkpoint(o.ckpt);
  const auto test = load_dataset(fs::path(o.data) / "test.gds");
  check_compatible(ckpt, test);
  const auto report = evaluate(ckpt, test);
  const fs::path report_path = o.out.empty() ? fs::path(o.ckpt + ".eval.txt") : fs::path(o.out);
  write_text_atomic(report_path, format_report(report));
  out << format_table(report);
  if (!o.select.empty()) {
    const auto sel = ClassSelection::parse(o.select, test);
    const fs::path dump_path = o.dump_out.empty() ? fs::path(o.ckpt + ".emb") : fs::path(o.dump_out);
    const auto dump = dump_embeddings(InferenceModel(ckpt.model), test, sel);
    save_embedding_dump(dump_path, dump);
    out << "wrote " << dump.rows() << " embedding rows to " << dump_path.string() << "\n";
  }
  return kOk;
}

int cmd_dump(const Options& o, std::ostream& out) {
  if (o.ckpt.empty()) throw ConfigError("--ckpt", 0, "--ckpt is required");
  if (o.data.empty()) throw ConfigError("--data", 0, "--data is required");
  if (o.out.empty()) throw ConfigError("--out", 0, "--out is required");
  const auto ckpt = load_checkpoint(o.ckpt);
  const auto test = load_dataset(fs::path(o.data) / "test.gds");
  check_compatible(ckpt, test);
  const auto sel = ClassSelection::parse(o.select.empty() ? "all" : o.select, test);
  const auto dump = dump_embeddings(InferenceModel(ckpt.model), test, sel);
  save_embedding_dump(o.out, dump);
  out << "wrote " << dump.rows() << " embedding rows to " << o.out << "\n";
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string t; std::getline(ss, t, ',');) {
    try {
      std::size_t pos = 0;
      seeds.push_back(std::stoull(t, &pos));
      if (pos != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw ConfigError("--seeds", 0, "--seeds: '" + t + "' is not a seed");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds", 0, "--seeds: empty list");
  return seeds;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const auto rc = load_config(o);
  if (o.out.empty()) throw ConfigError("--out", 0, "--out is required");
  const fs::path run = o.out;
  make_dirs(run);
  Manifest manifest(run, o.m_sweep ? "ablate --m-sweep" : "ablate");
  describe_config(manifest, rc);
  const auto seeds = parse_seeds(o.seeds);
  manifest.set("seeds", o.seeds);
  const auto config_copy = run / "config.cfg";
  write_text_atomic(config_copy, rc.text());
  manifest.add(config_copy);
  auto variants = ablation_variants(rc.train);
  if (o.m_sweep)
    for (auto& v : m_sweep_variants(rc.train, {2, 4, 8, 16})) variants.push_back(v);
  if (!o.rows.empty()) {
    std::vector<AblationVariant> kept;
    std::stringstream ss(o.rows);
    for (std::string name; std::getline(ss, name, ',');) {
      const auto it = std::find_if(variants.begin(), variants.end(),
                                   [&](const AblationVariant& v) { return v.name == name; });
      if (it == variants.end()) throw ConfigError("--rows", 0, "--rows: unknown row '" + name + "'");
      kept.push_back(*it);
    }
    variants = std::move(kept);
  }
  const auto rows = run_ablation_battery(rc.data, variants, seeds, o.jobs);
  write_ablation(run / "reports", manifest, rows, out);
  manifest.write();
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"gistlab: constellation classifiers with routed dual-batch training"};
  app.require_subcommand(1);
  Options o;

  const auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Configuration file (key = value)")->required();
    c->add_option("--seed", o.seed, "Override the run seed");
  };
  const auto add_overrides = [&](CLI::App* c) {
    c->add_option("--m", o.m, "Number of displacements");
    c->add_option("--g", o.g, "Member map")->check(CLI::IsMember({"additive", "rotation", "mlp"}));
    c->add_option("--lambda", o.lambda, "Weight of the class-balanced loss");
    c->add_option("--mode", o.mode, "Second-phase objective");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate train/test datasets");
  add_config(gen);
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Run the first training phase only");
  add_config(pre);
  add_overrides(pre);
  pre->add_option("--data", o.data, "Dataset directory (generated when omitted)");
  pre->add_option("--out", o.out, "Run directory")->required();

  auto* train = app.add_subcommand("train", "Pretrain and train the constellation classifier");
  add_config(train);
  add_overrides(train);
  train->add_option("--data", o.data, "Dataset directory (generated when omitted)");
  train->add_option("--out", o.out, "Run directory")->required();
  train->add_option("--resume", o.resume, "Continue from a checkpoint");
  train->add_option("--save-every", o.save_every, "Checkpoint every N epochs");
  train->add_flag("--ablate", o.ablate, "Run the ablation rows on this dataset instead");
  train->add_option("--jobs", o.jobs, "Parallel ablation rows")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
  ev->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--out", o.out, "Report file");
  ev->add_option("--dump-embeddings", o.select, "Class selection to dump, e.g. many:5,few:5");
  ev->add_option("--dump-out", o.dump_out, "Embedding dump file");

  auto* abl = app.add_subcommand("ablate", "Ablation battery over several seeds");
  add_config(abl);
  add_overrides(abl);
  abl->add_option("--out", o.out, "Run directory")->required();
  abl->add_option("--seeds", o.seeds, "Comma-separated seeds");
  abl->add_option("--jobs", o.jobs, "Parallel rows")->check(CLI::PositiveNumber);
  abl->add_flag("--m-sweep", o.m_sweep, "Add GIST rows for m in {2, 4, 8, 16}");
  abl->add_option("--rows", o.rows, "Comma-separated subset of row names");

  auto* dump = app.add_subcommand("dump-embeddings", "Write test-set features for plotting");
  dump->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  dump->add_option("--data", o.data, "Dataset directory")->required();
  dump->add_option("--select", o.select, "all | classes:i,j | many:n,medium:n,few:n");
  dump->add_option("--out", o.out, "Output file")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (pre->parsed()) return cmd_train(o, out, err, true);
    if (train->parsed()) return cmd_train(o, out, err, false);
    if (ev->parsed()) return cmd_eval(o, out);
    if (abl->parsed()) return cmd_ablate(o, out);
    if (dump->parsed()) return cmd_dump(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const FormatError& e) {
    err << "artifact mismatch: " << e.what() << "\n";
    return kArtifactMismatch;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace gist::cli
