#include "gist/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "gist/binary_io.hpp"
#include "gist/checkpoint.hpp"
#include "gist/error.hpp"
#include "gist/trainer.hpp"

namespace gist {

namespace {

constexpr std::string_view kDumpMagic = "GISTEM1";
constexpr std::array<Split, 3> kSplits{Split::many, Split::medium, Split::few};

std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "n/a";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pct(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure by index.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

double spread_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

}  // namespace

InferenceModel::InferenceModel(const Model& trained)
    : embedding_(trained.embedding), classifier_(trained.classifier), scoring_(trained.scoring) {
  classifier_.discard_aux();
}

InferenceModel::Prediction InferenceModel::predict(const Matrix& inputs) const {
  Prediction p;
  p.features = embedding_.infer(inputs);
  p.logits = constellation_logits(classifier_, p.features, /*use_aux=*/false, scoring_);
  p.predicted.resize(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto row = p.logits.logits.row(i);
    p.predicted[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return p;
}

EvalReport evaluate(const InferenceModel& model, const LongTailDataset& test,
                    std::uint64_t config_hash, std::uint64_t seed) {
  require(test.size() > 0, "evaluate: empty test set");
  require(test.dim() == model.embedding().input_dim(),
          "evaluate: test dimension " + std::to_string(test.dim()) + " differs from model input " +
              std::to_string(model.embedding().input_dim()));
  require(test.num_classes() == model.classifier().num_classes(),
          "evaluate: test class count differs from the classifier");
  require(test.balanced(), "evaluate: test set must be class-balanced");

  const auto pred = model.predict(test.samples);
  const std::size_t num_classes = test.num_classes();
  std::vector<std::size_t> correct(num_classes, 0);
  for (std::size_t i = 0; i < test.size(); ++i)
    if (pred.predicted[i] == test.labels[i]) ++correct[static_cast<std::size_t>(test.labels[i])];

  EvalReport r;
  r.samples = test.size();
  r.config_hash = config_hash;
  r.seed = seed;
  r.split = test.split;
  r.per_class_acc.resize(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k)
    r.per_class_acc[k] =
        static_cast<double>(correct[k]) / static_cast<double>(test.class_counts[k]);

  double total = 0.0;
  std::array<double, 3> split_sum{};
  std::array<std::size_t, 3> split_n{};
  for (std::size_t k = 0; k < num_classes; ++k) {
    total += r.per_class_acc[k];
    const auto s = static_cast<std::size_t>(test.split[k]);
    split_sum[s] += r.per_class_acc[k];
    ++split_n[s];
  }
  r.accuracy.overall = total / static_cast<double>(num_classes);
  for (std::size_t s = 0; s < 3; ++s)
    if (split_n[s]) r.accuracy.by_split[s] = split_sum[s] / static_cast<double>(split_n[s]);
  r.usage = constellation_usage(model.classifier(), pred.features, test.labels, model.scoring());
  return r;
}

EvalReport evaluate(const Checkpoint& ckpt, const LongTailDataset& test) {
  return evaluate(InferenceModel(ckpt.model), test, ckpt.config_hash, ckpt.config().seed);
}

std::string format_report(const EvalReport& r) {
  std::ostringstream s;
  s << "config_hash = " << hex64(r.config_hash) << "\n"
    << "seed = " << r.seed << "\n"
    << "samples = " << r.samples << "\n"
    << "overall_acc = " << fmt(r.accuracy.overall) << "\n";
  for (auto sp : kSplits) {
    const auto v = r.accuracy[sp];
    s << "acc_" << to_string(sp) << " = " << (v ? fmt(*v) : "n/a") << "\n";
  }
  s << "per_class_acc = ";
  for (std::size_t k = 0; k < r.per_class_acc.size(); ++k)
    s << (k ? "," : "") << fmt(r.per_class_acc[k]);
  s << "\nsplit = ";
  for (std::size_t k = 0; k < r.split.size(); ++k) s << (k ? "," : "") << to_string(r.split[k]);
  s << "\nusage = ";
  for (std::size_t j = 0; j < r.usage.histogram.size(); ++j)
    s << (j ? "," : "") << fmt(r.usage.histogram[j]);
  s << "\nclasses_using_all_members = " << r.usage.classes_using_all << "\n";
  return s.str();
}

std::string format_table(const EvalReport& r) {
  std::ostringstream s;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s\n", "", "Overall", "Many", "Medium",
                "Few");
  s << line;
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s\n", "acc (%)",
                pct(r.accuracy.overall).c_str(), pct(r.accuracy[Split::many]).c_str(),
                pct(r.accuracy[Split::medium]).c_str(), pct(r.accuracy[Split::few]).c_str());
  s << line << "member usage (%):";
  for (std::size_t j = 0; j < r.usage.histogram.size(); ++j)
    s << " " << (j == 0 ? "w" : "d" + std::to_string(j)) << "=" << pct(r.usage.histogram[j]);
  s << "\nclasses using every member: " << r.usage.classes_using_all << " of "
    << r.usage.classes_seen << "\n";
  return s.str();
}

std::vector<AblationVariant> ablation_variants(const TrainConfig& base) {
  const auto with = [&](Mode mode, std::size_t m, GVariant g) {
    TrainConfig c = base;
    c.mode = mode;
    c.displacements = m;
    c.g = g;
    return c;
  };
  const auto m = base.displacements;
  return {
      {"Plain", with(Mode::plain, 0, GVariant::additive)},
      {"COS+CB", with(Mode::cos_cb, 0, GVariant::additive)},
      {"COS+CS+CB", with(Mode::cos_cs_cb, m, base.g)},
      {"COS+CS+GIST", with(Mode::gist, m, base.g)},
      {"COS+GIST", with(Mode::gist, 0, GVariant::additive)},
      {"merged-centers", with(Mode::merged_centers, m, base.g)},
      {"g-rotation", with(Mode::gist, m, GVariant::rotation)},
      {"g-mlp", with(Mode::gist, m, GVariant::mlp)},
  };
}

std::vector<AblationVariant> m_sweep_variants(const TrainConfig& base,
                                              const std::vector<std::size_t>& counts) {
  std::vector<AblationVariant> out;
  for (auto m : counts) {
    TrainConfig c = base;
    c.mode = Mode::gist;
    c.displacements = m;
    out.push_back({"GIST m=" + std::to_string(m), c});
  }
  return out;
}

std::vector<AblationResult> run_ablation(const DatasetPair& data,
                                         const std::vector<AblationVariant>& variants,
                                         std::size_t jobs) {
  require(!variants.empty(), "run_ablation: no variants");
  // One first-phase run per distinct pretraining config.
  std::map<std::uint64_t, std::size_t> slot_of;
  std::vector<std::size_t> first_user;
  std::vector<std::size_t> slot(variants.size());
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto h = pretrain_hash(variants[i].config);
    auto [it, inserted] = slot_of.emplace(h, first_user.size());
    if (inserted) first_user.push_back(i);
    slot[i] = it->second;
  }
  std::vector<Checkpoint> pretrained(first_user.size());
  parallel_for(first_user.size(), jobs, [&](std::size_t s) {
    pretrained[s] = pretrain(data.train, variants[first_user[s]].config);
  });

  std::vector<AblationResult> out(variants.size());
  parallel_for(variants.size(), jobs, [&](std::size_t i) {
    const auto& v = variants[i];
    const auto& pre = pretrained[slot[i]];
    const Checkpoint final_ckpt =
        pre.phase == Phase::done ? pre : train_gist(pre, data.train, v.config);
    out[i] = {v.name, v.config, evaluate(final_ckpt, data.test), fingerprint(final_ckpt)};
  });
  return out;
}

double BatteryRow::mean_overall() const {
  std::vector<double> v;
  for (const auto& r : per_seed) v.push_back(r.accuracy.overall);
  return mean_of(v);
}

double BatteryRow::spread_overall() const {
  std::vector<double> v;
  for (const auto& r : per_seed) v.push_back(r.accuracy.overall);
  return spread_of(v);
}

double BatteryRow::mean(Split s) const {
  std::vector<double> v;
  for (const auto& r : per_seed) {
    if (!r.accuracy[s]) return std::numeric_limits<double>::quiet_NaN();
    v.push_back(*r.accuracy[s]);
  }
  return mean_of(v);
}

double BatteryRow::spread(Split s) const {
  std::vector<double> v;
  for (const auto& r : per_seed) {
    if (!r.accuracy[s]) return std::numeric_limits<double>::quiet_NaN();
    v.push_back(*r.accuracy[s]);
  }
  return spread_of(v);
}

std::vector<BatteryRow> run_ablation_battery(const DataConfig& data,
                                             const std::vector<AblationVariant>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             std::size_t jobs) {
  require(!seeds.empty(), "run_ablation_battery: no seeds");
  std::vector<BatteryRow> rows(variants.size());
  for (std::size_t i = 0; i < variants.size(); ++i) rows[i].name = variants[i].name;
  for (auto seed : seeds) {
    DataConfig dc = data;
    dc.seed = seed;
    const auto pair = generate(dc);
    auto seeded = variants;
    for (auto& v : seeded) v.config.seed = seed;
    const auto results = run_ablation(pair, seeded, jobs);
    for (std::size_t i = 0; i < results.size(); ++i) rows[i].per_seed.push_back(results[i].report);
  }
  return rows;
}

std::string format_ablation(const std::vector<BatteryRow>& rows) {
  std::ostringstream s;
  char line[200];
  const std::size_t seeds = rows.empty() ? 0 : rows.front().per_seed.size();
  s << "accuracy (%), mean +- spread over " << seeds << " seed(s)\n";
  std::snprintf(line, sizeof line, "%-16s %16s %16s %16s %16s\n", "", "Overall", "Many", "Medium",
                "Few");
  s << line;
  const auto cell = [](double mean, double spread) {
    if (std::isnan(mean)) return std::string("n/a");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f +- %.2f", 100.0 * mean, 100.0 * spread);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-16s %16s %16s %16s %16s\n", r.name.c_str(),
                  cell(r.mean_overall(), r.spread_overall()).c_str(),
                  cell(r.mean(Split::many), r.spread(Split::many)).c_str(),
                  cell(r.mean(Split::medium), r.spread(Split::medium)).c_str(),
                  cell(r.mean(Split::few), r.spread(Split::few)).c_str());
    s << line;
  }
  return s.str();
}

std::string ablation_csv(const std::vector<BatteryRow>& rows) {
  std::ostringstream s;
  s << "variant,seed,overall,many,medium,few,usage\n";
  for (const auto& r : rows) {
    for (const auto& rep : r.per_seed) {
      s << r.name << "," << rep.seed << "," << fmt(rep.accuracy.overall);
      for (auto sp : kSplits) s << "," << (rep.accuracy[sp] ? fmt(*rep.accuracy[sp]) : "");
      s << ",";
      for (std::size_t j = 0; j < rep.usage.histogram.size(); ++j)
        s << (j ? ";" : "") << fmt(rep.usage.histogram[j], 4);
      s << "\n";
    }
  }
  return s.str();
}

ClassSelection ClassSelection::parse(const std::string& text, const LongTailDataset& ds) {
  ClassSelection sel;
  const auto bad = [&](const std::string& why) -> ContractError {
    return ContractError("class selection '" + text + "': " + why);
  };
  const auto number = [&](const std::string& t) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(t, &pos);
    } catch (const std::exception&) {
      throw bad("'" + t + "' is not a count");
    }
    if (pos != t.size() || t.empty() || t[0] == '-') throw bad("'" + t + "' is not a count");
    return static_cast<std::size_t>(v);
  };

  if (text == "all") {
    for (std::size_t k = 0; k < ds.num_classes(); ++k) sel.classes.push_back(k);
  } else if (text.rfind("classes:", 0) == 0) {
    std::stringstream ss(text.substr(8));
    for (std::string t; std::getline(ss, t, ',');) {
      const auto k = number(t);
      if (k >= ds.num_classes()) throw bad("class " + t + " out of range");
      sel.classes.push_back(k);
    }
  } else {
    std::stringstream ss(text);
    for (std::string t; std::getline(ss, t, ',');) {
      const auto colon = t.find(':');
      if (colon == std::string::npos) throw bad("expected split:count, got '" + t + "'");
      Split split;
      try {
        split = parse_split(t.substr(0, colon));
      } catch (const ContractError&) {
        throw bad("unknown split '" + t.substr(0, colon) + "'");
      }
      const auto want = number(t.substr(colon + 1));
      std::size_t taken = 0;
      for (std::size_t k = 0; k < ds.num_classes() && taken < want; ++k)
        if (ds.split[k] == split) {
          sel.classes.push_back(k);
          ++taken;
        }
      if (taken < want)
        throw bad("only " + std::to_string(taken) + " " + to_string(split) + " classes exist");
    }
  }
  std::sort(sel.classes.begin(), sel.classes.end());
  sel.classes.erase(std::unique(sel.classes.begin(), sel.classes.end()), sel.classes.end());
  if (sel.classes.empty()) throw bad("selects no classes");
  return sel;
}

EmbeddingDump dump_embeddings(const InferenceModel& model, const LongTailDataset& ds,
                              const ClassSelection& selection) {
  require(!selection.classes.empty(), "dump_embeddings: empty class selection");
  std::vector<bool> chosen(ds.num_classes(), false);
  for (auto k : selection.classes) {
    require(k < ds.num_classes(), "dump_embeddings: class out of range");
    chosen[k] = true;
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (chosen[static_cast<std::size_t>(ds.labels[i])]) rows.push_back(i);
  require(!rows.empty(), "dump_embeddings: selected classes have no samples");

  const auto batch = ds.gather(rows);
  const auto pred = model.predict(batch.inputs);
  EmbeddingDump d;
  d.features = pred.features;
  d.labels = batch.labels;
  d.predicted = pred.predicted;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto k = static_cast<std::size_t>(batch.labels[i]);
    d.split.push_back(ds.split[k]);
    d.member.push_back(pred.logits.argmax(i, k));
  }
  return d;
}

void save_embedding_dump(const std::filesystem::path& path, const EmbeddingDump& d) {
  require(d.features.rows() == d.rows() && d.split.size() == d.rows() &&
              d.predicted.size() == d.rows() && d.member.size() == d.rows(),
          "save_embedding_dump: column lengths differ");
  ByteWriter w;
  w.put_magic(kDumpMagic, 8);
  w.put_u64(d.rows());
  w.put_u32(static_cast<std::uint32_t>(d.features.cols()));
  w.put_f64s(d.features.data());
  for (int y : d.labels) w.put_i32(y);
  for (auto s : d.split) w.put_u8(static_cast<std::uint8_t>(s));
  for (int p : d.predicted) w.put_i32(p);
  for (auto m : d.member) w.put_u32(m);
  write_file_atomic(path, w.bytes());
}

EmbeddingDump load_embedding_dump(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic(kDumpMagic, 8);
  const auto n = r.get_u64();
  const auto dim = r.get_u32();
  if (n > r.remaining() / (8 * static_cast<std::uint64_t>(dim) + 13))
    throw FormatError(path.string() + ": row count exceeds the file");
  EmbeddingDump d;
  d.features = Matrix(n, dim);
  r.get_f64s(d.features.data());
  d.labels.resize(n);
  for (auto& y : d.labels) y = r.get_i32();
  d.split.resize(n);
  for (auto& s : d.split) {
    const auto v = r.get_u8();
    if (v > 2) throw FormatError(path.string() + ": invalid split tag");
    s = static_cast<Split>(v);
  }
  d.predicted.resize(n);
  for (auto& p : d.predicted) p = r.get_i32();
  d.member.resize(n);
  for (auto& m : d.member) m = r.get_u32();
  r.expect_end();
  return d;
}

}  // namespace gist
