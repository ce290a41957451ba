// Acceptance checks for the constellation classifier and its training
// scheme. Prints one PASS/FAIL line per criterion; exits non-zero if any
// criterion fails. Thresholds are fixed here and are not tuned per run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "gist/binary_io.hpp"
#include "gist/checkpoint.hpp"
#include "gist/config.hpp"
#include "gist/eval.hpp"
#include "gist/numeric.hpp"
#include "gist/trainer.hpp"
#include "support.hpp"

using namespace gist;
using gist::testing::Block;
using gist::testing::fd_close;
using gist::testing::kink_margin;
using gist::testing::model_blocks;
using gist::testing::numeric_partial;
using gist::testing::random_batch;

namespace {

constexpr double kUsageFloor = 0.05;           // criterion 8
constexpr double kScaleTolerance = 1e-10;      // criterion 4
constexpr double kRotationTolerance = 1e-10;   // criterion 5
constexpr std::size_t kRotationTriples = 100;  // criterion 5, per dimension

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

struct Defaults {
  DataConfig data;
  TrainConfig train;
};

Defaults load_defaults() {
  const auto kv = KeyValues::load(GIST_DEFAULT_CONFIG);
  return {DataConfig::from(kv), TrainConfig::from(kv)};
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// --- 1 -------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  std::size_t checked = 0;
  double worst = 0.0;
  const double lambda = 0.5;
  for (auto g : {GVariant::additive, GVariant::rotation, GVariant::mlp}) {
    Rng rng = Rng(101).split(static_cast<std::uint64_t>(g));
    Model model{EmbeddingNet::make(6, {12}, 8, Activation::relu, rng),
                ConstellationClassifier::make(5, 8, 0, g, rng), Scoring::cosine};
    model.classifier.init_structure(3, g, rng, 0.1);
    for (auto& x : model.classifier.mutable_aux_centers().data()) x += 0.1 * rng.normal();

    // Resample until no relu unit or member max is within reach of the
    // finite-difference step.
    LabeledBatch bc, br;
    for (int tries = 0;; ++tries) {
      bc = random_batch(16, 6, 5, rng);
      br = random_batch(16, 6, 5, rng);
      if (kink_margin(model, bc, false) > 5e-3 && kink_margin(model, br, true) > 5e-3) break;
      if (tries > 10000) {
        o.fail("could not draw a batch away from kinks");
        return o;
      }
    }
    const auto routing = Routing::gist();
    const auto lc = [&](const Model& m) { return loss_class_balanced(m, bc, routing.balanced).loss; };
    const auto lr = [&](const Model& m) { return loss_random(m, br, routing.random).loss; };
    // A block's gradient in L is the derivative of the losses routed to it.
    const auto routed_l = [&](Provenance from) {
      return [&, from](const Model& m) {
        double v = 0.0;
        if (from & kFromRandom) v += lr(m);
        if (from & kFromBalanced) v += lambda * lc(m);
        return v;
      };
    };

    struct Case {
      std::string name;
      GradientBundle grads;
      std::function<std::function<double(const Model&)>(Provenance)> objective;
    };
    std::vector<Case> cases;
    cases.push_back({"L_c", loss_class_balanced(model, bc, routing.balanced).grads,
                     [&](Provenance) { return std::function<double(const Model&)>(lc); }});
    cases.push_back({"L_r", loss_random(model, br, routing.random).grads,
                     [&](Provenance) { return std::function<double(const Model&)>(lr); }});
    cases.push_back({"L", loss_overall(model, bc, br, lambda, routing).grads,
                     [&](Provenance p) { return std::function<double(const Model&)>(routed_l(p)); }});

    for (const auto& c : cases) {
      for (const auto& block : model_blocks(model)) {
        const double* grad = block.grad(c.grads);
        if (!grad) continue;
        const auto f = c.objective(block.from(c.grads));
        for (std::size_t i = 0; i < block.size(model); ++i) {
          const double fd = numeric_partial(model, block, i, f);
          ++checked;
          worst = std::max(worst, std::abs(grad[i] - fd));
          if (!fd_close(grad[i], fd))
            o.fail(to_string(g) + " " + c.name + " " + block.name + "[" + std::to_string(i) +
                   "]: analytic " + fmt("%.10g", grad[i]) + " vs numeric " + fmt("%.10g", fd));
        }
      }
    }
  }
  if (o.pass)
    o.detail = std::to_string(checked) + " entries over 3 g variants, worst abs err " +
               fmt("%.2e", worst);
  return o;
}

// --- 4 -------------------------------------------------------------------

Outcome scale_invariance() {
  Outcome o;
  double worst = 0.0;
  Rng rng(404);
  for (auto g : {GVariant::additive, GVariant::rotation, GVariant::mlp}) {
    auto clf = ConstellationClassifier::make(6, 8, 0, g, rng);
    clf.init_structure(3, g, rng, 0.4);
    Matrix f(20, 8);
    for (auto& x : f.data()) x = rng.normal();
    const auto members = clf.members(false);
    const auto per = clf.members_per_class();
    const auto base = member_logits(f, members, per, clf.tau(), Scoring::cosine);
    for (double c : {1e-6, 0.01, 0.5, 3.0, 1e3, 1e7}) {
      Matrix fs = f;
      for (auto& x : fs.data()) x *= c;
      const auto a = member_logits(fs, members, per, clf.tau(), Scoring::cosine);
      for (std::size_t i = 0; i < a.logits.size(); ++i)
        worst = std::max(worst, std::abs(a.logits.data()[i] - base.logits.data()[i]));
      // Rescale one member at a time.
      for (std::size_t r = 0; r < members.rows(); ++r) {
        Matrix ms = members;
        for (auto& x : ms.row(r)) x *= c;
        const auto b = member_logits(f, ms, per, clf.tau(), Scoring::cosine);
        for (std::size_t i = 0; i < b.logits.size(); ++i)
          worst = std::max(worst, std::abs(b.logits.data()[i] - base.logits.data()[i]));
      }
    }
  }
  if (worst > kScaleTolerance) o.fail("max deviation " + fmt("%.3e", worst));
  else o.detail = "max deviation " + fmt("%.3e", worst) + " over features and every member";
  return o;
}

// --- 5 -------------------------------------------------------------------

Outcome rotation_variant() {
  Outcome o;
  double worst_orth = 0.0, worst_norm = 0.0;
  Rng rng(505);
  for (std::size_t d : {2u, 8u, 32u}) {
    for (std::size_t t = 0; t < kRotationTriples; ++t) {
      const auto u = random_direction(d, 1.0, rng);
      Vector delta(d), w(d);
      for (auto& x : delta) x = rng.normal();
      for (auto& x : w) x = rng.normal() * 3.0;
      const auto r = rotation_matrix(delta, u);
      const auto rtr = matmul_tn(r, r);
      double inf_norm = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < d; ++j) row += std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0));
        inf_norm = std::max(inf_norm, row);
      }
      worst_orth = std::max(worst_orth, inf_norm);
      worst_norm = std::max(worst_norm, std::abs(norm(g_rotation(w, delta, u)) - norm(w)));
    }
  }
  if (worst_orth >= kRotationTolerance || worst_norm > kRotationTolerance)
    o.fail("|R^T R - I|_inf " + fmt("%.3e", worst_orth) + ", norm drift " + fmt("%.3e", worst_norm));
  else
    o.detail = "300 triples, |R^T R - I|_inf " + fmt("%.2e", worst_orth) + ", norm drift " +
               fmt("%.2e", worst_norm);
  return o;
}

// --- 6 -------------------------------------------------------------------

// The plain cosine classifier, written out independently.
double plain_cosine(std::span<const double> f, std::span<const double> w, double tau) {
  double fw = 0.0, ff = 0.0, ww = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) fw += f[i] * w[i];
  for (std::size_t i = 0; i < f.size(); ++i) ff += f[i] * f[i];
  for (std::size_t i = 0; i < w.size(); ++i) ww += w[i] * w[i];
  return tau * (fw / (std::sqrt(ff) * std::sqrt(ww)));
}

// Bytes of the blocks a cosine classifier trained on random batches owns,
// with the given center block standing in for W.
std::vector<std::uint8_t> trained_state(const Model& m, const Matrix& centers) {
  ByteWriter w;
  for (const auto& l : m.embedding.layers()) {
    w.put_matrix(l.weight);
    w.put_f64s(l.bias);
  }
  w.put_matrix(centers);
  w.put_f64(m.classifier.tau_raw());
  return w.take();
}

Outcome reductions(const Defaults& defaults, const DatasetPair& data) {
  Outcome o;
  // m = 0 scoring against the plain classifier.
  Rng rng(606);
  const auto clf = ConstellationClassifier::make(20, 16, 0, GVariant::additive, rng, 10.0);
  Matrix f(64, 16);
  for (auto& x : f.data()) x = rng.normal();
  const auto out = constellation_logits(clf, f, false);
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t k = 0; k < 20; ++k) {
      const double ref = plain_cosine(f.row(i), clf.centers().row(k), clf.tau());
      const double got = out.logits(i, k);
      if (std::memcmp(&got, &ref, sizeof ref) != 0 ||
          out.argmax(i, k) != 0)
        o.fail("m = 0 logit differs from the plain cosine classifier at (" + std::to_string(i) +
               ", " + std::to_string(k) + ")");
    }

  // lambda = 0, m = 0 against random-sampling training, every step.
  auto gist_cfg = defaults.train;
  gist_cfg.mode = Mode::gist;
  gist_cfg.lambda = 0.0;
  gist_cfg.displacements = 0;
  auto plain_cfg = gist_cfg;
  plain_cfg.mode = Mode::cos_random;

  std::vector<std::vector<std::uint8_t>> a_states, b_states;
  Trainer a(gist_cfg, data.train), b(plain_cfg, data.train);
  a.set_keep_audit(false);
  b.set_keep_audit(false);
  a.set_step_observer([&](const StepView& v) {
    const auto& c = v.model->classifier;
    a_states.push_back(trained_state(*v.model, v.phase == Phase::gist ? c.aux_centers() : c.centers()));
  });
  b.set_step_observer([&](const StepView& v) {
    b_states.push_back(trained_state(*v.model, v.model->classifier.centers()));
  });
  a.run();
  b.run();
  std::size_t first_diff = a_states.size();
  for (std::size_t s = 0; s < std::min(a_states.size(), b_states.size()); ++s)
    if (a_states[s] != b_states[s]) {
      first_diff = s;
      break;
    }
  if (a_states.size() != b_states.size()) o.fail("step counts differ");
  else if (first_diff != a_states.size())
    o.fail("lambda = 0, m = 0 diverges from random-sampling training at step " +
           std::to_string(first_diff));
  for (std::size_t e = 0; e < a.history().size() && o.pass; ++e) {
    const double la = a.history()[e].loss_random, lb = b.history()[e].loss;
    if (!bitwise_equal(std::span<const double>(&la, 1), std::span<const double>(&lb, 1)))
      o.fail("epoch " + std::to_string(e + 1) + " random loss differs");
  }
  if (o.pass)
    o.detail = "m = 0 logits bit-identical; " + std::to_string(a_states.size()) +
               " training steps bit-identical (V vs W, embedding, tau)";
  return o;
}

// --- 2, 3, 8, 9: one default GIST run, observed ------------------------------

struct DefaultRun {
  Outcome routing, sharing, usage, determinism;
};

DefaultRun default_gist_run(const Defaults& defaults, const DatasetPair& data) {
  DefaultRun r;
  const auto cfg = defaults.train;
  std::size_t routed_steps = 0, lambda_checks = 0, sharing_checks = 0;

  Trainer t(cfg, data.train);
  std::map<std::size_t, std::vector<std::uint8_t>> saved;
  t.set_epoch_observer([&](const EpochMetrics& m, const Trainer& tr) {
    if (m.epoch == 10 || m.epoch == cfg.epochs_pretrain || m.epoch == cfg.epochs_pretrain + 15)
      saved[m.epoch] = serialize(tr.checkpoint());
  });
  t.set_step_observer([&](const StepView& v) {
    const auto& clf = v.model->classifier;
    // Sharing: every member is built from the one shared displacement row.
    if (clf.num_displacements() > 0) {
      ++sharing_checks;
      const auto per = clf.members_per_class();
      for (bool aux : {false, true}) {
        if (aux && !clf.has_aux()) continue;
        const auto members = clf.members(aux);
        const auto& centers = clf.center_block(aux);
        for (std::size_t k = 0; k < clf.num_classes(); ++k)
          for (std::size_t j = 1; j < per; ++j)
            for (std::size_t c = 0; c < clf.dim(); ++c) {
              const double expect = centers(k, c) + clf.displacements()(j - 1, c);
              const double got = members(k * per + j, c);
              if (!bitwise_equal(std::span<const double>(&expect, 1), std::span<const double>(&got, 1)))
                r.sharing.fail("member (" + std::to_string(k) + ", " + std::to_string(j) +
                               ") is not center + shared displacement at step " +
                               std::to_string(v.step) + " of epoch " + std::to_string(v.epoch));
            }
      }
    }
    if (v.phase != Phase::gist) return;
    ++routed_steps;
    const auto& g = *v.grads;
    if (g.displacements.from & kFromBalanced) r.routing.fail("grad_delta received an L_c contribution");
    if (g.centers.from & kFromRandom) r.routing.fail("grad_W received an L_r contribution");
    if (loss_class_balanced(*v.model, *v.batch_balanced).grads.displacements.populated())
      r.routing.fail("L_c alone produced a displacement gradient");
    if (loss_random(*v.model, *v.batch_random).grads.centers.populated())
      r.routing.fail("L_r alone produced a W gradient");

    // Vary lambda on the same snapshot and batches.
    const auto unit = loss_overall(*v.model, *v.batch_balanced, *v.batch_random, 1.0);
    for (double lambda : {0.0, 0.25, v.lambda, 2.0}) {
      const auto o = loss_overall(*v.model, *v.batch_balanced, *v.batch_random, lambda);
      Matrix expect = unit.grads.centers.grad;
      for (auto& x : expect.data()) x *= lambda;
      if (!bitwise_equal(o.grads.centers.grad, expect))
        r.routing.fail("grad_W is not exactly lambda * grad_W(1) at lambda " + fmt("%g", lambda));
      if (!bitwise_equal(o.grads.displacements.grad, unit.grads.displacements.grad))
        r.routing.fail("grad_delta changed with lambda " + fmt("%g", lambda));
      ++lambda_checks;
    }
    if (!bitwise_equal(g.displacements.grad, unit.grads.displacements.grad))
      r.routing.fail("trainer's grad_delta differs from the lambda-free recomputation");
  });
  t.run();
  const auto final_bytes = serialize(t.checkpoint());

  for (const auto& rec : t.audit()) {
    if (rec.phase != Phase::gist) continue;
    if (rec.audit.displacements & kFromBalanced) r.routing.fail("audit: L_c wrote displacements");
    if (rec.audit.centers & kFromRandom) r.routing.fail("audit: L_r wrote W");
    if (rec.audit.tau_decayed) r.routing.fail("audit: tau was decayed");
  }
  if (routed_steps != cfg.epochs_gist * t.steps_per_epoch())
    r.routing.fail("observed " + std::to_string(routed_steps) + " second-phase steps");
  if (r.routing.pass)
    r.routing.detail = std::to_string(routed_steps) + " routed steps over " +
                       std::to_string(cfg.epochs_gist) + " epochs, " +
                       std::to_string(lambda_checks) + " lambda variations, audit clean";
  if (r.sharing.pass)
    r.sharing.detail = "checked at " + std::to_string(sharing_checks) + " steps, W and V members";

  // 8: member usage on the test set.
  const auto report = evaluate(t.checkpoint(), data.test);
  std::string hist;
  double lowest = 1.0;
  for (double h : report.usage.histogram) {
    hist += (hist.empty() ? "" : " ") + fmt("%.1f", 100.0 * h);
    lowest = std::min(lowest, h);
  }
  hist = "usage % {" + hist + "}, floor " + fmt("%.0f", 100.0 * kUsageFloor) + "%";
  if (lowest < kUsageFloor) r.usage.fail(hist);
  else r.usage.detail = hist;

  // 9: a second run and resumes from three epochs.
  Trainer again(cfg, data.train);
  again.set_keep_audit(false);
  again.run();
  if (serialize(again.checkpoint()) != final_bytes)
    r.determinism.fail("repeat run produced a different final checkpoint");
  for (const auto& [epoch, bytes] : saved) {
    Trainer resumed(cfg, data.train, deserialize(bytes));
    resumed.set_keep_audit(false);
    resumed.run();
    if (serialize(resumed.checkpoint()) != final_bytes)
      r.determinism.fail("resume from epoch " + std::to_string(epoch) + " differs");
  }
  if (saved.size() != 3) r.determinism.fail("expected three saved checkpoints");
  if (r.determinism.pass)
    r.determinism.detail = "fingerprint " + hex64(fnv1a(final_bytes)) +
                           " from a repeat run and resumes at epochs 10, 30, 45";
  return r;
}

// --- 7 -------------------------------------------------------------------

// The few-shot gain over COS+CB must exceed the larger of the two rows'
// cross-seed ranges, overall accuracy may not drop, and merged centers must
// lose few-shot accuracy against full GIST.
Outcome ablation_ordering(const Defaults& defaults) {
  Outcome o;
  std::vector<AblationVariant> rows;
  for (auto& v : ablation_variants(defaults.train))
    if (v.name == "COS+CB" || v.name == "COS+CS+GIST" || v.name == "merged-centers")
      rows.push_back(v);
  const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  const auto battery = run_ablation_battery(defaults.data, rows, {1, 2, 3}, jobs);
  std::map<std::string, const BatteryRow*> by;
  for (const auto& r : battery) by[r.name] = &r;
  const auto& cb = *by.at("COS+CB");
  const auto& gist = *by.at("COS+CS+GIST");
  const auto& merged = *by.at("merged-centers");

  const double margin = gist.mean(Split::few) - cb.mean(Split::few);
  const double spread = std::max(gist.spread(Split::few), cb.spread(Split::few));
  const auto pct = [](double x) { return fmt("%.2f", 100.0 * x); };
  o.detail = "few GIST " + pct(gist.mean(Split::few)) + " vs COS+CB " + pct(cb.mean(Split::few)) +
             " (margin " + pct(margin) + ", spread " + pct(spread) + "); overall " +
             pct(gist.mean_overall()) + " vs " + pct(cb.mean_overall()) + "; merged few " +
             pct(merged.mean(Split::few));
  if (!(margin > spread)) o.fail("few-shot margin does not exceed the cross-seed spread: " + o.detail);
  if (!(gist.mean_overall() >= cb.mean_overall())) o.fail("overall accuracy decreased: " + o.detail);
  if (!(merged.mean(Split::few) < gist.mean(Split::few)))
    o.fail("merged centers did not lose few-shot accuracy: " + o.detail);
  return o;
}

// --- 10 ------------------------------------------------------------------

Outcome sampler_statistics(const Defaults& defaults, const DatasetPair& data) {
  Outcome o;
  const auto& train = data.train;
  const auto spec = defaults.train.balanced_spec();
  BalancedSampler balanced(train.class_indices(), spec.classes_per_batch, spec.per_class,
                           Rng(defaults.train.seed).split(kBalancedSamplerStream));
  std::vector<std::size_t> counts(train.num_classes(), 0);
  std::size_t worst = 0;
  const std::size_t batches = 2000;
  for (std::size_t b = 0; b < batches; ++b) {
    const auto batch = balanced.next();
    for (auto k : batch.classes) ++counts[k];
    for (std::size_t i = 0; i < batch.indices.size(); ++i)
      if (train.labels[batch.indices[i]] != static_cast<int>(batch.classes[i / spec.per_class]))
        o.fail("balanced batch sample from the wrong class");
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    worst = std::max(worst, *hi - *lo);
  }
  if (worst > 1) o.fail("class counts differ by " + std::to_string(worst));

  const auto rspec = defaults.train.random_spec();
  RandomSampler random(train.size(), rspec.batch_size,
                       Rng(defaults.train.seed).split(kRandomSamplerStream));
  const std::size_t epochs = 20;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<std::size_t> seen;
    for (std::size_t b = 0; b < random.batches_per_epoch(); ++b) {
      const auto batch = random.next();
      seen.insert(seen.end(), batch.begin(), batch.end());
    }
    std::sort(seen.begin(), seen.end());
    bool perm = seen.size() == train.size();
    for (std::size_t i = 0; perm && i < seen.size(); ++i) perm = seen[i] == i;
    if (!perm) o.fail("epoch " + std::to_string(e) + " is not a permutation of the dataset");
  }
  if (o.pass)
    o.detail = std::to_string(batches) + " balanced batches, max count gap " +
               std::to_string(worst) + "; " + std::to_string(epochs) +
               " random epochs, each an exact permutation";
  return o;
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  const auto defaults = load_defaults();
  const auto data = generate(defaults.data);

  std::map<int, std::pair<std::string, Outcome>> results;
  std::map<int, double> seconds;
  const auto timed = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = clock::now();
    results[id] = {name, f()};
    seconds[id] = std::chrono::duration<double>(clock::now() - t0).count();
  };

  timed(1, "gradient correctness", gradient_correctness);
  timed(4, "scale invariance of scoring", scale_invariance);
  timed(5, "rotation variant orthogonality", rotation_variant);
  timed(6, "reduction checks", [&] { return reductions(defaults, data); });
  timed(10, "sampler statistics", [&] { return sampler_statistics(defaults, data); });
  {
    const auto t0 = clock::now();
    auto run = default_gist_run(defaults, data);
    const double s = std::chrono::duration<double>(clock::now() - t0).count();
    results[2] = {"gradient routing", run.routing};
    results[3] = {"sharing invariant", run.sharing};
    results[8] = {"constellation usage", run.usage};
    results[9] = {"determinism and resume", run.determinism};
    for (int id : {2, 3, 8, 9}) seconds[id] = s;
  }
  timed(7, "desk-scale ablation ordering", [&] { return ablation_ordering(defaults); });

  int failures = 0;
  for (const auto& [id, entry] : results) {
    const auto& [name, outcome] = entry;
    std::printf("criterion %2d %s  %s: %s [%.1fs]\n", id, outcome.pass ? "PASS" : "FAIL",
                name.c_str(), outcome.detail.c_str(), seconds[id]);
    failures += !outcome.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(results.size()) - failures,
              results.size());
  return failures == 0 ? 0 : 1;
}
