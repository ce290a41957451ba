#include "gist/trainer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "gist/binary_io.hpp"
#include "gist/error.hpp"
#include "gist/rng.hpp"

namespace gist {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// The first-phase objective kinds; modes sharing one share pretraining.
std::string first_phase_kind(Mode m) {
  if (m == Mode::plain) return "dot_random";
  if (m == Mode::cos_cb) return "cos_balanced";
  return "cos_random";
}

std::string describe_step(std::size_t epoch, std::size_t step, Phase phase, double loss,
                          double lc, double lr, const Model& model) {
  std::ostringstream s;
  s << "training diverged in " << to_string(phase) << " phase, epoch " << epoch << " step "
    << step << ": L=" << loss << " L_c=" << lc << " L_r=" << lr
    << " tau=" << model.classifier.tau();
  return s.str();
}

}  // namespace

std::uint64_t pretrain_hash(const TrainConfig& c) {
  std::ostringstream s;
  TrainConfig p = c;
  // Fields the first phase never reads are normalized away.
  p.mode = Mode::gist;
  p.epochs_gist = 0;
  p.lambda = 0.0;
  p.displacements = 0;
  p.g = GVariant::additive;
  p.delta_init = 0.1;
  s << first_phase_kind(c.mode) << "\n" << p.to_text();
  return fnv1a(s.str());
}

Trainer::Trainer(TrainConfig config, const LongTailDataset& train, bool)
    : config_(std::move(config)),
      train_(&train),
      random_(train.size(), config_.batch_size, Rng(config_.seed).split(kRandomSamplerStream)),
      balanced_(train.class_indices(), config_.balanced_classes, config_.balanced_per_class,
                Rng(config_.seed).split(kBalancedSamplerStream)) {
  config_.validate();
}

Trainer::Trainer(TrainConfig config, const LongTailDataset& train)
    : Trainer(std::move(config), train, true) {
  Rng embed_rng = Rng(config_.seed).split(kEmbeddingStream);
  Rng clf_rng = Rng(config_.seed).split(kClassifierStream);
  model_.embedding = EmbeddingNet::make(train.dim(), config_.hidden, config_.feature_dim,
                                        config_.activation, embed_rng);
  model_.classifier = ConstellationClassifier::make(train.num_classes(), config_.feature_dim, 0,
                                                    GVariant::additive, clf_rng, config_.tau_init);
  model_.classifier.discard_aux();
  model_.scoring = config_.scoring();
  velocity_ = MomentumBuffers::zeros_like(model_);
  last_good_ = checkpoint();
}

Trainer::Trainer(TrainConfig config, const LongTailDataset& train, const Checkpoint& resume)
    : Trainer(std::move(config), train, true) {
  if (resume.config_hash != config_.hash())
    throw FormatError("checkpoint config hash " + hex64(resume.config_hash) +
                      " does not match the run config " + hex64(config_.hash()));
  restore(resume);
}

Trainer Trainer::from_pretrained(TrainConfig config, const LongTailDataset& train,
                                 const Checkpoint& pretrained) {
  Trainer t(std::move(config), train, true);
  if (pretrained.phase != Phase::pretrain || pretrained.epoch != t.config_.epochs_pretrain)
    throw FormatError("checkpoint is not the end of a first training phase of " +
                      std::to_string(t.config_.epochs_pretrain) + " epochs");
  if (pretrain_hash(pretrained.config()) != pretrain_hash(t.config_))
    throw FormatError("checkpoint was pretrained under a different first-phase config");
  t.restore(pretrained);
  return t;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.data_hash != train_->config_hash)
    throw FormatError("checkpoint was trained on a different dataset (data hash " +
                      hex64(ckpt.data_hash) + ", dataset " + hex64(train_->config_hash) + ")");
  if (ckpt.model.embedding.input_dim() != train_->dim() ||
      ckpt.model.classifier.num_classes() != train_->num_classes())
    throw FormatError("checkpoint dimensions do not match the dataset");
  if (ckpt.epoch > config_.total_epochs())
    throw FormatError("checkpoint epoch exceeds the configured schedule");
  model_ = ckpt.model;
  velocity_ = ckpt.momentum;
  ByteReader r(ckpt.sampler_state, "checkpoint sampler state");
  random_.load(r);
  balanced_.load(r);
  r.expect_end();
  epoch_ = ckpt.epoch;
  phase_ = ckpt.phase;
  last_good_ = checkpoint();
}

double Trainer::learning_rate() const {
  const bool first = phase_ == Phase::pretrain && epoch_ < config_.epochs_pretrain;
  const std::size_t start = first ? 0 : config_.epochs_pretrain;
  const std::size_t decays = (epoch_ - std::min(epoch_, start)) / config_.lr_decay_every;
  double lr = config_.lr0;
  for (std::size_t i = 0; i < decays; ++i) lr *= config_.lr_decay_factor;
  return lr;
}

void Trainer::enter_second_phase() {
  auto& clf = model_.classifier;
  Rng rng = Rng(config_.seed).split(kStructureStream);
  clf.init_structure(config_.displacements, config_.g, rng, config_.delta_init);
  if (config_.mode == Mode::gist) clf.reset_aux_from_centers();
  else clf.discard_aux();
  velocity_ = MomentumBuffers::zeros_like(model_);
  phase_ = Phase::gist;
}

void Trainer::finish() {
  model_.classifier.discard_aux();
  velocity_.aux_centers = Matrix();
  phase_ = Phase::done;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_text = config_.to_text();
  c.config_hash = config_.hash();
  c.data_hash = train_->config_hash;
  c.epoch = epoch_;
  c.phase = phase_;
  c.model = model_;
  c.momentum = velocity_;
  ByteWriter w;
  random_.save(w);
  balanced_.save(w);
  c.sampler_state = w.take();
  return c;
}

EpochMetrics Trainer::run_epoch() {
  require(!finished(), "Trainer::run_epoch: schedule already complete");
  if (phase_ == Phase::pretrain && epoch_ >= config_.epochs_pretrain) enter_second_phase();

  const StepPlan plan = config_.plan(phase_);
  const SgdSettings settings{learning_rate(), config_.momentum, config_.weight_decay,
                             config_.tau_lr_scale};
  const std::size_t steps = steps_per_epoch();
  double sum = 0.0, sum_c = 0.0, sum_r = 0.0;

  for (std::size_t step = 0; step < steps; ++step) {
    LabeledBatch bc, br;
    GradientBundle grads;
    double loss = 0.0, lc = kNaN, lr = kNaN;
    if (plan.dual) {
      bc = train_->gather(balanced_.next().indices);
      br = plan.second_batch_balanced ? train_->gather(balanced_.next().indices)
                                      : train_->gather(random_.next());
      auto o = loss_overall(model_, bc, br, config_.lambda, plan.routing);
      loss = o.loss;
      lc = o.loss_balanced;
      lr = o.loss_random;
      grads = std::move(o.grads);
    } else if (plan.uses_balanced) {
      bc = train_->gather(balanced_.next().indices);
      auto v = routed_loss(model_, bc, plan.single, plan.single_tag);
      loss = lc = v.loss;
      grads = std::move(v.grads);
    } else {
      br = train_->gather(random_.next());
      auto v = routed_loss(model_, br, plan.single, plan.single_tag);
      loss = lr = v.loss;
      grads = std::move(v.grads);
    }
    if (!std::isfinite(loss))
      throw DivergenceError(describe_step(epoch_, step, phase_, loss, lc, lr, model_));

    if (on_step_) {
      StepView view;
      view.epoch = epoch_;
      view.step = step;
      view.phase = phase_;
      view.model = &model_;
      view.batch_balanced = bc.labels.empty() ? nullptr : &bc;
      view.batch_random = br.labels.empty() ? nullptr : &br;
      view.plan = &plan;
      view.lambda = config_.lambda;
      view.grads = &grads;
      on_step_(view);
    }
    StepAudit audit;
    try {
      audit = sgd_step(model_, velocity_, grads, settings);
    } catch (const DivergenceError& e) {
      throw DivergenceError(describe_step(epoch_, step, phase_, loss, lc, lr, model_) + ": " +
                            e.what());
    }
    if (keep_audit_) audit_.push_back({epoch_, step, phase_, audit});
    sum += loss;
    sum_c += lc;
    sum_r += lr;
  }

  EpochMetrics m;
  m.phase = phase_;
  m.lr = settings.lr;
  const double n = static_cast<double>(steps);
  m.loss = sum / n;
  m.loss_balanced = sum_c / n;
  m.loss_random = sum_r / n;

  ++epoch_;
  if (epoch_ == config_.total_epochs()) finish();
  m.epoch = epoch_;
  m.tau = model_.classifier.tau();
  if (test_) m.test = evaluate(InferenceModel(model_), *test_).accuracy;

  last_good_ = checkpoint();
  history_.push_back(m);
  if (on_epoch_) on_epoch_(m, *this);
  return m;
}

void Trainer::run_until(std::size_t epoch) {
  const auto target = std::min(epoch, config_.total_epochs());
  while (!finished() && epoch_ < target) run_epoch();
}

Checkpoint pretrain(const LongTailDataset& train, const TrainConfig& config) {
  Trainer t(config, train);
  t.set_keep_audit(false);
  t.run_until(config.epochs_pretrain);
  return t.checkpoint();
}

Checkpoint train_gist(const Checkpoint& pretrained, const LongTailDataset& train,
                      const TrainConfig& config) {
  auto t = Trainer::from_pretrained(config, train, pretrained);
  t.set_keep_audit(false);
  t.run();
  return t.checkpoint();
}

}  // namespace gist
