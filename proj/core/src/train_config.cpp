#include "gist/train_config.hpp"

#include <cstdio>
#include <sstream>

#include "gist/binary_io.hpp"
#include "gist/config.hpp"
#include "gist/error.hpp"

namespace gist {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename E, typename Parse>
E parse_field(const KeyValues& kv, const std::string& key, Parse&& parse) {
  const auto value = kv.get_string(key);
  try {
    return parse(value);
  } catch (const ContractError& e) {
    throw ConfigError(key, 0, kv.source() + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::plain: return "plain";
    case Mode::cos_random: return "cos_random";
    case Mode::cos_cb: return "cos_cb";
    case Mode::cos_cs_cb: return "cos_cs_cb";
    case Mode::gist: return "gist";
    case Mode::merged_centers: return "merged_centers";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  for (auto m : {Mode::plain, Mode::cos_random, Mode::cos_cb, Mode::cos_cs_cb, Mode::gist,
                 Mode::merged_centers})
    if (to_string(m) == name) return m;
  throw ContractError("unknown mode '" + name +
                      "' (plain|cos_random|cos_cb|cos_cs_cb|gist|merged_centers)");
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::gist: return "gist";
    case Phase::done: return "done";
  }
  return "?";
}

void TrainConfig::validate() const {
  require(feature_dim >= 2, "train: feature_dim must be at least 2");
  for (auto h : hidden) require(h > 0, "train: hidden layer widths must be positive");
  require(total_epochs() > 0, "train: need at least one epoch");
  require(lr0 > 0.0, "train: lr0 must be positive");
  require(lr_decay_factor > 0.0, "train: lr_decay_factor must be positive");
  require(lr_decay_every > 0, "train: lr_decay_every must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "train: momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "train: weight_decay must be non-negative");
  require(lambda >= 0.0, "train: lambda must be non-negative");
  require(tau_init > 0.0, "train: tau_init must be positive");
  require(tau_lr_scale >= 0.0, "train: tau_lr_scale must be non-negative");
  require(delta_init > 0.0, "train: delta_init must be positive");
  balanced_spec().validate();
  if (g == GVariant::rotation) require(feature_dim >= 2, "train: rotation g needs feature_dim >= 2");
}

const std::set<std::string>& TrainConfig::keys() {
  static const std::set<std::string> k{
      "mode",         "feature_dim",   "hidden",         "activation",        "epochs_pretrain",
      "epochs_gist",  "lr0",           "lr_decay_factor", "lr_decay_every",   "momentum",
      "weight_decay", "lambda",        "batch_size",     "balanced_classes",  "balanced_per_class",
      "displacements", "g",            "tau_init",       "tau_lr_scale",      "delta_init",
      "seed"};
  return k;
}

std::string TrainConfig::to_text() const {
  std::ostringstream s;
  s << "mode = " << to_string(mode) << "\n"
    << "feature_dim = " << feature_dim << "\n"
    << "hidden = ";
  for (std::size_t i = 0; i < hidden.size(); ++i) s << (i ? "," : "") << hidden[i];
  s << "\n"
    << "activation = " << to_string(activation) << "\n"
    << "epochs_pretrain = " << epochs_pretrain << "\n"
    << "epochs_gist = " << epochs_gist << "\n"
    << "lr0 = " << fmt_double(lr0) << "\n"
    << "lr_decay_factor = " << fmt_double(lr_decay_factor) << "\n"
    << "lr_decay_every = " << lr_decay_every << "\n"
    << "momentum = " << fmt_double(momentum) << "\n"
    << "weight_decay = " << fmt_double(weight_decay) << "\n"
    << "lambda = " << fmt_double(lambda) << "\n"
    << "batch_size = " << batch_size << "\n"
    << "balanced_classes = " << balanced_classes << "\n"
    << "balanced_per_class = " << balanced_per_class << "\n"
    << "displacements = " << displacements << "\n"
    << "g = " << to_string(g) << "\n"
    << "tau_init = " << fmt_double(tau_init) << "\n"
    << "tau_lr_scale = " << fmt_double(tau_lr_scale) << "\n"
    << "delta_init = " << fmt_double(delta_init) << "\n"
    << "seed = " << seed << "\n";
  return s.str();
}

std::uint64_t TrainConfig::hash() const { return fnv1a(to_text()); }

TrainConfig TrainConfig::from(const KeyValues& kv) {
  TrainConfig c;
  c.mode = parse_field<Mode>(kv, "mode", parse_mode);
  c.feature_dim = kv.get_size("feature_dim");
  c.hidden = kv.get_size_list("hidden");
  c.activation = parse_field<Activation>(kv, "activation", parse_activation);
  c.epochs_pretrain = kv.get_size("epochs_pretrain");
  c.epochs_gist = kv.get_size("epochs_gist");
  c.lr0 = kv.get_double("lr0");
  c.lr_decay_factor = kv.get_double("lr_decay_factor");
  c.lr_decay_every = kv.get_size("lr_decay_every");
  c.momentum = kv.get_double("momentum");
  c.weight_decay = kv.get_double("weight_decay");
  c.lambda = kv.get_double("lambda");
  c.batch_size = kv.get_size("batch_size");
  c.balanced_classes = kv.get_size("balanced_classes");
  c.balanced_per_class = kv.get_size("balanced_per_class");
  c.displacements = kv.get_size("displacements");
  c.g = parse_field<GVariant>(kv, "g", parse_g_variant);
  c.tau_init = kv.get_double("tau_init");
  c.tau_lr_scale = kv.get_double("tau_lr_scale");
  c.delta_init = kv.get_double("delta_init");
  c.seed = kv.get_u64("seed");
  return c;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  return from(KeyValues::parse(text, "<checkpoint config>"));
}

BatchSpec TrainConfig::random_spec() const {
  return {SamplingRegime::random, batch_size, balanced_classes, balanced_per_class};
}

BatchSpec TrainConfig::balanced_spec() const {
  return {SamplingRegime::class_balanced, batch_size, balanced_classes, balanced_per_class};
}

StepPlan TrainConfig::plan(Phase phase) const {
  StepPlan p;
  const auto single_random = [&] {
    p.uses_random = true;
    p.single = Routing::full(false);
    p.single_tag = kFromRandom;
  };
  const auto single_balanced = [&] {
    p.uses_balanced = true;
    p.single = Routing::full(false);
    p.single_tag = kFromBalanced;
  };
  if (phase == Phase::pretrain) {
    if (mode == Mode::cos_cb) single_balanced();
    else single_random();
    return p;
  }
  switch (mode) {
    case Mode::plain:
    case Mode::cos_random: single_random(); break;
    case Mode::cos_cb: single_balanced(); break;
    case Mode::cos_cs_cb:
      p.dual = true;
      p.uses_balanced = true;
      p.second_batch_balanced = true;
      p.routing = {Routing::full(false), Routing::full(false)};
      break;
    case Mode::gist:
      p.dual = true;
      p.uses_balanced = p.uses_random = true;
      p.routing = Routing::gist();
      break;
    case Mode::merged_centers:
      p.dual = true;
      p.uses_balanced = p.uses_random = true;
      p.routing = Routing::merged_centers();
      break;
  }
  return p;
}

}  // namespace gist
