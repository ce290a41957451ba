#include "gist/checkpoint.hpp"

#include "gist/binary_io.hpp"
#include "gist/error.hpp"

namespace gist {

namespace {

constexpr std::string_view kCheckpointMagic = "GISTCK1";
constexpr std::uint32_t kFormatVersion = 1;

void put_vector(ByteWriter& w, std::span<const double> v) {
  w.put_u64(v.size());
  w.put_f64s(v);
}

Vector get_vector(ByteReader& r) {
  const auto n = r.get_u64();
  if (n > r.remaining() / 8) throw FormatError("checkpoint: vector length exceeds the file");
  Vector v(n);
  r.get_f64s(v);
  return v;
}

void put_mlp(ByteWriter& w, const std::optional<MlpMap>& m) {
  w.put_u8(m.has_value());
  if (!m) return;
  w.put_matrix(m->hidden_weight);
  put_vector(w, m->hidden_bias);
  w.put_matrix(m->out_weight);
  put_vector(w, m->out_bias);
}

std::optional<MlpMap> get_mlp(ByteReader& r) {
  if (!r.get_u8()) return std::nullopt;
  MlpMap m;
  m.hidden_weight = r.get_matrix();
  m.hidden_bias = get_vector(r);
  m.out_weight = r.get_matrix();
  m.out_bias = get_vector(r);
  return m;
}

void put_layers(ByteWriter& w, const std::vector<DenseLayer>& layers) {
  w.put_u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    w.put_matrix(l.weight);
    put_vector(w, l.bias);
  }
}

std::vector<DenseLayer> get_layers(ByteReader& r) {
  const auto n = r.get_u32();
  if (n > r.remaining()) throw FormatError("checkpoint: layer count exceeds the file");
  std::vector<DenseLayer> layers(n);
  for (auto& l : layers) {
    l.weight = r.get_matrix();
    l.bias = get_vector(r);
  }
  return layers;
}

template <typename E>
E get_enum(ByteReader& r, std::uint8_t max, const char* what) {
  const auto v = r.get_u8();
  if (v > max) throw FormatError(std::string("checkpoint: invalid ") + what);
  return static_cast<E>(v);
}

}  // namespace

void write_model(ByteWriter& w, const Model& model) {
  const auto& net = model.embedding;
  const auto& clf = model.classifier;
  w.put_u8(static_cast<std::uint8_t>(model.scoring));
  w.put_u8(static_cast<std::uint8_t>(net.activation()));
  w.put_u8(net.activate_output());
  put_layers(w, net.layers());
  w.put_u8(static_cast<std::uint8_t>(clf.variant()));
  w.put_matrix(clf.centers());
  w.put_u8(clf.has_aux());
  if (clf.has_aux()) w.put_matrix(clf.aux_centers());
  w.put_matrix(clf.displacements());
  w.put_f64(clf.tau_raw());
  put_mlp(w, clf.mlp());
}

Model read_model(ByteReader& r) {
  Model m;
  m.scoring = get_enum<Scoring>(r, 1, "scoring");
  const auto act = get_enum<Activation>(r, 1, "activation");
  const bool activate_output = r.get_u8() != 0;
  auto layers = get_layers(r);
  const auto variant = get_enum<GVariant>(r, 2, "g variant");
  auto centers = r.get_matrix();
  const bool has_aux = r.get_u8() != 0;
  Matrix aux;
  if (has_aux) aux = r.get_matrix();
  auto displacements = r.get_matrix();
  const double tau_raw = r.get_f64();
  auto mlp = get_mlp(r);
  try {
    m.embedding = EmbeddingNet(std::move(layers), act, activate_output);
    ConstellationClassifier clf(std::move(centers), std::move(displacements), 1.0, variant,
                                std::move(mlp));
    clf.set_tau_raw(tau_raw);
    if (has_aux) {
      if (aux.rows() != clf.num_classes() || aux.cols() != clf.dim())
        throw FormatError("checkpoint: auxiliary centers shape differs from centers");
      clf.mutable_aux_centers() = std::move(aux);
    } else {
      clf.discard_aux();
    }
    m.classifier = std::move(clf);
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: inconsistent model: ") + e.what());
  }
  if (m.embedding.feature_dim() != m.classifier.dim())
    throw FormatError("checkpoint: embedding width differs from classifier width");
  return m;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  ByteWriter w;
  w.put_magic(kCheckpointMagic, 8);
  w.put_u64(c.config_hash);
  w.put_u64(c.epoch);
  w.put_u32(kFormatVersion);
  w.put_u8(static_cast<std::uint8_t>(c.phase));
  w.put_u64(c.data_hash);
  w.put_u64(c.config_text.size());
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(c.config_text.data()), c.config_text.size()});
  write_model(w, c.model);

  const auto& v = c.momentum;
  put_layers(w, v.embedding);
  w.put_matrix(v.centers);
  w.put_matrix(v.aux_centers);
  w.put_matrix(v.displacements);
  w.put_f64(v.tau_raw);
  put_mlp(w, v.mlp);

  w.put_u64(c.sampler_state.size());
  w.put_bytes(c.sampler_state);
  const auto sum = fnv1a(w.bytes());
  w.put_u64(sum);
  return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 16) throw FormatError(what + ": truncated checkpoint");
  ByteReader r(bytes, what);
  r.expect_magic(kCheckpointMagic, 8);
  {
    ByteReader trailer(bytes.subspan(bytes.size() - 8), what);
    if (trailer.get_u64() != fnv1a(bytes.first(bytes.size() - 8)))
      throw FormatError(what + ": checksum mismatch (truncated or corrupt checkpoint)");
  }
  Checkpoint c;
  c.config_hash = r.get_u64();
  c.epoch = r.get_u64();
  if (r.get_u32() != kFormatVersion) throw FormatError(what + ": unsupported checkpoint version");
  c.phase = get_enum<Phase>(r, 2, "phase");
  c.data_hash = r.get_u64();
  const auto text_len = r.get_u64();
  if (text_len > r.remaining()) throw FormatError(what + ": config text exceeds the file");
  c.config_text.resize(text_len);
  for (auto& ch : c.config_text) ch = static_cast<char>(r.get_u8());
  c.model = read_model(r);

  auto& v = c.momentum;
  v.embedding = get_layers(r);
  v.centers = r.get_matrix();
  v.aux_centers = r.get_matrix();
  v.displacements = r.get_matrix();
  v.tau_raw = r.get_f64();
  v.mlp = get_mlp(r);

  const auto n = r.get_u64();
  if (n > r.remaining()) throw FormatError(what + ": sampler state exceeds the file");
  c.sampler_state.resize(n);
  for (auto& b : c.sampler_state) b = r.get_u8();
  r.get_u64();  // checksum, verified above
  r.expect_end();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize(read_file(path), path.string());
}

std::uint64_t fingerprint(const Checkpoint& ckpt) { return fnv1a(serialize(ckpt)); }

}  // namespace gist
