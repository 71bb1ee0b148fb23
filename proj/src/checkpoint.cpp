#include "protoosr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace protoosr {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'R', 'O', 'T', 'O', 'O', 'S', 'R'};

class Writer {
 public:
  template <typename V>
  void pod(V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out_.append(buf, sizeof(V));
  }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void ints(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) pod(static_cast<std::int32_t>(x));
  }
  void tensor(const Tensor<float>& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    out_.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  void tensors(const std::vector<Tensor<float>>& ts) {
    u64(ts.size());
    for (const auto& t : ts) tensor(t);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : in_(bytes) {}

  template <typename V>
  V pod() {
    need(sizeof(V), "value");
    V v;
    std::memcpy(&v, in_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::size_t count(std::size_t element_bytes, const char* what) {
    const auto n = u64();
    if (element_bytes > 0 && n > (in_.size() - pos_) / element_bytes) {
      throw FormatError(std::string("checkpoint: implausible ") + what + " length", pos_ - 8);
    }
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const auto n = count(1, "string");
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<int> ints() {
    const auto n = count(4, "index list");
    std::vector<int> v(n);
    for (auto& x : v) x = pod<std::int32_t>();
    return v;
  }
  Tensor<float> tensor() {
    const auto rank = u32();
    if (rank > 8) throw FormatError("checkpoint: tensor rank " + std::to_string(rank), pos_ - 4);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(u64());
    const auto n = shape_size(shape);
    need(n * sizeof(float), "tensor data");
    std::vector<float> values(n);
    std::memcpy(values.data(), in_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return Tensor<float>(std::move(shape), std::move(values));
  }
  std::vector<Tensor<float>> tensors() {
    const auto n = count(4, "tensor list");
    std::vector<Tensor<float>> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(tensor());
    return out;
  }
  void expect_end() const {
    if (pos_ != in_.size()) throw FormatError("checkpoint: trailing bytes", pos_);
  }
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw FormatError(std::string("checkpoint: truncated ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void check_shape(const Tensor<float>& got, const Tensor<float>& want, const std::string& name, std::size_t offset) {
  if (got.shape() != want.shape()) {
    throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(got.shape()) + ", config implies " +
                          shape_str(want.shape()),
                      offset);
  }
}

}  // namespace

std::string serialize(const Checkpoint& c) {
  Writer w;
  for (char ch : kMagic) w.pod(ch);
  w.u32(Checkpoint::kVersion);
  w.str(to_text(c.config));

  w.str(to_string(c.split.style));
  w.ints(c.split.known);
  w.ints(c.split.unknown);
  w.str(c.split.known_source);
  w.str(c.split.unknown_source);
  w.u64(c.split.trial_seed);
  w.f64(c.split.openness);

  const auto params = c.encoder.tensors();
  w.u64(params.size());
  for (const auto* t : params) w.tensor(*t);
  const auto buffers = c.encoder.buffers();
  w.u64(buffers.size());
  for (const auto* t : buffers) w.tensor(*t);
  w.tensor(c.prototypes.points);

  w.f64(c.optim.learning_rate);
  w.f64(c.optim.momentum);
  w.f64(c.optim.weight_decay);
  w.tensors(c.optim.velocity);

  w.u64(c.epochs_done);
  w.u64(c.log.size());
  for (const auto& e : c.log) {
    w.u64(e.epoch);
    for (double v : {e.learning_rate, e.total, e.ce, e.pl, e.slc, e.grad_norm, e.val_accuracy}) w.f64(v);
  }
  return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  r.need(sizeof kMagic, "header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not a protoosr checkpoint", 0);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.pod<char>();
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(Checkpoint::kVersion) + ")",
                      8);
  }
  Checkpoint c;
  const auto config_at = r.pos();
  try {
    c.config = parse_config(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: embedded config: ") + e.what(), config_at);
  }

  try {
    c.split.style = parse_split_style(r.str());
  } catch (const UsageError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), r.pos());
  }
  c.split.known = r.ints();
  c.split.unknown = r.ints();
  c.split.known_source = r.str();
  c.split.unknown_source = r.str();
  c.split.trial_seed = r.u64();
  c.split.openness = r.f64();

  // Shapes come from the embedded config; stored tensors must agree.
  c.encoder = init_encoder<float>(c.config.encoder, 0);
  const auto names = c.encoder.names();
  auto params = c.encoder.tensors();
  if (r.u64() != params.size()) throw FormatError("checkpoint: encoder tensor count mismatch", r.pos() - 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto at = r.pos();
    auto t = r.tensor();
    check_shape(t, *params[i], names[i], at);
    *params[i] = std::move(t);
  }
  auto buffers = c.encoder.buffers();
  if (r.u64() != buffers.size()) throw FormatError("checkpoint: buffer count mismatch", r.pos() - 8);
  for (auto* b : buffers) {
    const auto at = r.pos();
    auto t = r.tensor();
    check_shape(t, *b, "running statistics", at);
    *b = std::move(t);
  }
  const auto protos_at = r.pos();
  c.prototypes.points = r.tensor();
  if (c.prototypes.points.rank() != 2 || c.prototypes.points.dim(0) != c.split.n_known() ||
      c.prototypes.points.dim(1) != c.config.encoder.embedding_dim) {
    throw FormatError("checkpoint: prototype tensor " + shape_str(c.prototypes.points.shape()) +
                          " does not match the split and embedding dimension",
                      protos_at);
  }

  c.optim.learning_rate = r.f64();
  c.optim.momentum = r.f64();
  c.optim.weight_decay = r.f64();
  c.optim.velocity = r.tensors();

  c.epochs_done = static_cast<std::size_t>(r.u64());
  const auto entries = r.count(64, "epoch log");
  for (std::size_t i = 0; i < entries; ++i) {
    EpochLog e;
    e.epoch = static_cast<std::size_t>(r.u64());
    for (double* v : {&e.learning_rate, &e.total, &e.ce, &e.pl, &e.slc, &e.grad_norm, &e.val_accuracy}) *v = r.f64();
    c.log.push_back(e);
  }
  r.expect_end();
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string(), 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace protoosr
