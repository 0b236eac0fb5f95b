#include "hcrl/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace hcrl {
namespace {

constexpr char kMagic[4] = {'H', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void matrix(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }
  void vector(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U uint() {
    if (in_.size() - pos_ < sizeof(U)) throw DataError("checkpoint truncated");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  void matrix(Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
  }
  void vector(Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f64();
  }
  std::string string(std::size_t n) {
    if (in_.size() - pos_ < n) throw DataError("checkpoint truncated");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedNetwork* Checkpoint::find(std::string_view name) const {
  for (const auto& n : networks)
    if (n.name == name) return &n;
  return nullptr;
}

const Mlp& Checkpoint::network(std::string_view name) const {
  const NamedNetwork* n = find(name);
  if (n == nullptr) throw DataError(fmt::format("checkpoint has no network named '{}'", name));
  return n->net;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kMagic) w.uint<std::uint8_t>(static_cast<std::uint8_t>(c));
  w.uint<std::uint32_t>(kVersion);
  w.uint<std::uint32_t>(ckpt.state_dim);
  w.uint<std::uint32_t>(ckpt.action_dim);
  if (ckpt.normalizer.mean.size() != ckpt.state_dim || ckpt.normalizer.std.size() != ckpt.state_dim)
    throw DimensionMismatch("checkpoint normalizer does not match state_dim");
  for (double v : ckpt.normalizer.mean) w.f64(v);
  for (double v : ckpt.normalizer.std) w.f64(v);
  w.f64(ckpt.normalizer.eps);

  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.networks.size()));
  for (const auto& named : ckpt.networks) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(named.name.size()));
    for (char c : named.name) w.uint<std::uint8_t>(static_cast<std::uint8_t>(c));
    w.uint<std::uint8_t>(named.net.head() == OutputHead::kTanh ? 1 : 0);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(named.net.layer_sizes().size()));
    for (int s : named.net.layer_sizes()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(s));
    for (const auto& layer : named.net.layers()) {
      w.matrix(layer.weight);
      w.vector(layer.bias);
    }
    w.uint<std::uint8_t>(named.optimizer ? 1 : 0);
    if (named.optimizer) {
      const AdamState& opt = *named.optimizer;
      w.uint<std::uint64_t>(static_cast<std::uint64_t>(opt.step));
      w.f64(opt.learning_rate);
      w.f64(opt.beta1);
      w.f64(opt.beta2);
      w.f64(opt.epsilon);
      for (std::size_t l = 0; l < opt.first_moment.size(); ++l) {
        w.matrix(opt.first_moment[l].weight);
        w.vector(opt.first_moment[l].bias);
        w.matrix(opt.second_moment[l].weight);
        w.vector(opt.second_moment[l].bias);
      }
    }
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                                      [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
    throw DataError("not a checkpoint file (bad magic)");
  Reader r(bytes.subspan(4));
  const auto version = r.uint<std::uint32_t>();
  if (version != kVersion) throw DataError(fmt::format("unsupported checkpoint version {}", version));

  Checkpoint ckpt;
  ckpt.state_dim = r.uint<std::uint32_t>();
  ckpt.action_dim = r.uint<std::uint32_t>();
  ckpt.normalizer.mean.resize(ckpt.state_dim);
  ckpt.normalizer.std.resize(ckpt.state_dim);
  for (double& v : ckpt.normalizer.mean) v = r.f64();
  for (double& v : ckpt.normalizer.std) v = r.f64();
  ckpt.normalizer.eps = r.f64();

  const auto n_nets = r.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < n_nets; ++k) {
    NamedNetwork named;
    named.name = r.string(r.uint<std::uint32_t>());
    const auto head = r.uint<std::uint8_t>() == 1 ? OutputHead::kTanh : OutputHead::kLinear;
    const auto n_sizes = r.uint<std::uint32_t>();
    if (n_sizes < 2 || n_sizes > r.remaining() / 4) throw DataError("checkpoint has a corrupt layer count");
    std::vector<int> sizes(n_sizes);
    for (int& s : sizes) {
      const auto v = r.uint<std::uint32_t>();
      if (v < 1 || v > (1u << 24)) throw DataError(fmt::format("checkpoint layer size {} is out of range", v));
      s = static_cast<int>(v);
    }
    std::size_t n_params = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
      n_params += static_cast<std::size_t>(sizes[l] + 1) * static_cast<std::size_t>(sizes[l + 1]);
    if (n_params > r.remaining() / 8) throw DataError("checkpoint truncated");
    named.net = Mlp(sizes, head);
    for (auto& layer : named.net.layers()) {
      r.matrix(layer.weight);
      r.vector(layer.bias);
    }
    if (r.uint<std::uint8_t>() == 1) {
      AdamState opt(named.net, 0.0);
      opt.step = static_cast<long>(r.uint<std::uint64_t>());
      opt.learning_rate = r.f64();
      opt.beta1 = r.f64();
      opt.beta2 = r.f64();
      opt.epsilon = r.f64();
      for (std::size_t l = 0; l < opt.first_moment.size(); ++l) {
        r.matrix(opt.first_moment[l].weight);
        r.vector(opt.first_moment[l].bias);
        r.matrix(opt.second_moment[l].weight);
        r.vector(opt.second_moment[l].bias);
      }
      named.optimizer = std::move(opt);
    }
    ckpt.networks.push_back(std::move(named));
  }
  if (!r.at_end()) throw DataError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("write to '{}' failed", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hcrl
