#include "protoconcepts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'C', 'O', 'N', 'C', 'E', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void scalar(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    scalar(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  void raw(const std::vector<T>& v) {
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  void params(const std::vector<Param*>& ps) {
    scalar(static_cast<std::uint32_t>(ps.size()));
    for (const auto* p : ps) {
      scalar(static_cast<std::uint64_t>(p->value.size()));
      raw(p->value);
    }
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}
  template <typename T>
  T scalar() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = scalar<std::uint32_t>();
    std::string s(n, '\0');
    is_.read(s.data(), n);
    check();
    return s;
  }
  template <typename T>
  std::vector<T> raw(size_t n) {
    std::vector<T> v(n);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    check();
    return v;
  }
  void params(const std::vector<Param*>& ps, const char* what) {
    const auto n = scalar<std::uint32_t>();
    if (n != ps.size()) throw Error("checkpoint '" + source_ + "': " + what + " parameter count mismatch");
    for (auto* p : ps) {
      const auto len = scalar<std::uint64_t>();
      if (len != p->value.size()) throw Error("checkpoint '" + source_ + "': " + what + " parameter shape mismatch");
      p->value = raw<double>(len);
      p->grad.assign(len, 0.0);
    }
  }

 private:
  void check() {
    if (!is_) throw Error("checkpoint '" + source_ + "' is truncated");
  }
  std::istream& is_;
  std::string source_;
};

}  // namespace

void save_checkpoint(const ProtoConceptsNet& net, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path) {
  net.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint '" + path.string() + "'");
    Writer w(os);
    os.write(kMagic, sizeof(kMagic));
    w.scalar(kCheckpointVersion);
    w.scalar(static_cast<std::uint32_t>(net.geometry == Geometry::Log ? 0 : 1));
    w.str(net.backbone->name());
    w.scalar(static_cast<std::int32_t>(net.image_size));
    w.scalar(static_cast<std::int32_t>(net.latent_dim()));
    w.scalar(static_cast<std::int32_t>(net.num_prototypes()));
    w.scalar(static_cast<std::int32_t>(net.num_classes()));
    w.scalar(net.geometry_config.epsilon);
    w.scalar(net.geometry_config.min_radius);
    auto& mutable_net = const_cast<ProtoConceptsNet&>(net);
    w.params(mutable_net.backbone->parameters());
    w.params(mutable_net.addon.parameters());
    for (const auto& b : net.balls) w.raw(b.center);
    for (const auto& b : net.balls) w.scalar(b.radius_param);
    for (int v : net.evidence.assignment().matrix()) w.scalar(static_cast<std::int32_t>(v));
    w.raw(net.evidence.weights());
    for (int v : net.evidence.prune_mask()) w.scalar(static_cast<std::int32_t>(v));
    w.scalar(static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
      w.str(k);
      w.str(v);
    }
    if (!os) throw Error("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("'" + path.string() + "' is not a checkpoint");
  }
  Reader r(is, path.string());
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto geom = r.scalar<std::uint32_t>();
  if (geom > 1) throw Error("checkpoint has unknown geometry tag");

  Checkpoint ck;
  auto& net = ck.net;
  net.geometry = geom == 0 ? Geometry::Log : Geometry::Cosine;
  std::mt19937_64 rng(0);
  net.backbone = make_backbone(r.str(), rng);
  net.image_size = r.scalar<std::int32_t>();
  const int dim = r.scalar<std::int32_t>();
  const int m = r.scalar<std::int32_t>();
  const int c = r.scalar<std::int32_t>();
  if (dim < 1 || m < 0 || c < 1) throw Error("checkpoint '" + path.string() + "' has invalid dimensions");
  net.geometry_config.epsilon = r.scalar<double>();
  net.geometry_config.min_radius = r.scalar<double>();
  r.params(net.backbone->parameters(), "backbone");
  net.addon = AddOnLayers(net.backbone->output_channels(), dim, net.geometry, rng);
  r.params(net.addon.parameters(), "add-on");
  net.balls.resize(static_cast<size_t>(m));
  for (auto& b : net.balls) {
    b.center = r.raw<double>(static_cast<size_t>(dim));
    b.geometry = net.geometry;
  }
  for (auto& b : net.balls) b.radius_param = r.scalar<double>();
  std::vector<int> assignment(static_cast<size_t>(m) * c);
  for (auto& v : assignment) v = r.scalar<std::int32_t>();
  auto weights = r.raw<double>(static_cast<size_t>(m) * c);
  std::vector<int> mask(static_cast<size_t>(m));
  for (auto& v : mask) v = r.scalar<std::int32_t>();
  net.evidence = EvidenceLayer(ClassAssignmentView(assignment, m, c), std::move(weights));
  net.evidence.set_prune_mask(std::move(mask));
  const auto n_meta = r.scalar<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    ck.metadata[k] = r.str();
  }
  net.validate();
  return ck;
}

}  // namespace protoconcepts
