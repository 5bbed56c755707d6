#include "nfembed/pipeline/bundle.hpp"

#include <sstream>

#include "nfembed/errors.hpp"
#include "nfembed/io/binary.hpp"

namespace nfembed {

bool ModelBundle::has(std::string_view name) const {
  for (const auto& [n, _] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& ModelBundle::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("model bundle has no tensor '" + std::string(name) + "'", 0);
}

std::string ModelBundle::kind() const { return meta.is_object() ? meta.value("kind", std::string{}) : std::string{}; }

std::string encode_bundle(const ModelBundle& b) {
  io::ByteWriter w;
  w.bytes(kBundleMagic);
  w.u32(kBundleVersion);
  w.u32(static_cast<std::uint32_t>(b.tensors.size()));
  for (const auto& [name, t] : b.tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  const std::string meta = b.meta.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  return w.take();
}

ModelBundle decode_bundle(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4, "magic") != kBundleMagic) throw FormatError("bad magic: not a model bundle", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.u32("format version");
  if (version != kBundleVersion)
    throw FormatError("unsupported model bundle version " + std::to_string(version), version_at);
  ModelBundle b;
  const auto n = r.u32("tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = r.u16("tensor name length");
    std::string name(r.bytes(len, "tensor name"));
    const auto rank = r.u8("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("tensor dimension");
    const std::size_t count = shape_size(shape);
    if (count > r.remaining() / 8)
      throw FormatError("tensor '" + name + "' larger than the remaining payload", r.offset());
    std::vector<double> data(count);
    for (double& v : data) v = r.f64("tensor payload");
    b.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  const auto meta_len = r.u32("metadata length");
  const std::size_t meta_at = r.offset();
  const auto meta = r.bytes(meta_len, "metadata");
  try {
    b.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed bundle metadata: ") + e.what(), meta_at);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after bundle metadata", r.offset());
  return b;
}

void save_bundle(const ModelBundle& b, const std::string& path) { io::write_file(path, encode_bundle(b)); }

ModelBundle load_bundle(const std::string& path) { return decode_bundle(io::read_file(path)); }

void add_parameters(ModelBundle& b, std::span<Parameter* const> params) {
  for (const Parameter* p : params) b.add(p->name, p->value);
}

void load_parameters(const ModelBundle& b, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    const Tensor& t = b.tensor(p->name);
    if (t.shape() != p->value.shape())
      throw FormatError("tensor '" + p->name + "' has shape " + shape_string(t.shape()) + ", model expects " +
                            shape_string(p->value.shape()),
                        0);
    p->value = t;
    p->zero_grad();
  }
}

std::uint64_t parameter_checksum(std::span<const Parameter* const> params) {
  io::ByteWriter w;
  for (const Parameter* p : params) {
    w.bytes(p->name);
    for (std::size_t d : p->value.shape()) w.u64(d);
    for (double v : p->value.values()) w.f64(v);
  }
  return io::fnv1a64(w.buffer());
}

std::string curves_csv(const std::vector<std::string>& names, const std::vector<std::vector<double>>& columns) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  std::size_t rows = 0;
  for (const auto& c : columns) rows = std::max(rows, c.size());
  for (std::size_t i = 0; i < rows; ++i) {
    out << i;
    for (const auto& c : columns) {
      out << ',';
      if (i < c.size()) out << c[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace nfembed
