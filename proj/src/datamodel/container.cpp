#include "nfembed/datamodel/container.hpp"

#include "nfembed/errors.hpp"
#include "nfembed/io/binary.hpp"

namespace nfembed {
namespace {

nlohmann::json traits_json(const TraitRecord& tr) {
  nlohmann::json j = nlohmann::json::object();
  for (Trait t : kAllTraits) {
    if (t == Trait::nf_experience) {
      if (tr.nf_experience) j[std::string(trait_name(t))] = nf_experience_name(*tr.nf_experience);
    } else if (auto v = tr.value(t)) {
      j[std::string(trait_name(t))] = *v;
    }
  }
  return j;
}

TraitRecord traits_from_json(const nlohmann::json& j) {
  TraitRecord tr;
  for (Trait t : kAllTraits) {
    const auto it = j.find(std::string(trait_name(t)));
    if (it == j.end() || it->is_null()) continue;
    if (t == Trait::nf_experience)
      tr.nf_experience = parse_nf_experience(it->get<std::string>());
    else
      tr.set(t, it->get<double>());
  }
  return tr;
}

}  // namespace

std::string encode_dataset(const Dataset& ds) {
  validate(ds);
  const auto& L = ds.layout;
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.subjects.size()));
  w.u16(L.dims.h);
  w.u16(L.dims.w);
  w.u16(L.dims.d);
  w.u16(L.passive_len);
  w.u16(L.active_len);
  w.u16(L.runs);
  w.u8(static_cast<std::uint8_t>(L.cohort));

  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : ds.subjects) {
    if (s.id.size() > 0xFFFF) throw DataError("subject id longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(s.id.size()));
    w.bytes(s.id);
    for (float v : s.passive) w.f32(v);
    for (float v : s.active) w.f32(v);
    subjects.push_back({{"id", s.id}, {"cohort", cohort_name(s.cohort)}, {"traits", traits_json(s.traits)}});
  }
  const nlohmann::json trailer{
      {"format", "nfembed-dataset"}, {"subjects", std::move(subjects)}, {"provenance", ds.provenance}};
  w.bytes(trailer.dump());
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  io::ByteReader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (magic != kDatasetMagic) throw FormatError("bad magic: not a dataset container", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.u32("format version");
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset format version " + std::to_string(version), version_at);

  Dataset ds;
  const auto n = r.u32("subject count");
  auto& L = ds.layout;
  L.dims.h = r.u16("H");
  L.dims.w = r.u16("W");
  L.dims.d = r.u16("D");
  L.passive_len = r.u16("T");
  L.active_len = r.u16("T_active");
  L.runs = r.u16("M");
  const std::size_t cohort_at = r.offset();
  const auto cohort = r.u8("cohort");
  if (cohort > static_cast<std::uint8_t>(Cohort::synthetic))
    throw FormatError("invalid cohort code " + std::to_string(cohort), cohort_at);
  L.cohort = static_cast<Cohort>(cohort);
  if (L.frame_size() == 0 || L.runs == 0 || L.passive_len == 0 || L.active_len == 0)
    throw FormatError("header has a zero dimension", 12);

  ds.subjects.resize(n);
  for (auto& s : ds.subjects) {
    const auto len = r.u16("subject id length");
    s.id = std::string(r.bytes(len, "subject id"));
    s.cohort = L.cohort;
    s.passive.resize(L.passive_values());
    s.active.resize(L.active_values());
    for (float& v : s.passive) v = r.f32("passive frame payload");
    for (float& v : s.active) v = r.f32("active frame payload");
  }

  const std::size_t trailer_at = r.offset();
  nlohmann::json trailer;
  try {
    trailer = nlohmann::json::parse(r.rest());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metadata trailer: ") + e.what(), trailer_at);
  }
  try {
    const auto& meta = trailer.at("subjects");
    if (meta.size() != ds.subjects.size())
      throw FormatError("trailer lists " + std::to_string(meta.size()) + " subjects, payload has " +
                            std::to_string(ds.subjects.size()),
                        trailer_at);
    for (std::size_t i = 0; i < meta.size(); ++i) {
      auto& s = ds.subjects[i];
      if (meta[i].at("id").get<std::string>() != s.id)
        throw FormatError("trailer subject order differs at '" + s.id + "'", trailer_at);
      s.cohort = parse_cohort(meta[i].at("cohort").get<std::string>());
      s.traits = traits_from_json(meta[i].at("traits"));
    }
    if (auto it = trailer.find("provenance"); it != trailer.end()) ds.provenance = *it;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata trailer: ") + e.what(), trailer_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("metadata trailer: ") + e.what(), trailer_at);
  }
  validate(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace nfembed
