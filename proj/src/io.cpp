#include "moco/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace moco::io {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

void require_exists(fs::path const &path) {
  if (!fs::exists(path)) {
    throw IoError(fmt::format("path does not exist: {}", path.string()));
  }
}

json read_json(fs::path const &path) {
  require_exists(path);
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open {}", path.string()));
  }
  try {
    return json::parse(in);
  } catch (json::exception const &e) {
    throw IoError(fmt::format("malformed JSON in {}: {}", path.string(), e.what()));
  }
}

void write_text(fs::path const &path, std::string const &text) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  out << text;
  if (!out) {
    throw IoError(fmt::format("write failed for {}", path.string()));
  }
}

void write_json(fs::path const &path, json const &j) { write_text(path, j.dump(2) + "\n"); }

namespace {

template <class Stored> void write_payload(fs::path const &path, std::span<double const> values) {
  std::vector<Stored> buf(values.size());
  std::transform(values.begin(), values.end(), buf.begin(), [](double x) { return static_cast<Stored>(x); });
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  out.write(reinterpret_cast<char const *>(buf.data()), std::streamsize(buf.size() * sizeof(Stored)));
  if (!out) {
    throw IoError(fmt::format("write failed for {}", path.string()));
  }
}

template <class Stored> std::vector<double> read_payload(fs::path const &path, std::size_t expected) {
  require_exists(path);
  auto const bytes = fs::file_size(path);
  if (bytes != expected * sizeof(Stored)) {
    throw IoError(fmt::format("{} holds {} bytes, expected {}", path.string(), bytes, expected * sizeof(Stored)));
  }
  std::vector<Stored> buf(expected);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char *>(buf.data()), std::streamsize(bytes));
  if (!in) {
    throw IoError(fmt::format("read failed for {}", path.string()));
  }
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    out[i] = static_cast<double>(buf[i]);
    if (!std::isfinite(out[i])) {
      throw ValidationError(fmt::format("{} contains a non-finite value at element {}", path.string(), i));
    }
  }
  return out;
}

fs::path payload_path(fs::path const &header) {
  auto p = header;
  p.replace_extension(".raw");
  return p;
}

} // namespace

void write_f32(fs::path const &path, std::span<double const> values) { write_payload<float>(path, values); }
std::vector<double> read_f32(fs::path const &path, std::size_t expected) { return read_payload<float>(path, expected); }
void write_f64(fs::path const &path, std::span<double const> values) { write_payload<double>(path, values); }
std::vector<double> read_f64(fs::path const &path, std::size_t expected) { return read_payload<double>(path, expected); }

json geometry_to_json(Geometry const &g) {
  return json{{"dims", {g.dims.nx, g.dims.ny, g.dims.nz}},
              {"spacing_mm", {g.spacing.sx, g.spacing.sy, g.spacing.sz}},
              {"axis_labels", g.labels},
              {"phase_encode_axis", g.labels[std::size_t(g.pe_axis)]},
              {"index_order", "i + nx*(j + ny*k); x fastest, z slowest"}};
}

Geometry geometry_from_json(json const &j) {
  try {
    Geometry g;
    auto const d = j.at("dims").get<std::array<int, 3>>();
    auto const s = j.at("spacing_mm").get<std::array<double, 3>>();
    g.dims = {d[0], d[1], d[2]};
    g.spacing = {s[0], s[1], s[2]};
    g.labels = j.at("axis_labels").get<AxisLabels>();
    auto const pe = j.at("phase_encode_axis").get<std::string>();
    auto const it = std::find(g.labels.begin(), g.labels.end(), pe);
    if (it == g.labels.end() || std::count(g.labels.begin(), g.labels.end(), pe) != 1) {
      throw ValidationError(fmt::format("phase-encode axis '{}' must name exactly one axis label", pe));
    }
    g.pe_axis = int(it - g.labels.begin());
    g.validate();
    return g;
  } catch (json::exception const &e) {
    throw ValidationError(fmt::format("malformed geometry header: {}", e.what()));
  }
}

void write_volume(fs::path const &header, Volume const &v) {
  validate(v);
  auto j = geometry_to_json(v.geom);
  j["value_type"] = "float32 little-endian";
  j["payload"] = payload_path(header).filename().string();
  write_f32(payload_path(header), v.data);
  write_json(header, j);
}

Volume read_volume(fs::path const &header) {
  auto const j = read_json(header);
  auto g = geometry_from_json(j);
  if (j.value("value_type", "") != "float32 little-endian") {
    throw ValidationError(fmt::format("{}: unsupported value type", header.string()));
  }
  auto const payload = header.parent_path() / j.at("payload").get<std::string>();
  return Volume(g, read_f32(payload, g.dims.size()));
}

void write_mask(fs::path const &header, ForegroundMask const &m) {
  Volume v(m.geom);
  std::copy(m.data.begin(), m.data.end(), v.data.begin());
  write_volume(header, v);
}

ForegroundMask read_mask(fs::path const &header) {
  auto const v = read_volume(header);
  ForegroundMask m(v.geom);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] != 0.0 && v.data[i] != 1.0) {
      throw ValidationError(fmt::format("{}: mask value {} is not 0 or 1", header.string(), v.data[i]));
    }
    m.data[i] = v.data[i] != 0.0 ? 1 : 0;
  }
  return m;
}

void write_pgm16(fs::path const &path, Image2D const &img) {
  validate(img);
  auto const [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  double const range = *hi - *lo;
  double const scale = range > 0.0 ? 65535.0 / range : 0.0;
  std::string bytes = fmt::format("P5\n{} {}\n65535\n", img.width, img.height);
  // PGM rows run top to bottom; row r is the slow in-plane coordinate.
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      auto const q = static_cast<std::uint16_t>(std::lround((img(u, v) - *lo) * scale));
      bytes.push_back(static_cast<char>(q >> 8));
      bytes.push_back(static_cast<char>(q & 0xff));
    }
  }
  write_text(path, bytes);
  auto side = path;
  side.replace_extension(".json");
  write_json(side, json{{"min", *lo},
                        {"max", *hi},
                        {"scale", scale},
                        {"mapping", "pixel = round((value - min) * scale)"},
                        {"source", img.provenance.source},
                        {"axis", img.provenance.axis},
                        {"index", img.provenance.index}});
}

} // namespace moco::io
