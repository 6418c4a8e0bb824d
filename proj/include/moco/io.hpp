#pragma once

#include "moco/volume.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace moco::io {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json(fs::path const &path);
// Pretty-printed, key order sorted, trailing newline. Output is byte-stable
// for equal content.
void write_json(fs::path const &path, json const &j);
void write_text(fs::path const &path, std::string const &text);

// Little-endian payload helpers.
void write_f32(fs::path const &path, std::span<double const> values);
std::vector<double> read_f32(fs::path const &path, std::size_t expected);
void write_f64(fs::path const &path, std::span<double const> values);
std::vector<double> read_f64(fs::path const &path, std::size_t expected);

// Raw volume: `header` is a JSON sidecar, the payload is written next to it
// with extension ".raw" and holds nx*ny*nz float32 little-endian values in
// the documented flat index order.
void write_volume(fs::path const &header, Volume const &v);
Volume read_volume(fs::path const &header);
void write_mask(fs::path const &header, ForegroundMask const &m);
ForegroundMask read_mask(fs::path const &header);

json geometry_to_json(Geometry const &g);
Geometry geometry_from_json(json const &j);

// 16-bit binary PGM, linear rescale of [min, max] to [0, 65535]. The rescale
// is recorded in a ".json" sidecar next to the image.
void write_pgm16(fs::path const &path, Image2D const &img);

// Throws IoError naming the path when it does not exist.
void require_exists(fs::path const &path);

} // namespace moco::io
