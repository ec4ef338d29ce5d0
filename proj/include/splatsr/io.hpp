#pragma once

#include <string>
#include <vector>

#include "splatsr/train.hpp"

namespace splatsr {

/// Write-to-temp-then-rename; partial files are never observable at path.
void atomic_write(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path); // throws ParseError when unreadable

/// Binary little-endian PLY with the 3DGS vertex layout: x,y,z, nx,ny,nz
/// (zeros), f_dc_0..2, opacity (logit), scale_0..2 (log), rot_0..3 — all
/// float32. f_dc = (activated_color - 0.5) / 0.28209479177387814.
void ply_write(const Scene& scene, const std::string& path);

/// Inverts ply_write. Tolerates an f_rest_* block between f_dc_2 and opacity
/// (extra coefficients are ignored) so reference-trainer exports parse.
/// Malformed headers, unknown property orders and truncated payloads raise
/// ParseError with a byte offset.
Scene ply_read(const std::string& path);

/// Binary PPM (P6), maxval 255; values clamped to [0,1] then rounded half-up.
void ppm_write(const ImageBuffer& img, const std::string& path);
ImageBuffer ppm_read(const std::string& path);

/// One camera per line: id fx fy cx cy w h, then the 12 entries of the 3x4
/// world-to-camera block, row-major, whitespace-separated.
void cameras_write(const std::vector<CameraView>& views, const std::string& path);
std::vector<CameraView> cameras_read(const std::string& path);

/// Applies one key=value pair onto the config; unknown keys and out-of-range
/// values raise ConfigError naming the key.
void apply_config_kv(TrainConfig& config, const std::string& key, const std::string& value);

/// Flat key=value file ('#' comments, blank lines ignored) over defaults,
/// then the override pairs on top (command line wins).
TrainConfig parse_config(const std::string* path,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});

void write_telemetry_csv(const std::vector<TelemetryRow>& rows, const std::string& path);

} // namespace splatsr
