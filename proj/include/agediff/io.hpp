#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "agediff/synthface.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr int kTensorFileVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr int kDatasetVersion = 1;

// Flat binary tensor file: "AGTF" magic, format version, dtype code, rank,
// dims, then row-major little-endian payload.
enum class Dtype : uint8_t { f32 = 1, i32 = 2, u64 = 3, f64 = 4 };

void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

void write_i32_file(const std::string& path, const Shape& shape,
                    const std::vector<int32_t>& values);
std::pair<Shape, std::vector<int32_t>> read_i32_file(const std::string& path);

void write_f64_file(const std::string& path, const Shape& shape,
                    const std::vector<double>& values);
std::pair<Shape, std::vector<double>> read_f64_file(const std::string& path);

void write_u64_file(const std::string& path, const std::vector<uint64_t>& values);
std::vector<uint64_t> read_u64_file(const std::string& path);

// Checkpoint: "AGCK" magic, format version, JSON meta blob, then named f32
// tensors. Meta always carries format_version and a kind tag.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into same-named destination tensors in place.
// Every destination name must be present with a matching shape.
void load_into(const Checkpoint& ck, const std::vector<std::pair<std::string, Tensor>>& dst);

// 8-bit binary graymap. Values map linearly from [-1, 1] to [0, 255].
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);

// Tiles images into one graymap; every cell must share the same shape.
// rows[r][c] is the image at grid row r, column c.
void write_pgm_grid(const std::string& path,
                    const std::vector<std::vector<Tensor>>& rows);

struct DatasetMeta {
  int format_version = kDatasetVersion;
  int n = 0;
  uint64_t seed = 0;
  std::string distribution = "uniform";
  RenderConstants constants;
};

// Writes one tensor file per record field plus manifest.json with seed,
// distribution, render constants, per-age counts, and file checksums.
// Returns the manifest file's own checksum.
std::string save_dataset(const std::string& dir, const std::vector<DataRecord>& records,
                         const DatasetMeta& meta);

struct LoadedDataset {
  std::vector<DataRecord> records;
  DatasetMeta meta;
  std::string manifest_digest;
};

// Reads a dataset directory back, verifying every file checksum.
LoadedDataset load_dataset(const std::string& dir);

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::string dataset_manifest;
  std::string code_version = kCodeVersion;
  uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::pair<std::string, std::string>> outputs;  // path, checksum

  void add_output(const std::string& path);
};

void write_run_manifest(const std::string& path, const RunManifest& m);

std::string timestamp_utc();

}  // namespace agediff
