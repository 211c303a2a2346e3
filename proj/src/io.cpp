#include "agediff/io.hpp"

#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>

#include "agediff/conditioning.hpp"
#include "agediff/digest.hpp"
#include "agediff/error.hpp"

namespace agediff {

namespace {

void write_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, size_t n, const std::string& path) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw IoError("truncated file " + path);
}

template <class T>
void write_pod(std::ofstream& f, T v) {
  write_bytes(f, &v, sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v;
  read_bytes(f, &v, sizeof(T), path);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return f;
}

void write_header(std::ofstream& f, Dtype dtype, const Shape& shape) {
  write_bytes(f, "AGTF", 4);
  write_pod<uint32_t>(f, kTensorFileVersion);
  write_pod<uint8_t>(f, static_cast<uint8_t>(dtype));
  write_pod<uint8_t>(f, static_cast<uint8_t>(shape.size()));
  for (int d : shape) write_pod<uint32_t>(f, static_cast<uint32_t>(d));
}

Shape read_header(std::ifstream& f, Dtype want, const std::string& path) {
  char magic[4];
  read_bytes(f, magic, 4, path);
  if (std::memcmp(magic, "AGTF", 4) != 0) throw IoError(path + ": not a tensor file");
  const auto version = read_pod<uint32_t>(f, path);
  if (version != kTensorFileVersion)
    throw IoError(path + ": unsupported tensor format version " + std::to_string(version));
  const auto dtype = read_pod<uint8_t>(f, path);
  if (dtype != static_cast<uint8_t>(want))
    throw IoError(path + ": unexpected dtype code " + std::to_string(dtype));
  const auto rank = read_pod<uint8_t>(f, path);
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const auto d = read_pod<uint32_t>(f, path);
    shape.push_back(static_cast<int>(d));
  }
  return shape;
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

nlohmann::json constants_json(const RenderConstants& rc) {
  return {{"hair_base", rc.hair_base},     {"hair_gain", rc.hair_gain},
          {"wrinkle_gain", rc.wrinkle_gain}, {"tone_base", rc.tone_base},
          {"tone_gain", rc.tone_gain},     {"pattern_gain", rc.pattern_gain},
          {"bg_level", rc.bg_level},       {"bg_noise", rc.bg_noise},
          {"age_noise", rc.age_noise},     {"leak_norm", rc.leak_norm}};
}

RenderConstants constants_from_json(const nlohmann::json& j) {
  RenderConstants rc;
  rc.hair_base = j.at("hair_base").get<double>();
  rc.hair_gain = j.at("hair_gain").get<double>();
  rc.wrinkle_gain = j.at("wrinkle_gain").get<double>();
  rc.tone_base = j.at("tone_base").get<double>();
  rc.tone_gain = j.at("tone_gain").get<double>();
  rc.pattern_gain = j.at("pattern_gain").get<double>();
  rc.bg_level = j.at("bg_level").get<double>();
  rc.bg_noise = j.at("bg_noise").get<double>();
  rc.age_noise = j.at("age_noise").get<double>();
  rc.leak_norm = j.at("leak_norm").get<double>();
  return rc;
}

}  // namespace

void write_tensor_file(const std::string& path, const Tensor& t) {
  auto f = open_out(path);
  write_header(f, Dtype::f32, t.shape());
  write_bytes(f, t.values().data(), t.values().size() * sizeof(float));
  if (!f) throw IoError("write failed for " + path);
}

Tensor read_tensor_file(const std::string& path) {
  auto f = open_in(path);
  const Shape shape = read_header(f, Dtype::f32, path);
  std::vector<float> values(static_cast<size_t>(shape_numel(shape)));
  read_bytes(f, values.data(), values.size() * sizeof(float), path);
  return Tensor::from_values(shape, std::move(values));
}

void write_i32_file(const std::string& path, const Shape& shape,
                    const std::vector<int32_t>& values) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("i32 file: value count does not match shape");
  auto f = open_out(path);
  write_header(f, Dtype::i32, shape);
  write_bytes(f, values.data(), values.size() * sizeof(int32_t));
  if (!f) throw IoError("write failed for " + path);
}

std::pair<Shape, std::vector<int32_t>> read_i32_file(const std::string& path) {
  auto f = open_in(path);
  const Shape shape = read_header(f, Dtype::i32, path);
  std::vector<int32_t> values(static_cast<size_t>(shape_numel(shape)));
  read_bytes(f, values.data(), values.size() * sizeof(int32_t), path);
  return {shape, std::move(values)};
}

void write_f64_file(const std::string& path, const Shape& shape,
                    const std::vector<double>& values) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("f64 file: value count does not match shape");
  auto f = open_out(path);
  write_header(f, Dtype::f64, shape);
  write_bytes(f, values.data(), values.size() * sizeof(double));
  if (!f) throw IoError("write failed for " + path);
}

std::pair<Shape, std::vector<double>> read_f64_file(const std::string& path) {
  auto f = open_in(path);
  const Shape shape = read_header(f, Dtype::f64, path);
  std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
  read_bytes(f, values.data(), values.size() * sizeof(double), path);
  return {shape, std::move(values)};
}

void write_u64_file(const std::string& path, const std::vector<uint64_t>& values) {
  auto f = open_out(path);
  write_header(f, Dtype::u64, {static_cast<int>(values.size())});
  write_bytes(f, values.data(), values.size() * sizeof(uint64_t));
  if (!f) throw IoError("write failed for " + path);
}

std::vector<uint64_t> read_u64_file(const std::string& path) {
  auto f = open_in(path);
  const Shape shape = read_header(f, Dtype::u64, path);
  if (shape.size() != 1) throw IoError(path + ": u64 file must be rank 1");
  std::vector<uint64_t> values(static_cast<size_t>(shape[0]));
  read_bytes(f, values.data(), values.size() * sizeof(uint64_t), path);
  return values;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  auto f = open_out(path);
  write_bytes(f, "AGCK", 4);
  write_pod<uint32_t>(f, kCheckpointVersion);
  nlohmann::json meta = ck.meta;
  meta["format_version"] = kCheckpointVersion;
  const std::string blob = meta.dump();
  write_pod<uint64_t>(f, blob.size());
  write_bytes(f, blob.data(), blob.size());
  write_pod<uint32_t>(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    write_bytes(f, name.data(), name.size());
    write_pod<uint8_t>(f, static_cast<uint8_t>(Dtype::f32));
    write_pod<uint8_t>(f, static_cast<uint8_t>(t.shape().size()));
    for (int d : t.shape()) write_pod<uint32_t>(f, static_cast<uint32_t>(d));
    write_bytes(f, t.values().data(), t.values().size() * sizeof(float));
  }
  if (!f) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto f = open_in(path);
  char magic[4];
  read_bytes(f, magic, 4, path);
  if (std::memcmp(magic, "AGCK", 4) != 0) throw IoError(path + ": not a checkpoint");
  const auto version = read_pod<uint32_t>(f, path);
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto blob_len = read_pod<uint64_t>(f, path);
  std::string blob(blob_len, '\0');
  read_bytes(f, blob.data(), blob_len, path);
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad checkpoint meta: " + e.what());
  }
  const auto count = read_pod<uint32_t>(f, path);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(f, path);
    std::string name(name_len, '\0');
    read_bytes(f, name.data(), name_len, path);
    const auto dtype = read_pod<uint8_t>(f, path);
    if (dtype != static_cast<uint8_t>(Dtype::f32))
      throw IoError(path + ": tensor " + name + " has unexpected dtype");
    const auto rank = read_pod<uint8_t>(f, path);
    Shape shape;
    for (int d = 0; d < rank; ++d)
      shape.push_back(static_cast<int>(read_pod<uint32_t>(f, path)));
    std::vector<float> values(static_cast<size_t>(shape_numel(shape)));
    read_bytes(f, values.data(), values.size() * sizeof(float), path);
    ck.tensors.emplace_back(name, Tensor::from_values(shape, std::move(values)));
  }
  return ck;
}

void load_into(const Checkpoint& ck,
               const std::vector<std::pair<std::string, Tensor>>& dst) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.tensors) by_name[name] = &t;
  for (const auto& [name, target] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint is missing tensor " + name);
    const Tensor& src = *it->second;
    if (src.shape() != target.shape())
      throw ShapeError("checkpoint tensor " + name + " has shape " +
                       shape_str(src.shape()) + ", expected " +
                       shape_str(target.shape()));
    Tensor t = target;
    t.mutable_values() = src.values();
  }
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.shape().size() != 2) throw ShapeError("pgm wants a 2-d image");
  const int rows = image.shape()[0], cols = image.shape()[1];
  auto f = open_out(path);
  f << "P5\n" << cols << " " << rows << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(rows) * cols);
  for (size_t i = 0; i < bytes.size(); ++i) {
    double v = (static_cast<double>(image.values()[i]) + 1.0) * 0.5 * 255.0;
    v = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
    bytes[i] = static_cast<unsigned char>(v + 0.5);
  }
  write_bytes(f, bytes.data(), bytes.size());
  if (!f) throw IoError("write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
  auto f = open_in(path);
  std::string magic;
  int cols = 0, rows = 0, maxval = 0;
  f >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || maxval != 255 || cols < 1 || rows < 1)
    throw IoError(path + ": unsupported graymap");
  f.get();
  std::vector<unsigned char> bytes(static_cast<size_t>(rows) * cols);
  read_bytes(f, bytes.data(), bytes.size(), path);
  std::vector<float> values(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    values[i] = static_cast<float>(bytes[i] / 255.0 * 2.0 - 1.0);
  return Tensor::from_values({rows, cols}, std::move(values));
}

void write_pgm_grid(const std::string& path,
                    const std::vector<std::vector<Tensor>>& rows) {
  if (rows.empty() || rows[0].empty()) throw ValueError("empty image grid");
  const Shape cell = rows[0][0].shape();
  if (cell.size() != 2) throw ShapeError("grid cells must be 2-d images");
  const size_t cols = rows[0].size();
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged image grid");
    for (const auto& img : row)
      if (img.shape() != cell) throw ShapeError("grid cells differ in shape");
  }
  const int ch = cell[0], cw = cell[1];
  const int H = ch * static_cast<int>(rows.size());
  const int W = cw * static_cast<int>(cols);
  std::vector<float> canvas(static_cast<size_t>(H) * W, -1.0f);
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < cols; ++c) {
      const auto& v = rows[r][c].values();
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          canvas[(r * ch + y) * static_cast<size_t>(W) + c * cw + x] =
              v[static_cast<size_t>(y) * cw + x];
    }
  write_pgm(path, Tensor::from_values({H, W}, std::move(canvas)));
}

std::string save_dataset(const std::string& dir, const std::vector<DataRecord>& records,
                         const DatasetMeta& meta) {
  if (records.empty()) throw ValueError("refusing to save an empty dataset");
  std::filesystem::create_directories(dir);
  const int n = static_cast<int>(records.size());

  std::vector<float> images, e_id, e_age;
  std::vector<double> u;
  std::vector<int32_t> captions, phrases, ages;
  std::vector<uint64_t> noise_keys;
  std::map<int, int> age_counts;
  for (const auto& r : records) {
    const auto& img = r.image.values();
    images.insert(images.end(), img.begin(), img.end());
    e_id.insert(e_id.end(), r.e_id.values().begin(), r.e_id.values().end());
    e_age.insert(e_age.end(), r.e_age.values().begin(), r.e_age.values().end());
    u.insert(u.end(), r.spec.u.begin(), r.spec.u.end());
    for (int tok : r.caption) captions.push_back(tok);
    for (int tok : r.age_phrase) phrases.push_back(tok);
    ages.push_back(r.age);
    noise_keys.push_back(r.spec.noise_key);
    ++age_counts[r.age];
  }

  write_tensor_file(join(dir, "images.agt"), Tensor::from_values({n, kImageSize, kImageSize}, std::move(images)));
  write_tensor_file(join(dir, "e_id.agt"), Tensor::from_values({n, kEmbedDim}, std::move(e_id)));
  write_tensor_file(join(dir, "e_age.agt"), Tensor::from_values({n, kEmbedDim}, std::move(e_age)));
  write_f64_file(join(dir, "u.agt"), {n, 8}, u);
  write_i32_file(join(dir, "caption.agt"), {n, kCaptionLen}, captions);
  write_i32_file(join(dir, "age_phrase.agt"), {n, 3}, phrases);
  write_i32_file(join(dir, "age.agt"), {n}, ages);
  write_u64_file(join(dir, "noise_key.agt"), noise_keys);

  nlohmann::json manifest;
  manifest["format_version"] = meta.format_version;
  manifest["n"] = n;
  manifest["seed"] = meta.seed;
  manifest["distribution"] = meta.distribution;
  manifest["constants"] = constants_json(meta.constants);
  nlohmann::json counts = nlohmann::json::object();
  for (auto [age, count] : age_counts) counts[std::to_string(age)] = count;
  manifest["age_counts"] = counts;
  nlohmann::json files = nlohmann::json::object();
  for (const char* name : {"images.agt", "e_id.agt", "e_age.agt", "u.agt", "caption.agt",
                           "age_phrase.agt", "age.agt", "noise_key.agt"})
    files[name] = file_checksum(join(dir, name));
  manifest["files"] = files;

  const std::string manifest_path = join(dir, "manifest.json");
  {
    auto f = open_out(manifest_path);
    f << manifest.dump(2) << "\n";
  }
  return file_checksum(manifest_path);
}

LoadedDataset load_dataset(const std::string& dir) {
  const std::string manifest_path = join(dir, "manifest.json");
  nlohmann::json manifest;
  {
    auto f = open_in(manifest_path);
    try {
      f >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw IoError(manifest_path + ": bad manifest: " + e.what());
    }
  }
  LoadedDataset out;
  out.manifest_digest = file_checksum(manifest_path);
  out.meta.format_version = manifest.at("format_version").get<int>();
  if (out.meta.format_version != kDatasetVersion)
    throw IoError(dir + ": unsupported dataset version " +
                  std::to_string(out.meta.format_version));
  out.meta.n = manifest.at("n").get<int>();
  out.meta.seed = manifest.at("seed").get<uint64_t>();
  out.meta.distribution = manifest.at("distribution").get<std::string>();
  out.meta.constants = constants_from_json(manifest.at("constants"));

  for (auto& [name, want] : manifest.at("files").items()) {
    const std::string got = file_checksum(join(dir, name));
    if (got != want.get<std::string>())
      throw IoError(dir + "/" + name + ": checksum mismatch, dataset is corrupt");
  }

  const Tensor images = read_tensor_file(join(dir, "images.agt"));
  const Tensor e_id = read_tensor_file(join(dir, "e_id.agt"));
  const Tensor e_age = read_tensor_file(join(dir, "e_age.agt"));
  const auto u = read_f64_file(join(dir, "u.agt"));
  const auto captions = read_i32_file(join(dir, "caption.agt"));
  const auto phrases = read_i32_file(join(dir, "age_phrase.agt"));
  const auto ages = read_i32_file(join(dir, "age.agt"));
  const auto noise_keys = read_u64_file(join(dir, "noise_key.agt"));

  const int n = out.meta.n;
  const Shape want_img{n, kImageSize, kImageSize};
  if (images.shape() != want_img || e_id.shape() != Shape{n, kEmbedDim} ||
      e_age.shape() != Shape{n, kEmbedDim} || u.first != Shape{n, 8} ||
      captions.first != Shape{n, kCaptionLen} || phrases.first != Shape{n, 3} ||
      ages.first != Shape{n} || static_cast<int>(noise_keys.size()) != n)
    throw IoError(dir + ": field shapes disagree with manifest n");

  out.records.resize(static_cast<size_t>(n));
  constexpr int px = kImageSize * kImageSize;
  for (int i = 0; i < n; ++i) {
    DataRecord& r = out.records[static_cast<size_t>(i)];
    const size_t ii = static_cast<size_t>(i);
    r.image = Tensor::from_values(
        {kImageSize, kImageSize},
        {images.values().begin() + static_cast<long>(ii) * px,
         images.values().begin() + static_cast<long>(ii + 1) * px});
    r.e_id = Tensor::from_values(
        {1, kEmbedDim},
        {e_id.values().begin() + static_cast<long>(ii) * kEmbedDim,
         e_id.values().begin() + static_cast<long>(ii + 1) * kEmbedDim});
    r.e_age = Tensor::from_values(
        {1, kEmbedDim},
        {e_age.values().begin() + static_cast<long>(ii) * kEmbedDim,
         e_age.values().begin() + static_cast<long>(ii + 1) * kEmbedDim});
    for (int k = 0; k < 8; ++k) r.spec.u[static_cast<size_t>(k)] = u.second[ii * 8 + k];
    r.caption.assign(captions.second.begin() + static_cast<long>(ii) * kCaptionLen,
                     captions.second.begin() + static_cast<long>(ii + 1) * kCaptionLen);
    r.age_phrase.assign(phrases.second.begin() + static_cast<long>(ii) * 3,
                        phrases.second.begin() + static_cast<long>(ii + 1) * 3);
    r.age = ages.second[ii];
    r.spec.age = r.age;
    r.spec.noise_key = noise_keys[ii];
  }
  return out;
}

void RunManifest::add_output(const std::string& path) {
  outputs.emplace_back(path, file_checksum(path));
}

void write_run_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config_digest"] = m.config_digest;
  j["dataset_manifest"] = m.dataset_manifest;
  j["code_version"] = m.code_version;
  j["seed"] = m.seed;
  j["started"] = m.started;
  j["finished"] = m.finished;
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& [p, checksum] : m.outputs)
    outs.push_back({{"path", p}, {"checksum", checksum}});
  j["outputs"] = outs;
  auto f = open_out(path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed for " + path);
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace agediff
