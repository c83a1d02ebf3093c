#include "coast/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "coast/errors.hpp"

namespace coast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "coast-checkpoint-v1";

void put_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

fs::path manifest_path(const fs::path& blob) {
  fs::path p = blob;
  p += ".json";
  return p;
}

void round_to_f32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const fs::path& blob, const ParamSet& params, const json& metadata) {
  std::string bytes;
  json tensors = json::array();
  for (const auto& e : params) {
    const std::size_t offset = bytes.size();
    for (double v : e.tensor.data()) put_f32_le(bytes, static_cast<float>(v));
    tensors.push_back({{"name", e.name},
                       {"shape", {e.tensor.rows(), e.tensor.cols()}},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", bytes.size() - offset}});
  }
  if (blob.has_parent_path()) fs::create_directories(blob.parent_path());
  {
    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint blob " + blob.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  const json manifest = {{"format", kFormat},
                         {"blob", blob.filename().string()},
                         {"byte_order", "little"},
                         {"tensors", tensors},
                         {"metadata", metadata}};
  std::ofstream out(manifest_path(blob), std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint manifest " + manifest_path(blob).string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& blob) {
  std::ifstream mf(manifest_path(blob));
  if (!mf) throw IoError("cannot open checkpoint manifest " + manifest_path(blob).string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) throw IoError("unsupported checkpoint format");

  std::ifstream in(blob, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint blob " + blob.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", json::object());
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("dtype") != "f32") throw IoError("unsupported tensor dtype in checkpoint");
    CheckpointTensor ct;
    ct.name = t.at("name").get<std::string>();
    ct.shape = Shape{t.at("shape").at(0).get<std::size_t>(), t.at("shape").at(1).get<std::size_t>()};
    const auto offset = t.at("offset").get<std::size_t>();
    const auto nbytes = t.at("nbytes").get<std::size_t>();
    if (nbytes != ct.shape.size() * 4 || offset + nbytes > bytes.size()) {
      throw IoError("checkpoint tensor " + ct.name + " does not fit the blob");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
    ct.values.resize(ct.shape.size());
    for (std::size_t i = 0; i < ct.values.size(); ++i) ct.values[i] = get_f32_le(p + 4 * i);
    ckpt.tensors.push_back(std::move(ct));
  }
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, const ParamSet& params) {
  for (const auto& e : params) {
    const CheckpointTensor* found = nullptr;
    for (const auto& t : ckpt.tensors)
      if (t.name == e.name) found = &t;
    if (found == nullptr) throw IoError("checkpoint is missing tensor " + e.name);
    if (found->shape != e.tensor.shape()) {
      throw IoError("checkpoint tensor " + e.name + " has shape " + found->shape.str() + ", expected " +
                    e.tensor.shape().str());
    }
    Tensor t = e.tensor;
    auto dst = t.mutable_data();
    std::copy(found->values.begin(), found->values.end(), dst.begin());
  }
}

}  // namespace coast
