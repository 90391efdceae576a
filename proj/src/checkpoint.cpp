#include "lway/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <unordered_map>

#include "lway/errors.hpp"

namespace lway::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr const char* kFormat = "lway-checkpoint";
constexpr int kVersion = 1;

std::string blob_name(const std::string& tensor) { return tensor + ".bin"; }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());

  nlohmann::json manifest = {{"format", kFormat}, {"version", kVersion}, {"dtype", "float32-le"}};
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    if (ag::Tensor<float>::count(t.shape) != t.data.size())
      throw ArgumentError("checkpoint tensor '" + t.name + "' has inconsistent shape");
    const auto file = blob_name(t.name);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("failed writing '" + (dir / file).string() + "'");
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"file", file}});
  }
  manifest["metadata"] = ckpt.metadata;

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << '\n';
  if (!mf) throw IoError("failed writing manifest in '" + dir.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("no checkpoint manifest in '" + dir.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest in '" + dir.string() + "': " + e.what());
  }
  if (manifest.value("format", std::string{}) != kFormat || manifest.value("dtype", std::string{}) != "float32-le")
    throw FormatError("'" + dir.string() + "' is not an lway float32 checkpoint");

  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    CheckpointTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<int>>();
    t.data.resize(ag::Tensor<float>::count(t.shape));
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing tensor blob '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != t.data.size() * sizeof(float))
      throw FormatError("blob '" + path.string() + "' has " + std::to_string(bytes) + " bytes, expected " +
                        std::to_string(t.data.size() * sizeof(float)));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <class T>
void append_parameters(Checkpoint& ckpt, const ParamSet<T>& params) {
  for (const auto& p : params.list()) {
    CheckpointTensor t{p.name, p.var.shape(), {}};
    t.data.assign(p.var.value().data.begin(), p.var.value().data.end());
    ckpt.tensors.push_back(std::move(t));
  }
}

template <class T>
void restore_parameters(const Checkpoint& ckpt, ParamSet<T>& params) {
  std::unordered_map<std::string, const CheckpointTensor*> index;
  for (const auto& t : ckpt.tensors) index[t.name] = &t;
  for (auto& p : params.list()) {
    const auto it = index.find(p.name);
    if (it == index.end()) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second->shape != p.var.shape())
      throw FormatError("checkpoint tensor '" + p.name + "' has shape " + ag::shape_string(it->second->shape) +
                        ", model expects " + ag::shape_string(p.var.shape()));
    auto& dst = p.var.mutable_value().data;
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
  }
}

template void append_parameters<float>(Checkpoint&, const ParamSet<float>&);
template void append_parameters<double>(Checkpoint&, const ParamSet<double>&);
template void restore_parameters<float>(const Checkpoint&, ParamSet<float>&);
template void restore_parameters<double>(const Checkpoint&, ParamSet<double>&);

}  // namespace lway::nn
