#include "gf3d/diffcore/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "gf3d/errors.h"

namespace gf3d {

namespace {

constexpr char kMagic[8] = {'G', 'F', '3', 'D', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.tensor.data().data()),
              static_cast<std::streamsize>(t.tensor.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::uint64_t offset = 0;
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError("bad checkpoint magic", offset);
  }
  offset += sizeof magic;
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw FormatError("truncated checkpoint header length", offset);
  offset += sizeof len;
  std::string h(len, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint header", offset);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("unparseable checkpoint header: ") + e.what(), offset);
  }
  offset += len;
  std::vector<NamedTensor> out;
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw FormatError("truncated tensor data for " + entry.at("name").get<std::string>(), offset);
    }
    offset += data.size() * sizeof(double);
    out.push_back({entry.at("name").get<std::string>(), Tensor::unchecked(std::move(shape), std::move(data))});
  }
  return out;
}

void save_parameters(const std::filesystem::path& path, const ParameterStore& store) {
  std::vector<NamedTensor> tensors;
  for (const Parameter* p : store.all()) tensors.push_back({p->name, p->value});
  write_checkpoint(path, tensors);
}

void load_parameters(const std::filesystem::path& path, ParameterStore& store) {
  for (auto& nt : read_checkpoint(path)) {
    Parameter* p = store.find(nt.name);
    if (p == nullptr) throw DataError("checkpoint tensor has no matching parameter: " + nt.name);
    if (p->value.shape() != nt.tensor.shape()) {
      throw DimensionError("checkpoint tensor " + nt.name + " has shape " + shape_string(nt.tensor.shape()) +
                           ", parameter expects " + shape_string(p->value.shape()));
    }
    p->value = std::move(nt.tensor);
  }
}

}  // namespace gf3d
