#include "ctxalign/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ctxalign::nn {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'A', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw ParseError(path + ": truncated checkpoint");
  return value;
}

std::string get_string(std::ifstream& in, std::size_t len, const std::string& path) {
  if (len > (std::size_t{1} << 32)) throw ParseError(path + ": implausible string length");
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len))) {
    throw ParseError(path + ": truncated checkpoint");
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet& params, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, metadata.size());
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name().size()));
    out.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.cols()));
    for (Index r = 0; r < p.rows(); ++r) {
      for (Index c = 0; c < p.cols(); ++c) put<double>(out, p.value(r, c));
    }
  }
  out.flush();
  if (!out) throw Error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path + " for reading");
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) throw ParseError(path + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.metadata = get_string(in, get<std::uint64_t>(in, path), path);
  auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = get_string(in, get<std::uint32_t>(in, path), path);
    auto rows = get<std::uint64_t>(in, path);
    auto cols = get<std::uint64_t>(in, path);
    if (rows * cols > (std::uint64_t{1} << 34)) throw ParseError(path + ": implausible tensor size");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
    }
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

void restore(ParameterSet& params, const Checkpoint& checkpoint) {
  if (checkpoint.tensors.size() != params.size()) {
    throw DataError("checkpoint has " + std::to_string(checkpoint.tensors.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (const auto& [name, value] : checkpoint.tensors) {
    auto& p = params.get(name);
    if (p.rows() != value.rows() || p.cols() != value.cols()) {
      throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    p.value = value;
  }
}

}  // namespace ctxalign::nn
