// Versioned binary checkpoint for VaeModel.
//
// Layout (all integers and floats little-endian):
//   char[8]  magic "SVMFCKPT"
//   u32      version (1)
//   u32      data_dim
//   u32      latent_dim        (ambient m for the vMF head)
//   u8       posterior kind    (0 vmf, 1 normal, 2 deterministic)
//   u8       likelihood kind   (0 bernoulli, 1 gaussian)
//   u8       activation        (0 relu, 1 tanh, 2 identity)
//   u8       reserved (0)
//   u32      n, then n x u32   encoder hidden sizes
//   u32      n, then n x u32   decoder hidden sizes
//   u64      total parameter count
//   f64[...] parameter blocks in VaeModel::parameters() order, each row-major
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/vae.hpp"

namespace svmf::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kCheckpointMagic{'S', 'V', 'M', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated while reading " + what);
  return value;
}

inline void put_sizes(std::ostream& os, const std::vector<int>& sizes) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(sizes.size()));
  for (int s : sizes) put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
}

inline std::vector<int> get_sizes(std::istream& is, const std::string& what) {
  const auto n = get<std::uint32_t>(is, what + " count");
  if (n > 64) throw CheckpointError("implausible " + what + " count " + std::to_string(n));
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(get<std::uint32_t>(is, what));
  return sizes;
}

}  // namespace detail

inline void save_checkpoint(VaeModel& model, std::ostream& os) {
  const VaeArch& a = model.arch();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.data_dim));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.latent_dim));
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(a.posterior));
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(a.likelihood));
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(a.activation));
  detail::put<std::uint8_t>(os, 0);
  detail::put_sizes(os, a.encoder_hidden);
  detail::put_sizes(os, a.decoder_hidden);
  const auto params = model.parameters();
  std::uint64_t total = 0;
  for (const auto* p : params) total += static_cast<std::uint64_t>(p->value.size());
  detail::put<std::uint64_t>(os, total);
  for (const auto* p : params)
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline void save_checkpoint(VaeModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(model, os);
}

inline VaeModel load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  VaeArch a;
  a.data_dim = static_cast<int>(detail::get<std::uint32_t>(is, "data_dim"));
  a.latent_dim = static_cast<int>(detail::get<std::uint32_t>(is, "latent_dim"));
  const auto posterior = detail::get<std::uint8_t>(is, "posterior kind");
  const auto likelihood = detail::get<std::uint8_t>(is, "likelihood kind");
  const auto activation = detail::get<std::uint8_t>(is, "activation");
  (void)detail::get<std::uint8_t>(is, "reserved");
  if (posterior > 2 || likelihood > 1 || activation > 2)
    throw CheckpointError("checkpoint header has an unknown enum value");
  a.posterior = static_cast<PosteriorKind>(posterior);
  a.likelihood = static_cast<LikelihoodKind>(likelihood);
  a.activation = static_cast<nn::Activation>(activation);
  a.encoder_hidden = detail::get_sizes(is, "encoder hidden size");
  a.decoder_hidden = detail::get_sizes(is, "decoder hidden size");
  VaeModel model = VaeModel::zeros(a);
  const auto params = model.parameters();
  std::uint64_t expected = 0;
  for (const auto* p : params) expected += static_cast<std::uint64_t>(p->value.size());
  const auto total = detail::get<std::uint64_t>(is, "parameter count");
  if (total != expected)
    throw CheckpointError("checkpoint holds " + std::to_string(total) +
                          " parameters, architecture needs " + std::to_string(expected));
  for (auto* p : params) {
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint truncated in block " + p->name);
  }
  return model;
}

inline VaeModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace svmf::io
