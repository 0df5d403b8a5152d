#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "qmri/errors.hpp"
#include "qmri/forward.hpp"

namespace qmri {

// Binary k-space container (see docs/formats.md):
//   magic "QMRK", u32 version, u32 n1, n2, L, r, u64 mask seed,
//   u8 scalar type (0 = complex128), u8 mask axis, 6 pad bytes,
//   payload: n1*n2*L interleaved (re, im) doubles, slice-major and
//   column-major within a slice (linear index i + j*n1), little endian,
//   masks: per slice ceil(n1*n2/8) bytes, bit b of byte q = index q*8+b.

namespace detail {

template <class T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw ConfigError("kspace file: truncated");
}

}  // namespace detail

inline void save_kspace(const KSpaceData& ks, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write kspace file: " + path);
  f.write("QMRK", 4);
  detail::write_pod<std::uint32_t>(f, 1u);
  detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ks.data.n1()));
  detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ks.data.n2()));
  detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ks.data.L()));
  detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ks.masks.r));
  detail::write_pod<std::uint64_t>(f, ks.masks.seed);
  detail::write_pod<std::uint8_t>(f, 0u);  // complex128
  detail::write_pod<std::uint8_t>(f, ks.masks.axis == MaskAxis::rows ? 0u : 1u);
  const char pad[6] = {0, 0, 0, 0, 0, 0};
  f.write(pad, 6);

  for (int l = 0; l < ks.data.L(); ++l) {
    const auto& sl = ks.data.slice[static_cast<size_t>(l)];
    f.write(reinterpret_cast<const char*>(sl.data()),
            static_cast<std::streamsize>(sizeof(std::complex<double>)) * sl.size());
  }
  const std::size_t npix = static_cast<std::size_t>(ks.data.n1() * ks.data.n2());
  std::vector<std::uint8_t> bits((npix + 7) / 8);
  for (int l = 0; l < ks.masks.L(); ++l) {
    std::fill(bits.begin(), bits.end(), 0);
    const auto& m = ks.masks.mask[static_cast<size_t>(l)];
    const std::uint8_t* flat = m.data();
    for (std::size_t q = 0; q < npix; ++q)
      if (flat[q]) bits[q / 8] |= static_cast<std::uint8_t>(1u << (q % 8));
    f.write(reinterpret_cast<const char*>(bits.data()),
            static_cast<std::streamsize>(bits.size()));
  }
  if (!f) throw ConfigError("kspace file: write failed: " + path);
}

inline KSpaceData load_kspace(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open kspace file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "QMRK", 4) != 0)
    throw ConfigError("kspace file: bad magic in " + path);
  std::uint32_t version, n1, n2, L, r;
  std::uint64_t seed;
  std::uint8_t scalar, axis;
  detail::read_pod(f, version);
  if (version != 1) throw ConfigError("kspace file: unsupported version");
  detail::read_pod(f, n1);
  detail::read_pod(f, n2);
  detail::read_pod(f, L);
  detail::read_pod(f, r);
  detail::read_pod(f, seed);
  detail::read_pod(f, scalar);
  detail::read_pod(f, axis);
  char pad[6];
  f.read(pad, 6);
  if (scalar != 0) throw ConfigError("kspace file: unsupported scalar type");

  KSpaceData ks;
  ks.data = ComplexVolume(n1, n2, static_cast<int>(L));
  for (std::uint32_t l = 0; l < L; ++l) {
    auto& sl = ks.data.slice[l];
    f.read(reinterpret_cast<char*>(sl.data()),
           static_cast<std::streamsize>(sizeof(std::complex<double>)) * sl.size());
  }
  ks.masks.r = static_cast<int>(r);
  ks.masks.seed = seed;
  ks.masks.axis = axis == 0 ? MaskAxis::rows : MaskAxis::cols;
  const std::size_t npix = static_cast<std::size_t>(n1) * n2;
  std::vector<std::uint8_t> bits((npix + 7) / 8);
  ks.masks.mask.resize(L);
  for (std::uint32_t l = 0; l < L; ++l) {
    f.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    MaskImage m(n1, n2);
    std::uint8_t* flat = m.data();
    for (std::size_t q = 0; q < npix; ++q)
      flat[q] = (bits[q / 8] >> (q % 8)) & 1u;
    ks.masks.mask[l] = m;
  }
  if (!f) throw ConfigError("kspace file: truncated payload in " + path);
  return ks;
}

}  // namespace qmri
