#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mixsep/errors.hpp"
#include "mixsep/tensor.hpp"

namespace mixsep::diffmath {

// Container format: ASCII header `tensor v1 f32 <rank> <d0> <d1> ...\n`
// followed by raw little-endian 32-bit floats in row-major order.

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  std::ostringstream header;
  header << "tensor v1 f32 " << t.rank();
  for (std::size_t d : t.shape()) header << ' ' << d;
  header << '\n';
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  std::string buf(t.numel() * 4, '\0');
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(t[i]);
    buf[4 * i + 0] = static_cast<char>(bits & 0xff);
    buf[4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
    buf[4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
    buf[4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write: " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError("missing header: " + path.string());
  std::istringstream hs(header);
  std::string magic, version, dtype;
  std::size_t rank = 0;
  hs >> magic >> version >> dtype >> rank;
  if (!hs || magic != "tensor" || version != "v1" || dtype != "f32") {
    throw IoError("bad tensor header in " + path.string() + ": '" + header + "'");
  }
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (!(hs >> shape[i]) || shape[i] == 0) throw IoError("bad extent in header: " + path.string());
  }
  std::string trailing;
  if (hs >> trailing) throw IoError("trailing header tokens in " + path.string());
  const std::size_t n = shape_numel(shape);
  std::string buf(n * 4, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError("truncated payload: " + path.string());
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + 0]))) |
                               (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + 1])) << 8) |
                               (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + 2])) << 16) |
                               (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + 3])) << 24);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace mixsep::diffmath
