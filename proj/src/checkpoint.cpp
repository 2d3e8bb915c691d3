#include "ssmil/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ssmil {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'M', 'P'};
constexpr std::uint8_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const NamedMatrices& params) {
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  for (const auto& [name, value] : params) {
    contract(name.size() <= 0xFFFF, "save_checkpoint: name too long: " + name);
    contract(value.rows() <= 0xFFFFFFFFLL && value.cols() <= 0xFFFFFFFFLL,
             "save_checkpoint: extent exceeds u32 for " + name);
    out.push_back(static_cast<char>(name.size() & 0xFF));
    out.push_back(static_cast<char>((name.size() >> 8) & 0xFF));
    out.append(name);
    out.push_back(2);  // rank
    const auto put_u32 = [&out](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    put_u32(static_cast<std::uint32_t>(value.rows()));
    put_u32(static_cast<std::uint32_t>(value.cols()));
    for (Index r = 0; r < value.rows(); ++r)
      for (Index c = 0; c < value.cols(); ++c) {
        std::uint64_t bits;
        const double v = value(r, c);
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
      }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

NamedMatrices load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  std::uint64_t at = 0;
  const auto need = [&](std::uint64_t n, const char* what) {
    if (at + n > buf.size())
      throw ParseError(std::string("truncated checkpoint reading ") + what, at);
  };
  need(5, "header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw ParseError("bad checkpoint magic", 0);
  if (static_cast<std::uint8_t>(buf[4]) != kVersion)
    throw ParseError("unsupported checkpoint version", 4);
  at = 5;

  const auto u8 = [&](const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[at++]);
  };
  const auto u16 = [&](const char* what) {
    need(2, what);
    const std::uint16_t v =
        static_cast<std::uint8_t>(buf[at]) |
        (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[at + 1])) << 8);
    at += 2;
    return v;
  };
  const auto u32 = [&](const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[at + i])) << (8 * i);
    at += 4;
    return v;
  };

  NamedMatrices params;
  while (at < buf.size()) {
    const std::uint16_t name_len = u16("name length");
    need(name_len, "name");
    std::string name = buf.substr(at, name_len);
    at += name_len;
    const std::uint8_t rank = u8("rank");
    if (rank > 2) throw ParseError("unsupported rank " + std::to_string(rank) + " for " + name, at - 1);
    Index rows = 1, cols = 1;
    if (rank == 1) {
      rows = u32("extent");
    } else if (rank == 2) {
      rows = u32("extent");
      cols = u32("extent");
    }
    Matrix value(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        need(8, "value");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
          bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[at + i])) << (8 * i);
        at += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        value(r, c) = v;
      }
    params.emplace_back(std::move(name), std::move(value));
  }
  return params;
}

}  // namespace ssmil
