#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "longclip/errors.hpp"

namespace longclip::data {

// Regular-file member of a ustar archive.
struct TarMember {
  std::string name;
  std::string data;
};

namespace detail {

inline constexpr std::size_t kBlock = 512;

inline void put_octal(char* field, std::size_t width, std::uint64_t value) {
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(value));
}

inline std::uint64_t get_octal(const char* field, std::size_t width, const std::string& where) {
  std::uint64_t v = 0;
  std::size_t i = 0;
  while (i < width && (field[i] == ' ' || field[i] == '\0')) ++i;
  for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  for (; i < width; ++i) {
    if (field[i] != ' ' && field[i] != '\0') throw ParseError(where, "bad octal field in tar header");
  }
  return v;
}

inline unsigned header_checksum(const char* block) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) {
    sum += (i >= 148 && i < 156) ? static_cast<unsigned>(' ') : static_cast<unsigned char>(block[i]);
  }
  return sum;
}

}  // namespace detail

// Writes members in order. Names must fit the 100-byte ustar name field.
inline void write_tar(const std::filesystem::path& path, const std::vector<TarMember>& members) {
  using detail::kBlock;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& m : members) {
    if (m.name.empty() || m.name.size() >= 100) throw UsageError("tar member name must be 1-99 bytes: '" + m.name + "'");
    std::array<char, kBlock> h{};
    std::memcpy(h.data(), m.name.data(), m.name.size());
    detail::put_octal(h.data() + 100, 8, 0644);
    detail::put_octal(h.data() + 108, 8, 0);
    detail::put_octal(h.data() + 116, 8, 0);
    detail::put_octal(h.data() + 124, 12, m.data.size());
    detail::put_octal(h.data() + 136, 12, 0);  // fixed mtime keeps archives reproducible
    h[156] = '0';
    std::memcpy(h.data() + 257, "ustar", 6);
    h[263] = '0';
    h[264] = '0';
    std::snprintf(h.data() + 148, 8, "%06o", detail::header_checksum(h.data()));
    h[155] = ' ';
    out.write(h.data(), kBlock);
    out.write(m.data.data(), static_cast<std::streamsize>(m.data.size()));
    const std::size_t pad = (kBlock - m.data.size() % kBlock) % kBlock;
    static const std::array<char, kBlock> zeros{};
    out.write(zeros.data(), static_cast<std::streamsize>(pad));
  }
  static const std::array<char, 2 * kBlock> end{};
  out.write(end.data(), end.size());
  if (!out) throw IoError("failed writing " + path.string());
}

// Reads regular-file members; directories and other entry types are skipped.
inline std::vector<TarMember> read_tar(const std::filesystem::path& path) {
  using detail::kBlock;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<TarMember> members;
  std::array<char, kBlock> h{};
  const std::string where = path.string();
  while (true) {
    in.read(h.data(), kBlock);
    if (in.gcount() == 0) break;
    if (static_cast<std::size_t>(in.gcount()) != kBlock) throw ParseError(where, "truncated tar header");
    bool zero = true;
    for (char c : h) zero = zero && c == 0;
    if (zero) break;
    const auto stored = detail::get_octal(h.data() + 148, 8, where);
    if (stored != detail::header_checksum(h.data())) throw ParseError(where, "tar header checksum mismatch");
    std::string name(h.data(), strnlen(h.data(), 100));
    if (std::memcmp(h.data() + 257, "ustar", 5) == 0 && h[345] != '\0') {
      name = std::string(h.data() + 345, strnlen(h.data() + 345, 155)) + "/" + name;
    }
    const auto size = detail::get_octal(h.data() + 124, 12, where + ":" + name);
    std::string data(size, '\0');
    in.read(data.data(), static_cast<std::streamsize>(size));
    if (static_cast<std::uint64_t>(in.gcount()) != size) throw ParseError(where + ":" + name, "truncated member data");
    in.ignore(static_cast<std::streamsize>((kBlock - size % kBlock) % kBlock));
    const char type = h[156];
    if (type == '0' || type == '\0') members.push_back({std::move(name), std::move(data)});
  }
  return members;
}

}  // namespace longclip::data
