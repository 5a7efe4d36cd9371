#include "subprune/zip_archive.hpp"

#include <zlib.h>

#include <cstring>
#include <limits>

namespace subprune::zip {
namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01

class Writer {
 public:
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void seek(std::size_t p) {
    if (p > buf.size()) throw ArchiveError("zip: offset beyond end of archive");
    pos = p;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = buf.subspan(pos, n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw ArchiveError("zip: truncated archive");
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t off = 0;
  while (off < data.size()) {
    const std::size_t chunk = std::min<std::size_t>(data.size() - off, 1u << 30);
    crc = crc32(crc, data.data() + off, static_cast<uInt>(chunk));
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> inflate_raw(std::span<const std::uint8_t> in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw ArchiveError("zip: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected) throw ArchiveError("zip: corrupt deflate stream");
  return out;
}

}  // namespace

std::vector<std::uint8_t> write_archive(const std::vector<Entry>& entries) {
  Writer w;
  struct Central {
    std::uint32_t crc, size, offset;
  };
  std::vector<Central> central;
  for (const auto& e : entries) {
    if (e.data.size() > std::numeric_limits<std::uint32_t>::max() || e.name.size() > 0xFFFF) {
      throw ArchiveError("zip: entry too large for a non-zip64 archive: " + e.name);
    }
    const Central c{crc_of(e.data), static_cast<std::uint32_t>(e.data.size()),
                    static_cast<std::uint32_t>(w.out.size())};
    w.u32(kLocalSig);
    w.u16(20);
    w.u16(0);
    w.u16(0);  // stored
    w.u16(0);
    w.u16(kDosDate);
    w.u32(c.crc);
    w.u32(c.size);
    w.u32(c.size);
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.u16(0);
    w.bytes(e.name.data(), e.name.size());
    w.bytes(e.data.data(), e.data.size());
    central.push_back(c);
  }
  const auto cd_offset = static_cast<std::uint32_t>(w.out.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto& c = central[i];
    w.u32(kCentralSig);
    w.u16(20);
    w.u16(20);
    w.u16(0);
    w.u16(0);
    w.u16(0);
    w.u16(kDosDate);
    w.u32(c.crc);
    w.u32(c.size);
    w.u32(c.size);
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.u16(0);
    w.u16(0);
    w.u16(0);
    w.u16(0);
    w.u32(0);
    w.u32(c.offset);
    w.bytes(e.name.data(), e.name.size());
  }
  const auto cd_size = static_cast<std::uint32_t>(w.out.size() - cd_offset);
  w.u32(kEndSig);
  w.u16(0);
  w.u16(0);
  w.u16(static_cast<std::uint16_t>(entries.size()));
  w.u16(static_cast<std::uint16_t>(entries.size()));
  w.u32(cd_size);
  w.u32(cd_offset);
  w.u16(0);
  return std::move(w.out);
}

std::vector<Entry> read_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 22) throw ArchiveError("zip: file too small to be an archive");
  std::size_t eocd = std::string::npos;
  const std::size_t lowest = bytes.size() >= 22 + 0xFFFF ? bytes.size() - 22 - 0xFFFF : 0;
  for (std::size_t p = bytes.size() - 22 + 1; p-- > lowest;) {
    if (bytes[p] == 0x50 && bytes[p + 1] == 0x4b && bytes[p + 2] == 0x05 && bytes[p + 3] == 0x06) {
      eocd = p;
      break;
    }
  }
  if (eocd == std::string::npos) throw ArchiveError("zip: end of central directory not found");

  Reader r(bytes);
  r.seek(eocd + 10);
  const std::uint16_t count = r.u16();
  r.u32();  // central directory size
  const std::uint32_t cd_offset = r.u32();

  std::vector<Entry> out;
  out.reserve(count);
  r.seek(cd_offset);
  for (std::uint16_t i = 0; i < count; ++i) {
    if (r.u32() != kCentralSig) throw ArchiveError("zip: bad central directory signature");
    r.take(6);
    const std::uint16_t method = r.u16();
    r.take(4);
    const std::uint32_t crc = r.u32();
    const std::uint32_t csize = r.u32();
    const std::uint32_t usize = r.u32();
    const std::uint16_t name_len = r.u16();
    const std::uint16_t extra_len = r.u16();
    const std::uint16_t comment_len = r.u16();
    r.take(8);
    const std::uint32_t local_offset = r.u32();
    auto name = r.take(name_len);
    r.take(extra_len + comment_len);
    const std::size_t resume = r.pos;

    Entry e;
    e.name.assign(name.begin(), name.end());
    Reader lr(bytes);
    lr.seek(local_offset);
    if (lr.u32() != kLocalSig) throw ArchiveError("zip: bad local header for " + e.name);
    lr.take(22);
    const std::uint16_t lname = lr.u16();
    const std::uint16_t lextra = lr.u16();
    lr.take(lname + lextra);
    auto payload = lr.take(csize);
    if (method == 0) {
      if (csize != usize) throw ArchiveError("zip: stored size mismatch for " + e.name);
      e.data.assign(payload.begin(), payload.end());
    } else if (method == 8) {
      e.data = inflate_raw(payload, usize);
    } else {
      throw ArchiveError("zip: unsupported compression method " + std::to_string(method) +
                         " for " + e.name);
    }
    if (crc_of(e.data) != crc) throw ArchiveError("zip: CRC mismatch for " + e.name);
    out.push_back(std::move(e));
    r.seek(resume);
  }
  return out;
}

}  // namespace subprune::zip
