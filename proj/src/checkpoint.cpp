#include "coroi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace coroi {

namespace {

constexpr char kMagic[4] = {'C', 'R', 'T', '1'};
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 16;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n, const char* what) {
    if (pos + n > buf.size())
      throw IoError(std::string("checkpoint: truncated while reading ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf[pos++]);
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::map<std::string, Tensor>& entries) {
  std::string buf;
  buf.append(kMagic, 4);
  for (const auto& [name, t] : entries) {
    if (!t.defined()) throw ContractError("checkpoint: undefined tensor " + name);
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(t.dtype() == DType::F32 ? 0 : 1));
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) put_u64(buf, static_cast<uint64_t>(e));
    size_t bytes = static_cast<size_t>(t.numel()) * dtype_size(t.dtype());
    size_t off = buf.size();
    buf.resize(off + bytes);
    if (t.dtype() == DType::F32)
      std::memcpy(buf.data() + off, t.data<float>(), bytes);
    else
      std::memcpy(buf.data() + off, t.data<double>(), bytes);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("checkpoint: write failed: " + path);
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic bytes (expected CRT1)");

  std::map<std::string, Tensor> out;
  Reader r{buf, 4};
  while (r.pos < buf.size()) {
    uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > kMaxNameLen)
      throw IoError("checkpoint: implausible name length");
    std::string name = r.bytes(name_len, "name");
    uint8_t tag = r.u8("dtype tag");
    if (tag > 1) throw IoError("checkpoint: unknown dtype tag");
    DType dt = tag == 0 ? DType::F32 : DType::F64;
    uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > kMaxRank) throw IoError("checkpoint: implausible rank");
    std::vector<int64_t> shape(rank);
    uint64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint64_t e = r.u64("extent");
      if (e == 0 || e > (1ull << 32)) throw IoError("checkpoint: implausible extent");
      shape[i] = static_cast<int64_t>(e);
      numel *= e;
    }
    size_t bytes = static_cast<size_t>(numel) * dtype_size(dt);
    std::string payload = r.bytes(bytes, "payload");
    Tensor t = Tensor::zeros(shape, dt);
    if (dt == DType::F32)
      std::memcpy(t.data<float>(), payload.data(), bytes);
    else
      std::memcpy(t.data<double>(), payload.data(), bytes);
    if (out.count(name)) throw IoError("checkpoint: duplicate entry " + name);
    out.emplace(std::move(name), std::move(t));
  }
  // loop exits exactly at end of buffer; any partial entry throws above
  return out;
}

}  // namespace coroi
