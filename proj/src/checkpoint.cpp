#include "mart/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mart::train {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'T', 'C', 'K', 'P', 'T'};

[[noreturn]] void fail(const std::string& path, size_t offset, const std::string& what) {
  throw ParseError("load_checkpoint: " + path + ": " + what + " at byte offset " +
                   std::to_string(offset));
}

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("save_checkpoint: cannot open " + path + " for writing");
  }
  void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void record(const std::string& name, const std::vector<uint32_t>& dims,
              const float* data, size_t count) {
    u32(static_cast<uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<uint32_t>(dims.size()));
    for (uint32_t d : dims) u32(d);
    bytes(data, count * 4);
  }
};

struct Reader {
  std::vector<unsigned char> buf;
  size_t pos = 0;
  std::string path;

  explicit Reader(const std::string& p) : path(p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + p);
    buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  bool eof() const { return pos >= buf.size(); }
  void need(size_t n, const char* what) {
    if (pos + n > buf.size()) fail(path, pos, std::string("truncated ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

std::string bytes_from_f32(const diff::Tensor<float>& t) {
  std::string s(t.size(), '\0');
  for (size_t i = 0; i < t.size(); ++i) s[i] = static_cast<char>(static_cast<unsigned char>(t[i]));
  return s;
}

diff::Tensor<float> f32_from_bytes(const std::string& s) {
  std::vector<float> v(s.size());
  for (size_t i = 0; i < s.size(); ++i) v[i] = static_cast<float>(static_cast<unsigned char>(s[i]));
  return diff::Tensor<float>(diff::Shape{std::max<size_t>(s.size(), 1)},
                             s.empty() ? std::vector<float>{0.0f} : std::move(v));
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(data.version);

  auto meta_record = [&](const std::string& name, const std::string& text) {
    diff::Tensor<float> t = f32_from_bytes(text);
    w.record(name, {static_cast<uint32_t>(text.size() ? text.size() : 1)}, t.ptr(), t.size());
  };
  meta_record("meta/config", data.config_text);
  meta_record("meta/rng", data.rng_state);
  const float step_f = static_cast<float>(data.step);
  w.record("meta/step", {1}, &step_f, 1);
  const float epoch_f = static_cast<float>(data.epoch);
  w.record("meta/epoch", {1}, &epoch_f, 1);
  const float adam_f = static_cast<float>(data.adam_step);
  w.record("meta/adam_step", {1}, &adam_f, 1);

  for (const auto& [name, t] : data.tensors) {
    std::vector<uint32_t> dims;
    for (size_t d : t.shape) dims.push_back(static_cast<uint32_t>(d));
    w.record(name, dims, t.ptr(), t.size());
  }
  w.out.flush();
  if (!w.out) throw IoError("save_checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  Reader r(path);
  r.need(8, "magic");
  if (std::memcmp(r.buf.data(), kMagic, 8) != 0) fail(path, 0, "foreign magic bytes");
  r.pos = 8;
  CheckpointData data;
  data.version = r.u32("version");
  if (data.version != kCheckpointVersion)
    fail(path, 8, "unsupported format version " + std::to_string(data.version));

  while (!r.eof()) {
    const size_t record_off = r.pos;
    const uint32_t name_len = r.u32("record name length");
    const std::string name = r.str(name_len, "record name");
    const uint32_t rank = r.u32("record rank");
    diff::Shape shape;
    size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = r.u32("record dims");
      shape.push_back(d);
      count *= d;
    }
    if (count == 0) fail(path, record_off, "zero-sized record '" + name + "'");
    r.need(count * 4, "record data");
    std::vector<float> values(count);
    std::memcpy(values.data(), r.buf.data() + r.pos, count * 4);
    r.pos += count * 4;
    diff::Tensor<float> t(std::move(shape), std::move(values));

    if (name == "meta/config")
      data.config_text = bytes_from_f32(t);
    else if (name == "meta/rng")
      data.rng_state = bytes_from_f32(t);
    else if (name == "meta/step")
      data.step = static_cast<uint64_t>(t[0]);
    else if (name == "meta/epoch")
      data.epoch = static_cast<uint64_t>(t[0]);
    else if (name == "meta/adam_step")
      data.adam_step = static_cast<long>(t[0]);
    else
      data.tensors.emplace_back(name, std::move(t));
  }
  if (data.config_text.empty()) fail(path, r.pos, "missing meta/config record");
  return data;
}

}  // namespace mart::train
