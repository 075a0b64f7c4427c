#include "fshgr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fshgr/io_util.hpp"

namespace fshgr {

namespace {
constexpr char kMagic[4] = {'F', 'S', 'H', '1'};
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  for (const auto& e : params.entries) {
    io::write_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) io::write_u32(out, static_cast<std::uint32_t>(d));
    io::write_f32_array(out, e.value.data(), e.value.size());
  }
  if (!out) throw FormatError("write failure on " + path.string());
}

std::vector<CheckpointTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string ctx = path.string();
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(ctx + ": bad magic, expected FSH1", 0);
  std::vector<CheckpointTensor> tensors;
  for (;;) {
    // records run until EOF; probe the next name length
    int probe = in.peek();
    if (probe == std::char_traits<char>::eof()) break;
    const std::uint32_t name_len = io::read_u32(in, ctx);
    CheckpointTensor t;
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    if (!in) throw FormatError(ctx + ": truncated tensor name");
    const std::uint32_t rank = io::read_u32(in, ctx);
    t.shape.resize(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape[d] = static_cast<int>(io::read_u32(in, ctx));
      numel *= t.shape[d];
    }
    t.data.resize(static_cast<std::size_t>(numel));
    const auto payload_at = static_cast<std::uint64_t>(in.tellg());
    io::read_f32_array(in, t.data.data(), t.data.size(), ctx + ": tensor '" + t.name + "'",
                       payload_at);
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void load_checkpoint_into(const std::filesystem::path& path, ParamSet<float>& params) {
  const auto tensors = load_checkpoint(path);
  std::vector<bool> seen(params.entries.size(), false);
  for (const auto& t : tensors) {
    const int id = params.find(t.name);
    if (id < 0)
      throw FormatError(path.string() + ": checkpoint tensor '" + t.name +
                        "' does not exist in the model (checkpoint/config mismatch)");
    auto& e = params.entries[static_cast<std::size_t>(id)];
    if (e.shape != t.shape)
      throw FormatError(path.string() + ": tensor '" + t.name + "' has shape " +
                        shape_str(t.shape) + " but the model expects " + shape_str(e.shape) +
                        " (checkpoint/config mismatch)");
    e.value = t.data;
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i])
      throw FormatError(path.string() + ": checkpoint is missing tensor '" +
                        params.entries[i].name + "' (checkpoint/config mismatch)");
  }
}

}  // namespace fshgr
