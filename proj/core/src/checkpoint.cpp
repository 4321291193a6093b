#include "dpseq/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace dpseq {

static_assert(std::endian::native == std::endian::little,
              "archive payloads are little-endian; big-endian hosts are unsupported");

namespace {
constexpr const char* kMagic = "DPSEQ-CKPT";
constexpr int kVersion = 1;
}  // namespace

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << kMagic << ' ' << kVersion << '\n';
  if (!archive.config_json.empty()) out << "config " << archive.config_json << '\n';
  for (const auto& e : archive.entries) {
    out << "tensor " << e.name << " f32 " << e.shape.size();
    for (std::size_t d : e.shape) out << ' ' << d;
    out << '\n';
  }
  out << "data\n";
  for (const auto& e : archive.entries)
    out.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  Archive a;
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("corrupt archive: empty file " + path.string());
  {
    std::istringstream hs(line);
    std::string magic;
    hs >> magic >> a.version;
    if (magic != kMagic || hs.fail())
      throw CheckpointError("corrupt archive: bad magic line in " + path.string());
    if (a.version != kVersion)
      throw CheckpointError("unsupported archive version " + std::to_string(a.version) +
                            " (supported: " + std::to_string(kVersion) + ")");
  }
  bool saw_data = false;
  while (std::getline(in, line)) {
    if (line == "data") {
      saw_data = true;
      break;
    }
    if (line.rfind("config ", 0) == 0) {
      a.config_json = line.substr(7);
      continue;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind != "tensor") throw CheckpointError("corrupt archive: unexpected header line '" + line + "'");
    ArchiveEntry e;
    std::string dtype;
    std::size_t rank = 0;
    ls >> e.name >> dtype >> rank;
    if (ls.fail() || dtype != "f32")
      throw CheckpointError("corrupt archive: bad tensor line '" + line + "'");
    e.shape.resize(rank);
    for (auto& d : e.shape) ls >> d;
    if (ls.fail()) throw CheckpointError("corrupt archive: bad shape in '" + line + "'");
    e.data.resize(numel(e.shape));
    a.entries.push_back(std::move(e));
  }
  if (!saw_data) throw CheckpointError("corrupt archive: missing data section in " + path.string());
  for (auto& e : a.entries) {
    in.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(e.data.size() * sizeof(float)))
      throw CheckpointError("corrupt archive: truncated payload for tensor '" + e.name + "'");
  }
  return a;
}

}  // namespace dpseq
