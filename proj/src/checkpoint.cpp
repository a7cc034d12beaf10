#include "mansy/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mansy {

namespace {
constexpr std::array<char, 8> kMagic = {'M', 'A', 'N', 'S', 'Y', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::runtime_error("checkpoint has no array '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["seed"] = ckpt.seed;
  header["config"] = ckpt.config;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : ckpt.arrays) {
    if (static_cast<Eigen::Index>(a.data.size()) != a.rows * a.cols)
      throw std::invalid_argument("array '" + a.name + "' size does not match its shape");
    header["arrays"].push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : ckpt.arrays)
    out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint file");
  const std::uint64_t len = read_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path.string());

  const auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.config = header.at("config");
  for (const auto& a : header.at("arrays")) {
    NamedArray arr{a.at("name").get<std::string>(), a.at("rows").get<Eigen::Index>(), a.at("cols").get<Eigen::Index>(), {}};
    arr.data.resize(static_cast<std::size_t>(arr.rows * arr.cols));
    in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(arr.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated payload for '" + arr.name + "' in " + path.string());
    ckpt.arrays.push_back(std::move(arr));
  }
  return ckpt;
}

}  // namespace mansy
