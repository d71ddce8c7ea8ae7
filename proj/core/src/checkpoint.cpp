#include "mexit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mexit/errors.hpp"

namespace mexit {

namespace {

constexpr char MAGIC[6] = {'M', 'E', 'X', 'I', 'T', '1'};
constexpr std::uint32_t VERSION = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  write_u64(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in.good()) throw format_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in.good()) throw format_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  if (len > (1u << 20)) throw format_error("checkpoint: implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in.good()) throw format_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const MultiExitNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("checkpoint: cannot open '" + path.string() + "' for writing");

  out.write(MAGIC, sizeof(MAGIC));
  write_u32(out, VERSION);

  const BackboneConfig& cfg = net.config();
  write_u64(out, cfg.text_dim);
  write_u64(out, cfg.vision_dim);
  write_u64(out, cfg.stem_width);
  write_u64(out, cfg.fused_width);
  write_u64(out, cfg.encoder_layers);
  write_u64(out, cfg.classes);
  write_string(out, to_string(cfg.activation));

  write_string(out, net.placement().str());
  write_string(out, to_string(net.head_kind()));
  write_u64(out, net.seed());

  const auto& groups = net.parameters();
  write_u32(out, static_cast<std::uint32_t>(groups.size()));
  for (const ParameterGroup& g : groups) {
    write_string(out, g.name);
    write_u64(out, g.value.rows());
    write_u64(out, g.value.cols());
    for (double v : g.value.values()) write_f64(out, v);
  }
  if (!out.good()) throw format_error("checkpoint: write failed for '" + path.string() + "'");
}

MultiExitNetwork load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("checkpoint: cannot open '" + path.string() + "'");

  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, MAGIC, sizeof(MAGIC)) != 0) {
    throw format_error("checkpoint: bad magic in '" + path.string() + "'");
  }
  const std::uint32_t version = read_u32(in);
  if (version != VERSION) {
    throw format_error("checkpoint: unsupported version " + std::to_string(version));
  }

  BackboneConfig cfg;
  cfg.text_dim = read_u64(in);
  cfg.vision_dim = read_u64(in);
  cfg.stem_width = read_u64(in);
  cfg.fused_width = read_u64(in);
  cfg.encoder_layers = read_u64(in);
  cfg.classes = read_u64(in);
  cfg.activation = parse_activation(read_string(in));

  const ExitPlacement placement = ExitPlacement::parse(read_string(in));
  const ExitHeadKind head_kind = parse_head_kind(read_string(in));
  const std::uint64_t seed = read_u64(in);

  MultiExitNetwork net = MultiExitNetwork::build(cfg, placement, head_kind, seed);

  const std::uint32_t group_count = read_u32(in);
  if (group_count != net.parameters().size()) {
    throw format_error("checkpoint: group count mismatch");
  }
  for (std::uint32_t gi = 0; gi < group_count; ++gi) {
    const std::string name = read_string(in);
    const std::uint64_t rows = read_u64(in);
    const std::uint64_t cols = read_u64(in);
    ParameterGroup& g = net.parameters()[gi];
    if (name != g.name || rows != g.value.rows() || cols != g.value.cols()) {
      throw format_error("checkpoint: group '" + name + "' does not match network layout");
    }
    for (std::size_t i = 0; i < g.value.size(); ++i) g.value[i] = read_f64(in);
    if (!g.value.all_finite()) {
      throw format_error("checkpoint: non-finite values in group '" + name + "'");
    }
  }
  return net;
}

}  // namespace mexit
