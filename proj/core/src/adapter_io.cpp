// Adapter parameter files.
//
// Binary layout (all integers u32, all reals f64, little-endian):
//   "SAILADPB" | version | d_in | L | widths[L] | K | norm_eps | values...
// Text layout:
//   sail-adapter <version> text
//   <d_in> <L> <widths...> <K> <norm_eps>
//   one value per line, 17 significant digits
// Values follow the canonical order: for each block weight (row-major), bias,
// gamma, beta; then the output weight (row-major) and bias.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sail/adapter.hpp"
#include "sail/error.hpp"

namespace sail::adapter {

namespace {

constexpr char kBinaryMagic[8] = {'S', 'A', 'I', 'L', 'A', 'D', 'P', 'B'};
constexpr std::uint32_t kVersion = 1;

std::vector<double> canonical_values(const AdapterParams& p) {
  std::vector<double> v;
  const auto append = [&v](const auto& m) { v.insert(v.end(), m.data(), m.data() + m.size()); };
  for (const Block& b : p.blocks) {
    append(b.weight);
    append(b.bias);
    append(b.gamma);
    append(b.beta);
  }
  append(p.out_weight);
  append(p.out_bias);
  return v;
}

AdapterParams from_canonical(const Architecture& arch, const std::vector<double>& v,
                             const std::string& path) {
  AdapterParams p = initialize(arch, 0);
  std::size_t at = 0;
  const auto take = [&](auto& m) {
    const auto count = static_cast<std::size_t>(m.size());
    if (at + count > v.size()) throw ParseError(path, 0, "truncated parameter values");
    std::memcpy(m.data(), v.data() + at, count * sizeof(double));
    at += count;
  };
  for (Block& b : p.blocks) {
    take(b.weight);
    take(b.bias);
    take(b.gamma);
    take(b.beta);
  }
  take(p.out_weight);
  take(p.out_bias);
  if (at != v.size()) throw ParseError(path, 0, "trailing parameter values");
  return p;
}

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ParseError(path, 0, "unexpected end of binary parameter file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::size_t value_count(const Architecture& arch) {
  std::size_t total = 0;
  int fan_in = arch.input_dim;
  for (int w : arch.widths) {
    total += static_cast<std::size_t>(w) * (static_cast<std::size_t>(fan_in) + 3);
    fan_in = w;
  }
  return total + static_cast<std::size_t>(arch.num_classes) * (static_cast<std::size_t>(fan_in) + 1);
}

}  // namespace

void save_params(const std::string& path, const AdapterParams& params, ParamFormat format) {
  const auto values = canonical_values(params);
  const Architecture& a = params.arch;
  if (format == ParamFormat::binary) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os.write(kBinaryMagic, sizeof(kBinaryMagic));
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.input_dim));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.widths.size()));
    for (int w : a.widths) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.num_classes));
    put_le<double>(os, a.norm_eps);
    for (double v : values) put_le<double>(os, v);
    if (!os) throw Error("failed writing '" + path + "'");
    return;
  }
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "sail-adapter " << kVersion << " text\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << a.input_dim << ' ' << a.widths.size();
  for (int w : a.widths) os << ' ' << w;
  os << ' ' << a.num_classes << ' ' << a.norm_eps << '\n';
  for (double v : values) os << v << '\n';
  if (!os) throw Error("failed writing '" + path + "'");
}

AdapterParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  Architecture arch;
  std::vector<double> values;

  if (is.gcount() == sizeof(magic) && std::memcmp(magic, kBinaryMagic, sizeof(magic)) == 0) {
    if (get_le<std::uint32_t>(is, path) != kVersion) throw ParseError(path, 0, "unsupported version");
    arch.input_dim = static_cast<int>(get_le<std::uint32_t>(is, path));
    const auto depth = get_le<std::uint32_t>(is, path);
    if (depth > 4096) throw ParseError(path, 0, "implausible block count");
    arch.widths.clear();
    for (std::uint32_t l = 0; l < depth; ++l) arch.widths.push_back(static_cast<int>(get_le<std::uint32_t>(is, path)));
    arch.num_classes = static_cast<int>(get_le<std::uint32_t>(is, path));
    arch.norm_eps = get_le<double>(is, path);
    arch.validate();
    const std::size_t count = value_count(arch);
    values.reserve(count);
    for (std::size_t i = 0; i < count; ++i) values.push_back(get_le<double>(is, path));
    return from_canonical(arch, values, path);
  }

  is.clear();
  is.seekg(0);
  std::string line;
  std::getline(is, line);
  std::istringstream header(line);
  std::string tag;
  std::uint32_t version = 0;
  std::string kind;
  header >> tag >> version >> kind;
  if (tag != "sail-adapter" || kind != "text") throw ParseError(path, 1, "not an adapter parameter file");
  if (version != kVersion) throw ParseError(path, 1, "unsupported version");

  std::getline(is, line);
  std::istringstream shape(line);
  std::size_t depth = 0;
  shape >> arch.input_dim >> depth;
  arch.widths.assign(depth, 0);
  for (auto& w : arch.widths) shape >> w;
  shape >> arch.num_classes >> arch.norm_eps;
  if (!shape) throw ParseError(path, 2, "malformed architecture header");
  arch.validate();

  std::size_t line_no = 2;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(line, &used);
    } catch (const std::exception&) {
      throw ParseError(path, line_no, "expected a real number");
    }
    if (used != line.size()) throw ParseError(path, line_no, "trailing characters");
    values.push_back(v);
  }
  if (values.size() != value_count(arch)) {
    throw ParseError(path, line_no, "expected " + std::to_string(value_count(arch)) + " values, found " +
                                        std::to_string(values.size()));
  }
  return from_canonical(arch, values, path);
}

}  // namespace sail::adapter
