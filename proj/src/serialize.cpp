#include "blosa/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace blosa {

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace {

constexpr const char* kMagic = "blosa-model 1";

std::string shape_token(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

Shape parse_shape(const std::string& token) {
  if (token == "scalar") return {};
  Shape shape;
  std::istringstream is(token);
  std::string dim;
  while (std::getline(is, dim, 'x')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(dim, &used);
      if (used != dim.size() || v < 0) throw FormatError("bad dimension");
      shape.push_back(static_cast<Index>(v));
    } catch (const std::logic_error&) {
      throw FormatError("bad shape '" + token + "'");
    }
  }
  if (shape.empty()) throw FormatError("bad shape '" + token + "'");
  return shape;
}

std::string expect_line(std::istream& is, const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("truncated header: missing " + what);
  return line;
}

std::size_t expect_count(std::istream& is, const std::string& key) {
  const std::string line = expect_line(is, key);
  const std::string prefix = key + ": ";
  if (line.rfind(prefix, 0) != 0) throw FormatError("expected '" + prefix + "', got '" + line + "'");
  try {
    return static_cast<std::size_t>(std::stoull(line.substr(prefix.size())));
  } catch (const std::logic_error&) {
    throw FormatError("bad count in '" + line + "'");
  }
}

template <typename Scalar>
void write_buffer(std::ostream& os, const Tensor<Scalar>& t) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  } else {
    char bytes[sizeof(Scalar)];
    for (Index i = 0; i < t.size(); ++i) {
      std::memcpy(bytes, t.data() + i, sizeof(Scalar));
      std::reverse(bytes, bytes + sizeof(Scalar));
      os.write(bytes, sizeof(Scalar));
    }
  }
}

template <typename Scalar>
void read_buffer(std::istream& is, Tensor<Scalar>& t) {
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  if (!is) throw FormatError("truncated parameter data");
  if constexpr (std::endian::native != std::endian::little) {
    for (Index i = 0; i < t.size(); ++i) {
      char* p = reinterpret_cast<char*>(t.data() + i);
      std::reverse(p, p + sizeof(Scalar));
    }
  }
}

}  // namespace

template <typename Scalar>
void write_model(std::ostream& os, const ConfigMap& config, const ParamStore<Scalar>& params) {
  os << kMagic << '\n' << "byte-order: little-endian\n";
  os << "config: " << config.size() << '\n';
  for (const auto& [key, value] : config) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw FormatError("config entry '" + key + "' contains a reserved character");
    }
    os << key << '=' << value << '\n';
  }
  os << "params: " << params.size() << '\n';
  for (const auto& e : params.entries()) {
    if (e.path.find_first_of(":\n") != std::string::npos) {
      throw FormatError("parameter path '" + e.path + "' contains a reserved character");
    }
    os << e.path << ':' << shape_token(e.value.shape()) << ':' << dtype_name<Scalar>() << ':'
       << role_name(e.role) << '\n';
  }
  os << "end\n";
  for (const auto& e : params.entries()) write_buffer(os, e.value);
  if (!os) throw std::runtime_error("failed writing model container");
}

template <typename Scalar>
ModelFile<Scalar> read_model(std::istream& is) {
  if (expect_line(is, "magic") != kMagic) throw FormatError("not a blosa model container");
  if (expect_line(is, "byte order") != "byte-order: little-endian") {
    throw FormatError("unsupported byte order");
  }
  ModelFile<Scalar> out;
  const std::size_t n_config = expect_count(is, "config");
  for (std::size_t i = 0; i < n_config; ++i) {
    const std::string line = expect_line(is, "config entry");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': '" + line + "'");
    out.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::size_t n_params = expect_count(is, "params");
  struct Item {
    std::string path;
    Shape shape;
    ParamRole role;
  };
  std::vector<Item> manifest;
  for (std::size_t i = 0; i < n_params; ++i) {
    const std::string line = expect_line(is, "manifest entry");
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ':')) fields.push_back(f);
    if (fields.size() != 4) throw FormatError("bad manifest line '" + line + "'");
    if (fields[2] != dtype_name<Scalar>()) {
      throw FormatError("parameter '" + fields[0] + "' has dtype " + fields[2] + ", expected " +
                        std::string(dtype_name<Scalar>()));
    }
    try {
      manifest.push_back({fields[0], parse_shape(fields[1]), parse_role(fields[3])});
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what());
    }
  }
  if (expect_line(is, "end marker") != "end") throw FormatError("missing end of header");
  for (const Item& item : manifest) {
    Tensor<Scalar>& t = out.params.add(item.path, Tensor<Scalar>(item.shape), item.role);
    read_buffer(is, t);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after parameters");
  return out;
}

template <typename Scalar>
void save_model(const std::string& path, const ConfigMap& config, const ParamStore<Scalar>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_model(os, config, params);
}

template <typename Scalar>
ModelFile<Scalar> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_model<Scalar>(is);
}

#define BLOSA_INSTANTIATE_SERIALIZE(S)                                              \
  template void write_model(std::ostream&, const ConfigMap&, const ParamStore<S>&); \
  template ModelFile<S> read_model(std::istream&);                                  \
  template void save_model(const std::string&, const ConfigMap&, const ParamStore<S>&); \
  template ModelFile<S> load_model(const std::string&);

BLOSA_INSTANTIATE_SERIALIZE(float)
BLOSA_INSTANTIATE_SERIALIZE(double)

}  // namespace blosa
