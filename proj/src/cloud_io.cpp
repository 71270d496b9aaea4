#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"
#include "text_util.hpp"

namespace noisetrans {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary ply I/O assumes a little-endian host");

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

PlyType parse_type(const std::string& name, std::size_t line) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  throw ParseError("ply: unknown property type '" + name + "'", line);
}

double read_binary(const char* p, PlyType t) {
  switch (t) {
    case PlyType::i8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::u8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::i16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::i32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::u32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

void append_float(std::string& out, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

void append_f32(std::string& out, float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

}  // namespace

CloudFormat cloud_format_from_path(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz;
  if (ext == ".ply") return CloudFormat::ply;
  throw ArgumentError("cannot infer point cloud format from '" + path.string() + "'");
}

PointCloud parse_xyz(const std::string& text) {
  PointCloud cloud;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line(text.data() + pos,
                                (nl == std::string::npos ? text.size() : nl) - pos);
    ++line_no;
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (tokens.size() != 3) {
      throw ParseError("xyz: expected 3 values, found " + std::to_string(tokens.size()), line_no);
    }
    Vec3 p{};
    for (int i = 0; i < 3; ++i) {
      if (!detail::parse_double(tokens[i], p[i]) || !std::isfinite(p[i])) {
        throw ParseError("xyz: invalid number '" + std::string(tokens[i]) + "'", line_no);
      }
    }
    cloud.coords.push_back(p);
  }
  if (cloud.coords.empty()) throw FormatError("xyz: no points");
  return cloud;
}

PointCloud parse_ply(const std::string& bytes) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= bytes.size()) throw ParseError("ply: unexpected end of header", line_no + 1);
    std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) nl = bytes.size();
    std::string_view line(bytes.data() + pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    ++line_no;
    return line;
  };

  if (detail::trim(next_line()) != "ply") throw ParseError("ply: missing magic", 1);

  bool ascii = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const auto line = next_line();
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError("ply: malformed format line", line_no);
      if (tok[1] == "ascii") {
        ascii = true;
      } else if (tok[1] == "binary_little_endian") {
        ascii = false;
      } else {
        throw FormatError("ply: unsupported encoding '" + std::string(tok[1]) + "'");
      }
      have_format = true;
    } else if (tok[0] == "element") {
      std::size_t count = 0;
      if (tok.size() != 3 || !detail::parse_size(tok[2], count)) {
        throw ParseError("ply: malformed element line", line_no);
      }
      elements.push_back({std::string(tok[1]), count, {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError("ply: property before element", line_no);
      PlyProperty prop;
      if (tok.size() == 5 && tok[1] == "list") {
        prop.is_list = true;
        prop.count_type = parse_type(std::string(tok[2]), line_no);
        prop.type = parse_type(std::string(tok[3]), line_no);
        prop.name = tok[4];
      } else if (tok.size() == 3) {
        prop.type = parse_type(std::string(tok[1]), line_no);
        prop.name = tok[2];
      } else {
        throw ParseError("ply: malformed property line", line_no);
      }
      elements.back().props.push_back(prop);
    } else {
      throw ParseError("ply: unknown header keyword '" + std::string(tok[0]) + "'", line_no);
    }
  }
  if (!have_format) throw ParseError("ply: missing format line", line_no);

  PointCloud cloud;
  for (const PlyElement& el : elements) {
    const bool is_vertex = el.name == "vertex";
    int xi = -1, yi = -1, zi = -1;
    if (is_vertex) {
      for (std::size_t i = 0; i < el.props.size(); ++i) {
        if (el.props[i].is_list) continue;
        if (el.props[i].name == "x") xi = static_cast<int>(i);
        if (el.props[i].name == "y") yi = static_cast<int>(i);
        if (el.props[i].name == "z") zi = static_cast<int>(i);
      }
      if (xi < 0 || yi < 0 || zi < 0) throw FormatError("ply: vertex element lacks x/y/z");
      cloud.coords.reserve(el.count);
    }
    std::vector<double> values(el.props.size());
    for (std::size_t r = 0; r < el.count; ++r) {
      if (ascii) {
        const auto line = next_line();
        const auto tok = detail::split_ws(line);
        std::size_t t = 0;
        for (std::size_t i = 0; i < el.props.size(); ++i) {
          const PlyProperty& prop = el.props[i];
          auto take = [&]() {
            double v = 0.0;
            if (t >= tok.size() || !detail::parse_double(tok[t], v)) {
              throw ParseError("ply: malformed " + el.name + " row", line_no);
            }
            ++t;
            return v;
          };
          if (prop.is_list) {
            const double n = take();
            for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) take();
          } else {
            values[i] = take();
          }
        }
      } else {
        for (std::size_t i = 0; i < el.props.size(); ++i) {
          const PlyProperty& prop = el.props[i];
          auto take = [&](PlyType t) {
            const std::size_t sz = type_size(t);
            if (pos + sz > bytes.size()) throw FormatError("ply: truncated binary body");
            const double v = read_binary(bytes.data() + pos, t);
            pos += sz;
            return v;
          };
          if (prop.is_list) {
            const double n = take(prop.count_type);
            for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) take(prop.type);
          } else {
            values[i] = take(prop.type);
          }
        }
      }
      if (is_vertex) {
        const Vec3 p{values[xi], values[yi], values[zi]};
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
          throw FormatError("ply: non-finite vertex " + std::to_string(r));
        }
        cloud.coords.push_back(p);
      }
    }
    if (is_vertex) break;
  }
  if (cloud.coords.empty()) throw FormatError("ply: no points");
  return cloud;
}

PointCloud read_pointcloud(const std::filesystem::path& path, CloudFormat format) {
  const std::string bytes = detail::read_file(path);
  return format == CloudFormat::xyz ? parse_xyz(bytes) : parse_ply(bytes);
}

PointCloud read_pointcloud(const std::filesystem::path& path) {
  return read_pointcloud(path, cloud_format_from_path(path));
}

void write_pointcloud(const PointCloud& cloud, const std::filesystem::path& path,
                      CloudFormat format, PlyEncoding encoding) {
  std::string out;
  if (format == CloudFormat::xyz) {
    out.reserve(cloud.size() * 64);
    for (const Vec3& p : cloud.coords) {
      append_float(out, p[0]);
      out.push_back(' ');
      append_float(out, p[1]);
      out.push_back(' ');
      append_float(out, p[2]);
      out.push_back('\n');
    }
  } else {
    out = "ply\nformat ";
    out += encoding == PlyEncoding::ascii ? "ascii" : "binary_little_endian";
    out += " 1.0\nelement vertex " + std::to_string(cloud.size()) +
           "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    for (const Vec3& p : cloud.coords) {
      for (int i = 0; i < 3; ++i) {
        const float v = static_cast<float>(p[i]);
        if (encoding == PlyEncoding::ascii) {
          append_f32(out, v);
          out.push_back(i == 2 ? '\n' : ' ');
        } else {
          char buf[4];
          std::memcpy(buf, &v, 4);
          out.append(buf, 4);
        }
      }
    }
  }
  write_file(path, out);
}

void write_pointcloud(const PointCloud& cloud, const std::filesystem::path& path) {
  write_pointcloud(cloud, path, cloud_format_from_path(path));
}

void write_quality_ply(std::span<const Vec3> points, std::span<const double> quality,
                       const std::filesystem::path& path) {
  if (points.size() != quality.size()) {
    throw ContractError("write_quality_ply: " + std::to_string(points.size()) + " points but " +
                        std::to_string(quality.size()) + " quality values");
  }
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                    std::to_string(points.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n"
                    "property float quality\nend_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const float v[4] = {static_cast<float>(points[i][0]), static_cast<float>(points[i][1]),
                        static_cast<float>(points[i][2]), static_cast<float>(quality[i])};
    char buf[16];
    std::memcpy(buf, v, 16);
    out.append(buf, 16);
  }
  write_file(path, out);
}

}  // namespace noisetrans
