#include <string_view>

#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"
#include "text_util.hpp"

namespace noisetrans {

namespace {

// Splits text into lines, remembering 1-based line numbers; strips '#' comments.
struct LineReader {
  const std::string& text;
  std::size_t pos = 0;
  std::size_t line_no = 0;

  bool next(std::vector<std::string_view>& tokens) {
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      std::string_view line(text.data() + pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) {
        line = line.substr(0, hash);
      }
      tokens = detail::split_ws(line);
      if (!tokens.empty()) return true;
    }
    return false;
  }
};

void add_polygon(TriMesh& mesh, const std::vector<std::uint32_t>& poly, std::size_t line_no) {
  if (poly.size() < 3) throw ParseError("face with fewer than 3 vertices", line_no);
  for (std::uint32_t v : poly) {
    if (v >= mesh.vertices.size()) {
      throw ParseError("face index " + std::to_string(v) + " out of range", line_no);
    }
  }
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
    const std::array<std::uint32_t, 3> tri{poly[0], poly[i], poly[i + 1]};
    const double area =
        triangle_area(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
    if (!(area > 0.0)) {
      ++mesh.dropped_degenerate;
      continue;
    }
    mesh.triangles.push_back(tri);
  }
}

Vec3 parse_vertex(const std::vector<std::string_view>& tok, std::size_t first,
                  std::size_t line_no) {
  if (tok.size() < first + 3) throw ParseError("vertex needs 3 coordinates", line_no);
  Vec3 v{};
  for (int i = 0; i < 3; ++i) {
    if (!detail::parse_double(tok[first + i], v[i]) || !std::isfinite(v[i])) {
      throw ParseError("invalid coordinate '" + std::string(tok[first + i]) + "'", line_no);
    }
  }
  return v;
}

}  // namespace

TriMesh parse_off(const std::string& text) {
  LineReader reader{text};
  std::vector<std::string_view> tok;
  if (!reader.next(tok)) throw ParseError("off: empty file", 1);

  // The counts may share the header line ("OFF 8 6 0") or follow it.
  const std::string_view magic = tok[0];
  if (magic.size() < 3 || magic.substr(magic.size() - 3) != "OFF") {
    throw ParseError("off: missing OFF header", reader.line_no);
  }
  std::size_t first = 1;
  if (tok.size() == 1) {
    if (!reader.next(tok)) throw ParseError("off: missing counts", reader.line_no + 1);
    first = 0;
  }
  std::size_t nv = 0, nf = 0;
  if (tok.size() < first + 2 || !detail::parse_size(tok[first], nv) ||
      !detail::parse_size(tok[first + 1], nf)) {
    throw ParseError("off: malformed counts", reader.line_no);
  }

  TriMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!reader.next(tok)) throw ParseError("off: missing vertices", reader.line_no + 1);
    mesh.vertices.push_back(parse_vertex(tok, 0, reader.line_no));
  }
  std::vector<std::uint32_t> poly;
  for (std::size_t f = 0; f < nf; ++f) {
    if (!reader.next(tok)) throw ParseError("off: missing faces", reader.line_no + 1);
    std::size_t count = 0;
    if (!detail::parse_size(tok[0], count) || tok.size() < count + 1) {
      throw ParseError("off: malformed face", reader.line_no);
    }
    poly.clear();
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t v = 0;
      if (!detail::parse_size(tok[1 + i], v)) throw ParseError("off: bad index", reader.line_no);
      poly.push_back(static_cast<std::uint32_t>(v));
    }
    add_polygon(mesh, poly, reader.line_no);
  }
  return mesh;
}

TriMesh parse_obj(const std::string& text) {
  LineReader reader{text};
  std::vector<std::string_view> tok;
  TriMesh mesh;
  std::vector<std::uint32_t> poly;
  while (reader.next(tok)) {
    if (tok[0] == "v") {
      mesh.vertices.push_back(parse_vertex(tok, 1, reader.line_no));
    } else if (tok[0] == "f") {
      poly.clear();
      for (std::size_t i = 1; i < tok.size(); ++i) {
        const std::string_view ref = tok[i].substr(0, tok[i].find('/'));
        long idx = 0;
        if (!detail::parse_long(ref, idx) || idx == 0) {
          throw ParseError("obj: bad face index '" + std::string(tok[i]) + "'", reader.line_no);
        }
        const long resolved = idx > 0 ? idx - 1 : static_cast<long>(mesh.vertices.size()) + idx;
        if (resolved < 0) throw ParseError("obj: face index out of range", reader.line_no);
        poly.push_back(static_cast<std::uint32_t>(resolved));
      }
      add_polygon(mesh, poly, reader.line_no);
    }
  }
  if (mesh.vertices.empty()) throw FormatError("obj: no vertices");
  return mesh;
}

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  const std::string text = detail::read_file(path);
  return format == MeshFormat::off ? parse_off(text) : parse_obj(text);
}

TriMesh load_mesh(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".off") return load_mesh(path, MeshFormat::off);
  if (ext == ".obj") return load_mesh(path, MeshFormat::obj);
  throw ArgumentError("cannot infer mesh format from '" + path.string() + "'");
}

}  // namespace noisetrans
