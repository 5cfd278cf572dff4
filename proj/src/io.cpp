#include "polymatch/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "polymatch/errors.hpp"

namespace polymatch {

namespace {

using nlohmann::json;

// Payloads are little-endian on disk regardless of host order.
void write_le_doubles(std::ofstream& out, std::span<const double> values) {
  std::string buf;
  buf.reserve(values.size() * 8);
  for (const double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b)
      buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<double> read_le_doubles(std::ifstream& in, std::size_t count,
                                    const std::string& what, const std::string& path) {
  std::string buf(count * 8, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != count * 8)
    throw std::invalid_argument(what + ": '" + path + "' payload truncated: expected " +
                                std::to_string(count) + " values, found " +
                                std::to_string(got / 8));
  if (in.peek() != std::ifstream::traits_type::eof())
    throw std::invalid_argument(what + ": '" + path +
                                "' has trailing bytes after the payload");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i * 8 + b]))
              << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

json read_header(std::ifstream& in, const std::string& what, const std::string& path,
                 const char* magic) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument(what + ": '" + path + "' is missing its header line");
  const json h = json::parse(line, nullptr, false);
  if (h.is_discarded() || !h.is_object())
    throw std::invalid_argument(what + ": '" + path +
                                "' header is not a JSON object");
  if (!h.contains("magic") || !h["magic"].is_string() || h["magic"] != magic)
    throw std::invalid_argument(what + ": '" + path + "' magic mismatch: expected \"" +
                                magic + "\"");
  if (!h.contains("dtype") || h["dtype"] != "f64")
    throw std::invalid_argument(what + ": '" + path +
                                "' dtype must be \"f64\"");
  return h;
}

int header_int(const json& h, const char* field, const std::string& what,
               const std::string& path) {
  if (!h.contains(field) || !h[field].is_number_integer())
    throw std::invalid_argument(what + ": '" + path + "' header field \"" + field +
                                "\" must be an integer");
  return h[field].get<int>();
}

// Recursive nested-array emitter: axis `depth` of `k` over the block
// starting at `base` with `stride` elements per child.
json nest(std::span<const double> v, int k, int n, int depth, std::size_t base,
          std::size_t stride) {
  json arr = json::array();
  if (depth == k - 1) {
    for (int i = 0; i < n; ++i) arr.push_back(v[base + static_cast<std::size_t>(i)]);
    return arr;
  }
  for (int i = 0; i < n; ++i)
    arr.push_back(nest(v, k, n, depth + 1, base + static_cast<std::size_t>(i) * stride,
                       stride / static_cast<std::size_t>(n)));
  return arr;
}

void flatten(const json& node, int depth, int k, int n, std::vector<double>& out) {
  if (depth == k) {
    if (!node.is_number())
      throw std::invalid_argument("tensor_from_json: non-numeric leaf at depth " +
                                  std::to_string(depth));
    out.push_back(node.get<double>());
    return;
  }
  if (!node.is_array() || static_cast<int>(node.size()) != n)
    throw std::invalid_argument("tensor_from_json: expected an array of length " +
                                std::to_string(n) + " at depth " + std::to_string(depth));
  for (const auto& child : node) flatten(child, depth + 1, k, n, out);
}

}  // namespace

void write_tensor(const std::string& path, const DenseTensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::invalid_argument("write_tensor: cannot open '" + path + "' for writing");
  const json h = {{"magic", "PMT1"},
                  {"k", t.shape().k},
                  {"n", t.shape().n},
                  {"dtype", "f64"},
                  {"order", "row-major"}};
  out << h.dump() << '\n';
  write_le_doubles(out, t.values());
  if (!out) throw std::runtime_error("write_tensor: I/O failure writing '" + path + "'");
}

DenseTensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("read_tensor: cannot open '" + path + "'");
  const json h = read_header(in, "read_tensor", path, "PMT1");
  if (!h.contains("order") || h["order"] != "row-major")
    throw std::invalid_argument("read_tensor: '" + path +
                                "' order must be \"row-major\"");
  const int k = header_int(h, "k", "read_tensor", path);
  const int n = header_int(h, "n", "read_tensor", path);
  const TensorShape shape = TensorShape::of(k, n);
  std::vector<double> vals = read_le_doubles(in, shape.element_count(), "read_tensor", path);
  return DenseTensor::from_values(shape, std::move(vals));
}

void write_embeddings(const std::string& path, const EmbeddingBatch& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::invalid_argument("write_embeddings: cannot open '" + path +
                                "' for writing");
  const json h = {{"magic", "PME1"},
                  {"k", x.views()},
                  {"n", x.points()},
                  {"d", x.dim()},
                  {"dtype", "f64"}};
  out << h.dump() << '\n';
  write_le_doubles(out, x.values());
  if (!out)
    throw std::runtime_error("write_embeddings: I/O failure writing '" + path + "'");
}

EmbeddingBatch read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("read_embeddings: cannot open '" + path + "'");
  const json h = read_header(in, "read_embeddings", path, "PME1");
  const int k = header_int(h, "k", "read_embeddings", path);
  const int n = header_int(h, "n", "read_embeddings", path);
  const int d = header_int(h, "d", "read_embeddings", path);
  if (k < 1 || n < 1 || d < 1)
    throw std::invalid_argument("read_embeddings: '" + path +
                                "' header fields k, n, d must be positive");
  const std::size_t count = static_cast<std::size_t>(k) * static_cast<std::size_t>(n) *
                            static_cast<std::size_t>(d);
  std::vector<double> vals = read_le_doubles(in, count, "read_embeddings", path);
  return EmbeddingBatch::from_values(k, n, d, std::move(vals));
}

void write_gradient(const std::string& path, const GradientBatch& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::invalid_argument("write_gradient: cannot open '" + path +
                                "' for writing");
  const json h = {{"magic", "PME1"},
                  {"k", g.views},
                  {"n", g.points},
                  {"d", g.dim},
                  {"dtype", "f64"}};
  out << h.dump() << '\n';
  write_le_doubles(out, g.values);
  if (!out)
    throw std::runtime_error("write_gradient: I/O failure writing '" + path + "'");
}

GradientBatch read_gradient(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("read_gradient: cannot open '" + path + "'");
  const json h = read_header(in, "read_gradient", path, "PME1");
  const int k = header_int(h, "k", "read_gradient", path);
  const int n = header_int(h, "n", "read_gradient", path);
  const int d = header_int(h, "d", "read_gradient", path);
  if (k < 1 || n < 1 || d < 1)
    throw std::invalid_argument("read_gradient: '" + path +
                                "' header fields k, n, d must be positive");
  const std::size_t count = static_cast<std::size_t>(k) * static_cast<std::size_t>(n) *
                            static_cast<std::size_t>(d);
  GradientBatch g;
  g.views = k;
  g.points = n;
  g.dim = d;
  g.values = read_le_doubles(in, count, "read_gradient", path);
  for (const double v : g.values)
    if (!std::isfinite(v))
      throw NumericalError("read_gradient: '" + path + "' contains non-finite values");
  return g;
}

std::string tensor_to_json(const DenseTensor& t) {
  const int k = t.shape().k;
  const int n = t.shape().n;
  const std::size_t stride = t.values().size() / static_cast<std::size_t>(n);
  return nest(t.values(), k, n, 0, 0, stride).dump();
}

DenseTensor tensor_from_json(const std::string& text) {
  const json root = json::parse(text, nullptr, false);
  if (root.is_discarded())
    throw std::invalid_argument("tensor_from_json: input is not valid JSON");
  // Infer (k, n) from the nesting: depth down the first children, length of
  // the outermost array.
  if (!root.is_array() || root.empty())
    throw std::invalid_argument("tensor_from_json: top level must be a non-empty array");
  const int n = static_cast<int>(root.size());
  int k = 1;
  const json* node = &root;
  while (!(*node)[0].is_number()) {
    if (!(*node)[0].is_array() || (*node)[0].empty())
      throw std::invalid_argument(
          "tensor_from_json: nesting must bottom out in numbers");
    node = &(*node)[0];
    ++k;
  }
  const TensorShape shape = TensorShape::of(k, n);
  std::vector<double> vals;
  vals.reserve(shape.element_count());
  flatten(root, 0, k, n, vals);
  return DenseTensor::from_values(shape, std::move(vals));
}

}  // namespace polymatch
