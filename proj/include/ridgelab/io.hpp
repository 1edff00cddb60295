#pragma once

// Grid specs, CSV emission/parsing and the base64 matrix container used for
// dataset interchange.

#include <bit>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <boost/beast/core/detail/base64.hpp>
#include <json.hpp>

#include "ridgelab/error.hpp"
#include "ridgelab/regress.hpp"
#include "ridgelab/spectrum.hpp"

namespace ridgelab {
namespace io {

using json = nlohmann::json;

namespace detail {

inline double parse_double(std::string_view s, const char* what) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last)
    throw InvalidArgument(std::string(what) + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

/// Canonical padded base64: length a multiple of 4, '=' only as trailing padding.
inline bool is_base64(const std::string& s) {
  if (s.size() % 4 != 0) return false;
  std::size_t pad = 0;
  while (pad < 2 && pad < s.size() && s[s.size() - 1 - pad] == '=') ++pad;
  for (std::size_t i = 0; i + pad < s.size(); ++i) {
    const char c = s[i];
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '+' && c != '/') return false;
  }
  return true;
}

}  // namespace detail

/// "a:b:count" → count equispaced points from a to b inclusive.
inline std::vector<double> parse_grid(const std::string& spec) {
  const auto parts = detail::split(spec, ':');
  if (parts.size() != 3) throw InvalidArgument("grid spec must look like a:b:count, got '" + spec + "'");
  const double a = detail::parse_double(parts[0], "grid spec");
  const double b = detail::parse_double(parts[1], "grid spec");
  long long count = 0;
  {
    const auto c = parts[2];
    const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), count);
    if (ec != std::errc() || ptr != c.data() + c.size() || c.empty())
      throw InvalidArgument("grid spec: count must be an integer, got '" + std::string(c) + "'");
  }
  if (!std::isfinite(a) || !std::isfinite(b)) throw InvalidArgument("grid spec endpoints must be finite");
  if (a > b) throw InvalidArgument("grid spec requires a <= b");
  if (count < 1) throw InvalidArgument("grid spec requires count >= 1");
  if (count == 1) {
    if (a != b) throw InvalidArgument("grid spec with count = 1 requires a = b");
    return {a};
  }
  if (a == b) throw InvalidArgument("grid spec with a = b requires count = 1");
  std::vector<double> g(static_cast<std::size_t>(count));
  const double step = (b - a) / static_cast<double>(count - 1);
  for (long long i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = a + step * static_cast<double>(i);
  g.back() = b;
  return g;
}

/// Shortest decimal string that round-trips to the same double (%g style, so at most 17 significant digits).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  if (ec != std::errc()) throw Error("format_double: to_chars failed");
  return std::string(buf, ptr);
}

/// Inverse of format_double; also accepts nan/inf and the empty cell (as NaN).
inline double parse_cell(std::string_view s) {
  if (s.empty() || s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return detail::parse_double(s, "csv");
}

/// In-memory CSV: `# key=value` comment lines, one header row, string cells.
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) {
    ridgelab::detail::require(row.size() == header.size(), "csv row width does not match header");
    rows.push_back(std::move(row));
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InvalidArgument("csv has no column '" + name + "'");
  }

  std::vector<double> numeric_column(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(parse_cell(r[c]));
    return out;
  }

  std::string str() const {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string_view c(line);
      c.remove_prefix(1);
      if (!c.empty() && c[0] == ' ') c.remove_prefix(1);
      t.comments.emplace_back(c);
      continue;
    }
    std::vector<std::string> cells;
    for (auto v : detail::split(line, ',')) cells.emplace_back(v);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
    } else {
      if (cells.size() != t.header.size()) throw InvalidArgument("csv row width does not match header");
      t.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw InvalidArgument("csv has no header row");
  return t;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

// ---- base64 matrix container -------------------------------------------------

/// {"rows", "cols", "dtype": "<f8", "order": "F", "data": base64(little-endian f64 column-major)}.
inline json encode_matrix(const Matrix& a) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(a.size()) * 8);
  for (Index i = 0; i < a.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(a.data()[i]);
    for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::string enc(boost::beast::detail::base64::encoded_size(bytes.size()), '\0');
  enc.resize(boost::beast::detail::base64::encode(enc.data(), bytes.data(), bytes.size()));
  return {{"rows", a.rows()}, {"cols", a.cols()}, {"dtype", "<f8"}, {"order", "F"}, {"data", enc}};
}

inline Matrix decode_matrix(const json& j, const char* where) {
  ridgelab::detail::reject_unknown_keys(j, {"rows", "cols", "dtype", "order", "data"}, where);
  const std::string w(where);
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw InvalidArgument(w + ": matrix needs rows, cols and data");
  if (j.value("dtype", std::string("<f8")) != "<f8") throw InvalidArgument(w + ": only dtype <f8 is supported");
  if (j.value("order", std::string("F")) != "F") throw InvalidArgument(w + ": only column-major order F is supported");
  const auto rows = j.at("rows").get<long long>();
  const auto cols = j.at("cols").get<long long>();
  if (rows < 0 || cols < 0) throw InvalidArgument(w + ": negative shape");
  if (!j.at("data").is_string()) throw InvalidArgument(w + ": data must be a base64 string");
  const auto& enc = j.at("data").get_ref<const std::string&>();
  if (!detail::is_base64(enc)) throw InvalidArgument(w + ": malformed base64 payload");
  std::vector<unsigned char> bytes(boost::beast::detail::base64::decoded_size(enc.size()));
  const std::size_t written = boost::beast::detail::base64::decode(bytes.data(), enc.data(), enc.size()).first;
  const auto count = static_cast<std::size_t>(rows * cols);
  if (written != count * 8) throw InvalidArgument(w + ": payload size does not match shape");
  Matrix a(rows, cols);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    a.data()[i] = std::bit_cast<double>(bits);
  }
  return a;
}

inline json encode_vector(const Vector& v) { return encode_matrix(Matrix(v)); }

inline Vector decode_vector(const json& j, const char* where) {
  const Matrix a = decode_matrix(j, where);
  if (a.cols() != 1) throw InvalidArgument(std::string(where) + ": expected a column vector");
  return a.col(0);
}

/// {"X", "Y", "model", optional "mu0", optional "xi"}.
inline json dataset_to_json(const Dataset& d) {
  json j{{"X", encode_matrix(d.X)}, {"Y", encode_vector(d.Y)}, {"model", model_to_json(d.model)}};
  if (d.mu0) j["mu0"] = encode_vector(d.mu0->coords());
  if (d.xi) j["xi"] = encode_vector(*d.xi);
  return j;
}

inline Dataset dataset_from_json(const json& j) {
  ridgelab::detail::reject_unknown_keys(j, {"X", "Y", "model", "mu0", "xi"}, "dataset");
  if (!j.contains("X") || !j.contains("Y") || !j.contains("model"))
    throw InvalidArgument("dataset needs X, Y and model");
  Matrix X = decode_matrix(j.at("X"), "dataset.X");
  Vector Y = decode_vector(j.at("Y"), "dataset.Y");
  CovarianceModel model = model_from_json(j.at("model"), X.cols());
  Dataset d{std::move(X), std::move(Y), std::nullopt, std::nullopt, std::move(model)};
  if (j.contains("mu0")) d.mu0 = SignalVector(decode_vector(j.at("mu0"), "dataset.mu0"));
  if (j.contains("xi")) d.xi = decode_vector(j.at("xi"), "dataset.xi");
  d.validate();
  return d;
}

}  // namespace io
}  // namespace ridgelab
