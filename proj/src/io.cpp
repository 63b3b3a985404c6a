#include "subpx/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include "json.hpp"

#include "subpx/error.hpp"

namespace subpx {

namespace {

using json = nlohmann::json;
// Same document parsed with float as the number type, so float fields get
// correctly rounded from their decimal text instead of via double.
using json_f = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t,
                                    std::uint64_t, float>;

template <typename F>
std::string format_number(F v) {
  if (!std::isfinite(v)) throw NumericError("cannot serialize a non-finite value");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class LineWriter {
 public:
  void key(const char* k) {
    out_ += first_ ? "{\"" : ",\"";
    first_ = false;
    out_ += k;
    out_ += "\":";
  }
  void integer(const char* k, std::int64_t v) {
    key(k);
    out_ += std::to_string(v);
  }
  void boolean(const char* k, bool v) {
    key(k);
    out_ += v ? "true" : "false";
  }
  void number(const char* k, double v) {
    key(k);
    out_ += format_double(v);
  }
  template <typename F>
  void array(const char* k, std::span<const F> vs) {
    key(k);
    out_ += '[';
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (i) out_ += ',';
      out_ += format_number(vs[i]);
    }
    out_ += ']';
  }
  void point(const char* k, const PixelPoint& p) {
    const double v[2]{p.x, p.y};
    array<double>(k, v);
  }
  void pair(const char* k, const std::array<double, 2>& v) { array<double>(k, v); }
  void matrix(const char* k, const Mat3& m) {
    double v[9];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) v[r * 3 + c] = m(r, c);
    }
    array<double>(k, v);
  }
  std::string finish() {
    out_ += '}';
    return std::move(out_);
  }

 private:
  std::string out_;
  bool first_ = true;
};

const json& field(const json& j, const char* k) {
  auto it = j.find(k);
  if (it == j.end()) throw InvalidInput(std::string("record is missing field '") + k + "'");
  return *it;
}

PixelPoint read_point(const json& j, const char* k) {
  const auto& a = field(j, k);
  if (!a.is_array() || a.size() != 2) {
    throw InvalidInput(std::string("field '") + k + "' must be a 2-array");
  }
  return {a[0].get<double>(), a[1].get<double>()};
}

Mat3 read_matrix(const json& j, const char* k) {
  const auto& a = field(j, k);
  if (!a.is_array() || a.size() != 9) {
    throw InvalidInput(std::string("field '") + k + "' must be a 9-array");
  }
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = a[static_cast<std::size_t>(r * 3 + c)].get<double>();
  }
  return m;
}

std::vector<float> read_floats(const json_f& j, const char* k) {
  auto it = j.find(k);
  if (it == j.end() || !it->is_array()) {
    throw InvalidInput(std::string("record is missing array field '") + k + "'");
  }
  return it->get<std::vector<float>>();
}

Tensor<float> read_patch(const json_f& j, const char* k) {
  auto v = read_floats(j, k);
  const int p = static_cast<int>(std::lround(std::sqrt(static_cast<double>(v.size()))));
  if (static_cast<std::size_t>(p) * p != v.size()) {
    throw InvalidInput(std::string("patch field '") + k + "' is not square");
  }
  Tensor<float> t(1, p, p);
  t.data = std::move(v);
  return t;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const std::string& path) {
  auto in = open_in(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<unsigned char> buf(1 << 16);
  while (in) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    h = fnv1a64(std::span<const unsigned char>(buf.data(), got), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) { return format_number(v); }
std::string format_float(float v) { return format_number(v); }

std::string sample_to_json_line(const TwoViewSample& s) {
  LineWriter w;
  w.integer("sample_id", s.sample_id);
  w.integer("pair_id", s.pair_id);
  w.array<float>("patch1", s.patch1.data);
  w.array<float>("patch2", s.patch2.data);
  w.array<float>("score1", s.score1.data);
  w.array<float>("score2", s.score2.data);
  w.array<float>("d1", s.d1);
  w.array<float>("d2", s.d2);
  w.point("true1", s.true1);
  w.point("true2", s.true2);
  w.point("quantized1", s.quantized1);
  w.point("quantized2", s.quantized2);
  w.number("fx1", s.k1.fx);
  w.number("fy1", s.k1.fy);
  w.number("cx1", s.k1.cx);
  w.number("cy1", s.k1.cy);
  w.number("fx2", s.k2.fx);
  w.number("fy2", s.k2.fy);
  w.number("cx2", s.k2.cx);
  w.number("cy2", s.k2.cy);
  w.matrix("E", s.gt_e.m);
  w.matrix("R", s.gt_pose.rotation);
  const double t[3]{s.gt_pose.translation.x(), s.gt_pose.translation.y(),
                    s.gt_pose.translation.z()};
  w.array<double>("t", t);
  w.boolean("is_outlier", s.is_outlier);
  return w.finish();
}

TwoViewSample sample_from_json_line(const std::string& line) {
  json j;
  json_f jf;
  try {
    j = json::parse(line);
    jf = json_f::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed dataset record: ") + e.what());
  }
  try {
    TwoViewSample s;
    s.sample_id = field(j, "sample_id").get<std::int64_t>();
    s.pair_id = j.contains("pair_id") ? j["pair_id"].get<std::int64_t>() : 0;
    s.patch1 = read_patch(jf, "patch1");
    s.patch2 = read_patch(jf, "patch2");
    s.score1 = read_patch(jf, "score1");
    s.score2 = read_patch(jf, "score2");
    s.d1 = read_floats(jf, "d1");
    s.d2 = read_floats(jf, "d2");
    s.true1 = read_point(j, "true1");
    s.true2 = read_point(j, "true2");
    s.quantized1 = read_point(j, "quantized1");
    s.quantized2 = read_point(j, "quantized2");
    s.k1 = {field(j, "fx1").get<double>(), field(j, "fy1").get<double>(),
            field(j, "cx1").get<double>(), field(j, "cy1").get<double>()};
    s.k2 = {field(j, "fx2").get<double>(), field(j, "fy2").get<double>(),
            field(j, "cx2").get<double>(), field(j, "cy2").get<double>()};
    s.gt_e.m = read_matrix(j, "E");
    s.gt_pose.rotation = read_matrix(j, "R");
    const auto& t = field(j, "t");
    if (!t.is_array() || t.size() != 3) throw InvalidInput("field 't' must be a 3-array");
    s.gt_pose.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    s.is_outlier = field(j, "is_outlier").get<bool>();
    if (s.d1.size() != s.d2.size()) throw InvalidInput("descriptor sizes differ within a record");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("dataset record has a wrong field type: ") + e.what());
  }
}

DatasetSummary generate_dataset(const SceneConfig& cfg, std::int64_t n, const std::string& path) {
  cfg.validate();
  if (n < 0) throw InvalidInput("generate_dataset: negative sample count");
  auto out = open_out(path);
  DatasetSummary summary;
  for (std::int64_t pair = 0; summary.records < n; ++pair) {
    for (const auto& s : generate_pair(cfg, pair)) {
      if (summary.records == n) break;
      out << sample_to_json_line(s) << '\n';
      ++summary.records;
      if (s.is_outlier) ++summary.outliers;
    }
  }
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
  summary.checksum = file_checksum(path);
  return summary;
}

void write_dataset(const std::string& path, std::span<const TwoViewSample> samples) {
  auto out = open_out(path);
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<TwoViewSample> read_dataset(const std::string& path) {
  auto in = open_in(path);
  std::vector<TwoViewSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json_line(line));
    } catch (const InvalidInput& e) {
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string refined_to_json_line(const RefinedRecord& r) {
  LineWriter w;
  w.integer("sample_id", r.sample_id);
  w.pair("delta1", r.match.delta1);
  w.pair("delta2", r.match.delta2);
  w.point("p1_refined", r.match.p1_refined);
  w.point("p2_refined", r.match.p2_refined);
  w.boolean("skipped", r.match.skipped);
  return w.finish();
}

RefinedRecord refined_from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    RefinedRecord r;
    r.sample_id = field(j, "sample_id").get<std::int64_t>();
    const auto d1 = read_point(j, "delta1");
    const auto d2 = read_point(j, "delta2");
    r.match.delta1 = {d1.x, d1.y};
    r.match.delta2 = {d2.x, d2.y};
    r.match.p1_refined = read_point(j, "p1_refined");
    r.match.p2_refined = read_point(j, "p2_refined");
    r.match.skipped = field(j, "skipped").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed refined-match record: ") + e.what());
  }
}

void write_refined(const std::string& path, std::span<const RefinedRecord> records) {
  auto out = open_out(path);
  for (const auto& r : records) out << refined_to_json_line(r) << '\n';
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<RefinedRecord> read_refined(const std::string& path) {
  auto in = open_in(path);
  std::vector<RefinedRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(refined_from_json_line(line));
  }
  return out;
}

}  // namespace subpx
