#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "subpx/refine_net.hpp"
#include "subpx/synthetic.hpp"

namespace subpx {

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_checksum(const std::string& path);
std::string hex64(std::uint64_t v);

// Shortest round-trip decimal text.
std::string format_double(double v);
std::string format_float(float v);

// One JSON object per line; see README for the field list.
std::string sample_to_json_line(const TwoViewSample& s);
TwoViewSample sample_from_json_line(const std::string& line);

struct DatasetSummary {
  std::int64_t records = 0;
  std::int64_t outliers = 0;
  std::uint64_t checksum = 0;
};

/// Generates the first n samples for cfg and writes them as JSON lines in
/// sample-id order.
DatasetSummary generate_dataset(const SceneConfig& cfg, std::int64_t n, const std::string& path);

void write_dataset(const std::string& path, std::span<const TwoViewSample> samples);
std::vector<TwoViewSample> read_dataset(const std::string& path);

struct RefinedRecord {
  std::int64_t sample_id = 0;
  RefinedMatch match;
};

std::string refined_to_json_line(const RefinedRecord& r);
RefinedRecord refined_from_json_line(const std::string& line);
void write_refined(const std::string& path, std::span<const RefinedRecord> records);
std::vector<RefinedRecord> read_refined(const std::string& path);

}  // namespace subpx
