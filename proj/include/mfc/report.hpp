#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mfc/control.hpp"
#include "mfc/game.hpp"

namespace mfc {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "mfc 0.1.0";

Json to_json(const Estimate& e);
Json to_json(const ValidationReport& v);
Json to_json(const FixpointDiagnostics& d);
Json to_json(const ContractionReport& c);
Json to_json(const TVEstimate& t);
Json to_json(const OptimizationReport& r);
Json to_json(const NearOptimalReport& r);
Json to_json(const ComparisonReport& r);
Json to_json(const IsaacsGap& g);
Json to_json(const SaddleReport& r);
Json to_json(const SaddleVerification& v);

/// Exact values carry the marker instead of a standard error.
Json exact(double value);

/// Plain comma-separated table; numbers at full round-trip precision.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  std::string str() const;
  void write(const std::string& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string csv_number(double value);

}  // namespace mfc
