#include "mfc/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mfc {

Json to_json(const Estimate& e) { return Json{{"value", e.value}, {"se", e.se}}; }

Json exact(double value) { return Json{{"value", value}, {"exact", true}}; }

Json to_json(const ValidationReport& v) {
  Json checks = Json::array();
  for (const auto& c : v.checks) {
    checks.push_back(Json{{"id", c.id}, {"status", to_string(c.status)}, {"reason", c.reason}});
  }
  return Json{{"checks", checks},
              {"unbounded_statistics", v.unbounded_statistics},
              {"alpha", v.alpha},
              {"has_violation", v.has_violation()},
              {"caveats", v.caveats()}};
}

Json to_json(const FixpointDiagnostics& d) {
  return Json{{"converged", d.converged}, {"iterations", d.iterations}, {"tol", d.tol},
              {"distances", d.distances}, {"distance_se", d.distance_se}, {"ratios", d.ratios}};
}

Json to_json(const ContractionReport& c) {
  Json rows = Json::array();
  for (const auto& r : c.rows) {
    Json row{{"iteration", r.iteration}, {"distance", r.distance}, {"se", r.se}};
    row["ratio"] = r.ratio ? Json(*r.ratio) : Json(nullptr);
    rows.push_back(row);
  }
  Json out{{"rows", rows}};
  out["geometric_rate"] = c.geometric_rate ? Json(*c.geometric_rate) : Json(nullptr);
  out["growth_flag"] = c.growth_flag;
  out["note"] = c.note;
  return out;
}

Json to_json(const TVEstimate& t) {
  Json out{{"value", t.value}, {"se", t.se},
           {"kind", t.kind == TVEstimate::Kind::pathspace ? "pathspace" : "marginal_binned"}};
  if (t.kind == TVEstimate::Kind::marginal_binned) out["bin_width"] = t.bin_width;
  return out;
}

namespace {

Json trace_json(const std::vector<OuterIterate>& trace) {
  Json out = Json::array();
  for (const auto& t : trace) {
    out.push_back(Json{{"iteration", t.iteration},
                       {"distance", t.distance},
                       {"distance_se", t.distance_se},
                       {"value", to_json(t.value)},
                       {"fixpoint_iterations", t.fixpoint_iterations}});
  }
  return out;
}

Json residual_profile(const BsdeSolution& b) { return Json(b.residual_norms); }

}  // namespace

Json to_json(const OptimizationReport& r) {
  Json out{{"control", r.best.name()},
           {"converged", r.converged},
           {"iterations", r.iterations},
           {"payoff", to_json(r.payoff)},
           {"value", to_json(r.value)},
           {"epsilon", to_json(r.epsilon)},
           {"inconsistent", r.inconsistent},
           {"matching_residual", Json{{"value", r.matching_residual}, {"se", r.matching_se}}},
           {"hamiltonian_residual", r.hamiltonian_residual},
           {"grid_term", r.grid_term},
           {"trace", trace_json(r.trace)}};
  if (r.bsde) {
    out["bsde"] = Json{{"basis", r.bsde->basis.describe()}, {"residual_norms", residual_profile(*r.bsde)}};
  }
  out["fixpoint"] = to_json(r.fixpoint.diagnostics);
  return out;
}

Json to_json(const NearOptimalReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"control", row.name}, {"converged", row.converged}, {"payoff", to_json(row.payoff)}});
  }
  return Json{{"family", rows},
              {"best", r.rows.empty() ? "" : r.rows[r.best].name},
              {"value", to_json(r.value)},
              {"epsilon", to_json(r.epsilon)},
              {"target", r.target},
              {"success", r.success}};
}

Json to_json(const ComparisonReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"control", row.name},
                        {"y0", to_json(row.y0)},
                        {"payoff", to_json(row.payoff)},
                        {"identity_gap", Json{{"value", row.identity_gap}, {"se", row.identity_se}}},
                        {"identity_ok", row.identity_ok},
                        {"slack", Json{{"value", row.slack}, {"se", row.slack_se}}},
                        {"slack_ok", row.slack_ok}});
  }
  return Json{{"value", to_json(r.value)}, {"rows", rows}, {"all_ok", r.all_ok}};
}

Json to_json(const IsaacsGap& g) {
  return Json{{"max_gap", exact(g.max_gap)},
              {"mean_gap", exact(g.mean_gap)},
              {"points", g.points},
              {"profile_max", g.profile_max}};
}

Json to_json(const SaddleReport& r) {
  Json out{{"isaacs_ok", r.isaacs_ok},
           {"isaacs_gap", to_json(r.gap)},
           {"lower_value", to_json(r.lower_value)},
           {"upper_value", to_json(r.upper_value)}};
  if (!r.diagnostic.empty()) out["diagnostic"] = r.diagnostic;
  if (!r.isaacs_ok) return out;
  out["u_star"] = r.u_star.name();
  out["v_star"] = r.v_star.name();
  out["converged"] = r.converged;
  out["iterations"] = r.iterations;
  out["value"] = to_json(r.value);
  out["payoff"] = to_json(r.payoff);
  out["matching_residual"] = Json{{"value", r.matching_residual}, {"se", r.matching_se}};
  out["final_isaacs_gap"] = to_json(r.final_gap);
  out["grid_term"] = r.grid_term;
  out["terminal_ok"] = r.terminal_ok;
  out["terminal_note"] = r.terminal_note;
  out["trace"] = trace_json(r.trace);
  if (r.bsde) {
    out["bsde"] = Json{{"basis", r.bsde->basis.describe()}, {"residual_norms", residual_profile(*r.bsde)}};
  }
  return out;
}

Json to_json(const SaddleVerification& v) {
  auto slacks = [](const std::vector<SlackEntry>& entries) {
    Json out = Json::array();
    for (const auto& e : entries) {
      out.push_back(Json{{"control", e.name},
                         {"payoff", to_json(e.payoff)},
                         {"slack", Json{{"value", e.slack}, {"se", e.se}}},
                         {"ok", e.ok}});
    }
    return out;
  };
  return Json{{"center", to_json(v.center)},
              {"v_slacks", slacks(v.v_slacks)},
              {"u_slacks", slacks(v.u_slacks)},
              {"all_ok", v.all_ok}};
}

std::string csv_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string CsvTable::str() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) s += ',';
      const bool quote = cells[j].find_first_of(",\"\n") != std::string::npos;
      if (quote) {
        s += '"';
        for (char c : cells[j]) s += c == '"' ? std::string("\"\"") : std::string(1, c);
        s += '"';
      } else {
        s += cells[j];
      }
    }
    return s + "\n";
  };
  std::string out = line(header_);
  for (const auto& r : rows_) out += line(r);
  return out;
}

void CsvTable::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << str();
}

}  // namespace mfc
