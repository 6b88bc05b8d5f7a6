#include <cstdio>
#include <fstream>
#include <map>

#include "elemental/error.hpp"
#include "elemental/pipeline.hpp"

namespace elemental {

namespace fs = std::filesystem;

std::vector<ReportRow> build_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw ConfigurationError("report needs at least one run directory");
  // Rows keep the order in which labels first appear.
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::string, std::vector<SeedResult>>> groups;
  for (const auto& dir : run_dirs) {
    const fs::path file = dir / "result.json";
    std::ifstream in(file);
    if (!in) throw ConfigurationError("cannot read " + file.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(file.string() + ": " + e.what(), 0, 0);
    }
    ExperimentResult r = ExperimentResult::from_json(j);
    auto [it, inserted] = groups.try_emplace(r.label, r.env_id, std::vector<SeedResult>{});
    if (inserted) order.push_back(r.label);
    for (auto& s : r.seeds) it->second.second.push_back(std::move(s));
  }
  std::vector<ReportRow> rows;
  for (const auto& label : order) {
    ExperimentResult merged;
    merged.label = label;
    merged.env_id = groups[label].first;
    merged.seeds = std::move(groups[label].second);
    merged.finalize();
    rows.push_back({label, merged.env_id, static_cast<int>(merged.seeds.size()), merged.success,
                    merged.correlation});
  }
  return rows;
}

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string pm(const Aggregate& a) { return fixed3(a.mean) + " ± " + fixed3(a.std); }

}  // namespace

std::string report_markdown(const std::vector<ReportRow>& rows) {
  std::string out =
      "| run | env | seeds | success (max) | success (mean ± std) | reward corr (max) | reward corr "
      "(mean ± std) |\n"
      "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + r.label + " | " + r.env_id + " | " + std::to_string(r.seeds) + " | " +
           fixed3(r.success.max) + " | " + pm(r.success) + " | " +
           (r.correlation ? fixed3(r.correlation->max) : "n/a") + " | " +
           (r.correlation ? pm(*r.correlation) : "n/a") + " |\n";
  }
  return out;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out =
      "run,env,seeds,success_max,success_mean,success_std,corr_max,corr_mean,corr_std\n";
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& r : rows) {
    out += quote(r.label) + "," + quote(r.env_id) + "," + std::to_string(r.seeds) + "," +
           format_shortest(r.success.max) + "," + format_shortest(r.success.mean) + "," +
           format_shortest(r.success.std) + ",";
    if (r.correlation) {
      out += format_shortest(r.correlation->max) + "," + format_shortest(r.correlation->mean) + "," +
             format_shortest(r.correlation->std);
    } else {
      out += ",,";
    }
    out += "\n";
  }
  return out;
}

}  // namespace elemental
