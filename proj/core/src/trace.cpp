#include "moelrc/trace.hpp"

#include "json.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

namespace moelrc {

void write_trace_jsonl(const RoutingTrace& trace, std::ostream& out) {
  for (const TraceRecord& r : trace) {
    nlohmann::ordered_json j;
    j["token"] = r.token;
    j["layer"] = r.layer;
    j["scores"] = r.scores;
    j["selected"] = r.selected;
    j["compensated"] = r.compensated;
    out << j.dump() << '\n';
  }
}

RoutingTrace read_trace_jsonl(std::istream& in) {
  RoutingTrace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      TraceRecord r;
      r.token = j.at("token").get<Index>();
      r.layer = j.at("layer").get<Index>();
      r.scores = j.at("scores").get<std::vector<double>>();
      r.selected = j.at("selected").get<std::vector<Index>>();
      r.compensated = j.at("compensated").get<std::vector<Index>>();
      trace.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_trace(trace);
  return trace;
}

void validate_trace(const RoutingTrace& trace) {
  for (const TraceRecord& r : trace) {
    const std::string where =
        "trace record (token " + std::to_string(r.token) + ", layer " + std::to_string(r.layer) + "): ";
    const auto n = static_cast<Index>(r.scores.size());
    double sum = 0.0;
    for (double s : r.scores) {
      if (!(s >= 0.0)) throw FormatError(where + "negative or non-finite score");
      sum += s;
    }
    if (sum > 1.0 + 1e-6) throw FormatError(where + "scores sum above 1");
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      const Index id = r.selected[i];
      if (id < 0 || id >= n) throw FormatError(where + "selected id out of range");
      if (i > 0 && r.scores[static_cast<std::size_t>(id)] >
                       r.scores[static_cast<std::size_t>(r.selected[i - 1])])
        throw FormatError(where + "selected not sorted by score");
    }
    if (r.compensated.size() > r.selected.size() ||
        !std::equal(r.compensated.begin(), r.compensated.end(), r.selected.begin()))
      throw FormatError(where + "compensated is not a prefix of selected");
  }
}

}  // namespace moelrc
