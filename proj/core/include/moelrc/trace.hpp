#pragma once

#include "moelrc/types.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace moelrc {

/// Routing decision of one token in one layer.
struct TraceRecord {
  Index token = 0;
  Index layer = 0;
  std::vector<double> scores;       // softmax weight of every routed expert
  std::vector<Index> selected;      // top-k ids, score descending
  std::vector<Index> compensated;   // leading top-n of `selected`

  bool operator==(const TraceRecord&) const = default;
};

using RoutingTrace = std::vector<TraceRecord>;

/// One JSON object per line:
/// {"token":int,"layer":int,"scores":[...],"selected":[...],"compensated":[...]}
void write_trace_jsonl(const RoutingTrace& trace, std::ostream& out);
RoutingTrace read_trace_jsonl(std::istream& in);

/// Invariants: non-negative scores summing to <= 1 + 1e-6, selected sorted by
/// score descending, compensated a prefix of selected. Throws FormatError.
void validate_trace(const RoutingTrace& trace);

}  // namespace moelrc
