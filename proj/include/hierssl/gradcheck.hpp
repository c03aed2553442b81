#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hierssl/core.hpp"

namespace hierssl {

struct GradCheckItem {
  std::string name;
  int coords = 0;          // coordinates compared
  double max_rel_err = 0.0;
};

struct GradAuditReport {
  std::vector<GradCheckItem> items;
  double tolerance = 1e-4;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central-difference audit (h = 1e-4) of every analytic gradient path: the
// contrastive losses, projection backward, KL alignment, the full batch loss
// over sampled parameter coordinates, and the raw encoder backward including
// pixel gradients. Per item, relative error is measured against the larger
// max-magnitude of the two gradient sets (floored), so coordinates that are
// individually tiny do not raise false alarms.
GradAuditReport run_gradient_audit(uint64_t seed);

// One line per item plus the verdict, ready to print.
std::string format_audit(const GradAuditReport& report);

}  // namespace hierssl
