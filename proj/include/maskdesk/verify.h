// Copyright 2026 The maskdesk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Self-check suites run by `maskdesk verify`, in order:
//   input-shape, layer-shapes, gradients, loss-fixtures, matcher, padding,
//   records.
// Loss fixtures are evaluated with the configured loss hyper-parameters and
// compared against values recomputed offline with the default ones, so a
// perturbed dice epsilon or no-object weight shows up as a failure.

#include <string>
#include <vector>

#include "maskdesk/config.h"

namespace maskdesk {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double error = 0.0;      // measured deviation, when the check has one
  double tolerance = 0.0;  // 0 for exact / boolean checks
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  std::size_t failures() const;
  std::string text() const;
};

VerifyReport verify(const RunConfig& cfg);

}  // namespace maskdesk
