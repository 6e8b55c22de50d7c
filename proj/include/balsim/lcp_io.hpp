// Copyright 2026 The balance_sim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Plain-text LCP files: the dimension k, then k rows of M, then q_hat, all
// whitespace separated. Lines starting with '#' are ignored.

#pragma once

#include <sstream>
#include <string>

#include "balsim/lcp.hpp"

namespace balsim {

inline LcpProblem parse_lcp_text(const std::string& text) {
  std::vector<std::pair<double, int>> tokens;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        tokens.emplace_back(v, lineno);
      } catch (const std::exception&) {
        throw FormatError(lineno, "not a number: '" + tok + "'");
      }
    }
  }
  if (tokens.empty()) throw FormatError(0, "empty LCP file");
  const double kd = tokens[0].first;
  if (kd < 0 || kd != static_cast<int>(kd) || kd > 10000)
    throw FormatError(tokens[0].second, "dimension must be a non-negative integer");
  const int k = static_cast<int>(kd);
  const std::size_t need = 1 + static_cast<std::size_t>(k) * k + k;
  if (tokens.size() != need)
    throw FormatError(tokens.back().second,
                      "expected " + std::to_string(need - 1) + " values after k, got " +
                          std::to_string(tokens.size() - 1));
  LcpProblem p{MatX(k, k), VecX(k)};
  std::size_t at = 1;
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) p.M(r, c) = tokens[at++].first;
  for (int r = 0; r < k; ++r) p.q_hat[r] = tokens[at++].first;
  p.validate();
  return p;
}

}  // namespace balsim
