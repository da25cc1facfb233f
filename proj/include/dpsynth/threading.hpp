//
// Copyright 2026 The dpsynth Authors
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
//

#ifndef DPSYNTH_THREADING_HPP_
#define DPSYNTH_THREADING_HPP_

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dpsynth {

// Intra-step parallelism cap: min(OpenMP max threads, DPPS_THREADS if set).
// Returns 1 when built without OpenMP.
inline int max_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("DPPS_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

}  // namespace dpsynth

#endif  // DPSYNTH_THREADING_HPP_
