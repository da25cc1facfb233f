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

#ifndef DPSYNTH_SHA256_HPP_
#define DPSYNTH_SHA256_HPP_

#include <string>

namespace dpsynth {

// Hex digest of a byte string (content-addressed input hashing for run
// manifests).
std::string sha256_hex(const std::string& data);

// Hash of a file's raw bytes; throws std::runtime_error if unreadable.
std::string sha256_file_hex(const std::string& path);

}  // namespace dpsynth

#endif  // DPSYNTH_SHA256_HPP_
