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

#include "dpsynth/dataset.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dpsynth::corpus {

void write_jsonl(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const LabeledExample& ex : data.examples) {
    nlohmann::ordered_json obj;
    obj["utterance"] = ex.utterance;
    obj["parse"] =
        ex.parse ? nlohmann::ordered_json(serialize_lispress(*ex.parse))
                 : nlohmann::ordered_json(nullptr);
    obj["domain"] = ex.domain ? nlohmann::ordered_json(*ex.domain)
                              : nlohmann::ordered_json(nullptr);
    out << obj.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  Dataset data;
  data.name = path;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad JSON: " + e.what());
    }
    LabeledExample ex;
    if (!obj.contains("utterance") || !obj["utterance"].is_string()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": missing utterance");
    }
    ex.utterance = obj["utterance"].get<std::string>();
    if (ex.utterance.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": empty utterance");
    }
    if (obj.contains("parse") && !obj["parse"].is_null()) {
      try {
        ex.parse = parse_lispress(obj["parse"].get<std::string>());
      } catch (const LispressError& e) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": bad parse: " + e.what());
      }
    }
    if (obj.contains("domain") && !obj["domain"].is_null()) {
      ex.domain = obj["domain"].get<std::string>();
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace dpsynth::corpus
