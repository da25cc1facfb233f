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

#ifndef DPSYNTH_LISPRESS_HPP_
#define DPSYNTH_LISPRESS_HPP_

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpsynth::corpus {

// One node of a semantic parse tree. A function node carries a label and an
// ordered list of children; a string literal is a leaf carrying quoted text.
struct TreeNode {
  enum class Kind { kFunction, kLiteral };

  Kind kind = Kind::kFunction;
  std::string text;  // function label, or literal text without quotes
  std::vector<TreeNode> children;

  bool operator==(const TreeNode&) const = default;

  static TreeNode function(std::string label, std::vector<TreeNode> kids = {}) {
    return TreeNode{Kind::kFunction, std::move(label), std::move(kids)};
  }
  static TreeNode literal(std::string text) {
    return TreeNode{Kind::kLiteral, std::move(text), {}};
  }
};

struct ParseTree {
  TreeNode root;  // always a function node

  bool operator==(const ParseTree&) const = default;
};

class LispressError : public std::runtime_error {
 public:
  LispressError(const std::string& what, size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)),
        offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

// Parses a balanced s-expression with quoted string literals. Labels are any
// non-paren, non-quote, non-space token. Throws LispressError with the byte
// offset of the first problem.
ParseTree parse_lispress(const std::string& text);

// Canonical form: `(Label child ...)`, children separated by single spaces,
// literals double-quoted. parse_lispress(serialize_lispress(t)) == t.
std::string serialize_lispress(const ParseTree& tree);

// Multiset of function labels in pre-order; literals excluded.
std::map<std::string, int> function_types(const ParseTree& tree);

// Every string literal replaced by the fixed placeholder; idempotent.
inline constexpr const char* kAnonPlaceholder = "__STR__";
ParseTree anonymize(const ParseTree& tree);

// Token stream used when a tree is fed to a sequence model: parens are their
// own tokens, literals keep their quotes. Joining with single spaces and
// re-parsing recovers the tree.
std::vector<std::string> lispress_tokens(const ParseTree& tree);

}  // namespace dpsynth::corpus

#endif  // DPSYNTH_LISPRESS_HPP_
