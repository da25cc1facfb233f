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

#include "dpsynth/lispress.hpp"

#include <sstream>

namespace dpsynth::corpus {
namespace {

struct Cursor {
  const std::string& text;
  size_t pos = 0;

  bool done() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  void skip_ws() {
    while (!done() && (text[pos] == ' ' || text[pos] == '\t' ||
                       text[pos] == '\n' || text[pos] == '\r')) {
      ++pos;
    }
  }
};

bool is_symbol_char(char c) {
  return c != '(' && c != ')' && c != '"' && c != ' ' && c != '\t' &&
         c != '\n' && c != '\r';
}

std::string parse_quoted(Cursor& cur) {
  size_t open = cur.pos;
  ++cur.pos;  // opening quote
  std::string out;
  while (!cur.done()) {
    char c = cur.text[cur.pos];
    if (c == '"') {
      ++cur.pos;
      return out;
    }
    if (c == '\\' && cur.pos + 1 < cur.text.size()) {
      char next = cur.text[cur.pos + 1];
      if (next == '"' || next == '\\') {
        out.push_back(next);
        cur.pos += 2;
        continue;
      }
    }
    out.push_back(c);
    ++cur.pos;
  }
  throw LispressError("unterminated string literal opened", open);
}

TreeNode parse_node(Cursor& cur) {
  // cur is at '('
  size_t open = cur.pos;
  ++cur.pos;
  cur.skip_ws();
  if (cur.done()) throw LispressError("unclosed list", cur.text.size());
  if (cur.peek() == ')') throw LispressError("empty head", cur.pos);
  if (cur.peek() == '(' || cur.peek() == '"') {
    throw LispressError("list head must be a symbol", cur.pos);
  }
  std::string label;
  while (!cur.done() && is_symbol_char(cur.peek())) {
    label.push_back(cur.peek());
    ++cur.pos;
  }
  TreeNode node = TreeNode::function(std::move(label));
  for (;;) {
    cur.skip_ws();
    if (cur.done()) throw LispressError("unclosed list", cur.text.size());
    char c = cur.peek();
    if (c == ')') {
      ++cur.pos;
      return node;
    }
    if (c == '(') {
      node.children.push_back(parse_node(cur));
    } else if (c == '"') {
      node.children.push_back(TreeNode::literal(parse_quoted(cur)));
    } else {
      throw LispressError("bare symbol not allowed as child", cur.pos);
    }
  }
  (void)open;
}

void serialize_node(const TreeNode& node, std::ostringstream& out) {
  if (node.kind == TreeNode::Kind::kLiteral) {
    out << '"';
    for (char c : node.text) {
      if (c == '"' || c == '\\') out << '\\';
      out << c;
    }
    out << '"';
    return;
  }
  out << '(' << node.text;
  for (const TreeNode& child : node.children) {
    out << ' ';
    serialize_node(child, out);
  }
  out << ')';
}

void collect_types(const TreeNode& node, std::map<std::string, int>& out) {
  if (node.kind != TreeNode::Kind::kFunction) return;
  ++out[node.text];
  for (const TreeNode& child : node.children) collect_types(child, out);
}

TreeNode anonymize_node(const TreeNode& node) {
  if (node.kind == TreeNode::Kind::kLiteral) {
    return TreeNode::literal(kAnonPlaceholder);
  }
  TreeNode out = TreeNode::function(node.text);
  out.children.reserve(node.children.size());
  for (const TreeNode& child : node.children) {
    out.children.push_back(anonymize_node(child));
  }
  return out;
}

void tokenize_node(const TreeNode& node, std::vector<std::string>& out) {
  if (node.kind == TreeNode::Kind::kLiteral) {
    std::string quoted = "\"";
    for (char c : node.text) {
      if (c == '"' || c == '\\') quoted.push_back('\\');
      quoted.push_back(c);
    }
    quoted.push_back('"');
    out.push_back(std::move(quoted));
    return;
  }
  out.push_back("(");
  out.push_back(node.text);
  for (const TreeNode& child : node.children) tokenize_node(child, out);
  out.push_back(")");
}

}  // namespace

ParseTree parse_lispress(const std::string& text) {
  Cursor cur{text};
  cur.skip_ws();
  if (cur.done()) throw LispressError("empty input", 0);
  if (cur.peek() != '(') throw LispressError("expected '('", cur.pos);
  TreeNode root = parse_node(cur);
  cur.skip_ws();
  if (!cur.done()) throw LispressError("trailing input after tree", cur.pos);
  return ParseTree{std::move(root)};
}

std::string serialize_lispress(const ParseTree& tree) {
  std::ostringstream out;
  serialize_node(tree.root, out);
  return out.str();
}

std::map<std::string, int> function_types(const ParseTree& tree) {
  std::map<std::string, int> out;
  collect_types(tree.root, out);
  return out;
}

ParseTree anonymize(const ParseTree& tree) {
  return ParseTree{anonymize_node(tree.root)};
}

std::vector<std::string> lispress_tokens(const ParseTree& tree) {
  std::vector<std::string> out;
  tokenize_node(tree.root, out);
  return out;
}

}  // namespace dpsynth::corpus
