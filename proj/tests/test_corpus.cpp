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

#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "dpsynth/dataset.hpp"
#include "dpsynth/grammar.hpp"
#include "dpsynth/lispress.hpp"
#include "dpsynth/rng.hpp"
#include "dpsynth/transforms.hpp"

using namespace dpsynth;
using namespace dpsynth::corpus;

TEST_CASE("lispress parses nested function nodes and literals") {
  ParseTree t = parse_lispress("(Weather (Place \"Seattle\") (Today))");
  CHECK(t.root.text == "Weather");
  REQUIRE(t.root.children.size() == 2);
  CHECK(t.root.children[0].text == "Place");
  REQUIRE(t.root.children[0].children.size() == 1);
  CHECK(t.root.children[0].children[0].kind == TreeNode::Kind::kLiteral);
  CHECK(t.root.children[0].children[0].text == "Seattle");
  CHECK(t.root.children[1].text == "Today");
  CHECK(t.root.children[1].children.empty());
}

TEST_CASE("lispress parses a single node") {
  ParseTree t = parse_lispress("(A)");
  CHECK(t.root.text == "A");
  CHECK(t.root.children.empty());
}

TEST_CASE("lispress reports the byte offset of malformed input") {
  try {
    parse_lispress("(A (B");
    FAIL("expected parse error");
  } catch (const LispressError& e) {
    CHECK(e.offset() == 5);
  }
  CHECK_THROWS_AS(parse_lispress("()"), LispressError);
  CHECK_THROWS_AS(parse_lispress("(A \"unterminated)"), LispressError);
  CHECK_THROWS_AS(parse_lispress(""), LispressError);
  CHECK_THROWS_AS(parse_lispress("(A) extra"), LispressError);
}

TEST_CASE("lispress serialization is canonical and round-trips") {
  const std::string text = "(Weather (Place \"Seattle\") (Today))";
  CHECK(serialize_lispress(parse_lispress(text)) == text);
  CHECK(serialize_lispress(parse_lispress("(A)")) == "(A)");

  // Round-trip identity over random grammar trees.
  auto [train, test] = gen_corpus({1000, 1, 0.7, 99});
  for (const auto& ex : train.examples) {
    std::string s = serialize_lispress(*ex.parse);
    CHECK(parse_lispress(s) == *ex.parse);
  }
}

TEST_CASE("lispress token stream joins back into the same tree") {
  auto [train, test] = gen_corpus({200, 1, 1.0, 5});
  for (const auto& ex : train.examples) {
    std::string joined;
    for (const std::string& tok : lispress_tokens(*ex.parse)) {
      if (!joined.empty()) joined += ' ';
      joined += tok;
    }
    CHECK(parse_lispress(joined) == *ex.parse);
  }
}

TEST_CASE("function_types counts labels in pre-order, literals excluded") {
  std::map<std::string, int> types =
      function_types(parse_lispress("(Weather (Place \"Seattle\") (Today))"));
  std::map<std::string, int> expect = {{"Weather", 1}, {"Place", 1}, {"Today", 1}};
  CHECK(types == expect);

  std::map<std::string, int> dup = function_types(parse_lispress("(A (A))"));
  CHECK(dup == std::map<std::string, int>{{"A", 2}});
}

TEST_CASE("anonymize replaces every literal and nothing else") {
  ParseTree t = parse_lispress("(Weather (Place \"Seattle\"))");
  ParseTree anon = anonymize(t);
  CHECK(serialize_lispress(anon) == "(Weather (Place \"__STR__\"))");

  ParseTree no_lit = parse_lispress("(SmallTalk (Greeting))");
  CHECK(anonymize(no_lit) == no_lit);

  ParseTree other = parse_lispress("(Weather (Place \"Oslo\"))");
  CHECK(anonymize(t) == anonymize(other));
  CHECK(anonymize(anon) == anon);  // idempotent
}

TEST_CASE("gen_corpus is deterministic and seed-sensitive") {
  GrammarConfig cfg;
  cfg.n_train = 500;
  cfg.n_test = 100;
  cfg.seed = 7;
  auto [a_train, a_test] = gen_corpus(cfg);
  auto [b_train, b_test] = gen_corpus(cfg);
  REQUIRE(a_train.size() == b_train.size());
  for (size_t i = 0; i < a_train.size(); ++i) {
    CHECK(a_train.examples[i].utterance == b_train.examples[i].utterance);
    CHECK(*a_train.examples[i].parse == *b_train.examples[i].parse);
    CHECK(*a_train.examples[i].domain == *b_train.examples[i].domain);
  }

  cfg.seed = 8;
  auto [c_train, c_test] = gen_corpus(cfg);
  std::multiset<std::string> a_utts, c_utts;
  for (const auto& ex : a_train.examples) a_utts.insert(ex.utterance);
  for (const auto& ex : c_train.examples) c_utts.insert(ex.utterance);
  CHECK(a_utts != c_utts);
}

TEST_CASE("gen_corpus rejects invalid configs") {
  CHECK_THROWS(gen_corpus({0, 100, 1.0, 7}));
  CHECK_THROWS(gen_corpus({100, 0, 1.0, 7}));
  CHECK_THROWS(gen_corpus({100, 100, -1.0, 7}));
}

TEST_CASE("uniform skew gives each domain frequency 0.125 within 0.02") {
  GrammarConfig cfg;
  cfg.n_train = 80000;
  cfg.n_test = 1;
  cfg.mode_skew = 0.0;
  cfg.seed = 11;
  auto [train, test] = gen_corpus(cfg);
  std::map<std::string, int> counts;
  for (const auto& ex : train.examples) ++counts[*ex.domain];
  CHECK(counts.size() == 8);
  for (const auto& [domain, n] : counts) {
    double freq = double(n) / cfg.n_train;
    CHECK(freq == doctest::Approx(0.125).epsilon(0.16));  // 0.125 +- 0.02
    CHECK(std::abs(freq - 0.125) <= 0.02);
  }
}

TEST_CASE("emitted function inventory equals the declared inventory") {
  // Oracle: enumerate the grammar's productions directly.
  std::vector<std::string> enumerated = enumerate_production_labels();
  CHECK(enumerated == function_inventory());

  GrammarConfig cfg;
  cfg.n_train = 20000;
  cfg.n_test = 1;
  cfg.seed = 7;
  auto [train, test] = gen_corpus(cfg);
  std::set<std::string> emitted;
  for (const auto& ex : train.examples) {
    for (const auto& [label, n] : function_types(*ex.parse)) emitted.insert(label);
  }
  std::set<std::string> declared(function_inventory().begin(),
                                 function_inventory().end());
  CHECK(emitted == declared);
  CHECK(declared.size() >= 25);
  CHECK(declared.size() <= 60);
}

TEST_CASE("grammar inversion recovers the gold tree of every generated utterance") {
  GrammarConfig cfg;
  cfg.n_train = 20000;
  cfg.n_test = 2000;
  cfg.seed = 13;
  auto [train, test] = gen_corpus(cfg);
  for (const auto& ex : train.examples) {
    auto inverted = invert_grammar_utterance(ex.utterance);
    REQUIRE(inverted.has_value());
    CHECK(*inverted == *ex.parse);
  }
  for (const auto& ex : test.examples) {
    auto inverted = invert_grammar_utterance(ex.utterance);
    REQUIRE(inverted.has_value());
    CHECK(*inverted == *ex.parse);
  }
  CHECK_FALSE(invert_grammar_utterance("entirely out of grammar words").has_value());
}

TEST_CASE("jsonl round-trips datasets and rejects malformed lines") {
  auto [train, test] = gen_corpus({50, 1, 1.0, 3});
  const std::string path = "test_corpus_tmp.jsonl";
  write_jsonl(train, path);
  Dataset back = read_jsonl(path);
  REQUIRE(back.size() == train.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back.examples[i].utterance == train.examples[i].utterance);
    CHECK(*back.examples[i].parse == *train.examples[i].parse);
    CHECK(*back.examples[i].domain == *train.examples[i].domain);
  }
  std::remove(path.c_str());

  const std::string bad = "test_corpus_bad.jsonl";
  {
    FILE* f = fopen(bad.c_str(), "w");
    fputs("{\"utterance\": \"hi\", \"parse\": null, \"domain\": null}\n", f);
    fputs("not json\n", f);
    fclose(f);
  }
  CHECK_THROWS_WITH_AS(read_jsonl(bad),
                       doctest::Contains(":2:"), std::runtime_error);
  std::remove(bad.c_str());
}

TEST_CASE("partition_e2e removes the missing label from the public side only") {
  GrammarConfig cfg;
  cfg.n_train = 20000;
  cfg.n_test = 1;
  cfg.mode_skew = 1.0;
  cfg.seed = 17;
  auto [train, test] = gen_corpus(cfg);
  auto [pub, priv] = partition_e2e(train, "Weather", 0.1, 23);

  int weather_in_train = 0;
  for (const auto& ex : train.examples) {
    if (function_types(*ex.parse).count("Weather")) ++weather_in_train;
  }

  CHECK(pub.size() + priv.size() <= train.size());
  CHECK(priv.size() == train.size() - size_t(0.1 * train.size()));
  CHECK(pub.size() >= size_t(0.1 * train.size()) - size_t(weather_in_train));
  for (const auto& ex : pub.examples) {
    REQUIRE(ex.parse.has_value());
    CHECK(function_types(*ex.parse).count("Weather") == 0);
  }
  for (const auto& ex : priv.examples) {
    CHECK_FALSE(ex.parse.has_value());
    CHECK_FALSE(ex.domain.has_value());
    CHECK_FALSE(ex.utterance.empty());
  }

  // The pre-strip private side plus the pre-removal subsample partition the
  // corpus; check via utterance multisets.
  std::multiset<std::string> train_utts, out_utts;
  for (const auto& ex : train.examples) train_utts.insert(ex.utterance);
  for (const auto& ex : priv.examples) out_utts.insert(ex.utterance);
  for (const auto& ex : pub.examples) out_utts.insert(ex.utterance);
  for (const auto& utt : out_utts) CHECK(train_utts.count(utt) > 0);

  // Weather frequency on the private side matches the corpus frequency;
  // counted through the independent grammar-inversion oracle since parses
  // are stripped.
  int weather_in_priv = 0;
  for (const auto& ex : priv.examples) {
    auto tree = invert_grammar_utterance(ex.utterance);
    REQUIRE(tree.has_value());
    if (function_types(*tree).count("Weather")) ++weather_in_priv;
  }
  double train_freq = double(weather_in_train) / train.size();
  double priv_freq = double(weather_in_priv) / priv.size();
  CHECK(std::abs(train_freq - priv_freq) < 0.01);

  // Determinism.
  auto [pub2, priv2] = partition_e2e(train, "Weather", 0.1, 23);
  CHECK(pub2.size() == pub.size());
  CHECK(priv2.size() == priv.size());
  for (size_t i = 0; i < priv.size(); ++i) {
    CHECK(priv2.examples[i].utterance == priv.examples[i].utterance);
  }

  CHECK_THROWS(partition_e2e(train, "NoSuchLabel", 0.1, 23));
  CHECK_THROWS(partition_e2e(train, "Weather", 0.0, 23));
  CHECK_THROWS(partition_e2e(train, "Weather", 1.0, 23));
}

TEST_CASE("restrict_modes keeps exactly the examples containing the label") {
  GrammarConfig cfg;
  cfg.n_train = 16000;
  cfg.n_test = 1;
  cfg.mode_skew = 0.0;
  cfg.seed = 29;
  auto [train, test] = gen_corpus(cfg);
  Dataset weather = restrict_modes(train, "Weather");
  double freq = double(weather.size()) / train.size();
  CHECK(std::abs(freq - 0.125) < 0.02);
  for (const auto& ex : weather.examples) {
    CHECK(function_types(*ex.parse).count("Weather") == 1);
  }
  Dataset again = restrict_modes(weather, "Weather");
  CHECK(again.size() == weather.size());

  CHECK_THROWS(restrict_modes(train, "NoSuchLabel"));
}

TEST_CASE("shuffle_pairs permutes parses and keeps both multisets") {
  // Unique parse per example so value equality detects permutation fixed
  // points exactly.
  Dataset data;
  data.name = "unique";
  for (int i = 0; i < 10000; ++i) {
    LabeledExample ex;
    ex.utterance = "utterance " + std::to_string(i);
    ex.parse = parse_lispress("(A \"" + std::to_string(i) + "\")");
    data.examples.push_back(std::move(ex));
  }
  Dataset shuf = shuffle_pairs(data, 31);
  REQUIRE(shuf.size() == data.size());

  std::multiset<std::string> before, after;
  for (const auto& ex : data.examples) before.insert(serialize_lispress(*ex.parse));
  for (const auto& ex : shuf.examples) after.insert(serialize_lispress(*ex.parse));
  CHECK(before == after);

  int fixed = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(shuf.examples[i].utterance == data.examples[i].utterance);
    if (*shuf.examples[i].parse == *data.examples[i].parse) ++fixed;
  }
  CHECK(double(fixed) / data.size() <= 0.01);

  Dataset shuf2 = shuffle_pairs(data, 31);
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(*shuf2.examples[i].parse == *shuf.examples[i].parse);
  }

  Dataset missing;
  missing.examples.push_back({"no parse here", std::nullopt, std::nullopt});
  CHECK_THROWS(shuffle_pairs(missing, 1));
}
