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

#include "dpsynth/grammar.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "dpsynth/rng.hpp"

namespace dpsynth::corpus {
namespace {

// A slot value pairs a lispress fragment with the surface phrases that can
// realize it inside an utterance template.
struct SlotValue {
  std::string tree;
  std::vector<std::string> surfaces;
};

struct SlotKind {
  std::string placeholder;  // e.g. "{date}"
  std::vector<SlotValue> values;
};

// One production: a tree pattern plus 2-5 utterance templates sharing the
// same placeholders.
struct Frame {
  int domain;  // index into domain_inventory()
  std::string tree_pattern;
  std::vector<std::string> templates;
};

std::vector<SlotValue> make_date_values() {
  std::vector<SlotValue> v = {
      {"(Today)", {"today"}},
      {"(Tomorrow)", {"tomorrow"}},
      {"(Yesterday)", {"yesterday"}},
      {"(ThisWeekend)", {"this weekend", "over the weekend"}},
      {"(NextWeek)", {"next week"}},
  };
  for (const char* day : {"monday", "tuesday", "wednesday", "thursday",
                          "friday", "saturday", "sunday"}) {
    v.push_back({std::string("(DayOfWeek \"") + day + "\")",
                 {std::string("on ") + day, std::string("this ") + day}});
  }
  for (const char* date :
       {"january 3", "february 14", "march 5", "april 22", "may 1", "june 18",
        "july 4", "august 9", "september 30", "october 12", "november 7",
        "december 25", "march 17", "june 2", "october 31", "august 15"}) {
    v.push_back(
        {std::string("(DateLiteral \"") + date + "\")", {std::string("on ") + date}});
  }
  return v;
}

std::vector<SlotValue> make_clock_values() {
  std::vector<SlotValue> v = {{"(Noon)", {"at noon", "around noon"}}};
  for (const char* t : {"6 am", "7 am", "8 am", "9 am", "10 am", "11 am",
                        "1 pm", "2 pm", "3 pm", "4 pm", "5 pm", "6 pm", "7 pm",
                        "8 pm", "9 pm"}) {
    v.push_back({std::string("(TimeLiteral \"") + t + "\")",
                 {std::string("at ") + t, std::string("around ") + t}});
  }
  return v;
}

std::vector<SlotValue> make_time_values() {
  std::vector<SlotValue> v = {
      {"(Morning)", {"in the morning"}},
      {"(Afternoon)", {"in the afternoon"}},
      {"(Evening)", {"in the evening"}},
  };
  for (SlotValue& clock : make_clock_values()) v.push_back(std::move(clock));
  return v;
}

const std::vector<std::string>& city_list() {
  static const std::vector<std::string> cities = {
      "Seattle", "New York", "Boston",  "Paris",  "London", "Tokyo",
      "Austin",  "Denver",   "Chicago", "Berlin", "Madrid", "Oslo"};
  return cities;
}

std::vector<SlotValue> make_place_values() {
  std::vector<SlotValue> v;
  for (const std::string& city : city_list()) {
    v.push_back({"(Place \"" + city + "\")",
                 {"in " + city, "around " + city}});
  }
  v.push_back({"(Here)", {"here", "around here", "nearby"}});
  return v;
}

std::vector<SlotValue> make_dest_values() {
  std::vector<SlotValue> v;
  for (const char* spot :
       {"the airport", "the gym", "the office", "downtown", "the mall",
        "the library", "the train station", "the park"}) {
    v.push_back({std::string("(Place \"") + spot + "\")",
                 {std::string("to ") + spot}});
  }
  for (const std::string& city : city_list()) {
    v.push_back({"(Place \"" + city + "\")", {"to " + city}});
  }
  return v;
}

std::vector<SlotValue> make_person_values() {
  std::vector<SlotValue> v;
  for (const char* name : {"Alice", "Bob", "Carol", "David", "Emma", "Frank",
                           "Grace", "Henry", "Ivy", "Jack"}) {
    v.push_back({std::string("(Person \"") + name + "\")",
                 {std::string("with ") + name}});
  }
  v.push_back({"(Me)", {"for me", "just for me"}});
  return v;
}

std::vector<SlotValue> make_subject_values() {
  std::vector<SlotValue> v;
  for (const char* s :
       {"team meeting", "dentist appointment", "project review", "yoga class",
        "birthday party", "conference call", "doctor visit", "daily standup",
        "movie night", "book club", "piano lesson", "sales pitch"}) {
    v.push_back({std::string("\"") + s + "\"", {s}});
  }
  return v;
}

std::vector<SlotValue> make_task_values() {
  std::vector<SlotValue> v;
  for (const char* s :
       {"water the plants", "call mom", "pay the bills", "buy groceries",
        "send the report", "book the flights", "renew my passport",
        "charge my phone", "take out the trash", "feed the cat"}) {
    v.push_back({std::string("\"") + s + "\"", {s}});
  }
  return v;
}

std::vector<SlotValue> make_weather_kind_values() {
  std::vector<SlotValue> v;
  for (const char* k : {"rain", "snow", "wind", "sunshine", "fog", "humidity"}) {
    v.push_back({std::string("\"") + k + "\"", {k}});
  }
  return v;
}

const std::vector<SlotKind>& slot_kinds() {
  static const std::vector<SlotKind> kinds = {
      {"{date}", make_date_values()},     {"{time}", make_time_values()},
      {"{clock}", make_clock_values()},   {"{place}", make_place_values()},
      {"{dest}", make_dest_values()},     {"{person}", make_person_values()},
      {"{subject}", make_subject_values()}, {"{task}", make_task_values()},
      {"{wkind}", make_weather_kind_values()},
  };
  return kinds;
}

// Domains in Zipf rank order (rank 1 first). Weather sits at rank 6 so the
// e2e experiment drops a genuinely low-frequency mode.
const std::vector<std::string>& domains() {
  static const std::vector<std::string> names = {
      "FindEvent", "CreateEvent", "Reminder",    "Navigation",
      "UpdateEvent", "Weather",   "DeleteEvent", "SmallTalk"};
  return names;
}

int domain_index(const std::string& name) {
  const auto& d = domains();
  auto it = std::find(d.begin(), d.end(), name);
  return static_cast<int>(it - d.begin());
}

const std::vector<Frame>& frames() {
  static const std::vector<Frame> all = [] {
    std::vector<Frame> f;
    const int kFind = domain_index("FindEvent");
    const int kCreate = domain_index("CreateEvent");
    const int kRemind = domain_index("Reminder");
    const int kNav = domain_index("Navigation");
    const int kUpdate = domain_index("UpdateEvent");
    const int kWeather = domain_index("Weather");
    const int kDelete = domain_index("DeleteEvent");
    const int kTalk = domain_index("SmallTalk");

    // FindEvent
    f.push_back({kFind,
                 "(FindEvent (OnDate {date}))",
                 {"what is on my calendar {date}",
                  "do i have any events {date}",
                  "list my appointments {date}",
                  "what meetings do i have {date}"}});
    f.push_back({kFind,
                 "(FindEvent (EventSubject {subject}))",
                 {"when is the {subject}",
                  "find the {subject} on my calendar",
                  "look up the {subject}"}});
    f.push_back({kFind,
                 "(FindEvent (WithPerson {person}) (OnDate {date}))",
                 {"do i have anything scheduled {person} {date}",
                  "any meetings {person} {date}"}});

    // CreateEvent
    f.push_back({kCreate,
                 "(CreateEvent (EventSubject {subject}) (OnDate {date}) (AtTime {time}))",
                 {"schedule a {subject} {date} {time}",
                  "put a {subject} on my calendar {date} {time}",
                  "set up a {subject} {date} {time}",
                  "book a {subject} {date} {time}"}});
    f.push_back({kCreate,
                 "(CreateEvent (EventSubject {subject}) (WithPerson {person}) (OnDate {date}))",
                 {"create a {subject} {person} {date}",
                  "schedule a {subject} {person} {date}",
                  "add a {subject} {person} to my calendar {date}"}});
    f.push_back({kCreate,
                 "(CreateEvent (EventSubject {subject}) (AtTime {time}))",
                 {"make an appointment for a {subject} {time}",
                  "i need a {subject} {time}"}});

    // Reminder
    f.push_back({kRemind,
                 "(Reminder (TaskSubject {task}) (OnDate {date}))",
                 {"remind me to {task} {date}",
                  "set a reminder to {task} {date}",
                  "do not let me forget to {task} {date}"}});
    f.push_back({kRemind,
                 "(Reminder (TaskSubject {task}) (AtTime {time}))",
                 {"remind me to {task} {time}",
                  "set a reminder to {task} {time}"}});
    f.push_back({kRemind,
                 "(Reminder (TaskSubject {task}) (OnDate {date}) (AtTime {time}))",
                 {"remind me to {task} {date} {time}",
                  "set a reminder to {task} {date} {time}"}});

    // Navigation
    f.push_back({kNav,
                 "(Navigation (RouteTo {dest}))",
                 {"navigate {dest}",
                  "give me directions {dest}",
                  "how do i get {dest}",
                  "take me {dest}"}});
    f.push_back({kNav,
                 "(Navigation (TravelTime {dest}))",
                 {"how long will it take to drive {dest}",
                  "what is the travel time {dest}",
                  "how long is the trip {dest}"}});
    f.push_back({kNav,
                 "(Navigation (TrafficInfo {dest}))",
                 {"how is the traffic on the way {dest}",
                  "is there heavy traffic {dest}",
                  "check the traffic {dest}"}});

    // UpdateEvent
    f.push_back({kUpdate,
                 "(UpdateEvent (EventSubject {subject}) (NewEnd {clock}))",
                 {"make the {subject} end {clock}",
                  "change the {subject} to end {clock}",
                  "the {subject} should end {clock} instead"}});
    f.push_back({kUpdate,
                 "(UpdateEvent (EventSubject {subject}) (NewDate {date}))",
                 {"reschedule the {subject} {date}",
                  "move the {subject} {date}",
                  "push the {subject} {date}"}});

    // Weather
    f.push_back({kWeather,
                 "(Weather (AtPlace {place}) (OnDate {date}))",
                 {"what is the weather {place} {date}",
                  "how is the weather looking {place} {date}",
                  "tell me the forecast {place} {date}",
                  "what will the weather be like {place} {date}"}});
    f.push_back({kWeather,
                 "(Weather (WeatherKind {wkind}) (AtPlace {place}) (OnDate {date}))",
                 {"will there be {wkind} {place} {date}",
                  "is any {wkind} expected {place} {date}",
                  "any chance of {wkind} {place} {date}"}});
    f.push_back({kWeather,
                 "(Weather (AtPlace {place}))",
                 {"what is the weather like {place} right now",
                  "current weather {place} please",
                  "how warm is it {place}"}});

    // DeleteEvent
    f.push_back({kDelete,
                 "(DeleteEvent (EventSubject {subject}))",
                 {"cancel the {subject}",
                  "delete the {subject} from my calendar",
                  "please cancel my {subject}"}});
    f.push_back({kDelete,
                 "(DeleteEvent (EventSubject {subject}) (OnDate {date}))",
                 {"cancel the {subject} {date}",
                  "remove the {subject} scheduled {date}"}});

    // SmallTalk
    f.push_back({kTalk,
                 "(SmallTalk (Greeting))",
                 {"hello there", "hi how are you doing", "good morning to you"}});
    f.push_back({kTalk,
                 "(SmallTalk (Thanks))",
                 {"thank you so much", "thanks a lot", "that was helpful thanks"}});
    f.push_back({kTalk,
                 "(SmallTalk (Goodbye))",
                 {"goodbye for now", "see you later", "bye bye"}});
    f.push_back({kTalk,
                 "(SmallTalk (AskName))",
                 {"what is your name", "who are you anyway", "do you have a name"}});
    f.push_back({kTalk,
                 "(SmallTalk (AskMood))",
                 {"how are you today", "how is it going", "are you having a good day"}});
    return f;
  }();
  return all;
}

std::vector<std::vector<int>> frames_by_domain() {
  std::vector<std::vector<int>> by(domains().size());
  for (size_t i = 0; i < frames().size(); ++i) {
    by[frames()[i].domain].push_back(static_cast<int>(i));
  }
  return by;
}

// Placeholders of a pattern in order of appearance; indices into slot_kinds().
std::vector<int> placeholders_in(const std::string& pattern) {
  std::vector<std::pair<size_t, int>> hits;
  for (size_t k = 0; k < slot_kinds().size(); ++k) {
    size_t pos = pattern.find(slot_kinds()[k].placeholder);
    if (pos != std::string::npos) hits.emplace_back(pos, static_cast<int>(k));
  }
  std::sort(hits.begin(), hits.end());
  std::vector<int> out;
  for (auto& [pos, k] : hits) out.push_back(k);
  return out;
}

std::string substitute(std::string pattern, int kind, const std::string& text) {
  const std::string& ph = slot_kinds()[kind].placeholder;
  size_t pos = pattern.find(ph);
  if (pos == std::string::npos) return pattern;
  pattern.replace(pos, ph.size(), text);
  return pattern;
}

LabeledExample generate_example(int frame_idx, Rng& rng) {
  const Frame& frame = frames()[frame_idx];
  size_t variant = rng.index(frame.templates.size());
  std::string tree_text = frame.tree_pattern;
  std::string utt = frame.templates[variant];
  for (int kind : placeholders_in(frame.tree_pattern)) {
    const SlotKind& sk = slot_kinds()[kind];
    const SlotValue& val = sk.values[rng.index(sk.values.size())];
    const std::string& surface = val.surfaces[rng.index(val.surfaces.size())];
    tree_text = substitute(tree_text, kind, val.tree);
    utt = substitute(utt, kind, surface);
  }
  LabeledExample ex;
  ex.utterance = utt;
  ex.parse = parse_lispress(tree_text);
  ex.domain = domains()[frame.domain];
  ex.template_id = frame_idx * 16 + static_cast<int>(variant);
  return ex;
}

// -- inversion ---------------------------------------------------------------

struct TokenPattern {
  // Literal word, or placeholder (kind index >= 0).
  struct Piece {
    std::string word;
    int kind = -1;
  };
  std::vector<Piece> pieces;
};

TokenPattern compile_template(const std::string& tmpl) {
  TokenPattern out;
  for (const std::string& tok : whitespace_tokens(tmpl)) {
    int kind = -1;
    for (size_t k = 0; k < slot_kinds().size(); ++k) {
      if (tok == slot_kinds()[k].placeholder) kind = static_cast<int>(k);
    }
    out.pieces.push_back({tok, kind});
  }
  return out;
}

bool match_pieces(const TokenPattern& pat, size_t pi,
                  const std::vector<std::string>& toks, size_t ti,
                  std::map<int, int>& bound) {
  if (pi == pat.pieces.size()) return ti == toks.size();
  const auto& piece = pat.pieces[pi];
  if (piece.kind < 0) {
    if (ti < toks.size() && toks[ti] == piece.word) {
      return match_pieces(pat, pi + 1, toks, ti + 1, bound);
    }
    return false;
  }
  const SlotKind& sk = slot_kinds()[piece.kind];
  for (size_t vi = 0; vi < sk.values.size(); ++vi) {
    for (const std::string& surface : sk.values[vi].surfaces) {
      std::vector<std::string> stoks = whitespace_tokens(surface);
      if (ti + stoks.size() > toks.size()) continue;
      bool ok = true;
      for (size_t s = 0; s < stoks.size(); ++s) {
        if (toks[ti + s] != stoks[s]) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      bound[piece.kind] = static_cast<int>(vi);
      if (match_pieces(pat, pi + 1, toks, ti + stoks.size(), bound)) {
        return true;
      }
      bound.erase(piece.kind);
    }
  }
  return false;
}

}  // namespace

const std::vector<std::string>& domain_inventory() { return domains(); }

const std::vector<std::string>& function_inventory() {
  static const std::vector<std::string> inv = {
      "AskMood",     "AskName",   "AtPlace",     "AtTime",      "CreateEvent",
      "DateLiteral", "DayOfWeek", "DeleteEvent", "EventSubject", "Evening",
      "FindEvent",   "Goodbye",   "Greeting",    "Here",        "Me",
      "Morning",     "Navigation", "NewDate",    "NewEnd",      "NextWeek",
      "Noon",        "OnDate",    "Person",      "Place",       "Reminder",
      "RouteTo",     "SmallTalk", "TaskSubject", "Thanks",      "ThisWeekend",
      "TimeLiteral", "Today",     "Tomorrow",    "TrafficInfo", "TravelTime",
      "UpdateEvent", "Weather",   "WeatherKind", "WithPerson",  "Yesterday",
      "Afternoon"};
  static const std::vector<std::string> sorted_inv = [] {
    std::vector<std::string> v = inv;
    std::sort(v.begin(), v.end());
    return v;
  }();
  return sorted_inv;
}

std::vector<std::string> enumerate_production_labels() {
  std::set<std::string> labels;
  for (const Frame& frame : frames()) {
    std::string pattern = frame.tree_pattern;
    // Fill every placeholder with each of its values in turn so value-only
    // labels (Today, Noon, ...) are all reached.
    std::vector<int> kinds = placeholders_in(pattern);
    size_t max_values = 1;
    for (int k : kinds) {
      max_values = std::max(max_values, slot_kinds()[k].values.size());
    }
    for (size_t i = 0; i < max_values; ++i) {
      std::string text = pattern;
      for (int k : kinds) {
        const auto& vals = slot_kinds()[k].values;
        text = substitute(text, k, vals[std::min(i, vals.size() - 1)].tree);
      }
      for (auto& [label, n] : function_types(parse_lispress(text))) {
        labels.insert(label);
      }
    }
  }
  return std::vector<std::string>(labels.begin(), labels.end());
}

std::pair<Dataset, Dataset> gen_corpus(const GrammarConfig& cfg) {
  if (cfg.n_train < 1 || cfg.n_test < 1) {
    throw std::invalid_argument("gen_corpus: n_train and n_test must be >= 1");
  }
  if (cfg.mode_skew < 0) {
    throw std::invalid_argument("gen_corpus: mode_skew must be >= 0");
  }
  Rng rng(cfg.seed);
  std::vector<double> domain_weights(domains().size());
  for (size_t k = 0; k < domain_weights.size(); ++k) {
    domain_weights[k] = std::pow(static_cast<double>(k + 1), -cfg.mode_skew);
  }
  const auto by_domain = frames_by_domain();

  auto draw = [&](int n, const std::string& name, Dataset& out) {
    out.name = name;
    out.seed = cfg.seed;
    out.examples.reserve(n);
    for (int i = 0; i < n; ++i) {
      size_t d = rng.categorical(domain_weights);
      int frame_idx = by_domain[d][rng.index(by_domain[d].size())];
      out.examples.push_back(generate_example(frame_idx, rng));
    }
  };

  Dataset train, test;
  draw(cfg.n_train, "train", train);
  draw(cfg.n_test, "test", test);
  return {std::move(train), std::move(test)};
}

std::optional<ParseTree> invert_grammar_utterance(const std::string& utterance) {
  std::vector<std::string> toks = whitespace_tokens(utterance);
  for (const Frame& frame : frames()) {
    for (const std::string& tmpl : frame.templates) {
      TokenPattern pat = compile_template(tmpl);
      std::map<int, int> bound;
      if (!match_pieces(pat, 0, toks, 0, bound)) continue;
      std::string tree_text = frame.tree_pattern;
      for (auto& [kind, vi] : bound) {
        tree_text = substitute(tree_text, kind, slot_kinds()[kind].values[vi].tree);
      }
      return parse_lispress(tree_text);
    }
  }
  return std::nullopt;
}

}  // namespace dpsynth::corpus
