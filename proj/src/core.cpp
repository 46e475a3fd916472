#include "gotune/core.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gotune/errors.hpp"

namespace gotune {

namespace {

using ordered_json = nlohmann::ordered_json;

bool is_ascii_alnum(uint32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= '0' && cp <= '9') ||
         (cp >= 'A' && cp <= 'Z');
}

bool is_unicode_space(uint32_t cp) {
  switch (cp) {
    case ' ': case '\t': case '\n': case '\r': case '\f': case '\v':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Letters/digits for token purposes: ASCII alphanumerics, and any non-ASCII
// code point that is not whitespace. Good enough for a word-level tokenizer
// without dragging in Unicode tables.
bool is_word_cp(uint32_t cp) {
  if (cp < 0x80) return is_ascii_alnum(cp);
  return !is_unicode_space(cp);
}

// Decodes one UTF-8 code point at s[i]; malformed bytes are consumed one at
// a time so the function stays total.
size_t decode_utf8(std::string_view s, size_t i, uint32_t& cp) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    cp = c;
    return 1;
  }
  size_t len = 0;
  if ((c & 0xE0) == 0xC0) {
    cp = c & 0x1F;
    len = 2;
  } else if ((c & 0xF0) == 0xE0) {
    cp = c & 0x0F;
    len = 3;
  } else if ((c & 0xF8) == 0xF0) {
    cp = c & 0x07;
    len = 4;
  } else {
    cp = c;
    return 1;
  }
  if (i + len > s.size()) {
    cp = c;
    return 1;
  }
  for (size_t k = 1; k < len; ++k) {
    unsigned char cont = static_cast<unsigned char>(s[i + k]);
    if ((cont & 0xC0) != 0x80) {
      cp = c;
      return 1;
    }
    cp = (cp << 6) | (cont & 0x3F);
  }
  return len;
}

std::string ascii_lower(std::string_view text) {
  std::string s(text);
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
  }
  return s;
}

struct Segment {
  std::string text;      // literal text or placeholder name
  bool placeholder = false;
};

// Splits a template into literal and placeholder segments. Only the known
// placeholder strings are recognized; other bracketed text stays literal.
std::vector<Segment> split_template(const std::string& tmpl) {
  std::vector<Segment> segs;
  std::string literal;
  size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '[') {
      std::string_view rest = std::string_view(tmpl).substr(i);
      std::string_view matched;
      if (rest.starts_with(kLabelPlaceholder)) {
        matched = kLabelPlaceholder;
      } else {
        for (std::string_view ph : kInputPlaceholders) {
          if (rest.starts_with(ph)) {
            matched = ph;
            break;
          }
        }
      }
      if (!matched.empty()) {
        if (!literal.empty()) {
          segs.push_back({std::move(literal), false});
          literal.clear();
        }
        segs.push_back({std::string(matched), true});
        i += matched.size();
        continue;
      }
    }
    literal.push_back(tmpl[i]);
    ++i;
  }
  if (!literal.empty()) segs.push_back({std::move(literal), false});
  return segs;
}

// True when the code point just before/after the placeholder would fuse with
// a substituted label token.
bool word_char_on_edge(const std::string& text, bool leading_edge) {
  if (text.empty()) return false;
  if (leading_edge) {
    uint32_t cp = 0;
    decode_utf8(text, 0, cp);
    return is_word_cp(cp);
  }
  // Walk code points to find the last one.
  size_t i = 0;
  uint32_t cp = 0;
  while (i < text.size()) {
    size_t len = decode_utf8(text, i, cp);
    i += len;
  }
  return is_word_cp(cp);
}

ordered_json parse_json_or_throw(const std::string& text, const char* what) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw ValidationError(std::string("malformed ") + what + ": invalid JSON");
  }
  return j;
}

std::string require_string(const ordered_json& j, const char* key,
                           const char* what) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw ValidationError(std::string("malformed ") + what +
                          ": missing string field \"" + key + "\"");
  }
  return j.at(key).get<std::string>();
}

}  // namespace

std::vector<std::string> TaskSpec::placeholders() const {
  std::vector<std::string> out;
  for (const Segment& seg : split_template(template_text)) {
    if (seg.placeholder && seg.text != kLabelPlaceholder) out.push_back(seg.text);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::string s = ascii_lower(text);
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  size_t i = 0;
  while (i < s.size()) {
    if (std::string_view(s).substr(i).starts_with(kMaskToken)) {
      flush();
      out.emplace_back(kMaskToken);
      i += kMaskToken.size();
      continue;
    }
    uint32_t cp = 0;
    size_t len = decode_utf8(s, i, cp);
    if (is_unicode_space(cp)) {
      flush();
    } else if (is_word_cp(cp)) {
      word.append(s, i, len);
    } else {
      flush();
      out.push_back(s.substr(i, len));
    }
    i += len;
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

TaskSpec parse_task_spec(const std::string& text) {
  ordered_json j = parse_json_or_throw(text, "task document");
  if (!j.is_object()) {
    throw ValidationError("malformed task document: expected a JSON object");
  }
  TaskSpec spec;
  spec.name = require_string(j, "name", "task document");
  spec.template_text = require_string(j, "template", "task document");
  spec.task_kind = require_string(j, "task_kind", "task document");
  if (spec.name.empty()) {
    throw ValidationError("malformed task document: empty task name");
  }
  if (!j.contains("seed_labels") || !j.at("seed_labels").is_array()) {
    throw ValidationError(
        "malformed task document: missing array field \"seed_labels\"");
  }
  for (const auto& v : j.at("seed_labels")) {
    if (!v.is_string()) {
      throw ValidationError("malformed task document: seed labels must be strings");
    }
    spec.seed_labels.push_back(ascii_lower(v.get<std::string>()));
  }

  // Placeholder checks.
  auto segs = split_template(spec.template_text);
  size_t label_count = 0;
  std::set<std::string> seen;
  for (size_t si = 0; si < segs.size(); ++si) {
    const Segment& seg = segs[si];
    if (!seg.placeholder) continue;
    if (seg.text == kLabelPlaceholder) {
      ++label_count;
      // A letter/digit butted against [label] would fuse with the seed token
      // and break the masked/filled correspondence.
      if (si > 0 && !segs[si - 1].placeholder &&
          word_char_on_edge(segs[si - 1].text, /*leading_edge=*/false)) {
        throw ValidationError("label placeholder must not touch a letter or digit");
      }
      if (si + 1 < segs.size() && !segs[si + 1].placeholder &&
          word_char_on_edge(segs[si + 1].text, /*leading_edge=*/true)) {
        throw ValidationError("label placeholder must not touch a letter or digit");
      }
      if (si > 0 && segs[si - 1].placeholder) {
        throw ValidationError("label placeholder must not touch another placeholder");
      }
    }
    if (!seen.insert(seg.text).second) {
      throw ValidationError("duplicate placeholder " + seg.text + " in template");
    }
  }
  if (label_count == 0) throw ValidationError("missing label placeholder");

  // Seed list checks.
  if (spec.seed_labels.empty()) throw ValidationError("empty seed list");
  if (spec.seed_labels.size() < 2) {
    throw ValidationError("need at least 2 seed labels");
  }
  std::set<std::string> seed_set;
  for (const std::string& seed : spec.seed_labels) {
    if (seed.empty()) throw ValidationError("empty seed label");
    if (!seed_set.insert(seed).second) {
      throw ValidationError("duplicate seed label \"" + seed + "\"");
    }
    auto toks = tokenize(seed);
    if (toks.size() != 1) {
      throw ValidationError("seed label \"" + seed +
                            "\" is not a single token (got " +
                            std::to_string(toks.size()) + ")");
    }
    if (toks[0] == kMaskToken) {
      throw ValidationError("seed label \"" + seed + "\" is the reserved mask token");
    }
    if (toks[0] != seed) {
      // e.g. a seed wrapped in punctuation; keep keys canonical.
      throw ValidationError("seed label \"" + seed + "\" is not in token form");
    }
  }
  return spec;
}

TaskSpec load_task_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open task file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_task_spec(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string serialize_task_spec(const TaskSpec& spec) {
  ordered_json j;
  j["name"] = spec.name;
  j["template"] = spec.template_text;
  j["seed_labels"] = spec.seed_labels;
  j["task_kind"] = spec.task_kind;
  return j.dump();
}

namespace {

// Substitutes non-label placeholders; returns the text split at the label
// slot so callers can drop in either a seed or the mask literal.
std::pair<std::string, std::string> render_around_label(
    const TaskSpec& spec, const PlaceholderMap& inputs) {
  std::string left, right;
  std::string* cur = &left;
  for (const Segment& seg : split_template(spec.template_text)) {
    if (!seg.placeholder) {
      *cur += seg.text;
      continue;
    }
    if (seg.text == kLabelPlaceholder) {
      cur = &right;
      continue;
    }
    auto it = inputs.find(seg.text);
    if (it == inputs.end()) {
      throw ValidationError("missing value for placeholder " + seg.text);
    }
    *cur += it->second;
  }
  return {std::move(left), std::move(right)};
}

}  // namespace

std::vector<std::string> render_filled(const TaskSpec& spec,
                                       const PlaceholderMap& inputs,
                                       const std::string& label) {
  if (std::find(spec.seed_labels.begin(), spec.seed_labels.end(), label) ==
      spec.seed_labels.end()) {
    throw ValidationError("unknown label \"" + label + "\" for task " + spec.name);
  }
  auto [left, right] = render_around_label(spec, inputs);
  return tokenize(left + label + right);
}

std::pair<std::vector<std::string>, size_t> render_masked(
    const TaskSpec& spec, const PlaceholderMap& inputs) {
  auto [left, right] = render_around_label(spec, inputs);
  size_t mask_index = tokenize(left).size();
  std::vector<std::string> tokens =
      tokenize(left + std::string(kMaskToken) + right);
  if (mask_index >= tokens.size() || tokens[mask_index] != kMaskToken) {
    throw std::logic_error("mask position lost during rendering");
  }
  return {std::move(tokens), mask_index};
}

// --- serialization ----------------------------------------------------------

std::string mined_example_to_json(const MinedExample& ex) {
  ordered_json j;
  j["tokens"] = ex.tokens;
  j["mask_index"] = ex.mask_index;
  j["target"] = ex.target;
  j["seed"] = ex.seed;
  j["weight"] = ex.weight;
  j["source"] = ordered_json{{"shard", ex.source.shard}, {"offset", ex.source.offset}};
  return j.dump();
}

MinedExample mined_example_from_json(const std::string& line) {
  ordered_json j = parse_json_or_throw(line, "mined example");
  MinedExample ex;
  if (!j.contains("tokens") || !j.at("tokens").is_array()) {
    throw ValidationError("malformed mined example: missing tokens");
  }
  try {
    for (const auto& t : j.at("tokens")) ex.tokens.push_back(t.get<std::string>());
    ex.mask_index = j.at("mask_index").get<size_t>();
    ex.target = require_string(j, "target", "mined example");
    ex.seed = require_string(j, "seed", "mined example");
    ex.weight = j.at("weight").get<double>();
    ex.source.shard = j.at("source").at("shard").get<int64_t>();
    ex.source.offset = j.at("source").at("offset").get<int64_t>();
  } catch (const ordered_json::exception& e) {
    throw ValidationError(std::string("malformed mined example: ") + e.what());
  }
  if (ex.mask_index >= ex.tokens.size()) {
    throw ValidationError("malformed mined example: mask_index out of range");
  }
  if (ex.tokens[ex.mask_index] != kMaskToken) {
    throw ValidationError("malformed mined example: mask_index does not point at " +
                          std::string(kMaskToken));
  }
  if (ex.weight < 0.0) {
    throw ValidationError("malformed mined example: negative weight");
  }
  auto target_tokens = tokenize(ex.target);
  if (target_tokens.size() != 1 || target_tokens[0] != ex.target) {
    throw ValidationError("malformed mined example: target \"" + ex.target +
                          "\" is not a single token");
  }
  return ex;
}

void save_mined_dataset(const std::filesystem::path& path,
                        const std::vector<MinedExample>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write dataset: " + path.string());
  for (const MinedExample& ex : data) out << mined_example_to_json(ex) << '\n';
}

std::vector<MinedExample> load_mined_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset: " + path.string());
  std::vector<MinedExample> data;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      data.push_back(mined_example_from_json(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                            ": " + e.what());
    }
  }
  return data;
}

std::string eval_example_to_json(const EvalExample& ex) {
  ordered_json j;
  ordered_json inputs = ordered_json::object();
  for (const auto& [k, v] : ex.inputs) inputs[k] = v;
  j["inputs"] = inputs;
  j["gold"] = ex.gold;
  return j.dump();
}

EvalExample eval_example_from_json(const std::string& line) {
  ordered_json j = parse_json_or_throw(line, "eval example");
  EvalExample ex;
  if (!j.contains("inputs") || !j.at("inputs").is_object()) {
    throw ValidationError("malformed eval example: missing inputs object");
  }
  try {
    for (const auto& [k, v] : j.at("inputs").items()) {
      ex.inputs[k] = v.get<std::string>();
    }
  } catch (const ordered_json::exception& e) {
    throw ValidationError(std::string("malformed eval example: ") + e.what());
  }
  ex.gold = require_string(j, "gold", "eval example");
  return ex;
}

std::vector<EvalExample> load_eval_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open eval data: " + path.string());
  std::vector<EvalExample> data;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      data.push_back(eval_example_from_json(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + " line " + std::to_string(lineno) +
                            ": " + e.what());
    }
  }
  return data;
}

void save_eval_examples(const std::filesystem::path& path,
                        const std::vector<EvalExample>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write eval data: " + path.string());
  for (const EvalExample& ex : data) out << eval_example_to_json(ex) << '\n';
}

std::string report_to_tsv(const Report& report) {
  std::string out = "task\taccuracy\tn\n";
  char buf[64];
  for (const ReportRow& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.4f", row.accuracy);
    out += row.task;
    out += '\t';
    out += buf;
    out += '\t';
    out += std::to_string(row.n);
    out += '\n';
  }
  out += "# seed=" + std::to_string(report.seed) + "\n";
  out += "# config=" + report.config_digest + "\n";
  return out;
}

Report report_from_tsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "task\taccuracy\tn") {
    throw ValidationError("malformed report: bad header line");
  }
  Report report;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.starts_with("# seed=")) {
      report.seed = std::stoull(line.substr(7));
      continue;
    }
    if (line.starts_with("# config=")) {
      report.config_digest = line.substr(9);
      continue;
    }
    if (line.starts_with("#")) continue;
    size_t t1 = line.find('\t');
    size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw ValidationError("malformed report line " + std::to_string(lineno));
    }
    ReportRow row;
    row.task = line.substr(0, t1);
    row.accuracy = std::stod(line.substr(t1 + 1, t2 - t1 - 1));
    row.n = std::stoull(line.substr(t2 + 1));
    report.rows.push_back(std::move(row));
  }
  return report;
}

void save_report(const std::filesystem::path& path, const Report& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write report: " + path.string());
  out << report_to_tsv(report);
}

Report load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open report: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return report_from_tsv(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace gotune
