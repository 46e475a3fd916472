#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gotune {

// Reserved tokens. "<mask>" is what the tokenizer emits for the literal
// mask string and what sits at MinedExample::mask_index; "<oov>" is the
// model's bucket for tokens outside its vocabulary.
inline constexpr std::string_view kMaskToken = "<mask>";
inline constexpr std::string_view kOovToken = "<oov>";

// The placeholders a template may contain, besides [label].
inline constexpr std::string_view kInputPlaceholders[] = {
    "[input]", "[input1]", "[input2]", "[entity1]", "[entity2]"};
inline constexpr std::string_view kLabelPlaceholder = "[label]";

struct TaskSpec {
  std::string name;
  std::string template_text;
  std::vector<std::string> seed_labels;  // stored lowercase
  std::string task_kind;

  // Non-label placeholders present in the template, in template order.
  std::vector<std::string> placeholders() const;
};

struct SourceRef {
  int64_t shard = 0;   // position of the shard file in the sorted input list
  int64_t offset = 0;  // 0-based line index of the document within the shard
  friend bool operator==(const SourceRef&, const SourceRef&) = default;
};

struct MinedExample {
  std::vector<std::string> tokens;  // tokens[mask_index] == kMaskToken
  size_t mask_index = 0;
  std::string target;  // the token hidden behind the mask
  std::string seed;    // seed label the target is assigned to
  double weight = 1.0;
  SourceRef source;
  friend bool operator==(const MinedExample&, const MinedExample&) = default;
};

struct EvalExample {
  std::map<std::string, std::string> inputs;  // placeholder -> text
  std::string gold;                           // must be one of the task's seeds
};

struct ReportRow {
  std::string task;
  double accuracy = 0.0;  // correct / n, exactly
  size_t n = 0;
};

struct Report {
  std::vector<ReportRow> rows;
  uint64_t seed = 0;
  std::string config_digest;  // hex
};

// --- tokenization ---------------------------------------------------------

// Deterministic lowercase word-level tokens: maximal runs of letters/digits;
// every other non-whitespace character is its own token; the literal string
// "<mask>" (any case) becomes the reserved mask token. Total function.
std::vector<std::string> tokenize(std::string_view text);

// Join with single spaces; tokenize(detokenize(t)) == t.
std::string detokenize(const std::vector<std::string>& tokens);

// --- task specs -----------------------------------------------------------

// Parses and validates a task document (JSON). Throws ValidationError on
// missing [label], duplicate placeholders, bad seed lists, multi-token
// seeds, or malformed JSON.
TaskSpec parse_task_spec(const std::string& text);
TaskSpec load_task_spec(const std::filesystem::path& path);
std::string serialize_task_spec(const TaskSpec& spec);

// --- template rendering ----------------------------------------------------

using PlaceholderMap = std::map<std::string, std::string>;

// Substitutes every placeholder (label included) and tokenizes.
std::vector<std::string> render_filled(const TaskSpec& spec,
                                       const PlaceholderMap& inputs,
                                       const std::string& label);

// Same, but the label slot becomes the mask token; returns its position.
std::pair<std::vector<std::string>, size_t> render_masked(
    const TaskSpec& spec, const PlaceholderMap& inputs);

// --- serialized formats -----------------------------------------------------

std::string mined_example_to_json(const MinedExample& ex);
MinedExample mined_example_from_json(const std::string& line);
void save_mined_dataset(const std::filesystem::path& path,
                        const std::vector<MinedExample>& data);
std::vector<MinedExample> load_mined_dataset(const std::filesystem::path& path);

std::string eval_example_to_json(const EvalExample& ex);
EvalExample eval_example_from_json(const std::string& line);
std::vector<EvalExample> load_eval_examples(const std::filesystem::path& path);
void save_eval_examples(const std::filesystem::path& path,
                        const std::vector<EvalExample>& data);

// Tab-separated report: header "task\taccuracy\tn", accuracy with 4 decimal
// places, trailing "# seed=<u64>" and "# config=<hex>" comment lines.
std::string report_to_tsv(const Report& report);
Report report_from_tsv(const std::string& text);
void save_report(const std::filesystem::path& path, const Report& report);
Report load_report(const std::filesystem::path& path);

}  // namespace gotune
