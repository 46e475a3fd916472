#include "gotune/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "gotune/errors.hpp"
#include "gotune/rng.hpp"

namespace gotune {

namespace {

constexpr size_t kDim = 16;

struct ClusterWords {
  std::string seed;
  std::vector<std::string> faithful;
  std::vector<std::string> distractors;
  std::vector<std::string> context;
};

struct TaskWords {
  std::string name;
  std::string task_kind;
  std::string template_text;
  ClusterWords sides[2];
};

TaskWords sentiment_words() {
  TaskWords t;
  t.name = "sentiment";
  t.task_kind = "sentiment classification";
  t.template_text = "Sentiment of the review [input] is [label]";
  t.sides[0] = {"positive",
                {"good", "great", "nice", "excellent", "pleasant", "lovely",
                 "splendid", "enjoyable"},
                {"decent", "fine", "satisfactory", "okay", "modest",
                 "passable", "tolerable", "fair", "average", "ordinary",
                 "plain", "usual", "standard", "typical", "common", "routine"},
                {"smiling", "friendly", "delicious", "charming", "cozy",
                 "sparkling", "helpful", "cheerful", "generous", "spotless"}};
  t.sides[1] = {"negative",
                {"bad", "terrible", "awful", "horrible", "nasty", "dreadful",
                 "rotten", "miserable"},
                {"sour", "shame", "minus", "bland", "stale", "mediocre",
                 "shabby", "lousy", "dreary", "weary", "faded", "worn",
                 "tired", "drab", "dim", "gray"},
                {"dirty", "rude", "broken", "noisy", "smelly", "cramped",
                 "slow", "gloomy", "leaking", "crowded"}};
  return t;
}

TaskWords temperature_words() {
  TaskWords t;
  t.name = "temperature";
  t.task_kind = "weather classification";
  t.template_text = "The weather in the report [input] felt [label]";
  t.sides[0] = {"warm",
                {"hot", "heated", "sunny", "mild", "balmy", "toasty",
                 "tropical", "humid"},
                {"lukewarm", "tepid", "muggy", "damp", "stuffy", "clammy",
                 "sticky", "dewy", "hazy", "misty", "moist", "soggy",
                 "sultry", "thick", "heavy", "close"},
                {"sunshine", "sweating", "blazing", "shorts", "lemonade",
                 "sizzling", "parched", "sunburn"}};
  t.sides[1] = {"cold",
                {"chilly", "icy", "frosty", "freezing", "wintry", "frigid",
                 "snowy", "arctic"},
                {"brisk", "nippy", "raw", "bracing", "biting", "harsh",
                 "stark", "bitter", "keen", "sharp", "thin", "windy",
                 "gusty", "breezy", "blowy", "drafty"},
                {"snowflakes", "shivering", "mittens", "frostbite", "sleet",
                 "blizzard", "scarf", "icicles"}};
  return t;
}

const std::vector<std::string>& support_words() {
  static const std::vector<std::string> words = {
      "the",      "a",       "was",     "is",      "were",   "and",
      "but",      "it",      "very",    "quite",   "rather", "really",
      "so",       "this",    "that",    "day",     "place",  "time",
      "thing",    "felt",    "stayed",  "seemed",  "kept",   "looked",
      "turned",   "everyone", "everything", "staff", "service", "room",
      "meal",     "trip",    "view",    "visit",   "weather", "morning",
      "evening",  "window",  "garden",  "street",  "market", "bus",
      "river",    "table",   "door",    "near",    "arrived", "waited",
      "stood",    "because", "sentiment", "of",    "review", "report",
      "in"};
  return words;
}

const std::vector<std::string>& subject_nouns() {
  static const std::vector<std::string> words = {
      "meal", "place", "room", "service", "view", "trip", "visit", "day"};
  return words;
}

const std::vector<std::string>& neutral_nouns() {
  static const std::vector<std::string> words = {
      "bus", "market", "street", "window", "garden", "river", "table", "door"};
  return words;
}

std::vector<double> random_unit(CounterRng& rng, size_t dim) {
  // Box-Muller from counter draws; normalized.
  std::vector<double> v(dim);
  for (size_t i = 0; i < dim; i += 2) {
    double u1 = rng.next_double();
    double u2 = rng.next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * M_PI * u2);
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> gram_schmidt_unit(CounterRng& rng,
                                      const std::vector<std::vector<double>>& basis,
                                      size_t dim) {
  std::vector<double> v = random_unit(rng, dim);
  for (const auto& b : basis) {
    double proj = 0.0;
    for (size_t i = 0; i < dim; ++i) proj += v[i] * b[i];
    for (size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

class EmbeddingBuilder {
 public:
  explicit EmbeddingBuilder(size_t dim) : dim_(dim) {}

  void add(const std::string& token, const std::vector<double>& vec) {
    if (index_.count(token)) return;  // shared support words appear once
    index_.insert(token);
    tokens_.push_back(token);
    for (size_t i = 0; i < dim_; ++i) {
      matrix_.push_back(static_cast<float>(vec[i]));
    }
  }

  LabelDatastore build() {
    return LabelDatastore::build(std::move(tokens_), std::move(matrix_), dim_);
  }

 private:
  size_t dim_;
  std::vector<std::string> tokens_;
  std::vector<float> matrix_;
  std::set<std::string> index_;
};

std::vector<double> scaled_plus_noise(const std::vector<double>& dir,
                                      double scale, double noise_scale,
                                      CounterRng& rng) {
  std::vector<double> noise = random_unit(rng, dir.size());
  std::vector<double> v(dir.size());
  for (size_t i = 0; i < dir.size(); ++i) {
    v[i] = scale * dir[i] + noise_scale * noise[i];
  }
  return v;
}

template <typename T>
const T& pick(const std::vector<T>& v, CounterRng& rng) {
  return v[static_cast<size_t>(rng.next_below(v.size()))];
}

// One corpus sentence holding exactly one target token and polarity context.
std::string target_sentence(const std::string& target,
                            const ClusterWords& context_side, CounterRng& rng) {
  const std::string& noun = pick(subject_nouns(), rng);
  const std::string& ctx1 = pick(context_side.context, rng);
  const std::string& ctx2 = pick(context_side.context, rng);
  switch (rng.next_below(3)) {
    case 0:
      return "the " + noun + " was " + target + " and everything looked " +
             ctx1 + ".";
    case 1:
      return "the " + noun + " seemed " + target + " because everyone kept " +
             ctx1 + ".";
    default:
      return "the " + noun + " felt " + target + " and the " + ctx1 +
             " evening stayed " + ctx2 + ".";
  }
}

std::string neutral_sentence(CounterRng& rng) {
  const std::string& a = pick(neutral_nouns(), rng);
  const std::string& b = pick(neutral_nouns(), rng);
  switch (rng.next_below(2)) {
    case 0:
      return "the " + a + " stood near the " + b + " and everyone waited.";
    default:
      return "it was that time of the morning near the " + a + ".";
  }
}

std::string eval_input(const ClusterWords& side, CounterRng& rng) {
  const std::string& noun = pick(subject_nouns(), rng);
  const std::string& ctx1 = pick(side.context, rng);
  const std::string& ctx2 = pick(side.context, rng);
  switch (rng.next_below(2)) {
    case 0:
      return "the " + noun + " stayed " + ctx1 + " and everything looked " +
             ctx2;
    default:
      return "everyone kept " + ctx1 + " and the " + noun + " seemed " + ctx2;
  }
}

}  // namespace

SyntheticWorld generate_synthetic_world(uint64_t rng_seed,
                                        bool include_second_task,
                                        size_t shards,
                                        size_t eval_examples_per_task) {
  if (shards == 0) throw ValidationError("need at least one shard");
  std::vector<TaskWords> task_words{sentiment_words()};
  if (include_second_task) task_words.push_back(temperature_words());

  SyntheticWorld world;
  CounterRng dir_rng(rng_seed, 1);
  CounterRng emb_rng(rng_seed, 2);
  CounterRng text_rng(rng_seed, 3);
  CounterRng eval_rng(rng_seed, 4);

  // Cluster directions: each side of each task gets its own direction.
  // Opposite sides of one task point half-away from each other; tasks are
  // orthogonal so retrieval never mixes them.
  std::vector<std::vector<double>> basis;
  EmbeddingBuilder emb(kDim);
  for (const TaskWords& tw : task_words) {
    std::vector<double> u1 = gram_schmidt_unit(dir_rng, basis, kDim);
    basis.push_back(u1);
    std::vector<double> u2 = gram_schmidt_unit(dir_rng, basis, kDim);
    basis.push_back(u2);
    std::vector<double> dirs[2];
    dirs[0] = u1;
    dirs[1].resize(kDim);
    for (size_t i = 0; i < kDim; ++i) {
      dirs[1][i] = -0.5 * u1[i] + std::sqrt(0.75) * u2[i];
    }
    for (int side = 0; side < 2; ++side) {
      const ClusterWords& cw = tw.sides[side];
      std::vector<double> seed_vec(kDim);
      for (size_t i = 0; i < kDim; ++i) seed_vec[i] = 2.0 * dirs[side][i];
      emb.add(cw.seed, seed_vec);
      for (const std::string& w : cw.faithful) {
        emb.add(w, scaled_plus_noise(dirs[side], 1.9, 0.3, emb_rng));
      }
      for (const std::string& w : cw.distractors) {
        emb.add(w, scaled_plus_noise(dirs[side], 0.9, 0.3, emb_rng));
      }
      for (const std::string& w : cw.context) {
        std::vector<double> v = random_unit(emb_rng, kDim);
        for (double& x : v) x *= 0.3;
        emb.add(w, v);
      }
    }
  }
  for (const std::string& w : support_words()) {
    std::vector<double> v = random_unit(emb_rng, kDim);
    for (double& x : v) x *= 0.3;
    emb.add(w, v);
  }
  world.datastore = emb.build();

  // Task specs.
  for (const TaskWords& tw : task_words) {
    TaskSpec spec;
    spec.name = tw.name;
    spec.template_text = tw.template_text;
    spec.seed_labels = {tw.sides[0].seed, tw.sides[1].seed};
    spec.task_kind = tw.task_kind;
    world.tasks.push_back(parse_task_spec(serialize_task_spec(spec)));
  }

  // Corpus. Counts per task and side:
  //   faithful targets   8 tokens x 30 sentences
  //   seed target        1 token  x 30 sentences
  //   distractor targets 3 tokens x 30 sentences, opposite-polarity context
  //   neutral filler     120 sentences per task
  constexpr size_t kPerToken = 30;
  std::vector<std::string> sentences;
  for (const TaskWords& tw : task_words) {
    for (int side = 0; side < 2; ++side) {
      const ClusterWords& own = tw.sides[side];
      const ClusterWords& other = tw.sides[1 - side];
      for (const std::string& target : own.faithful) {
        for (size_t i = 0; i < kPerToken; ++i) {
          sentences.push_back(target_sentence(target, own, text_rng));
        }
      }
      for (size_t i = 0; i < kPerToken; ++i) {
        sentences.push_back(target_sentence(own.seed, own, text_rng));
      }
      for (const std::string& target : own.distractors) {
        for (size_t i = 0; i < kPerToken; ++i) {
          sentences.push_back(target_sentence(target, other, text_rng));
        }
      }
    }
    for (size_t i = 0; i < 120; ++i) {
      sentences.push_back(neutral_sentence(text_rng));
    }
  }
  deterministic_shuffle(sentences, text_rng);

  // Group into documents of 1-2 sentences, then deal them across shards.
  std::vector<std::string> documents;
  for (size_t i = 0; i < sentences.size();) {
    if (i + 1 < sentences.size() && text_rng.next_below(10) < 3) {
      documents.push_back(sentences[i] + " " + sentences[i + 1]);
      i += 2;
    } else {
      documents.push_back(sentences[i]);
      i += 1;
    }
  }
  world.corpus_shards.assign(shards, {});
  for (size_t i = 0; i < documents.size(); ++i) {
    world.corpus_shards[i % shards].push_back(std::move(documents[i]));
  }

  // Held-out labeled examples, balanced, context words only.
  for (const TaskWords& tw : task_words) {
    std::vector<EvalExample> evals;
    for (size_t i = 0; i < eval_examples_per_task; ++i) {
      const int side = static_cast<int>(i % 2);
      EvalExample ex;
      ex.inputs["[input]"] = eval_input(tw.sides[side], eval_rng);
      ex.gold = tw.sides[side].seed;
      evals.push_back(std::move(ex));
    }
    world.eval_sets.push_back(std::move(evals));
  }
  return world;
}

void write_synthetic_world(const SyntheticWorld& world,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  world.datastore.save(dir / "datastore.goemb");
  for (const TaskSpec& spec : world.tasks) {
    std::ofstream out(dir / ("task_" + spec.name + ".json"), std::ios::binary);
    if (!out) {
      throw ValidationError("cannot write task file for " + spec.name);
    }
    out << serialize_task_spec(spec) << '\n';
  }
  char name[32];
  for (size_t s = 0; s < world.corpus_shards.size(); ++s) {
    std::snprintf(name, sizeof(name), "corpus_%03zu.txt", s);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw ValidationError("cannot write corpus shard");
    for (const std::string& doc : world.corpus_shards[s]) out << doc << '\n';
  }
  for (size_t t = 0; t < world.tasks.size(); ++t) {
    save_eval_examples(dir / ("eval_" + world.tasks[t].name + ".jsonl"),
                       world.eval_sets[t]);
  }
}

}  // namespace gotune
