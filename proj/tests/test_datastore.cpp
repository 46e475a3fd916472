#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "gotune/datastore.hpp"
#include "gotune/errors.hpp"
#include "gotune/rng.hpp"

using namespace gotune;
namespace fs = std::filesystem;

namespace {

// Independent reference: score every row with its own dot loop, full sort,
// same tie rule. Used to pin query_neighbors exactly.
std::vector<ScoredToken> brute_force_topk(const LabelDatastore& ds,
                                          const std::string& seed, size_t k) {
  size_t seed_row = *ds.row_of(seed);
  std::span<const float> q = ds.row(seed_row);
  std::vector<ScoredToken> all;
  for (size_t r = 0; r < ds.size(); ++r) {
    std::span<const float> v = ds.row(r);
    double acc = 0.0;
    for (size_t i = 0; i < ds.dim(); ++i) {
      acc += static_cast<double>(q[i]) * static_cast<double>(v[i]);
    }
    all.push_back({ds.tokens()[r], r, acc});
  }
  std::sort(all.begin(), all.end(), [](const ScoredToken& a, const ScoredToken& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row < b.row;
  });
  all.resize(k);
  return all;
}

LabelDatastore random_datastore(size_t v, size_t d, CounterRng& rng,
                                size_t duplicate_every = 0) {
  std::vector<std::string> tokens;
  std::vector<float> matrix;
  for (size_t i = 0; i < v; ++i) {
    tokens.push_back("tok" + std::to_string(i));
    if (duplicate_every && i % duplicate_every == 0 && i > 0) {
      // duplicated row: bitwise-equal scores force the tie rule to decide
      for (size_t j = 0; j < d; ++j) matrix.push_back(matrix[j]);
    } else {
      for (size_t j = 0; j < d; ++j) {
        matrix.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
      }
    }
  }
  return LabelDatastore::build(std::move(tokens), std::move(matrix), d);
}

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "gotune_datastore_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("build validates its inputs") {
  LabelDatastore ds = LabelDatastore::build({"a", "b", "c"},
                                            {1, 0, 0, 0, 1, 0, 0, 0, 1}, 3);
  CHECK(ds.size() == 3);
  CHECK(ds.dim() == 3);
  CHECK(ds.row_of("b") == size_t{1});
  CHECK_FALSE(ds.row_of("z").has_value());

  CHECK_THROWS_WITH_AS(
      LabelDatastore::build({"good", "good"}, {1, 2}, 1),
      doctest::Contains("duplicate token"), ValidationError);
  CHECK_THROWS_WITH_AS(LabelDatastore::build({"a", "b"}, {1, 2, 3}, 2),
                       doctest::Contains("dimension mismatch"), ValidationError);
  float nan = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(LabelDatastore::build({"a"}, {nan}, 1),
                       doctest::Contains("non-finite"), ValidationError);
}

TEST_CASE("all tokens of a large random build are retrievable") {
  CounterRng rng(7, 0);
  LabelDatastore ds = random_datastore(1000, 64, rng);
  for (size_t i = 0; i < 1000; ++i) {
    auto row = ds.row_of("tok" + std::to_string(i));
    REQUIRE(row.has_value());
    CHECK(*row == i);
  }
}

TEST_CASE("query_neighbors on an orthonormal store returns the seed itself") {
  LabelDatastore ds = LabelDatastore::build({"a", "b", "c"},
                                            {1, 0, 0, 0, 1, 0, 0, 0, 1}, 3);
  auto top = ds.query_neighbors("b", 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].token == "b");
  CHECK(top[0].score == doctest::Approx(1.0));
}

TEST_CASE("query_neighbors small hand case") {
  // y=(1,0), z1=(2,0), z2=(0,5): order z1 (2.0), y (1.0), z2 (0.0)
  LabelDatastore ds =
      LabelDatastore::build({"y", "z1", "z2"}, {1, 0, 2, 0, 0, 5}, 2);
  auto top = ds.query_neighbors("y", 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].token == "z1");
  CHECK(top[0].score == doctest::Approx(2.0));
  CHECK(top[1].token == "y");
  CHECK(top[1].score == doctest::Approx(1.0));
  CHECK(top[2].token == "z2");
  CHECK(top[2].score == doctest::Approx(0.0));
}

TEST_CASE("query_neighbors rejects bad arguments") {
  LabelDatastore ds = LabelDatastore::build({"a", "b"}, {1, 0, 0, 1}, 2);
  CHECK_THROWS_WITH_AS(ds.query_neighbors("zz", 1),
                       doctest::Contains("seed not in datastore"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(ds.query_neighbors("a", 0),
                       doctest::Contains("k out of range"), ValidationError);
  CHECK_THROWS_WITH_AS(ds.query_neighbors("a", 3),
                       doctest::Contains("k out of range"), ValidationError);
}

TEST_CASE("query_neighbors equals the brute-force oracle exactly") {
  CounterRng rng(1234, 1);
  for (int round = 0; round < 3; ++round) {
    // duplicated rows give bitwise score ties
    size_t v = 200 + 600 * static_cast<size_t>(round);
    LabelDatastore ds = random_datastore(v, 16, rng, round == 1 ? 7 : 0);
    for (int q = 0; q < 10; ++q) {
      std::string seed = "tok" + std::to_string(rng.next_below(v));
      for (size_t k : {size_t{1}, size_t{10}, std::min<size_t>(v, 100)}) {
        auto got = ds.query_neighbors(seed, k);
        auto want = brute_force_topk(ds, seed, k);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].row == want[i].row);
          CHECK(got[i].score == want[i].score);  // exact, not approx
          CHECK(got[i].token == want[i].token);
        }
      }
    }
  }
}

TEST_CASE("query_neighbors scores are non-increasing") {
  CounterRng rng(55, 2);
  LabelDatastore ds = random_datastore(300, 8, rng, 11);
  for (int q = 0; q < 20; ++q) {
    std::string seed = "tok" + std::to_string(rng.next_below(300));
    auto top = ds.query_neighbors(seed, 50);
    for (size_t i = 1; i < top.size(); ++i) {
      CHECK(top[i - 1].score >= top[i].score);
    }
  }
}

TEST_CASE("scaling the seed embedding scales scores but not candidate order") {
  // Two query tokens sharing a direction, one scaled by c=4. Candidate rows
  // other than the two queries themselves score exactly c times higher and
  // keep their relative order. (The query's own self-score scales by c^2,
  // which is why the queries are excluded from the comparison.)
  CounterRng rng(77, 4);
  std::vector<std::string> tokens;
  std::vector<float> matrix;
  size_t d = 8;
  for (size_t i = 0; i < 50; ++i) {
    tokens.push_back("t" + std::to_string(i));
    for (size_t j = 0; j < d; ++j) {
      matrix.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
    }
  }
  tokens.push_back("seed_x1");
  std::vector<float> dir(d);
  for (size_t j = 0; j < d; ++j) {
    dir[j] = static_cast<float>(rng.uniform(-1.0, 1.0));
    matrix.push_back(dir[j]);
  }
  tokens.push_back("seed_x4");
  for (size_t j = 0; j < d; ++j) matrix.push_back(4.0f * dir[j]);

  LabelDatastore ds = LabelDatastore::build(tokens, matrix, d);
  auto a = ds.query_neighbors("seed_x1", ds.size());
  auto b = ds.query_neighbors("seed_x4", ds.size());
  auto strip_self = [](std::vector<ScoredToken> v) {
    std::erase_if(v, [](const ScoredToken& st) {
      return st.token == "seed_x1" || st.token == "seed_x4";
    });
    return v;
  };
  a = strip_self(a);
  b = strip_self(b);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].row == b[i].row);  // order over candidates unchanged
    CHECK(b[i].score == doctest::Approx(4.0 * a[i].score).epsilon(1e-6));
  }
}

TEST_CASE("cosine scoring is normalized dot, off by default") {
  CounterRng rng(88, 6);
  LabelDatastore ds = random_datastore(60, 8, rng);
  auto plain = ds.query_neighbors("tok5", 20);
  auto cos = ds.query_neighbors("tok5", 20, /*cosine=*/true);
  // Every cosine score matches the independent normalized-dot computation.
  auto norm_of = [&](size_t r) {
    double acc = 0.0;
    for (float x : ds.row(r)) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
  };
  const size_t seed_row = *ds.row_of("tok5");
  for (const ScoredToken& st : cos) {
    double want = ds.dot(seed_row, st.row) / (norm_of(seed_row) * norm_of(st.row));
    CHECK(st.score == doctest::Approx(want).epsilon(1e-12));
    CHECK(st.score <= 1.0 + 1e-12);
    CHECK(st.score >= -1.0 - 1e-12);
  }
  // Under cosine the seed itself always ranks first (self-similarity 1).
  CHECK(cos[0].token == "tok5");
  // The default stays the raw dot product.
  auto again = ds.query_neighbors("tok5", 20);
  for (size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain[i].row == again[i].row);
    CHECK(plain[i].score == again[i].score);
  }
}

TEST_CASE("build_neighbor_set dedups and assigns by best seed") {
  // d=2. s1=(2,0), s2=(0,2). t overlaps both top-k; closer to s2.
  LabelDatastore ds = LabelDatastore::build(
      {"s1", "s2", "t", "u"}, {2, 0, 0, 2, 0.5f, 1.0f, 1.0f, 0.5f}, 2);
  NeighborSet ns = build_neighbor_set_for_seeds(ds, "toy", {"s1", "s2"}, 4);
  // Every token retrieved by both seeds; each appears once.
  CHECK(ns.entries.size() == 4);
  for (const NeighborEntry& e : ns.entries) {
    if (e.token == "t") {
      CHECK(e.seed == "s2");  // dot(s2,t)=2.0 > dot(s1,t)=1.0
      CHECK(e.score == doctest::Approx(2.0));
    }
    if (e.token == "u") {
      CHECK(e.seed == "s1");
      CHECK(e.score == doctest::Approx(2.0));
    }
  }
  // Sorted by score desc, row asc on ties.
  for (size_t i = 1; i < ns.entries.size(); ++i) {
    CHECK(ns.entries[i - 1].score >= ns.entries[i].score);
    if (ns.entries[i - 1].score == ns.entries[i].score) {
      CHECK(ns.entries[i - 1].row < ns.entries[i].row);
    }
  }
}

TEST_CASE("build_neighbor_set with disjoint top-k keeps 2k entries") {
  LabelDatastore ds = LabelDatastore::build(
      {"s1", "a1", "s2", "a2"}, {4, 0, 3, 0, 0, 4, 0, 3}, 2);
  NeighborSet ns = build_neighbor_set_for_seeds(ds, "toy", {"s1", "s2"}, 2);
  CHECK(ns.entries.size() == 4);
}

TEST_CASE("build_neighbor_set requires seeds in the store") {
  LabelDatastore ds = LabelDatastore::build({"a", "b"}, {1, 0, 0, 1}, 2);
  CHECK_THROWS_WITH_AS(build_neighbor_set_for_seeds(ds, "t", {"positive"}, 1),
                       doctest::Contains("seed not in datastore"),
                       ValidationError);
}

TEST_CASE("equal-distance token ties go to the earlier seed") {
  // t is exactly as close to s1 as to s2.
  LabelDatastore ds =
      LabelDatastore::build({"s1", "s2", "t"}, {2, 0, 0, 2, 1, 1}, 2);
  NeighborSet ns = build_neighbor_set_for_seeds(ds, "toy", {"s1", "s2"}, 3);
  for (const NeighborEntry& e : ns.entries) {
    if (e.token == "t") CHECK(e.seed == "s1");
  }
  NeighborSet swapped = build_neighbor_set_for_seeds(ds, "toy", {"s2", "s1"}, 3);
  for (const NeighborEntry& e : swapped.entries) {
    if (e.token == "t") CHECK(e.seed == "s2");
  }
}

TEST_CASE("GOEMB layout is exactly header, token lines, raw floats") {
  LabelDatastore ds = LabelDatastore::build({"aa", "b"}, {1.0f, 2.0f}, 1);
  fs::path path = temp_dir() / "layout.goemb";
  ds.save(path);
  std::ifstream f(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  std::string expected = "GOEMB 1 2 1\naa\nb\n";
  float values[2] = {1.0f, 2.0f};
  expected.append(reinterpret_cast<const char*>(values), sizeof(values));
  CHECK(bytes == expected);
}

TEST_CASE("GOEMB save/load roundtrip is bit-identical") {
  CounterRng rng(31, 9);
  LabelDatastore ds = random_datastore(64, 12, rng);
  fs::path path = temp_dir() / "roundtrip.goemb";
  ds.save(path);
  LabelDatastore back = LabelDatastore::load(path);
  CHECK(back.tokens() == ds.tokens());
  REQUIRE(back.matrix().size() == ds.matrix().size());
  CHECK(std::memcmp(back.matrix().data(), ds.matrix().data(),
                    ds.matrix().size() * sizeof(float)) == 0);

  // Saving the loaded store reproduces the file byte-for-byte.
  fs::path path2 = temp_dir() / "roundtrip2.goemb";
  back.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("GOEMB load rejects bad files") {
  fs::path dir = temp_dir();
  {
    std::ofstream f(dir / "wrong.goemb", std::ios::binary);
    f << "NOTMAGIC 1 2 2\n";
  }
  CHECK_THROWS_WITH_AS(LabelDatastore::load(dir / "wrong.goemb"),
                       doctest::Contains("not a GOEMB file"), ValidationError);
  {
    std::ofstream f(dir / "short.goemb", std::ios::binary);
    f << "GOEMB 1 2 2\ntok0\ntok1\n";
    float one = 1.0f;
    f.write(reinterpret_cast<char*>(&one), sizeof(one));  // 1 of 4 floats
  }
  CHECK_THROWS_WITH_AS(LabelDatastore::load(dir / "short.goemb"),
                       doctest::Contains("truncated"), ValidationError);
  CHECK_THROWS_AS(LabelDatastore::load(dir / "missing.goemb"), ValidationError);
}

TEST_CASE("TSV import") {
  fs::path dir = temp_dir();
  {
    std::ofstream f(dir / "ok.tsv");
    f << "alpha\t1.5\t-2.25\n";
    f << "beta\t0.125\t3\n";
  }
  LabelDatastore ds = LabelDatastore::import_tsv(dir / "ok.tsv");
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 2);
  CHECK(ds.row(0)[0] == doctest::Approx(1.5));
  CHECK(ds.row(1)[1] == doctest::Approx(3.0));

  {
    std::ofstream f(dir / "ragged.tsv");
    f << "alpha\t1\t2\n";
    f << "beta\t1\n";
  }
  CHECK_THROWS_WITH_AS(LabelDatastore::import_tsv(dir / "ragged.tsv"),
                       doctest::Contains("line 2"), ValidationError);

  {
    std::ofstream f(dir / "badnum.tsv");
    f << "alpha\t1\tx2\n";
  }
  CHECK_THROWS_WITH_AS(LabelDatastore::import_tsv(dir / "badnum.tsv"),
                       doctest::Contains("bad number"), ValidationError);
}

TEST_CASE("neighbor set serialization is deterministic and reversible") {
  CounterRng rng(5, 5);
  LabelDatastore ds = random_datastore(100, 8, rng);
  NeighborSet ns = build_neighbor_set_for_seeds(ds, "toy", {"tok3", "tok7"}, 20);
  std::string json1 = neighbor_set_to_json(ns);
  std::string json2 = neighbor_set_to_json(
      build_neighbor_set_for_seeds(ds, "toy", {"tok3", "tok7"}, 20));
  CHECK(json1 == json2);

  NeighborSet back = neighbor_set_from_json(json1);
  CHECK(back.task == ns.task);
  CHECK(back.seeds == ns.seeds);
  CHECK(back.k_per_seed == ns.k_per_seed);
  CHECK(back.entries == ns.entries);
  CHECK(neighbor_set_to_json(back) == json1);
}
