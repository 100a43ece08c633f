#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>

#include "segnas/genome.hpp"
#include "segnas/rng.hpp"

using namespace segnas;

namespace {

// Published genome strings (canonical, whitespace-free form).
const std::string kArch0 = "[[[3,3],[3,2],[3,0]],[8,[0,0,5,2],[0,2,8,8],[0,5,1,4]]]";
const std::string kArch1 = "[[[2,3],[3,1],[4,4]],[2,[1,0,3,6],[0,1,2,8],[2,0,6,1]]]";
const std::string kArch2 = "[[[1,3],[4,3],[2,2]],[5,[0,0,4,1],[3,2,0,1],[5,6,5,0]]]";

}  // namespace

TEST_CASE("published genomes round-trip exactly") {
  for (const auto& text : {kArch0, kArch1, kArch2}) {
    Genome g = decode(text);
    CHECK(encode(g) == text);
    CHECK(decode(encode(g)) == g);
  }
}

TEST_CASE("arch0 decodes to the expected fields") {
  Genome g = decode(kArch0);
  CHECK(g.connectivity.pairs[0] == std::array<int, 2>{3, 3});
  CHECK(g.connectivity.pairs[2] == std::array<int, 2>{3, 0});
  CHECK(g.cell.op0 == OpCode::Sep5x5Rate6);
  CHECK(g.cell.branches[0].op_a == OpCode::Conv3x3Rate3);
  CHECK(g.cell.branches[2].in_b == 5);
}

TEST_CASE("decode is whitespace tolerant") {
  Genome g = decode("[[[3, 3], [3, 2], [3, 0]], [8, [0, 0, 5, 2], [0, 2, 8, 8], [0, 5, 1, 4]]]");
  CHECK(encode(g) == kArch0);
}

TEST_CASE("decode rejects out-of-range indices with a useful message") {
  const std::string bad = "[[[0,9],[0,0],[0,0]],[0,[0,0,0,0],[0,0,0,0],[0,0,0,0]]]";
  CHECK_THROWS_WITH_AS(decode(bad), "pair 0: index 9 outside [0,4)", GenomeError);

  // pair 2 may reach index 4 and 5 (block outputs), not 6
  CHECK_NOTHROW(decode(kArch1));  // pair 2 uses index 4
  const std::string bad2 = "[[[0,0],[0,0],[0,6]],[0,[0,0,0,0],[0,0,0,0],[0,0,0,0]]]";
  CHECK_THROWS_WITH_AS(decode(bad2), "pair 2: index 6 outside [0,6)", GenomeError);

  const std::string bad3 = "[[[0,0],[0,0],[0,0]],[0,[0,2,0,0],[0,0,0,0],[0,0,0,0]]]";
  CHECK_THROWS_WITH_AS(decode(bad3), "branch 0: index 2 outside [0,2)", GenomeError);

  const std::string bad4 = "[[[0,0],[0,0],[0,0]],[11,[0,0,0,0],[0,0,0,0],[0,0,0,0]]]";
  CHECK_THROWS_WITH_AS(decode(bad4), "cell op0: op code 11 outside [0,11)", GenomeError);
}

TEST_CASE("decode rejects malformed lists") {
  CHECK_THROWS_AS(decode("[[[3,3],[3,2]"), GenomeError);
  CHECK_THROWS_AS(decode("not a genome"), GenomeError);
  CHECK_THROWS_AS(decode("[[[3,3],[3,2],[3,0]],[8,[0,0,5,2],[0,2,8,8]]]"), GenomeError);
  CHECK_THROWS_AS(decode(kArch0 + "x"), GenomeError);
}

TEST_CASE("canonicalize sorts pairs and branch operands") {
  Genome g = decode(kArch0);
  Genome c = canonicalize(g);
  CHECK(c.connectivity.pairs[1] == std::array<int, 2>{2, 3});
  CHECK(c.connectivity.pairs[2] == std::array<int, 2>{0, 3});

  // branch (4,3,op4,op5) -> (3,4,op5,op4)
  Genome h = g;
  h.cell.branches[1] = {4, 3, OpCode::Gap, OpCode::Conv3x3Rate3};
  Genome hc = canonicalize(h);
  CHECK(hc.cell.branches[1].in_a == 3);
  CHECK(hc.cell.branches[1].in_b == 4);
  CHECK(hc.cell.branches[1].op_a == OpCode::Conv3x3Rate3);
  CHECK(hc.cell.branches[1].op_b == OpCode::Gap);
}

TEST_CASE("canonicalize is idempotent and swap-invariant") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    Genome g = sample_uniform(rng);
    Genome c = canonicalize(g);
    CHECK(canonicalize(c) == c);

    // swapping operands anywhere must not change the canonical form
    Genome swapped = g;
    std::swap(swapped.connectivity.pairs[i % 3][0], swapped.connectivity.pairs[i % 3][1]);
    auto& br = swapped.cell.branches[i % 3];
    std::swap(br.in_a, br.in_b);
    std::swap(br.op_a, br.op_b);
    CHECK(canonicalize(swapped) == c);
  }
}

TEST_CASE("round-trip property on random genomes") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    Genome g = sample_uniform(rng);
    CHECK(decode(encode(g)) == g);
    CHECK(from_tokens(to_tokens(g)) == g);
  }
}

namespace {

// Independent oracle: enumerate all ordered connectivities, canonicalize,
// and count distinct encodings.
std::set<std::string> brute_force_canonical_connectivities() {
  std::set<std::string> seen;
  Genome g{};
  for (int a0 = 0; a0 < 4; ++a0)
    for (int b0 = 0; b0 < 4; ++b0)
      for (int a1 = 0; a1 < 5; ++a1)
        for (int b1 = 0; b1 < 5; ++b1)
          for (int a2 = 0; a2 < 6; ++a2)
            for (int b2 = 0; b2 < 6; ++b2) {
              g.connectivity.pairs = {{{a0, b0}, {a1, b1}, {a2, b2}}};
              seen.insert(encode_connectivity(canonicalize(g).connectivity));
            }
  return seen;
}

}  // namespace

TEST_CASE("connectivity enumeration matches a brute-force oracle") {
  auto oracle = brute_force_canonical_connectivities();
  auto enumerated = enumerate_connectivities();
  CHECK(enumerated.size() == oracle.size());
  CHECK(enumerated.size() == 3150);  // frozen from the oracle

  std::set<std::string> ours;
  for (const auto& spec : enumerated) ours.insert(encode_connectivity(spec));
  CHECK(ours == oracle);

  // stable across calls
  CHECK(enumerate_connectivities().size() == enumerated.size());

  // first pair alone: C(4,2) + 4 = 10 distinct pairs
  std::set<std::string> first;
  for (const auto& spec : enumerated)
    first.insert(std::to_string(spec.pairs[0][0]) + "," + std::to_string(spec.pairs[0][1]));
  CHECK(first.size() == 10);
}

TEST_CASE("the paper's 120 arises from unordered triples of base pairs") {
  // 10 distinct encoder-output pairs; C(10,3) unordered distinct triples.
  CHECK(10 * 9 * 8 / 6 == 120);
}

TEST_CASE("cell space upper bound is the per-decision product") {
  // 11 * (2*2*121) * (5*5*121) * (8*8*121)
  CHECK(cell_space_upper_bound() == doctest::Approx(1.247178944e11).epsilon(1e-9));
}

TEST_CASE("sample_uniform is seed-deterministic and valid") {
  CHECK(sample_uniform(42) == sample_uniform(42));
  CHECK_FALSE(sample_uniform(42) == sample_uniform(43));
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    Genome g = sample_uniform(rng);
    CHECK_NOTHROW(validate(g));
    CHECK(decode(encode(g)) == g);
  }
}

TEST_CASE("pair-0 indices are uniform over 1e4 draws") {
  Rng rng(2024);
  std::array<int, 4> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Genome g = sample_uniform(rng);
    ++counts[g.connectivity.pairs[0][0]];
  }
  for (int c : counts) {
    const double freq = static_cast<double>(c) / draws;
    CHECK(freq == doctest::Approx(0.25).epsilon(0.08));  // 0.25 +- 0.02
  }
}

TEST_CASE("token schema covers 19 decisions") {
  const auto& schema = token_schema();
  CHECK(schema.size() == 19);
  CHECK(schema[0].num_valid == 4);
  CHECK(schema[4].num_valid == 6);   // pair 2
  CHECK(schema[6].kind == TokenKind::Op);
  CHECK(schema[7].num_valid == 2);   // branch 0 index
  CHECK(schema[15].num_valid == 8);  // branch 2 index
  CHECK(schema[18].num_valid == 11);
}
