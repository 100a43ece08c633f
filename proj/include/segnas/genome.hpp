#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace segnas {

/// The 11 decoder operations, indexed exactly as the genome encoding expects.
enum class OpCode : int {
  Conv1x1 = 0,
  Conv3x3 = 1,
  Sep3x3 = 2,
  Sep5x5 = 3,
  Gap = 4,
  Conv3x3Rate3 = 5,
  Conv3x3Rate12 = 6,
  Sep3x3Rate3 = 7,
  Sep5x5Rate6 = 8,
  Skip = 9,
  Zero = 10,
};

inline constexpr int kNumOps = 11;
inline constexpr int kNumPairs = 3;
inline constexpr int kNumBranches = 3;
inline constexpr int kNumTokens = 19;  // 3 pairs x 2 + op0 + 3 branches x 4

/// Human-readable abbreviation for an op ("sep5x5 rate 6" for code 8).
const char* op_abbrev(OpCode op);

/// Pool available to connectivity pair `k`: 4 encoder outputs plus one
/// decoder block output per completed pair.
inline constexpr int connectivity_pool_size(int pair) { return 4 + pair; }

/// Pool available to cell branch `b`: {cell input, op0 output} plus the
/// three layers each earlier branch appends (op_a out, op_b out, sum).
inline constexpr int cell_pool_size(int branch) { return 2 + 3 * branch; }

struct GenomeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConnectivitySpec {
  std::array<std::array<int, 2>, kNumPairs> pairs{};
  bool operator==(const ConnectivitySpec&) const = default;
};

struct CellBranch {
  int in_a = 0;
  int in_b = 0;
  OpCode op_a = OpCode::Conv1x1;
  OpCode op_b = OpCode::Conv1x1;
  bool operator==(const CellBranch&) const = default;
};

struct CellSpec {
  OpCode op0 = OpCode::Conv1x1;
  std::array<CellBranch, kNumBranches> branches{};
  bool operator==(const CellSpec&) const = default;
};

struct Genome {
  ConnectivitySpec connectivity;
  CellSpec cell;
  bool operator==(const Genome&) const = default;
};

/// Validates every index/op range; throws GenomeError naming the offending
/// pair or branch and the valid range.
void validate(const Genome& genome);

/// Canonical nested-list text, e.g.
/// [[[3,3],[3,2],[3,0]],[8,[0,0,5,2],[0,2,8,8],[0,5,1,4]]]
std::string encode(const Genome& genome);

/// Parses and validates the nested-list text form.
Genome decode(const std::string& text);

/// Sorts each connectivity pair ascending and each branch's (index, op)
/// operands lexicographically. Idempotent.
Genome canonicalize(const Genome& genome);

/// All valid connectivity structures modulo the pair-operand swap, in
/// lexicographic order.
std::vector<ConnectivitySpec> enumerate_connectivities();

std::string encode_connectivity(const ConnectivitySpec& spec);

/// Analytic product of per-decision choice counts for the cell space; an
/// upper bound before any symmetry reduction.
double cell_space_upper_bound();

// --- Token view -----------------------------------------------------------
//
// The controller emits genomes as a fixed sequence of 19 categorical tokens:
// 6 connectivity indices, then op0, then (in_a, in_b, op_a, op_b) per branch.

enum class TokenKind { ConnIndex, CellIndex, Op };

struct TokenInfo {
  TokenKind kind;
  int num_valid;  // pool size (indices) or kNumOps (ops)
};

const std::array<TokenInfo, kNumTokens>& token_schema();

std::array<int, kNumTokens> to_tokens(const Genome& genome);
Genome from_tokens(const std::array<int, kNumTokens>& tokens);

/// Uniform independent draw of each token within its valid range.
Genome sample_uniform(std::uint64_t seed);

class Rng;  // rng.hpp
Genome sample_uniform(Rng& rng);

}  // namespace segnas
