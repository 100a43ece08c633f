#include "segnas/genome.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <tuple>

#include "segnas/rng.hpp"

namespace segnas {

const char* op_abbrev(OpCode op) {
  switch (op) {
    case OpCode::Conv1x1: return "conv1x1";
    case OpCode::Conv3x3: return "conv3x3";
    case OpCode::Sep3x3: return "sep3x3";
    case OpCode::Sep5x5: return "sep5x5";
    case OpCode::Gap: return "gap";
    case OpCode::Conv3x3Rate3: return "conv3x3 rate 3";
    case OpCode::Conv3x3Rate12: return "conv3x3 rate 12";
    case OpCode::Sep3x3Rate3: return "sep3x3 rate 3";
    case OpCode::Sep5x5Rate6: return "sep5x5 rate 6";
    case OpCode::Skip: return "skip";
    case OpCode::Zero: return "zero";
  }
  return "?";
}

namespace {

void check_op(int code, const std::string& where) {
  if (code < 0 || code >= kNumOps) {
    throw GenomeError(where + ": op code " + std::to_string(code) +
                      " outside [0," + std::to_string(kNumOps) + ")");
  }
}

void check_index(int value, int pool, const std::string& where) {
  if (value < 0 || value >= pool) {
    throw GenomeError(where + ": index " + std::to_string(value) +
                      " outside [0," + std::to_string(pool) + ")");
  }
}

}  // namespace

void validate(const Genome& g) {
  for (int k = 0; k < kNumPairs; ++k) {
    const int pool = connectivity_pool_size(k);
    check_index(g.connectivity.pairs[k][0], pool, "pair " + std::to_string(k));
    check_index(g.connectivity.pairs[k][1], pool, "pair " + std::to_string(k));
  }
  check_op(static_cast<int>(g.cell.op0), "cell op0");
  for (int b = 0; b < kNumBranches; ++b) {
    const int pool = cell_pool_size(b);
    const auto& br = g.cell.branches[b];
    const std::string where = "branch " + std::to_string(b);
    check_index(br.in_a, pool, where);
    check_index(br.in_b, pool, where);
    check_op(static_cast<int>(br.op_a), where);
    check_op(static_cast<int>(br.op_b), where);
  }
}

std::string encode(const Genome& g) {
  std::ostringstream os;
  os << "[[";
  for (int k = 0; k < kNumPairs; ++k) {
    if (k) os << ",";
    os << "[" << g.connectivity.pairs[k][0] << "," << g.connectivity.pairs[k][1]
       << "]";
  }
  os << "],[" << static_cast<int>(g.cell.op0);
  for (const auto& br : g.cell.branches) {
    os << ",[" << br.in_a << "," << br.in_b << "," << static_cast<int>(br.op_a)
       << "," << static_cast<int>(br.op_b) << "]";
  }
  os << "]]";
  return os.str();
}

namespace {

// Minimal recursive parser for nested integer lists. Whitespace tolerant.
struct ListNode {
  bool is_int = false;
  long value = 0;
  std::vector<ListNode> items;
};

class ListParser {
 public:
  explicit ListParser(const std::string& text) : text_(text) {}

  ListNode parse() {
    ListNode node = parse_value();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters");
    return node;
  }

 private:
  ListNode parse_value() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    if (text_[pos_] == '[') return parse_list();
    return parse_int();
  }

  ListNode parse_list() {
    ListNode node;
    ++pos_;  // '['
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == ']') {
      ++pos_;
      return node;
    }
    while (true) {
      node.items.push_back(parse_value());
      skip_ws();
      if (pos_ >= text_.size()) fail("unterminated list");
      if (text_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (text_[pos_] == ']') {
        ++pos_;
        return node;
      }
      fail("expected ',' or ']'");
    }
  }

  ListNode parse_int() {
    ListNode node;
    node.is_int = true;
    std::size_t start = pos_;
    if (pos_ < text_.size() && (text_[pos_] == '-' || text_[pos_] == '+')) ++pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == start || (pos_ == start + 1 && !std::isdigit(static_cast<unsigned char>(text_[start]))))
      fail("expected integer");
    node.value = std::stol(text_.substr(start, pos_ - start));
    return node;
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) {
    throw GenomeError("parse error at position " + std::to_string(pos_) + ": " + what);
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

long expect_int(const ListNode& n, const std::string& where) {
  if (!n.is_int) throw GenomeError("parse error: expected integer in " + where);
  return n.value;
}

const std::vector<ListNode>& expect_list(const ListNode& n, std::size_t size,
                                         const std::string& where) {
  if (n.is_int || n.items.size() != size)
    throw GenomeError("parse error: expected list of " + std::to_string(size) +
                      " in " + where);
  return n.items;
}

}  // namespace

Genome decode(const std::string& text) {
  ListNode root = ListParser(text).parse();
  const auto& top = expect_list(root, 2, "genome");

  Genome g;
  const auto& conn = expect_list(top[0], kNumPairs, "connectivity");
  for (int k = 0; k < kNumPairs; ++k) {
    const auto& pair = expect_list(conn[k], 2, "pair " + std::to_string(k));
    g.connectivity.pairs[k][0] = static_cast<int>(expect_int(pair[0], "pair"));
    g.connectivity.pairs[k][1] = static_cast<int>(expect_int(pair[1], "pair"));
  }

  const auto& cell = expect_list(top[1], 1 + kNumBranches, "cell");
  g.cell.op0 = static_cast<OpCode>(expect_int(cell[0], "cell op0"));
  for (int b = 0; b < kNumBranches; ++b) {
    const auto& br = expect_list(cell[1 + b], 4, "branch " + std::to_string(b));
    g.cell.branches[b].in_a = static_cast<int>(expect_int(br[0], "branch"));
    g.cell.branches[b].in_b = static_cast<int>(expect_int(br[1], "branch"));
    g.cell.branches[b].op_a = static_cast<OpCode>(expect_int(br[2], "branch"));
    g.cell.branches[b].op_b = static_cast<OpCode>(expect_int(br[3], "branch"));
  }

  validate(g);
  return g;
}

Genome canonicalize(const Genome& g) {
  Genome out = g;
  for (auto& pair : out.connectivity.pairs) {
    if (pair[0] > pair[1]) std::swap(pair[0], pair[1]);
  }
  for (auto& br : out.cell.branches) {
    const auto a = std::make_pair(br.in_a, static_cast<int>(br.op_a));
    const auto b = std::make_pair(br.in_b, static_cast<int>(br.op_b));
    if (b < a) {
      std::swap(br.in_a, br.in_b);
      std::swap(br.op_a, br.op_b);
    }
  }
  return out;
}

std::vector<ConnectivitySpec> enumerate_connectivities() {
  std::vector<ConnectivitySpec> out;
  for (int a0 = 0; a0 < connectivity_pool_size(0); ++a0)
    for (int b0 = a0; b0 < connectivity_pool_size(0); ++b0)
      for (int a1 = 0; a1 < connectivity_pool_size(1); ++a1)
        for (int b1 = a1; b1 < connectivity_pool_size(1); ++b1)
          for (int a2 = 0; a2 < connectivity_pool_size(2); ++a2)
            for (int b2 = a2; b2 < connectivity_pool_size(2); ++b2) {
              ConnectivitySpec spec;
              spec.pairs = {{{a0, b0}, {a1, b1}, {a2, b2}}};
              out.push_back(spec);
            }
  return out;
}

std::string encode_connectivity(const ConnectivitySpec& spec) {
  std::ostringstream os;
  os << "[";
  for (int k = 0; k < kNumPairs; ++k) {
    if (k) os << ",";
    os << "[" << spec.pairs[k][0] << "," << spec.pairs[k][1] << "]";
  }
  os << "]";
  return os.str();
}

double cell_space_upper_bound() {
  double total = kNumOps;  // op0
  for (int b = 0; b < kNumBranches; ++b) {
    const double pool = cell_pool_size(b);
    total *= pool * pool * kNumOps * kNumOps;
  }
  return total;
}

const std::array<TokenInfo, kNumTokens>& token_schema() {
  static const std::array<TokenInfo, kNumTokens> schema = [] {
    std::array<TokenInfo, kNumTokens> s{};
    int t = 0;
    for (int k = 0; k < kNumPairs; ++k) {
      s[t++] = {TokenKind::ConnIndex, connectivity_pool_size(k)};
      s[t++] = {TokenKind::ConnIndex, connectivity_pool_size(k)};
    }
    s[t++] = {TokenKind::Op, kNumOps};
    for (int b = 0; b < kNumBranches; ++b) {
      s[t++] = {TokenKind::CellIndex, cell_pool_size(b)};
      s[t++] = {TokenKind::CellIndex, cell_pool_size(b)};
      s[t++] = {TokenKind::Op, kNumOps};
      s[t++] = {TokenKind::Op, kNumOps};
    }
    return s;
  }();
  return schema;
}

std::array<int, kNumTokens> to_tokens(const Genome& g) {
  std::array<int, kNumTokens> tokens{};
  int t = 0;
  for (int k = 0; k < kNumPairs; ++k) {
    tokens[t++] = g.connectivity.pairs[k][0];
    tokens[t++] = g.connectivity.pairs[k][1];
  }
  tokens[t++] = static_cast<int>(g.cell.op0);
  for (const auto& br : g.cell.branches) {
    tokens[t++] = br.in_a;
    tokens[t++] = br.in_b;
    tokens[t++] = static_cast<int>(br.op_a);
    tokens[t++] = static_cast<int>(br.op_b);
  }
  return tokens;
}

Genome from_tokens(const std::array<int, kNumTokens>& tokens) {
  Genome g;
  int t = 0;
  for (int k = 0; k < kNumPairs; ++k) {
    g.connectivity.pairs[k][0] = tokens[t++];
    g.connectivity.pairs[k][1] = tokens[t++];
  }
  g.cell.op0 = static_cast<OpCode>(tokens[t++]);
  for (auto& br : g.cell.branches) {
    br.in_a = tokens[t++];
    br.in_b = tokens[t++];
    br.op_a = static_cast<OpCode>(tokens[t++]);
    br.op_b = static_cast<OpCode>(tokens[t++]);
  }
  validate(g);
  return g;
}

Genome sample_uniform(Rng& rng) {
  std::array<int, kNumTokens> tokens{};
  const auto& schema = token_schema();
  for (int t = 0; t < kNumTokens; ++t) {
    tokens[t] = rng.uniform_int(schema[t].num_valid);
  }
  return from_tokens(tokens);
}

Genome sample_uniform(std::uint64_t seed) {
  Rng rng(seed);
  return sample_uniform(rng);
}

}  // namespace segnas
