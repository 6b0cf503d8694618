#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

// Small interaction-formula grammar: `A + B`, `A : B`, `A * B` and
// parentheses, with an optional leading `~`.  An expression evaluates to a set
// of terms, each term being a set of factor names:
//   e1 + e2 -> union of terms
//   e1 : e2 -> pairwise unions of terms
//   e1 * e2 -> e1 + e2 + e1:e2
// Precedence: `:` over `*` over `+`.

namespace fusionlasso {

using Term = std::vector<std::string>;  // sorted factor names
using TermSet = std::vector<Term>;

namespace detail {

struct FormulaLexer {
  std::string src;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }

  char peek() {
    skip_ws();
    return pos < src.size() ? src[pos] : '\0';
  }

  void expect(char c) {
    if (peek() != c) {
      throw std::invalid_argument(std::string("formula: expected '") + c + "' at position " +
                                  std::to_string(pos));
    }
    ++pos;
  }

  std::string identifier() {
    skip_ws();
    std::size_t start = pos;
    while (pos < src.size()) {
      const char c = src[pos];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$') {
        ++pos;
      } else {
        break;
      }
    }
    if (pos == start) {
      throw std::invalid_argument("formula: expected factor name at position " +
                                  std::to_string(start));
    }
    return src.substr(start, pos - start);
  }
};

inline Term term_union(const Term& a, const Term& b) {
  Term out = a;
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline TermSet cross(const TermSet& a, const TermSet& b) {
  TermSet out;
  for (const auto& s : a) {
    for (const auto& t : b) out.push_back(term_union(s, t));
  }
  return out;
}

inline void append_unique(TermSet& into, const TermSet& from) {
  for (const auto& t : from) {
    if (std::find(into.begin(), into.end(), t) == into.end()) into.push_back(t);
  }
}

TermSet parse_sum(FormulaLexer& lex);

inline TermSet parse_atom(FormulaLexer& lex) {
  if (lex.peek() == '(') {
    lex.expect('(');
    TermSet inner = parse_sum(lex);
    lex.expect(')');
    return inner;
  }
  return {Term{lex.identifier()}};
}

inline TermSet parse_interaction(FormulaLexer& lex) {
  TermSet lhs = parse_atom(lex);
  while (lex.peek() == ':') {
    lex.expect(':');
    lhs = cross(lhs, parse_atom(lex));
  }
  return lhs;
}

inline TermSet parse_product(FormulaLexer& lex) {
  TermSet lhs = parse_interaction(lex);
  while (lex.peek() == '*') {
    lex.expect('*');
    TermSet rhs = parse_interaction(lex);
    TermSet out = lhs;
    append_unique(out, rhs);
    append_unique(out, cross(lhs, rhs));
    lhs = std::move(out);
  }
  return lhs;
}

inline TermSet parse_sum(FormulaLexer& lex) {
  TermSet out = parse_product(lex);
  while (lex.peek() == '+') {
    lex.expect('+');
    append_unique(out, parse_product(lex));
  }
  return out;
}

}  // namespace detail

// Terms are returned in a canonical order: by arity, then by the sorted factor
// names, so identical formulas always expand identically.
inline TermSet parse_formula(const std::string& formula) {
  detail::FormulaLexer lex{formula};
  if (lex.peek() == '~') lex.expect('~');
  TermSet terms = detail::parse_sum(lex);
  if (lex.peek() != '\0') {
    throw std::invalid_argument("formula: trailing input at position " + std::to_string(lex.pos));
  }
  std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  return terms;
}

}  // namespace fusionlasso
