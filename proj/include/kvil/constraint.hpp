#pragma once

#include "errors.hpp"

#include <string>
#include <string_view>

namespace kvil {

enum class ConstraintKind
{
  p2p,
  p2l,
  p2P,
  p2c,
  p2S
};

//! Dimension of the target manifold.
inline int
manifold_dim(ConstraintKind k)
{
  switch (k) {
    case ConstraintKind::p2p:
      return 0;
    case ConstraintKind::p2l:
    case ConstraintKind::p2c:
      return 1;
    case ConstraintKind::p2P:
    case ConstraintKind::p2S:
      return 2;
  }
  return 0;
}

inline bool
is_linear(ConstraintKind k)
{
  return k == ConstraintKind::p2p || k == ConstraintKind::p2l ||
         k == ConstraintKind::p2P;
}

inline std::string_view
to_string(ConstraintKind k)
{
  switch (k) {
    case ConstraintKind::p2p:
      return "p2p";
    case ConstraintKind::p2l:
      return "p2l";
    case ConstraintKind::p2P:
      return "p2P";
    case ConstraintKind::p2c:
      return "p2c";
    case ConstraintKind::p2S:
      return "p2S";
  }
  return "?";
}

inline ConstraintKind
parse_constraint_kind(std::string_view s)
{
  for (auto k : { ConstraintKind::p2p,
                  ConstraintKind::p2l,
                  ConstraintKind::p2P,
                  ConstraintKind::p2c,
                  ConstraintKind::p2S }) {
    if (to_string(k) == s) {
      return k;
    }
  }
  throw SchemaError("unknown constraint kind '" + std::string(s) + "'");
}

struct Thresholds
{
  double xi1 = 0.02;
  double xi2 = 0.10;

  void check() const
  {
    if (!(xi1 > 0.0 && xi1 < xi2)) {
      throw Error("thresholds must satisfy 0 < xi1 < xi2");
    }
  }
};

} // namespace kvil
