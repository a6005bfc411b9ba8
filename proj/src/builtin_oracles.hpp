#pragma once

namespace lmte::detail {

/// Registers the in-process models shipped with the library
/// ("reference-forest", "decision-tree", "constant").
void register_builtin_oracles();

}  // namespace lmte::detail
