#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace dtfixup {

enum class SchemeKind {
    StandardLN,  // Xavier + post-LN + linear warmup
    Xavier,      // Xavier, no LN, no rescaling (the unscaled contrast baseline)
    TFixup,      // Xavier, no LN, 0.67 N^{-1/4}
    DTFixup,     // Xavier, no LN, data-dependent scale from mu
};

std::string_view scheme_name(SchemeKind kind);
std::optional<SchemeKind> parse_scheme(std::string_view name);

struct InitScheme {
    SchemeKind kind = SchemeKind::DTFixup;
    double mu = 0.0;          // max per-token input norm (DTFixup only)
    double xi = 1.0;          // multiplier applied to v, w, r^v and MLP weights
    bool relational = false;  // selects the DTFixup formula

    bool uses_layer_norm() const { return kind == SchemeKind::StandardLN; }
    bool rescales() const { return kind == SchemeKind::TFixup || kind == SchemeKind::DTFixup; }
};

} // namespace dtfixup
