#pragma once

namespace fedae {

// Binary flow label; Attack is the positive class everywhere.
enum class Label { Normal, Attack };

inline const char* to_string(Label l) { return l == Label::Normal ? "normal" : "attack"; }

}  // namespace fedae
