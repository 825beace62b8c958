#pragma once

#include <functional>
#include <string_view>

namespace rdg {

using WarningSink = std::function<void(std::string_view)>;

/// Reports a recoverable condition (skipped item, underfilled bucket...).
/// Thread-safe; goes to stderr unless a sink is installed.
void warn(std::string_view message);

/// Installs `sink` and returns the previous one; an empty sink restores stderr.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace rdg
