#pragma once

// Process-wide warning channel. Library code reports recoverable conditions
// (shortfalls, skipped cases) here; the CLI routes them to stderr and tests
// can capture them.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ivfalign {

using WarningSink = std::function<void(std::string_view)>;

/// Installs a sink and returns the previous one. An empty sink restores the
/// default (stderr).
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

/// Captures warnings for the lifetime of the object.
class ScopedWarningCapture {
 public:
  ScopedWarningCapture();
  ~ScopedWarningCapture();
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  WarningSink previous_;
};

}  // namespace ivfalign
