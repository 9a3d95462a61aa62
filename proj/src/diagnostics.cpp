#include "protoconcepts/diagnostics.hpp"

#include <iostream>
#include <utility>

namespace protoconcepts {

namespace {
WarningSink& sink() {
  static WarningSink instance;
  return instance;
}
}  // namespace

WarningSink set_warning_sink(WarningSink s) { return std::exchange(sink(), std::move(s)); }

void warn(std::string_view message) {
  if (sink()) {
    sink()(message);
    return;
  }
  std::cerr << "warning: " << message << '\n';
}

}  // namespace protoconcepts
