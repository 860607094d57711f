/*
 * Copyright 2026 The lmpcast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <iostream>
#include <string_view>

namespace lmp {

/// Warnings go to stderr unless silenced (tests silence them).
inline bool& warnings_enabled() {
  static bool on = true;
  return on;
}

inline void warn(std::string_view msg) {
  if (warnings_enabled()) std::cerr << "warning: " << msg << '\n';
}

}  // namespace lmp
