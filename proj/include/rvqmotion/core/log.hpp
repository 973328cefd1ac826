// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Line-oriented "key=value key=value" progress records.

#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

namespace rvqmotion {

using LogSink = std::function<void(const std::string&)>;

class LogRecord {
 public:
  explicit LogRecord(std::string_view event) { os_ << "event=" << event; }

  template <typename T>
  LogRecord& kv(std::string_view key, const T& value) {
    os_ << ' ' << key << '=';
    if constexpr (std::is_floating_point_v<T>) {
      os_ << std::setprecision(10) << value;
    } else {
      os_ << value;
    }
    return *this;
  }

  std::string str() const { return os_.str(); }

  void emit(const LogSink& sink) const {
    if (sink) sink(str());
  }

 private:
  std::ostringstream os_;
};

}  // namespace rvqmotion
