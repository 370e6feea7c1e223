// src/common.h
//
// Copyright 2026  The cmm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CMM_SRC_COMMON_H_
#define CMM_SRC_COMMON_H_

#include <sstream>
#include <stdexcept>
#include <string>

namespace cmm {

#ifdef CMM_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

// Error taxonomy mirrors the CLI exit codes: usage/config 1, data 2,
// numeric 3, internal 4.
enum class ErrorKind { kUsage = 1, kData = 2, kNumeric = 3, kInternal = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string &msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string &msg) : Error(ErrorKind::kUsage, msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string &msg) : Error(ErrorKind::kData, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string &msg)
      : Error(ErrorKind::kNumeric, msg) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string &msg)
      : Error(ErrorKind::kInternal, msg) {}
};

// Building exception messages with stream syntax:
//   CMM_CHECK(cond, UsageError, "bad n=" << n);
#define CMM_CHECK(cond, ErrorType, msg)     \
  do {                                      \
    if (!(cond)) {                          \
      std::ostringstream os_;               \
      os_ << msg; /* NOLINT */              \
      throw ::cmm::ErrorType(os_.str());    \
    }                                       \
  } while (0)

}  // namespace cmm

#endif  // CMM_SRC_COMMON_H_
