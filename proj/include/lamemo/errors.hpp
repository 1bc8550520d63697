// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_ERRORS_HPP_
#define LAMEMO_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace lamemo {

// Every error carries a short kind tag so the CLI can print a single
// machine-parseable line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define LAMEMO_DEFINE_ERROR(Name, tag)                                     \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(tag, what) {}           \
  }

LAMEMO_DEFINE_ERROR(DimensionError, "dimension");
LAMEMO_DEFINE_ERROR(DegenerateRowError, "degenerate_row");
LAMEMO_DEFINE_ERROR(ConfigError, "config");
LAMEMO_DEFINE_ERROR(RangeError, "range");
LAMEMO_DEFINE_ERROR(NonFiniteError, "non_finite");
LAMEMO_DEFINE_ERROR(StreamIntegrityError, "stream_integrity");
LAMEMO_DEFINE_ERROR(VocabularyError, "vocabulary");
LAMEMO_DEFINE_ERROR(IngestionError, "ingestion");
LAMEMO_DEFINE_ERROR(CheckpointError, "checkpoint");
LAMEMO_DEFINE_ERROR(AnalysisError, "analysis");
LAMEMO_DEFINE_ERROR(ContractError, "contract");
LAMEMO_DEFINE_ERROR(DivergenceError, "divergence");
LAMEMO_DEFINE_ERROR(IoError, "io");

#undef LAMEMO_DEFINE_ERROR

}  // namespace lamemo

#endif  // LAMEMO_ERRORS_HPP_
