// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace headscope {

/// Base of every error thrown by the toolkit. `code()` is a stable identifier
/// (e.g. "RowSumError") and `detail()` carries machine-readable context that
/// the CLI and the HTTP API forward verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), code_(std::move(code)), detail_(std::move(detail)) {}

  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }

  nlohmann::json to_json() const {
    return {{"code", code_}, {"message", what()}, {"detail", detail_}};
  }

 private:
  std::string code_;
  nlohmann::json detail_;
};

#define HEADSCOPE_DEFINE_ERROR(Name)                                                        \
  class Name : public Error {                                                               \
   public:                                                                                  \
    explicit Name(const std::string& message, nlohmann::json detail = nlohmann::json::object()) \
        : Error(#Name, message, std::move(detail)) {}                                       \
  };

// corpus
HEADSCOPE_DEFINE_ERROR(MissingFile)
HEADSCOPE_DEFINE_ERROR(SchemaError)
HEADSCOPE_DEFINE_ERROR(DimensionError)
HEADSCOPE_DEFINE_ERROR(RowSumError)
HEADSCOPE_DEFINE_ERROR(TagError)
HEADSCOPE_DEFINE_ERROR(LengthMismatch)
HEADSCOPE_DEFINE_ERROR(IoError)
// metrics
HEADSCOPE_DEFINE_ERROR(NotSquare)
HEADSCOPE_DEFINE_ERROR(NoEntities)
HEADSCOPE_DEFINE_ERROR(MissingMatrix)
// transformer
HEADSCOPE_DEFINE_ERROR(ShapeError)
HEADSCOPE_DEFINE_ERROR(OverrideShapeError)
HEADSCOPE_DEFINE_ERROR(VocabError)
HEADSCOPE_DEFINE_ERROR(LengthError)
HEADSCOPE_DEFINE_ERROR(ConfigError)
// adversarial
HEADSCOPE_DEFINE_ERROR(InfeasibleStart)
HEADSCOPE_DEFINE_ERROR(NoSuchTagInArticle)
// report
HEADSCOPE_DEFINE_ERROR(IncompleteGrid)
HEADSCOPE_DEFINE_ERROR(NotSquareType)

#undef HEADSCOPE_DEFINE_ERROR

}  // namespace headscope
