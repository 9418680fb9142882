#pragma once

#include <stdexcept>
#include <string>

namespace facever {

// Every failure the library raises carries a short machine-parsable class
// name; the CLI prints it as `error: <class>: <message>`.
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& message)
      : std::runtime_error(message), class_(std::move(error_class)) {}

  const std::string& error_class() const noexcept { return class_; }

 private:
  std::string class_;
};

#define FACEVER_DEFINE_ERROR(Name, tag)                                 \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  }

FACEVER_DEFINE_ERROR(DimensionError, "dimension");
FACEVER_DEFINE_ERROR(ConfigError, "config");
FACEVER_DEFINE_ERROR(LabelError, "label");
FACEVER_DEFINE_ERROR(TrainingDiverged, "training-diverged");
FACEVER_DEFINE_ERROR(ArchitectureError, "architecture");
FACEVER_DEFINE_ERROR(IngestionError, "ingestion");
FACEVER_DEFINE_ERROR(ParseError, "parse");
FACEVER_DEFINE_ERROR(GeometryError, "geometry");
FACEVER_DEFINE_ERROR(NormalizationError, "normalization");
FACEVER_DEFINE_ERROR(FusionError, "fusion");
FACEVER_DEFINE_ERROR(DegenerateInput, "degenerate-input");
FACEVER_DEFINE_ERROR(FittingError, "fitting");
FACEVER_DEFINE_ERROR(ProtocolError, "protocol");
FACEVER_DEFINE_ERROR(FormatError, "format");

#undef FACEVER_DEFINE_ERROR

}  // namespace facever
