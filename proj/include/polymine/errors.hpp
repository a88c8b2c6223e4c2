#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace polymine {

// Base for all library errors. `kind` is a stable machine-readable tag the
// CLI emits as JSON on stderr; `what()` carries the human-readable detail.
struct Error : std::runtime_error {
  std::string kind;
  Error(std::string k, const std::string& msg) : std::runtime_error(msg), kind(std::move(k)) {}
};

#define POLYMINE_DEFINE_ERROR(Name)                   \
  struct Name : Error {                               \
    explicit Name(const std::string& msg = #Name)     \
        : Error(#Name, msg) {}                        \
  };

// embedding_store
POLYMINE_DEFINE_ERROR(BadMagic)
POLYMINE_DEFINE_ERROR(DimMismatch)
POLYMINE_DEFINE_ERROR(NonFiniteValue)
POLYMINE_DEFINE_ERROR(ZeroNormRow)
POLYMINE_DEFINE_ERROR(DuplicateId)
POLYMINE_DEFINE_ERROR(MissingEmbedding)
POLYMINE_DEFINE_ERROR(MissingMetadata)
// vector_index
POLYMINE_DEFINE_ERROR(KExceedsTargets)
POLYMINE_DEFINE_ERROR(TooFewRows)
// miner
POLYMINE_DEFINE_ERROR(DegenerateDenominator)
POLYMINE_DEFINE_ERROR(EmptyStore)
POLYMINE_DEFINE_ERROR(NotNormalized)
POLYMINE_DEFINE_ERROR(MissingSpan)
POLYMINE_DEFINE_ERROR(UnsortedInput)
POLYMINE_DEFINE_ERROR(OverlappingVadUnits)
POLYMINE_DEFINE_ERROR(MixedAudioUri)
// lid_calibration
POLYMINE_DEFINE_ERROR(MissingLidScore)
// corpus_filters
POLYMINE_DEFINE_ERROR(MissingField)
// etox_toxicity
POLYMINE_DEFINE_ERROR(EmptyCorpus)
// blaser
POLYMINE_DEFINE_ERROR(NonFiniteLoss)
POLYMINE_DEFINE_ERROR(ConstantSeries)
// metrics
POLYMINE_DEFINE_ERROR(CountMismatch)
POLYMINE_DEFINE_ERROR(EmptyInput)
POLYMINE_DEFINE_ERROR(NonPositiveDenominator)
// io / cli
POLYMINE_DEFINE_ERROR(IoError)
POLYMINE_DEFINE_ERROR(ParseFailure)
POLYMINE_DEFINE_ERROR(ConfigError)

#undef POLYMINE_DEFINE_ERROR

}  // namespace polymine
