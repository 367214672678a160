#pragma once

#include <stdexcept>
#include <string>

namespace disentune {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map it to an exit code in one place.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class RangeError : public Error { public: using Error::Error; };
class VocabularyError : public Error { public: using Error::Error; };
class LengthError : public Error { public: using Error::Error; };
class InputError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class DependencyError : public Error { public: using Error::Error; };
class BenchmarkQualityError : public Error { public: using Error::Error; };
class UsageError : public Error { public: using Error::Error; };

}  // namespace disentune
