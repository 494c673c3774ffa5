#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace camulenet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class EmptyAudio : public Error { public: using Error::Error; };
class CorruptAudio : public Error { public: using Error::Error; };
class EmptyInput : public Error { public: using Error::Error; };
class EmptySequence : public Error { public: using Error::Error; };
class CorruptFile : public Error { public: using Error::Error; };
class ManifestMismatch : public Error { public: using Error::Error; };
class ManifestError : public Error { public: using Error::Error; };
class LabelError : public Error { public: using Error::Error; };
class EmptySplit : public Error { public: using Error::Error; };
class InsufficientSpeakers : public Error { public: using Error::Error; };
class UndefinedKappa : public Error { public: using Error::Error; };
class SpeakerLeakError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

// Raised by ops when CAMULENET_CHECK_FINITE is enabled and a result is NaN/Inf.
class NonFiniteError : public Error { public: using Error::Error; };

class DivergedError : public Error {
 public:
  DivergedError(std::size_t epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace camulenet
