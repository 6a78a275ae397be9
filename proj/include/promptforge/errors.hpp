#pragma once

#include <stdexcept>
#include <string>

namespace promptforge {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition or passed an invalid config.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Provider-side failures.
class ProviderError : public Error {
 public:
  using Error::Error;
};

class AuthError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class MalformedProviderReply : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class ScriptMiss : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

// Data-side failures.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class UnknownLabel : public DataError {
 public:
  using DataError::DataError;
};

class MissingGold : public DataError {
 public:
  using DataError::DataError;
};

class TooFewLabelled : public DataError {
 public:
  using DataError::DataError;
};

class StratifyWithoutGold : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public DataError {
 public:
  using DataError::DataError;
};

/// A long-running operation observed a stop request.
class Cancelled : public Error {
 public:
  Cancelled() : Error("operation cancelled") {}
};

}  // namespace promptforge
