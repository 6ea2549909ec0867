#pragma once

#include <stdexcept>
#include <string>

namespace bayescoh {

// Root of the library's error hierarchy. Every failure the library raises on
// purpose derives from this, so callers can catch one type at the boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- dataset ---------------------------------------------------------------

// Input is not well-formed JSON (or JSONL) at all.
class ParseError : public Error {
 public:
  using Error::Error;
};

// JSON parsed but does not match the expected shape (missing field, wrong
// type, duplicate class, empty elicitation, ...).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A cross-reference inside the dataset points at something that does not
// exist (e.g. evidence naming an unknown class).
class ReferenceError : public Error {
 public:
  using Error::Error;
};

// A value cannot be written out in the requested format.
class SerializationError : public Error {
 public:
  using Error::Error;
};

// --- backends --------------------------------------------------------------

// Network-level failure talking to a remote scoring endpoint (connect,
// timeout, persistent 5xx after retries).
class TransportError : public Error {
 public:
  using Error::Error;
};

// The remote endpoint answered, but with something that violates the wire
// contract (malformed body, positive log-probability, unexpected 4xx).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// The endpoint rejected our credentials (401/403).
class AuthError : public Error {
 public:
  using Error::Error;
};

// A temperature other than 1 was requested from a backend that cannot
// rescale its distributions.
class UnsupportedTemperature : public Error {
 public:
  using Error::Error;
};

// The endpoint could not tokenize the continuation against the context (422).
class TokenizationError : public Error {
 public:
  using Error::Error;
};

// A synthetic backend could not map a context/continuation pair onto its
// world (unknown string, no conditioning class in scope, ...).
class BindingError : public Error {
 public:
  using Error::Error;
};

// A synthetic world or backend was configured with invalid parameters
// (probabilities off-simplex, gradient outside (0,1], ...).
class ConstructionError : public Error {
 public:
  using Error::Error;
};

// The on-disk score cache could not be opened, read, or appended to.
class StoreError : public Error {
 public:
  using Error::Error;
};

// --- metrics ---------------------------------------------------------------

// Paired inputs have different lengths.
class LengthMismatch : public Error {
 public:
  using Error::Error;
};

// Not enough usable observations for the requested statistic.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

// An input has zero variance, so a correlation or regression slope is
// undefined.
class DegenerateVariance : public Error {
 public:
  using Error::Error;
};

// --- report ----------------------------------------------------------------

// An output file or directory could not be written.
class SinkError : public Error {
 public:
  using Error::Error;
};

// A numeric input is outside its documented domain (e.g. nonpositive
// parameter count on a log scale).
class RangeError : public Error {
 public:
  using Error::Error;
};

}  // namespace bayescoh
