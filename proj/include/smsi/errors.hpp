#pragma once

#include <stdexcept>
#include <string>

namespace smsi {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- JPEG metadata parsing ---

class JpegError : public Error {
public:
    using Error::Error;
};

class MissingSoi : public JpegError {
public:
    MissingSoi() : JpegError("not a JPEG stream: missing SOI marker") {}
};

class TruncatedSegment : public JpegError {
public:
    explicit TruncatedSegment(const std::string& what) : JpegError(what) {}
};

class UnexpectedEof : public JpegError {
public:
    explicit UnexpectedEof(const std::string& what) : JpegError(what) {}
};

class BadMarker : public JpegError {
public:
    explicit BadMarker(const std::string& what) : JpegError(what) {}
};

class NoDqt : public JpegError {
public:
    NoDqt() : JpegError("stream carries no quantization table") {}
};

class BadTableId : public JpegError {
public:
    explicit BadTableId(const std::string& what) : JpegError(what) {}
};

class BadTableValue : public JpegError {
public:
    explicit BadTableValue(const std::string& what) : JpegError(what) {}
};

// --- tensor / network core ---

class NnError : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public NnError {
public:
    explicit ShapeMismatch(const std::string& what) : NnError(what) {}
};

class StaleCache : public NnError {
public:
    explicit StaleCache(const std::string& what) : NnError(what) {}
};

class LabelOutOfRange : public NnError {
public:
    explicit LabelOutOfRange(const std::string& what) : NnError(what) {}
};

class EmptyDataset : public NnError {
public:
    EmptyDataset() : NnError("training set is empty") {}
    explicit EmptyDataset(const std::string& what) : NnError(what) {}
};

class UnsupportedInputSize : public NnError {
public:
    explicit UnsupportedInputSize(const std::string& what) : NnError(what) {}
};

// --- random forest ---

class ForestError : public Error {
public:
    using Error::Error;
};

class RaggedFeatures : public ForestError {
public:
    explicit RaggedFeatures(const std::string& what) : ForestError(what) {}
};

class LengthMismatch : public ForestError {
public:
    explicit LengthMismatch(const std::string& what) : ForestError(what) {}
};

// --- cascade ---

class CascadeError : public Error {
public:
    using Error::Error;
};

class UnknownPrimary : public CascadeError {
public:
    explicit UnknownPrimary(const std::string& what) : CascadeError(what) {}
};

class EmptyInput : public CascadeError {
public:
    explicit EmptyInput(const std::string& what) : CascadeError(what) {}
};

class BadTaxonomy : public CascadeError {
public:
    explicit BadTaxonomy(const std::string& what) : CascadeError(what) {}
};

// --- platform simulator ---

class SimError : public Error {
public:
    using Error::Error;
};

class TooSmall : public SimError {
public:
    explicit TooSmall(const std::string& what) : SimError(what) {}
};

class InvalidProfile : public SimError {
public:
    explicit InvalidProfile(const std::string& what) : SimError(what) {}
};

class ChainTooLong : public SimError {
public:
    explicit ChainTooLong(const std::string& what) : SimError(what) {}
};

// --- dataset ---

class DataError : public Error {
public:
    using Error::Error;
};

class ClassTooSmall : public DataError {
public:
    explicit ClassTooSmall(const std::string& what) : DataError(what) {}
};

class ImageTooSmall : public DataError {
public:
    explicit ImageTooSmall(const std::string& what) : DataError(what) {}
};

class BadManifest : public DataError {
public:
    explicit BadManifest(const std::string& what) : DataError(what) {}
};

class BadCache : public DataError {
public:
    explicit BadCache(const std::string& what) : DataError(what) {}
};

// --- CLI / persistence ---

class CliError : public Error {
public:
    using Error::Error;
};

class MissingCache : public CliError {
public:
    explicit MissingCache(const std::string& what) : CliError(what) {}
};

class ConfigInvalid : public CliError {
public:
    explicit ConfigInvalid(const std::string& what) : CliError(what) {}
};

class NoSuchHead : public CliError {
public:
    explicit NoSuchHead(const std::string& what) : CliError(what) {}
};

class SizeMismatch : public CliError {
public:
    explicit SizeMismatch(const std::string& what) : CliError(what) {}
};

class ModelError : public Error {
public:
    using Error::Error;
};

} // namespace smsi
