// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mapprior {

    // Base of every error raised by the library. The CLI maps subclasses to exit codes.
    class Error : public std::runtime_error {
    public:
        using std::runtime_error::runtime_error;
    };

    class ConfigError : public Error {
    public:
        using Error::Error;
    };

    class InvalidTransformError : public Error {
    public:
        using Error::Error;
    };

    class DegenerateRotationError : public Error {
    public:
        using Error::Error;
    };

    class ShapeError : public Error {
    public:
        using Error::Error;
    };

    class IndexError : public Error {
    public:
        using Error::Error;
    };

    class AlignmentError : public Error {
    public:
        using Error::Error;
    };

    class InsufficientSupportError : public Error {
    public:
        using Error::Error;
    };

    class DegenerateGeometryError : public Error {
    public:
        using Error::Error;
    };

    class SpecError : public Error {
    public:
        using Error::Error;
    };

    class InputError : public Error {
    public:
        using Error::Error;
    };

    // Raised when a loss or gradient stops being finite.
    class NumericError : public Error {
    public:
        using Error::Error;
    };

    class DecodeError : public Error {
    public:
        DecodeError(const std::string& what, std::size_t offset)
            : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
              offset_(offset) {}

        std::size_t offset() const noexcept { return offset_; }

    private:
        std::size_t offset_;
    };

} // namespace mapprior
