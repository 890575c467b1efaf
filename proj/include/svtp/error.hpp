/*
 * Copyright 2026 The svtp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */
#pragma once

#include <stdexcept>
#include <string>

namespace svtp {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (nu <= 2, x <= 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A matrix could not be factorized even after jitter retries.
class DecompositionError : public Error {
public:
    using Error::Error;
};

/// Incompatible dimensions between arguments.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration or input data.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite objective or gradient during optimization.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace svtp
