#pragma once

#include <stdexcept>
#include <string>

namespace tsserve {

// All library errors derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::string source, std::size_t line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what),
          source_(std::move(source)),
          line_(line) {}

    const std::string& source() const { return source_; }
    std::size_t line() const { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class UnknownSkill : public Error {
public:
    explicit UnknownSkill(const std::string& skill)
        : Error("unknown skill '" + skill + "'"), skill_(skill) {}
    const std::string& skill() const { return skill_; }

private:
    std::string skill_;
};

class EmptyTracePool : public Error {
public:
    EmptyTracePool() : Error("workload trace pool is empty") {}
};

class OutOfMemory : public Error {
public:
    using Error::Error;
};

class UnknownPolicy : public Error {
public:
    explicit UnknownPolicy(const std::string& name) : Error("unknown scheduling policy '" + name + "'") {}
};

class IncompleteRequest : public Error {
public:
    using Error::Error;
};

class InstanceTooLarge : public Error {
public:
    using Error::Error;
};

class InfeasibleSchedule : public Error {
public:
    using Error::Error;
};

}  // namespace tsserve
