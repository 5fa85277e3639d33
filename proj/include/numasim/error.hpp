#pragma once

#include <stdexcept>
#include <string>

namespace numasim {

// Invalid machine/scenario description. The CLI maps this to exit status 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Precondition violation on a page-table operation.
class PageTableError : public std::runtime_error {
public:
    enum class Kind { MappingExists, NotMapped, DuplicateReplica, NoSuchReplica, LastReplica, OutOfRange };

    PageTableError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class TopologyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace numasim
