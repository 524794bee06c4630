#pragma once

#include <stdexcept>
#include <string>

namespace xlkv {

// Every engine error carries a stable kind tag so the CLI can emit a
// single-line machine-parsable "error: <kind>: <message>".
class error : public std::runtime_error {
public:
    error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct config_error : error {
    explicit config_error(const std::string& msg) : error("config", msg) {}
};

struct shape_error : error {
    explicit shape_error(const std::string& msg) : error("shape", msg) {}
};

struct data_error : error {
    explicit data_error(const std::string& msg) : error("data", msg) {}
};

struct state_error : error {
    explicit state_error(const std::string& msg) : error("state", msg) {}
};

struct capacity_error : error {
    explicit capacity_error(const std::string& msg) : error("capacity", msg) {}
};

struct train_error : error {
    explicit train_error(const std::string& msg) : error("train", msg) {}
};

struct io_error : error {
    explicit io_error(const std::string& msg) : error("io", msg) {}
};

} // namespace xlkv
