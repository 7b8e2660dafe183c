#ifndef ADVCL_ERRORS_HPP
#define ADVCL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace advcl {

// Every failure raised by the library derives from Error so that callers (the
// CLI in particular) can report a category without string matching.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    [[nodiscard]] const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct StateError : Error {
    explicit StateError(const std::string& what) : Error("state", what) {}
};

struct AttackError : Error {
    explicit AttackError(const std::string& what) : Error("attack", what) {}
};

// Raised when a training loop sees a non-finite loss. Carries the path of the
// last checkpoint that was written with finite parameters (may be empty).
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::string last_good)
        : Error("training", what), last_good_checkpoint_(std::move(last_good)) {}

    [[nodiscard]] const std::string& last_good_checkpoint() const noexcept { return last_good_checkpoint_; }

private:
    std::string last_good_checkpoint_;
};

inline void require(bool cond, const std::string& msg)
{
    if (!cond) {
        throw ValidationError(msg);
    }
}

} // namespace advcl

#endif // ADVCL_ERRORS_HPP
