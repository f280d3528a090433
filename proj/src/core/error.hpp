#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace sadag {

// All recoverable failures surface as sadag::Error. `stage` tags the pipeline
// stage for the CLI's exit message and failure rows.
class Error : public std::runtime_error {
public:
    explicit Error(std::string msg, std::string stage = "")
        : std::runtime_error(std::move(msg)), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

namespace detail {
inline void msg_cat(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_cat(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_cat(os, rest...);
}
template <typename... Parts>
std::string msg(const Parts&... parts) {
    std::ostringstream os;
    os.precision(17);
    msg_cat(os, parts...);
    return os.str();
}
}  // namespace detail

}  // namespace sadag

#define SADAG_THROW(...) throw ::sadag::Error(::sadag::detail::msg(__VA_ARGS__))

#define SADAG_CHECK(cond, ...)       \
    do {                             \
        if (!(cond)) {               \
            SADAG_THROW(__VA_ARGS__); \
        }                            \
    } while (0)
