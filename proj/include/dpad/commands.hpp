#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace dpad {

enum class Command { decode, compare, analyze, sampler_check, cost };

struct CliOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
};

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

int run_command(Command command, const CliOptions & options, std::ostream & out, std::ostream & err);

} // namespace dpad
