#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace jsq::cli {

/// Parse or validation failure, with the source line when it came from a file.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything one run needs. Defaults depend on the command (see default_config).
struct ExperimentConfig {
    std::string command;

    // model
    int n = 100;
    int b = 1;
    double beta = 1.0;
    std::vector<int> ladder = {100};  // n values; a single entry except for `rate`
    std::vector<std::string> functions;

    // simulation budgets
    int reps = 1;
    double dt = 1e-3;
    double horizon = 1e4;
    double burn_in = 10.0;
    std::uint64_t seed = 1;
    std::string scheme = "projection";
    long every = 20;
    bool epsilon = true;

    // command specific
    double ruin_p = 0.5, ruin_q = 0.5, ruin_s = 0.5;
    int ruin_z = 1, ruin_a = 2;
    std::vector<int> state;  // coupling start q; empty means the default grid
    int theta = 1;
    std::optional<double> gamma;
    int per_axis = 25;
    double cushion = 0.02;

    std::string output_dir;

    /// Every key that was set and its value as written, for the manifest.
    std::map<std::string, std::string> settings;
    std::vector<std::string> warnings;
};

const std::vector<std::string>& command_names();

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "JSQLAB_OUTPUT_DIR";

/// The output directory used when none is configured: $JSQLAB_OUTPUT_DIR, else "jsqlab_out".
std::string default_output_dir();

ExperimentConfig default_config(const std::string& command);

/// Sets one key ("model.n", "simulation.dt", ... or the bare key when unambiguous).
/// `where` prefixes error messages.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                   const std::string& where = "");

/// Key-value text with [section] headers and '#' comments.
void parse_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& source = "<config>");

/// Reads, parses and validates a config file for `command`.
ExperimentConfig load_config(const std::string& path, const std::string& command = "rate");

/// Checks every field, fills warnings; throws ConfigError.
void validate(ExperimentConfig& cfg);

std::string sha256_hex(const std::string& data);

/// The whole program: exit 0 on success, 1 on a runtime failure, 2 on usage or
/// validation errors, 3 when a check the command runs fails, 4 outside the regime.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace jsq::cli
