#pragma once

// Key-value experiment config files, run manifests and summary tables.
//
//   # comment
//   schemes = [dtfixup, xavier]
//   depths = [2, 4, 8, 16, 32]
//   relational = true
//   train.steps = 2000
//
// Every ExperimentConfig field has exactly one key; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dtfixup/diagnostics.hpp"
#include "dtfixup/errors.hpp"
#include "dtfixup/harness.hpp"

namespace dtfixup {

// All problems found in one pass, each prefixed with its line number.
class ConfigParseError : public ConfigError {
public:
    explicit ConfigParseError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

// Keys in canonical order.
const std::vector<std::string_view>& config_keys();

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical form: every key, in config_keys() order, no comments.
std::string serialize_config(const ExperimentConfig& config);
// FNV-1a 64 of the canonical form; blind to comments, spacing and key order.
std::uint64_t config_hash(const ExperimentConfig& config);
std::string config_hash_hex(const ExperimentConfig& config);

struct RunManifest {
    std::string config_hash;
    std::string tool_version;
    std::vector<std::pair<std::string, std::uint64_t>> run_seeds;  // run label -> derived weight seed
    std::string started;                                            // UTC, ISO 8601
    std::string finished;
    std::vector<std::string> outputs;

    std::string to_text() const;
};

std::string tool_version();
std::string utc_timestamp();
RunManifest make_manifest(const ExperimentConfig& config, std::string_view command);

// Fixed-width table, one row per (scheme, relational, N) with median
// diagnostics over mu and seeds. A cell carries a trailing "✗" when it falls
// outside the band: jacobian and update ratio against the shallowest row of
// the same scheme, cond*N against [1/band, band]. Throws UsageError when empty.
std::string summarize(const std::vector<DiagnosticsReport>& reports, double band = 4.0);
std::string summarize(const std::vector<DiagnosticsRow>& rows, double band = 4.0);

} // namespace dtfixup
