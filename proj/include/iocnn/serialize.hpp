#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "iocnn/constraints.hpp"
#include "iocnn/model.hpp"

namespace iocnn {

struct ChecksumError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// CRC-32 (IEEE, reflected, poly 0xEDB88320).
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

// Locale-independent decimal text with 17 significant digits; round-trips
// every finite double exactly.
std::string format_g17(double v);
// Shortest representation that round-trips; used in CSV output.
std::string format_shortest(double v);
double parse_double(const std::string& s);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const ConstraintPolicy& policy);
ConstraintPolicy policy_from_json(const nlohmann::json& j);

// Model file: "IOCNN <version>" line, a JSON header line (layer specs,
// shapes, constraint flags), one block per parameter tensor as 17-digit
// decimal text, and a trailing CRC32 of everything above it.
void save_model(const Model& model, const std::string& path,
                const std::optional<ConstraintPolicy>& policy = std::nullopt);

struct LoadedModel {
    Model model;
    std::optional<ConstraintPolicy> policy;
};

// Throws VersionError / ChecksumError / std::runtime_error on bad files.
LoadedModel load_model(const std::string& path);

}  // namespace iocnn
