#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvox/common.hpp"

namespace hvox {

// Every field is addressable as a `key = value` line in a config file and as
// a --key flag (underscores become dashes). The field list below is the
// single source of truth for parsing, serialization and the CLI, so the
// three stay bijective.
//
// X(name, type, default)
#define HVOX_CONFIG_FIELDS(X)                        \
    X(seed, U64, 1)                                  \
    X(steps, I64, 2000)                              \
    X(batch, I64, 16)                                \
    X(resolution, I64, 32)                           \
    X(latent_dim, I64, 128)                          \
    X(gen_base_channels, I64, 32)                    \
    X(disc_base_channels, I64, 16)                   \
    X(mapping_hidden, I64, 128)                      \
    X(lr_g, F64, 2e-4)                               \
    X(lr_d, F64, 2e-4)                               \
    X(adam_beta1, F64, 0.5)                          \
    X(adam_beta2, F64, 0.999)                        \
    X(adam_eps, F64, 1e-8)                           \
    X(lambda_identity, F64, 1.0)                     \
    X(lambda_style, F64, 1.0)                        \
    X(azimuth_min, F64, -50.0)                       \
    X(azimuth_max, F64, 50.0)                        \
    X(elevation_min, F64, -17.5)                     \
    X(elevation_max, F64, 17.5)                      \
    X(scale_min, F64, 0.9)                           \
    X(scale_max, F64, 1.1)                           \
    X(no_rotation, BOOL, false)                      \
    X(traditional_z, BOOL, false)                    \
    X(identity_updates_discriminator, BOOL, true)    \
    X(dataset, STR, "synthetic")                     \
    X(out_dir, STR, "out")                           \
    X(checkpoint_interval, I64, 500)                 \
    X(sample_interval, I64, 250)                     \
    X(threads, I64, 0)                               \
    X(synthetic_primitive, STR, "chair")             \
    X(synthetic_palette, I64, 6)                     \
    X(synthetic_bg_min, F64, -0.85)                  \
    X(synthetic_bg_max, F64, 0.6)                    \
    X(synthetic_azimuth_min, F64, -180.0)            \
    X(synthetic_azimuth_max, F64, 180.0)             \
    X(synthetic_count, I64, 512)

struct TrainConfig {
#define HVOX_CONFIG_DECLARE_U64(name, dflt) uint64_t name = dflt;
#define HVOX_CONFIG_DECLARE_I64(name, dflt) int64_t name = dflt;
#define HVOX_CONFIG_DECLARE_F64(name, dflt) double name = dflt;
#define HVOX_CONFIG_DECLARE_BOOL(name, dflt) bool name = dflt;
#define HVOX_CONFIG_DECLARE_STR(name, dflt) std::string name = dflt;
#define HVOX_CONFIG_DECLARE(name, type, dflt) HVOX_CONFIG_DECLARE_##type(name, dflt)
    HVOX_CONFIG_FIELDS(HVOX_CONFIG_DECLARE)
#undef HVOX_CONFIG_DECLARE
#undef HVOX_CONFIG_DECLARE_U64
#undef HVOX_CONFIG_DECLARE_I64
#undef HVOX_CONFIG_DECLARE_F64
#undef HVOX_CONFIG_DECLARE_BOOL
#undef HVOX_CONFIG_DECLARE_STR

    void validate() const;
};

/// Assigns one field by key. Throws ValueError naming the key when unknown
/// or unparsable.
void config_set(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Flat `key = value` text, one line per field, full precision.
std::string config_serialize(const TrainConfig& cfg);

/// Parses `key = value` lines over a base config. '#' starts a comment.
TrainConfig config_parse(const std::string& text, const TrainConfig& base = TrainConfig{});

TrainConfig config_load_file(const std::string& path, const TrainConfig& base = TrainConfig{});

std::vector<std::string> config_keys();

}  // namespace hvox
