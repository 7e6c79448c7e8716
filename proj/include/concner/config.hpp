#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "concner/bilingen.hpp"
#include "concner/trainer.hpp"

namespace concner {

using KeyValues = std::map<std::string, std::string>;

// "key=value" lines; '#' starts a comment; blank lines ignored; surrounding
// whitespace trimmed. Throws ConfigError on malformed or duplicate keys.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

// Applies recognized keys on top of `base`. Unknown keys and unparsable
// values throw ConfigError naming the key.
GenConfig gen_config_from(const KeyValues& kv, GenConfig base = {});
TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {});

// Every field as key=value lines, re-readable by the functions above.
std::string format_gen_config(const GenConfig& config);
std::string format_train_config(const TrainConfig& config);

}  // namespace concner
