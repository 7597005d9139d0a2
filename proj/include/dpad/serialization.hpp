#pragma once

#include "dpad/decoder.hpp"
#include "dpad/error.hpp"
#include "dpad/model.hpp"
#include "dpad/suffix_plan.hpp"

#include <json.hpp>

namespace dpad {

// Parsing is strict: unknown keys and wrong types raise ConfigError naming
// the offending key.
void to_json(nlohmann::ordered_json & j, const ModelConfig & c);
void from_json(const nlohmann::ordered_json & j, ModelConfig & c);

void to_json(nlohmann::ordered_json & j, const DropoutConfig & c);
void from_json(const nlohmann::ordered_json & j, DropoutConfig & c);

void to_json(nlohmann::ordered_json & j, const DecodePolicy & p);
void from_json(const nlohmann::ordered_json & j, DecodePolicy & p);

void to_json(nlohmann::ordered_json & j, const StepRecord & r);
void from_json(const nlohmann::ordered_json & j, StepRecord & r);

void to_json(nlohmann::ordered_json & j, const BlockRecord & r);
void from_json(const nlohmann::ordered_json & j, BlockRecord & r);

void to_json(nlohmann::ordered_json & j, const TraceTotals & t);
void from_json(const nlohmann::ordered_json & j, TraceTotals & t);

void to_json(nlohmann::ordered_json & j, const DecodeTrace & t);
void from_json(const nlohmann::ordered_json & j, DecodeTrace & t);

namespace json_detail {

// Rejects keys outside `allowed`; `where` prefixes the diagnostic.
void check_keys(const nlohmann::ordered_json & j, std::initializer_list<const char *> allowed, const char * where);

template <typename T>
void read(const nlohmann::ordered_json & j, const char * key, T & out, const char * where) {
    auto it = j.find(key);
    if (it == j.end()) {
        return;
    }
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception & e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

template <typename T>
void require(const nlohmann::ordered_json & j, const char * key, T & out, const char * where) {
    if (!j.contains(key)) {
        throw ConfigError(std::string(where) + ": missing required key '" + key + "'");
    }
    read(j, key, out, where);
}

} // namespace json_detail

} // namespace dpad
