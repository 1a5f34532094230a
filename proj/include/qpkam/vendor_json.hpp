// vendor_json.hpp — single indirection point for the vendored nlohmann/json.

#pragma once

#include <json.hpp>
