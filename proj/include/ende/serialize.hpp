#pragma once

// JSON mappings for corpus records. Kept out of corpus.hpp so that only the
// translation units doing I/O pay for nlohmann/json.

#include <json.hpp>

#include "ende/corpus.hpp"

namespace ende {

using Json = nlohmann::json;

Json span_to_json(const EntitySpan& span);
EntitySpan span_from_json(const Json& j);

Json spans_to_json(const std::vector<EntitySpan>& spans);
std::vector<EntitySpan> spans_from_json(const Json& j);

// One JSONL record. Boundary fields are written only when present.
Json example_to_json(const AnnotatedExample& example);
// Structural parse only; validation is validate_example's job.
AnnotatedExample example_from_json(const Json& j);

}  // namespace ende
