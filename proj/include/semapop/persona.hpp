#pragma once

#include "semapop/population.hpp"
#include "semapop/schema.hpp"
#include "semapop/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semapop {

enum class PersonaMode { Implicit, Grounded, Randomized, None };

std::string to_string(PersonaMode m);
PersonaMode persona_mode_from_string(const std::string& s);

struct PersonaRecord {
    Index agent_index = -1;
    PersonaMode mode = PersonaMode::Implicit;
    std::string prompt;
    std::string persona_text;                 // empty when mode == None
    std::optional<Index> embedding_ref;       // row in an EmbeddingMatrix
};

struct LLMClientConfig {
    std::string endpoint;       // e.g. http://127.0.0.1:8080/v1/chat/completions
    std::string model_name = "unspecified";
    std::string api_key;        // sent as a bearer token when non-empty
    double temperature = 0.9;
    double top_p = 0.9;
    int max_new_tokens = 512;
    double request_timeout_s = 30.0;
    int max_parallel = 1;
    int max_attempts = 3;
    double backoff_base_s = 1.0;

    void validate() const;
};

// Renders the persona prompt for one agent. Implicit mode asks for
// qualitative wording around the agent's attributes, grounded mode asks for
// the exact values, randomized mode carries no agent information.
std::string render_prompt(const Population& pop, Index agent, const AttributeSchema& schema,
                          PersonaMode mode);

// Canonical cache key for a persona request.
std::string persona_cache_key(const Population& pop, Index agent, PersonaMode mode,
                              const std::string& model_name, const std::string& variant = "");

struct GenerationResult {
    std::vector<std::string> texts;  // one per prompt; empty on failure
    std::vector<Index> failed;       // indices with no response
    std::vector<std::string> errors; // aligned with `failed`
};

// One chat-completion call per prompt, answered in input order, with up to
// max_parallel requests in flight and per-request retries.
GenerationResult generate_personas(const std::vector<std::string>& prompts,
                                   const LLMClientConfig& client);

struct PersonaRequest {
    std::string key;
    std::string prompt;
};

// Cache-aware variant: hits are served from the persona cache, misses are
// requested and persisted before returning.
GenerationResult generate_personas_cached(const std::vector<PersonaRequest>& requests,
                                          const LLMClientConfig& client,
                                          const std::filesystem::path& cache_dir);

// Persona text cache: a locked JSON map from key to text.
void save_persona_cache(const std::filesystem::path& dir, const std::string& key,
                        const std::string& text);
std::optional<std::string> load_persona_cache(const std::filesystem::path& dir,
                                              const std::string& key);

} // namespace semapop
