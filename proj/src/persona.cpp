#include "semapop/persona.hpp"

#include "semapop/io_util.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace semapop {

std::string to_string(PersonaMode m) {
    switch (m) {
    case PersonaMode::Implicit: return "implicit";
    case PersonaMode::Grounded: return "grounded";
    case PersonaMode::Randomized: return "randomized";
    case PersonaMode::None: return "none";
    }
    return "implicit";
}

PersonaMode persona_mode_from_string(const std::string& s) {
    if (s == "implicit") return PersonaMode::Implicit;
    if (s == "grounded") return PersonaMode::Grounded;
    if (s == "randomized") return PersonaMode::Randomized;
    if (s == "none") return PersonaMode::None;
    throw std::runtime_error("unknown persona mode: " + s);
}

void LLMClientConfig::validate() const {
    if (temperature < 0.0) throw std::runtime_error("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::runtime_error("top_p must lie in (0, 1]");
    if (max_parallel < 1) throw std::runtime_error("max_parallel must be >= 1");
}

namespace {

std::string cell_text(const Population& pop, Index agent, const AttributeSchema& schema, Index j) {
    const auto& spec = schema.specs[static_cast<std::size_t>(j)];
    const double v = pop.values(agent, j);
    if (spec.kind == AttrKind::Categorical)
        return spec.categories[static_cast<std::size_t>(v)];
    if (spec.integer_valued) return std::to_string(static_cast<long long>(std::nearbyint(v)));
    return format_real(v);
}

std::string attribute_listing(const Population& pop, Index agent, const AttributeSchema& schema) {
    std::ostringstream out;
    for (Index j = 0; j < schema.size(); ++j) {
        const auto& spec = schema.specs[static_cast<std::size_t>(j)];
        out << "- " << spec.name << " (" << to_string(spec.group)
            << "): " << cell_text(pop, agent, schema, j) << '\n';
    }
    return out.str();
}

} // namespace

std::string render_prompt(const Population& pop, Index agent, const AttributeSchema& schema,
                          PersonaMode mode) {
    if (mode == PersonaMode::None)
        throw std::runtime_error("no prompt exists for the zero-embedding persona setting");
    if (agent < 0 || agent >= pop.n()) throw std::runtime_error("agent index out of range");
    std::ostringstream out;
    out << "You are writing a short persona for one survey respondent.\n";
    switch (mode) {
    case PersonaMode::Implicit:
        out << "Respondent profile:\n"
            << attribute_listing(pop, agent, schema)
            << "Write a 3-5 sentence persona covering this person's daily life, household "
               "situation and travel habits. Use abstract, qualitative wording; do not repeat "
               "exact numerical values or category codes from the profile.\n";
        break;
    case PersonaMode::Grounded:
        out << "Respondent profile:\n"
            << attribute_listing(pop, agent, schema)
            << "Write a 3-5 sentence persona covering this person's daily life, household "
               "situation and travel habits. State the listed attribute values explicitly and "
               "keep every number exact.\n";
        break;
    case PersonaMode::Randomized:
        out << "Write a 3-5 sentence persona describing a plausible person's daily life, "
               "household situation and travel habits. Invent the details freely.\n";
        break;
    case PersonaMode::None:
        break;
    }
    return out.str();
}

std::string persona_cache_key(const Population& pop, Index agent, PersonaMode mode,
                              const std::string& model_name, const std::string& variant) {
    std::ostringstream row;
    for (Index j = 0; j < pop.values.cols(); ++j) row << format_real(pop.values(agent, j)) << ',';
    std::uint64_t h = fnv1a64(row.str());
    h = fnv1a64(to_string(mode), h);
    h = fnv1a64(model_name, h);
    if (!variant.empty()) h = fnv1a64(variant, h);
    return hex64(h);
}

namespace {

struct ParsedUrl {
    std::string base; // scheme://host:port
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::runtime_error("endpoint URL missing scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

// Single chat-completion request; throws on transport or protocol errors.
std::string chat_once(const ParsedUrl& url, const LLMClientConfig& cfg, const std::string& prompt) {
    httplib::Client cli(url.base);
    cli.set_connection_timeout(std::chrono::milliseconds(
        static_cast<long long>(cfg.request_timeout_s * 1000)));
    cli.set_read_timeout(std::chrono::milliseconds(
        static_cast<long long>(cfg.request_timeout_s * 1000)));
    if (!cfg.api_key.empty()) cli.set_bearer_token_auth(cfg.api_key);

    nlohmann::json body;
    body["model"] = cfg.model_name;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = cfg.temperature;
    body["top_p"] = cfg.top_p;
    body["max_tokens"] = cfg.max_new_tokens;

    auto res = cli.Post(url.path, body.dump(), "application/json");
    if (!res) throw std::runtime_error("request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw std::runtime_error("HTTP status " + std::to_string(res->status));
    nlohmann::json reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
}

std::string chat_with_retries(const ParsedUrl& url, const LLMClientConfig& cfg,
                              const std::string& prompt) {
    std::string last_error;
    for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        try {
            return chat_once(url, cfg, prompt);
        } catch (const std::exception& e) {
            last_error = e.what();
            if (attempt < cfg.max_attempts) {
                const double delay = cfg.backoff_base_s * std::pow(2.0, attempt - 1);
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }
        }
    }
    throw std::runtime_error(last_error);
}

} // namespace

GenerationResult generate_personas(const std::vector<std::string>& prompts,
                                   const LLMClientConfig& client) {
    client.validate();
    GenerationResult result;
    result.texts.assign(prompts.size(), "");
    if (prompts.empty()) return result;
    const ParsedUrl url = parse_url(client.endpoint);

    std::vector<std::optional<std::string>> failures(prompts.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= prompts.size()) return;
            try {
                result.texts[i] = chat_with_retries(url, client, prompts[i]);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    const int workers = std::min<int>(client.max_parallel, static_cast<int>(prompts.size()));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (failures[i]) {
            result.failed.push_back(static_cast<Index>(i));
            result.errors.push_back(*failures[i]);
        }
    }
    return result;
}

namespace {

std::filesystem::path persona_cache_file(const std::filesystem::path& dir) {
    return dir / "personas.json";
}

nlohmann::json load_persona_map(const std::filesystem::path& dir) {
    const auto path = persona_cache_file(dir);
    if (!std::filesystem::exists(path)) return nlohmann::json::object();
    return nlohmann::json::parse(read_file(path));
}

} // namespace

void save_persona_cache(const std::filesystem::path& dir, const std::string& key,
                        const std::string& text) {
    DirectoryLock lock(dir);
    nlohmann::json map = load_persona_map(dir);
    map[key] = text;
    write_file(persona_cache_file(dir), map.dump(2));
}

std::optional<std::string> load_persona_cache(const std::filesystem::path& dir,
                                              const std::string& key) {
    nlohmann::json map = load_persona_map(dir);
    if (!map.contains(key)) return std::nullopt;
    return map[key].get<std::string>();
}

GenerationResult generate_personas_cached(const std::vector<PersonaRequest>& requests,
                                          const LLMClientConfig& client,
                                          const std::filesystem::path& cache_dir) {
    GenerationResult result;
    result.texts.assign(requests.size(), "");
    std::vector<std::size_t> miss_positions;
    std::vector<std::string> miss_prompts;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        if (auto hit = load_persona_cache(cache_dir, requests[i].key)) {
            result.texts[i] = *hit;
        } else {
            miss_positions.push_back(i);
            miss_prompts.push_back(requests[i].prompt);
        }
    }
    if (miss_prompts.empty()) return result;

    GenerationResult fresh = generate_personas(miss_prompts, client);
    std::vector<bool> failed_mask(miss_prompts.size(), false);
    for (Index f : fresh.failed) failed_mask[static_cast<std::size_t>(f)] = true;
    for (std::size_t m = 0; m < miss_positions.size(); ++m) {
        const std::size_t i = miss_positions[m];
        if (failed_mask[m]) {
            result.failed.push_back(static_cast<Index>(i));
        } else {
            result.texts[i] = fresh.texts[m];
            save_persona_cache(cache_dir, requests[i].key, fresh.texts[m]);
        }
    }
    for (const auto& e : fresh.errors) result.errors.push_back(e);
    return result;
}

} // namespace semapop
