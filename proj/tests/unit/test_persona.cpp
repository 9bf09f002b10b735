#include "doctest.h"

#include "semapop/persona.hpp"
#include "semapop/toy.hpp"

#include <atomic>
#include <filesystem>
#include <thread>

#include "httplib.h"
#include "json.hpp"

using namespace semapop;

namespace {

struct StubServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit StubServer(std::function<std::string(const std::string&)> reply) {
        server.Post("/v1/chat/completions", [reply](const httplib::Request& req,
                                                    httplib::Response& res) {
            const auto body = nlohmann::json::parse(req.body);
            const std::string prompt = body["messages"][0]["content"].get<std::string>();
            nlohmann::json out;
            out["choices"] = {{{"message", {{"role", "assistant"}, {"content", reply(prompt)}}}}};
            res.set_content(out.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this]() { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~StubServer() {
        server.stop();
        thread.join();
    }

    LLMClientConfig config() const {
        LLMClientConfig cfg;
        cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
        cfg.model_name = "stub";
        cfg.backoff_base_s = 0.01;
        return cfg;
    }
};

std::pair<Population, AttributeSchema> toy_agents() {
    const ToyJointSpec spec = toy_travel_spec();
    return {make_toy_population(spec, 5, 21), spec.schema()};
}

} // namespace

TEST_CASE("render_prompt modes") {
    const auto [pop, schema] = toy_agents();

    const std::string p1 = render_prompt(pop, 0, schema, PersonaMode::Implicit);
    const std::string p2 = render_prompt(pop, 0, schema, PersonaMode::Implicit);
    CHECK(p1 == p2); // pure function

    // randomized prompts carry no agent information: identical across agents
    const std::string r1 = render_prompt(pop, 0, schema, PersonaMode::Randomized);
    const std::string r2 = render_prompt(pop, 1, schema, PersonaMode::Randomized);
    CHECK(r1 == r2);
    CHECK(r1.find("TransitTrips") == std::string::npos);

    // grounded prompts contain the literal attribute value
    const std::string g = render_prompt(pop, 2, schema, PersonaMode::Grounded);
    const auto transit = std::to_string(static_cast<long long>(pop.values(2, 3)));
    CHECK(g.find("TransitTrips (behavioral): " + transit) != std::string::npos);

    // implicit prompts list the attributes too, with qualitative instructions
    const std::string im = render_prompt(pop, 2, schema, PersonaMode::Implicit);
    CHECK(im.find("TransitTrips") != std::string::npos);
    CHECK(im.find("qualitative") != std::string::npos);

    CHECK_THROWS(render_prompt(pop, 0, schema, PersonaMode::None));
    CHECK_THROWS(render_prompt(pop, 99, schema, PersonaMode::Implicit));
}

TEST_CASE("generate_personas answers in order through a local stub") {
    StubServer stub([](const std::string& prompt) { return "persona for: " + prompt; });
    const std::vector<std::string> prompts = {"first", "second", "third"};
    auto cfg = stub.config();
    cfg.max_parallel = 2;
    const GenerationResult res = generate_personas(prompts, cfg);
    CHECK(res.failed.empty());
    REQUIRE(res.texts.size() == 3);
    CHECK(res.texts[0] == "persona for: first");
    CHECK(res.texts[1] == "persona for: second");
    CHECK(res.texts[2] == "persona for: third");
}

TEST_CASE("generate_personas: empty list and unreachable endpoint") {
    LLMClientConfig cfg;
    cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions"; // closed port
    cfg.backoff_base_s = 0.001;
    CHECK(generate_personas({}, cfg).texts.empty());

    const GenerationResult res = generate_personas({"a", "b"}, cfg);
    CHECK(res.failed.size() == 2);
    CHECK(res.errors.size() == 2);
    CHECK(res.texts[0].empty());
    CHECK(res.texts[1].empty());
}

TEST_CASE("generate_personas_cached serves repeats from the cache") {
    const auto dir = std::filesystem::temp_directory_path() / "semapop_persona_cache";
    std::filesystem::remove_all(dir);
    std::atomic<int> calls{0};
    StubServer stub([&calls](const std::string& prompt) {
        ++calls;
        return "text:" + prompt;
    });

    const std::vector<PersonaRequest> requests = {{"k1", "p1"}, {"k2", "p2"}};
    const GenerationResult first = generate_personas_cached(requests, stub.config(), dir);
    CHECK(first.failed.empty());
    CHECK(calls.load() == 2);

    const GenerationResult second = generate_personas_cached(requests, stub.config(), dir);
    CHECK(second.failed.empty());
    CHECK(calls.load() == 2); // untouched: both were cache hits
    CHECK(second.texts == first.texts);
}

TEST_CASE("persona cache keys include mode and model") {
    const auto [pop, schema] = toy_agents();
    const auto k1 = persona_cache_key(pop, 0, PersonaMode::Implicit, "m1");
    const auto k2 = persona_cache_key(pop, 0, PersonaMode::Grounded, "m1");
    const auto k3 = persona_cache_key(pop, 0, PersonaMode::Implicit, "m2");
    const auto k4 = persona_cache_key(pop, 1, PersonaMode::Implicit, "m1");
    const auto k5 = persona_cache_key(pop, 0, PersonaMode::Implicit, "m1", "edited");
    CHECK(k1 != k2);
    CHECK(k1 != k3);
    CHECK(k1 != k4);
    CHECK(k1 != k5);
    CHECK(k1 == persona_cache_key(pop, 0, PersonaMode::Implicit, "m1"));
}

TEST_CASE("client config validation") {
    LLMClientConfig cfg;
    cfg.top_p = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg.top_p = 0.9;
    cfg.max_parallel = 0;
    CHECK_THROWS(cfg.validate());
}
