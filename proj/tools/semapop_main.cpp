#include "semapop/experiment.hpp"
#include "semapop/io_util.hpp"

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

namespace {

semapop::ExperimentConfig load_config(const std::string& config_path, const std::string& seed_arg,
                                      const std::string& out_arg) {
    nlohmann::json doc = nlohmann::json::parse(semapop::read_file(config_path));
    if (!seed_arg.empty()) doc["seed"] = std::stoull(seed_arg);
    if (!out_arg.empty()) doc["output_dir"] = out_arg;
    return semapop::ExperimentConfig::from_json_text(doc.dump());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semapop: persona-conditioned synthetic population generation"};
    app.require_subcommand(1);

    std::string config_path, seed_arg, out_arg;
    std::vector<CLI::App*> subs;
    for (const auto& name : semapop::stage_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " stage");
        subs.push_back(sub);
    }
    CLI::App* all = app.add_subcommand("all", "run every stage in pipeline order");
    subs.push_back(all);
    for (CLI::App* sub : subs) {
        sub->add_option("--config", config_path, "experiment config JSON")->required();
        sub->add_option("--seed", seed_arg, "override the experiment seed");
        sub->add_option("--out", out_arg, "override the output directory");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const semapop::ExperimentConfig config = load_config(config_path, seed_arg, out_arg);
        if (all->parsed()) {
            for (const auto& stage : semapop::stage_names()) {
                std::fprintf(stderr, "[semapop] %s\n", stage.c_str());
                semapop::run_stage(stage, config);
            }
        } else {
            for (std::size_t i = 0; i < semapop::stage_names().size(); ++i) {
                if (subs[i]->parsed()) {
                    semapop::run_stage(semapop::stage_names()[i], config);
                    break;
                }
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
