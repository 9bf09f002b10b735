#pragma once

#include "semapop/calibration.hpp"
#include "semapop/gan.hpp"
#include "semapop/intervention.hpp"
#include "semapop/persona.hpp"
#include "semapop/toy.hpp"
#include "semapop/vae.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace semapop {

struct DataConfig {
    std::string schema_path;     // empty: schema comes from the toy spec
    std::string population_path; // empty: synthesize from the toy spec
    std::string toy_spec_path;   // empty: use the built-in spec below
    std::string toy_builtin = "travel";
    Index toy_n = 4000;
    std::string subsample_attr; // optional stratified subsample before splitting
    double subsample_fraction = 1.0;
    std::vector<double> split_fractions = {0.6, 0.1, 0.3}; // train, val, test
    std::uint64_t split_seed = 0;
};

struct EmbedderConfig {
    std::string kind = "mock"; // mock | zero | external
    Index dim = 32;
    std::uint64_t seed = 0;
};

struct EvaluateConfig {
    std::string generate_split = "test";
    std::string reference_split = "test";
    int bins = 10;
};

struct CalibrationConfig {
    std::string targets_path;            // empty: derive from the reference split
    std::vector<std::string> attributes; // empty: paper defaults intersected with the schema
    std::vector<int> levels = {0, 5, 10, 20, 40};
    double damping = 1.0;
    double eps = 1e-9;
};

struct InterventionStageConfig {
    std::string target_attr;
    double probe_lambda = 1.0;
    std::vector<double> alphas = {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};
    std::vector<double> subgroup_alphas = {0.0, 0.5, 1.0};
    std::uint64_t seed = 0;
    std::string text_mode = "identity"; // identity | client | off
    std::string text_target_cue = "public transport use";
};

struct ExperimentConfig {
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    DataConfig data;
    PersonaMode persona_mode = PersonaMode::Implicit;
    std::vector<std::string> persona_splits = {"train", "test"};
    EmbedderConfig embedder;
    LLMClientConfig llm;
    std::string backbone = "gan";
    GanTrainingConfig gan;
    VaeTrainingConfig vae;
    EvaluateConfig evaluate;
    CalibrationConfig calibration;
    InterventionStageConfig intervention;
    std::string raw_json; // resolved config echo used for provenance

    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
    void validate() const;
};

// Known stage names, pipeline order.
const std::vector<std::string>& stage_names();

// Executes one stage, writing artifacts and a provenance record under the
// output directory. Throws on missing upstream artifacts, naming the stage
// to run first.
void run_stage(const std::string& command, const ExperimentConfig& config);

} // namespace semapop
