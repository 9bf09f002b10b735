#include "semapop/experiment.hpp"

#include "semapop/io_util.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

namespace {

std::vector<std::string> paper_default_calibration_attrs() {
    return {"Age", "Income_class", "Household_Type", "Number_of_cars_of_household",
            "Trips_of_PublicTransport"};
}

} // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ExperimentConfig cfg;
    cfg.raw_json = j.dump(2);
    cfg.output_dir = j.value("output_dir", std::string("out"));
    cfg.seed = j.value("seed", std::uint64_t{0});

    if (j.contains("data")) {
        const auto& d = j["data"];
        cfg.data.schema_path = d.value("schema_path", std::string());
        cfg.data.population_path = d.value("population_path", std::string());
        cfg.data.toy_spec_path = d.value("toy_spec_path", std::string());
        cfg.data.toy_builtin = d.value("toy_builtin", std::string("travel"));
        cfg.data.toy_n = d.value("toy_n", Index{4000});
        cfg.data.subsample_attr = d.value("subsample_attr", std::string());
        cfg.data.subsample_fraction = d.value("subsample_fraction", 1.0);
        if (d.contains("split_fractions"))
            cfg.data.split_fractions = d["split_fractions"].get<std::vector<double>>();
        cfg.data.split_seed = d.value("split_seed", Rng::derive(cfg.seed, "split"));
    } else {
        cfg.data.split_seed = Rng::derive(cfg.seed, "split");
    }

    if (j.contains("persona")) {
        cfg.persona_mode = persona_mode_from_string(
            j["persona"].value("mode", std::string("implicit")));
        if (j["persona"].contains("splits"))
            cfg.persona_splits = j["persona"]["splits"].get<std::vector<std::string>>();
    }

    if (j.contains("embedder")) {
        const auto& e = j["embedder"];
        cfg.embedder.kind = e.value("kind", std::string("mock"));
        cfg.embedder.dim = e.value("dim", Index{32});
        cfg.embedder.seed = e.value("seed", Rng::derive(cfg.seed, "embedder"));
    } else {
        cfg.embedder.seed = Rng::derive(cfg.seed, "embedder");
    }

    if (j.contains("llm")) {
        const auto& l = j["llm"];
        cfg.llm.endpoint = l.value("endpoint", std::string());
        cfg.llm.model_name = l.value("model_name", std::string("unspecified"));
        cfg.llm.temperature = l.value("temperature", 0.9);
        cfg.llm.top_p = l.value("top_p", 0.9);
        cfg.llm.max_new_tokens = l.value("max_new_tokens", 512);
        cfg.llm.request_timeout_s = l.value("request_timeout_s", 30.0);
        cfg.llm.max_parallel = l.value("max_parallel", 1);
        cfg.llm.max_attempts = l.value("max_attempts", 3);
        cfg.llm.backoff_base_s = l.value("backoff_base_s", 1.0);
    }
    if (const char* ep = std::getenv("SEMAPOP_LLM_ENDPOINT")) cfg.llm.endpoint = ep;
    if (const char* key = std::getenv("SEMAPOP_LLM_API_KEY")) cfg.llm.api_key = key;

    cfg.backbone = j.value("backbone", std::string("gan"));
    cfg.gan = j.contains("gan") ? GanTrainingConfig::from_json(j["gan"].dump()) : GanTrainingConfig{};
    if (!j.contains("gan") || !j["gan"].contains("seed"))
        cfg.gan.seed = Rng::derive(cfg.seed, "train_gan");
    cfg.vae = j.contains("vae") ? VaeTrainingConfig::from_json(j["vae"].dump()) : VaeTrainingConfig{};
    if (!j.contains("vae") || !j["vae"].contains("seed"))
        cfg.vae.seed = Rng::derive(cfg.seed, "train_vae");

    if (j.contains("evaluate")) {
        const auto& e = j["evaluate"];
        cfg.evaluate.generate_split = e.value("generate_split", std::string("test"));
        cfg.evaluate.reference_split = e.value("reference_split", std::string("test"));
        cfg.evaluate.bins = e.value("bins", 10);
    }

    if (j.contains("calibration")) {
        const auto& c = j["calibration"];
        cfg.calibration.targets_path = c.value("targets_path", std::string());
        if (c.contains("attributes"))
            cfg.calibration.attributes = c["attributes"].get<std::vector<std::string>>();
        if (c.contains("levels")) cfg.calibration.levels = c["levels"].get<std::vector<int>>();
        cfg.calibration.damping = c.value("damping", 1.0);
        cfg.calibration.eps = c.value("eps", 1e-9);
    }

    if (j.contains("intervention")) {
        const auto& i = j["intervention"];
        cfg.intervention.target_attr = i.value("target_attr", std::string());
        cfg.intervention.probe_lambda = i.value("probe_lambda", 1.0);
        if (i.contains("alphas")) cfg.intervention.alphas = i["alphas"].get<std::vector<double>>();
        if (i.contains("subgroup_alphas"))
            cfg.intervention.subgroup_alphas = i["subgroup_alphas"].get<std::vector<double>>();
        cfg.intervention.seed = i.value("seed", Rng::derive(cfg.seed, "intervention"));
        cfg.intervention.text_mode = i.value("text_mode", std::string("identity"));
        cfg.intervention.text_target_cue =
            i.value("text_target_cue", std::string("public transport use"));
    } else {
        cfg.intervention.seed = Rng::derive(cfg.seed, "intervention");
    }

    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    return from_json_text(read_file(path));
}

void ExperimentConfig::validate() const {
    if (backbone != "gan" && backbone != "vae")
        throw std::runtime_error("backbone must be 'gan' or 'vae'");
    if (embedder.kind != "mock" && embedder.kind != "zero" && embedder.kind != "external")
        throw std::runtime_error("embedder kind must be mock, zero or external");
    if (persona_mode == PersonaMode::None && embedder.kind != "zero")
        throw std::runtime_error("persona mode 'none' requires the zero embedder");
    if (std::find(persona_splits.begin(), persona_splits.end(), "train") == persona_splits.end())
        throw std::runtime_error("persona splits must include 'train'");
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"prepare",  "personas", "embed",
                                                   "train",    "generate", "evaluate",
                                                   "calibrate", "intervene", "report"};
    return names;
}

namespace {

namespace fs = std::filesystem;

struct Paths {
    fs::path root;
    fs::path prepared() const { return root / "prepared"; }
    fs::path schema() const { return prepared() / "schema.json"; }
    fs::path mspec() const { return prepared() / "marginal_spec.json"; }
    fs::path toy_spec() const { return prepared() / "toy_spec.json"; }
    fs::path split(const std::string& s) const { return prepared() / (s + ".csv"); }
    fs::path personas(const std::string& s) const { return root / "personas" / (s + ".json"); }
    fs::path persona_cache() const { return root / "personas" / "cache"; }
    fs::path embeddings() const { return root / "embeddings"; }
    fs::path checkpoint() const { return root / "checkpoint"; }
    fs::path metrics_log() const { return root / "checkpoint" / "metrics.csv"; }
    fs::path generated() const { return root / "generated" / "population.csv"; }
    fs::path reports() const { return root / "reports"; }
    fs::path provenance(const std::string& stage) const {
        return root / "provenance" / (stage + ".json");
    }
};

void require_artifact(const fs::path& p, const std::string& what, const std::string& stage) {
    if (!fs::exists(p))
        throw std::runtime_error("missing " + what + " (" + p.string() + "); run the " + stage +
                                 " stage first");
}

// Provenance: resolved config, seeds, input/output hashes, timings.
class Provenance {
  public:
    Provenance(const ExperimentConfig& cfg, std::string stage)
        : cfg_(&cfg), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}

    void input(const fs::path& p) { inputs_[p.string()] = hex64(hash_file(p)); }
    void output(const fs::path& p) { outputs_[p.string()] = hex64(hash_file(p)); }

    void write(const Paths& paths) {
        nlohmann::json doc;
        doc["stage"] = stage_;
        doc["config"] = nlohmann::json::parse(cfg_->raw_json.empty() ? "{}" : cfg_->raw_json);
        doc["seed"] = cfg_->seed;
        doc["inputs"] = inputs_;
        doc["outputs"] = outputs_;
        doc["duration_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - start_)
                                 .count();
        doc["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
        write_file(paths.provenance(stage_), doc.dump(2));
    }

  private:
    const ExperimentConfig* cfg_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
};

ToyJointSpec resolve_toy_spec(const ExperimentConfig& cfg) {
    if (!cfg.data.toy_spec_path.empty())
        return parse_toy_spec_json(read_file(cfg.data.toy_spec_path));
    if (cfg.data.toy_builtin == "travel") return toy_travel_spec();
    if (cfg.data.toy_builtin == "chain") return toy_chain_spec();
    throw std::runtime_error("unknown built-in toy spec: " + cfg.data.toy_builtin);
}

void stage_prepare(const ExperimentConfig& cfg, const Paths& paths) {
    Provenance prov(cfg, "prepare");
    AttributeSchema schema;
    Population pop;
    if (!cfg.data.population_path.empty()) {
        if (cfg.data.schema_path.empty())
            throw std::runtime_error("population_path requires schema_path");
        schema = load_schema(cfg.data.schema_path);
        prov.input(cfg.data.schema_path);
        pop = load_population(cfg.data.population_path, schema);
        prov.input(cfg.data.population_path);
    } else {
        const ToyJointSpec toy = resolve_toy_spec(cfg);
        schema = toy.schema();
        pop = make_toy_population(toy, cfg.data.toy_n, Rng::derive(cfg.seed, "toy"));
        write_file(paths.toy_spec(), toy_spec_to_json(toy));
    }

    if (!cfg.data.subsample_attr.empty())
        pop = stratified_sample(pop, schema, cfg.data.subsample_attr, cfg.data.subsample_fraction,
                                Rng::derive(cfg.seed, "subsample"));

    const auto parts = split_population(pop, cfg.data.split_fractions, cfg.data.split_seed);
    const std::vector<std::string> names = {"train", "val", "test"};
    if (parts.size() > names.size()) throw std::runtime_error("at most 3 split fractions supported");

    std::vector<std::string> warnings;
    schema = fit_schema_stats(schema, parts.front(), &warnings);
    const MarginalSpec mspec = build_marginal_spec(parts.front(), schema, cfg.evaluate.bins,
                                                   &warnings);

    save_schema(schema, paths.schema());
    write_file(paths.mspec(), marginal_spec_to_json(mspec));
    for (std::size_t i = 0; i < parts.size(); ++i)
        save_population(parts[i], schema, paths.split(names[i]));

    prov.output(paths.schema());
    prov.output(paths.mspec());
    for (std::size_t i = 0; i < parts.size(); ++i) prov.output(paths.split(names[i]));
    prov.write(paths);
}

void stage_personas(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.schema(), "prepared schema", "prepare");
    Provenance prov(cfg, "personas");
    prov.input(paths.schema());
    const AttributeSchema schema = load_schema(paths.schema());

    for (const auto& split : cfg.persona_splits) {
        require_artifact(paths.split(split), "prepared split '" + split + "'", "prepare");
        prov.input(paths.split(split));
        const Population pop = load_population(paths.split(split), schema);

        nlohmann::json doc;
        doc["mode"] = to_string(cfg.persona_mode);
        doc["records"] = nlohmann::json::array();
        if (cfg.persona_mode == PersonaMode::None) {
            for (Index i = 0; i < pop.n(); ++i)
                doc["records"].push_back(
                    {{"agent_index", i}, {"prompt", ""}, {"persona_text", ""}});
        } else if (cfg.llm.endpoint.empty()) {
            // offline: the rendered prompt stands in for the persona text, so
            // embeddings still depend on agent attributes only through text
            for (Index i = 0; i < pop.n(); ++i) {
                const std::string prompt = render_prompt(pop, i, schema, cfg.persona_mode);
                doc["records"].push_back(
                    {{"agent_index", i}, {"prompt", prompt}, {"persona_text", prompt}});
            }
        } else {
            std::vector<PersonaRequest> requests;
            std::vector<std::string> prompts;
            for (Index i = 0; i < pop.n(); ++i) {
                PersonaRequest req;
                req.prompt = render_prompt(pop, i, schema, cfg.persona_mode);
                req.key = persona_cache_key(pop, i, cfg.persona_mode, cfg.llm.model_name);
                prompts.push_back(req.prompt);
                requests.push_back(std::move(req));
            }
            const GenerationResult res =
                generate_personas_cached(requests, cfg.llm, paths.persona_cache());
            if (!res.failed.empty())
                throw std::runtime_error(std::to_string(res.failed.size()) +
                                         " persona requests failed; first error: " +
                                         res.errors.front());
            for (Index i = 0; i < pop.n(); ++i)
                doc["records"].push_back({{"agent_index", i},
                                          {"prompt", prompts[static_cast<std::size_t>(i)]},
                                          {"persona_text", res.texts[static_cast<std::size_t>(i)]}});
        }
        write_file(paths.personas(split), doc.dump(2));
        prov.output(paths.personas(split));
    }
    prov.write(paths);
}

std::vector<std::string> load_persona_texts(const Paths& paths, const std::string& split) {
    const nlohmann::json doc = nlohmann::json::parse(read_file(paths.personas(split)));
    std::vector<std::string> texts;
    for (const auto& rec : doc.at("records")) texts.push_back(rec.at("persona_text").get<std::string>());
    return texts;
}

std::string embedding_key(const ExperimentConfig& cfg, const Paths& paths,
                          const std::string& split) {
    std::uint64_t h = fnv1a64(cfg.embedder.kind);
    h = fnv1a64(std::to_string(cfg.embedder.dim), h);
    h = fnv1a64(std::to_string(cfg.embedder.seed), h);
    h = fnv1a64(hex64(hash_file(paths.personas(split))), h);
    return "emb_" + split + "_" + hex64(h);
}

EmbeddingMatrix load_split_embeddings(const ExperimentConfig& cfg, const Paths& paths,
                                      const std::string& split) {
    require_artifact(paths.personas(split), "personas for split '" + split + "'", "personas");
    const auto key = embedding_key(cfg, paths, split);
    auto emb = load_embedding_cache(paths.embeddings(), key);
    if (!emb)
        throw std::runtime_error("missing embeddings for split '" + split +
                                 "'; run the embed stage first");
    return *emb;
}

void stage_embed(const ExperimentConfig& cfg, const Paths& paths) {
    Provenance prov(cfg, "embed");
    for (const auto& split : cfg.persona_splits) {
        require_artifact(paths.personas(split), "personas for split '" + split + "'", "personas");
        prov.input(paths.personas(split));
        const auto key = embedding_key(cfg, paths, split);
        if (load_embedding_cache(paths.embeddings(), key)) continue; // cache hit

        const auto texts = load_persona_texts(paths, split);
        EmbeddingMatrix emb;
        if (cfg.embedder.kind == "mock") {
            emb = mock_embed(texts, cfg.embedder.dim, cfg.embedder.seed);
        } else if (cfg.embedder.kind == "zero") {
            emb = zero_embeddings(static_cast<Index>(texts.size()), cfg.embedder.dim);
        } else {
            throw std::runtime_error(
                "external embedder requires a hidden-state service; configure kind=mock or zero "
                "for offline runs");
        }
        save_embedding_cache(paths.embeddings(), key, emb);
    }
    prov.output(paths.embeddings() / "manifest.json");
    prov.write(paths);
}

void stage_train(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.schema(), "prepared schema", "prepare");
    Provenance prov(cfg, "train");
    prov.input(paths.schema());
    prov.input(paths.mspec());
    prov.input(paths.split("train"));
    const AttributeSchema schema = load_schema(paths.schema());
    const MarginalSpec mspec = parse_marginal_spec_json(read_file(paths.mspec()));
    const Population train = load_population(paths.split("train"), schema);
    const EmbeddingMatrix emb = load_split_embeddings(cfg, paths, "train");

    if (cfg.backbone == "gan") {
        GanTrainResult result = train_gan(train, emb, schema, mspec, cfg.gan);
        ModelCheckpoint ckpt = gan_checkpoint(result, schema, mspec, cfg.gan);
        save_checkpoint(ckpt, paths.checkpoint());
        write_file(paths.metrics_log(), gan_metrics_csv(result.metrics));
    } else {
        VaeTrainResult result = train_vae(train, emb, schema, mspec, cfg.vae);
        ModelCheckpoint ckpt = vae_checkpoint(result, schema, mspec, cfg.vae);
        save_checkpoint(ckpt, paths.checkpoint());
        write_file(paths.metrics_log(), vae_metrics_csv(result.metrics));
    }
    prov.output(paths.checkpoint() / "manifest.json");
    prov.output(paths.metrics_log());
    prov.write(paths);
}

void stage_generate(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.checkpoint() / "manifest.json", "model checkpoint", "train");
    Provenance prov(cfg, "generate");
    prov.input(paths.checkpoint() / "manifest.json");
    const ModelCheckpoint ckpt = load_checkpoint(paths.checkpoint());
    const EmbeddingMatrix emb = load_split_embeddings(cfg, paths, cfg.evaluate.generate_split);
    const std::uint64_t seed = Rng::derive(cfg.seed, "generate");
    const Population pop = ckpt.backbone == "gan" ? sample_population(ckpt, emb, seed)
                                                  : sample_vae(ckpt, emb, seed);
    save_population(pop, ckpt.schema, paths.generated());
    prov.output(paths.generated());
    prov.write(paths);
}

void stage_evaluate(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.generated(), "generated population", "generate");
    require_artifact(paths.schema(), "prepared schema", "prepare");
    Provenance prov(cfg, "evaluate");
    prov.input(paths.generated());
    prov.input(paths.split(cfg.evaluate.reference_split));
    const AttributeSchema schema = load_schema(paths.schema());
    const MarginalSpec mspec = parse_marginal_spec_json(read_file(paths.mspec()));
    const Population gen = load_population(paths.generated(), schema);
    const Population ref = load_population(paths.split(cfg.evaluate.reference_split), schema);

    const MetricReport report = evaluate_all(gen, ref, schema, mspec);
    write_file(paths.reports() / "metrics.json", report.to_json());
    write_file(paths.reports() / "metrics.csv",
               MetricReport::csv_header() + "\n" + report.csv_row() + "\n");
    prov.output(paths.reports() / "metrics.json");
    prov.output(paths.reports() / "metrics.csv");
    prov.write(paths);
}

void stage_calibrate(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.generated(), "generated population", "generate");
    Provenance prov(cfg, "calibrate");
    prov.input(paths.generated());
    const AttributeSchema schema = load_schema(paths.schema());
    const MarginalSpec mspec = parse_marginal_spec_json(read_file(paths.mspec()));
    const Population gen = load_population(paths.generated(), schema);
    const Population ref = load_population(paths.split(cfg.evaluate.reference_split), schema);

    CalibrationTargets targets;
    if (!cfg.calibration.targets_path.empty()) {
        targets = parse_targets_json(read_file(cfg.calibration.targets_path));
        prov.input(cfg.calibration.targets_path);
    } else {
        std::vector<std::string> attrs = cfg.calibration.attributes;
        if (attrs.empty()) {
            for (const auto& name : paper_default_calibration_attrs())
                if (schema.find(name) >= 0) attrs.push_back(name);
            if (attrs.empty())
                for (const auto& spec : schema.specs) attrs.push_back(spec.name);
        }
        targets = targets_from_population(ref, schema, mspec, attrs);
        write_file(paths.reports() / "targets.json", targets_to_json(targets));
        prov.output(paths.reports() / "targets.json");
    }
    targets.validate(schema, mspec);

    const auto rows = calibration_sweep(gen, schema, mspec, targets, cfg.calibration.levels, ref,
                                        cfg.calibration.damping, cfg.calibration.eps);
    write_file(paths.reports() / "calibration.csv", calibration_rows_to_csv(rows));
    nlohmann::json doc;
    doc["constrained_attributes"] = targets.attributes; // pass order is part of the contract
    doc["levels"] = nlohmann::json::array();
    for (const auto& r : rows)
        doc["levels"].push_back({{"level", r.level},
                                 {"iterations", r.iterations},
                                 {"srmse_m_weighted", r.srmse_m_weighted},
                                 {"srmse_b_weighted", r.srmse_b_weighted},
                                 {"ess", r.ess}});
    write_file(paths.reports() / "calibration.json", doc.dump(2));
    prov.output(paths.reports() / "calibration.csv");
    prov.output(paths.reports() / "calibration.json");
    prov.write(paths);
}

void stage_intervene(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.checkpoint() / "manifest.json", "model checkpoint", "train");
    Provenance prov(cfg, "intervene");
    prov.input(paths.checkpoint() / "manifest.json");
    const ModelCheckpoint ckpt = load_checkpoint(paths.checkpoint());
    if (ckpt.backbone != "gan")
        throw std::runtime_error("intervention requires the gan backbone checkpoint");
    const AttributeSchema& schema = ckpt.schema;

    std::string target = cfg.intervention.target_attr;
    if (target.empty()) {
        for (const auto& spec : schema.specs)
            if (spec.kind == AttrKind::Numerical) {
                target = spec.name;
                break;
            }
    }
    const Index target_col = schema.find(target);
    if (target_col < 0) throw std::runtime_error("unknown intervention target: " + target);

    const Population train = load_population(paths.split("train"), schema);
    const EmbeddingMatrix train_emb = load_split_embeddings(cfg, paths, "train");
    const std::string eval_split = cfg.evaluate.generate_split;
    const Population eval_pop = load_population(paths.split(eval_split), schema);
    const EmbeddingMatrix eval_emb = load_split_embeddings(cfg, paths, eval_split);

    // probe on the training split only
    auto [standardizer, train_std] = standardize_embeddings(train_emb);
    std::vector<int> labels(static_cast<std::size_t>(train.n()));
    for (Index i = 0; i < train.n(); ++i)
        labels[static_cast<std::size_t>(i)] = train.values(i, target_col) > 0.0 ? 1 : 0;
    const InterventionDirection dir =
        fit_direction(train_std, labels, cfg.intervention.probe_lambda, target + " > 0");

    const SweepReport sweep = semantic_sweep(ckpt, eval_emb, dir, cfg.intervention.alphas, target,
                                             cfg.intervention.seed);
    write_file(paths.reports() / "intervention_semantic.csv", sweep_report_csv(sweep));
    prov.output(paths.reports() / "intervention_semantic.csv");

    // subgroup analysis on observed evaluation data; the effective direction
    // is reversed for the high group
    const Subgroups groups =
        build_subgroups(eval_pop, schema, target, Rng::derive(cfg.intervention.seed, "subgroups"));
    std::ostringstream sub_csv;
    sub_csv << "subgroup,alpha,mean_target,activation\n";
    auto subgroup_rows = [&](const std::vector<Index>& rows, double sign, const std::string& name) {
        if (rows.empty()) return;
        EmbeddingMatrix emb;
        emb.provenance = eval_emb.provenance;
        emb.matrix.resize(static_cast<Index>(rows.size()), eval_emb.dim());
        for (std::size_t i = 0; i < rows.size(); ++i)
            emb.matrix.row(static_cast<Index>(i)) = eval_emb.matrix.row(rows[i]);
        std::vector<double> alphas;
        for (double a : cfg.intervention.subgroup_alphas) alphas.push_back(sign * a);
        const SweepReport r = semantic_sweep(ckpt, emb, dir, alphas, target,
                                             Rng::derive(cfg.intervention.seed, name));
        for (std::size_t i = 0; i < r.rows.size(); ++i)
            sub_csv << name << ',' << format_real(cfg.intervention.subgroup_alphas[i]) << ','
                    << format_real(r.rows[i].mean_target) << ','
                    << format_real(r.rows[i].activation) << '\n';
    };
    subgroup_rows(groups.low, +1.0, "low");
    subgroup_rows(groups.high, -1.0, "high");
    write_file(paths.reports() / "intervention_subgroups.csv", sub_csv.str());
    prov.output(paths.reports() / "intervention_subgroups.csv");

    if (cfg.intervention.text_mode != "off") {
        require_artifact(paths.personas(eval_split), "personas for split '" + eval_split + "'",
                         "personas");
        const auto texts = load_persona_texts(paths, eval_split);
        EmbedFn embed_fn = [&cfg](const std::vector<std::string>& t) {
            if (cfg.embedder.kind == "zero")
                return zero_embeddings(static_cast<Index>(t.size()), cfg.embedder.dim);
            return mock_embed(t, cfg.embedder.dim, cfg.embedder.seed);
        };
        auto subset_texts = [&](const std::vector<Index>& rows) {
            std::vector<std::string> out;
            for (Index r : rows) out.push_back(texts[static_cast<std::size_t>(r)]);
            return out;
        };
        auto edited = [&](const std::vector<std::string>& base, TextEditVariant v) {
            if (cfg.intervention.text_mode == "identity") return base;
            const GenerationResult res =
                text_edit(base, v, cfg.llm, paths.persona_cache(), cfg.intervention.text_target_cue);
            if (!res.failed.empty())
                throw std::runtime_error("text edits failed for " +
                                         std::to_string(res.failed.size()) + " personas");
            return res.texts;
        };

        std::vector<TextSweepRow> all_rows;
        if (!groups.high.empty()) {
            const auto base = subset_texts(groups.high);
            const std::vector<std::pair<std::string, std::vector<std::string>>> variants = {
                {"high_removal", edited(base, TextEditVariant::Removal)},
                {"high_suppression", edited(base, TextEditVariant::Suppression)},
            };
            auto rows = text_sweep(ckpt, base, variants, embed_fn,
                                   Rng::derive(cfg.intervention.seed, "text_high"), target);
            all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        }
        if (!groups.low.empty()) {
            const auto base = subset_texts(groups.low);
            const std::vector<std::pair<std::string, std::vector<std::string>>> variants = {
                {"low_insertion", edited(base, TextEditVariant::Insertion)},
            };
            auto rows = text_sweep(ckpt, base, variants, embed_fn,
                                   Rng::derive(cfg.intervention.seed, "text_low"), target);
            all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        }
        write_file(paths.reports() / "intervention_text.csv", text_sweep_csv(all_rows));
        prov.output(paths.reports() / "intervention_text.csv");
    }
    prov.write(paths);
}

void append_csv_section(std::ostringstream& out, nlohmann::json& mirror, const fs::path& file,
                        const std::string& section) {
    if (!fs::exists(file)) return;
    const std::string text = read_file(file);
    std::istringstream in(text);
    std::string header;
    std::getline(in, header);
    const auto cols = split_csv_line(header);
    std::string line;
    int row = 0;
    mirror[section] = nlohmann::json::array();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        nlohmann::json rec;
        for (std::size_t c = 0; c < cols.size() && c < cells.size(); ++c) {
            out << section << ',' << row << ',' << cols[c] << ',' << cells[c] << '\n';
            rec[cols[c]] = cells[c];
        }
        mirror[section].push_back(rec);
        ++row;
    }
}

void stage_report(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.reports() / "metrics.csv", "evaluation metrics", "evaluate");
    Provenance prov(cfg, "report");
    std::ostringstream out;
    out << "section,row,key,value\n";
    nlohmann::json mirror;
    append_csv_section(out, mirror, paths.reports() / "metrics.csv", "metrics");
    append_csv_section(out, mirror, paths.reports() / "calibration.csv", "calibration");
    append_csv_section(out, mirror, paths.reports() / "intervention_semantic.csv",
                       "intervention_semantic");
    append_csv_section(out, mirror, paths.reports() / "intervention_subgroups.csv",
                       "intervention_subgroups");
    append_csv_section(out, mirror, paths.reports() / "intervention_text.csv", "intervention_text");
    write_file(paths.reports() / "report.csv", out.str());
    write_file(paths.reports() / "report.json", mirror.dump(2));
    prov.output(paths.reports() / "report.csv");
    prov.output(paths.reports() / "report.json");
    prov.write(paths);
}

} // namespace

void run_stage(const std::string& command, const ExperimentConfig& config) {
    const Paths paths{config.output_dir};
    std::filesystem::create_directories(config.output_dir);
    DirectoryLock lock(config.output_dir); // one stage at a time per output dir

    if (command == "prepare") stage_prepare(config, paths);
    else if (command == "personas") stage_personas(config, paths);
    else if (command == "embed") stage_embed(config, paths);
    else if (command == "train") stage_train(config, paths);
    else if (command == "generate") stage_generate(config, paths);
    else if (command == "evaluate") stage_evaluate(config, paths);
    else if (command == "calibrate") stage_calibrate(config, paths);
    else if (command == "intervene") stage_intervene(config, paths);
    else if (command == "report") stage_report(config, paths);
    else throw std::runtime_error("unknown stage: " + command);
}

} // namespace semapop
