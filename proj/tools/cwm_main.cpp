// Command-line front end: dataset generation, world-model training, decoder
// fitting, N-step inference evaluation, planning, the modality comparison
// sweep, and the stdio serving loop.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cwm/cwm.hpp"

namespace fs = std::filesystem;
using namespace cwm;
using nlohmann::json;

namespace {

uint64_t seed_override(uint64_t seed) {
    if (const char* s = std::getenv("CWM_SEED")) return std::strtoull(s, nullptr, 10);
    return seed;
}

std::string out_override(std::string path) {
    if (const char* s = std::getenv("CWM_OUT_DIR")) return s;
    return path;
}

env::EnvConfig load_env_config(const std::string& path) {
    if (path.empty()) return env::EnvConfig{};
    return env::env_config_from_json(json::parse(io::read_text_file(path)));
}

text::Pcfg load_grammar(const std::string& path) {
    if (path.empty()) return text::Pcfg{};
    return text::pcfg_from_json(json::parse(io::read_text_file(path)));
}

struct DataDir {
    std::string dir;
    env::EnvConfig env_cfg;
    text::Pcfg grammar;
    text::Vocabulary vocab;
    obs::ObservationMap obsmap;

    explicit DataDir(const std::string& d) : dir(d) {
        env_cfg = env::env_config_from_json(json::parse(io::read_text_file(dir + "/env.json")));
        grammar = text::pcfg_from_json(json::parse(io::read_text_file(dir + "/grammar.json")));
        vocab = text::Vocabulary::deserialize(io::read_text_file(dir + "/vocab.txt"));
        obsmap = obs::observation_map_from_json(json::parse(io::read_text_file(dir + "/obsmap.json")));
    }

    data::TransitionSet transitions(const std::string& split, int token_len) const {
        auto trajs = data::load_trajectories(dir + "/" + split + ".jsonl");
        return data::build_transitions(trajs, obsmap, vocab, token_len);
    }
};

crl::CwmAssets assets_of(const DataDir& d, int token_len) {
    crl::CwmAssets assets;
    assets.obsmap = d.obsmap;
    assets.meta = decoder::EntityMeta::from_config(d.env_cfg);
    assets.vocab = d.vocab;
    assets.grammar = d.grammar;
    assets.env_cfg = d.env_cfg;
    assets.token_len = token_len;
    assets.dataset_hash = io::fnv1a_bytes(io::read_text_file(d.dir + "/train.jsonl"));
    return assets;
}

// ------------------------------------------------------------- subcommands

int run_gen_data(const std::string& env_path, const std::string& grammar_path,
                 const std::string& out_dir, uint64_t seed, double scale, bool paper_scale,
                 int traj_len, int obs_dim, int latent_dim) {
    data::GenSpec spec;
    spec.env_cfg = load_env_config(env_path);
    spec.grammar = load_grammar(grammar_path);
    spec.seed = seed;
    spec.scale = paper_scale ? 1.0 : scale;
    spec.traj_len = traj_len;
    spec.obs_dim = obs_dim;
    spec.latent_dim = latent_dim;
    uint64_t vh = data::generate_datasets(spec, out_dir);
    std::printf("datasets written to %s (vocab hash %016llx)\n", out_dir.c_str(),
                static_cast<unsigned long long>(vh));
    return 0;
}

int run_train(const std::string& data_dir, const std::string& out_stem, const std::string& modality,
              int epochs, int batch, double lr, double lr_text, int m_latent, double gate_penalty,
              uint64_t seed, double subsample_fraction, int warmup, bool verbose) {
    DataDir d(data_dir);
    auto set = d.transitions("train", 32);
    crl::TrainConfig cfg;
    cfg.modality = crl::modality_from_name(modality);
    cfg.epochs = epochs;
    cfg.batch = batch;
    cfg.lr = lr;
    cfg.lr_text = lr_text;
    cfg.m_latent = m_latent;
    cfg.gate_penalty = gate_penalty;
    cfg.seed = seed;
    cfg.warmup = warmup;
    cfg.verbose = verbose;
    if (subsample_fraction > 0.0 && subsample_fraction < 1.0)
        cfg.subsample = std::max(2, static_cast<int>(subsample_fraction * set.e_prev.rows));
    auto params = crl::train_cwm(set, cfg, assets_of(d, 32));

    auto val = d.transitions("val", 32);
    crl::LossOptions opt;
    double loss = crl::cwm_loss_value(params, val.e_prev, val.e_next, val.tokens, val.coords, opt);
    auto score = crl::evaluate_disentanglement(params, val.e_next, val.c_next);
    crl::save_cwm(out_stem, params);
    std::printf("final validation loss %.4f\n", loss);
    std::printf("permutation R2 %.4f\n", score.score);
    std::printf("checkpoint written to %s.{json,bin}\n", out_stem.c_str());
    return 0;
}

int run_fit_decoder(const std::string& ckpt, const std::string& data_dir, int labels,
                    const std::string& labels_file, const std::string& out_stem, uint64_t seed,
                    int epochs) {
    auto params = crl::load_cwm(ckpt);
    Rng rng(seed);
    decoder::FitOptions opt;
    opt.epochs = epochs;
    std::string file = labels_file;
    if (file.empty() && !data_dir.empty() && fs::exists(data_dir + "/labels.jsonl"))
        file = data_dir + "/labels.jsonl";
    int used = 0;
    if (!file.empty()) {
        auto samples = data::load_labeled_subset(file);
        crl::fit_mapper(params, samples, labels, rng, opt);
        used = std::min<int>(labels, static_cast<int>(samples.size()));
    } else {
        DataDir d(data_dir);
        auto val = d.transitions("val", params.token_len);
        crl::fit_mapper(params, val, labels, rng, opt);
        used = std::min(labels, val.e_next.rows);
    }
    crl::save_cwm(out_stem.empty() ? ckpt : out_stem, params);
    std::printf("mapper fitted on %d labels; %zu fallback variables\n", used,
                params.mapper->assignment.fallback_vars.size());
    return 0;
}

int run_eval_inference(const std::string& ckpt, bool oracle, const std::string& data_dir,
                       const std::vector<int>& ns, const std::string& out_stem) {
    DataDir d(data_dir);
    auto meta = decoder::EntityMeta::from_config(d.env_cfg);
    evals::MatchPolicy policy;
    evals::InferenceReport report;
    std::optional<crl::CwmParams> params;
    if (!oracle) params = crl::load_cwm(ckpt);
    for (int n : ns) {
        auto eps = data::load_episodes(d.dir + "/nstep_" + std::to_string(n) + ".jsonl");
        std::unique_ptr<evals::InferenceModel> model;
        if (oracle)
            model = std::make_unique<evals::OracleInferenceModel>();
        else
            model = std::make_unique<evals::CwmInferenceModel>(*params);
        report.per_n.push_back(evals::eval_causal_inference(*model, eps, policy, meta));
    }
    auto text_report = evals::render_inference_text(report);
    std::fputs(text_report.c_str(), stdout);
    if (!out_stem.empty()) {
        io::write_text_file(out_stem + ".txt", text_report);
        io::write_text_file(out_stem + ".csv", evals::render_inference_csv(report));
        for (const auto& r : report.per_n)
            if (r.n == 1)
                io::write_text_file(out_stem + "_categories.csv", evals::render_categories_csv(r));
        std::printf("reports written to %s.{txt,csv}\n", out_stem.c_str());
    }
    return 0;
}

int run_plan(const std::string& ckpt, bool oracle, const std::string& data_dir,
             const std::vector<int>& ns, const std::string& scorer_spec, int rollouts,
             const std::string& out_stem, uint64_t seed) {
    DataDir d(data_dir);
    auto meta = decoder::EntityMeta::from_config(d.env_cfg);
    std::optional<crl::CwmParams> params;
    if (!oracle) params = crl::load_cwm(ckpt);

    std::vector<data::IclExample> icl_pool;
    std::vector<data::SelfEvalSample> self_pool;
    if (fs::exists(d.dir + "/icl_pool.jsonl")) icl_pool = data::load_icl_pool(d.dir + "/icl_pool.jsonl");
    if (fs::exists(d.dir + "/self_eval.jsonl")) self_pool = data::load_self_eval(d.dir + "/self_eval.jsonl");

    evals::PlanningReport report;
    for (int n : ns) {
        auto tasks = data::load_tasks(d.dir + "/tasks_" + std::to_string(n) + ".jsonl");
        evals::WorldModelFactory wm_factory = [&](const data::PlanningTask& task)
            -> std::unique_ptr<mcts::WorldModel> {
            if (oracle)
                return std::make_unique<mcts::OracleWorldModel>(task.template_state, meta, d.grammar);
            auto x0 = obs::observe(params->obsmap, task.start_causal);
            return std::make_unique<mcts::CwmWorldModel>(*params, task.template_state, x0);
        };
        evals::ScorerFactory scorer_factory = [&](const data::PlanningTask& task)
            -> std::unique_ptr<mcts::ActionScorer> {
            if (scorer_spec == "uniform") return std::make_unique<mcts::UniformScorer>();
            if (scorer_spec.rfind("external:", 0) == 0)
                return std::make_unique<mcts::ExternalScorer>(scorer_spec.substr(9), icl_pool,
                                                              self_pool, seed);
            return std::make_unique<mcts::GoalDistanceScorer>(task.template_state, meta, d.grammar,
                                                              task.goal_indices, task.goal_values);
        };
        report.per_n.push_back(
            evals::eval_planning(tasks, wm_factory, scorer_factory, rollouts, meta, d.grammar, seed));
    }
    auto text_report = evals::render_planning_text(report);
    std::fputs(text_report.c_str(), stdout);
    if (!out_stem.empty()) {
        io::write_text_file(out_stem + ".txt", text_report);
        io::write_text_file(out_stem + ".csv", evals::render_planning_csv(report));
        std::printf("reports written to %s.{txt,csv}\n", out_stem.c_str());
    }
    return 0;
}

int run_compare_modalities(const std::string& data_dir, const std::vector<double>& fractions,
                           int seeds, int min_steps, int batch, uint64_t seed,
                           const std::string& out_path) {
    DataDir d(data_dir);
    auto train = d.transitions("train", 32);
    auto val = d.transitions("val", 32);
    auto assets = assets_of(d, 32);

    std::string csv = "modality,fraction,mean_r2,std_r2,seeds\n";
    std::printf("%-4s %9s %8s %8s\n", "mod", "fraction", "mean R2", "std");
    for (auto modality : {crl::Modality::cb, crl::Modality::tb, crl::Modality::hb}) {
        for (double fraction : fractions) {
            double sum = 0, sum_sq = 0;
            for (int s = 0; s < seeds; ++s) {
                crl::TrainConfig cfg;
                cfg.modality = modality;
                cfg.batch = batch;
                cfg.seed = seed + 1000 * s + 1;
                cfg.subsample = std::max(2, static_cast<int>(fraction * train.e_prev.rows));
                int bsz = std::min(cfg.batch, cfg.subsample);
                int steps_per_epoch = std::max(1, cfg.subsample / bsz);
                cfg.epochs = std::max(1, (min_steps + steps_per_epoch - 1) / steps_per_epoch);
                auto params = crl::train_cwm(train, cfg, assets);
                double r2 = crl::evaluate_disentanglement(params, val.e_next, val.c_next).score;
                sum += r2;
                sum_sq += r2 * r2;
            }
            double mean = sum / seeds;
            double var = std::max(0.0, sum_sq / seeds - mean * mean);
            std::printf("%-4s %9.4f %8.4f %8.4f\n", crl::modality_name(modality), fraction, mean,
                        std::sqrt(var));
            char row[128];
            std::snprintf(row, sizeof row, "%s,%.4f,%.4f,%.4f,%d\n", crl::modality_name(modality),
                          fraction, mean, std::sqrt(var), seeds);
            csv += row;
        }
    }
    if (!out_path.empty()) {
        io::write_text_file(out_path, csv);
        std::printf("table written to %s\n", out_path.c_str());
    }
    return 0;
}

int run_serve(const std::string& ckpt, uint64_t seed) {
    auto params = crl::load_cwm(ckpt);
    runtime::serve(params, std::cin, std::cout, seed);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal world model workbench for the traffic grid environment"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate all datasets into a directory");
    std::string gen_env, gen_grammar, gen_out;
    uint64_t gen_seed = 0;
    double gen_scale = 0.05;
    bool gen_paper = false;
    int gen_traj_len = 100, gen_obs_dim = 16, gen_latent = 16;
    gen->add_option("--env", gen_env, "environment config json");
    gen->add_option("--grammar", gen_grammar, "grammar json");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--scale", gen_scale, "fraction of full-size dataset counts");
    gen->add_flag("--paper-scale", gen_paper, "use the full-size dataset counts");
    gen->add_option("--traj-len", gen_traj_len, "steps per trajectory");
    gen->add_option("--obs-dim", gen_obs_dim, "observation dimension D");
    gen->add_option("--latent-dim", gen_latent, "encoder output dimension M");

    // train-cwm
    auto* train = app.add_subcommand("train-cwm", "train the causal world model");
    std::string tr_data, tr_out = "cwm_ckpt", tr_modality = "TB";
    int tr_epochs = 30, tr_batch = 384, tr_m = 16, tr_warmup = 100;
    double tr_lr = 3e-3, tr_lr_text = 3e-3, tr_gate = 1e-3, tr_subsample = 0.0;
    uint64_t tr_seed = 0;
    bool tr_verbose = false;
    std::string tr_config;
    train->add_option("--data", tr_data, "dataset directory")->required();
    train->add_option("--config", tr_config, "training config json (flags override its keys)");
    train->add_option("--out", tr_out, "checkpoint stem");
    train->add_option("--modality", tr_modality, "CB, TB or HB");
    train->add_option("--epochs", tr_epochs, "training epochs");
    train->add_option("--batch", tr_batch, "minibatch size");
    train->add_option("--lr", tr_lr, "main learning rate");
    train->add_option("--lr-text", tr_lr_text, "action embedder learning rate");
    train->add_option("--m-latent", tr_m, "latent dimension M");
    train->add_option("--gate-penalty", tr_gate, "L1 penalty on gate probabilities");
    train->add_option("--seed", tr_seed, "training seed");
    train->add_option("--subsample", tr_subsample, "train on this fraction of transitions");
    train->add_option("--warmup", tr_warmup, "optimizer warmup steps");
    train->add_flag("--verbose", tr_verbose, "per-epoch loss on stderr");

    // fit-decoder
    auto* fit = app.add_subcommand("fit-decoder", "fit the causal mapper onto a checkpoint");
    std::string fd_ckpt, fd_data, fd_out;
    int fd_labels = 500, fd_epochs = 300;
    uint64_t fd_seed = 0;
    std::string fd_labels_file;
    fit->add_option("--ckpt", fd_ckpt, "checkpoint stem")->required();
    fit->add_option("--data", fd_data, "dataset directory")->required();
    fit->add_option("--labels-file", fd_labels_file, "labeled-subset jsonl (default <data>/labels.jsonl)");
    fit->add_option("--labels", fd_labels, "labeled sample budget");
    fit->add_option("--out", fd_out, "output stem (default: overwrite input)");
    fit->add_option("--seed", fd_seed, "fitting seed");
    fit->add_option("--epochs", fd_epochs, "fitting epochs");

    // eval-inference
    auto* ev = app.add_subcommand("eval-inference", "N-step causal inference accuracy");
    std::string ev_ckpt, ev_data, ev_out;
    std::vector<int> ev_ns{1, 2, 4, 6, 8};
    bool ev_oracle = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint stem");
    ev->add_flag("--oracle", ev_oracle, "use the ground-truth simulator as the model");
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--n", ev_ns, "episode lengths to evaluate");
    ev->add_option("--out", ev_out, "report stem");

    // plan
    auto* pl = app.add_subcommand("plan", "planning evaluation on task files");
    std::string pl_ckpt, pl_data, pl_out, pl_scorer = "goal";
    std::vector<int> pl_ns{2};
    int pl_rollouts = 50;
    bool pl_oracle = false;
    uint64_t pl_seed = 0;
    pl->add_option("--ckpt", pl_ckpt, "checkpoint stem");
    pl->add_flag("--oracle", pl_oracle, "plan with the ground-truth simulator");
    pl->add_option("--data", pl_data, "dataset directory")->required();
    pl->add_option("--n", pl_ns, "task lengths to evaluate");
    pl->add_option("--scorer", pl_scorer, "goal | uniform | external:<command>");
    pl->add_option("--rollouts", pl_rollouts, "tree-search rollouts per task");
    pl->add_option("--out", pl_out, "report stem");
    pl->add_option("--seed", pl_seed, "execution seed");

    // compare-modalities
    auto* cm = app.add_subcommand("compare-modalities", "R2 sweep over CB/TB/HB x data fractions");
    std::string cm_data, cm_out;
    std::vector<double> cm_fractions{0.005, 0.010, 0.015};
    int cm_seeds = 3, cm_min_steps = 600, cm_batch = 384;
    uint64_t cm_seed = 0;
    cm->add_option("--data", cm_data, "dataset directory")->required();
    cm->add_option("--fractions", cm_fractions, "training-set fractions");
    cm->add_option("--seeds", cm_seeds, "seeds per cell (distinct subsamples)");
    cm->add_option("--min-steps", cm_min_steps, "optimizer steps per run");
    cm->add_option("--batch", cm_batch, "minibatch size");
    cm->add_option("--seed", cm_seed, "base seed");
    cm->add_option("--out", cm_out, "csv output path");

    // serve
    auto* sv = app.add_subcommand("serve", "line-delimited JSON protocol over stdio");
    std::string sv_ckpt;
    uint64_t sv_seed = 0;
    sv->add_option("--ckpt", sv_ckpt, "checkpoint stem")->required();
    sv->add_option("--seed", sv_seed, "sampling seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return run_gen_data(gen_env, gen_grammar, out_override(gen_out), seed_override(gen_seed),
                                gen_scale, gen_paper, gen_traj_len, gen_obs_dim, gen_latent);
        if (train->parsed()) {
            if (!tr_config.empty()) {
                auto j = json::parse(io::read_text_file(tr_config));
                auto absent = [&](const char* flag) { return train->count(flag) == 0; };
                if (j.contains("modality") && absent("--modality")) tr_modality = j["modality"].get<std::string>();
                if (j.contains("epochs") && absent("--epochs")) tr_epochs = j["epochs"].get<int>();
                if (j.contains("batch") && absent("--batch")) tr_batch = j["batch"].get<int>();
                if (j.contains("lr") && absent("--lr")) tr_lr = j["lr"].get<double>();
                if (j.contains("lr_text") && absent("--lr-text")) tr_lr_text = j["lr_text"].get<double>();
                if (j.contains("m_latent") && absent("--m-latent")) tr_m = j["m_latent"].get<int>();
                if (j.contains("gate_penalty") && absent("--gate-penalty")) tr_gate = j["gate_penalty"].get<double>();
                if (j.contains("seed") && absent("--seed")) tr_seed = j["seed"].get<uint64_t>();
                if (j.contains("subsample") && absent("--subsample")) tr_subsample = j["subsample"].get<double>();
                if (j.contains("warmup") && absent("--warmup")) tr_warmup = j["warmup"].get<int>();
            }
            return run_train(tr_data, out_override(tr_out), tr_modality, tr_epochs, tr_batch, tr_lr,
                             tr_lr_text, tr_m, tr_gate, seed_override(tr_seed), tr_subsample,
                             tr_warmup, tr_verbose);
        }
        if (fit->parsed())
            return run_fit_decoder(fd_ckpt, fd_data, fd_labels, fd_labels_file, fd_out,
                                   seed_override(fd_seed), fd_epochs);
        if (ev->parsed()) {
            if (!ev_oracle && ev_ckpt.empty())
                throw env::ConfigError("eval-inference needs --ckpt or --oracle");
            return run_eval_inference(ev_ckpt, ev_oracle, ev_data, ev_ns, ev_out);
        }
        if (pl->parsed()) {
            if (!pl_oracle && pl_ckpt.empty()) throw env::ConfigError("plan needs --ckpt or --oracle");
            return run_plan(pl_ckpt, pl_oracle, pl_data, pl_ns, pl_scorer, pl_rollouts, pl_out,
                            seed_override(pl_seed));
        }
        if (cm->parsed())
            return run_compare_modalities(cm_data, cm_fractions, cm_seeds, cm_min_steps, cm_batch,
                                          seed_override(cm_seed), cm_out);
        if (sv->parsed()) return run_serve(sv_ckpt, seed_override(sv_seed));
    } catch (const env::ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 2;
    } catch (const io::DataError& e) {
        std::fprintf(stderr, "error: data: %s\n", e.what());
        return 3;
    } catch (const data::EmptyDataset& e) {
        std::fprintf(stderr, "error: data: %s\n", e.what());
        return 3;
    } catch (const data::WindowTooLong& e) {
        std::fprintf(stderr, "error: data: %s\n", e.what());
        return 3;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "error: data: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: numerical: %s\n", e.what());
        return 4;
    }
    return 0;
}
