#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "dt/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"disentangled-transformer ASR and diarization toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, checkpoint, task, out_file, pca_out;
    std::vector<int> layers, heads;
    bool force = false, resume = false;
    long long seed = -1;
    int epochs = -1;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file (key = value sections)")
            ->check(CLI::ExistingFile);
    };

    CLI::App* gen = app.add_subcommand("gen-corpus", "write the synthetic corpus");
    add_config(gen);
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_flag("--force", force, "overwrite a non-empty output directory");
    gen->add_option("--seed", seed, "override the corpus seed");

    CLI::App* tasr = app.add_subcommand("train-asr", "train the hybrid CTC/attention model");
    add_config(tasr);
    tasr->add_option("--data", data_dir, "corpus root (contains asr/train and asr/dev)")->required();
    tasr->add_option("--out", out_dir, "run directory for checkpoints and logs")->required();
    tasr->add_option("--seed", seed, "override the training seed");
    tasr->add_option("--epochs", epochs, "override the epoch count");
    tasr->add_flag("--resume", resume, "continue from the trainer state in --out");

    CLI::App* tdia = app.add_subcommand("train-diar",
                                        "train the frozen-encoder speaker decoder");
    add_config(tdia);
    tdia->add_option("--ckpt", checkpoint, "ASR checkpoint to start from")->required();
    tdia->add_option("--data", data_dir, "mixture scenario directory (contains train and dev)")
        ->required();
    tdia->add_option("--out", out_dir, "run directory")->required();
    tdia->add_option("--seed", seed, "override the training seed");
    tdia->add_option("--epochs", epochs, "override the diarization epoch count");

    CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on a split");
    add_config(ev);
    ev->add_option("--ckpt", checkpoint, "checkpoint to evaluate")->required();
    ev->add_option("--data", data_dir, "split directory (contains manifest.txt)")->required();
    ev->add_option("--task", task, "asr or diar")->required();
    ev->add_option("--out", out_file, "write the summary JSON here instead of stdout");

    CLI::App* pr = app.add_subcommand("probe", "per-head smoothness and separability");
    add_config(pr);
    pr->add_option("--ckpt", checkpoint, "checkpoint to probe")->required();
    pr->add_option("--data", data_dir, "single-speaker split directory")->required();
    pr->add_option("--layers", layers, "encoder layers to probe (default: all)")->delimiter(',');
    pr->add_option("--heads", heads, "heads to probe (default: all)")->delimiter(',');
    pr->add_option("--out", out_file, "write JSON lines here instead of stdout");
    pr->add_option("--pca-out", pca_out, "also write per-frame 2D projections to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    dt::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = dt::load_config_file(config_path);
        if (seed >= 0) {
            if (gen->parsed()) cfg.corpus.seed = static_cast<std::uint64_t>(seed);
            else cfg.training.seed = static_cast<std::uint64_t>(seed);
        }
        if (epochs >= 1) {
            if (tasr->parsed()) cfg.training.epochs = epochs;
            if (tdia->parsed()) cfg.training.diar_epochs = epochs;
        }
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    // eval and probe stream their primary output; everything else logs progress
    std::ofstream file_out;
    std::ostream* sink = &std::cout;
    if (!out_file.empty()) {
        file_out.open(out_file, std::ios::trunc);
        if (!file_out) {
            std::cerr << "error: cannot write " << out_file << "\n";
            return 2;
        }
        sink = &file_out;
    }

    if (gen->parsed()) return dt::cmd_gen_corpus(cfg, out_dir, force, std::cerr);
    if (tasr->parsed())
        return dt::cmd_train_asr(cfg, data_dir, out_dir, resume, std::cout, std::cerr);
    if (tdia->parsed())
        return dt::cmd_train_diar(cfg, checkpoint, data_dir, out_dir, std::cout, std::cerr);
    if (ev->parsed()) return dt::cmd_eval(cfg, checkpoint, data_dir, task, *sink, std::cerr);
    if (pr->parsed()) {
        if (layers.empty())
            for (int l = 1; l <= cfg.model.enc_layers; ++l) layers.push_back(l);
        if (heads.empty())
            for (int h = 1; h <= cfg.model.num_heads; ++h) heads.push_back(h);
        return dt::cmd_probe(cfg, checkpoint, data_dir, layers, heads, pca_out, *sink, std::cerr);
    }
    return 2;
}
