// Command-line surface for the Dual-TL rPPG pipeline. Exit codes: 0 success,
// 1 runtime failure, 2 usage error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dualtl/pipeline.hpp"

namespace {

dualtl::ModelConfig load_model_config(const std::string& path) {
    if (path.empty()) return {};
    return dualtl::model_config_from_json(nlohmann::json::parse(dualtl::read_file(path)));
}

dualtl::TrainConfig load_train_config(const std::string& path) {
    if (path.empty()) return {};
    return dualtl::train_config_from_json(nlohmann::json::parse(dualtl::read_file(path)));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-path TokenLearner rPPG pipeline"};
    app.require_subcommand(1);

    // synth ------------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic trace corpus");
    std::string synth_out;
    std::size_t synth_videos = 4;
    std::uint64_t synth_seed = 1;
    dualtl::SynthConfig synth_base;
    bool synth_clean = false;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--videos", synth_videos, "Number of videos");
    synth->add_option("--seed", synth_seed, "Corpus seed");
    synth->add_option("--fps", synth_base.fps, "Frames per second");
    synth->add_option("--duration", synth_base.duration_s, "Seconds per video");
    synth->add_option("--n-rois", synth_base.n_rois, "Base ROI count");
    synth->add_flag("--clean", synth_clean, "Disable all noise sources");

    // mstmap -----------------------------------------------------------------
    auto* mstmap = app.add_subcommand("mstmap", "Build normalized MSTmap segments from traces");
    std::vector<std::string> mstmap_inputs;
    std::string mstmap_out;
    std::string mstmap_cs = "rgb";
    std::size_t mstmap_seg = 300;
    double mstmap_stride = 0.5;
    mstmap->add_option("traces", mstmap_inputs, "Trace CSV files")->required()
        ->check(CLI::ExistingFile);
    mstmap->add_option("--out", mstmap_out, "Output directory")->required();
    mstmap->add_option("--color-space", mstmap_cs, "Color space")
        ->check(CLI::IsMember({"rgb", "yuv", "rgbyuv"}));
    mstmap->add_option("--segment-frames", mstmap_seg, "Frames per segment");
    mstmap->add_option("--stride", mstmap_stride, "Segment stride in seconds");

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train the model on MSTmap segments");
    std::string train_data, train_model_cfg, train_train_cfg, train_out;
    std::optional<std::uint64_t> train_seed;
    std::string train_path;
    bool no_spatial_token = false, no_temporal_token = false, train_resume = false;
    train->add_option("--data", train_data, "Directory with .mstm segments and source traces")
        ->required()->check(CLI::ExistingDirectory);
    train->add_option("--config", train_model_cfg, "Model config JSON")->check(CLI::ExistingFile);
    train->add_option("--train-config", train_train_cfg, "Train config JSON")
        ->check(CLI::ExistingFile);
    train->add_option("--out", train_out, "Checkpoint output path")->required();
    train->add_option("--seed", train_seed, "Override the training seed");
    train->add_option("--path", train_path, "Path mode ablation")
        ->check(CLI::IsMember({"dual", "s", "t"}));
    train->add_flag("--no-spatial-token", no_spatial_token, "Mean-pool instead of the spatial token");
    train->add_flag("--no-temporal-token", no_temporal_token,
                    "Mean-pool instead of the temporal token");
    train->add_flag("--resume", train_resume, "Continue from --out checkpoint and its state file");

    // infer ------------------------------------------------------------------
    auto* infer = app.add_subcommand("infer", "Predict waveforms for MSTmap segments");
    std::string infer_ckpt, infer_out;
    std::vector<std::string> infer_inputs;
    infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required()
        ->check(CLI::ExistingFile);
    infer->add_option("maps", infer_inputs, "MSTmap segment files")->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--out", infer_out, "Output directory")->required();

    // eval -------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
    std::string eval_ckpt, eval_data, eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data, "Directory with .mstm segments and source traces")
        ->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", eval_out, "Report JSON path")->required();

    // baseline ---------------------------------------------------------------
    auto* baseline = app.add_subcommand("baseline", "Run a classical rPPG extractor");
    std::string baseline_method, baseline_out;
    std::vector<std::string> baseline_inputs;
    baseline->add_option("--method", baseline_method, "Extractor")->required()
        ->check(CLI::IsMember({"green", "chrom", "pos"}));
    baseline->add_option("traces", baseline_inputs, "Trace CSV files")->required()
        ->check(CLI::ExistingFile);
    baseline->add_option("--out", baseline_out, "Output directory")->required();

    // selfcheck --------------------------------------------------------------
    auto* selfcheck = app.add_subcommand("selfcheck", "Run built-in verification checks");
    std::string selfcheck_ckpt;
    selfcheck->add_option("--checkpoint", selfcheck_ckpt, "Also verify this checkpoint loads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            if (synth_clean) synth_base = dualtl::clean_config(synth_base);
            const auto out = dualtl::cmd_synth(synth_out, synth_videos, synth_seed, synth_base);
            std::cout << "wrote " << out.trace_files.size() << " traces and "
                      << out.manifest_file << "\n";
        } else if (*mstmap) {
            const auto written = dualtl::cmd_mstmap(mstmap_inputs, mstmap_out,
                                                    dualtl::parse_color_space(mstmap_cs),
                                                    mstmap_seg, mstmap_stride);
            std::cout << "wrote " << written.size() << " segment maps\n";
        } else if (*train) {
            dualtl::ModelConfig model_cfg = load_model_config(train_model_cfg);
            dualtl::TrainConfig train_cfg = load_train_config(train_train_cfg);
            if (train_seed) train_cfg.seed = *train_seed;
            if (!train_path.empty()) model_cfg.path = dualtl::parse_path_mode(train_path);
            if (no_spatial_token) model_cfg.use_spatial_token = false;
            if (no_temporal_token) model_cfg.use_temporal_token = false;
            const auto out = dualtl::cmd_train(train_data, model_cfg, train_cfg, train_out,
                                               train_resume);
            std::cout << "final checkpoint " << out.checkpoint_file << " after " << out.steps
                      << " steps, mean loss " << out.final_mean_loss << "\n";
        } else if (*infer) {
            const auto written = dualtl::cmd_infer(infer_ckpt, infer_inputs, infer_out);
            std::cout << "wrote " << written.size() << " predicted signals\n";
        } else if (*eval) {
            const auto report = dualtl::cmd_eval(eval_ckpt, eval_data, eval_out);
            std::cout << dualtl::report_to_json(report).dump(2) << "\n";
        } else if (*baseline) {
            const auto report = dualtl::cmd_baseline(dualtl::parse_baseline_method(baseline_method),
                                                     baseline_inputs, baseline_out);
            std::cout << dualtl::report_to_json(report).dump(2) << "\n";
        } else if (*selfcheck) {
            const std::optional<std::string> ckpt =
                selfcheck_ckpt.empty() ? std::nullopt : std::optional<std::string>(selfcheck_ckpt);
            if (!dualtl::cmd_selfcheck(std::cout, ckpt)) return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
