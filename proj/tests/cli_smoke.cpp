// End-to-end exercise of the dualtl CLI binary: exit-code contract (0 success,
// 1 runtime failure, 2 usage error) plus a miniature synth -> mstmap -> train
// -> infer -> eval -> baseline pass. Invoke with the CLI path as argv[1].

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualtl/ioutil.hpp"
#include "dualtl/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_dir;
int g_failures = 0;

int run_cli(const std::string& args) {
    const std::string cmd =
        g_cli + " " + args + " > " + (g_dir / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -2;
}

void expect_exit(const char* name, const std::string& args, int want) {
    const int got = run_cli(args);
    if (got == want) {
        std::printf("[ok]   %s\n", name);
        return;
    }
    std::printf("[FAIL] %s: exit %d, wanted %d\n", name, got, want);
    std::printf("       command: %s\n", args.c_str());
    try {
        std::printf("%s\n", dualtl::read_file((g_dir / "last.log").string()).c_str());
    } catch (...) {
    }
    ++g_failures;
}

void expect_true(const char* name, bool ok, const std::string& detail = "") {
    if (ok) {
        std::printf("[ok]   %s\n", name);
    } else {
        std::printf("[FAIL] %s%s\n", name, detail.empty() ? "" : (" (" + detail + ")").c_str());
        ++g_failures;
    }
}

std::size_t count_ext(const fs::path& dir, const char* ext) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) ++n;
    return n;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: cli_smoke <path-to-dualtl-binary>\n");
        return 2;
    }
    g_cli = argv[1];
    g_dir = fs::temp_directory_path() / "dualtl_cli_smoke";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);
    const fs::path data = g_dir / "data";

    // usage errors -----------------------------------------------------------
    expect_exit("no arguments is a usage error", "", 2);
    expect_exit("help exits cleanly", "--help", 0);
    expect_exit("unknown flag is a usage error", "synth --bogus", 2);
    expect_exit("unknown baseline method is a usage error",
                "baseline --method ica --out " + (g_dir / "x").string() + " nope.csv", 2);
    expect_exit("missing input file is a usage error",
                "mstmap " + (g_dir / "absent.csv").string() + " --out " + (g_dir / "x").string(),
                2);

    // synth ------------------------------------------------------------------
    expect_exit("synth writes a corpus",
                "synth --out " + data.string() + " --videos 2 --seed 5 --duration 6 --n-rois 4",
                0);
    expect_true("synth manifest and traces exist",
                fs::exists(data / "manifest.json") && fs::exists(data / "video_000.csv") &&
                    fs::exists(data / "video_001.json"),
                "missing artifact under " + data.string());

    // mstmap -----------------------------------------------------------------
    expect_exit("mstmap segments the traces",
                "mstmap " + (data / "video_000.csv").string() + " " +
                    (data / "video_001.csv").string() + " --out " + data.string() +
                    " --segment-frames 60",
                0);
    // 6 s at 30 fps = 180 frames -> starts 0,15,...,120 = 9 per video.
    expect_true("mstmap wrote one map per segment window", count_ext(data, ".mstm") == 18,
                "got " + std::to_string(count_ext(data, ".mstm")));

    // train ------------------------------------------------------------------
    const std::string model_cfg = (g_dir / "model.json").string();
    dualtl::write_file_atomic(model_cfg,
                              R"({"n_combinations":15,"segment_frames":60,"channels":3,)"
                              R"("embed_dim":8,"layers":1,"heads":2})");
    const std::string train_cfg = (g_dir / "train.json").string();
    dualtl::write_file_atomic(train_cfg,
                              R"({"epochs":1,"batch_size":8,"seed":3,"learning_rate":1e-4})");
    const std::string ckpt = (data / "model.ckpt").string();
    expect_exit("train produces a checkpoint",
                "train --data " + data.string() + " --config " + model_cfg + " --train-config " +
                    train_cfg + " --out " + ckpt,
                0);
    expect_true("train leaves checkpoint, state, and loss log",
                fs::exists(ckpt) && fs::exists(ckpt + ".state") && fs::exists(ckpt + ".loss.csv"));
    expect_exit("train on a dataset-free directory is a runtime failure",
                "train --data " + g_dir.string() + " --config " + model_cfg + " --out " +
                    (g_dir / "none.ckpt").string(),
                1);

    // infer ------------------------------------------------------------------
    const fs::path preds = g_dir / "preds";
    expect_exit("infer predicts waveforms",
                "infer --checkpoint " + ckpt + " " + (data / "video_000_0.mstm").string() + " " +
                    (data / "video_000_15.mstm").string() + " --out " + preds.string(),
                0);
    expect_true("infer writes one csv per map", count_ext(preds, ".csv") == 2);

    // eval -------------------------------------------------------------------
    const std::string report_path = (g_dir / "report.json").string();
    expect_exit("eval writes a report",
                "eval --checkpoint " + ckpt + " --data " + data.string() + " --out " + report_path,
                0);
    bool keys_ok = false;
    std::string keys_detail;
    try {
        const auto j = nlohmann::json::parse(dualtl::read_file(report_path));
        std::set<std::string> keys;
        for (const auto& item : j.items()) keys.insert(item.key());
        const std::set<std::string> want = {"mae", "rmse", "mer",    "std",
                                            "r",   "excluded_segments", "videos"};
        keys_ok = keys == want;
        if (!keys_ok)
            for (const auto& k : keys) keys_detail += k + " ";
    } catch (const std::exception& e) {
        keys_detail = e.what();
    }
    expect_true("report carries exactly the five metrics plus bookkeeping", keys_ok, keys_detail);

    // baseline ---------------------------------------------------------------
    const fs::path base_out = g_dir / "baseline";
    expect_exit("baseline green runs",
                "baseline --method green " + (data / "video_000.csv").string() + " " +
                    (data / "video_001.csv").string() + " --out " + base_out.string(),
                0);
    expect_true("baseline writes signals and a report",
                fs::exists(base_out / "video_000_green.csv") &&
                    fs::exists(base_out / "green_report.json"));

    // selfcheck --------------------------------------------------------------
    expect_exit("selfcheck passes on a fresh build", "selfcheck", 0);
    expect_exit("selfcheck validates a good checkpoint", "selfcheck --checkpoint " + ckpt, 0);
    const std::string junk = (g_dir / "junk.ckpt").string();
    dualtl::write_file_atomic(junk, "this is not a checkpoint");
    expect_exit("selfcheck fails on a corrupt checkpoint", "selfcheck --checkpoint " + junk, 1);

    if (g_failures == 0)
        std::printf("cli smoke: all checks passed\n");
    else
        std::printf("cli smoke: %d failures\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
