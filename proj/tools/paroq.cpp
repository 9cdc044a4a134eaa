// paroq: command-line front end for pair selection, calibration, evaluation
// and the transform harnesses.

#include "paro/baselines.hpp"
#include "paro/calibrate.hpp"
#include "paro/engine.hpp"
#include "paro/parallel.hpp"
#include "paro/tensor_file.hpp"
#include "paro/transform.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace paro;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

// stdout when path is empty or "-".
template <typename Fn>
void emit(const std::string& path, Fn&& write) {
    if (path.empty() || path == "-") {
        write(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write(out);
}

// ---- pairs

struct PairsArgs {
    std::size_t g = 128, K = 8, N = 64;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_pairs(const PairsArgs& a) {
    Rng rng(a.seed);
    const auto lists = select_pairs(a.g, a.K, a.N, rng);
    json rotations = json::array();
    for (const auto& rot : lists) {
        json pairs = json::array();
        for (const Pair& p : rot) pairs.push_back({p.i, p.j});
        rotations.push_back(std::move(pairs));
    }
    const json doc = {{"g", a.g}, {"K", a.K}, {"N", a.N}, {"seed", a.seed}, {"rotations", rotations}};
    emit(a.out, [&](std::ostream& os) { os << doc.dump() << '\n'; });
    return 0;
}

// ---- quantize

struct QuantizeArgs {
    std::string config, out, model;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int cmd_quantize(const QuantizeArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : run_config_from_json(read_json(a.config));
    if (a.seed) {
        cfg.model.seed = *a.seed;
        cfg.calibration.seed = *a.seed + 1;
        cfg.train.seed = *a.seed + 2;
    }
    std::vector<ToyDecoderLayer> model;
    if (!a.model.empty()) {
        model = load_fp_model(a.model);
        cfg.model.num_layers = model.size();
        cfg.model.dim = model.front().dim();
        cfg.model.hidden = model.front().hidden();
    } else {
        model = gen_synthetic_model(cfg.model);
    }
    const CalibrationSet calib = gen_calibration(cfg.model.dim, cfg.calibration);
    ProgressFn progress;
    if (!a.quiet) progress = [](const std::string& msg) { std::cerr << msg << std::endl; };
    const QuantizedModel q = quantize_model(model, calib, cfg.quant, cfg.transform, cfg.train, progress);

    const fs::path dir(a.out);
    fs::create_directories(dir);
    json resolved;
    to_json(resolved, cfg);
    write_text(dir / "config.json", resolved.dump(2) + "\n");
    save_fp_model(dir / "fp_model.pqt", model);
    save_deployed(dir / "deployed", deploy(q.layers));
    const json report = {{"layers", report_to_json(q.reports)}};
    write_text(dir / "report.json", report.dump(2) + "\n");
    std::cout << report.dump() << '\n';
    return 0;
}

// ---- eval

struct EvalArgs {
    std::string model, inputs;
    std::size_t samples = 32;
    std::uint64_t seed = 1000;
};

std::vector<Matrix> read_inputs(const fs::path& path, std::size_t dim) {
    const TensorFile f = load_tensors(path);
    std::vector<Matrix> out;
    for (const Tensor& t : f.tensors) {
        const auto* v = std::get_if<std::vector<float>>(&t.data);
        if (!v || t.shape.size() != 2) throw FormatError("input tensor '" + t.name + "' must be a 2-D f32 matrix");
        if (static_cast<std::size_t>(t.shape[1]) != dim)
            throw FormatError("input tensor '" + t.name + "' has width " + std::to_string(t.shape[1]) + ", model expects " +
                              std::to_string(dim));
        out.emplace_back(static_cast<std::size_t>(t.shape[0]), dim, *v);
    }
    if (out.empty()) throw FormatError(path.string() + " holds no input tensors");
    return out;
}

int cmd_eval(const EvalArgs& a) {
    const fs::path dir(a.model);
    const RunConfig cfg = run_config_from_json(read_json(dir / "config.json"));
    const auto fp = load_fp_model(dir / "fp_model.pqt");
    const DeployedModel deployed = load_deployed(dir / "deployed");
    if (deployed.dim() != fp.front().dim()) throw FormatError("deployed model does not match fp_model.pqt");
    std::vector<Matrix> inputs;
    if (!a.inputs.empty()) {
        inputs = read_inputs(a.inputs, fp.front().dim());
    } else {
        if (a.samples == 0) throw std::invalid_argument("--samples must be positive");
        inputs = gen_calibration(fp.front().dim(), {a.samples, 1, cfg.calibration.seq_len, a.seed}).train;
    }
    json doc = eval_to_json(evaluate_model(fp, deployed, cfg.quant, inputs));
    doc["inputs"] = a.inputs.empty() ? json("synthetic") : json(a.inputs);
    if (a.inputs.empty()) doc["seed"] = a.seed;
    std::cout << doc.dump(2) << '\n';
    return 0;
}

// ---- compare-transforms

struct CompareArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
};

int cmd_compare(const CompareArgs& a) {
    CompareRun run = a.config.empty() ? CompareRun{} : compare_run_from_json(read_json(a.config));
    if (a.seed) run.config.seed = *a.seed;
    const auto curves = run_comparison(run);
    emit(a.out, [&](std::ostream& os) { write_curves_csv(os, curves, run.config.seed); });
    for (const auto& c : curves)
        std::cerr << std::left << std::setw(22) << to_string(c.kind) << " initial " << c.loss.front() << "  final "
                  << c.final_loss() << '\n';
    return 0;
}

// ---- bench

struct BenchArgs {
    std::vector<std::size_t> dims{256, 1024, 4096, 8192};
    std::vector<std::size_t> K{8};
    std::size_t tokens = 64, repeats = 15, group = 128;
    bool no_hadamard = false;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_bench(const BenchArgs& a) {
    BenchConfig cfg;
    cfg.dims = a.dims;
    cfg.rotations = a.K;
    cfg.tokens = a.tokens;
    cfg.repeats = a.repeats;
    cfg.group_size = a.group;
    cfg.include_hadamard = !a.no_hadamard;
    cfg.seed = a.seed;
    if (cfg.tokens == 0 || cfg.repeats == 0 || cfg.group_size < 2) throw std::invalid_argument("bench sizes must be positive");
    const auto rows = bench_transforms(cfg);
    emit(a.out, [&](std::ostream& os) { write_bench_csv(os, rows); });
    return 0;
}

// ---- inspect

struct InspectArgs {
    std::string bundle, tensors, prefix;
};

void print_bundle(const TransformBundle& b) {
    const std::size_t G = b.groups.size();
    std::size_t K = 0, pairs = 0;
    for (const auto& grp : b.groups) {
        K = std::max(K, grp.size());
        for (const auto& rot : grp) pairs += rot.pairs.size();
    }
    std::cout << "channels        " << b.channels() << '\n'
              << "group size      " << b.layout.group_size << (b.layout.padded ? " (last group padded)" : "") << '\n'
              << "groups          " << G << '\n'
              << "rotations (K)   " << K << '\n'
              << "pairs           " << pairs << " total\n";
    for (std::size_t g = 0; g < G; ++g) {
        std::cout << "  group " << g << ':';
        for (const auto& rot : b.groups[g]) std::cout << ' ' << rot.pairs.size();
        std::cout << '\n';
    }
    const auto angles = b.flat_angles();
    if (!angles.empty()) {
        double mn = angles.front(), mx = angles.front(), sum_abs = 0.0;
        for (float a : angles) {
            mn = std::min<double>(mn, a);
            mx = std::max<double>(mx, a);
            sum_abs += std::fabs(a);
        }
        std::cout << "angles          min " << mn << "  max " << mx << "  mean |theta| "
                  << sum_abs / static_cast<double>(angles.size()) << '\n';
    }
    const auto [amin, amax] = std::minmax_element(b.alpha.begin(), b.alpha.end());
    std::cout << "alpha           [" << *amin << ", " << *amax << "]\n";
    TransformBundle rot = b;
    std::fill(rot.alpha.begin(), rot.alpha.end(), 1.0f);
    double residual = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
        const Matrix r = materialize(rot, g);
        const Matrix rtr = matmul_tn(r, r);
        for (std::size_t i = 0; i < rtr.rows(); ++i)
            for (std::size_t j = 0; j < rtr.cols(); ++j)
                residual = std::max(residual, std::fabs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
    }
    std::cout << "orthogonality   max |R^T R - I| = " << residual << '\n';
}

void print_tensors(const TensorFile& f) {
    std::cout << "fields  " << f.fields.dump() << '\n';
    for (const Tensor& t : f.tensors) {
        std::cout << std::left << std::setw(28) << t.name << ' ' << std::setw(12) << t.role << ' ' << std::setw(4)
                  << t.dtype() << " [";
        for (std::size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? "," : "") << t.shape[i];
        std::cout << "]\n";
    }
}

int cmd_inspect(const InspectArgs& a) {
    if (a.bundle.empty() == a.tensors.empty()) throw std::invalid_argument("inspect needs exactly one of --bundle or --tensors");
    if (!a.tensors.empty()) {
        print_tensors(load_tensors(a.tensors));
        return 0;
    }
    print_bundle(read_bundle(load_tensors(a.bundle), a.prefix));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paroq: pairwise-rotation quantization toolkit"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: $PQT_THREADS or all cores)");

    PairsArgs pa;
    auto* pairs = app.add_subcommand("pairs", "Select independent channel pairs");
    pairs->add_option("--g", pa.g, "Group size")->check(CLI::Range(2, 65535));
    pairs->add_option("--K", pa.K, "Rotations");
    pairs->add_option("--N", pa.N, "Pairs per rotation");
    pairs->add_option("--seed", pa.seed, "RNG seed");
    pairs->add_option("--out", pa.out, "Output JSON (default stdout)");

    QuantizeArgs qa;
    auto* quantize = app.add_subcommand("quantize", "Calibrate a model and write a run directory");
    quantize->add_option("--config", qa.config, "Run config JSON")->check(CLI::ExistingFile);
    quantize->add_option("--out", qa.out, "Run directory")->required();
    quantize->add_option("--model", qa.model, "FP model TensorFile (default: synthetic from config)")
        ->check(CLI::ExistingFile);
    quantize->add_option("--seed", qa.seed, "Overrides model, calibration and training seeds (s, s+1, s+2)");
    quantize->add_flag("--quiet", qa.quiet, "No progress on stderr");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Held-out output MSE of a run directory (JSON)");
    eval->add_option("--model", ea.model, "Run directory written by quantize")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--inputs", ea.inputs, "TensorFile of 2-D f32 input blocks")->check(CLI::ExistingFile);
    eval->add_option("--samples", ea.samples, "Synthetic held-out samples when --inputs is absent");
    eval->add_option("--seed", ea.seed, "Seed of the synthetic held-out inputs");

    CompareArgs ca;
    auto* compare = app.add_subcommand("compare-transforms", "Transform comparison harness (CSV)");
    compare->add_option("--config", ca.config, "Compare config JSON")->check(CLI::ExistingFile);
    compare->add_option("--out", ca.out, "Output CSV (default stdout)");
    compare->add_option("--seed", ca.seed, "RNG seed");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Fused pairwise transform vs FWHT timing (CSV)");
    bench->add_option("--dims", ba.dims, "Channel dimensions")->delimiter(',');
    bench->add_option("--K", ba.K, "Rotation counts")->delimiter(',');
    bench->add_option("--tokens", ba.tokens, "Tokens per call");
    bench->add_option("--repeats", ba.repeats, "Timed repeats (median reported)");
    bench->add_option("--group", ba.group, "Group size");
    bench->add_flag("--no-hadamard", ba.no_hadamard, "Skip the FWHT rows");
    bench->add_option("--seed", ba.seed, "RNG seed");
    bench->add_option("--out", ba.out, "Output CSV (default stdout)");

    InspectArgs ia;
    auto* inspect = app.add_subcommand("inspect", "Summarize a transform bundle or a TensorFile");
    inspect->add_option("--bundle", ia.bundle, "Bundle TensorFile")->check(CLI::ExistingFile);
    inspect->add_option("--prefix", ia.prefix, "Tensor name prefix (e.g. transform. for deployed linears)");
    inspect->add_option("--tensors", ia.tensors, "Any TensorFile")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        set_thread_count(threads);
        if (*pairs) return cmd_pairs(pa);
        if (*quantize) return cmd_quantize(qa);
        if (*eval) return cmd_eval(ea);
        if (*compare) return cmd_compare(ca);
        if (*bench) return cmd_bench(ba);
        if (*inspect) return cmd_inspect(ia);
    } catch (const FormatError& e) {
        std::cerr << "paroq: format error: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "paroq: invalid argument: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "paroq: error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
