// specinv: spectrogram inversion, training and benchmarks from the command line.
//
// Exit codes: 0 ok, 2 I/O, 3 configuration, 4 solver failure.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "specinv/specinv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace specinv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitSolver = 4;

void log(const std::string& msg) { std::cerr << "specinv: " << msg << "\n"; }

struct AnalysisFlags {
  std::size_t win = 1024;
  std::size_t hop = 256;
  std::string window = "hann";

  void add(CLI::App& app) {
    app.add_option("--win", win, "Window length in samples (even)")->capture_default_str();
    app.add_option("--hop", hop, "Hop size in samples")->capture_default_str();
    app.add_option("--window", window, "Analysis window: hann | gaussian:<lambda>")->capture_default_str();
  }

  AnalysisConfig config(double sample_rate) const {
    AnalysisConfig c;
    c.win_len = win;
    c.hop = hop;
    c.sample_rate = sample_rate;
    if (window == "hann") {
      c.window = WindowSpec::hann();
    } else if (window.starts_with("gaussian:")) {
      double lam = 0.0;
      try {
        lam = std::stod(window.substr(9));
      } catch (const std::exception&) {
        throw ConfigError("--window: cannot parse '" + window + "'");
      }
      if (!(lam > 0.0)) throw ConfigError("--window: gaussian width must be positive");
      c.window = WindowSpec::gaussian(lam);
    } else {
      throw ConfigError("--window: expected hann or gaussian:<lambda>, got '" + window + "'");
    }
    c.validate();
    return c;
  }
};

CnnMode parse_mode(const std::string& s) {
  if (s == "full") return CnnMode::Full;
  if (s == "strided") return CnnMode::Strided;
  throw ConfigError("--mode: expected full or strided, got '" + s + "'");
}

Lookahead parse_lookahead(const std::string& s) {
  if (s == "on") return Lookahead::On;
  if (s == "off") return Lookahead::Off;
  throw ConfigError("--lookahead: expected on or off, got '" + s + "'");
}

WeightScheme parse_scheme(const std::string& s) {
  for (auto k : {WeightScheme::Geometric, WeightScheme::SquaredCurrent, WeightScheme::Uniform, WeightScheme::TimeOnly})
    if (s == to_string(k)) return k;
  throw ConfigError("--weights-scheme: unknown scheme '" + s + "'");
}

wav::SampleFormat parse_format(const std::string& s) {
  if (s == "pcm16") return wav::SampleFormat::Pcm16;
  if (s == "float32") return wav::SampleFormat::Float32;
  throw ConfigError("--format: expected pcm16 or float32, got '" + s + "'");
}

/// Runs `fn`, mapping library exceptions to exit codes.
template <typename F>
int guarded(F&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    log(e.what());
    return kExitIo;
  } catch (const SolverError& e) {
    log(e.what());
    return kExitSolver;
  } catch (const ConfigError& e) {
    log(e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    log(e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log(e.what());
    return 1;
  }
}

// ---------------------------------------------------------------------------
// invert

struct InvertArgs {
  AnalysisFlags analysis;
  std::vector<std::string> inputs;
  std::string output;
  std::string output_dir;
  std::string weights;
  std::string mode = "full";
  std::string lookahead = "on";
  std::string init = "zeros";
  std::string scheme = "geometric";
  std::string format = "float32";
  bool oracle_features = false;
  unsigned jobs = 1;
  std::uint64_t seed = 0;
};

json invert_one(const InvertArgs& a, const std::string& in, const std::string& out,
                const CnnWeights<float>* weights, const InversionOptions& opt, wav::SampleFormat fmt) {
  const auto wave = wav::read(in);
  const auto cfg = a.analysis.config(wave.sample_rate);
  const auto spec = stft(wave, cfg);
  const auto lm = log_magnitude(spec);
  InversionResult res = weights ? invert(lm, *weights, opt, spec.data.frame(0))
                                : invert_with_features(lm, oracle_features(spec), opt, spec.data.frame(0), "oracle");
  res.wave.sample_rate = wave.sample_rate;
  wav::write(out, res.wave, fmt);
  auto j = report_json(res.report);
  j["input"] = in;
  j["output"] = out;
  return j;
}

int cmd_invert(const InvertArgs& a) {
  // Validate every flag before touching any file.
  const auto mode = parse_mode(a.mode);
  const auto la = parse_lookahead(a.lookahead);
  InversionOptions opt;
  opt.scheme = parse_scheme(a.scheme);
  opt.init = InitSpec::parse(a.init);
  opt.lookahead = la;
  const auto fmt = parse_format(a.format);
  a.analysis.config(16000.0);
  if (a.oracle_features && !a.weights.empty())
    throw ConfigError("--oracle-features and --weights are mutually exclusive");
  if (!a.oracle_features && a.weights.empty())
    throw ConfigError("--weights is required unless --oracle-features is given");
  if (la == Lookahead::Off && mode != CnnMode::Strided)
    throw ConfigError("--lookahead off requires --mode strided");
  if (a.inputs.empty()) throw ConfigError("--input is required");
  if (a.inputs.size() == 1 && a.output.empty() && a.output_dir.empty())
    throw ConfigError("--output or --output-dir is required");
  if (a.inputs.size() > 1 && a.output_dir.empty()) throw ConfigError("several --input files need --output-dir");
  if (a.inputs.size() > 1 && !a.output.empty()) throw ConfigError("--output takes one --input; use --output-dir");
  if (a.jobs == 0) throw ConfigError("--jobs must be at least 1");

  std::optional<CnnWeights<float>> weights;
  if (!a.oracle_features) {
    weights = siw::load<float>(a.weights);
    if (weights->mode() != mode)
      throw ConfigError(std::string("--weights holds a ") + to_string(weights->mode()) + " network but --mode is " +
                        a.mode);
  }
  if (!a.output_dir.empty()) fs::create_directories(a.output_dir);

  auto target = [&](const std::string& in) {
    if (!a.output.empty()) return a.output;
    return (fs::path(a.output_dir) / fs::path(in).filename()).string();
  };

  const std::size_t n = a.inputs.size();
  std::vector<json> reports(n);
  std::vector<int> codes(n, kExitOk);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      codes[i] = guarded([&] {
        reports[i] = invert_one(a, a.inputs[i], target(a.inputs[i]), weights ? &*weights : nullptr, opt, fmt);
        return kExitOk;
      });
      if (codes[i] != kExitOk) reports[i] = {{"input", a.inputs[i]}, {"error", codes[i]}};
    }
  };
  const unsigned threads = std::min<unsigned>(a.jobs, static_cast<unsigned>(n));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::cout << (n == 1 ? reports[0] : json(reports)).dump(2) << std::endl;
  int worst = kExitOk;
  for (int c : codes) worst = std::max(worst, c);
  return worst;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  AnalysisFlags analysis;
  std::string data;
  std::string out;
  std::string loss_csv;
  std::string resume;
  std::string mode = "full";
  std::size_t steps = 500;
  std::size_t batch = 8;
  double segment = 1.0;
  double lr = 1e-3;
  std::size_t ramp = 1000;
  std::size_t cycle = 1000;
  double decay = 0.97;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  TrainingConfig cfg;
  cfg.mode = parse_mode(a.mode);
  cfg.batch_size = a.batch;
  cfg.segment_seconds = a.segment;
  cfg.steps = a.steps;
  cfg.lr = {a.lr, a.ramp, a.cycle, a.decay};
  cfg.adam = {a.beta1, a.beta2, a.eps, a.weight_decay};
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.checkpoint_path = a.out;
  if (a.batch == 0 || !(a.segment > 0.0) || !(a.lr > 0.0) || a.ramp == 0 || a.cycle == 0)
    throw ConfigError("--batch, --segment, --lr, --ramp and --cycle must be positive");
  a.analysis.config(16000.0);

  std::optional<TrainState> resume;
  if (!a.resume.empty()) {
    resume = load_train_state(a.resume);
    if (resume->weights.mode() != cfg.mode)
      throw ConfigError("--resume state holds a " + std::string(to_string(resume->weights.mode())) +
                        " network but --mode is " + a.mode);
  }
  const auto corpus = load_dataset(a.data);
  cfg.stft = a.analysis.config(corpus.front().sample_rate);
  for (const auto& w : corpus)
    if (w.sample_rate != cfg.stft.sample_rate) throw ConfigError("dataset mixes sample rates");
  log("training on " + std::to_string(corpus.size()) + " clips");

  const std::string csv_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  write_loss_csv(csv, {}, true);
  const auto result = train(corpus, cfg, resume ? &*resume : nullptr, [&](const LossLogRow& row) {
    write_loss_csv(csv, {row}, false);
    csv.flush();
    if (row.step % 50 == 0) log("step " + std::to_string(row.step) + " loss " + std::to_string(row.total()));
  });
  siw::save(a.out, result.state.weights);
  save_train_state(a.out + ".state.json", result.state);

  json j{{"weights", a.out},
         {"state", a.out + ".state.json"},
         {"loss_csv", csv_path},
         {"mode", to_string(cfg.mode)},
         {"steps", result.state.step},
         {"params", result.state.weights.parameter_count()}};
  if (!result.log.empty()) {
    j["final_loss_fpd"] = result.log.back().loss_fpd;
    j["final_loss_bpd"] = result.log.back().loss_bpd;
  }
  std::cout << j.dump(2) << std::endl;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  bool solvers = false;
  bool cnn = false;
  std::string sizes = "128..8192";
  std::string csv;
  std::string weights;
  std::size_t runs = 10;
  std::size_t dense_cap = 4096;
  std::size_t cnn_bins = 513;
  std::size_t cnn_frames = 64;
  double fps = 62.5;
  double iterative_tol = 1e-8;
  std::uint64_t seed = 0;
};

/// "128..8192" (powers of two) or a comma-separated list of window sizes.
std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  auto num = [&s](const std::string& t) {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("--sizes: cannot parse '" + s + "'");
    return static_cast<std::size_t>(std::stoull(t));
  };
  if (const auto dots = s.find(".."); dots != std::string::npos) {
    const auto lo = num(s.substr(0, dots)), hi = num(s.substr(dots + 2));
    if (lo < 4 || hi < lo) throw ConfigError("--sizes: bad range '" + s + "'");
    for (std::size_t v = lo; v <= hi; v *= 2) out.push_back(v);
  } else {
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto comma = s.find(',', start);
      out.push_back(num(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  for (auto v : out)
    if (v < 4 || v % 2 != 0) throw ConfigError("--sizes: window sizes must be even and at least 4");
  return out;
}

int cmd_bench(BenchArgs a) {
  if (!a.solvers && !a.cnn) a.solvers = a.cnn = true;
  if (a.runs < 1) throw ConfigError("--runs must be at least 1");
  json out;
  bench::pin_to_current_cpu();
  if (a.solvers) {
    bench::SolverBenchConfig cfg;
    for (auto w : parse_sizes(a.sizes)) cfg.sizes.push_back(w / 2 + 1);
    cfg.runs = a.runs;
    cfg.seed = a.seed;
    cfg.dense_cap = a.dense_cap;
    cfg.iterative_tol = a.iterative_tol;
    std::optional<std::ofstream> csv;
    if (!a.csv.empty()) {
      csv.emplace(a.csv);
      if (!*csv) throw IoError("cannot write " + a.csv);
    }
    const auto recs = bench::bench_solvers(cfg);
    for (const auto& r : recs) {
      char sum[32];
      std::snprintf(sum, sizeof(sum), "%016llx", static_cast<unsigned long long>(r.checksum));
      log(r.solver + " n=" + std::to_string(r.n) + " checksum=" + sum + " median_ns=" + std::to_string(r.median_ns));
      out["solvers"].push_back({{"solver", r.solver},
                                {"n", r.n},
                                {"runs", r.runs},
                                {"median_ns", r.median_ns},
                                {"p01_ns", r.p01_ns},
                                {"p99_ns", r.p99_ns},
                                {"checksum", sum},
                                {"check_error", r.check_error}});
    }
    if (csv) bench::write_csv(*csv, recs, cfg.iterative_tol);
    out["iterative_tol"] = cfg.iterative_tol;
  }
  if (a.cnn) {
    for (auto mode : {CnnMode::Full, CnnMode::Strided}) {
      CnnWeights<float> w = CnnWeights<double>::he_uniform(mode, a.seed).cast<float>();
      if (!a.weights.empty()) {
        auto loaded = siw::load<float>(a.weights);
        if (loaded.mode() == mode) w = std::move(loaded);
      }
      const auto r = bench::bench_cnn(w, a.cnn_bins, a.fps, a.cnn_frames, a.runs, a.seed);
      out["cnn"][to_string(mode)] = {{"params", r.cost.params},
                                     {"macs_per_frame", r.cost.macs_per_frame},
                                     {"gmac_per_s", r.cost.gmac_per_s},
                                     {"median_ns_per_frame", r.timing.median_ns},
                                     {"p01_ns_per_frame", r.timing.p01_ns},
                                     {"p99_ns_per_frame", r.timing.p99_ns},
                                     {"params_reduction", r.params_ratio},
                                     {"gmac_reduction", r.gmac_ratio}};
    }
    out["cnn"]["strided_over_full_time"] = out["cnn"]["strided"]["median_ns_per_frame"].get<double>() /
                                           out["cnn"]["full"]["median_ns_per_frame"].get<double>();
  }
  std::cout << out.dump(2) << std::endl;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// metrics, roundtrip

struct MetricsArgs {
  AnalysisFlags analysis;
  std::string ref;
  std::string est;
};

int cmd_metrics(const MetricsArgs& a) {
  a.analysis.config(16000.0);
  const auto ref = wav::read(a.ref);
  const auto est = wav::read(a.est);
  const auto cfg = a.analysis.config(ref.sample_rate);
  if (est.sample_rate != ref.sample_rate) throw ConfigError("--ref and --est sample rates differ");
  const auto diff = ref.samples.size() > est.samples.size() ? ref.samples.size() - est.samples.size()
                                                            : est.samples.size() - ref.samples.size();
  if (diff > cfg.hop)
    throw ConfigError("--ref and --est lengths differ by " + std::to_string(diff) + " samples (more than one hop)");
  const double v = lsc(stft(ref, cfg), est);
  std::cout << json{{"lsc_db", v}, {"ref", a.ref}, {"est", a.est}, {"config", config_json(cfg)}}.dump(2) << std::endl;
  return kExitOk;
}

struct RoundtripArgs {
  AnalysisFlags analysis;
  std::string input;
  std::string output;
  std::string format = "float32";
};

int cmd_roundtrip(const RoundtripArgs& a) {
  const auto fmt = parse_format(a.format);
  a.analysis.config(16000.0);
  const auto wave = wav::read(a.input);
  const auto cfg = a.analysis.config(wave.sample_rate);
  auto back = istft(stft(wave, cfg));
  back.sample_rate = wave.sample_rate;
  // interior: samples covered by a full set of overlapping frames
  const std::size_t lo = std::min(cfg.win_len, wave.samples.size());
  const std::size_t hi = wave.samples.size() > cfg.win_len ? wave.samples.size() - cfg.win_len : lo;
  double err = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < wave.samples.size(); ++i) peak = std::max(peak, std::abs(wave.samples[i]));
  for (std::size_t i = lo; i < hi; ++i) err = std::max(err, std::abs(back.samples[i] - wave.samples[i]));
  if (!a.output.empty()) wav::write(a.output, back, fmt);
  std::cout << json{{"max_abs_error_interior", err}, {"peak", peak}, {"samples", wave.samples.size()},
                    {"config", config_json(cfg)}}
                   .dump(2)
            << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectrogram inversion with phase-derivative prediction and tridiagonal least squares", "specinv"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "specinv 1.0.0");

  InvertArgs inv;
  auto* c_inv = app.add_subcommand("invert", "Reconstruct audio from the magnitude of its STFT");
  inv.analysis.add(*c_inv);
  c_inv->add_option("--input", inv.inputs, "Input WAV file(s), mono")->required();
  c_inv->add_option("--output", inv.output, "Output WAV (single input)");
  c_inv->add_option("--output-dir", inv.output_dir, "Output directory (several inputs)");
  c_inv->add_option("--weights", inv.weights, "SIW1 weights file");
  c_inv->add_flag("--oracle-features", inv.oracle_features, "Use phase derivatives of the input instead of the CNN");
  c_inv->add_option("--mode", inv.mode, "Network mode: full | strided")->capture_default_str();
  c_inv->add_option("--lookahead", inv.lookahead, "Strided look-ahead: on | off")->capture_default_str();
  c_inv->add_option("--init", inv.init, "Frame-0 phase: zeros | random:<seed> | oracle")->capture_default_str();
  c_inv->add_option("--weights-scheme", inv.scheme, "Least-squares weights: geometric | squared | uniform | time-only")
      ->capture_default_str();
  c_inv->add_option("--format", inv.format, "Output sample format: pcm16 | float32")->capture_default_str();
  c_inv->add_option("--jobs", inv.jobs, "Parallel utterances")->capture_default_str();
  c_inv->add_option("--seed", inv.seed, "Random seed")->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the phase-derivative CNN on a directory of WAV files");
  tr.analysis.add(*c_tr);
  c_tr->add_option("--data", tr.data, "Directory of mono WAV files")->required();
  c_tr->add_option("--out", tr.out, "Output SIW1 weights file")->required();
  c_tr->add_option("--loss-csv", tr.loss_csv, "Loss log (default: <out>.loss.csv)");
  c_tr->add_option("--resume", tr.resume, "Training state file to continue from (<out>.state.json)");
  c_tr->add_option("--mode", tr.mode, "Network mode: full | strided")->capture_default_str();
  c_tr->add_option("--steps", tr.steps, "Total optimizer steps")->capture_default_str();
  c_tr->add_option("--batch", tr.batch, "Segments per batch")->capture_default_str();
  c_tr->add_option("--segment", tr.segment, "Segment length in seconds")->capture_default_str();
  c_tr->add_option("--lr", tr.lr, "Peak learning rate")->capture_default_str();
  c_tr->add_option("--ramp", tr.ramp, "Warm-up steps")->capture_default_str();
  c_tr->add_option("--cycle", tr.cycle, "Cosine cycle length in steps")->capture_default_str();
  c_tr->add_option("--decay", tr.decay, "Peak decay per cycle")->capture_default_str();
  c_tr->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay")->capture_default_str();
  c_tr->add_option("--beta1", tr.beta1, "First moment decay")->capture_default_str();
  c_tr->add_option("--beta2", tr.beta2, "Second moment decay")->capture_default_str();
  c_tr->add_option("--eps", tr.eps, "Adam epsilon")->capture_default_str();
  c_tr->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint interval in steps (0: off)")
      ->capture_default_str();
  c_tr->add_option("--seed", tr.seed, "Random seed")->capture_default_str();

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Time the solvers and the CNN");
  c_be->add_flag("--solvers", be.solvers, "Benchmark the linear solvers");
  c_be->add_flag("--cnn", be.cnn, "Benchmark CNN inference");
  c_be->add_option("--sizes", be.sizes, "Window sizes: lo..hi (doubling) or a comma list; n = size/2 + 1")
      ->capture_default_str();
  c_be->add_option("--csv", be.csv, "Solver timings CSV");
  c_be->add_option("--weights", be.weights, "SIW1 weights for the CNN benchmark (default: random)");
  c_be->add_option("--runs", be.runs, "Timed runs per measurement")->capture_default_str();
  c_be->add_option("--dense-cap", be.dense_cap, "Largest n for the dense solver")->capture_default_str();
  c_be->add_option("--cnn-bins", be.cnn_bins, "Frequency bins for the CNN benchmark")->capture_default_str();
  c_be->add_option("--cnn-frames", be.cnn_frames, "Frames per CNN call")->capture_default_str();
  c_be->add_option("--fps", be.fps, "Frames per second for GMAC/s")->capture_default_str();
  c_be->add_option("--iterative-tol", be.iterative_tol, "Iterative solver tolerance")->capture_default_str();
  c_be->add_option("--seed", be.seed, "Random seed")->capture_default_str();

  MetricsArgs me;
  auto* c_me = app.add_subcommand("metrics", "Log-spectral convergence of an estimate against a reference");
  me.analysis.add(*c_me);
  c_me->add_option("--ref", me.ref, "Reference WAV")->required();
  c_me->add_option("--est", me.est, "Estimate WAV")->required();

  RoundtripArgs rt;
  auto* c_rt = app.add_subcommand("roundtrip", "STFT analysis followed by ISTFT synthesis");
  rt.analysis.add(*c_rt);
  c_rt->add_option("--input", rt.input, "Input WAV")->required();
  c_rt->add_option("--output", rt.output, "Resynthesised WAV");
  c_rt->add_option("--format", rt.format, "Output sample format: pcm16 | float32")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (c_inv->parsed()) return guarded([&] { return cmd_invert(inv); });
  if (c_tr->parsed()) return guarded([&] { return cmd_train(tr); });
  if (c_be->parsed()) return guarded([&] { return cmd_bench(be); });
  if (c_me->parsed()) return guarded([&] { return cmd_metrics(me); });
  if (c_rt->parsed()) return guarded([&] { return cmd_roundtrip(rt); });
  return kExitConfig;
}
