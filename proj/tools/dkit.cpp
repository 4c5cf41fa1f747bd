// dkit: command-line front end for the denoiser toolkit.
//
//   dkit stats      --data PATH
//   dkit sample     --denoiser SPEC [--data PATH] --steps N --count K
//   dkit distill    --teacher SPEC --data PATH --sigmas 0.5,1,4
//   dkit train-toy  --data PATH --sigma S
//   dkit metrics    --metric linearity|score-diff|orthogonality --denoiser SPEC --data PATH
//   dkit verify     --suite theorem1|trajectory|memorize|orthogonality
//
// Every subcommand writes its outputs plus manifest.json into --out
// (default: $DKIT_OUT_DIR, else the current directory). `--config FILE`
// supplies flags from a JSON object (or a previous manifest); flags given on
// the command line win.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dkit/dkit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dkit;

namespace {

enum ExitCode { kOk = 0, kFailed = 1, kUsage = 2, kIo = 3, kPlugin = 4 };

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("bad number '") + item + "' in " + what);
    }
  }
  if (out.empty()) throw InvalidArgument(std::string(what) + " is empty");
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json describe_input(const std::string& path) {
  json j = {{"path", path}};
  std::error_code ec;
  if (fs::is_regular_file(path, ec)) {
    const auto bytes = binio::read_file(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
    j["bytes"] = bytes.size();
    j["fnv1a64"] = hex64(h);
  } else if (fs::is_directory(path, ec)) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".pgm") ++n;
    j["pgm_files"] = n;
  }
  return j;
}

class Outputs {
 public:
  Outputs(std::string dir, json manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw IoError("cannot create output directory " + dir_);
  }
  void text(const std::string& name, const std::string& content) {
    binio::write_text(fs::path(dir_) / name, content);
    manifest_["outputs"].push_back(name);
  }
  void bytes(const std::string& name, const std::vector<unsigned char>& content) {
    binio::write_file(fs::path(dir_) / name, content);
    manifest_["outputs"].push_back(name);
  }
  void input(const std::string& path) { manifest_["inputs"].push_back(describe_input(path)); }
  void finish() { binio::write_text(fs::path(dir_) / "manifest.json", manifest_.dump(2) + "\n"); }

 private:
  std::string dir_;
  json manifest_;
};

struct DataArgs {
  std::string path;
  std::string format;

  bool given() const { return !path.empty(); }

  DataMatrix load() const {
    if (path.empty()) throw InvalidArgument("--data is required");
    DataFormat f;
    if (!format.empty()) {
      f = parse_data_format(format);
    } else {
      std::error_code ec;
      if (fs::is_directory(path, ec)) f = DataFormat::pgm_dir;
      else if (fs::path(path).extension() == ".csv") f = DataFormat::csv;
      else f = DataFormat::raw_f64;
    }
    return load_dataset(path, f);
  }
};

// Lazily loaded data and stats shared by the denoiser specs of one command.
struct Context {
  DataArgs data_args;
  Eigen::Index dim = 0;
  int timeout_ms = 30000;
  std::optional<DataMatrix> data;
  std::optional<GaussianStats> stats;

  const DataMatrix& need_data(const std::string& who) {
    if (!data) {
      if (!data_args.given()) throw InvalidArgument(who + " needs --data");
      data = data_args.load();
    }
    return *data;
  }
  const GaussianStats& need_stats(const std::string& who) {
    if (!stats) stats = empirical_stats(need_data(who));
    return *stats;
  }
  Eigen::Index need_dim(const std::string& who) {
    if (data_args.given()) return need_data(who).dim();
    if (dim > 0) return dim;
    throw InvalidArgument(who + " needs --data or --dim");
  }
};

std::string strip_quotes(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

// Denoiser spec syntax: multi-delta | gaussian | closed-form | identity | affine:PATH |
// toy:PATH | external:"command args"
DenoiserPtr make_denoiser(const std::string& spec, Context& ctx, Outputs* out) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  DenoiserPtr D;
  if (kind == "multi-delta") {
    D = std::make_shared<MultiDeltaDenoiser>(ctx.need_data(spec));
  } else if (kind == "gaussian") {
    D = std::make_shared<GaussianDenoiser>(ctx.need_stats(spec));
  } else if (kind == "closed-form") {
    D = std::make_shared<ClosedFormDenoiser>(ctx.need_stats(spec));
  } else if (kind == "identity") {
    D = identity_denoiser(ctx.need_dim(spec));
  } else if (kind == "affine" && !arg.empty()) {
    D = std::make_shared<AffineMap>(load_affine(arg));
    if (out) out->input(arg);
  } else if (kind == "toy" && !arg.empty()) {
    D = std::make_shared<ToyDenoiser>(load_toy(arg));
    if (out) out->input(arg);
  } else if (kind == "external" && !arg.empty()) {
    auto proc = std::make_shared<PluginProcess>(detail::split_command(strip_quotes(arg)), ctx.need_dim(spec),
                                                std::chrono::milliseconds(ctx.timeout_ms));
    D = std::make_shared<ExternalDenoiser>(std::move(proc));
  } else {
    throw InvalidArgument("unknown denoiser spec '" + spec +
                          "' (multi-delta, gaussian, closed-form, identity, affine:PATH, toy:PATH, external:CMD)");
  }
  if (ctx.data_args.given()) require_dim(D->dim(), ctx.need_data(spec).dim(), ("denoiser " + spec).c_str());
  return D;
}

std::string csv_row(const Vector& v) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index j = 0; j < v.size(); ++j) os << (j ? "," : "") << v(j);
  return os.str();
}

std::string header(const char* lead, Eigen::Index d) {
  std::ostringstream os;
  os << lead;
  for (Eigen::Index j = 0; j < d; ++j) os << (os.tellp() > 0 ? "," : "") << 'x' << j;
  return os.str();
}

// ---------------------------------------------------------------------------

struct Common {
  std::string out;
  std::uint64_t seed = 0;
};

struct ScheduleArgs {
  int steps = 10;
  double sigma_min = 0.002, sigma_max = 80.0, rho = 7.0;
  std::string sigmas;

  void add(CLI::App* c) {
    c->add_option("--steps", steps, "Number of noise levels");
    c->add_option("--sigma-min", sigma_min, "Smallest noise level");
    c->add_option("--sigma-max", sigma_max, "Largest noise level");
    c->add_option("--rho", rho, "Schedule warping exponent");
  }
  SigmaSchedule make() const {
    if (!sigmas.empty()) {
      auto v = parse_list(sigmas, "--sigmas");
      for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) throw InvalidArgument("--sigmas must be strictly decreasing");
      if (!(v.back() > 0.0)) throw InvalidArgument("--sigmas must be positive");
      return {v.back(), v.front(), 0.0, v};
    }
    return edm_schedule(sigma_min, sigma_max, rho, steps);
  }
};

int cmd_stats(Context& ctx, Outputs& out) {
  out.input(ctx.data_args.path);
  const GaussianStats& s = ctx.need_stats("stats");
  std::ostringstream mean, eig;
  mean.precision(17);
  eig.precision(17);
  mean << "index,mean\n";
  for (Eigen::Index i = 0; i < s.dim(); ++i) mean << i << ',' << s.mean(i) << '\n';
  eig << "index,eigval\n";
  for (Eigen::Index i = 0; i < s.eigvals.size(); ++i) eig << i << ',' << s.eigvals(i) << '\n';
  out.text("mean.csv", mean.str());
  out.text("eigvals.csv", eig.str());
  out.bytes("basis.f64", encode_raw(RowMatrix(s.basis)));
  const json summary = {{"dim", s.dim()},
                        {"n_samples", ctx.data->n_samples()},
                        {"components", s.components()},
                        {"rank", s.rank()},
                        {"total_variance", s.eigvals.sum()}};
  out.text("stats.json", summary.dump(2) + "\n");
  std::cout << "stats: dim=" << s.dim() << " n=" << ctx.data->n_samples() << " rank=" << s.rank() << '\n';
  return kOk;
}

struct SampleArgs {
  std::string denoiser;
  ScheduleArgs schedule;
  int count = 1;
  bool raw_steps = false;
};

int cmd_sample(Context& ctx, Outputs& out, const SampleArgs& a, std::uint64_t seed) {
  if (a.count < 1) throw InvalidArgument("--count must be at least 1");
  if (ctx.data_args.given()) out.input(ctx.data_args.path);
  const SigmaSchedule sched = a.schedule.make();
  const bool closed = a.denoiser == "closed-form";
  DenoiserPtr D;
  Eigen::Index d = 0;
  if (closed) {
    d = ctx.need_stats("closed-form trajectory").dim();
  } else {
    D = make_denoiser(a.denoiser, ctx, &out);
    d = D->dim();
  }
  std::ostringstream traj;
  traj.precision(17);
  traj << header("sample,step,sigma", d) << '\n';
  Matrix finals(a.count, d);
  std::vector<RowMatrix> per_step;
  for (int s = 0; s < a.count; ++s) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    const Vector x_T = normal_vector(rng, d, sched.sigma_max());
    const Trajectory t = closed ? gaussian_trajectory(*ctx.stats, x_T, sched) : ode_sample(*D, sched, x_T);
    for (std::size_t i = 0; i < t.size(); ++i) traj << s << ',' << i << ',' << t.sigmas[i] << ',' << csv_row(t.states[i]) << '\n';
    finals.row(s) = t.final_state().transpose();
    if (a.raw_steps) {
      per_step.resize(t.size(), RowMatrix(a.count, d));
      for (std::size_t i = 0; i < t.size(); ++i) per_step[i].row(s) = t.states[i].transpose();
    }
  }
  std::ostringstream samples;
  samples.precision(17);
  samples << header("", d) << '\n';
  for (Eigen::Index s = 0; s < finals.rows(); ++s) samples << csv_row(finals.row(s).transpose()) << '\n';
  out.text("samples.csv", samples.str());
  out.text("trajectories.csv", traj.str());
  for (std::size_t i = 0; i < per_step.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "states_%04zu.f64", i);
    out.bytes(name, encode_raw(per_step[i]));
  }
  if (ctx.data_args.given()) {
    const DataMatrix& Y = ctx.need_data("report");
    int near = 0;
    for (Eigen::Index s = 0; s < finals.rows(); ++s)
      if (relative_nn_distance(Y, finals.row(s).transpose()) < 1e-2) ++near;
    const Estimate gl = gl_score(finals, Y);
    const json report = {{"count", a.count},
                         {"gl_score", gl.value},
                         {"gl_skipped", gl.skipped},
                         {"generalizes", gl.value > kGeneralizationThreshold},
                         {"fraction_within_1e-2_of_training_row", static_cast<double>(near) / a.count}};
    out.text("report.json", report.dump(2) + "\n");
    std::cout << "sample: " << a.count << " samples, gl_score=" << gl.value << '\n';
  } else {
    std::cout << "sample: " << a.count << " samples\n";
  }
  return kOk;
}

struct DistillArgs {
  std::string teacher;
  std::string sigmas = "1";
  int steps = 2000, batch = 64;
  double lr = 1e-2;
  std::string optimizer = "adam", lr_schedule = "constant";
};

int cmd_distill(Context& ctx, Outputs& out, const DistillArgs& a, std::uint64_t seed) {
  out.input(ctx.data_args.path);
  const DataMatrix& X = ctx.need_data("distill");
  const GaussianStats& stats = ctx.need_stats("distill");
  DenoiserPtr teacher = make_denoiser(a.teacher, ctx, &out);
  DistillConfig cfg;
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  if (a.optimizer == "adam") cfg.adam = true;
  else if (a.optimizer == "gd") cfg.adam = false;
  else throw InvalidArgument("--optimizer must be adam or gd");
  if (a.lr_schedule == "constant") cfg.schedule = LrSchedule::constant;
  else if (a.lr_schedule == "cosine") cfg.schedule = LrSchedule::cosine;
  else throw InvalidArgument("--lr-schedule must be constant or cosine");
  json report = json::array();
  const auto sigmas = parse_list(a.sigmas, "--sigmas");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double sigma = sigmas[i];
    cfg.seed = derive_seed(seed, i);
    const LinearFit fit = distill_linear(*teacher, X, sigma, cfg);
    const AffineDenoiser ref = closed_form_linear(stats, sigma);
    const std::string ck = "affine_" + std::to_string(i) + ".aff";
    out.bytes(ck, encode_affine(fit.model));
    out.text("loss_" + std::to_string(i) + ".csv", loss_csv(fit.loss));
    const double nmse = weight_nmse(fit.model.weight, ref.weight);
    const double bias_err = (fit.model.bias - ref.bias).norm() / std::max(ref.bias.norm(), 1e-300);
    report.push_back({{"sigma", sigma},
                      {"checkpoint", ck},
                      {"seed", cfg.seed},
                      {"final_loss", fit.loss.back()},
                      {"weight_nmse_vs_closed_form", nmse},
                      {"bias_relative_error_vs_closed_form", bias_err}});
    std::cout << "distill: sigma=" << sigma << " weight_nmse=" << nmse << '\n';
  }
  out.text("report.json", report.dump(2) + "\n");
  return kOk;
}

struct ToyArgs {
  double sigma = 1.0;
  int hidden = 64, steps = 2000, batch = 64;
  double lr = 1e-3;
  std::string mode = "dae";
};

int cmd_train_toy(Context& ctx, Outputs& out, const ToyArgs& a, std::uint64_t seed) {
  out.input(ctx.data_args.path);
  const DataMatrix& X = ctx.need_data("train-toy");
  ToyMode mode;
  if (a.mode == "dae") mode = ToyMode::dae;
  else if (a.mode == "skip") mode = ToyMode::skip;
  else throw InvalidArgument("--mode must be dae or skip");
  ToyTrainConfig cfg;
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  cfg.seed = seed;
  const ToyTrainResult r = train_toy(init_toy(derive_seed(seed, 7), X.dim(), a.hidden, mode), X, a.sigma, cfg);
  out.bytes("toy.toy", encode_toy(r.model));
  std::ostringstream os;
  os.precision(17);
  os << "step,train_loss,validation_loss\n";
  for (std::size_t i = 0; i < r.train_loss.size(); ++i)
    os << i << ',' << r.train_loss[i] << ',' << r.validation_loss[i] << '\n';
  out.text("loss.csv", os.str());
  const json report = {{"sigma", a.sigma},
                       {"initial_validation_loss", r.validation_loss.front()},
                       {"final_validation_loss", r.validation_loss.back()},
                       {"diverged", r.diverged}};
  out.text("report.json", report.dump(2) + "\n");
  std::cout << "train-toy: final validation loss " << r.validation_loss.back() << (r.diverged ? " (diverged)" : "")
            << '\n';
  return kOk;
}

struct MetricArgs {
  std::string metric, denoiser, reference, variant;
  ScheduleArgs schedule;
  int n = kDefaultDraws;
  double alpha = std::sqrt(0.5), beta = std::sqrt(0.5);
  bool svg = false;
};

int cmd_metrics(Context& ctx, Outputs& out, const MetricArgs& a, std::uint64_t seed) {
  out.input(ctx.data_args.path);
  const DataMatrix& X = ctx.need_data("metrics");
  const SigmaSchedule sched = a.schedule.make();
  DenoiserPtr D = make_denoiser(a.denoiser, ctx, &out);
  LevelMetric fn;
  std::string name = a.metric;
  if (a.metric == "linearity") {
    const auto v = a.variant.empty() || a.variant == "cosine" ? LinearityVariant::cosine
                   : a.variant == "nmse"                      ? LinearityVariant::nmse
                        : throw InvalidArgument("linearity --variant must be cosine or nmse");
    name += v == LinearityVariant::cosine ? "_cosine" : "_nmse";
    fn = [&, v](double sigma, std::uint64_t s) { return linearity_score(*D, X, sigma, a.alpha, a.beta, a.n, s, v).value; };
  } else if (a.metric == "score-diff") {
    if (a.reference.empty()) throw InvalidArgument("score-diff needs --reference");
    const auto v = a.variant.empty() || a.variant == "rmse" ? ScoreDiffVariant::rmse
                   : a.variant == "nmse"                    ? ScoreDiffVariant::nmse
                        : throw InvalidArgument("score-diff --variant must be rmse or nmse");
    name += v == ScoreDiffVariant::rmse ? "_rmse" : "_nmse";
    DenoiserPtr R = make_denoiser(a.reference, ctx, &out);
    fn = [&, v, R](double sigma, std::uint64_t s) { return score_diff(*D, *R, X, sigma, a.n, s, v); };
  } else if (a.metric == "orthogonality") {
    fn = [&](double sigma, std::uint64_t s) { return orthogonality_residual(*D, X, sigma, a.n, s); };
  } else {
    throw InvalidArgument("--metric must be linearity, score-diff or orthogonality");
  }
  const MetricSeries series = metric_sweep(name, fn, sched, seed, a.n);
  out.text(name + ".csv", series_csv(series));
  out.text(name + ".json", series_json(series).dump(2) + "\n");
  if (a.svg) out.text(name + ".svg", svg_plot({series}, name));
  for (std::size_t i = 0; i < series.values.size(); ++i)
    std::cout << name << " sigma=" << series.sigmas[i] << " value=" << series.values[i] << '\n';
  return kOk;
}

struct VerifyArgs {
  std::string suite;
  double tolerance = 0.0;
  int dim = 16, n_samples = 0;
};

int cmd_verify(Outputs& out, const VerifyArgs& a, bool tol_given, std::uint64_t seed) {
  VerifyOptions o;
  o.dim = a.dim;
  o.n_samples = a.n_samples;
  o.seed = seed;
  if (tol_given) o.tolerance = a.tolerance;
  const VerifyReport rep = run_verify(a.suite, o);
  out.text("verify.json", rep.to_json().dump(2) + "\n");
  for (const auto& c : rep.checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << c.value
              << (c.tolerance != 0.0 || !c.upper ? (c.upper ? " < " : " > ") + detail::fmt(c.tolerance) : std::string())
              << '\n';
  std::cout << (rep.passed() ? "PASS " : "FAIL ") << a.suite << '\n';
  return rep.passed() ? kOk : kFailed;
}

// ---------------------------------------------------------------------------

// Converts a JSON config (flat object of flag -> value, or a manifest with
// "command" and "flags") into command-line tokens.
std::vector<std::string> config_tokens(const json& cfg, std::string& command) {
  const json* flags = &cfg;
  if (cfg.contains("flags") && cfg["flags"].is_object()) {
    flags = &cfg["flags"];
    if (cfg.contains("command") && cfg["command"].is_string()) command = cfg["command"].get<std::string>();
  }
  if (!flags->is_object()) throw InvalidArgument("config must be a JSON object");
  std::vector<std::string> toks;
  for (const auto& [key, value] : flags->items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) toks.push_back(flag);
    } else if (value.is_null()) {
    } else if (value.is_string()) {
      toks.push_back(flag);
      toks.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      toks.push_back(flag);
      toks.push_back(joined);
    } else {
      toks.push_back(flag);
      toks.push_back(value.dump());
    }
  }
  return toks;
}

// Options given explicitly (exact strings, replayable through --config) and
// the defaults of the rest (informational).
std::pair<json, json> effective_flags(const CLI::App* sub) {
  json given = json::object(), defaults = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string key = opt->get_lnames().front();
    if (key == "help") continue;
    if (opt->get_expected_max() == 0) {
      if (opt->count() > 0) given[key] = true;
      continue;
    }
    if (opt->count() > 0) given[key] = opt->as<std::string>();
    else if (!opt->get_default_str().empty()) defaults[key] = opt->get_default_str();
  }
  return {given, defaults};
}

int exit_code_for(const std::exception_ptr& p) {
  try {
    std::rethrow_exception(p);
  } catch (const StepError& e) {
    return e.cause() ? exit_code_for(e.cause()) : kFailed;
  } catch (const PluginError&) {
    return kPlugin;
  } catch (const InvalidArgument&) {
    return kUsage;
  } catch (const IoError&) {
    return kIo;
  } catch (const FormatError&) {
    return kIo;
  } catch (const std::exception&) {
    return kFailed;
  }
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);

  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config_path.empty()) {
    json cfg;
    try {
      const auto bytes = binio::read_file(config_path);
      cfg = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      throw FormatError(config_path + ": " + e.what());
    }
    std::string command;
    auto toks = config_tokens(cfg, command);
    const bool has_sub = !args.empty() && args.front().rfind("-", 0) != 0;
    if (!has_sub) {
      if (command.empty()) throw InvalidArgument("no subcommand given and the config names none");
      args.insert(args.begin(), command);
    }
    args.insert(args.begin() + 1, toks.begin(), toks.end());
  }

  CLI::App app{"Analytic diffusion denoisers, linear distillation and diagnostics"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

  Common common;
  const char* env_out = std::getenv("DKIT_OUT_DIR");
  common.out = env_out && *env_out ? env_out : ".";
  Context ctx;
  SampleArgs sample;
  DistillArgs distill;
  ToyArgs toy;
  MetricArgs metric;
  VerifyArgs verify;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--out", common.out, "Output directory");
    c->add_option("--seed", common.seed, "Master seed");
  };
  auto add_data = [&](CLI::App* c, bool required) {
    auto* o = c->add_option("--data", ctx.data_args.path, "Dataset path (csv, raw-f64 or directory of PGM)");
    if (required) o->required();
    c->add_option("--format", ctx.data_args.format, "Dataset format: csv, raw-f64, pgm-dir (default: inferred)");
  };

  auto* stats = app.add_subcommand("stats", "Empirical mean, eigenvalues and basis of a dataset");
  add_common(stats);
  add_data(stats, true);

  auto* samp = app.add_subcommand("sample", "Probability-flow ODE sampling");
  add_common(samp);
  add_data(samp, false);
  samp->add_option("--denoiser", sample.denoiser, "Denoiser spec, or closed-form for the exact Gaussian path")->required();
  sample.schedule.add(samp);
  samp->add_option("--sigmas", sample.schedule.sigmas, "Explicit decreasing noise levels (overrides the schedule)");
  samp->add_option("--count", sample.count, "Number of samples");
  samp->add_option("--dim", ctx.dim, "Dimension when no dataset is given");
  samp->add_option("--timeout-ms", ctx.timeout_ms, "Plugin response timeout");
  samp->add_flag("--raw-steps", sample.raw_steps, "Also write one raw-f64 container of states per step");

  auto* dist = app.add_subcommand("distill", "Fit affine denoisers to a teacher");
  add_common(dist);
  add_data(dist, true);
  dist->add_option("--teacher", distill.teacher, "Teacher denoiser spec")->required();
  dist->add_option("--sigmas", distill.sigmas, "Comma-separated noise levels");
  dist->add_option("--steps", distill.steps, "Optimization steps");
  dist->add_option("--batch", distill.batch, "Batch size");
  dist->add_option("--lr", distill.lr, "Learning rate");
  dist->add_option("--optimizer", distill.optimizer, "adam or gd");
  dist->add_option("--lr-schedule", distill.lr_schedule, "constant or cosine");
  dist->add_option("--timeout-ms", ctx.timeout_ms, "Plugin response timeout");

  auto* train = app.add_subcommand("train-toy", "Train a small network denoiser at one noise level");
  add_common(train);
  add_data(train, true);
  train->add_option("--sigma", toy.sigma, "Noise level");
  train->add_option("--hidden", toy.hidden, "Hidden width");
  train->add_option("--steps", toy.steps, "Adam steps");
  train->add_option("--batch", toy.batch, "Batch size");
  train->add_option("--lr", toy.lr, "Learning rate");
  train->add_option("--mode", toy.mode, "dae or skip");

  auto* met = app.add_subcommand("metrics", "Per-sigma metric sweeps");
  add_common(met);
  add_data(met, true);
  met->add_option("--metric", metric.metric, "linearity, score-diff or orthogonality")->required();
  met->add_option("--denoiser", metric.denoiser, "Denoiser spec")->required();
  met->add_option("--reference", metric.reference, "Second denoiser for score-diff");
  met->add_option("--variant", metric.variant, "cosine|nmse (linearity), rmse|nmse (score-diff)");
  metric.schedule.add(met);
  met->add_option("--sigmas", metric.schedule.sigmas, "Explicit decreasing noise levels (overrides the schedule)");
  met->add_option("--n", metric.n, "Monte-Carlo draws per level");
  met->add_option("--alpha", metric.alpha, "Linearity weight alpha");
  met->add_option("--beta", metric.beta, "Linearity weight beta");
  met->add_flag("--svg", metric.svg, "Also write an SVG line plot");
  met->add_option("--timeout-ms", ctx.timeout_ms, "Plugin response timeout");

  auto* ver = app.add_subcommand("verify", "Built-in verification suites");
  add_common(ver);
  ver->add_option("--suite", verify.suite, "theorem1, trajectory, memorize or orthogonality")->required();
  auto* tol = ver->add_option("--tolerance", verify.tolerance, "Override the suite's main tolerance (> 0)");
  ver->add_option("--dim", verify.dim, "Dimension of the synthetic data");
  ver->add_option("--n-samples", verify.n_samples, "Dataset size (0 = suite default)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "dkit: usage error: " << one_line(e.what()) << '\n';
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "verify" && tol->count() > 0 && !(verify.tolerance > 0.0))
    throw InvalidArgument("--tolerance must be positive");
  auto [given, defaults] = effective_flags(sub);
  given["out"] = common.out;
  given["seed"] = std::to_string(common.seed);
  json manifest = make_manifest(name, given, common.seed);
  manifest["defaults"] = defaults;
  Outputs out(common.out, std::move(manifest));
  int rc = kOk;
  if (name == "stats") rc = cmd_stats(ctx, out);
  else if (name == "sample") rc = cmd_sample(ctx, out, sample, common.seed);
  else if (name == "distill") rc = cmd_distill(ctx, out, distill, common.seed);
  else if (name == "train-toy") rc = cmd_train_toy(ctx, out, toy, common.seed);
  else if (name == "metrics") rc = cmd_metrics(ctx, out, metric, common.seed);
  else if (name == "verify") rc = cmd_verify(out, verify, tol->count() > 0, common.seed);
  out.finish();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (...) {
    const int code = exit_code_for(std::current_exception());
    try {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "dkit: error: " << one_line(e.what()) << '\n';
    } catch (...) {
      std::cerr << "dkit: error: unknown failure\n";
    }
    return code;
  }
}
