#include "cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "coefflab/checks.hpp"
#include "coefflab/hull.hpp"
#include "coefflab/params.hpp"
#include "coefflab/peft.hpp"
#include "coefflab/report.hpp"
#include "coefflab/toy.hpp"

namespace coefflab::cli {
namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kSubcommands{"toy", "props", "params", "peft"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct FileConfig {
  std::string subcommand;
  std::vector<std::string> tokens;  // --key=value
};

// Flat key=value lines, '#' comments. "subcommand" selects the command when
// none is given on the command line.
FileConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  FileConfig cfg;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string value = trim(line.substr(eq + 1));
    if (key == "config") throw ConfigError("config files cannot include other config files");
    if (key == "subcommand") {
      cfg.subcommand = value;
      continue;
    }
    cfg.tokens.push_back("--" + key + "=" + value);
  }
  return cfg;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    T v{};
    auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || end != item.data() + item.size()) {
      throw ConfigError(std::string("bad ") + what + " list '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

// 4 significant digits, exponent without padding: 1.052e-5.
std::string fmt_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  std::string s = buf;
  const auto e = s.find('e');
  std::string mant = s.substr(0, e), exp = s.substr(e + 1);
  const bool neg = exp[0] == '-';
  exp.erase(0, 1);
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return mant + "e" + (neg ? "-" : "") + exp;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt_double(v[i]);
  return s;
}

struct Common {
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 1;
  std::string config;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  sub->add_option("--out", c.out, "Output directory; COEFFLAB_OUT applies when this flag is absent")
      ->capture_default_str();
  sub->add_option("--jobs", c.jobs, "OpenMP threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--config", c.config, "Flat key=value file; command-line flags win");
}

struct Context {
  fs::path out_dir;
  int jobs = 1;
  std::uint64_t seed = 0;
  std::ostream& out;
  std::ostream& err;
};

std::ofstream open_csv(const Context& ctx, const char* name) {
  std::ofstream f(ctx.out_dir / name);
  if (!f) throw ConfigError("cannot write " + (ctx.out_dir / name).string());
  return f;
}

// toy ------------------------------------------------------------------------

struct ToyOpts {
  std::string regime = "all";
  std::size_t heads = 2;
  std::size_t steps = 5000;
  double lr = 1e-2;
  std::string optimizer = "adam";
  std::string value_init = "identity";
  double init_std = 0.02;
  bool alpha_trains_value = false;
};

int cmd_toy(const ToyOpts& o, const Context& ctx) {
  TrainConfig cfg;
  cfg.heads = o.heads;
  cfg.steps = o.steps;
  cfg.learning_rate = o.lr;
  cfg.seed = ctx.seed;
  cfg.optimizer = parse_optimizer(o.optimizer);
  cfg.value_init = parse_value_init(o.value_init);
  cfg.init_std = o.init_std;
  cfg.alpha_trains_value = o.alpha_trains_value;
  const bool all = o.regime == "all";
  if (!all) cfg.regime = parse_regime(o.regime);
  validate(cfg);

  const ToyInstance inst = build_toy_instance();
  std::vector<TrainResult> results;
  bool ordering = true;
  if (all) {
    RegimeComparison cmp = run_regime_comparison(inst, cfg, ctx.jobs);
    results = std::move(cmp.results);
    ordering = cmp.ordering_holds;
  } else {
    results.push_back(train_toy(inst, cfg));
  }

  {
    std::ofstream f = open_csv(ctx, "loss_curves.csv");
    CsvWriter csv(f, {"regime", "step", "loss"});
    for (const auto& r : results) {
      for (std::size_t s = 0; s < r.loss_curve.size(); ++s) {
        csv.row({to_string(r.regime), std::to_string(s), fmt_double(r.loss_curve[s])});
      }
    }
  }
  std::vector<ScatterSeries> series{{"input", "#9e9e9e", inst.x, 5.0},
                                    {"target", "#000000", inst.target, 3.0}};
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
  for (const auto& r : results) {
    series.push_back({to_string(r.regime), colors[static_cast<int>(r.regime)], r.final_output, 4.0});
  }
  {
    std::ofstream f = open_csv(ctx, "final_nodes.csv");
    CsvWriter csv(f, {"series", "node", "x", "y"});
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.points.rows(); ++i) {
        csv.row({s.label, std::to_string(i), fmt_double(s.points(i, 0)),
                 fmt_double(s.points(i, 1))});
      }
    }
  }
  write_text_file(ctx.out_dir / "toy_plot.svg",
                  scatter_svg(series, "toy graph: input, target and tuned outputs"));

  for (const auto& r : results) {
    ctx.out << std::left << std::setw(14) << to_string(r.regime) << " final_mse "
            << fmt_sci(r.final_mse) << "  peak |coord| " << fmt_sci(r.peak_abs_coordinate) << "\n";
  }
  if (!all) return kOk;
  ctx.out << "ordering: " << (ordering ? "PASS" : "FAIL") << "\n";
  if (!ordering) {
    ctx.err << "regime ordering failed: qk-plus-alpha must reach mse < " << kToyTargetMse
            << " with the other regimes at least " << kToyGapFactor << "x higher\n";
    return kAssertionFailed;
  }
  return kOk;
}

// props ----------------------------------------------------------------------

struct PropsOpts {
  std::size_t trials = 1000;
  std::string suite = "all";
};

enum class SuiteStatus { Pass, Fail, Inconclusive };

const char* status_name(SuiteStatus s) {
  return s == SuiteStatus::Pass ? "PASS" : s == SuiteStatus::Fail ? "FAIL" : "INCONCLUSIVE";
}

SuiteStatus judge(const BoundedReport& r, double required_rate) {
  const std::size_t failed = r.trials - r.passes - r.inconclusive;
  if (failed > 0) return SuiteStatus::Fail;
  if (static_cast<double>(r.passes) >= required_rate * static_cast<double>(r.trials)) {
    return SuiteStatus::Pass;
  }
  return SuiteStatus::Inconclusive;
}

int cmd_props(const PropsOpts& o, const Context& ctx) {
  const InstanceSpec hull_spec{};  // N=8, d=2, H=2
  std::vector<std::string> suites;
  if (o.suite == "all") {
    suites = {"equivalence", "gradient", "bounded", "containment", "expansion"};
  } else {
    suites = {o.suite};
  }

  std::ofstream f = open_csv(ctx, "props_report.csv");
  CsvWriter csv(f, {"suite", "trial", "verdict", "slack"});
  std::vector<ExpansionWitness> witnesses;
  bool any_fail = false, any_inconclusive = false;
  for (const std::string& suite : suites) {
    BoundedReport rep;
    double rate = 1.0;
    if (suite == "equivalence") {
      rep = verify_three_form_equivalence(o.trials, ctx.seed);
    } else if (suite == "gradient") {
      rep = verify_gradients(o.trials, ctx.seed);
    } else if (suite == "bounded") {
      rep = verify_baseline_bounded(o.trials, hull_spec, ctx.seed);
    } else if (suite == "containment") {
      rep = verify_identity_containment(o.trials, hull_spec, ctx.seed);
    } else {
      rep = verify_expansion(o.trials, hull_spec, ctx.seed, &witnesses);
      rate = kExpansionSuccessRate;
    }
    for (const TrialVerdict& v : rep.rows) {
      const char* verdict = v.pass ? "PASS" : v.inconclusive ? "INCONCLUSIVE" : "FAIL";
      csv.row({suite, std::to_string(v.trial), verdict, fmt_double(v.slack)});
    }
    const SuiteStatus st = judge(rep, rate);
    any_fail = any_fail || st == SuiteStatus::Fail;
    any_inconclusive = any_inconclusive || st == SuiteStatus::Inconclusive;
    ctx.out << std::left << std::setw(12) << suite << " " << rep.passes << "/" << rep.trials
            << " pass, " << rep.inconclusive << " inconclusive, max slack "
            << fmt_sci(rep.max_slack) << "  " << status_name(st) << "\n";
  }

  if (!witnesses.empty()) {
    std::ofstream wf = open_csv(ctx, "props_witnesses.csv");
    CsvWriter wcsv(wf, {"trial", "alpha_prime", "row", "output_row", "direction", "slack",
                        "certificate"});
    const ExpansionWitness* first = nullptr;
    for (std::size_t t = 0; t < witnesses.size(); ++t) {
      const ExpansionWitness& w = witnesses[t];
      if (!w.found) continue;
      if (!first) first = &w;
      std::vector<double> a(w.alpha_prime.data().begin(), w.alpha_prime.data().end());
      wcsv.row({std::to_string(t), join(a), std::to_string(w.row), join(w.output_row),
                join(w.verdict.direction), fmt_double(w.verdict.slack), "separating"});
    }
    if (first) {
      std::vector<double> a(first->alpha_prime.data().begin(), first->alpha_prime.data().end());
      ctx.out << "first witness: alpha' = [" << join(a) << "], row " << first->row << " = ["
              << join(first->output_row) << "], separated by g = [" << join(first->verdict.direction)
              << "] with slack " << fmt_sci(first->verdict.slack) << "\n";
    }
  }
  if (any_fail) return kAssertionFailed;
  if (any_inconclusive) return kInconclusive;
  return kOk;
}

// params ---------------------------------------------------------------------

struct ParamsOpts {
  std::string ci = "2048", co = "1280", h = "10", r = "4";
  std::string format = "text";
};

int cmd_params(const ParamsOpts& o, const Context& ctx) {
  const auto cis = parse_list<std::size_t>(o.ci, "ci");
  const auto cos = parse_list<std::size_t>(o.co, "co");
  const auto hs = parse_list<std::size_t>(o.h, "h");
  const auto rs = parse_list<std::size_t>(o.r, "r");

  const std::vector<std::string> header{"ci", "co", "h", "r", "coeff_params",
                                        "ratio_vs_attention", "percent_vs_attention",
                                        "ratio_vs_lora", "percent_vs_lora"};
  std::vector<std::vector<std::string>> rows;
  for (auto ci : cis) {
    for (auto co : cos) {
      for (auto h : hs) {
        for (auto r : rs) {
          const LayerDims d{ci, co, h, r};
          validate(d);
          const double ra = ratio_vs_attention(d), rl = ratio_vs_lora(d);
          rows.push_back({std::to_string(ci), std::to_string(co), std::to_string(h),
                          std::to_string(r), std::to_string(h * h), fmt_sci(ra),
                          format_percent(ra), fmt_sci(rl), format_percent(rl)});
        }
      }
    }
  }
  {
    std::ofstream f = open_csv(ctx, "params_table.csv");
    CsvWriter csv(f, header);
    for (const auto& r : rows) csv.row(r);
  }
  if (o.format == "csv") {
    CsvWriter csv(ctx.out, header);
    for (const auto& r : rows) csv.row(r);
    return kOk;
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      ctx.out << (c ? "  " : "") << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
    }
    ctx.out << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  const std::size_t vit = vit_coeff_budget();
  ctx.out << "12-layer 12-head ViT coefficients: " << vit << " (" << format_millions(vit) << ")\n";
  return kOk;
}

// peft -----------------------------------------------------------------------

struct PeftOpts {
  std::string seeds = "0,1,2";
  std::string rates = "0,0.1,0.2,0.4";
  std::string modes = "all";
  AblationConfig cfg;
};

int cmd_peft(const PeftOpts& o, const Context& ctx) {
  AblationConfig cfg = o.cfg;
  cfg.dropout_rates = parse_list<double>(o.rates, "rates");
  for (double p : cfg.dropout_rates) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (o.modes != "all") {
    cfg.modes.clear();
    std::stringstream ss(o.modes);
    for (std::string m; std::getline(ss, m, ',');) cfg.modes.push_back(parse_tune_mode(trim(m)));
  }
  const auto seeds = parse_list<std::uint64_t>(o.seeds, "seeds");
  const AblationReport rep = run_ablation_grid(seeds, cfg, ctx.jobs);

  {
    std::ofstream f = open_csv(ctx, "ablation_grid.csv");
    CsvWriter csv(f, {"mode", "p", "seed", "train_loss", "test_acc"});
    for (const auto& r : rep.rows) {
      csv.row({to_string(r.mode), fmt_double(r.dropout_p), std::to_string(r.seed),
               fmt_double(r.train_loss), fmt_double(r.test_acc)});
    }
  }
  for (const auto& r : rep.rows) {
    ctx.out << "seed " << r.seed << "  " << std::left << std::setw(22) << to_string(r.mode)
            << " p=" << std::setw(4) << r.dropout_p << " test_acc " << std::fixed
            << std::setprecision(3) << r.test_acc << std::defaultfloat << "\n";
  }
  for (const auto& c : rep.checks) {
    ctx.out << (c.pass() ? "PASS " : "FAIL ") << c.name << ": " << c.holds << "/" << c.seeds
            << " seeds (need " << c.required << ")" << (c.gating ? "" : " [trend]") << "\n";
  }
  if (!rep.all_pass()) {
    ctx.err << "ablation ordering failed\n";
    return kAssertionFailed;
  }
  return kOk;
}

bool has_flag(const std::vector<std::string>& args, const std::string& name) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == name || a.rfind(name + "=", 0) == 0;
  });
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);

  // --config is consumed here; its tokens go right after the subcommand so
  // later command-line flags override them.
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  const bool out_flag = has_flag(args, "--out");
  auto sub_it = std::find_first_of(args.begin(), args.end(), kSubcommands.begin(),
                                   kSubcommands.end());
  if (!config_path.empty()) {
    FileConfig fc = read_config(config_path);
    if (sub_it == args.end() && !fc.subcommand.empty()) {
      args.insert(args.begin(), fc.subcommand);
      sub_it = args.begin();
    }
    if (sub_it != args.end()) args.insert(sub_it + 1, fc.tokens.begin(), fc.tokens.end());
  }

  CLI::App app{"coefflab: subspace-coefficient attention experiments"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  Common common;
  ToyOpts toy;
  auto* toy_cmd = app.add_subcommand("toy", "Train the three regimes on the 8-node toy graph");
  add_common(toy_cmd, common);
  toy_cmd->add_option("--regime", toy.regime, "all, qk-only, qkv or qk-plus-alpha")
      ->check(CLI::IsMember({"all", "qk-only", "qkv", "qk-plus-alpha"}))
      ->capture_default_str();
  toy_cmd->add_option("--heads", toy.heads, "Heads (must divide 2)")->capture_default_str();
  toy_cmd->add_option("--steps", toy.steps, "Optimizer steps")->capture_default_str();
  toy_cmd->add_option("--lr", toy.lr, "Learning rate")->check(CLI::PositiveNumber)
      ->capture_default_str();
  toy_cmd->add_option("--optimizer", toy.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  toy_cmd->add_option("--value-init", toy.value_init, "identity or gaussian")
      ->check(CLI::IsMember({"identity", "gaussian"}))
      ->capture_default_str();
  toy_cmd->add_option("--init-std", toy.init_std, "Std of Gaussian initializations")
      ->capture_default_str();
  toy_cmd->add_flag("--alpha-trains-value", toy.alpha_trains_value,
                    "qk-plus-alpha also updates W_v");

  PropsOpts props;
  auto* props_cmd = app.add_subcommand("props", "Run the property suites");
  add_common(props_cmd, common);
  props_cmd->add_option("--trials", props.trials, "Trials per suite")->capture_default_str();
  props_cmd->add_option("--suite", props.suite,
                        "all, equivalence, gradient, bounded, containment or expansion")
      ->check(CLI::IsMember({"all", "equivalence", "gradient", "bounded", "containment",
                             "expansion"}))
      ->capture_default_str();

  ParamsOpts params;
  auto* params_cmd = app.add_subcommand("params", "Coefficient parameter ratios");
  params_cmd->set_help_flag("--help", "Print this help message and exit");
  add_common(params_cmd, common);
  params_cmd->add_option("--ci", params.ci, "Input dims (comma list)")->capture_default_str();
  params_cmd->add_option("--co", params.co, "Output dims (comma list)")->capture_default_str();
  params_cmd->add_option("--h", params.h, "Heads (comma list)")->capture_default_str();
  params_cmd->add_option("--r", params.r, "LoRA ranks (comma list)")->capture_default_str();
  params_cmd->add_option("--format", params.format, "text or csv")
      ->check(CLI::IsMember({"text", "csv"}))
      ->capture_default_str();

  PeftOpts peft;
  auto* peft_cmd = app.add_subcommand("peft", "Coefficient tuning ablation on a frozen backbone");
  add_common(peft_cmd, common);
  peft_cmd->add_option("--seeds", peft.seeds, "Seeds (comma list)")->capture_default_str();
  peft_cmd->add_option("--rates", peft.rates, "Dropout rates (comma list)")->capture_default_str();
  peft_cmd->add_option("--modes", peft.modes,
                       "all or a comma list of linear-probe, residual-zero-init, "
                       "direct-random-init, direct-identity-init")
      ->capture_default_str();
  peft_cmd->add_option("--steps", peft.cfg.steps, "Optimizer steps")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  peft_cmd->add_option("--batch", peft.cfg.batch_size, "Minibatch size, 0 for full batch")
      ->capture_default_str();
  peft_cmd->add_option("--lr", peft.cfg.lr, "Learning rate")->check(CLI::PositiveNumber)
      ->capture_default_str();
  peft_cmd->add_option("--train-samples", peft.cfg.task.train_samples, "Training split size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  peft_cmd->add_option("--test-samples", peft.cfg.task.test_samples, "Test split size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  std::vector<const char*> cargv{argv[0]};
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  std::string dir = common.out;
  if (!out_flag) {
    if (const char* env = std::getenv("COEFFLAB_OUT"); env && *env) dir = env;
  }
  Context ctx{fs::absolute(dir), common.jobs, common.seed, out, err};
  fs::create_directories(ctx.out_dir);
  omp_set_num_threads(common.jobs);

  if (toy_cmd->parsed()) return cmd_toy(toy, ctx);
  if (props_cmd->parsed()) return cmd_props(props, ctx);
  if (params_cmd->parsed()) return cmd_params(params, ctx);
  return cmd_peft(peft, ctx);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argc, argv, out, err);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kInconclusive;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace coefflab::cli
