#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mixdim/harness.hpp"
#include "mixdim/io.hpp"
#include "mixdim/report.hpp"

using namespace mixdim;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

enum ExitCode { kOk = 0, kConfig = 1, kData = 2 };

struct Common {
  std::string in;
  std::string out;
  std::string format = "json";
  std::string mode = "mixeddim";
  std::string head_budgets;
  std::vector<double> ratios{0.0, 0.125, 0.25, 1.0};
  std::size_t kv_size = 0;
  std::size_t alpha = 0;
  std::size_t layer_index = 0;
  bool key_entries_only = false;
};

void add_ratios(CLI::App* app, Common& c) {
  app->add_option("--ratios", c.ratios, "candidate compression ratios, comma separated; must include 0 and 1")
      ->delimiter(',')
      ->capture_default_str();
}

void add_out(CLI::App* app, Common& c, const char* what) {
  app->add_option("--out", c.out, what)->required();
}

void add_format(CLI::App* app, Common& c) {
  app->add_option("--format", c.format, "report format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
}

void add_input(CLI::App* app, Common& c) {
  app->add_option("--in", c.in, "layer prefix: reads <in>.mdkv and <in>.queries")->required();
  app->add_option("--alpha", c.alpha, "expected window size; must match the layer files when given");
}

void add_budget(CLI::App* app, Common& c, bool required) {
  auto* opt = app->add_option("--kv-size", c.kv_size, "equivalent KV size T (layer budget 2*H*T*D entries)");
  if (required) opt->required();
  app->add_flag("--key-entries-only", c.key_entries_only, "count the H*T*D budget as K and V entries together");
}

void add_synthetic(CLI::App* app, SyntheticSpec& s, bool with_n) {
  app->add_option("--seed", s.seed, "random seed")->capture_default_str();
  if (with_n) app->add_option("--n", s.num_tokens, "compressible tokens N")->capture_default_str();
  app->add_option("--alpha", s.window, "window size")->capture_default_str();
  app->add_option("--head-dim", s.head_dim, "head dimension D")->capture_default_str();
  app->add_option("--heads", s.num_query_heads, "query heads H")->capture_default_str();
  app->add_option("--kv-heads", s.num_kv_heads, "KV heads")->capture_default_str();
  app->add_option("--needles", s.needle_count, "planted needles per KV head")->capture_default_str();
  app->add_option("--needle-gain", s.needle_gain, "logit boost of a needle")->capture_default_str();
  app->add_option("--noise", s.noise_scale, "isotropic noise scale")->capture_default_str();
  app->add_option("--mid-fraction", s.mid_importance_fraction, "fraction of mid-importance tokens")
      ->capture_default_str();
  app->add_option("--probes", s.probe_count, "held-out probe queries per query head")->capture_default_str();
}

LayerCache load_layer(const Common& c) {
  LayerCache layer = read_layer(c.in + ".mdkv", c.in + ".queries");
  if (c.alpha != 0 && c.alpha != layer.window)
    throw ConfigError("--alpha " + std::to_string(c.alpha) + " does not match the layer's window of " +
                      std::to_string(layer.window));
  return layer;
}

BudgetSpec budget_of(const Common& c) {
  if (c.kv_size == 0) throw ConfigError("--kv-size must be positive");
  return {c.kv_size, c.key_entries_only};
}

CompressionResult run_mode(const LayerCache& layer, const Common& c) {
  const BudgetSpec budget = budget_of(c);
  switch (parse_mode(c.mode)) {
    case Mode::mixeddim: return compress_mixeddim(layer, budget, c.ratios, Mode::mixeddim);
    case Mode::jointhead: return compress_mixeddim(layer, budget, c.ratios, Mode::jointhead);
    case Mode::snapkv: return compress_snapkv(layer, budget);
    case Mode::mixeddim_h: {
      const HeadBudgets hb = c.head_budgets.empty() ? HeadBudgets::uniform(c.layer_index, layer.config.num_kv_heads)
                                                    : HeadBudgets::load(c.head_budgets);
      const auto weights = hb.for_layer(c.layer_index, layer.config.num_kv_heads);
      return compress_mixeddim_h(layer, budget, c.ratios, weights);
    }
  }
  throw ConfigError("unknown mode");
}

std::string report_text(const CompressionReport& report, const std::string& format) {
  if (format == "json") return to_json(report).dump(2) + "\n";
  std::ostringstream out;
  write_report_csv(out, report);
  return out.str();
}

// Echo of every option (given or default) for the manifest.
json options_of(const CLI::App* app) {
  json opts = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->get_expected_min() == 0) {
      opts[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      opts[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      opts[name] = opt->get_default_str();
    }
  }
  return opts;
}

void write_manifest(const std::string& out, const CLI::App* sub, int argc, char** argv) {
  json manifest = {{"tool", "mixdim"},
                   {"version", kToolVersion},
                   {"command", sub->get_name()},
                   {"argv", std::vector<std::string>(argv, argv + argc)},
                   {"options", options_of(sub)},
                   {"formats", {{"mdkv", kCacheFormatVersion}, {"queries", kQueryFormatVersion}}}};
  write_file_atomic(out + ".manifest.json", manifest.dump(2) + "\n");
}

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string row;
  for (const auto& c : cells) row += (row.empty() ? "" : ",") + c;
  return row + "\n";
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-dimension KV cache compression toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common c;
  SyntheticSpec spec;
  std::vector<std::size_t> sizes{512, 2048, 8192};
  std::size_t seeds = 20;
  double fraction = 0.25;
  std::string cache_out;

  auto* gen = app.add_subcommand("gen", "generate a synthetic layer (<out>.mdkv + <out>.queries)");
  add_synthetic(gen, spec, true);
  add_out(gen, c, "output prefix");

  auto* score = app.add_subcommand("score", "write per-token loss scores as CSV");
  add_input(score, c);
  add_ratios(score, c);
  score->add_option("--mode", c.mode, "mixeddim (per head) or jointhead")
      ->check(CLI::IsMember({"mixeddim", "jointhead"}))
      ->capture_default_str();
  add_out(score, c, "CSV path");

  auto* allocate = app.add_subcommand("allocate", "allocate dims and write the per-token assignment");
  add_input(allocate, c);
  add_ratios(allocate, c);
  add_budget(allocate, c, true);
  add_format(allocate, c);
  allocate->add_option("--mode", c.mode, "mixeddim | mixeddim-h | snapkv | jointhead")->capture_default_str();
  allocate->add_option("--head-budgets", c.head_budgets, "per-head weight table (mixeddim-h)");
  allocate->add_option("--layer", c.layer_index, "layer index used to look up head budgets")->capture_default_str();
  add_out(allocate, c, "output path");

  auto* compress = app.add_subcommand("compress", "compress a layer and write the report");
  add_input(compress, c);
  add_ratios(compress, c);
  add_budget(compress, c, true);
  add_format(compress, c);
  compress->add_option("--mode", c.mode, "mixeddim | mixeddim-h | snapkv | jointhead")->capture_default_str();
  compress->add_option("--head-budgets", c.head_budgets, "per-head weight table (mixeddim-h)");
  compress->add_option("--layer", c.layer_index, "layer index used to look up head budgets")->capture_default_str();
  compress->add_option("--cache", cache_out, "also write the compressed cache (.mdkv; head-wise modes only)");
  add_out(compress, c, "report path");

  auto* gap = app.add_subcommand("gap", "duality gap across sequence lengths (CSV: N,primal,dual,gap,relative_gap)");
  add_synthetic(gap, spec, false);
  add_ratios(gap, c);
  add_budget(gap, c, false);
  gap->add_option("--n", sizes, "sequence lengths, comma separated")->delimiter(',')->capture_default_str();
  gap->add_option("--seeds", seeds, "seeds averaged per length, starting at --seed")->capture_default_str();
  gap->add_option("--budget-fraction", fraction, "budget as a fraction of the full cache (ignored with --kv-size)")
      ->capture_default_str();
  add_out(gap, c, "CSV path");

  auto* bench = app.add_subcommand("bench", "paired MixedDimKV vs SnapKV attention error on synthetic layers");
  add_synthetic(bench, spec, true);
  add_ratios(bench, c);
  add_format(bench, c);
  bench->add_option("--seeds", seeds, "number of seeds, starting at --seed")->capture_default_str();
  bench->add_option("--budget-fraction", fraction, "budget as a fraction of the full cache")->capture_default_str();
  add_out(bench, c, "output path");

  auto* ablate = app.add_subcommand("ablate", "head-wise vs joint-head compression on one layer");
  add_input(ablate, c);
  add_ratios(ablate, c);
  add_budget(ablate, c, true);
  add_format(ablate, c);
  add_out(ablate, c, "output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  const bool csv = c.format == "csv";

  try {
    if (gen->parsed()) {
      const auto syn = generate_synthetic(spec);
      write_layer(c.out + ".mdkv", c.out + ".queries", syn.layer);
      write_manifest(c.out, gen, argc, argv);
    } else if (score->parsed()) {
      const LayerCache layer = load_layer(c);
      const Mode mode = parse_mode(c.mode);
      CompressionResult r;
      // Scores do not depend on the budget; a generous one keeps every mode feasible.
      Common wide = c;
      wide.kv_size = layer.num_tokens() * 2 + layer.window + 64 * layer.config.head_dim;
      r = compress_mixeddim(layer, budget_of(wide), c.ratios, mode);
      std::ostringstream out;
      for (std::size_t h = 0; h < r.tables.size(); ++h) r.tables[h].write_csv(out, h == 0, static_cast<long>(h));
      write_file_atomic(c.out, out.str());
      write_manifest(c.out, score, argc, argv);
    } else if (allocate->parsed()) {
      const LayerCache layer = load_layer(c);
      const auto r = run_mode(layer, c);
      const auto dims = allocated_dims(r.cache);
      std::string text;
      if (csv) {
        text = csv_row({"head", "token", "dim"});
        for (std::size_t h = 0; h < dims.size(); ++h)
          for (std::size_t t = 0; t < dims[h].size(); ++t)
            text += csv_row({std::to_string(h), std::to_string(t), std::to_string(dims[h][t])});
      } else {
        text = json{{"report", to_json(r.report)}, {"dims", dims}}.dump(2) + "\n";
      }
      write_file_atomic(c.out, text);
      write_manifest(c.out, allocate, argc, argv);
    } else if (compress->parsed()) {
      const LayerCache layer = load_layer(c);
      const auto r = run_mode(layer, c);
      if (!cache_out.empty()) write_cache_file(cache_out, r.cache);
      write_file_atomic(c.out, report_text(r.report, c.format));
      write_manifest(c.out, compress, argc, argv);
    } else if (gap->parsed()) {
      if (seeds == 0) throw ConfigError("--seeds must be positive");
      std::string text = csv_row({"N", "primal", "dual", "gap", "relative_gap"});
      for (const std::size_t n : sizes) {
        DualGapReport mean;
        for (std::size_t s = 0; s < seeds; ++s) {
          SyntheticSpec run = spec;
          run.num_tokens = n;
          run.seed = spec.seed + s;
          DualGapReport g;
          if (c.kv_size != 0) {
            g = compress_mixeddim(generate_synthetic(run).layer, budget_of(c), c.ratios).report.gap;
          } else {
            g = gap_point(run, fraction, c.ratios).gap;
          }
          const double w = 1.0 / static_cast<double>(seeds);
          mean.primal_value += w * g.primal_value;
          mean.dual_value += w * g.dual_value;
          mean.gap_bound += w * g.gap_bound;
          mean.relative_gap += w * g.relative_gap;
        }
        text += csv_row({std::to_string(n), num(mean.primal_value), num(mean.dual_value), num(mean.gap_bound),
                         num(mean.relative_gap)});
      }
      write_file_atomic(c.out, text);
      write_manifest(c.out, gap, argc, argv);
    } else if (bench->parsed()) {
      std::vector<BenchPoint> points;
      std::size_t wins = 0;
      for (std::size_t s = 0; s < seeds; ++s) {
        SyntheticSpec run = spec;
        run.seed = spec.seed + s;
        points.push_back(bench_point(run, fraction, c.ratios));
        wins += points.back().mixeddim_error <= points.back().snapkv_error;
      }
      std::string text;
      if (csv) {
        text = csv_row({"seed", "kv_size", "mixeddim_error", "snapkv_error", "mixeddim_loss", "mixeddim_h_loss"});
        for (const auto& p : points)
          text += csv_row({std::to_string(p.seed), std::to_string(p.kv_size), num(p.mixeddim_error),
                           num(p.snapkv_error), num(p.mixeddim_loss), num(p.mixeddim_h_loss)});
      } else {
        json rows = json::array();
        for (const auto& p : points)
          rows.push_back({{"seed", p.seed},
                          {"kv_size", p.kv_size},
                          {"mixeddim_error", p.mixeddim_error},
                          {"snapkv_error", p.snapkv_error},
                          {"mixeddim_loss", p.mixeddim_loss},
                          {"mixeddim_h_loss", p.mixeddim_h_loss}});
        text = json{{"runs", rows}, {"mixeddim_wins", wins}, {"seeds", seeds}}.dump(2) + "\n";
      }
      write_file_atomic(c.out, text);
      write_manifest(c.out, bench, argc, argv);
      std::cout << "MixedDimKV error <= SnapKV error in " << wins << " of " << seeds << " seeds\n";
    } else if (ablate->parsed()) {
      const LayerCache layer = load_layer(c);
      const BudgetSpec budget = budget_of(c);
      const auto head = compress_mixeddim(layer, budget, c.ratios, Mode::mixeddim);
      const auto joint = compress_mixeddim(layer, budget, c.ratios, Mode::jointhead);
      std::string text;
      if (csv) {
        text = csv_row({"mode", "projection_entries", "token_budget", "realized_loss", "attention_error"});
        for (const auto* r : {&head, &joint})
          text += csv_row({to_string(r->report.mode), std::to_string(r->report.budget.projection_entries),
                           std::to_string(r->report.budget.token_budget), num(r->report.realized_loss),
                           num(r->report.attention_error)});
      } else {
        text = json{{"headwise", to_json(head.report)}, {"jointhead", to_json(joint.report)}}.dump(2) + "\n";
      }
      write_file_atomic(c.out, text);
      write_manifest(c.out, ablate, argc, argv);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const ContractError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kData;
  } catch (const DataIntegrityError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
