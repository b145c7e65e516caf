// todnet command-line tool: synthetic data generation, deformer training,
// retrieval evaluation, the ablation table, and checkpoint verification.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "todnet/checkpoint.hpp"
#include "todnet/core.hpp"
#include "todnet/data.hpp"
#include "todnet/eval.hpp"
#include "todnet/flow.hpp"
#include "todnet/loss_opt.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitParse = 3;
constexpr int kExitVerification = 4;

using todnet::ConditionMode;
using todnet::Deformer;
using todnet::DeformerKind;
using todnet::Vec;

std::int64_t now_epoch_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Flat key=value run manifest, one entry per line.
class Manifest {
 public:
  explicit Manifest(std::string command) {
    add("command", std::move(command));
    add("start_epoch_seconds", std::to_string(now_epoch_seconds()));
  }
  void add(const std::string& key, const std::string& value) {
    lines_.push_back(key + "=" + value);
  }
  void add_input_digest(const std::string& path) {
    add("input_digest." + path, hex64(todnet::fnv1a64(todnet::read_file_bytes(path))));
  }
  void write(const std::string& path) {
    add("end_epoch_seconds", std::to_string(now_epoch_seconds()));
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw todnet::UsageError(path + ": cannot write manifest");
    for (const auto& l : lines_) f << l << "\n";
  }

 private:
  std::vector<std::string> lines_;
};

ConditionMode parse_condition(const std::string& s) {
  if (s == "target") return ConditionMode::Target;
  if (s == "caption") return ConditionMode::Caption;
  if (s == "image") return ConditionMode::Image;
  if (s == "query") return ConditionMode::Query;
  if (s == "none" || s == "no") return ConditionMode::None;
  throw todnet::UsageError("--condition: unknown mode '" + s + "'");
}

DeformerKind parse_deformer(const std::string& s) {
  if (s == "realnvp") return DeformerKind::RealNVP;
  if (s == "mlp") return DeformerKind::ConditionalMLP;
  throw todnet::UsageError("--deformer: unknown kind '" + s + "'");
}

struct GenDataArgs {
  todnet::SyntheticConfig cfg;
  std::string out_dir;
};

int cmd_gen_data(const GenDataArgs& a) {
  Manifest manifest("gen-data");
  a.cfg.validate();
  todnet::SyntheticDatasets ds = todnet::generate_synthetic(a.cfg);
  const std::string train_path = a.out_dir + "/train.tde";
  const std::string val_path = a.out_dir + "/val.tde";
  const std::string test_path = a.out_dir + "/test.tde";
  todnet::write_embeddings(ds.train, train_path);
  todnet::write_embeddings(ds.val, val_path);
  todnet::write_embeddings(ds.test, test_path);
  manifest.add("groups", std::to_string(a.cfg.train_groups));
  manifest.add("val_groups", std::to_string(a.cfg.val_groups));
  manifest.add("test_groups", std::to_string(a.cfg.test_groups));
  manifest.add("dim", std::to_string(a.cfg.dimension));
  manifest.add("aspects", std::to_string(a.cfg.n_aspects));
  manifest.add("captions", std::to_string(a.cfg.captions_per_image));
  manifest.add("aspect_signal", std::to_string(a.cfg.aspect_signal));
  manifest.add("shared_signal", std::to_string(a.cfg.shared_signal));
  manifest.add("noise", std::to_string(a.cfg.noise));
  manifest.add("seed", std::to_string(a.cfg.seed));
  for (const auto& p : {train_path, val_path, test_path}) {
    manifest.add("output", p);
    manifest.add("output_digest." + p, hex64(todnet::fnv1a64(todnet::read_file_bytes(p))));
  }
  manifest.write(a.out_dir + "/gen-data.manifest");
  std::cout << "wrote " << train_path << " " << val_path << " " << test_path << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string train_path;
  std::string val_path;
  std::string out_path;
  std::string log_path;
  std::string condition = "target";
  std::string deformer = "realnvp";
  todnet::TrainConfig cfg;
  todnet::DeformerShape shape;
  std::size_t folds = 5;
};

int cmd_train(TrainArgs a) {
  a.cfg.condition_mode = parse_condition(a.condition);
  a.cfg.deformer_kind = parse_deformer(a.deformer);
  a.cfg.validate();

  Manifest manifest("train");
  manifest.add_input_digest(a.train_path);
  manifest.add_input_digest(a.val_path);
  todnet::EmbeddingDataset train_split = todnet::read_embeddings(a.train_path);
  todnet::EmbeddingDataset val_split = todnet::read_embeddings(a.val_path);
  if (train_split.dimension != val_split.dimension)
    throw todnet::UsageError("train/val dimension mismatch");

  Deformer init = todnet::make_deformer(a.cfg.deformer_kind, train_split.dimension, a.shape,
                                        a.cfg.seed);
  auto val_mr = [&](const Deformer& m) {
    return todnet::evaluate_split(todnet::deformer_scorer(m, a.cfg.condition_mode), val_split,
                                  a.folds)
        .mr;
  };
  std::ofstream log_file;
  if (!a.log_path.empty()) {
    log_file.open(a.log_path, std::ios::trunc);
    if (!log_file) throw todnet::UsageError(a.log_path + ": cannot open log file");
  }
  auto log_sink = [&](const todnet::EpochLog& l) {
    char line[160];
    std::snprintf(line, sizeof(line), "%zu\t%.6f\t%.2f\t%g\t%.2f", l.epoch, l.mean_train_loss,
                  100.0 * l.val_mr, l.lr, l.seconds);
    std::cout << line << "\n";
    if (log_file) log_file << line << "\n";
  };
  todnet::TrainResult result = todnet::train(std::move(init), train_split, a.cfg, val_mr,
                                             log_sink);
  todnet::save_checkpoint(result.best_model, a.out_path);

  manifest.add("condition", a.condition);
  manifest.add("deformer", a.deformer);
  manifest.add("margin", std::to_string(a.cfg.margin));
  manifest.add("batch", std::to_string(a.cfg.batch_size));
  manifest.add("epochs", std::to_string(a.cfg.epochs));
  manifest.add("lr", std::to_string(a.cfg.lr));
  manifest.add("lr_decay_epoch", std::to_string(a.cfg.lr_decay_epoch));
  manifest.add("lr_decay_factor", std::to_string(a.cfg.lr_decay_factor));
  manifest.add("layers", std::to_string(a.shape.n_layers));
  manifest.add("hidden_layers", std::to_string(a.shape.n_hidden_layers));
  manifest.add("hidden_units", std::to_string(a.shape.hidden_units));
  manifest.add("folds", std::to_string(a.folds));
  manifest.add("seed", std::to_string(a.cfg.seed));
  manifest.add("best_val_mr", std::to_string(result.best_val_mr));
  manifest.add("output", a.out_path);
  manifest.add("output_digest." + a.out_path,
               hex64(todnet::fnv1a64(todnet::read_file_bytes(a.out_path))));
  manifest.write(a.out_path + ".manifest");
  return kExitOk;
}

struct EvalArgs {
  std::string data_path;
  std::string checkpoint_path;
  std::string out_path;
  std::string condition = "target";
  bool baseline = false;
  std::size_t folds = 1;
};

int cmd_eval(const EvalArgs& a) {
  if (!a.baseline && a.checkpoint_path.empty())
    throw todnet::UsageError("eval: provide --checkpoint or --baseline");
  Manifest manifest("eval");
  manifest.add_input_digest(a.data_path);
  todnet::EmbeddingDataset ds = todnet::read_embeddings(a.data_path);

  todnet::MetricReport report;
  std::string model_name;
  Deformer deformer;
  if (a.baseline) {
    model_name = "baseline";
    report = todnet::evaluate_split(todnet::cosine_scorer(), ds, a.folds);
  } else {
    manifest.add_input_digest(a.checkpoint_path);
    deformer = todnet::load_checkpoint(a.checkpoint_path);
    if (deformer.dimension() != ds.dimension)
      throw todnet::UsageError("eval: checkpoint dimension " +
                               std::to_string(deformer.dimension()) + " != data dimension " +
                               std::to_string(ds.dimension));
    model_name = deformer.kind == DeformerKind::RealNVP ? "Real-NVP" : "MLP";
    report = todnet::evaluate_split(
        todnet::deformer_scorer(deformer, parse_condition(a.condition)), ds, a.folds);
  }
  const std::string row =
      todnet::metric_row(model_name, a.baseline ? "-" : a.condition, report);
  std::cout << todnet::metric_header() << "\n" << row << "\n";
  if (!a.out_path.empty()) {
    std::ofstream f(a.out_path, std::ios::trunc);
    if (!f) throw todnet::UsageError(a.out_path + ": cannot open output file");
    f << todnet::metric_header() << "\n" << row << "\n";
    manifest.add("output", a.out_path);
    manifest.write(a.out_path + ".manifest");
  }
  return kExitOk;
}

struct AblateArgs {
  std::string train_path;
  std::string val_path;
  std::string test_path;
  std::string out_path;
  todnet::TrainConfig cfg;
  todnet::DeformerShape shape;
  std::size_t folds = 5;
};

int cmd_ablate(const AblateArgs& a) {
  a.cfg.validate();
  Manifest manifest("ablate");
  for (const auto& p : {a.train_path, a.val_path, a.test_path}) manifest.add_input_digest(p);
  todnet::EmbeddingDataset train_split = todnet::read_embeddings(a.train_path);
  todnet::EmbeddingDataset val_split = todnet::read_embeddings(a.val_path);
  todnet::EmbeddingDataset test_split = todnet::read_embeddings(a.test_path);

  std::vector<todnet::AblationRow> rows =
      todnet::run_ablation(train_split, val_split, test_split, a.cfg, a.shape, a.folds);
  std::ostringstream table;
  table << todnet::metric_header() << "\n";
  for (const auto& r : rows) table << todnet::metric_row(r.model, r.condition, r.report) << "\n";
  std::cout << table.str();
  if (!a.out_path.empty()) {
    std::ofstream f(a.out_path, std::ios::trunc);
    if (!f) throw todnet::UsageError(a.out_path + ": cannot open output file");
    f << table.str();
    manifest.add("output", a.out_path);
    manifest.add("seed", std::to_string(a.cfg.seed));
    manifest.write(a.out_path + ".manifest");
  }
  return kExitOk;
}

struct RoundtripArgs {
  std::string checkpoint_path;
  std::size_t samples = 1000;
  std::size_t grad_samples = 2;
  std::size_t grad_params = 200;
  std::uint64_t seed = 1;
};

int cmd_roundtrip_check(const RoundtripArgs& a) {
  Deformer deformer = todnet::load_checkpoint(a.checkpoint_path);
  if (deformer.kind != DeformerKind::RealNVP)
    throw todnet::UsageError("roundtrip-check: checkpoint is not a Real-NVP flow");
  const todnet::FlowParams& flow = deformer.flow;
  const std::size_t d = flow.dimension;
  std::mt19937_64 rng(a.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_vec = [&] {
    Vec v(d);
    for (double& x : v) x = g(rng);
    return v;
  };

  double max_fi = 0.0, max_if = 0.0;
  for (std::size_t i = 0; i < a.samples; ++i) {
    Vec v = random_vec(), c = random_vec();
    Vec z = todnet::flow_forward(flow, v, c);
    Vec v2 = todnet::flow_inverse(flow, z, c);
    Vec z2 = todnet::flow_forward(flow, todnet::flow_inverse(flow, z, c), c);
    for (std::size_t k = 0; k < d; ++k) {
      max_fi = std::max(max_fi, std::abs(v2[k] - v[k]));
      max_if = std::max(max_if, std::abs(z2[k] - z[k]));
    }
  }

  // finite-difference agreement on input/condition gradients plus a random
  // subsample of parameters, through the scalar probe upstream . flow(v, c)
  double max_grad_rel = 0.0;
  const double step = 1e-5;
  for (std::size_t s = 0; s < a.grad_samples; ++s) {
    Vec v = random_vec(), c = random_vec(), upstream = random_vec();
    todnet::FlowGradients an = todnet::flow_backward(flow, v, c, upstream);
    auto probe = [&](const Vec& vv, const Vec& cc) {
      Vec z = todnet::flow_forward(flow, vv, cc);
      return todnet::dot(upstream, z);
    };
    auto rel = [](double fd, double g2) {
      const double scale = std::max({std::abs(fd), std::abs(g2), 1e-6});
      return std::abs(fd - g2) / scale;
    };
    for (std::size_t k = 0; k < d; ++k) {
      Vec vp = v, vm = v;
      vp[k] += step;
      vm[k] -= step;
      max_grad_rel = std::max(max_grad_rel,
                              rel((probe(vp, c) - probe(vm, c)) / (2 * step), an.d_input[k]));
      Vec cp = c, cm = c;
      cp[k] += step;
      cm[k] -= step;
      max_grad_rel = std::max(
          max_grad_rel, rel((probe(v, cp) - probe(v, cm)) / (2 * step), an.d_condition[k]));
    }
    // random parameter coordinates
    todnet::FlowParams mutable_flow = flow;
    auto all_params = [&](todnet::FlowParams& f) {
      std::vector<double*> ptrs;
      for (auto& l : f.layers)
        for (auto& dl : l.conditioner.layers) {
          for (double& x : dl.weight) ptrs.push_back(&x);
          for (double& x : dl.bias) ptrs.push_back(&x);
        }
      return ptrs;
    };
    std::vector<double*> ptrs = all_params(mutable_flow);
    std::vector<const double*> gptrs;
    for (const auto& lg : an.layer_grads)
      for (const auto& dl : lg.layers) {
        for (const double& x : dl.weight) gptrs.push_back(&x);
        for (const double& x : dl.bias) gptrs.push_back(&x);
      }
    std::uniform_int_distribution<std::size_t> pick(0, ptrs.size() - 1);
    for (std::size_t i = 0; i < a.grad_params; ++i) {
      const std::size_t idx = pick(rng);
      const double orig = *ptrs[idx];
      *ptrs[idx] = orig + step;
      const double fp = todnet::dot(upstream, todnet::flow_forward(mutable_flow, v, c));
      *ptrs[idx] = orig - step;
      const double fm = todnet::dot(upstream, todnet::flow_forward(mutable_flow, v, c));
      *ptrs[idx] = orig;
      max_grad_rel = std::max(max_grad_rel, rel((fp - fm) / (2 * step), *gptrs[idx]));
    }
  }

  const bool rt_ok = max_fi <= 1e-9 && max_if <= 1e-9;
  const bool grad_ok = max_grad_rel <= 1e-4;
  std::printf("forward-inverse max error: %.3e (%s)\n", max_fi, max_fi <= 1e-9 ? "ok" : "FAIL");
  std::printf("inverse-forward max error: %.3e (%s)\n", max_if, max_if <= 1e-9 ? "ok" : "FAIL");
  std::printf("gradient fd max rel error: %.3e (%s)\n", max_grad_rel, grad_ok ? "ok" : "FAIL");
  return rt_ok && grad_ok ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-oriented deformation of embedding spaces"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "Generate synthetic embedding files");
  sc_gen->add_option("--groups", gen.cfg.train_groups, "training groups");
  sc_gen->add_option("--val-groups", gen.cfg.val_groups, "validation groups");
  sc_gen->add_option("--test-groups", gen.cfg.test_groups, "test groups");
  sc_gen->add_option("--dim", gen.cfg.dimension, "embedding dimension (even)");
  sc_gen->add_option("--aspects", gen.cfg.n_aspects, "aspects per group");
  sc_gen->add_option("--captions", gen.cfg.captions_per_image, "captions per image");
  sc_gen->add_option("--aspect-signal", gen.cfg.aspect_signal, "aspect vector norm");
  sc_gen->add_option("--shared-signal", gen.cfg.shared_signal, "shared concept vector norm");
  sc_gen->add_option("--noise", gen.cfg.noise, "noise vector norm");
  sc_gen->add_option("--seed", gen.cfg.seed, "generator seed");
  sc_gen->add_option("--out", gen.out_dir, "output directory")->required();

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "Train a deformer on embedding files");
  sc_train->add_option("--train", tr.train_path, "training TDE1 file")->required();
  sc_train->add_option("--val", tr.val_path, "validation TDE1 file")->required();
  sc_train->add_option("--out", tr.out_path, "output checkpoint path")->required();
  sc_train->add_option("--log", tr.log_path, "epoch log file");
  sc_train->add_option("--layers", tr.shape.n_layers, "coupling layers");
  sc_train->add_option("--hidden-layers", tr.shape.n_hidden_layers, "hidden layers per coupling");
  sc_train->add_option("--hidden-units", tr.shape.hidden_units, "hidden units (0 = 2d)");
  sc_train->add_option("--margin", tr.cfg.margin, "hinge margin");
  sc_train->add_option("--batch", tr.cfg.batch_size, "groups per batch");
  sc_train->add_option("--epochs", tr.cfg.epochs, "training epochs");
  sc_train->add_option("--lr", tr.cfg.lr, "initial learning rate");
  sc_train->add_option("--lr-decay-epoch", tr.cfg.lr_decay_epoch, "decay epoch");
  sc_train->add_option("--lr-decay-factor", tr.cfg.lr_decay_factor, "decay factor");
  sc_train->add_option("--beta1", tr.cfg.beta1, "Adam beta1");
  sc_train->add_option("--beta2", tr.cfg.beta2, "Adam beta2");
  sc_train->add_option("--eps", tr.cfg.eps, "Adam epsilon");
  sc_train->add_option("--seed", tr.cfg.seed, "training seed");
  sc_train->add_option("--condition", tr.condition, "target|caption|image|query|none");
  sc_train->add_option("--deformer", tr.deformer, "realnvp|mlp");
  sc_train->add_option("--folds", tr.folds, "validation folds");

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "Evaluate retrieval metrics");
  sc_eval->add_option("--data", ev.data_path, "TDE1 file to evaluate on")->required();
  sc_eval->add_option("--checkpoint", ev.checkpoint_path, "TODF checkpoint");
  sc_eval->add_flag("--baseline", ev.baseline, "plain cosine baseline, no deformer");
  sc_eval->add_option("--condition", ev.condition, "condition mode for the deformer");
  sc_eval->add_option("--folds", ev.folds, "fold count for averaging");
  sc_eval->add_option("--out", ev.out_path, "also write the report to this file");

  AblateArgs ab;
  auto* sc_ablate = app.add_subcommand("ablate", "Run the condition/deformer ablation table");
  sc_ablate->add_option("--train", ab.train_path, "training TDE1 file")->required();
  sc_ablate->add_option("--val", ab.val_path, "validation TDE1 file")->required();
  sc_ablate->add_option("--test", ab.test_path, "test TDE1 file")->required();
  sc_ablate->add_option("--out", ab.out_path, "table output file");
  sc_ablate->add_option("--layers", ab.shape.n_layers, "coupling layers");
  sc_ablate->add_option("--hidden-layers", ab.shape.n_hidden_layers, "hidden layers");
  sc_ablate->add_option("--hidden-units", ab.shape.hidden_units, "hidden units (0 = 2d)");
  sc_ablate->add_option("--margin", ab.cfg.margin, "hinge margin");
  sc_ablate->add_option("--batch", ab.cfg.batch_size, "groups per batch");
  sc_ablate->add_option("--epochs", ab.cfg.epochs, "training epochs");
  sc_ablate->add_option("--lr", ab.cfg.lr, "initial learning rate");
  sc_ablate->add_option("--lr-decay-epoch", ab.cfg.lr_decay_epoch, "decay epoch");
  sc_ablate->add_option("--lr-decay-factor", ab.cfg.lr_decay_factor, "decay factor");
  sc_ablate->add_option("--seed", ab.cfg.seed, "training seed");
  sc_ablate->add_option("--folds", ab.folds, "evaluation folds");

  RoundtripArgs rt;
  auto* sc_rt = app.add_subcommand("roundtrip-check", "Verify bijectivity and gradients");
  sc_rt->add_option("--checkpoint", rt.checkpoint_path, "TODF checkpoint")->required();
  sc_rt->add_option("--samples", rt.samples, "random (v, c) pairs");
  sc_rt->add_option("--grad-samples", rt.grad_samples, "gradient-check samples");
  sc_rt->add_option("--grad-params", rt.grad_params, "random parameter coordinates to check");
  sc_rt->add_option("--seed", rt.seed, "sampling seed");

  try {
    app.parse(argc, argv);
    if (sc_gen->parsed()) return cmd_gen_data(gen);
    if (sc_train->parsed()) return cmd_train(tr);
    if (sc_eval->parsed()) return cmd_eval(ev);
    if (sc_ablate->parsed()) return cmd_ablate(ab);
    if (sc_rt->parsed()) return cmd_roundtrip_check(rt);
    std::cerr << app.help();
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const todnet::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const todnet::DegenerateInputError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const todnet::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const todnet::NumericOverflowError& e) {
    std::cerr << "verification failure: " << e.what() << "\n";
    return kExitVerification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
