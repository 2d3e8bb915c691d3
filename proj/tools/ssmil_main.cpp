// Command-line front end: dataset generation, training, evaluation, the
// mask-ratio ablation, and the decay / anchor / locality analyses. Exit codes:
// 0 success, 1 contract violation or bad usage, 2 I/O or parse failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "ssmil/analyze.hpp"
#include "ssmil/config.hpp"
#include "ssmil/model.hpp"
#include "ssmil/synth.hpp"

namespace {

using namespace ssmil;

std::vector<double> parse_ratio_grid(const std::string& grid) {
  std::string body = grid;
  if (body.rfind("r=", 0) == 0) body = body.substr(2);
  std::vector<double> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractViolation("ablate: bad ratio '" + item + "' in grid");
    }
  }
  contract(!out.empty(), "ablate: empty ratio grid");
  return out;
}

std::vector<Index> parse_k_list(const std::string& ks) {
  std::vector<Index> out;
  std::stringstream ss(ks);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<Index>(std::stoll(item)));
    } catch (const std::exception&) {
      throw ContractViolation("analyze-locality: bad k '" + item + "'");
    }
  }
  contract(!out.empty(), "analyze-locality: empty k list");
  return out;
}

const Bag& find_bag(const Dataset& data, const std::string& id) {
  if (id.empty()) {
    contract(!data.bags.empty(), "dataset has no bags");
    return data.bags.front();
  }
  for (const Bag& bag : data.bags)
    if (bag.id == id) return bag;
  throw ContractViolation("no bag with id '" + id + "'");
}

int run(int argc, char** argv) {
  CLI::App app{"selective state-space multiple-instance learning on grid token sequences"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  std::string gen_spec, gen_out;
  std::uint64_t gen_seed = 0;
  Index gen_n = 1;
  double gen_train_frac = 2.0 / 3.0;
  gen->add_option("--spec", gen_spec, "bag spec file (key = value)")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generation seed")->required();
  gen->add_option("--n", gen_n, "bags per class")->required();
  gen->add_option("--train-frac", gen_train_frac, "train fraction (default 2/3)");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_config, tr_out;
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--config", tr_config, "model config file")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--seed", tr_seed, "seed override")->each([&](const std::string&) {
    tr_seed_set = true;
  });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data, ev_ckpt, ev_split = "test", ev_report;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--split", ev_split, "split name (default test)");
  ev->add_option("--report", ev_report, "metrics csv path")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "mask-ratio sweep");
  std::string ab_data, ab_config, ab_grid = "r=0,0.1,0.3,0.5,0.7", ab_report;
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--config", ab_config, "model config file")->required();
  ab->add_option("--grid", ab_grid, "ratio grid, e.g. r=0,0.1,0.3,0.5,0.7");
  ab->add_option("--report", ab_report, "csv path")->required();

  // analyze-decay
  auto* de = app.add_subcommand("analyze-decay", "decay factor vs token distance");
  std::string de_ckpt, de_data, de_cts = "off", de_out, de_bag;
  de->add_option("--ckpt", de_ckpt, "checkpoint path")->required();
  de->add_option("--data", de_data, "dataset directory")->required();
  de->add_option("--cts", de_cts, "on|off")->check(CLI::IsMember({"on", "off"}));
  de->add_option("--out", de_out, "csv path")->required();
  de->add_option("--bag", de_bag, "bag id (default: first bag)");

  // analyze-anchor
  auto* an = app.add_subcommand("analyze-anchor", "anchor cosine scores");
  std::string an_data, an_bag, an_out;
  Index an_anchor = 0;
  an->add_option("--data", an_data, "dataset directory")->required();
  an->add_option("--bag", an_bag, "bag id")->required();
  an->add_option("--anchor", an_anchor, "anchor token index")->required();
  an->add_option("--out", an_out, "csv path")->required();

  // analyze-locality
  auto* lo = app.add_subcommand("analyze-locality", "per-channel locality ranking");
  std::string lo_ckpt, lo_data, lo_k = "0,1,2,4,8", lo_out, lo_bag;
  lo->add_option("--ckpt", lo_ckpt, "checkpoint path")->required();
  lo->add_option("--data", lo_data, "dataset directory")->required();
  lo->add_option("--k", lo_k, "comma-separated K values");
  lo->add_option("--out", lo_out, "csv path")->required();
  lo->add_option("--bag", lo_bag, "bag id (default: first bag)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const BagSpec spec = bag_spec_from_file(gen_spec);
    const Dataset data = generate_dataset(spec, gen_n, gen_seed, gen_train_frac);
    save_dataset(data, gen_out);
    std::cout << "wrote " << data.bags.size() << " bags to " << gen_out << "\n";
  } else if (tr->parsed()) {
    ModelConfig cfg = model_config_from_file(tr_config);
    if (tr_seed_set) cfg.seed = tr_seed;
    const Dataset data = load_dataset(tr_data);
    const TrainResult result = train(data, cfg);
    for (const EpochStats& e : result.history)
      std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " val_auc "
                << e.validation.auc << "\n";
    save_model(tr_out, result.params, cfg);
    std::cout << "saved " << tr_out << "\n";
  } else if (ev->parsed()) {
    const auto [params, cfg] = load_model(ev_ckpt);
    const Dataset data = load_dataset(ev_data);
    const MetricReport report = evaluate(data, ev_split, params, cfg);
    write_text_file(ev_report, metric_report_csv(report));
    std::cout << "auc " << report.auc << " acc " << report.acc << " f1 " << report.macro_f1
              << "\n";
  } else if (ab->parsed()) {
    const ModelConfig base = model_config_from_file(ab_config);
    const Dataset data = load_dataset(ab_data);
    std::ostringstream csv;
    csv << "ratio,auc,acc,macro_f1\n";
    for (double r : parse_ratio_grid(ab_grid)) {
      ModelConfig cfg = base;
      cfg.cts_ratio = r;
      const TrainResult result = train(data, cfg);
      const MetricReport report = evaluate(data, "test", result.params, cfg);
      csv << format_double(r) << "," << format_double(report.auc) << ","
          << format_double(report.acc) << "," << format_double(report.macro_f1) << "\n";
      std::cout << "r=" << r << " auc " << report.auc << "\n";
    }
    write_text_file(ab_report, csv.str());
  } else if (de->parsed()) {
    const auto [params, cfg] = load_model(de_ckpt);
    const Dataset data = load_dataset(de_data);
    const Bag& bag = find_bag(data, de_bag);
    write_text_file(de_out, decay_csv(analyze_decay(params, cfg, bag, de_cts == "on")));
  } else if (an->parsed()) {
    const Dataset data = load_dataset(an_data);
    const Bag& bag = find_bag(data, an_bag);
    write_text_file(an_out, anchor_csv(bag, an_anchor));
  } else if (lo->parsed()) {
    const auto [params, cfg] = load_model(lo_ckpt);
    const Dataset data = load_dataset(lo_data);
    const Bag& bag = find_bag(data, lo_bag);
    write_text_file(lo_out, locality_csv(analyze_locality(params, cfg, bag), parse_k_list(lo_k)));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ssmil::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ssmil::ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 1;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
