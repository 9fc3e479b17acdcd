// Command-line surface: dataset generation, training, evaluation and
// gradient checking. Exit codes: 0 success, 1 usage error, 2 divergence,
// 3 gradient-check failure.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "searnn/searnn.hpp"

namespace {

searnn::TrainConfig config_with_overrides(const std::string& path,
                                          const std::vector<std::string>& sets,
                                          const searnn::TrainConfig& defaults = {}) {
  searnn::TrainConfig cfg = path.empty() ? defaults : searnn::load_config(path);
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw searnn::ConfigError("--set expects key=value, got: " + s);
    searnn::apply_config_entry(cfg, searnn::detail::trim(s.substr(0, eq)),
                               searnn::detail::trim(s.substr(eq + 1)));
  }
  return cfg;
}

int run_gen_data(const searnn::TrainConfig& cfg, const std::string& out_dir) {
  const searnn::GeneratedData data = searnn::build_dataset(cfg);
  data.vocab.save(out_dir + "/vocab.txt");
  searnn::save_tsv(out_dir + "/train.tsv", data.split.train, data.vocab);
  searnn::save_tsv(out_dir + "/valid.tsv", data.split.valid, data.vocab);
  searnn::save_tsv(out_dir + "/test.tsv", data.split.test, data.vocab);
  searnn::save_manifest(out_dir + "/manifest.txt", data.split);
  std::cout << "wrote " << data.split.train.size() << "/" << data.split.valid.size() << "/"
            << data.split.test.size() << " train/valid/test pairs to " << out_dir << "\n";
  return 0;
}

int run_train(const searnn::TrainConfig& cfg) {
  const searnn::TrainResult result = searnn::train(cfg);
  if (cfg.metrics_path.empty()) searnn::write_metrics_csv(std::cout, result.metrics);
  std::cout << "final train loss " << result.final_train_loss << ", best validation "
            << result.best_valid << ", total roll-outs " << result.total_rollouts << "\n";
  if (!cfg.checkpoint_path.empty())
    std::cout << "best checkpoint written to " << cfg.checkpoint_path << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_tsv,
             const std::string& vocab_path, const std::string& metric_name, int t_max) {
  searnn::ParameterStore store = searnn::ParameterStore::load(checkpoint);
  const searnn::Vocabulary vocab = searnn::Vocabulary::load(vocab_path);
  const std::vector<searnn::SeqPair> pairs = searnn::load_tsv(data_tsv, &vocab);

  searnn::ModelConfig mc;
  mc.vocab_size = store.value("embed").dim(0);
  mc.embed_dim = store.value("embed").dim(1);
  mc.hidden_dim = store.value("enc.wz").dim(0);
  mc.attention = store.has("att.w");
  mc.t_max = t_max;
  if (mc.vocab_size != vocab.size())
    throw searnn::ConfigError("checkpoint vocabulary size does not match the vocabulary file");
  searnn::Seq2SeqModel model(mc, store, /*init_seed=*/0);

  const double value = searnn::evaluate(model, pairs, searnn::parse_metric(metric_name));
  std::cout << metric_name << " " << value << "\n";
  return 0;
}

int run_gradcheck(const searnn::TrainConfig& cfg) {
  const searnn::GradCheckReport report = searnn::gradcheck(cfg);
  searnn::print_gradcheck_report(std::cout, report);
  if (!report.ok()) {
    std::cout << "gradient check FAILED (threshold " << report.threshold << ")\n";
    return 3;
  }
  std::cout << "gradient check passed (threshold " << report.threshold << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cost-sensitive sequence-to-sequence training laboratory"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset as TSV + manifest");
  std::string gen_config, gen_out = ".";
  std::vector<std::string> gen_sets;
  gen->add_option("--config", gen_config, "Optional config file for dataset parameters");
  gen->add_option("--set", gen_sets, "Override config entries, key=value");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model from a config file");
  std::string train_config;
  std::vector<std::string> train_sets;
  tr->add_option("config", train_config, "Config file (key = value lines)")->required();
  tr->add_option("--set", train_sets, "Override config entries, key=value");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a TSV split");
  std::string ev_ckpt, ev_data, ev_vocab, ev_metric = "edit";
  int ev_tmax = 10;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data, "TSV file with source<TAB>target pairs")->required();
  ev->add_option("--vocab", ev_vocab)->required();
  ev->add_option("--metric", ev_metric, "hamming | edit | bleu");
  ev->add_option("--t-max", ev_tmax, "Decoding length limit");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every training loss");
  std::string gc_config;
  std::vector<std::string> gc_sets;
  gc->add_option("--config", gc_config, "Optional config file");
  gc->add_option("--set", gc_sets, "Override config entries, key=value");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(config_with_overrides(gen_config, gen_sets), gen_out);
    if (tr->parsed()) return run_train(config_with_overrides(train_config, train_sets));
    if (ev->parsed()) return run_eval(ev_ckpt, ev_data, ev_vocab, ev_metric, ev_tmax);
    if (gc->parsed())
      return run_gradcheck(
          config_with_overrides(gc_config, gc_sets, searnn::gradcheck_defaults()));
  } catch (const searnn::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
