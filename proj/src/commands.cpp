#include "idn/commands.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "idn/checkpoint.hpp"
#include "idn/gradcheck.hpp"

namespace idn::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e)) {
    return kData;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kFailure;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

Model load_run_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint given (set checkpoint= or --checkpoint)");
  return load_checkpoint(cfg.checkpoint);
}

std::vector<Window> split_windows(const Dataset& data, const std::string& split, std::size_t T) {
  auto w = windows(data.subset(split), T);
  if (w.empty()) throw DataError("no chunks in split '" + split + "'");
  return w;
}

void check_dims(const Model& m, const Dataset& data) {
  if (m.config.d_x != data.feature_dim || m.config.K != data.num_classes) {
    throw DataError("checkpoint expects d_x=" + std::to_string(m.config.d_x) +
                    ", K=" + std::to_string(m.config.K) + " but data has d_x=" +
                    std::to_string(data.feature_dim) + ", K=" + std::to_string(data.num_classes));
  }
}

}  // namespace

Dataset load_run_data(RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("no data manifest given (set data= or --data)");
  Dataset d = load_features(cfg.data);
  cfg.model.K = d.num_classes;
  cfg.model.d_x = d.feature_dim;
  return d;
}

GenResult cmd_gen(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const SyntheticSpec spec = cfg.synthetic_spec();
  const Dataset d = generate_synthetic(spec).dataset;
  ensure_dir(out);
  GenResult r;
  r.manifest = save_dataset(d, out);
  r.train_chunks = d.subset("train").chunk_count();
  r.eval_chunks = d.subset("eval").chunk_count();
  log << "wrote " << d.chunk_count() << " chunks (train " << r.train_chunks << ", eval "
      << r.eval_chunks << ") in " << d.videos.size() << " videos to " << r.manifest.string()
      << '\n';
  return r;
}

Model cmd_train(const RunConfig& run, const TrainArgs& args, const fs::path& out,
                std::ostream& log) {
  RunConfig cfg = run;
  const Dataset data = load_run_data(cfg);
  cfg.validate();
  Model model = args.resume.empty() ? Model::initialized(cfg.model) : load_checkpoint(args.resume);
  if (!args.resume.empty()) {
    check_dims(model, data);
    // Optimisation settings may change on resume; the architecture may not.
    model.config.lr = cfg.model.lr;
    model.config.epochs = cfg.model.epochs;
  }
  const auto train_windows = split_windows(data, "train", model.config.T);

  ensure_dir(out);
  auto step_log = open_out(out / "train_log.csv");
  write_step_log_header(step_log);
  auto epoch_log = open_out(out / "epochs.csv");
  epoch_log << "epoch,mean_loss,mcap\n";

  TrainOptions opts;
  opts.stop_at_step = args.stop_at_step;
  opts.epoch_mcap = cfg.epoch_mcap;
  opts.on_step = [&](const StepLog& s) { write_step_log_row(step_log, s); };
  opts.on_epoch = [&](const EpochLog& e) {
    epoch_log << e.epoch << ',' << kv::format_double(e.mean_loss) << ','
              << (e.mcap ? kv::format_double(*e.mcap) : std::string()) << '\n';
    log << "epoch " << e.epoch << " loss " << e.mean_loss;
    if (e.mcap) log << " train mcAP " << *e.mcap;
    log << '\n';
  };
  const auto start = model.step;
  train(model, train_windows, opts);

  save_checkpoint(model, out / "checkpoint.bin");
  RunConfig effective = cfg;
  effective.model = model.config;
  auto cfg_out = open_out(out / "config.txt");
  write_run_config(cfg_out, effective);
  log << "trained " << to_string(model.config.variant) << " for " << (model.step - start)
      << " steps (step counter " << model.step << ") on " << train_windows.size()
      << " windows; checkpoint " << (out / "checkpoint.bin").string() << '\n';
  return model;
}

EvalReport cmd_eval(const RunConfig& run, const std::string& split, const fs::path& out,
                    std::ostream& log) {
  RunConfig cfg = run;
  const Dataset data = load_run_data(cfg);
  const Model model = load_run_checkpoint(cfg);
  check_dims(model, data);
  const auto w = split_windows(data, split, model.config.T);
  const auto frames = score_windows(model, w);
  const EvalReport report = evaluate_frames(frames, model.config.K);

  ensure_dir(out);
  auto metrics = open_out(out / "metrics.csv");
  write_report_csv(metrics, report);
  auto portion = open_out(out / "portion.csv");
  portion << "decile,portion,mcap,skipped_classes\n";
  for (std::size_t d = 0; d < kDeciles; ++d) {
    const auto p = portion_mcap(frames, model.config.K, d);
    portion << d << ',' << d * 10 << "%-" << (d + 1) * 10 << "%,"
            << (p.skipped.size() == model.config.K ? std::string() : kv::format_double(p.mcap))
            << ',';
    for (std::size_t i = 0; i < p.skipped.size(); ++i) portion << (i ? " " : "") << p.skipped[i];
    portion << '\n';
  }
  auto scores = open_out(out / "scores.tsv");
  write_scores(scores, frames);

  for (std::size_t k : report.skipped) log << "warning: class " << k << " has no positives; skipped\n";
  log << "split " << split << ": " << w.size() << " windows, mAP " << report.map << ", mcAP "
      << report.mcap << '\n';
  return report;
}

GateGap cmd_inspect_gates(const RunConfig& run, const std::string& split, const fs::path& out,
                          std::ostream& log) {
  RunConfig cfg = run;
  const Dataset data = load_run_data(cfg);
  const Model model = load_run_checkpoint(cfg);
  check_dims(model, data);
  if (!has_update_gate(model.config.variant)) {
    throw ConfigError("inspect-gates: variant " + std::string(to_string(model.config.variant)) +
                      " is unsupported (it has no reset/update gates)");
  }
  const auto w = split_windows(data, split, model.config.T);
  ensure_dir(out);
  auto csv = open_out(out / "gates.csv");
  csv << "window_id,t,mean_z,mean_r,relevance\n";
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (const auto& r : gate_rows(model, w[i], i)) {
      csv << r.window << ',' << r.t << ',' << kv::format_double(r.mean_z) << ','
          << kv::format_double(r.mean_r) << ',' << r.relevance << '\n';
    }
  }
  const GateGap g = update_gate_gap(model, w);
  log << "mean z over relevant chunks " << g.relevant << " (" << g.n_relevant
      << "), irrelevant " << g.irrelevant << " (" << g.n_irrelevant << "), gap " << g.gap()
      << '\n';
  return g;
}

std::vector<GradcheckRow> gradcheck(const std::vector<Variant>& variants, std::uint64_t seed,
                                    double tolerance, const std::string& tamper) {
  std::vector<GradcheckRow> rows;
  for (Variant v : variants) {
    const auto [model, window] = gradcheck_instance(v, seed);
    for (const auto& c : check_model_gradient(model, window, 1e-5, tamper)) {
      rows.push_back({v, c.name, c.max_rel, c.max_rel < tolerance});
    }
  }
  return rows;
}

int cmd_gradcheck(const RunConfig& cfg, const std::vector<Variant>& variants,
                  const std::string& tamper, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const auto rows = gradcheck(variants, cfg.model.seed, cfg.gradcheck_tolerance, tamper);
  std::ostringstream csv;
  csv << "variant,matrix,max_rel_error,status\n";
  bool ok = true;
  for (const auto& r : rows) {
    csv << to_string(r.variant) << ',' << r.matrix << ',' << kv::format_double(r.max_rel) << ','
        << (r.pass ? "pass" : "FAIL") << '\n';
    ok &= r.pass;
  }
  log << csv.str();
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.pass ? 0 : 1;
  log << (ok ? "all " + std::to_string(rows.size()) + " matrices pass"
             : std::to_string(failed) + " of " + std::to_string(rows.size()) + " matrices FAIL")
      << " (tolerance " << cfg.gradcheck_tolerance << ")\n";
  if (!out.empty()) {
    ensure_dir(out);
    auto f = open_out(out / "gradcheck.csv");
    f << csv.str();
  }
  return ok ? kOk : kNumeric;
}

std::vector<ParamCountRow> param_count_report(std::size_t d_x, std::size_t hidden,
                                              std::size_t embed, std::size_t K) {
  const auto tally = [](const auto& visitable, bool skip_embedding_classifier) {
    std::size_t n = 0;
    visitable.visit([&](ConstParamView v) {
      if (skip_embedding_classifier && (v.name == "W_ep" || v.name == "b_ep")) return;
      n += v.values.size();
    });
    return n;
  };
  const auto cell_tally = [&](Variant v, const CellDims& d, bool skip) {
    return std::visit([&](const auto& p) { return tally(p, skip); }, shaped_cell(v, d));
  };

  std::vector<ParamCountRow> rows;
  for (bool bias : {false, true}) {
    const CellDims d{d_x, hidden, embed, K + 1, bias};
    const std::size_t b = bias ? 1 : 0;
    const std::size_t head = (K + 1) * hidden + b * (K + 1);
    const std::string suffix = bias ? ", biases on" : ", biases off";

    ParamCountRow cell{"cell only" + suffix};
    cell.gru_closed = closed_form_param_count(Variant::gru, d);
    cell.idu_closed = closed_form_param_count(Variant::idu, d);
    cell.gru_tally = cell_tally(Variant::gru, d, false);
    cell.idu_tally = cell_tally(Variant::idu, d, false);
    rows.push_back(cell);

    ParamCountRow no_ep{"cell without embedding classifier" + suffix};
    no_ep.gru_closed = cell.gru_closed;
    no_ep.gru_tally = cell.gru_tally;
    no_ep.idu_closed = cell.idu_closed - (K + 1) * embed - b * (K + 1);
    no_ep.idu_tally = cell_tally(Variant::idu, d, true);
    rows.push_back(no_ep);

    ParamCountRow net{"cell + classification head" + suffix};
    IdnConfig c;
    c.d_x = d_x;
    c.hidden = hidden;
    c.embed = embed;
    c.K = K;
    c.bias = bias;
    net.gru_closed = cell.gru_closed + head;
    net.idu_closed = cell.idu_closed + head;
    c.variant = Variant::gru;
    net.gru_tally = Model::shaped(c).param_count();
    c.variant = Variant::idu;
    net.idu_tally = Model::shaped(c).param_count();
    rows.push_back(net);
  }
  return rows;
}

void write_param_count_report(std::ostream& os, const std::vector<ParamCountRow>& rows) {
  os << "convention,gru_closed_form,gru_tally,idu_closed_form,idu_tally,idu_over_gru\n";
  for (const auto& r : rows) {
    std::ostringstream ratio;
    ratio << std::fixed << std::setprecision(4) << r.ratio();
    os << r.convention << ',' << r.gru_closed << ',' << r.gru_tally << ',' << r.idu_closed << ','
       << r.idu_tally << ',' << ratio.str() << '\n';
  }
}

}  // namespace idn::cli
