#include "todma/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "todma/external_predictor.hpp"
#include "todma/phy_sim.hpp"
#include "todma/rng.hpp"

#ifndef TODMA_VERSION
#define TODMA_VERSION "0.0.0"
#endif

namespace todma {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <class F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const PredictorError& e) {
    throw StageError(stage, std::string("predictor ") + to_string(e.kind()) + ": " + e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string fmt_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

using RowKey = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, double, std::size_t>;

RowKey key_of(const MetricsRecord& r) { return {r.K, r.L, r.M, r.Q, r.N, r.snr_db, r.trial}; }

RowKey key_of(const SimConfig& sim, std::size_t trial) { return {sim.K, sim.L, sim.M, sim.Q, sim.N, sim.snr_db, trial}; }

json trial_entry(const MetricsRecord& r) {
  return {{"trial", r.trial},
          {"K", r.K},
          {"L", r.L},
          {"M", r.M},
          {"Q", r.Q},
          {"N", r.N},
          {"snr_db", r.snr_db},
          {"seed", r.seed},
          {"wall_s", r.wall_s},
          {"collision_slots", r.collision_slots},
          {"same_cluster_conflicts", r.same_cluster_conflicts},
          {"empty_detections", r.empty_detections},
          {"masked_cells", r.masked_cells}};
}

RowKey key_of(const json& entry) {
  return {entry.at("K").get<std::size_t>(), entry.at("L").get<std::size_t>(), entry.at("M").get<std::size_t>(),
          entry.at("Q").get<std::size_t>(), entry.at("N").get<std::size_t>(), entry.at("snr_db").get<double>(),
          entry.at("trial").get<std::size_t>()};
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("io", "cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw StageError("io", "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void check_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StageError("io", "cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok") || !out.flush()) {
      throw StageError("io", "output directory " + dir.string() + " is not writable");
    }
  }
  fs::remove(probe, ec);
}

}  // namespace

ReceiverResult run_receiver(const ModulationCodebook& cb, const ReceivedFrame& frame, std::size_t K, std::size_t Q,
                            MaskedTokenPredictor& predictor, const ReceiverOptions& options) {
  ReceiverResult out;
  staged("detect", [&] {
    const AmpDetector detector(cb, options.detector);
    out.detections.reserve(frame.slots.size());
    for (const auto& Y : frame.slots) out.detections.push_back(detector.detect(Y, frame.noise_variance, K));
  });

  staged("cluster", [&] {
    const auto samples = collect_csi(out.detections);
    if (samples.size() < K) {
      throw InvalidArgument("only " + std::to_string(samples.size()) + " detected tokens for " + std::to_string(K) +
                            " devices");
    }
    Rng rng = make_rng(derive_seed(options.seed, 0, "cluster"));
    out.clusters = kmeanspp_cluster(samples, K, rng, options.clustering);
  });

  staged("assign", [&] {
    out.coarse = coarse_assign(out.clusters, out.detections);
    out.refined = out.coarse;
    score_matrix(out.refined, out.clusters);
    refine_assignment(out.refined);
  });

  staged("predict", [&] {
    Rng fill = make_rng(derive_seed(options.seed, 0, "random_fill"));
    out.nonorth.reserve(K);
    for (std::size_t k = 0; k < K; ++k) out.nonorth.push_back(random_fill(masked_sequence(out.coarse, k), Q, fill));

    std::vector<MaskedSequence> batch;
    batch.reserve(K);
    for (std::size_t k = 0; k < K; ++k) batch.push_back(masked_sequence(out.refined, k));
    out.todma = predict_masked(batch, predictor);
  });
  return out;
}

SourceModel build_source_model(const ExperimentConfig& cfg, std::size_t Q) {
  const auto& s = cfg.source;
  if (s.kind == "uniform") return uniform_model(Q);
  if (s.kind == "sparse") {
    Rng rng = make_rng(derive_seed(cfg.sim.seed, Q, "source_model"));
    return random_sparse_model(Q, std::min(s.successors, Q), rng);
  }
  if (s.kind == "corpus") return fit_markov(read_corpus(s.corpus), Q, s.smoothing, s.order);
  throw InvalidArgument("unknown source kind '" + s.kind + "'");
}

std::unique_ptr<MaskedTokenPredictor> make_predictor(const ExperimentConfig& cfg, const SourceModel& model,
                                                     std::size_t Q, std::uint64_t seed) {
  const auto& p = cfg.predictor;
  if (p.kind == "markov") return std::make_unique<MarkovPredictor>(model);
  if (p.kind == "random") return std::make_unique<RandomScorePredictor>(Q, seed);
  if (p.kind == "external") {
    const auto ms = std::chrono::milliseconds(static_cast<long long>(std::ceil(p.timeout_s * 1000.0)));
    return std::make_unique<ExternalPredictor>(p.endpoint, ms);
  }
  throw InvalidArgument("unknown predictor kind '" + p.kind + "'");
}

std::uint64_t trial_seed(std::uint64_t master, std::size_t trial) { return derive_seed(master, trial, "trial"); }

MetricsRecord run_trial(const ExperimentConfig& cfg, std::size_t trial_index, const SourceModel* model) {
  return run_trial_at(cfg, resolve_point(cfg, {}), trial_index, model);
}

MetricsRecord run_trial_at(const ExperimentConfig& cfg, const SimConfig& sim, std::size_t trial_index,
                           const SourceModel* model) {
  const auto started = std::chrono::steady_clock::now();
  staged("config", [&] {
    sim.validate();
    cfg.detector.validate();
  });

  MetricsRecord r;
  r.trial = trial_index;
  r.K = sim.K;
  r.L = sim.L;
  r.M = sim.M;
  r.Q = sim.Q;
  r.N = sim.N;
  r.snr_db = sim.snr_db;
  r.seed = trial_seed(sim.seed, trial_index);
  const std::uint64_t seed = r.seed;

  std::optional<SourceModel> own_model;
  TokenBatch batch;
  staged("source", [&] {
    if (model == nullptr) {
      own_model = build_source_model(cfg, sim.Q);
      model = &*own_model;
    }
    require(model->vocab_size == sim.Q, "source model vocabulary does not match Q");
    Rng rng = make_rng(derive_seed(seed, 0, "source"));
    batch = gen_markov_sources(*model, sim.K, sim.N, rng);
  });
  r.collision_slots = batch.collision_slots();

  ModulationCodebook cb;
  std::vector<DeviceChannel> channels;
  ReceivedFrame frame;
  staged("channel", [&] {
    Rng cb_rng = make_rng(derive_seed(seed, 0, "codebook"));
    Rng ch_rng = make_rng(derive_seed(seed, 0, "channels"));
    Rng noise_rng = make_rng(derive_seed(seed, 0, "noise"));
    cb = gen_codebook(sim.L, sim.Q, cb_rng);
    channels = gen_channels(sim.K, sim.M, ch_rng);
    frame = transmit_frame(cb, batch, channels, sim.noise_variance(), noise_rng);
  });

  auto predictor = staged("predict", [&] { return make_predictor(cfg, *model, sim.Q, derive_seed(seed, 0, "predictor")); });
  ReceiverOptions options;
  options.detector = cfg.detector;
  options.clustering = cfg.clustering;
  options.seed = seed;
  const ReceiverResult rx = run_receiver(cb, frame, sim.K, sim.Q, *predictor, options);

  r.same_cluster_conflicts = rx.coarse.same_cluster_conflicts;
  r.masked_cells = rx.refined.masked_count();
  for (const auto& d : rx.detections) r.empty_detections += d.empty_detection;

  staged("metrics", [&] {
    std::vector<std::vector<TokenId>> truth_sets(sim.N), detected(sim.N);
    std::vector<double> ratios(sim.N);
    for (std::size_t n = 0; n < sim.N; ++n) {
      truth_sets[n] = batch.active_set(n);
      detected[n] = rx.detections[n].active_set;
      const CMatrix H = equivalent_channel(batch, channels, n).dense(sim.Q);
      ratios[n] = nmse_ratio(rx.detections[n].h_hat_full, H, cfg.nmse_squared);
    }
    r.tder = tder(detected, truth_sets, sim.K);
    r.nmse_db = nmse_db_from_ratios(ratios);

    const DeviceMatching matching = match_devices(rx.clusters.centroids, channels);
    r.ter_todma = ter(rx.todma, batch, matching);
    r.ter_nonorth = ter(rx.nonorth, batch, matching);

    Rng orth_rng = make_rng(derive_seed(seed, 0, "orth"));
    const TokenBatch received = orth_token_errors(batch, cfg.orth_ber, orth_rng);
    r.ter_orth = ter(received.sequences, batch, DeviceMatching::identity(sim.K));

    LatencyModel lm;
    lm.bandwidth_hz = cfg.latency.bandwidth_hz;
    lm.ber = cfg.latency.ber;
    lm.snr_linear = std::pow(10.0, sim.snr_db / 10.0);
    r.latency_todma_s = latency_todma(sim.L, sim.N, lm.bandwidth_hz);
    r.latency_orth_s = latency_orth(sim.K, sim.N, sim.Q, lm);
  });

  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

std::string csv_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << r.trial << ',' << r.K << ',' << r.L << ',' << r.M << ',' << r.Q << ',' << r.N << ',' << fmt_real(r.snr_db)
      << ',' << fmt_real(r.tder) << ',' << fmt_real(r.nmse_db) << ',' << fmt_real(r.ter_todma) << ','
      << fmt_real(r.ter_nonorth) << ',' << fmt_real(r.ter_orth) << ',' << fmt_real(r.latency_todma_s) << ','
      << fmt_real(r.latency_orth_s) << ',' << r.seed;
  return out.str();
}

MetricsRecord parse_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) f.push_back(cell);
  if (f.size() != 15) throw InvalidArgument("results row has " + std::to_string(f.size()) + " fields, expected 15");
  try {
    MetricsRecord r;
    r.trial = std::stoull(f[0]);
    r.K = std::stoull(f[1]);
    r.L = std::stoull(f[2]);
    r.M = std::stoull(f[3]);
    r.Q = std::stoull(f[4]);
    r.N = std::stoull(f[5]);
    r.snr_db = std::stod(f[6]);
    r.tder = std::stod(f[7]);
    r.nmse_db = std::stod(f[8]);
    r.ter_todma = std::stod(f[9]);
    r.ter_nonorth = std::stod(f[10]);
    r.ter_orth = std::stod(f[11]);
    r.latency_todma_s = std::stod(f[12]);
    r.latency_orth_s = std::stod(f[13]);
    r.seed = std::stoull(f[14]);
    return r;
  } catch (const std::logic_error&) {
    throw InvalidArgument("malformed results row: " + line);
  }
}

std::vector<MetricsRecord> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw InvalidArgument(path.string() + " does not start with the results header");
  }
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_csv_row(line));
  }
  return out;
}

SweepSummary run_sweep(const ExperimentConfig& cfg, const SweepOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  staged("config", [&] { cfg.validate(); });
  const fs::path dir = cfg.output_dir;
  check_writable(dir);
  const fs::path csv_path = dir / "results.csv";
  const fs::path manifest_path = dir / "manifest.json";
  const std::string hash = config_hash(cfg);

  // previous (possibly interrupted) run in the same directory
  std::vector<MetricsRecord> existing;
  json previous_trials = json::array();
  if (fs::exists(csv_path)) {
    if (fs::exists(manifest_path)) {
      json old;
      try {
        std::ifstream in(manifest_path);
        old = json::parse(in);
      } catch (const std::exception& e) {
        throw StageError("io", "unreadable manifest " + manifest_path.string() + ": " + e.what());
      }
      if (old.value("config_hash", std::string{}) != hash) {
        throw StageError("io", dir.string() + " holds results of a different configuration (hash " +
                                   old.value("config_hash", std::string{"?"}) + ", now " + hash + ")");
      }
      if (old.contains("trials")) previous_trials = old["trials"];
    }
    existing = staged("io", [&] { return read_results(csv_path); });
  }
  std::set<RowKey> done;
  for (const auto& r : existing) done.insert(key_of(r));

  struct Job {
    SimConfig sim;
    std::size_t trial;
  };
  std::vector<Job> jobs;
  SweepSummary summary;
  for (const auto& point : sweep_points(cfg)) {
    const SimConfig sim = resolve_point(cfg, point);
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      if (done.contains(key_of(sim, t))) {
        ++summary.skipped;
      } else {
        jobs.push_back({sim, t});
      }
    }
  }

  json trial_log = json::array();
  for (const auto& entry : previous_trials) {
    if (done.contains(key_of(entry))) trial_log.push_back(entry);
  }

  auto manifest = [&](const char* status) {
    std::size_t conflicts = 0, empty = 0, conflict_trials = 0;
    for (const auto& e : trial_log) {
      const auto c = e.at("same_cluster_conflicts").get<std::size_t>();
      conflicts += c;
      conflict_trials += c > 0;
      empty += e.at("empty_detections").get<std::size_t>();
    }
    json m = {
        {"artifact", "todma"},
        {"version", TODMA_VERSION},
        {"status", status},
        {"config_hash", hash},
        {"config", to_json(cfg)},
        {"snr_convention", "SNR = 1/sigma^2 per symbol and receive antenna; codebook and channel entries CN(0,1)"},
        {"nmse", cfg.nmse_squared ? "squared Frobenius ratio" : "unsquared Frobenius ratio"},
        {"seed_derivation", "trial seed = derive_seed(sim.seed, trial, \"trial\"); independent of the grid point"},
        {"deviation_flags",
         {{"same_cluster_conflicts", conflicts},
          {"trials_with_same_cluster_conflicts", conflict_trials},
          {"empty_detections", empty}}},
        {"wall_clock_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()},
        {"trials", trial_log},
    };
    write_text_atomic(manifest_path, m.dump(2) + "\n");
  };
  manifest("running");

  std::ofstream csv(csv_path, std::ios::app | std::ios::binary);
  if (!csv) throw StageError("io", "cannot open " + csv_path.string());
  if (existing.empty() && fs::file_size(csv_path) == 0) csv << kResultsHeader << '\n' << std::flush;

  std::mutex mu;
  std::map<std::size_t, std::shared_ptr<const SourceModel>> models;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::size_t written = 0;

  auto model_for = [&](std::size_t Q) {
    {
      std::lock_guard lock(mu);
      if (const auto it = models.find(Q); it != models.end()) return it->second;
    }
    auto built = std::make_shared<const SourceModel>(staged("source", [&] { return build_source_model(cfg, Q); }));
    std::lock_guard lock(mu);
    return models.emplace(Q, built).first->second;
  };

  auto worker = [&] {
    while (!stop) {
      const std::size_t i = next++;
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      try {
        const auto model = model_for(job.sim.Q);
        const MetricsRecord r = run_trial_at(cfg, job.sim, job.trial, model.get());
        std::lock_guard lock(mu);
        if (stop) return;
        csv << csv_row(r) << '\n' << std::flush;
        trial_log.push_back(trial_entry(r));
        ++written;
        if (options.on_record) options.on_record(r);
        if (options.stop_after && written >= *options.stop_after) stop = true;
      } catch (const StageError& e) {
        std::lock_guard lock(mu);
        if (!failure) {
          char where[160];
          std::snprintf(where, sizeof(where), "trial %zu at K=%zu L=%zu M=%zu Q=%zu N=%zu snr_db=%g: ", job.trial,
                        job.sim.K, job.sim.L, job.sim.M, job.sim.Q, job.sim.N, job.sim.snr_db);
          const std::string msg = e.what();
          const std::string body = msg.substr(msg.find("] ") == std::string::npos ? 0 : msg.find("] ") + 2);
          failure = std::make_exception_ptr(StageError(e.stage(), where + body));
        }
        stop = true;
      }
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.workers, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  csv.close();
  summary.computed = written;

  if (failure) {
    manifest("failed");
    std::rethrow_exception(failure);
  }

  auto records = staged("io", [&] { return read_results(csv_path); });
  std::sort(records.begin(), records.end(),
            [](const MetricsRecord& a, const MetricsRecord& b) { return key_of(a) < key_of(b); });
  summary.complete = written == jobs.size();
  if (summary.complete) {
    std::string text = std::string(kResultsHeader) + "\n";
    for (const auto& r : records) text += csv_row(r) + "\n";
    write_text_atomic(csv_path, text);
    std::sort(trial_log.begin(), trial_log.end(),
              [](const json& a, const json& b) { return key_of(a) < key_of(b); });
  }
  manifest(summary.complete ? "complete" : "partial");
  summary.records = std::move(records);
  return summary;
}

std::string report(const std::vector<MetricsRecord>& records) {
  struct Acc {
    std::vector<const MetricsRecord*> rows;
  };
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, double>, Acc> groups;
  for (const auto& r : records) groups[{r.K, r.L, r.M, r.Q, r.N, r.snr_db}].rows.push_back(&r);

  auto mean_se = [](const std::vector<const MetricsRecord*>& rows, double MetricsRecord::*field) {
    double sum = 0.0;
    for (const auto* r : rows) sum += r->*field;
    const double n = static_cast<double>(rows.size());
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto* r : rows) ss += (r->*field - mean) * (r->*field - mean);
    const double se = rows.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    return std::pair{mean, se};
  };

  std::ostringstream out;
  out << "K,L,M,Q,N,snr_db,trials,tder,tder_se,nmse_db,nmse_db_se,ter_todma,ter_todma_se,ter_nonorth,"
         "ter_nonorth_se,ter_orth,latency_todma_s,latency_orth_s\n";
  char buf[64];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof(buf), ",%.6g", x);
    out << buf;
  };
  for (const auto& [key, acc] : groups) {
    const auto& [K, L, M, Q, N, snr] = key;
    out << K << ',' << L << ',' << M << ',' << Q << ',' << N;
    put(snr);
    out << ',' << acc.rows.size();
    for (auto field : {&MetricsRecord::tder, &MetricsRecord::nmse_db, &MetricsRecord::ter_todma,
                       &MetricsRecord::ter_nonorth}) {
      const auto [m, se] = mean_se(acc.rows, field);
      put(m);
      put(se);
    }
    for (auto field : {&MetricsRecord::ter_orth, &MetricsRecord::latency_todma_s, &MetricsRecord::latency_orth_s}) {
      put(mean_se(acc.rows, field).first);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace todma
