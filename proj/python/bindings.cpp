// Python bindings: configs travel as JSON text, arrays as NumPy via Eigen.
#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "todma/amp_detector.hpp"
#include "todma/config.hpp"
#include "todma/harness.hpp"
#include "todma/metrics.hpp"
#include "todma/phy_sim.hpp"
#include "todma/rng.hpp"
#include "todma/source_model.hpp"

namespace py = pybind11;
using namespace todma;

namespace {

ExperimentConfig parse_config(const std::string& text) { return config_from_json(nlohmann::json::parse(text)); }

py::dict record_dict(const MetricsRecord& r) {
  py::dict d;
  d["trial"] = r.trial;
  d["K"] = r.K;
  d["L"] = r.L;
  d["M"] = r.M;
  d["Q"] = r.Q;
  d["N"] = r.N;
  d["snr_db"] = r.snr_db;
  d["tder"] = r.tder;
  d["nmse_db"] = r.nmse_db;
  d["ter_todma"] = r.ter_todma;
  d["ter_nonorth"] = r.ter_nonorth;
  d["ter_orth"] = r.ter_orth;
  d["latency_todma_s"] = r.latency_todma_s;
  d["latency_orth_s"] = r.latency_orth_s;
  d["seed"] = r.seed;
  d["collision_slots"] = r.collision_slots;
  d["masked_cells"] = r.masked_cells;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Token-domain multiple access simulator core";
  m.attr("__version__") = TODMA_VERSION;
  m.attr("RESULTS_HEADER") = kResultsHeader;

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("index"), py::arg("stage"));

  // configs
  m.def("preset_json", [](const std::string& name) { return to_json(preset(name)).dump(); }, py::arg("name"));
  m.def("normalize_config_json", [](const std::string& text) { return to_json(parse_config(text)).dump(); },
        py::arg("config_json"), "Parse strictly, fill defaults and return canonical JSON.");
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("config_json"));

  // physical layer
  m.def(
      "gen_codebook",
      [](std::size_t L, std::size_t Q, std::uint64_t seed) {
        Rng rng = make_rng(seed);
        return gen_codebook(L, Q, rng).U;
      },
      py::arg("L"), py::arg("Q"), py::arg("seed"));
  m.def("snr_db_to_noise_variance", &snr_db_to_noise_variance, py::arg("snr_db"));

  // detector
  py::class_<DetectorConfig>(m, "DetectorConfig")
      .def(py::init<>())
      .def_readwrite("iterations", &DetectorConfig::iterations)
      .def_readwrite("activity_threshold", &DetectorConfig::activity_threshold)
      .def_readwrite("damping", &DetectorConfig::damping)
      .def_readwrite("early_stop_tol", &DetectorConfig::early_stop_tol)
      .def_readwrite("gamma_init", &DetectorConfig::gamma_init)
      .def_readwrite("known_k", &DetectorConfig::known_k);

  m.def(
      "denoiser_moments",
      [](Complex r, double sigma, double gamma) {
        const auto d = denoiser_moments(r, sigma, gamma);
        py::dict out;
        out["pi"] = d.pi;
        out["mu"] = d.mu;
        out["tau"] = d.tau;
        out["h_hat"] = d.h_hat;
        out["v"] = d.v;
        return out;
      },
      py::arg("r"), py::arg("sigma"), py::arg("gamma"));

  m.def(
      "amp_detect",
      [](const CMatrix& Y, const CMatrix& U, double noise_variance, const DetectorConfig& cfg, std::size_t known_k) {
        const AmpDetector det(ModulationCodebook{U}, cfg);
        const AmpState st = det.iterate(Y, noise_variance);
        const DetectionOutput out =
            cfg.known_k && known_k > 0 ? detect_top_k(st, known_k) : detect_tokens(st, cfg.activity_threshold);
        py::dict d;
        d["active_set"] = out.active_set;
        d["gamma"] = st.gamma;
        d["h_hat"] = st.h_hat;
        d["iterations"] = st.t;
        d["converged"] = st.converged;
        return d;
      },
      py::arg("Y"), py::arg("U"), py::arg("noise_variance"), py::arg("config") = DetectorConfig{},
      py::arg("known_k") = 0);

  // sources
  py::class_<SourceModel>(m, "SourceModel")
      .def_readonly("order", &SourceModel::order)
      .def_readonly("vocab_size", &SourceModel::vocab_size)
      .def_readonly("initial_dist", &SourceModel::initial_dist)
      .def("transition_probability", &SourceModel::transition_probability, py::arg("prev"), py::arg("next"));
  m.def("fit_markov", &fit_markov, py::arg("corpus"), py::arg("Q"), py::arg("smoothing"), py::arg("order") = 1);
  m.def("uniform_model", &uniform_model, py::arg("Q"));
  m.def(
      "gen_markov_sources",
      [](const SourceModel& model, std::size_t K, std::size_t N, std::uint64_t seed) {
        Rng rng = make_rng(seed);
        return gen_markov_sources(model, K, N, rng).sequences;
      },
      py::arg("model"), py::arg("K"), py::arg("N"), py::arg("seed"));

  // metrics and latency
  m.def(
      "nmse_db",
      [](const std::vector<CMatrix>& est, const std::vector<CMatrix>& truth, bool squared) {
        return nmse_db(est, truth, squared);
      },
      py::arg("estimates"), py::arg("truth"), py::arg("squared") = false);
  m.def(
      "tder",
      [](const std::vector<std::vector<TokenId>>& detected, const std::vector<std::vector<TokenId>>& truth,
         std::size_t K) { return tder(detected, truth, K); },
      py::arg("detected"), py::arg("truth"), py::arg("K"));
  m.def(
      "ter",
      [](const std::vector<std::vector<TokenId>>& est, const std::vector<std::vector<TokenId>>& truth, std::size_t Q) {
        const TokenBatch batch{Q, truth.empty() ? 0 : truth.front().size(), truth};
        return ter(est, batch, DeviceMatching::identity(truth.size()));
      },
      py::arg("estimated"), py::arg("truth"), py::arg("Q"), "TER under the identity device matching.");
  m.def("latency_todma", &latency_todma, py::arg("L"), py::arg("N"), py::arg("bandwidth_hz"));
  m.def(
      "latency_orth",
      [](std::size_t K, std::size_t N, std::size_t Q, double bandwidth_hz, double snr_linear, double ber) {
        return latency_orth(K, N, Q, LatencyModel{bandwidth_hz, ber, snr_linear});
      },
      py::arg("K"), py::arg("N"), py::arg("Q"), py::arg("bandwidth_hz"), py::arg("snr_linear"), py::arg("ber"));

  // trials
  m.def(
      "run_trial",
      [](const std::string& config_json, std::size_t trial) {
        const auto cfg = parse_config(config_json);
        cfg.validate();
        MetricsRecord r;
        {
          py::gil_scoped_release release;
          r = run_trial(cfg, trial);
        }
        return record_dict(r);
      },
      py::arg("config_json"), py::arg("trial"));
  m.def(
      "csv_row",
      [](const std::string& config_json, std::size_t trial) {
        const auto cfg = parse_config(config_json);
        py::gil_scoped_release release;
        return csv_row(run_trial(cfg, trial));
      },
      py::arg("config_json"), py::arg("trial"));
}
