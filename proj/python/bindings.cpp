#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "knnssd/cli.hpp"
#include "knnssd/corpus.hpp"
#include "knnssd/gaussian_process.hpp"
#include "knnssd/mask_search.hpp"
#include "knnssd/metrics.hpp"
#include "knnssd/model.hpp"
#include "knnssd/router.hpp"
#include "knnssd/spec_engine.hpp"
#include "knnssd/stream.hpp"

namespace py = pybind11;
using namespace knnssd;

PYBIND11_MODULE(_knnssd, m) {
  m.doc() = "Self-speculative decoding with skipped sublayers and nearest-neighbor mask routing";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<LosslessnessError>(m, "LosslessnessError", PyExc_RuntimeError);

  py::enum_<Backend>(m, "Backend")
      .value("TINY_TRANSFORMER", Backend::kTinyTransformer)
      .value("PLANTED", Backend::kPlanted);
  py::enum_<DraftMode>(m, "DraftMode").value("FIXED", DraftMode::kFixed).value("ADAPTIVE", DraftMode::kAdaptive);
  py::enum_<ObjectiveMode>(m, "ObjectiveMode")
      .value("WALLCLOCK", ObjectiveMode::kWallclock)
      .value("ANALYTIC", ObjectiveMode::kAnalytic);
  py::enum_<StreamMode>(m, "StreamMode")
      .value("VANILLA", StreamMode::kVanilla)
      .value("SSD_FIXED", StreamMode::kSsdFixed)
      .value("SSD_MIXED", StreamMode::kSsdMixed)
      .value("KNN_SSD", StreamMode::kKnnSsd);

  py::class_<VocabLayout>(m, "VocabLayout")
      .def_readonly("vocab_size", &VocabLayout::vocab_size)
      .def_readonly("num_domains", &VocabLayout::num_domains)
      .def_readonly("shared_band", &VocabLayout::shared_band)
      .def("domain_band", &VocabLayout::domain_band)
      .def("band_of", &VocabLayout::band_of);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init<>())
      .def_readwrite("backend", &ModelSpec::backend)
      .def_readwrite("num_blocks", &ModelSpec::num_blocks)
      .def_readwrite("hidden_dim", &ModelSpec::hidden_dim)
      .def_readwrite("vocab_size", &ModelSpec::vocab_size)
      .def_readwrite("seed", &ModelSpec::seed)
      .def_readwrite("num_domains", &ModelSpec::num_domains)
      .def_readwrite("shared_band", &ModelSpec::shared_band)
      .def_readwrite("max_positions", &ModelSpec::max_positions)
      .def_readwrite("eos_token", &ModelSpec::eos_token)
      .def_readwrite("planted_gates", &ModelSpec::planted_gates)
      .def("num_sublayers", &ModelSpec::num_sublayers)
      .def("layout", &ModelSpec::layout)
      .def("validate", &ModelSpec::validate);

  py::class_<SkipMask>(m, "SkipMask")
      .def(py::init<std::size_t>())
      .def(py::init<std::vector<std::uint8_t>>())
      .def_static("none", &SkipMask::none)
      .def_static("all", &SkipMask::all)
      .def_static("from_bitstring", &SkipMask::from_bitstring)
      .def("to_bitstring", &SkipMask::to_bitstring)
      .def("bits", &SkipMask::bits)
      .def("skips", &SkipMask::skips)
      .def("set", &SkipMask::set)
      .def("popcount", &SkipMask::popcount)
      .def("skip_ratio", &SkipMask::skip_ratio)
      .def("attention_skip_ratio", &SkipMask::attention_skip_ratio)
      .def("mlp_skip_ratio", &SkipMask::mlp_skip_ratio)
      .def("__len__", &SkipMask::size)
      .def("__eq__", [](const SkipMask& a, const SkipMask& b) { return a == b; })
      .def("__hash__", [](const SkipMask& k) { return py::hash(py::str(k.to_bitstring())); })
      .def("__repr__", [](const SkipMask& k) { return "SkipMask('" + k.to_bitstring() + "')"; });

  py::class_<HiddenVector>(m, "HiddenVector")
      .def(py::init<>())
      .def(py::init([](std::vector<double> v, std::string id) { return HiddenVector{std::move(v), std::move(id)}; }),
           py::arg("values"), py::arg("source_prompt_id") = "")
      .def_readwrite("values", &HiddenVector::values)
      .def_readwrite("source_prompt_id", &HiddenVector::source_prompt_id);

  py::class_<Prompt>(m, "Prompt")
      .def(py::init<>())
      .def_readwrite("id", &Prompt::id)
      .def_readwrite("domain", &Prompt::domain)
      .def_readwrite("tokens", &Prompt::tokens);

  py::class_<Model>(m, "Model")
      .def(py::init<ModelSpec>())
      .def("spec", &Model::spec, py::return_value_policy::copy)
      .def("num_sublayers", &Model::num_sublayers);

  m.def("default_planted_gates", &default_planted_gates, py::arg("num_blocks"), py::arg("num_domains"),
        py::arg("seed"));
  m.def("greedy_decode",
        [](const Model& model, const std::vector<Token>& prompt, int max_new) {
          return greedy_decode(model, prompt, max_new);
        }, py::arg("model"), py::arg("prompt"), py::arg("max_new"),
        py::call_guard<py::gil_scoped_release>());
  m.def("extract_last_hidden",
        [](const Model& model, const std::vector<Token>& prompt, std::string id) {
          return extract_last_hidden(model, prompt, std::move(id));
        }, py::arg("model"), py::arg("prompt"),
        py::arg("source_prompt_id") = "", py::call_guard<py::gil_scoped_release>());
  m.def("planted_optimal_mask", &planted_optimal_mask);
  m.def("synth_corpus",
        [](const VocabLayout& layout, DomainId d, int n, std::uint64_t seed) {
          return synth_corpus(layout, d, n, seed);
        },
        py::arg("layout"), py::arg("domain"), py::arg("n"), py::arg("seed"));

  py::class_<DraftConfig>(m, "DraftConfig")
      .def(py::init<>())
      .def_readwrite("max_draft_len", &DraftConfig::max_draft_len)
      .def_readwrite("confidence_threshold", &DraftConfig::confidence_threshold)
      .def_readwrite("mode", &DraftConfig::mode);

  py::class_<DecodeStats>(m, "DecodeStats")
      .def_readonly("drafted_tokens", &DecodeStats::drafted_tokens)
      .def_readonly("accepted_tokens", &DecodeStats::accepted_tokens)
      .def_readonly("target_forward_passes", &DecodeStats::target_forward_passes)
      .def_readonly("emitted_tokens", &DecodeStats::emitted_tokens)
      .def_readonly("draft_ms", &DecodeStats::draft_ms)
      .def_readonly("verify_ms", &DecodeStats::verify_ms)
      .def("mean_accepted_length", &DecodeStats::mean_accepted_length)
      .def("acceptance_rate", &DecodeStats::acceptance_rate);

  py::class_<SpecResult>(m, "SpecResult")
      .def_readonly("tokens", &SpecResult::tokens)
      .def_readonly("stats", &SpecResult::stats);

  m.def("speculative_generate",
        [](const Model& model, const std::vector<Token>& prompt, const SkipMask& mask,
           const DraftConfig& cfg, int max_new) {
          return speculative_generate(model, prompt, mask, cfg, max_new);
        }, py::arg("model"), py::arg("prompt"),
        py::arg("mask"), py::arg("cfg"), py::arg("max_new"), py::call_guard<py::gil_scoped_release>());

  m.def("cost_coefficient_simple", &cost_coefficient_simple);
  m.def("cost_coefficient_weighted", &cost_coefficient_weighted, py::arg("mlp_skip_ratio"),
        py::arg("attention_skip_ratio"), py::arg("beta"));
  m.def("cost_coefficient", &cost_coefficient);
  m.def("expected_speedup", &expected_speedup, py::arg("mean_accepted_len"),
        py::arg("acceptance_rate"), py::arg("cost_coefficient"));
  m.def("project_2d", &project_2d);

  py::class_<ObjectiveSpec>(m, "ObjectiveSpec")
      .def(py::init<>())
      .def_readwrite("mode", &ObjectiveSpec::mode)
      .def_readwrite("anchor_samples", &ObjectiveSpec::anchor_samples)
      .def_readwrite("draft_cfg", &ObjectiveSpec::draft_cfg)
      .def_readwrite("max_new", &ObjectiveSpec::max_new)
      .def_readwrite("beta", &ObjectiveSpec::beta)
      .def_readwrite("workers", &ObjectiveSpec::workers);
  m.def("evaluate_objective", &evaluate_objective, py::call_guard<py::gil_scoped_release>());

  py::class_<BOConfig>(m, "BOConfig")
      .def(py::init<>())
      .def_readwrite("iterations", &BOConfig::iterations)
      .def_readwrite("init_random_points", &BOConfig::init_random_points)
      .def_readwrite("kernel_lengthscale", &BOConfig::kernel_lengthscale)
      .def_readwrite("noise_variance", &BOConfig::noise_variance)
      .def_readwrite("binarize_threshold", &BOConfig::binarize_threshold)
      .def_readwrite("seed", &BOConfig::seed)
      .def_readwrite("candidate_pool_size", &BOConfig::candidate_pool_size);

  py::class_<TraceEntry>(m, "TraceEntry")
      .def_readonly("iteration", &TraceEntry::iteration)
      .def_readonly("mask", &TraceEntry::mask)
      .def_readonly("objective", &TraceEntry::objective)
      .def_readonly("best_so_far", &TraceEntry::best_so_far);
  py::class_<SearchResult>(m, "SearchResult")
      .def_readonly("best_mask", &SearchResult::best_mask)
      .def_readonly("best_objective", &SearchResult::best_objective)
      .def_readonly("trace", &SearchResult::trace);

  m.def("binarize", [](const std::vector<double>& p, double t) { return binarize(p, t); }, py::arg("point"), py::arg("threshold") = 0.5);
  // A Python objective holds the GIL itself; the model variant releases it.
  m.def("search", py::overload_cast<std::size_t, const MaskObjective&, const BOConfig&>(&search),
        py::arg("num_sublayers"), py::arg("objective"), py::arg("cfg"));
  m.def("search_model", py::overload_cast<const Model&, const ObjectiveSpec&, const BOConfig&>(&search),
        py::arg("model"), py::arg("spec"), py::arg("cfg"), py::call_guard<py::gil_scoped_release>());
  m.def("random_search", &random_search, py::arg("num_sublayers"), py::arg("objective"),
        py::arg("budget"), py::arg("seed"));

  py::class_<Posterior>(m, "Posterior")
      .def(py::init<double, double>(), py::arg("mean"), py::arg("variance"))
      .def_readwrite("mean", &Posterior::mean)
      .def_readwrite("variance", &Posterior::variance);
  m.def("expected_improvement", &expected_improvement);

  py::class_<Anchor>(m, "Anchor")
      .def_readonly("vector", &Anchor::vector)
      .def_readonly("domain", &Anchor::domain)
      .def_readonly("distance", &Anchor::distance);
  py::class_<RouterModel>(m, "RouterModel")
      .def(py::init<>())
      .def_readwrite("anchors", &RouterModel::anchors)
      .def("domains", &RouterModel::domains);
  m.def("cosine_similarity", [](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine_similarity(a, b);
  });
  m.def("classify", &classify);

  py::class_<KMeansResult>(m, "KMeansResult")
      .def_readonly("assignments", &KMeansResult::assignments)
      .def_readonly("centroids", &KMeansResult::centroids)
      .def_readonly("inertia_history", &KMeansResult::inertia_history)
      .def_readonly("iterations", &KMeansResult::iterations);
  m.def("kmeans", &kmeans, py::arg("vectors"), py::arg("k"), py::arg("seed"), py::arg("max_iters") = 100,
        py::arg("restarts") = 1);
  m.def("select_anchors",
        [](const std::vector<HiddenVector>& cluster, const std::vector<double>& centroid, int k, DomainId d) {
          return select_anchors(cluster, centroid, k, d);
        },
        py::arg("cluster"), py::arg("centroid"), py::arg("k"), py::arg("domain") = 0);

  py::class_<RegistryEntry>(m, "RegistryEntry")
      .def_readonly("id", &RegistryEntry::id)
      .def_readonly("name", &RegistryEntry::name)
      .def_readonly("mask", &RegistryEntry::mask)
      .def_readonly("k_anchors", &RegistryEntry::k_anchors);
  py::class_<Registry>(m, "Registry")
      .def_readonly("fingerprint", &Registry::fingerprint)
      .def_readonly("domains", &Registry::domains);
  m.def("model_fingerprint", &model_fingerprint);
  m.def("route", &route);

  py::class_<FitOptions>(m, "FitOptions")
      .def(py::init<>())
      .def_readwrite("k_clusters", &FitOptions::k_clusters)
      .def_readwrite("k_anchors", &FitOptions::k_anchors)
      .def_readwrite("search_samples", &FitOptions::search_samples)
      .def_readwrite("seed", &FitOptions::seed)
      .def_readwrite("run_search", &FitOptions::run_search)
      .def_readwrite("bo", &FitOptions::bo)
      .def_readwrite("objective", &FitOptions::objective);
  py::class_<FitResult>(m, "FitResult")
      .def_readonly("router", &FitResult::router)
      .def_readonly("registry", &FitResult::registry)
      .def_readonly("cluster_purity", &FitResult::cluster_purity)
      .def_readonly("warnings", &FitResult::warnings);
  m.def("fit_router", &fit_router, py::call_guard<py::gil_scoped_release>());

  py::class_<StreamConfig>(m, "StreamConfig")
      .def(py::init<>())
      .def_readwrite("mix_ratio", &StreamConfig::mix_ratio)
      .def_readwrite("num_domains", &StreamConfig::num_domains)
      .def_readwrite("length", &StreamConfig::length)
      .def_readwrite("seed", &StreamConfig::seed);
  py::class_<StreamItem>(m, "StreamItem")
      .def_readonly("position", &StreamItem::position)
      .def_readonly("domain", &StreamItem::domain)
      .def_readonly("prompt", &StreamItem::prompt);
  m.def("generate_stream", &generate_stream);

  py::class_<SpeedupRow>(m, "SpeedupRow")
      .def_readonly("label", &SpeedupRow::label)
      .def_readonly("records", &SpeedupRow::records)
      .def_readonly("mean_accepted_len", &SpeedupRow::mean_accepted_len)
      .def_readonly("acceptance_rate", &SpeedupRow::acceptance_rate)
      .def_readonly("cost_coefficient", &SpeedupRow::cost_coefficient)
      .def_readonly("expected_speedup", &SpeedupRow::expected_speedup)
      .def_readonly("analytic_speedup", &SpeedupRow::analytic_speedup)
      .def_readonly("measured_speedup", &SpeedupRow::measured_speedup);
  py::class_<SpeedupReport>(m, "SpeedupReport")
      .def_readonly("overall", &SpeedupReport::overall)
      .def_readonly("per_domain", &SpeedupReport::per_domain);

  py::class_<StreamRunOptions>(m, "StreamRunOptions")
      .def(py::init<>())
      .def_readwrite("mode", &StreamRunOptions::mode)
      .def_readwrite("stream", &StreamRunOptions::stream)
      .def_readwrite("draft", &StreamRunOptions::draft)
      .def_readwrite("max_new", &StreamRunOptions::max_new)
      .def_readwrite("beta", &StreamRunOptions::beta)
      .def_readwrite("bo", &StreamRunOptions::bo)
      .def_readwrite("search_samples", &StreamRunOptions::search_samples)
      .def_readwrite("timing", &StreamRunOptions::timing);
  py::class_<StreamRunResult>(m, "StreamRunResult")
      .def_readonly("items", &StreamRunResult::items)
      .def_readonly("routed", &StreamRunResult::routed)
      .def_readonly("outputs", &StreamRunResult::outputs)
      .def_readonly("report", &StreamRunResult::report);
  m.def("run_stream", &run_stream, py::call_guard<py::gil_scoped_release>());

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "knnssd");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  });
}
