#include <pybind11/pybind11.h>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/stl.h>

#include "sfml/predict.hpp"
#include "sfml/training.hpp"

namespace py = pybind11;
using namespace sfml;

namespace {

ExcitationSignal signal_from_python(const py::object& u, int n_u) {
  if (py::isinstance<py::str>(u)) {
    return ExcitationSignal::from_expressions({u.cast<std::string>()});
  }
  if (py::isinstance<py::list>(u) || py::isinstance<py::tuple>(u)) {
    return ExcitationSignal::from_expressions(u.cast<std::vector<std::string>>());
  }
  // fall back to a python callable t -> array
  auto fn = u.cast<std::function<Eigen::VectorXd(double)>>();
  return ExcitationSignal::analytic(n_u, std::move(fn));
}

}  // namespace

PYBIND11_MODULE(_sfmlearn, m) {
  m.doc() = "Stochastic flow map learning: conditional normalizing flows for "
            "excited stochastic systems";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<FormatError>(m, "FormatError");
  py::register_exception<SimulationError>(m, "SimulationError");
  py::register_exception<TrainingError>(m, "TrainingError");
  py::register_exception<PredictError>(m, "PredictError");

  py::class_<Box>(m, "Box")
      .def(py::init<Eigen::VectorXd, Eigen::VectorXd>(), py::arg("lo"), py::arg("hi"))
      .def_readonly("lo", &Box::lo)
      .def_readonly("hi", &Box::hi)
      .def("contains", &Box::contains);

  py::class_<BasisSpec>(m, "BasisSpec")
      .def_static("monomial", &BasisSpec::monomial, py::arg("m"), py::arg("delta"))
      .def_static("piecewise_constant", &BasisSpec::piecewise_constant, py::arg("delta"))
      .def_static("piecewise_linear", &BasisSpec::piecewise_linear, py::arg("delta"))
      .def_readonly("m", &BasisSpec::m)
      .def_readonly("delta", &BasisSpec::delta)
      .def_property_readonly("family",
                             [](const BasisSpec& b) { return to_string(b.family); });

  py::class_<BuiltinSystem>(m, "BuiltinSystem")
      .def_readonly("name", &BuiltinSystem::name)
      .def_readonly("d", &BuiltinSystem::d)
      .def_readonly("n_u", &BuiltinSystem::n_u)
      .def_readonly("delta", &BuiltinSystem::delta)
      .def_readonly("integer_state", &BuiltinSystem::integer_state)
      .def_readonly("x_domain", &BuiltinSystem::x_domain)
      .def_readonly("gamma_domain", &BuiltinSystem::gamma_domain)
      .def_readonly("basis", &BuiltinSystem::basis)
      .def("step",
           [](const BuiltinSystem& sys, const Eigen::VectorXd& x,
              const Eigen::VectorXd& gamma, std::uint64_t seed, int n_sub) {
             Rng rng(seed);
             const auto params =
                 LocalExcitationParams::from_flat(gamma, sys.n_u, sys.basis);
             return sys.step(x, params, rng, n_sub);
           },
           py::arg("x"), py::arg("gamma"), py::arg("seed"), py::arg("n_sub") = 1);

  m.def("builtin_system", &builtin_system, py::arg("name"));
  m.def("builtin_system_names", &builtin_system_names);

  py::class_<TrainingSetMeta>(m, "TrainingSetMeta")
      .def_readonly("d", &TrainingSetMeta::d)
      .def_readonly("n_u", &TrainingSetMeta::n_u)
      .def_readonly("n_gamma", &TrainingSetMeta::n_gamma)
      .def_readonly("delta", &TrainingSetMeta::delta)
      .def_readonly("M", &TrainingSetMeta::M)
      .def_readonly("system_name", &TrainingSetMeta::system_name)
      .def_readonly("seed", &TrainingSetMeta::seed)
      .def_readonly("integer_state", &TrainingSetMeta::integer_state);

  py::class_<TrainingSet>(m, "TrainingSet")
      .def_readonly("meta", &TrainingSet::meta)
      .def("__len__", [](const TrainingSet& s) { return s.records.size(); })
      .def("gammas",
           [](const TrainingSet& s) {
             Eigen::MatrixXd g(s.records.size(), s.meta.n_gamma);
             for (std::size_t i = 0; i < s.records.size(); ++i)
               g.row(static_cast<Eigen::Index>(i)) = s.records[i].gamma;
             return g;
           })
      .def("x0",
           [](const TrainingSet& s) {
             Eigen::MatrixXd x(s.records.size(), s.meta.d);
             for (std::size_t i = 0; i < s.records.size(); ++i)
               x.row(static_cast<Eigen::Index>(i)) = s.records[i].x0;
             return x;
           })
      .def("x1",
           [](const TrainingSet& s) {
             Eigen::MatrixXd x(s.records.size(), s.meta.d);
             for (std::size_t i = 0; i < s.records.size(); ++i)
               x.row(static_cast<Eigen::Index>(i)) = s.records[i].x1;
             return x;
           })
      .def("save",
           [](const TrainingSet& s, const std::string& path, bool json_sidecar) {
             save(s, path, json_sidecar);
           },
           py::arg("path"), py::arg("json_sidecar") = false);

  m.def("generate_training_set",
        [](const BuiltinSystem& sys, std::uint64_t M, std::uint64_t seed, int threads) {
          return generate_training_set(sys, M, seed, threads);
        },
        py::arg("system"), py::arg("M"), py::arg("seed"), py::arg("threads") = 1);
  m.def("load_training_set", &load, py::arg("path"));

  py::class_<FlowConfig>(m, "FlowConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &FlowConfig::n_layers)
      .def_readwrite("hidden", &FlowConfig::hidden)
      .def_readwrite("log_scale_clamp", &FlowConfig::log_scale_clamp);

  py::class_<FlowModel>(m, "FlowModel")
      .def_readonly("d", &FlowModel::d)
      .def_readonly("n_gamma", &FlowModel::n_gamma)
      .def_property_readonly("delta", [](const FlowModel& f) { return f.meta.delta; })
      .def_property_readonly("system_name",
                             [](const FlowModel& f) { return f.meta.system_name; })
      .def("n_params", &FlowModel::n_params)
      .def("get_weights", &FlowModel::get_weights)
      .def("set_weights", &FlowModel::set_weights)
      .def("log_prob",
           [](const FlowModel& f, const Eigen::VectorXd& x1, const Eigen::VectorXd& x0,
              const Eigen::VectorXd& gamma) { return log_prob(f, x1, x0, gamma); },
           py::arg("x1"), py::arg("x0"), py::arg("gamma"))
      .def("log_prob_batch",
           [](const FlowModel& f, const Eigen::MatrixXd& ctx, const Eigen::MatrixXd& x1) {
             return log_prob_batch(f, ctx, x1);
           },
           py::arg("ctx"), py::arg("x1"))
      .def("sample",
           [](const FlowModel& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& gamma,
              int n, std::uint64_t seed) {
             Rng rng(seed);
             return sample(f, x0, gamma, n, rng);
           },
           py::arg("x0"), py::arg("gamma"), py::arg("n"), py::arg("seed"))
      .def("forward",
           [](const FlowModel& f, const Eigen::VectorXd& z, const Eigen::VectorXd& x0,
              const Eigen::VectorXd& gamma) { return forward_T(f, z, x0, gamma); },
           py::arg("z"), py::arg("x0"), py::arg("gamma"))
      .def("inverse",
           [](const FlowModel& f, const Eigen::VectorXd& x1, const Eigen::VectorXd& x0,
              const Eigen::VectorXd& gamma) { return inverse_S(f, x1, x0, gamma); },
           py::arg("x1"), py::arg("x0"), py::arg("gamma"))
      .def("save", &save_flow, py::arg("path"));

  m.def("build_flow", &build_flow, py::arg("training_set"), py::arg("config"),
        py::arg("seed"));
  m.def("load_flow", &load_flow, py::arg("path"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("base_rate", &TrainConfig::base_rate)
      .def_readwrite("max_rate", &TrainConfig::max_rate)
      .def_readwrite("gamma", &TrainConfig::gamma)
      .def_readwrite("step_size_iters", &TrainConfig::step_size_iters)
      .def_readwrite("cycle_epochs", &TrainConfig::cycle_epochs)
      .def_readwrite("cycle_decay", &TrainConfig::cycle_decay)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("dequantize", &TrainConfig::dequantize)
      .def_readwrite("threads", &TrainConfig::threads)
      .def_readwrite("checkpoint_interval", &TrainConfig::checkpoint_interval)
      .def_readwrite("checkpoint_path", &TrainConfig::checkpoint_path);

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("mean_nll", &EpochStats::mean_nll)
      .def_readonly("lr", &EpochStats::lr)
      .def_readonly("seconds", &EpochStats::seconds);

  py::class_<TrainHistory>(m, "TrainHistory")
      .def_readonly("epochs", &TrainHistory::epochs);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_readonly("history", &TrainResult::history);

  m.def("lr_schedule", &lr_schedule, py::arg("config"), py::arg("iteration"),
        py::arg("epoch") = 0);
  m.def("nll_loss",
        [](const FlowModel& flow, const TrainingSet& set) {
          return nll_loss(flow, set.records);
        },
        py::arg("flow"), py::arg("training_set"));
  m.def("train",
        [](const FlowModel& flow, const TrainingSet& set, const TrainConfig& cfg) {
          py::gil_scoped_release release;
          return train(flow, set, cfg);
        },
        py::arg("flow"), py::arg("training_set"), py::arg("config"));
  m.def("resume_training",
        [](const std::string& path, const TrainingSet& set, const TrainConfig& cfg) {
          py::gil_scoped_release release;
          return resume(path, set, cfg);
        },
        py::arg("checkpoint_path"), py::arg("training_set"), py::arg("config"));

  py::class_<TrajectoryEnsemble>(m, "TrajectoryEnsemble")
      .def_readonly("n_ens", &TrajectoryEnsemble::n_ens)
      .def_readonly("n_steps", &TrajectoryEnsemble::n_steps)
      .def_readonly("d", &TrajectoryEnsemble::d)
      .def_readonly("delta", &TrajectoryEnsemble::delta)
      .def_readonly("states", &TrajectoryEnsemble::states)
      .def("slice", &TrajectoryEnsemble::slice, py::arg("step"))
      .def("save", &save_ensemble, py::arg("path"));
  m.def("load_ensemble", &load_ensemble, py::arg("path"));

  py::class_<MomentCurvesNd>(m, "MomentCurves")
      .def_readonly("t", &MomentCurvesNd::t)
      .def_readonly("mean", &MomentCurvesNd::mean)
      .def_readonly("stddev", &MomentCurvesNd::stddev);

  m.def("rollout",
        [](const FlowModel& flow, const Eigen::VectorXd& x0, const py::object& u,
           int n_steps, std::uint64_t seed, double guard_factor) {
          const auto sig = signal_from_python(u, flow.meta.n_u);
          const StepModel model = as_step_model(flow, guard_factor);
          Rng rng(seed);
          const RolloutResult res = rollout(model, x0, sig, n_steps, rng);
          return py::make_tuple(res.states, res.guard_violations);
        },
        py::arg("flow"), py::arg("x0"), py::arg("u"), py::arg("n_steps"), py::arg("seed"),
        py::arg("guard_factor") = 1.5);
  m.def("ensemble",
        [](const FlowModel& flow, const Eigen::VectorXd& x0, const py::object& u,
           int n_steps, int n_ens, std::uint64_t seed, int threads, double guard_factor) {
          const auto sig = signal_from_python(u, flow.meta.n_u);
          const StepModel model = as_step_model(flow, guard_factor);
          return ensemble(model, x0, sig, n_steps, n_ens, seed, threads, nullptr);
        },
        py::arg("flow"), py::arg("x0"), py::arg("u"), py::arg("n_steps"), py::arg("n_ens"),
        py::arg("seed"), py::arg("threads") = 1, py::arg("guard_factor") = 1.5);
  m.def("truth_ensemble",
        [](const BuiltinSystem& sys, const Eigen::VectorXd& x0, const py::object& u,
           int n_steps, int n_ens, std::uint64_t seed, int n_sub, int threads) {
          const auto sig = signal_from_python(u, sys.n_u);
          return truth_ensemble(sys, x0, sig, n_steps, n_ens, seed, n_sub, threads);
        },
        py::arg("system"), py::arg("x0"), py::arg("u"), py::arg("n_steps"),
        py::arg("n_ens"), py::arg("seed"), py::arg("n_sub") = 1, py::arg("threads") = 1);
  m.def("moments", &moments, py::arg("ensemble"));
  m.def("snapshot_distance", &snapshot_distance, py::arg("a"), py::arg("b"), py::arg("t"));
}
