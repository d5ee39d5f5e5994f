#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "metassl/augment.hpp"
#include "metassl/config.hpp"
#include "metassl/data.hpp"
#include "metassl/errors.hpp"
#include "metassl/meta.hpp"
#include "metassl/model.hpp"
#include "metassl/rng.hpp"
#include "metassl/trainer.hpp"
#include "metassl/verify.hpp"

namespace py = pybind11;
using namespace metassl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  return Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_numpy(std::span<const double> v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Batch labeled_batch(const Array& x, const Array& y) {
  Batch b{{}, to_tensor(x), to_tensor(y)};
  b.indices.resize(b.x.rows());
  for (std::size_t i = 0; i < b.indices.size(); ++i) b.indices[i] = i;
  return b;
}

Split parse_split(const std::string& s) {
  if (s == "labeled") return Split::labeled;
  if (s == "unlabeled") return Split::unlabeled;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

// Python values become the text form used by config files.
std::string setting_text(const py::handle& v) {
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
  if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
    std::string out;
    for (const py::handle item : v) {
      if (!out.empty()) out += ',';
      out += py::str(item).cast<std::string>();
    }
    return out.empty() ? "none" : out;
  }
  if (py::isinstance<py::float_>(v)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v.cast<double>());
    return buf;
  }
  return py::str(v).cast<std::string>();
}

TrainConfig config_from(const py::dict& settings) {
  TrainConfig cfg;
  for (const auto& [k, v] : settings) apply_setting(cfg, py::str(k).cast<std::string>(), setting_text(v));
  return resolve(cfg);
}

py::dict records_dict(const std::vector<StepRecord>& records) {
  std::vector<double> G_before, G_after, cons, pg, thg, lg, alpha, beta;
  std::vector<bool> descent_ok;
  for (const StepRecord& r : records) {
    G_before.push_back(r.G_before);
    G_after.push_back(r.G_after);
    cons.push_back(r.consistency_loss);
    pg.push_back(r.pseudo_grad_norm);
    thg.push_back(r.param_grad_norm);
    lg.push_back(r.labeled_grad_norm);
    alpha.push_back(r.alpha);
    beta.push_back(r.beta);
    descent_ok.push_back(r.descent_ok);
  }
  py::dict d;
  d["G_before"] = to_numpy(G_before);
  d["G_after"] = to_numpy(G_after);
  d["consistency_loss"] = to_numpy(cons);
  d["pseudo_grad_norm"] = to_numpy(pg);
  d["param_grad_norm"] = to_numpy(thg);
  d["labeled_grad_norm"] = to_numpy(lg);
  d["alpha"] = to_numpy(alpha);
  d["beta"] = to_numpy(beta);
  d["descent_ok"] = descent_ok;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Meta-gradient pseudo-label training";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_RuntimeError);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](const Array& features, const std::vector<int>& labels, const std::vector<std::string>& splits,
                       std::size_t num_classes) {
             std::vector<Split> s;
             for (const std::string& name : splits) s.push_back(parse_split(name));
             return Dataset(to_tensor(features), labels, s, num_classes);
           }),
           py::arg("features"), py::arg("labels"), py::arg("splits"), py::arg("num_classes"),
           "labels[i] < 0 marks an unlabeled example; splits are 'labeled', 'unlabeled' or 'test'.")
      .def_property_readonly("features", [](const Dataset& d) { return to_numpy(d.features()); })
      .def_property_readonly("labels",
                             [](const Dataset& d) {
                               std::vector<int> out(d.size());
                               for (std::size_t i = 0; i < d.size(); ++i) out[i] = d.label(i).value_or(-1);
                               return out;
                             })
      .def_property_readonly("splits",
                             [](const Dataset& d) {
                               std::vector<std::string> out;
                               for (std::size_t i = 0; i < d.size(); ++i) out.emplace_back(to_string(d.split(i)));
                               return out;
                             })
      .def_property_readonly("num_classes", &Dataset::num_classes)
      .def_property_readonly("dim", &Dataset::dim)
      .def("__len__", &Dataset::size)
      .def("indices", [](const Dataset& d, const std::string& s) { return d.indices(parse_split(s)); })
      .def("unlabeled_pool", &Dataset::unlabeled_pool)
      .def("split_labels", &split_labels, py::arg("n_labeled"), py::arg("seed"),
           py::arg("include_labeled_in_unlabeled") = false)
      .def("hold_out_test", &hold_out_test, py::arg("n_test"), py::arg("seed"))
      .def("fingerprint", &fingerprint)
      .def("save_csv", [](const Dataset& d, const std::string& path) { save_csv(d, path); });

  m.def("gen_two_moons", &gen_two_moons, py::arg("n"), py::arg("noise") = 0.1, py::arg("seed") = 0);
  m.def("gen_blobs", &gen_blobs, py::arg("n"), py::arg("k") = 3, py::arg("spread") = 3.0, py::arg("sigma") = 0.5,
        py::arg("seed") = 0);
  m.def("load_csv", [](const std::string& path, std::size_t k) { return load_csv(path, k); }, py::arg("path"),
        py::arg("num_classes") = 0);

  py::class_<MlpClassifier>(m, "MlpClassifier")
      .def(py::init([](std::vector<std::size_t> sizes, const std::string& activation, std::uint64_t seed) {
             return MlpClassifier(std::move(sizes), parse_activation(activation), seed);
           }),
           py::arg("layer_sizes"), py::arg("activation") = "tanh", py::arg("seed") = 0)
      .def_property_readonly("layer_sizes", &MlpClassifier::layer_sizes)
      .def_property_readonly("activation", [](const MlpClassifier& c) { return std::string(to_string(c.activation())); })
      .def_property_readonly("num_params", &MlpClassifier::num_params)
      .def_property(
          "params", [](const MlpClassifier& c) { return to_numpy(c.params().values()); },
          [](MlpClassifier& c, const Array& flat) {
            if (flat.ndim() != 1 || static_cast<std::size_t>(flat.size()) != c.num_params()) {
              throw DimensionError("params: expected a flat array of " + std::to_string(c.num_params()) + " values");
            }
            c.set_params(ParamVector(std::vector<double>(flat.data(), flat.data() + flat.size()), c.params().layout()));
          })
      .def("forward", [](const MlpClassifier& c, const Array& x) { return to_numpy(c.forward(to_tensor(x))); })
      .def("logits", [](const MlpClassifier& c, const Array& x) { return to_numpy(c.logits(to_tensor(x))); })
      .def(
          "loss_and_gradient",
          [](const MlpClassifier& c, const Array& x, const Array& y, const std::string& kind) {
            if (kind != "kl" && kind != "mse") throw ConfigError("loss kind must be 'kl' or 'mse'");
            const LossGradient lg =
                loss_and_gradient(c, to_tensor(x), to_tensor(y), kind == "kl" ? LossKind::kl : LossKind::mse);
            return py::make_tuple(lg.loss, to_numpy(lg.grad.values()));
          },
          py::arg("x"), py::arg("targets"), py::arg("kind") = "kl");

  m.def(
      "init_pseudo_labels",
      [](const MlpClassifier& c, const Array& x_u) { return to_numpy(init_pseudo_labels(c, to_tensor(x_u)).y_init); },
      py::arg("model"), py::arg("x_u"));
  m.def(
      "exact_meta_gradient",
      [](const MlpClassifier& c, const Array& x_u, const Array& x_l, const Array& y_l, double alpha) {
        const Tensor xu = to_tensor(x_u);
        return to_numpy(exact_meta_gradient(c, xu, init_pseudo_labels(c, xu), labeled_batch(x_l, y_l), alpha));
      },
      py::arg("model"), py::arg("x_u"), py::arg("x_l"), py::arg("y_l"), py::arg("alpha"),
      "Closed-form gradient of the post-step labeled loss w.r.t. pseudo-labels initialized at the predictions.");
  m.def(
      "first_order_meta_gradient",
      [](const MlpClassifier& c, const Array& x_u, const Array& x_l, const Array& y_l, double alpha, double eps_rule,
         const std::string& scaling) {
        FirstOrderOptions opt;
        opt.eps_rule = eps_rule;
        if (scaling == "unscaled") opt.scaling = MetaGradScaling::unscaled;
        else if (scaling != "alpha-over-batch") throw ConfigError("scaling must be 'alpha-over-batch' or 'unscaled'");
        const FirstOrderResult r = first_order_meta_gradient(c, to_tensor(x_u), labeled_batch(x_l, y_l), alpha, opt);
        py::dict d;
        d["y_grad"] = to_numpy(r.y_grad);
        d["eps"] = r.eps;
        d["labeled_grad_norm"] = r.labeled_grad_norm;
        d["degenerate"] = r.degenerate;
        return d;
      },
      py::arg("model"), py::arg("x_u"), py::arg("x_l"), py::arg("y_l"), py::arg("alpha"), py::arg("eps_rule") = 0.01,
      py::arg("scaling") = "alpha-over-batch");
  m.def(
      "hypergrad_oracle",
      [](const MlpClassifier& c, const Array& x_u, const Array& y_tilde, const Array& x_l, const Array& y_l,
         double alpha, double h) {
        return to_numpy(hypergrad_oracle(c, to_tensor(x_u), to_tensor(y_tilde), labeled_batch(x_l, y_l), alpha, h));
      },
      py::arg("model"), py::arg("x_u"), py::arg("y_tilde"), py::arg("x_l"), py::arg("y_l"), py::arg("alpha"),
      py::arg("h") = 1e-4);

  m.def(
      "sample_beta",
      [](double gamma, std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        return to_numpy(sample_beta(gamma, n, rng).values());
      },
      py::arg("gamma"), py::arg("n"), py::arg("seed") = 0);
  m.def(
      "mixup",
      [](const Array& x_l, const Array& y_l, const Array& x_u, const Array& y_hat, double gamma, std::uint64_t seed) {
        Rng rng(seed);
        const MixupBatch b = mixup(labeled_batch(x_l, y_l), to_tensor(x_u), to_tensor(y_hat), gamma, rng);
        return py::make_tuple(to_numpy(b.x_in), to_numpy(b.y_in), to_numpy(b.lambdas.values()));
      },
      py::arg("x_l"), py::arg("y_l"), py::arg("x_u"), py::arg("y_hat"), py::arg("gamma") = 1.0, py::arg("seed") = 0);

  m.def(
      "fit",
      [](const Dataset& ds, const py::dict& settings) {
        const TrainConfig cfg = config_from(settings);
        const FitResult r = [&] {
          py::gil_scoped_release release;
          return fit(cfg, ds);
        }();
        py::dict d;
        d["model"] = r.model;
        d["records"] = records_dict(r.records);
        std::vector<std::size_t> steps;
        std::vector<double> lab, test;
        for (const EvalPoint& e : r.evals) {
          steps.push_back(e.step);
          lab.push_back(e.labeled_accuracy);
          test.push_back(e.test_accuracy);
        }
        d["eval_steps"] = steps;
        d["labeled_accuracy"] = to_numpy(lab);
        d["test_accuracy"] = to_numpy(test);
        d["aborted"] = r.aborted;
        d["diagnostic"] = r.diagnostic;
        return d;
      },
      py::arg("dataset"), py::arg("settings") = py::dict(),
      "Train with config-file style settings, e.g. {'algorithm': 'exact', 'steps': 200, 'hidden': [8]}.");

  m.attr("suite_names") = kSuiteNames;
  m.def(
      "run_suite",
      [](const std::string& name, std::uint64_t seed, bool quick) {
        VerifyOptions opt;
        opt.seed = seed;
        if (quick) {
          opt.rate_long = 1500;
          opt.rate_seeds = 3;
          opt.gradcheck_configs = 20;
          opt.hypergrad_trials = 20;
          opt.lemma1_models = 3;
          opt.lemma1_pairs = 20;
        }
        VerifyReport report;
        SuiteResult r;
        {
          py::gil_scoped_release release;
          r = run_suite(name, opt, report);
        }
        std::ostringstream text;
        write_report(text, report);
        return py::make_tuple(r.passed, r.detail, text.str());
      },
      py::arg("name"), py::arg("seed") = 0, py::arg("quick") = false);
  m.def("gradcheck_sweep", &gradcheck_sweep, py::arg("n_configs") = 50, py::arg("seed") = 0);
  m.def(
      "hypergrad_triangle",
      [](std::size_t trials, std::uint64_t seed) {
        const HypergradTriangle t = hypergrad_triangle(trials, seed);
        return py::make_tuple(t.exact_vs_oracle, t.first_order_vs_exact);
      },
      py::arg("trials") = 100, py::arg("seed") = 0);
}
