#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "bikt/config.hpp"
#include "bikt/pipeline.hpp"

namespace py = pybind11;
using namespace bikt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Grid to_grid(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    return Grid(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Grid& g) {
    Array out({g.height(), g.width()});
    std::copy(g.values().begin(), g.values().end(), out.mutable_data());
    return out;
}

Array image_array(const ImageGrid& img) {
    if (img.channels == 1) {
        Array out({img.height, img.width});
        std::copy(img.values.begin(), img.values.end(), out.mutable_data());
        return out;
    }
    Array out({img.height, img.width, img.channels});
    std::copy(img.values.begin(), img.values.end(), out.mutable_data());
    return out;
}

// (N, 2) array of x, y.
PointSet to_points(const Array& xy, const std::optional<Array>& scores = std::nullopt) {
    if (xy.size() == 0) return {};
    if (xy.ndim() != 2 || xy.shape(1) != 2) throw std::invalid_argument("points must have shape (N, 2)");
    PointSet p;
    auto r = xy.unchecked<2>();
    for (py::ssize_t i = 0; i < r.shape(0); ++i) p.points.push_back({r(i, 0), r(i, 1)});
    if (scores) p.scores.assign(scores->data(), scores->data() + scores->size());
    p.validate();
    return p;
}

Array points_array(const PointSet& p) {
    Array out({static_cast<py::ssize_t>(p.size()), py::ssize_t{2}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < p.size(); ++i) {
        w(i, 0) = p.points[i].x;
        w(i, 1) = p.points[i].y;
    }
    return out;
}

// (N, 4) array of x, y, scale, score.
std::vector<Detection> to_detections(const Array& a) {
    if (a.size() == 0) return {};
    if (a.ndim() != 2 || a.shape(1) != 4) throw std::invalid_argument("detections must have shape (N, 4)");
    std::vector<Detection> out;
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < r.shape(0); ++i) out.push_back({{r(i, 0), r(i, 1)}, r(i, 2), r(i, 3)});
    return out;
}

Array detections_array(const std::vector<Detection>& d) {
    Array out({static_cast<py::ssize_t>(d.size()), py::ssize_t{4}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < d.size(); ++i) {
        w(i, 0) = d[i].center.x;
        w(i, 1) = d[i].center.y;
        w(i, 2) = d[i].scale;
        w(i, 3) = d[i].score;
    }
    return out;
}

KernelSpec kernel_spec(const std::string& mode, double sigma, double beta, int neighbors) {
    KernelSpec k;
    if (mode == "fixed")
        k.mode = KernelMode::Fixed;
    else if (mode == "adaptive")
        k.mode = KernelMode::Adaptive;
    else
        throw std::invalid_argument("kernel mode must be 'fixed' or 'adaptive'");
    k.fixed_sigma = sigma;
    k.beta = beta;
    k.neighbor_count = neighbors;
    k.validate();
    return k;
}

py::object loss_result(double loss, const Grid& grad, bool with_grad) {
    if (!with_grad) return py::float_(loss);
    return py::make_tuple(loss, to_array(grad));
}

py::dict to_dict(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_bikt, m) {
    m.doc() = "Regression/detection knowledge transfer for unsupervised crowd counting";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    m.def(
        "generate_scene",
        [](int height, int width, double intensity, const std::string& process, double cluster_count,
           double cluster_std, double noise_std, std::uint64_t seed) {
            SceneGenSpec s;
            s.height = height;
            s.width = width;
            s.intensity = intensity;
            s.process = point_process_from_string(process);
            s.cluster_count = cluster_count;
            s.cluster_std = cluster_std;
            s.noise_std = noise_std;
            s.seed = seed;
            const auto scene = generate_synthetic_scene(s);
            return py::make_tuple(image_array(scene.image), points_array(scene.truth));
        },
        "Synthetic grayscale scene and its head points.", py::arg("height") = 96, py::arg("width") = 96,
        py::arg("intensity") = 10.0, py::arg("process") = "uniform-poisson", py::arg("cluster_count") = 3.0,
        py::arg("cluster_std") = 4.0, py::arg("noise_std") = 0.02, py::arg("seed") = 0);

    m.def(
        "det_to_reg",
        [](const Array& points, int height, int width, const std::string& mode, double sigma, double beta,
           int neighbors) {
            return to_array(det_to_reg(to_points(points), height, width, kernel_spec(mode, sigma, beta, neighbors)));
        },
        py::arg("points"), py::arg("height"), py::arg("width"), py::arg("mode") = "fixed", py::arg("sigma") = 2.0,
        py::arg("beta") = 0.3, py::arg("neighbors") = 3);
    m.def("density_count", [](const Array& map) { return density_count(to_grid(map)); });

    m.def("sigmoid", [](const Array& x) { return to_array(sigmoid(to_grid(x))); });
    m.def(
        "mse_loss",
        [](const Array& pred, const Array& target, bool grad) {
            Grid g;
            const double l = mse_loss(to_grid(pred), to_grid(target), grad ? &g : nullptr);
            return loss_result(l, g, grad);
        },
        py::arg("pred"), py::arg("target"), py::arg("grad") = false);
    m.def(
        "focal_mse_loss",
        [](const Array& pred, const Array& target, double gamma, double alpha_pos, double alpha_neg, bool grad) {
            const FocalSpec spec{gamma, alpha_pos, alpha_neg};
            spec.validate();
            Grid g;
            const double l = focal_mse_loss(to_grid(pred), to_grid(target), spec, grad ? &g : nullptr);
            return loss_result(l, g, grad);
        },
        py::arg("pred"), py::arg("target"), py::arg("gamma") = 2.0, py::arg("alpha_pos") = 1.0,
        py::arg("alpha_neg") = 0.1, py::arg("grad") = false);
    m.def(
        "dms_ssim_loss",
        [](const Array& pred, const Array& target, bool grad) {
            Grid g;
            const double l = dms_ssim_loss(to_grid(pred), to_grid(target), grad ? &g : nullptr);
            return loss_result(l, g, grad);
        },
        py::arg("pred"), py::arg("target"), py::arg("grad") = false);
    m.def(
        "phi_total_loss",
        [](const Array& raw, const Array& target, bool grad) {
            Grid g;
            const double l = phi_total_loss(to_grid(raw), to_grid(target), FocalSpec{}, grad ? &g : nullptr);
            return loss_result(l, g, grad);
        },
        py::arg("raw"), py::arg("target"), py::arg("grad") = false);

    m.def(
        "points_to_localization",
        [](const Array& points, int height, int width) {
            return to_array(points_to_localization(to_points(points), height, width));
        },
        py::arg("points"), py::arg("height"), py::arg("width"));
    m.def(
        "binarize_and_merge",
        [](const Array& response, double threshold, int window) {
            const auto p = binarize_and_merge(to_grid(response), threshold, window);
            return py::make_tuple(points_array(p), py::array(py::cast(p.scores)));
        },
        "Points and scores.", py::arg("response"), py::arg("threshold") = 0.2, py::arg("window") = 10);

    m.def(
        "build_weight_map",
        [](const Array& detections, int height, int width, int k) {
            return to_array(build_weight_map(to_detections(detections), height, width, k));
        },
        py::arg("detections"), py::arg("height"), py::arg("width"), py::arg("k") = 17);
    m.def(
        "fuse_density",
        [](const Array& reg, const Array& det, const Array& weights) {
            return to_array(fuse_density(to_grid(reg), to_grid(det), to_grid(weights)));
        },
        py::arg("reg"), py::arg("det"), py::arg("weights"));
    m.def(
        "nms", [](const Array& detections, double radius) { return detections_array(nms(to_detections(detections), radius)); },
        py::arg("detections"), py::arg("radius"));

    m.def(
        "count_metrics",
        [](const std::vector<double>& pred, const std::vector<double>& truth) {
            const auto c = count_metrics(pred, truth);
            py::dict d;
            d["mae"] = c.mae;
            d["mse"] = c.mse;
            d["n_images"] = c.n_images;
            return d;
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "match_points",
        [](const Array& pred, const Array& scores, const Array& truth, double c) {
            return match_points(to_points(pred, scores), to_points(truth), c);
        },
        py::arg("pred"), py::arg("scores"), py::arg("truth"), py::arg("c"));
    m.def(
        "localization_map",
        [](const std::vector<std::pair<Array, Array>>& preds, const std::vector<Array>& truths, int c_min, int c_max) {
            std::vector<PointSet> p, t;
            for (const auto& [xy, s] : preds) p.push_back(to_points(xy, s));
            for (const auto& xy : truths) t.push_back(to_points(xy));
            const auto curve = localization_map(p, t, c_min, c_max);
            py::dict d;
            d["map"] = curve.map;
            d["ap"] = curve.ap;
            d["undefined"] = curve.undefined;
            return d;
        },
        "preds is a list of (points, scores) pairs.", py::arg("preds"), py::arg("truths"), py::arg("c_min") = 1,
        py::arg("c_max") = 100);

    m.def("command_names", &command_names);
    m.def(
        "load_config",
        [](const std::optional<std::filesystem::path>& path) { return to_dict(config_to_json(parse_config(path))); },
        py::arg("path") = py::none());
    m.def(
        "run_command",
        [](const std::string& name, const std::optional<std::filesystem::path>& config,
           const std::optional<std::string>& out, const std::optional<std::uint64_t>& seed) {
            ConfigOverrides o;
            o.out = out;
            o.seed = seed;
            const auto c = parse_config(config, o);
            std::ostringstream log, err;
            int status = 0;
            {
                py::gil_scoped_release release;
                status = run_command(name, c, log, err);
            }
            return py::make_tuple(status, log.str(), err.str());
        },
        "Runs one pipeline stage; returns (status, log, error_json).", py::arg("name"), py::arg("config") = py::none(),
        py::arg("out") = py::none(), py::arg("seed") = py::none());
}
