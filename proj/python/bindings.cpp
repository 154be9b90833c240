#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lpcalib/errors.hpp"
#include "lpcalib/evaluation.hpp"
#include "lpcalib/geometry.hpp"
#include "lpcalib/occupancy_refinement.hpp"
#include "lpcalib/pipeline.hpp"

namespace py = pybind11;
using namespace lpcalib;

namespace {

using RowPoints = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

RigidTransform transform_from(const Eigen::Matrix4d& m) {
    if (orthonormality_error(m.topLeftCorner<3, 3>()) > 1e-6) throw ConfigError("rotation block is not a rotation");
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

std::vector<Eigen::Vector3d> points_from(const Eigen::Ref<const RowPoints>& a) {
    std::vector<Eigen::Vector3d> out(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) out[static_cast<std::size_t>(i)] = a.row(i).transpose();
    return out;
}

}  // namespace

PYBIND11_MODULE(_lpcalib, m) {
    m.doc() = "Native core of lpcalib";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
    static py::exception<DataError> data(m, "DataError", base.ptr());
    static py::exception<StageFailure> stage(m, "StageFailure", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            PyErr_SetString(config.ptr(), e.what());
        } catch (const DataError& e) {
            PyErr_SetString(data.ptr(), e.what());
        } catch (const StageFailure& e) {
            PyErr_SetString(stage.ptr(), e.what());
        } catch (const Error& e) {
            PyErr_SetString(base.ptr(), e.what());
        }
    });

    m.def("euler_zyx_to_rotation",
          [](double roll, double pitch, double yaw) { return euler_zyx_to_rotation({roll, pitch, yaw}); },
          py::arg("roll"), py::arg("pitch"), py::arg("yaw"), "R = Rz(yaw) Ry(pitch) Rx(roll), radians.");
    m.def("rotation_to_euler_zyx",
          [](const Eigen::Matrix3d& r) {
              const auto a = rotation_to_euler_zyx(r).angles;
              return py::make_tuple(a.roll, a.pitch, a.yaw);
          },
          py::arg("rotation"));
    m.def("so3_exp", &so3_exp, py::arg("w"));
    m.def("so3_log", &so3_log, py::arg("rotation"));
    m.def("se3_exp",
          [](const Eigen::Matrix<double, 6, 1>& xi) { return exp(TangentVector::FromStacked(xi)).matrix(); },
          py::arg("xi"), "xi = (rotation, translation).");
    m.def("se3_log", [](const Eigen::Matrix4d& t) { return log(transform_from(t)).stacked(); }, py::arg("transform"));

    m.def("count_occupied",
          [](const Eigen::Ref<const RowPoints>& points, double leaf_size, const Eigen::Vector3d& origin) {
              if (!(leaf_size > 0.0)) throw ConfigError("leaf_size must be positive");
              return count_occupied(points_from(points), leaf_size, origin);
          },
          py::arg("points"), py::arg("leaf_size"), py::arg("origin") = Eigen::Vector3d::Zero());

    m.def("extrinsic_error",
          [](const Eigen::Matrix4d& reference, const Eigen::Matrix4d& estimate) {
              const auto e = extrinsic_error(transform_from(reference), transform_from(estimate));
              py::dict d;
              d["tx"] = e.tx;
              d["ty"] = e.ty;
              d["tz"] = e.tz;
              d["roll_deg"] = e.roll;
              d["pitch_deg"] = e.pitch;
              d["yaw_deg"] = e.yaw;
              d["angle_deg"] = e.angle_deg();
              return d;
          },
          py::arg("reference"), py::arg("estimate"));
    m.def("default_extrinsic", [] { return SimSpec::default_extrinsic().matrix(); });

    m.def("config_json",
          [](const std::string& text, const std::filesystem::path& base_dir) {
              return to_json(pipeline_config_from_json(nlohmann::json::parse(text), base_dir)).dump();
          },
          py::arg("text"), py::arg("base_dir") = std::filesystem::path(),
          "Normalized config with every default filled in, as JSON text.");

    m.def("simulate",
          [](const std::string& config_text, const std::filesystem::path& out_dir, int threads) {
              PipelineConfig c = pipeline_config_from_json(nlohmann::json::parse(config_text));
              c.threads = threads;
              py::gil_scoped_release release;
              cmd_simulate(c, out_dir);
          },
          py::arg("config_text"), py::arg("out_dir"), py::arg("threads") = 1);

    m.def("calibrate",
          [](const std::filesystem::path& config_path, const std::string& stages,
             const std::filesystem::path& out_dir, int threads, bool resume) {
              PipelineConfig c = load_pipeline_config(config_path);
              if (!stages.empty()) c.stages = parse_stages(stages);
              if (!out_dir.empty()) c.paths.output = out_dir;
              if (threads > 0) c.threads = threads;
              py::gil_scoped_release release;
              return to_json(cmd_calibrate(c, {resume}).result).dump();
          },
          py::arg("config_path"), py::arg("stages") = "", py::arg("out_dir") = std::filesystem::path(),
          py::arg("threads") = 0, py::arg("resume") = false, "Final result as JSON text.");

    m.def("evaluate",
          [](const std::string& results_glob, const std::filesystem::path& reference) {
              const RigidTransform ref = extrinsic_from_any_json(read_json(reference));
              return to_json(cmd_evaluate(expand_glob(results_glob), ref)).dump();
          },
          py::arg("results_glob"), py::arg("reference"));
}
