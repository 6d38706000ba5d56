// Copyright 2026 The maskdesk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "maskdesk/config.h"
#include "maskdesk/evaluator.h"
#include "maskdesk/losses.h"
#include "maskdesk/matcher.h"
#include "maskdesk/model.h"
#include "maskdesk/position_embedding.h"
#include "maskdesk/records.h"
#include "maskdesk/verify.h"

namespace py = pybind11;
using namespace maskdesk;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Shape shape_of(const py::array& a) {
  return Shape(a.shape(), a.shape() + a.ndim());
}

Tensor64 to_tensor(const F64Array& a) {
  return Tensor64(shape_of(a), std::vector<double>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_numpy(const BasicTensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::span<const std::uint8_t> bits(const U8Array& a) { return {a.data(), std::size_t(a.size())}; }

// Runs a scalar loss in double and returns (value, d value / d logits).
template <typename Fn>
py::tuple value_and_grad(const F64Array& logits, Fn fn) {
  auto z = to_tensor(logits);
  z.set_requires_grad(true);
  auto loss = fn(z);
  backward(loss);
  py::array_t<double> grad(std::vector<py::ssize_t>(logits.shape(), logits.shape() + logits.ndim()));
  std::copy(z.grad().begin(), z.grad().end(), grad.mutable_data());
  return py::make_tuple(loss.item(), grad);
}

CostMatrix cost_matrix(const F64Array& costs, std::int64_t size) {
  if (costs.ndim() != 2) throw ShapeError("costs must be two-dimensional");
  const auto rows = costs.shape(0), cols = costs.shape(1);
  return square_pad({costs.data(), std::size_t(costs.size())}, rows, cols,
                    size ? size : std::max<std::int64_t>(rows, cols));
}

RunConfig config_from(const std::map<std::string, std::string>& values) {
  RunConfig cfg;
  for (const auto& [k, v] : values) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> config_dict(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& key : config_keys()) out[key] = get_config_value(cfg, key);
  return out;
}

py::object feature_to_py(const records::FeatureValue& v) {
  if (const auto* b = std::get_if<records::Bytes>(&v)) return py::bytes(*b);
  if (const auto* i = std::get_if<records::Int64List>(&v)) return py::cast(*i);
  return py::cast(std::get<records::FloatList>(v));
}

records::FeatureValue feature_from_py(const py::handle& h) {
  if (py::isinstance<py::bytes>(h)) return records::Bytes(h.cast<std::string>());
  auto items = h.cast<py::list>();
  if (items.empty()) return records::Int64List{};
  if (py::isinstance<py::float_>(items[0])) return h.cast<records::FloatList>();
  return h.cast<records::Int64List>();
}

records::RecordEntry entry_from_py(const py::dict& d) {
  records::RecordEntry e;
  for (const auto& [k, v] : d) e[k.cast<std::string>()] = feature_from_py(v);
  return e;
}

py::dict entry_to_py(const records::RecordEntry& e) {
  py::dict d;
  for (const auto& [k, v] : e) d[py::str(k)] = feature_to_py(v);
  return d;
}

SegmentSet segments_from_labels(const py::array_t<std::int64_t, py::array::c_style |
                                                                    py::array::forcecast>& ids,
                                const std::map<std::int64_t, std::int64_t>& labels) {
  if (ids.ndim() != 2) throw ShapeError("segment map must be two-dimensional");
  SegmentSet s;
  s.height = ids.shape(0);
  s.width = ids.shape(1);
  for (const auto& [id, label] : labels) {
    BinaryMask m(s.height, s.width);
    for (py::ssize_t i = 0; i < ids.size(); ++i) m.values[i] = ids.data()[i] == id;
    if (m.count_nonzero()) s.segments.push_back({m, label});
  }
  return s;
}

}  // namespace

PYBIND11_MODULE(_maskdesk, m) {
  m.doc() = "maskdesk core bindings";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<ContractError>(m, "ContractError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<RecordError>(m, "RecordError", error.ptr());
  py::register_exception<UnknownClassError>(m, "UnknownClassError", error.ptr());
  py::register_exception<TargetOverflowError>(m, "TargetOverflowError", error.ptr());
  py::register_exception<InputError>(m, "InputError", error.ptr());

  // Config
  m.def("config_keys", &config_keys);
  m.def("default_config", [] { return config_dict(RunConfig{}); });
  m.def(
      "load_config",
      [](const std::string& path, const std::map<std::string, std::string>& overrides) {
        std::vector<std::pair<std::string, std::string>> o(overrides.begin(), overrides.end());
        return config_dict(load_config(path, o));
      },
      py::arg("path"), py::arg("overrides") = std::map<std::string, std::string>{});

  // Matcher
  m.def(
      "hungarian",
      [](const F64Array& costs, std::int64_t size) {
        const auto a = hungarian(cost_matrix(costs, size));
        return py::make_tuple(a.query_for_gt, a.total_real_cost);
      },
      py::arg("costs"), py::arg("size") = 0,
      "Matches the rows of a [N, N_q] cost matrix after square padding.\n"
      "Returns (query index per row, summed real cost).");
  m.def(
      "brute_force_match",
      [](const F64Array& costs) {
        if (costs.ndim() != 2) throw ShapeError("costs must be two-dimensional");
        const auto a = brute_force_match({costs.data(), std::size_t(costs.size())},
                                         costs.shape(0), costs.shape(1));
        return py::make_tuple(a.query_for_gt, a.total_real_cost);
      },
      py::arg("costs"));
  m.def(
      "square_pad",
      [](const F64Array& costs, std::int64_t size) {
        const auto c = cost_matrix(costs, size);
        py::array_t<double> out({c.rows, c.cols});
        std::copy(c.values.begin(), c.values.end(), out.mutable_data());
        return out;
      },
      py::arg("costs"), py::arg("size") = 0);

  // Losses, evaluated in double. Each returns (value, gradient wrt logits).
  m.def(
      "dice_loss",
      [](const F64Array& logits, const U8Array& gt, const U8Array& valid, double eps) {
        return value_and_grad(logits,
                              [&](const Tensor64& z) { return dice_loss(z, bits(gt), bits(valid), eps); });
      },
      py::arg("logits"), py::arg("gt"), py::arg("valid"), py::arg("eps") = 1.0);
  m.def(
      "focal_loss",
      [](const F64Array& logits, const U8Array& gt, const U8Array& valid, double alpha,
         double gamma) {
        return value_and_grad(logits, [&](const Tensor64& z) {
          return focal_loss(z, bits(gt), bits(valid), alpha, gamma);
        });
      },
      py::arg("logits"), py::arg("gt"), py::arg("valid"), py::arg("alpha") = 0.25,
      py::arg("gamma") = 2.0);
  m.def(
      "classification_loss",
      [](const F64Array& logits, const std::vector<std::int64_t>& labels, double no_object) {
        return value_and_grad(logits, [&](const Tensor64& z) {
          return classification_loss(z, std::span<const std::int64_t>(labels), no_object);
        });
      },
      py::arg("logits"), py::arg("labels"), py::arg("no_object_weight") = 1e-4);

  // Model
  m.def(
      "sine_position_embedding",
      [](std::int64_t h, std::int64_t w, std::int64_t c) {
        return to_numpy(sine_position_embedding<double>(h, w, c));
      },
      py::arg("height"), py::arg("width"), py::arg("channels"));

  py::class_<MaskFormer>(m, "Model")
      .def(py::init([](const std::map<std::string, std::string>& overrides) {
             return MaskFormer(config_from(overrides).model_config());
           }),
           py::arg("config") = std::map<std::string, std::string>{},
           "Builds the model from config keys such as {'model.n_queries': '16'}.")
      .def("parameter_count", &MaskFormer::parameter_count)
      .def("parameter_names",
           [](const MaskFormer& model) {
             std::vector<std::string> names;
             for (const auto& [name, _] : model.parameters()) names.push_back(name);
             return names;
           })
      .def(
          "forward",
          [](const MaskFormer& model, const F32Array& image) {
            NoGradGuard no_grad;
            Tensor x(shape_of(image),
                     std::vector<float>(image.data(), image.data() + image.size()));
            auto out = model.forward(x);
            return py::make_tuple(to_numpy(out.mask_logits), to_numpy(out.class_logits));
          },
          py::arg("image"), "[B, H, W, 3] -> (mask logits [B, Q, H/4, W/4], class logits)")
      .def("layer_shapes", [](const MaskFormer& model, std::int64_t batch) {
        NoGradGuard no_grad;
        const auto S = model.config().input_size;
        Tensor x({batch, S, S, 3}, std::vector<float>(std::size_t(batch * S * S * 3), 0.0f));
        auto features = model.backbone(x);
        auto pix = model.pixel_decoder(features);
        auto dec = model.transformer_decoder(pix.encoded);
        auto out = model.heads(dec, pix.mask_features);
        return std::map<std::string, Shape>{{"backbone", features.shape()},
                                            {"encoded", pix.encoded.shape()},
                                            {"mask_features", pix.mask_features.shape()},
                                            {"decoder", dec.shape()},
                                            {"mask_logits", out.mask_logits.shape()},
                                            {"class_logits", out.class_logits.shape()}};
      }, py::arg("batch") = 1);

  // Records
  m.def("encode_payload", [](const py::dict& entry) {
    return py::bytes(records::encode_payload(entry_from_py(entry)));
  });
  m.def("decode_payload", [](const py::bytes& payload) {
    return entry_to_py(records::decode_payload(std::string(payload)));
  });
  m.def(
      "write_shards",
      [](const py::list& entries, std::size_t shard_count, const std::filesystem::path& dir) {
        std::vector<records::RecordEntry> es;
        for (const auto& e : entries) es.push_back(entry_from_py(e.cast<py::dict>()));
        const auto set = records::write_shards(es, shard_count, dir);
        std::vector<std::uint64_t> sizes;
        for (const auto& s : set.shards) sizes.push_back(s.bytes);
        return sizes;
      },
      py::arg("entries"), py::arg("shard_count"), py::arg("dir"),
      "Writes shards plus a manifest and returns the byte size of every shard.");
  m.def(
      "read_shards",
      [](const std::filesystem::path& dir) {
        py::list out;
        for (const auto& e : records::read_shards(records::load_manifest(dir)))
          out.append(entry_to_py(e));
        return out;
      },
      py::arg("dir"));

  // Evaluator
  m.def(
      "panoptic_quality",
      [](const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& pred,
         const std::map<std::int64_t, std::int64_t>& pred_labels,
         const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& gt,
         const std::map<std::int64_t, std::int64_t>& gt_labels) {
        const auto r = panoptic_quality(segments_from_labels(pred, pred_labels),
                                        segments_from_labels(gt, gt_labels));
        return py::dict(py::arg("pq") = r.pq(), py::arg("sq") = r.sq(), py::arg("rq") = r.rq(),
                        py::arg("tp") = r.overall.tp, py::arg("fp") = r.overall.fp,
                        py::arg("fn") = r.overall.fn);
      },
      py::arg("pred"), py::arg("pred_labels"), py::arg("gt"), py::arg("gt_labels"),
      "Segment maps hold an id per pixel; the label dicts map id -> class.");

  // Verify
  m.def(
      "verify",
      [](const std::map<std::string, std::string>& overrides) {
        const auto report = verify(config_from(overrides));
        py::list checks;
        for (const auto& c : report.checks)
          checks.append(py::dict(py::arg("suite") = c.suite, py::arg("name") = c.name,
                                 py::arg("passed") = c.passed, py::arg("error") = c.error,
                                 py::arg("tolerance") = c.tolerance,
                                 py::arg("detail") = c.detail));
        return checks;
      },
      py::arg("config") = std::map<std::string, std::string>{});
}
