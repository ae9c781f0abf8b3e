// Python bindings for the cardiac segmentation core. Images cross the
// boundary as float64 numpy arrays in [0,1], masks as uint8 arrays with
// values in {0..num_classes-1}.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardseg/augment.hpp"
#include "cardseg/data.hpp"
#include "cardseg/losses.hpp"
#include "cardseg/network.hpp"
#include "cardseg/phantom.hpp"
#include "cardseg/trainer.hpp"

namespace py = pybind11;
using namespace cardseg;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const DoubleArray& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("image array must be 2-D");
  Image img(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), img.pixels.begin());
  return img;
}

py::array_t<double> from_image(const Image& img) {
  py::array_t<double> out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

LabelMask to_mask(const MaskArray& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("mask array must be 2-D");
  LabelMask m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), m.values.begin());
  return m;
}

py::array_t<uint8_t> from_mask(const LabelMask& m) {
  py::array_t<uint8_t> out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

std::vector<LabelMask> to_masks(const MaskArray& arr) {
  if (arr.ndim() != 3) throw std::invalid_argument("mask batch must be 3-D [N,H,W]");
  const int n = static_cast<int>(arr.shape(0));
  const int h = static_cast<int>(arr.shape(1));
  const int w = static_cast<int>(arr.shape(2));
  std::vector<LabelMask> masks;
  masks.reserve(n);
  for (int i = 0; i < n; ++i) {
    LabelMask m(h, w);
    const uint8_t* src = arr.data() + static_cast<size_t>(i) * h * w;
    std::copy(src, src + static_cast<size_t>(h) * w, m.values.begin());
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<SliceSample> to_samples(const DoubleArray& images,
                                    const std::optional<MaskArray>& masks,
                                    const std::string& tag) {
  if (images.ndim() != 3) throw std::invalid_argument("image batch must be 3-D [N,H,W]");
  const int n = static_cast<int>(images.shape(0));
  const int h = static_cast<int>(images.shape(1));
  const int w = static_cast<int>(images.shape(2));
  std::vector<LabelMask> mask_vec;
  if (masks) {
    mask_vec = to_masks(*masks);
    if (static_cast<int>(mask_vec.size()) != n)
      throw std::invalid_argument("image and mask batch sizes differ");
  }
  std::vector<SliceSample> samples(n);
  for (int i = 0; i < n; ++i) {
    SliceSample& s = samples[i];
    s.patient_id = tag + std::to_string(i);
    s.z_index = i;
    s.image = Image(h, w);
    const double* src = images.data() + static_cast<size_t>(i) * h * w;
    std::copy(src, src + static_cast<size_t>(h) * w, s.image.pixels.begin());
    if (masks) s.mask = mask_vec[i];
  }
  return samples;
}

py::dict report_to_dict(const DiceReport& report) {
  py::dict per_class;
  for (const auto& [cls, dice] : report.per_class) per_class[py::int_(cls)] = dice;
  py::dict out;
  out["per_class"] = per_class;
  out["average"] = report.average;
  return out;
}

NetworkConfig make_config(int depth, int base_filters, int in_channels, int num_classes,
                          bool residual, const std::string& upsample) {
  NetworkConfig cfg;
  cfg.depth = depth;
  cfg.base_filters = base_filters;
  cfg.in_channels = in_channels;
  cfg.num_classes = num_classes;
  cfg.residual = residual;
  if (upsample == "tconv") {
    cfg.upsample_mode = UpsampleMode::kTransposedConv;
  } else if (upsample == "nearest") {
    cfg.upsample_mode = UpsampleMode::kNearestPlusConv;
  } else {
    throw std::invalid_argument("upsample must be 'tconv' or 'nearest'");
  }
  cfg.validate();
  return cfg;
}

/// Thin wrapper so Python sees one object for build / train / predict / io.
class PyNetwork {
 public:
  PyNetwork(int depth, int base_filters, int in_channels, int num_classes, bool residual,
            const std::string& upsample, uint64_t seed)
      : net_(build_network(
            make_config(depth, base_filters, in_channels, num_classes, residual, upsample),
            seed)) {}

  explicit PyNetwork(NetworkInstance net) : net_(std::move(net)) {}

  int64_t parameter_count() const { return net_.parameter_count(); }

  py::dict config() const {
    const NetworkConfig& c = net_.config();
    py::dict d;
    d["depth"] = c.depth;
    d["base_filters"] = c.base_filters;
    d["in_channels"] = c.in_channels;
    d["num_classes"] = c.num_classes;
    d["residual"] = c.residual;
    d["upsample"] = c.upsample_mode == UpsampleMode::kTransposedConv ? "tconv" : "nearest";
    return d;
  }

  py::tuple predict_batch(const DoubleArray& images, int batch_size) const {
    auto samples = to_samples(images, std::nullopt, "p");
    Prediction pred = predict(net_, samples, batch_size);
    const int n = static_cast<int>(pred.masks.size());
    const int h = n > 0 ? pred.masks[0].height : 0;
    const int w = n > 0 ? pred.masks[0].width : 0;
    const int c = net_.config().num_classes;
    py::array_t<uint8_t> masks({n, h, w});
    py::array_t<double> probs({n, c, h, w});
    for (int i = 0; i < n; ++i) {
      std::copy(pred.masks[i].values.begin(), pred.masks[i].values.end(),
                masks.mutable_data() + static_cast<size_t>(i) * h * w);
      const auto& map = pred.probability_maps[i].data();
      std::copy(map.begin(), map.end(),
                probs.mutable_data() + static_cast<size_t>(i) * c * h * w);
    }
    return py::make_tuple(masks, probs);
  }

  py::dict fit(const DoubleArray& train_images, const MaskArray& train_masks,
               const DoubleArray& val_images, const MaskArray& val_masks, int epochs,
               double learning_rate, int batch_size, const std::string& loss, uint64_t seed,
               bool augment) {
    auto train_set = to_samples(train_images, train_masks, "tr");
    auto val_set = to_samples(val_images, val_masks, "va");
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = learning_rate;
    cfg.batch_size = batch_size;
    cfg.loss = loss_from_name(loss);
    cfg.seed = seed;
    cfg.augmentation = augment ? AugmentationPolicy{} : AugmentationPolicy::neutral(seed);
    TrainResult result = train(net_, train_set, val_set, cfg);
    net_ = result.best.clone();
    py::list losses;
    for (const auto& m : result.metrics) losses.append(m.train_loss);
    py::dict out;
    out["best_val_dice"] = result.best_val_dice;
    out["final_train_loss"] = result.final_train_loss;
    out["train_loss"] = losses;
    return out;
  }

  py::dict evaluate_batch(const DoubleArray& images, const MaskArray& masks) const {
    auto samples = to_samples(images, masks, "ev");
    return report_to_dict(evaluate(net_, samples));
  }

  void save(const std::string& path) const { net_.save_checkpoint(path); }

  static PyNetwork load(const std::string& path) {
    return PyNetwork(NetworkInstance::load_checkpoint(path));
  }

 private:
  NetworkInstance net_;
};

py::tuple phantom_slices(const std::string& vendor, int patients, int image_size,
                         uint64_t seed) {
  PhantomConfig cfg;
  cfg.image_size = image_size;
  cfg.seed = seed;
  cfg.validate();
  Vendor v = vendor_from_name(vendor);
  std::vector<SliceSample> all;
  for (int p = 0; p < patients; ++p) {
    VolumeRecord rec = generate_patient(cfg, v, p);
    for (SliceSample& s : extract_ed_es_slices(rec)) {
      s.image = normalize_intensity(s.image);
      all.push_back(std::move(s));
    }
  }
  const int n = static_cast<int>(all.size());
  py::array_t<double> images({n, image_size, image_size});
  py::array_t<uint8_t> masks({n, image_size, image_size});
  py::list ids;
  const size_t plane = static_cast<size_t>(image_size) * image_size;
  for (int i = 0; i < n; ++i) {
    std::copy(all[i].image.pixels.begin(), all[i].image.pixels.end(),
              images.mutable_data() + i * plane);
    std::copy(all[i].mask->values.begin(), all[i].mask->values.end(),
              masks.mutable_data() + i * plane);
    ids.append(all[i].id());
  }
  return py::make_tuple(images, masks, ids);
}

}  // namespace

PYBIND11_MODULE(_cardseg, m) {
  m.doc() = "Cardiac MRI segmentation core: preprocessing, augmentation, "
            "histogram matching, dice metrics, and residual U-Net training.";

  m.def(
      "normalize_intensity",
      [](const DoubleArray& img) { return from_image(normalize_intensity(to_image(img))); },
      py::arg("image"),
      "Clamp to the [p1, p99] percentiles and min-max scale to [0,1].");

  m.def(
      "center_crop",
      [](const DoubleArray& img, int h, int w) {
        return from_image(center_crop(to_image(img), h, w));
      },
      py::arg("image"), py::arg("height"), py::arg("width"),
      "Center crop, zero-padding inputs smaller than the target.");

  m.def(
      "center_crop_mask",
      [](const MaskArray& mask, int h, int w) {
        return from_mask(center_crop(to_mask(mask), h, w));
      },
      py::arg("mask"), py::arg("height"), py::arg("width"));

  m.def(
      "percentile",
      [](std::vector<double> values, double p) { return percentile(std::move(values), p); },
      py::arg("values"), py::arg("p"),
      "Percentile by linear interpolation over the sorted values, p in [0,100].");

  m.def(
      "histogram_match",
      [](const DoubleArray& source, const DoubleArray& reference, int bins) {
        IntensityHistogram ref = compute_histogram(to_image(reference), bins);
        return from_image(histogram_match(to_image(source), ref));
      },
      py::arg("source"), py::arg("reference"), py::arg("bins") = 256,
      "Monotone CDF matching of `source` intensities onto `reference`.");

  m.def(
      "rotate",
      [](const DoubleArray& img, std::optional<MaskArray> mask, double angle_degrees) {
        std::optional<LabelMask> m;
        if (mask) m = to_mask(*mask);
        auto [rimg, rmask] = rotate(to_image(img), m, angle_degrees);
        py::object out_mask = rmask ? py::object(from_mask(*rmask)) : py::none();
        return py::make_tuple(from_image(rimg), out_mask);
      },
      py::arg("image"), py::arg("mask") = py::none(), py::arg("angle_degrees"),
      "Rotate about the center: bilinear for the image, nearest for the mask.");

  m.def(
      "hflip",
      [](const DoubleArray& img, std::optional<MaskArray> mask) {
        std::optional<LabelMask> m;
        if (mask) m = to_mask(*mask);
        auto [fimg, fmask] = hflip(to_image(img), m);
        py::object out_mask = fmask ? py::object(from_mask(*fmask)) : py::none();
        return py::make_tuple(from_image(fimg), out_mask);
      },
      py::arg("image"), py::arg("mask") = py::none());

  m.def(
      "sharpen",
      [](const DoubleArray& img, double alpha) {
        return from_image(sharpen(to_image(img), alpha));
      },
      py::arg("image"), py::arg("alpha") = 1.0,
      "Unsharp masking with a 5-tap binomial blur, clamped to [0,1].");

  m.def(
      "dice_coefficient",
      [](const MaskArray& a, const MaskArray& b, int class_id) {
        return dice_coefficient(to_mask(a), to_mask(b), class_id);
      },
      py::arg("a"), py::arg("b"), py::arg("class_id"),
      "2|A∩B| / (|A|+|B|); 1.0 when both masks lack the class.");

  m.def(
      "evaluate_set",
      [](const MaskArray& predictions, const MaskArray& truths, int num_classes) {
        return report_to_dict(evaluate_set(to_masks(predictions), to_masks(truths), num_classes));
      },
      py::arg("predictions"), py::arg("truths"), py::arg("num_classes") = 4,
      "Per-class dice averaged over samples whose truth contains the class.");

  m.def("phantom_slices", &phantom_slices, py::arg("vendor"), py::arg("patients"),
        py::arg("image_size") = 64, py::arg("seed") = 0,
        "Synthetic short-axis slices: (images [N,H,W], masks [N,H,W], ids).");

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<int, int, int, int, bool, const std::string&, uint64_t>(),
           py::arg("depth") = 3, py::arg("base_filters") = 8, py::arg("in_channels") = 1,
           py::arg("num_classes") = 4, py::arg("residual") = true,
           py::arg("upsample") = "tconv", py::arg("seed") = 0)
      .def_property_readonly("parameter_count", &PyNetwork::parameter_count)
      .def_property_readonly("config", &PyNetwork::config)
      .def("predict", &PyNetwork::predict_batch, py::arg("images"), py::arg("batch_size") = 8,
           "Segment a batch [N,H,W]; returns (masks [N,H,W] uint8, probs [N,C,H,W]).")
      .def("fit", &PyNetwork::fit, py::arg("train_images"), py::arg("train_masks"),
           py::arg("val_images"), py::arg("val_masks"), py::arg("epochs") = 10,
           py::arg("learning_rate") = 0.001, py::arg("batch_size") = 8,
           py::arg("loss") = "both", py::arg("seed") = 0, py::arg("augment") = false,
           "Adam training; keeps the best-validation weights. Returns metrics.")
      .def("evaluate", &PyNetwork::evaluate_batch, py::arg("images"), py::arg("masks"))
      .def("save", &PyNetwork::save, py::arg("path"))
      .def_static("load", &PyNetwork::load, py::arg("path"));
}
