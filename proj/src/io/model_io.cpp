#include "facever/model_io.hpp"

#include "facever/container.hpp"
#include "facever/error.hpp"

namespace facever {

void save_model(const std::filesystem::path& path, const FaceModel& model) {
  Container c{magic::model};
  auto& meta = c.metadata();
  meta["kind"] = "model";
  meta["architecture"] = to_json(model.network.spec());
  meta["element_width"] = sizeof(float);
  meta["network_id"] = model.network_id;
  meta["patch_index"] = model.patch_index;
  meta["fingerprint"] = model.fingerprint;
  meta["fold_mask"] = model.fold_mask;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : model.history) {
    history.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  }
  meta["history"] = history;

  c.add("mean", model.mean_image);
  std::size_t i = 0;
  for (const auto& layer : model.network.layers()) {
    const LayerParams<float>* p = nullptr;
    if (const auto* conv = std::get_if<Network<float>::ConvLayer>(&layer)) p = &conv->params;
    if (const auto* fc = std::get_if<Network<float>::FcLayer>(&layer)) p = &fc->params;
    if (p) {
      c.add("layer" + std::to_string(i) + ".weights", p->weights);
      c.add("layer" + std::to_string(i) + ".biases", p->biases);
    }
    ++i;
  }
  c.save(path);
}

FaceModel load_model(const std::filesystem::path& path) {
  const auto c = Container::load(path, magic::model);
  const auto& meta = c.metadata();
  FaceModel model;
  try {
    model.network = Network<float>(architecture_from_json(meta.at("architecture")));
    model.network_id = meta.value("network_id", "full");
    model.patch_index = meta.value("patch_index", -1);
    model.fingerprint = meta.value("fingerprint", nlohmann::json::object());
    model.fold_mask = meta.value("fold_mask", std::uint64_t{0});
    for (const auto& e : meta.value("history", nlohmann::json::array())) {
      model.history.push_back({e.at("epoch"), e.at("loss"), e.at("accuracy")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed model metadata: " + e.what());
  }
  model.mean_image = c.get_float("mean");
  auto params = model.network.parameters();
  std::size_t next = 0;
  std::size_t i = 0;
  for (const auto& layer : model.network.layers()) {
    if (std::holds_alternative<Network<float>::ConvLayer>(layer) ||
        std::holds_alternative<Network<float>::FcLayer>(layer)) {
      auto* p = params[next++];
      auto w = c.get_float("layer" + std::to_string(i) + ".weights");
      auto b = c.get_float("layer" + std::to_string(i) + ".biases");
      if (w.shape() != p->weights.shape() || b.shape() != p->biases.shape()) {
        throw FormatError(path.string() + ": parameter shape mismatch at layer " +
                          std::to_string(i));
      }
      p->weights = std::move(w);
      p->biases = std::move(b);
    }
    ++i;
  }
  return model;
}

}  // namespace facever
