#include "facever/architecture.hpp"

#include <algorithm>
#include <cctype>

#include "facever/error.hpp"
#include "facever/kernels.hpp"

namespace facever {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

void conv_block(std::vector<LayerDesc>& layers, std::size_t filters,
                std::size_t kernel, std::size_t stride, std::size_t pad) {
  layers.emplace_back(ConvDesc{filters, kernel, stride, pad});
  layers.emplace_back(ReluDesc{});
}

void pool(std::vector<LayerDesc>& layers, std::size_t window, std::size_t stride) {
  layers.emplace_back(PoolDesc{window, stride});
}

void classifier(std::vector<LayerDesc>& layers, std::size_t classes) {
  layers.emplace_back(FcDesc{kFeatureLength});
  layers.emplace_back(ReluDesc{});
  layers.emplace_back(FcDesc{classes});
  layers.emplace_back(SoftmaxDesc{classes});
}

}  // namespace

std::string layer_label(const LayerDesc& layer) {
  return std::visit(
      Overloaded{
          [](const ConvDesc& c) {
            return "conv " + std::to_string(c.filters) + "x" + std::to_string(c.kernel) +
                   "x" + std::to_string(c.kernel) + " st" + std::to_string(c.stride) +
                   " pad" + std::to_string(c.pad);
          },
          [](const PoolDesc& p) {
            return "maxpool " + std::to_string(p.window) + " st" + std::to_string(p.stride);
          },
          [](const ReluDesc&) { return std::string("relu"); },
          [](const FcDesc& f) { return "fc " + std::to_string(f.units); },
          [](const SoftmaxDesc& s) { return "softmax " + std::to_string(s.classes); },
      },
      layer);
}

std::size_t ArchitectureSpec::num_classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (const auto* s = std::get_if<SoftmaxDesc>(&*it)) return s->classes;
  }
  return 0;
}

ArchitectureSpec build_arch(const std::string& name, std::size_t channels,
                            std::size_t num_classes) {
  if (channels != 1 && channels != 3) {
    throw ConfigError("channels must be 1 (grey) or 3 (colour), got " +
                      std::to_string(channels));
  }
  if (num_classes < 2) throw ConfigError("softmax needs at least 2 classes");

  ArchitectureSpec spec;
  spec.channels = channels;
  const std::string key = upper(name);
  auto& l = spec.layers;
  if (key == "CNN-S" || key == "CNN-M") {
    const bool medium = key == "CNN-M";
    conv_block(l, medium ? 16 : 12, 5, 1, 0);
    pool(l, 2, 2);
    conv_block(l, medium ? 32 : 24, 4, 1, 0);
    pool(l, 2, 2);
    conv_block(l, medium ? 48 : 32, 3, 2, 0);
    pool(l, 2, 2);
  } else if (key == "CNN-L") {
    conv_block(l, 16, 3, 1, 1);
    conv_block(l, 16, 3, 1, 1);
    pool(l, 2, 2);
    conv_block(l, 32, 3, 1, 1);
    pool(l, 3, 2);
    conv_block(l, 48, 3, 1, 1);
    pool(l, 2, 2);
  } else {
    throw ConfigError("unknown architecture '" + name + "' (expected CNN-S, CNN-M, CNN-L)");
  }
  spec.name = key;
  classifier(l, num_classes);
  return spec;
}

std::vector<Shape> infer_shapes(const ArchitectureSpec& spec) {
  std::vector<Shape> trace;
  trace.reserve(spec.layers.size());
  Shape current = spec.input_shape();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    try {
      current = std::visit(
          Overloaded{
              [&](const ConvDesc& c) -> Shape {
                if (current.size() != 3) throw DimensionError("conv after flatten");
                return {kernels::conv_output_extent(current[0], c.kernel, c.stride, c.pad),
                        kernels::conv_output_extent(current[1], c.kernel, c.stride, c.pad),
                        c.filters};
              },
              [&](const PoolDesc& p) -> Shape {
                if (current.size() != 3) throw DimensionError("pool after flatten");
                return {kernels::pool_output_extent(current[0], p.window, p.stride),
                        kernels::pool_output_extent(current[1], p.window, p.stride),
                        current[2]};
              },
              [&](const ReluDesc&) -> Shape { return current; },
              [&](const FcDesc& f) -> Shape { return {f.units}; },
              [&](const SoftmaxDesc& s) -> Shape {
                if (shape_size(current) != s.classes) {
                  throw DimensionError("softmax width differs from its input");
                }
                return current;
              },
          },
          layer);
    } catch (const Error& e) {
      throw ArchitectureError(spec.name + " layer " + std::to_string(i) + " (" +
                              layer_label(layer) + "): " + e.what());
    }
    if (shape_size(current) == 0) {
      throw ArchitectureError(spec.name + " layer " + std::to_string(i) + " (" +
                              layer_label(layer) + ") has an empty output");
    }
    trace.push_back(current);
  }
  return trace;
}

std::size_t num_params(const ArchitectureSpec& spec) {
  const auto trace = infer_shapes(spec);
  std::size_t total = 0;
  Shape in = spec.input_shape();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* c = std::get_if<ConvDesc>(&spec.layers[i])) {
      total += c->filters * c->kernel * c->kernel * in.back() + c->filters;
    } else if (const auto* f = std::get_if<FcDesc>(&spec.layers[i])) {
      total += f->units * shape_size(in) + f->units;
    }
    in = trace[i];
  }
  return total;
}

std::size_t feature_layer_index(const ArchitectureSpec& spec) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* f = std::get_if<FcDesc>(&spec.layers[i]); f && f->units == kFeatureLength) {
      return i;
    }
  }
  throw ArchitectureError(spec.name + " has no " + std::to_string(kFeatureLength) +
                          "-unit feature layer");
}

nlohmann::json to_json(const ArchitectureSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) {
    layers.push_back(std::visit(
        Overloaded{
            [](const ConvDesc& c) {
              return nlohmann::json{{"type", "conv"}, {"filters", c.filters},
                                    {"kernel", c.kernel}, {"stride", c.stride},
                                    {"pad", c.pad}};
            },
            [](const PoolDesc& p) {
              return nlohmann::json{{"type", "maxpool"}, {"window", p.window},
                                    {"stride", p.stride}};
            },
            [](const ReluDesc&) { return nlohmann::json{{"type", "relu"}}; },
            [](const FcDesc& f) { return nlohmann::json{{"type", "fc"}, {"units", f.units}}; },
            [](const SoftmaxDesc& s) {
              return nlohmann::json{{"type", "softmax"}, {"classes", s.classes}};
            },
        },
        layer));
  }
  return {{"name", spec.name},
          {"input", {spec.input_height, spec.input_width, spec.channels}},
          {"layers", layers}};
}

ArchitectureSpec architecture_from_json(const nlohmann::json& j) {
  try {
    ArchitectureSpec spec;
    spec.name = j.at("name").get<std::string>();
    const auto& input = j.at("input");
    spec.input_height = input.at(0).get<std::size_t>();
    spec.input_width = input.at(1).get<std::size_t>();
    spec.channels = input.at(2).get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "conv") {
        spec.layers.emplace_back(ConvDesc{l.at("filters"), l.at("kernel"),
                                          l.at("stride"), l.at("pad")});
      } else if (type == "maxpool") {
        spec.layers.emplace_back(PoolDesc{l.at("window"), l.at("stride")});
      } else if (type == "relu") {
        spec.layers.emplace_back(ReluDesc{});
      } else if (type == "fc") {
        spec.layers.emplace_back(FcDesc{l.at("units")});
      } else if (type == "softmax") {
        spec.layers.emplace_back(SoftmaxDesc{l.at("classes")});
      } else {
        throw FormatError("unknown layer type '" + type + "'");
      }
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed architecture block: ") + e.what());
  }
}

}  // namespace facever
