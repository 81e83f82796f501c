#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbk/errors.hpp"
#include "fbk/fb_conv.hpp"
#include "fbk/fb_layer.hpp"
#include "fbk/nn/layers.hpp"
#include "fbk/nn/network.hpp"
#include "fbk/nn/optimizer.hpp"
#include "fbk/rng.hpp"
#include "fbk/serialize.hpp"

namespace fbk::nn {

struct RngStates {
  std::string data, mask, augment;
};

namespace detail {

inline std::string tensor_file(const std::string& name) {
  std::string f = name;
  for (char& c : f)
    if (c == '.' || c == ' ' || c == '/') c = '_';
  return f + ".fbkt";
}

template <typename T>
nlohmann::json layer_manifest(Layer<T>& layer) {
  nlohmann::json j;
  j["describe"] = layer.describe();
  if (auto* fb = dynamic_cast<FbDense<T>*>(&layer)) {
    j["type"] = "fb-dense";
    j["c"] = fb->fb_params().c;
    j["n"] = fb->fb_params().n;
    j["k"] = fb->fb_params().k;
    j["p"] = static_cast<double>(fb->retain_probability());
  } else if (auto* fbc = dynamic_cast<FbConv<T>*>(&layer)) {
    j["type"] = "fb-conv";
    j["c"] = fbc->conv().params.c;
    j["n"] = fbc->conv().params.n;
    j["k"] = fbc->conv().params.k;
    j["p"] = static_cast<double>(fbc->conv().p);
    const auto& g = fbc->conv().geometry;
    j["geometry"] = {{"in_channels", g.in_channels}, {"out_channels", g.out_channels},
                     {"kernel_h", g.kernel_h},       {"kernel_w", g.kernel_w},
                     {"stride", g.stride},           {"pad", g.pad}};
  } else if (auto* lin = dynamic_cast<Linear<T>*>(&layer)) {
    j["type"] = "linear";
    j["c"] = lin->fb_params().c;
    j["n"] = lin->fb_params().n;
    j["k"] = 0;
  } else {
    j["type"] = layer.describe().substr(0, layer.describe().find(' '));
  }
  return j;
}

}  // namespace detail

/// Writes network parameters, optimizer velocity, stream states and a JSON
/// manifest into `dir`. The manifest pins the layer stack so a resume
/// against a differently built network fails loudly.
template <typename T>
void save_checkpoint(const std::string& dir, Network<T>& net, const SgdState<T>& opt,
                     std::size_t next_epoch, const RngStates& rng) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "fbk-checkpoint-v1";
  manifest["element_bytes"] = sizeof(T);
  manifest["next_epoch"] = next_epoch;
  manifest["rng"] = {{"data", rng.data}, {"mask", rng.mask}, {"augment", rng.augment}};
  manifest["network"] = net.describe();

  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < net.size(); ++i)
    layers.push_back(detail::layer_manifest<T>(net.layer(i)));
  manifest["layers"] = layers;

  nlohmann::json tensors = nlohmann::json::array();
  for (auto& [name, tensor] : net.named_state()) {
    const std::string file = detail::tensor_file(name);
    save_tensor((fs::path(dir) / file).string(), *tensor);
    tensors.push_back({{"name", name}, {"file", file}});
  }
  manifest["tensors"] = tensors;

  manifest["velocity_count"] = opt.velocity.size();
  for (std::size_t i = 0; i < opt.velocity.size(); ++i)
    save_tensor((fs::path(dir) / ("opt_v" + std::to_string(i) + ".fbkt")).string(),
                opt.velocity[i]);

  std::ofstream os((fs::path(dir) / "manifest.json").string());
  os << manifest.dump(2) << "\n";
  if (!os) throw io_error("cannot write checkpoint manifest under " + dir);
}

/// Restores a checkpoint into a structurally matching network. Returns the
/// epoch training should resume from.
template <typename T>
std::size_t load_checkpoint(const std::string& dir, Network<T>& net, SgdState<T>& opt,
                            RngStates& rng) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream is(manifest_path);
  if (!is) throw io_error("missing checkpoint manifest " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(is, nullptr, false);
  if (manifest.is_discarded() || manifest.value("format", "") != "fbk-checkpoint-v1")
    throw io_error("unrecognized checkpoint manifest " + manifest_path);
  if (manifest.value("element_bytes", 0) != static_cast<int>(sizeof(T)))
    throw config_error("checkpoint element width does not match the requested precision");
  if (manifest.value("network", "") != net.describe())
    throw config_error("checkpoint was written for a different network:\n" +
                       manifest.value("network", "") + "\nvs\n" + net.describe());

  auto named = net.named_state();
  const auto& tensors = manifest["tensors"];
  if (tensors.size() != named.size())
    throw config_error("checkpoint holds " + std::to_string(tensors.size()) +
                       " tensors, network wants " + std::to_string(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (tensors[i]["name"] != named[i].first)
      throw config_error("checkpoint tensor '" + tensors[i]["name"].get<std::string>() +
                         "' does not match expected '" + named[i].first + "'");
    auto loaded =
        load_tensor<T>((fs::path(dir) / tensors[i]["file"].get<std::string>()).string());
    if (loaded.shape() != named[i].second->shape())
      throw config_error("checkpoint tensor '" + named[i].first + "' has shape " +
                         shape_str(loaded.shape()) + ", expected " +
                         shape_str(named[i].second->shape()));
    *named[i].second = std::move(loaded);
  }

  const std::size_t vel = manifest.value("velocity_count", std::size_t{0});
  opt.velocity.clear();
  for (std::size_t i = 0; i < vel; ++i)
    opt.velocity.push_back(
        load_tensor<T>((fs::path(dir) / ("opt_v" + std::to_string(i) + ".fbkt")).string()));

  rng.data = manifest["rng"]["data"].get<std::string>();
  rng.mask = manifest["rng"]["mask"].get<std::string>();
  rng.augment = manifest["rng"]["augment"].get<std::string>();
  return manifest["next_epoch"].get<std::size_t>();
}

/// Standalone parameter dump for a single FB layer: one tensor file per
/// parameter plus a JSON sidecar naming the layer type and its dimensions.
template <typename T>
void save_fb_params(const std::string& dir, const FbLayerParams<T>& params, double p,
                    const ConvGeometry* geometry = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_tensor((fs::path(dir) / "weight.fbkt").string(), params.weight);
  save_tensor((fs::path(dir) / "bias.fbkt").string(), params.bias);
  save_tensor((fs::path(dir) / "factors.fbkt").string(), params.factors);
  nlohmann::json j;
  j["layer"] = geometry ? "fb-conv" : "fb-dense";
  j["c"] = params.c;
  j["n"] = params.n;
  j["k"] = params.k;
  j["p"] = p;
  if (geometry) {
    j["geometry"] = {{"in_channels", geometry->in_channels},
                     {"out_channels", geometry->out_channels},
                     {"kernel_h", geometry->kernel_h},
                     {"kernel_w", geometry->kernel_w},
                     {"stride", geometry->stride},
                     {"pad", geometry->pad}};
  }
  std::ofstream os((fs::path(dir) / "manifest.json").string());
  os << j.dump(2) << "\n";
}

}  // namespace fbk::nn
