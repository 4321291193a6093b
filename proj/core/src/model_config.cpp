#include "dpseq/model_config.hpp"

#include <nlohmann/json.hpp>

namespace dpseq {

using nlohmann::json;

std::string model_config_to_json(const ModelConfig& c) {
  json j;
  j["depths"] = c.depths;
  j["embed_dims"] = c.embed_dims;
  j["hidden_dims"] = c.hidden_dims;
  j["downsample"] = c.downsample;
  j["patch_edge"] = c.patch_edge;
  j["image_edge"] = c.image_edge;
  j["head_dims"] = c.head_dims;
  j["n_classes"] = c.n_classes;
  j["mlp_ratio"] = c.mlp_ratio;
  j["dropout"] = c.dropout;
  j["norm_mean"] = c.norm_mean;
  j["norm_std"] = c.norm_std;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  ModelConfig c;
  j.at("depths").get_to(c.depths);
  j.at("embed_dims").get_to(c.embed_dims);
  j.at("hidden_dims").get_to(c.hidden_dims);
  j.at("downsample").get_to(c.downsample);
  j.at("patch_edge").get_to(c.patch_edge);
  j.at("image_edge").get_to(c.image_edge);
  j.at("head_dims").get_to(c.head_dims);
  j.at("n_classes").get_to(c.n_classes);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("dropout").get_to(c.dropout);
  j.at("norm_mean").get_to(c.norm_mean);
  j.at("norm_std").get_to(c.norm_std);
  c.validate();
  return c;
}

}  // namespace dpseq
