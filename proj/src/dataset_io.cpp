// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <stdexcept>

#include "ifam/databench.hpp"
#include "ifam/json_io.hpp"
#include "ifam/png_io.hpp"

namespace ifam {

namespace fs = std::filesystem;

namespace {

std::vector<int> indices_of(const std::vector<std::uint8_t>& mask) {
  std::vector<int> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

void save_dataset(const GroupedDataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  write_json_file((fs::path(dir) / "dataset.json").string(), Json{{"spec", dataset.spec}});
  for (const auto& [name, split] : dataset.splits) {
    const fs::path root = fs::path(dir) / name;
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    Json samples = Json::array();
    for (const GroupedSample& s : split.samples) {
      const std::string file = "images/" + s.id + ".png";
      const std::string mask_file = "masks/" + s.id + ".png";
      png::write_rgb((root / file).string(), s.image);
      png::write_bitmask((root / mask_file).string(), s.pixel_mask, s.image.width,
                         s.image.height);
      Json kps = Json::array();
      for (const Keypoint& k : s.keypoints) kps.push_back(Json::array({k.x, k.y}));
      Json entry{{"id", s.id},       {"file", file},   {"class", s.label},
                 {"background", s.background},         {"group", s.group},
                 {"mask_file", mask_file}, {"keypoints", kps}};
      if (!s.spurious_tokens.empty()) entry["spurious_tokens"] = indices_of(s.spurious_tokens);
      samples.push_back(std::move(entry));
    }
    write_json_file((root / "manifest.json").string(), Json{{"split", name}, {"samples", samples}});
  }
}

GroupedDataset load_dataset(const std::string& dir) {
  GroupedDataset ds;
  const Json meta = read_json_file((fs::path(dir) / "dataset.json").string());
  ds.spec = meta.at("spec").get<DatasetSpec>();
  const int n_tokens = (ds.spec.image_size / ds.spec.patch_size) *
                       (ds.spec.image_size / ds.spec.patch_size);
  for (const char* name : kSplitNames) {
    const fs::path root = fs::path(dir) / name;
    if (!fs::exists(root / "manifest.json")) continue;
    const Json manifest = read_json_file((root / "manifest.json").string());
    Split split;
    split.name = name;
    for (const Json& e : manifest.at("samples")) {
      GroupedSample s;
      s.id = e.at("id").get<std::string>();
      s.label = e.at("class").get<int>();
      s.background = e.at("background").get<int>();
      s.group = e.at("group").get<int>();
      s.image = png::read_rgb((root / e.at("file").get<std::string>()).string());
      int w = 0, h = 0;
      s.pixel_mask = png::read_bitmask((root / e.at("mask_file").get<std::string>()).string(), &w, &h);
      if (w != s.image.width || h != s.image.height) {
        throw std::runtime_error("load_dataset: mask size differs from image for " + s.id);
      }
      s.token_mask = token_mask_from_pixels(s.pixel_mask, ds.spec.image_size, ds.spec.patch_size);
      for (const Json& k : e.at("keypoints")) s.keypoints.push_back({k.at(0), k.at(1)});
      if (auto it = e.find("spurious_tokens"); it != e.end()) {
        s.spurious_tokens.assign(static_cast<std::size_t>(n_tokens), 0);
        for (int i : it->get<std::vector<int>>()) s.spurious_tokens.at(static_cast<std::size_t>(i)) = 1;
      }
      split.samples.push_back(std::move(s));
    }
    ds.splits[name] = std::move(split);
  }
  if (!ds.splits.count("train")) throw std::runtime_error("load_dataset: no train split in " + dir);
  return ds;
}

}  // namespace ifam
