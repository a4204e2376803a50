#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "gca/data.hpp"

namespace gca {

// COCO-format annotation JSON (images/annotations/categories, bbox [x,y,w,h])
// with P6 PPM images on disk.

inline void export_coco(const Dataset& data, const std::string& dir,
                        const std::string& annotations_name = "annotations.json") {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json root;
    root["images"] = nlohmann::json::array();
    root["annotations"] = nlohmann::json::array();
    root["categories"] = nlohmann::json::array();
    for (int c = 1; c <= data.num_classes; ++c)
        root["categories"].push_back({{"id", c}, {"name", "class_" + std::to_string(c)}});
    int ann_id = 1;
    for (size_t i = 0; i < data.scenes.size(); ++i) {
        const auto& s = data.scenes[i];
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05zu.ppm", i);
        write_ppm((fs::path(dir) / name).string(), s);
        root["images"].push_back({{"id", int(i) + 1},
                                  {"file_name", std::string(name)},
                                  {"width", s.w},
                                  {"height", s.h}});
        for (size_t b = 0; b < s.boxes.size(); ++b) {
            const Box& box = s.boxes[b];
            root["annotations"].push_back(
                {{"id", ann_id++},
                 {"image_id", int(i) + 1},
                 {"category_id", s.labels[b]},
                 {"bbox", {box.x1, box.y1, box.width(), box.height()}},
                 {"area", box.area()},
                 {"iscrowd", 0}});
        }
    }
    std::ofstream f(fs::path(dir) / annotations_name);
    check(f.good(), "cannot write annotations");
    f << root.dump(2) << "\n";
}

inline Dataset import_coco(const std::string& annotations_path,
                           const std::string& image_dir) {
    namespace fs = std::filesystem;
    std::ifstream f(annotations_path);
    check(f.good(), "cannot open annotations: " + annotations_path);
    nlohmann::json root;
    f >> root;
    check(root.contains("images") && root.contains("annotations") &&
              root.contains("categories"),
          "not a COCO-format annotation file");

    // category ids -> contiguous labels 1..K in ascending id order
    std::map<int, int> cat_to_label;
    std::vector<int> ids;
    for (const auto& c : root["categories"]) ids.push_back(c.at("id").get<int>());
    std::sort(ids.begin(), ids.end());
    for (size_t i = 0; i < ids.size(); ++i) cat_to_label[ids[i]] = int(i) + 1;

    Dataset data;
    data.num_classes = int(ids.size());
    std::map<int, size_t> image_index;
    for (const auto& im : root["images"]) {
        Scene s = read_ppm((fs::path(image_dir) / im.at("file_name").get<std::string>()).string());
        check(s.w == im.at("width").get<int>() && s.h == im.at("height").get<int>(),
              "image extents disagree with annotations");
        image_index[im.at("id").get<int>()] = data.scenes.size();
        data.scenes.push_back(std::move(s));
    }
    for (const auto& a : root["annotations"]) {
        const auto it = image_index.find(a.at("image_id").get<int>());
        check(it != image_index.end(), "annotation references unknown image");
        auto& s = data.scenes[it->second];
        const auto bbox = a.at("bbox");
        const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
        const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
        s.boxes.push_back({x, y, x + w, y + h});
        s.labels.push_back(cat_to_label.at(a.at("category_id").get<int>()));
    }
    return data;
}

}  // namespace gca
