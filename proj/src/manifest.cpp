#include "dub3d/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "dub3d/error.hpp"

namespace dub3d {

namespace {

using nlohmann::json;

const std::set<std::string> kRequired = {"id", "path", "label", "source", "fps", "width", "height", "frame_count",
                                         "split"};
const std::set<std::string> kOptional = {"model", "count"};

template <typename T>
T get_field(const json& obj, const char* key) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(std::string("field '") + key + "' has the wrong type");
    }
}

ManifestEntry entry_from_json(const json& obj) {
    if (!obj.is_object()) throw DataError("expected a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (!kRequired.contains(key) && !kOptional.contains(key)) throw DataError("unknown field '" + key + "'");
    }
    for (const auto& key : kRequired) {
        if (!obj.contains(key)) throw DataError("missing field '" + key + "'");
    }
    ManifestEntry e;
    e.id = get_field<std::string>(obj, "id");
    e.path = get_field<std::string>(obj, "path");
    const auto label = get_field<std::string>(obj, "label");
    if (label == "real") {
        e.label = Label::Real;
    } else if (label == "generated") {
        e.label = Label::Generated;
    } else {
        throw DataError("label '" + label + "' is neither real nor generated");
    }
    e.source = get_field<std::string>(obj, "source");
    if (obj.contains("model") && !obj["model"].is_null()) e.model = get_field<std::string>(obj, "model");
    if (!obj["fps"].is_number()) throw DataError("field 'fps' has the wrong type");
    e.fps = obj["fps"].get<double>();
    e.width = get_field<std::int64_t>(obj, "width");
    e.height = get_field<std::int64_t>(obj, "height");
    e.frame_count = get_field<std::int64_t>(obj, "frame_count");
    e.split = get_field<std::string>(obj, "split");
    if (obj.contains("count")) e.count = get_field<std::int64_t>(obj, "count");
    validate_entry(e);
    return e;
}

json entry_to_json(const ManifestEntry& e) {
    json j = json::object();
    j["id"] = e.id;
    j["path"] = e.path;
    j["label"] = std::string(label_name(e.label));
    j["source"] = e.source;
    if (e.model) j["model"] = *e.model;
    j["fps"] = e.fps;
    j["width"] = e.width;
    j["height"] = e.height;
    j["frame_count"] = e.frame_count;
    j["split"] = e.split;
    if (e.count != 1) j["count"] = e.count;
    return j;
}

}  // namespace

std::string_view label_name(Label label) { return label == Label::Real ? "real" : "generated"; }

bool is_known_split(std::string_view split) {
    return std::find(std::begin(kSplitNames), std::end(kSplitNames), split) != std::end(kSplitNames);
}

void validate_entry(const ManifestEntry& e) {
    const std::string who = "entry '" + e.id + "': ";
    if (e.id.empty()) throw DataError("entry with empty id");
    if (e.label == Label::Real && e.model) throw DataError(who + "label real must not carry model '" + *e.model + "'");
    if (e.label == Label::Generated && (!e.model || e.model->empty())) {
        throw DataError(who + "label generated requires a model");
    }
    if (!(e.fps > 0.0) || !std::isfinite(e.fps)) throw DataError(who + "fps must be positive");
    if (e.width < 1 || e.height < 1) throw DataError(who + "width and height must be positive");
    if (e.frame_count < 1) throw DataError(who + "frame_count must be positive");
    if (e.count < 1) throw DataError(who + "count must be positive");
    if (!is_known_split(e.split)) throw DataError(who + "unknown split '" + e.split + "'");
    if (e.split == "out_of_domain_test" && e.model &&
        std::find(std::begin(kInDomainModels), std::end(kInDomainModels), *e.model) != std::end(kInDomainModels)) {
        throw DataError(who + "in-domain model '" + *e.model + "' cannot be in out_of_domain_test");
    }
}

Manifest parse_manifest(std::istream& in, std::string_view origin) {
    Manifest out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = std::string(origin) + ":" + std::to_string(lineno) + ": ";
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& err) {
            throw DataError(where + "invalid JSON (" + err.what() + ")");
        }
        try {
            out.push_back(entry_from_json(obj));
        } catch (const DataError& err) {
            throw DataError(where + err.what());
        }
        if (!ids.insert(out.back().id).second) throw DataError(where + "duplicate id '" + out.back().id + "'");
    }
    return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    return parse_manifest(in, path.string());
}

void write_manifest(const Manifest& entries, std::ostream& out) {
    for (const auto& e : entries) out << entry_to_json(e).dump() << '\n';
}

void write_manifest(const Manifest& entries, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    write_manifest(entries, out);
    if (!out) throw DataError("write failed for " + path.string());
}

Manifest filter_split(const Manifest& entries, std::string_view split) {
    Manifest out;
    for (const auto& e : entries) {
        if (e.split == split) out.push_back(e);
    }
    return out;
}

std::int64_t clip_total(const Manifest& entries) {
    std::int64_t total = 0;
    for (const auto& e : entries) total += e.count;
    return total;
}

}  // namespace dub3d
