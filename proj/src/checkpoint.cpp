#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lipscan/nn.hpp"

namespace lipscan::nn {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'L', 'I', 'P', 'S', 'C', 'A', 'N', '1'};
constexpr int kVersion = 1;

json arch_to_json(const Network& net) {
    json layers = json::array();
    for (const LayerSpec& layer : net.layers()) {
        if (const auto* d = std::get_if<DenseSpec>(&layer))
            layers.push_back({{"type", "dense"}, {"in", d->in}, {"out", d->out}, {"relu", d->relu}});
        else if (const auto* c = std::get_if<Conv2dSpec>(&layer))
            layers.push_back(
                {{"type", "conv2d"}, {"in_ch", c->in_ch}, {"out_ch", c->out_ch}, {"relu", c->relu}});
        else if (std::holds_alternative<MaxPoolSpec>(layer))
            layers.push_back({{"type", "maxpool"}});
        else
            layers.push_back({{"type", "gap"}});
    }
    return layers;
}

Network arch_from_json(const json& j) {
    std::vector<LayerSpec> layers;
    for (const json& lj : j.at("layers")) {
        const std::string type = lj.at("type");
        if (type == "dense")
            layers.push_back(DenseSpec{lj.at("in"), lj.at("out"), lj.at("relu")});
        else if (type == "conv2d")
            layers.push_back(Conv2dSpec{lj.at("in_ch"), lj.at("out_ch"), lj.at("relu")});
        else if (type == "maxpool")
            layers.push_back(MaxPoolSpec{});
        else if (type == "gap")
            layers.push_back(GlobalAvgPoolSpec{});
        else
            throw CorruptFile("checkpoint: unknown layer type '" + type + "'");
    }
    const auto& s = j.at("input_shape");
    return Network(std::move(layers), Shape{s.at(0), s.at(1), s.at(2)}, j.at("num_classes"));
}

} // namespace

void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::string& path) {
    json header;
    header["version"] = kVersion;
    header["layers"] = arch_to_json(net);
    header["input_shape"] = {net.input_shape().c, net.input_shape().h, net.input_shape().w};
    header["num_classes"] = net.num_classes();
    header["num_params"] = net.num_params();
    header["epoch"] = meta.epoch;
    header["seed"] = meta.seed;
    header["config_fingerprint"] = meta.config_fingerprint;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = header_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(reinterpret_cast<const char*>(net.theta().data()),
              static_cast<std::streamsize>(net.num_params() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(net.theta_init().data()),
              static_cast<std::streamsize>(net.num_params() * sizeof(double)));
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CorruptFile("load_checkpoint: bad magic");

    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len == 0 || len > (1u << 20))
        throw CorruptFile("load_checkpoint: implausible header length");

    std::string header_str(len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw CorruptFile("load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw CorruptFile(std::string("load_checkpoint: header is not valid JSON: ") + e.what());
    }

    const int version = header.value("version", -1);
    if (version != kVersion)
        throw CorruptFile("load_checkpoint: unsupported version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");

    LoadedCheckpoint result{arch_from_json(header), CheckpointMeta{}};
    const Eigen::Index p = result.net.num_params();
    if (header.at("num_params").get<Eigen::Index>() != p)
        throw CorruptFile("load_checkpoint: parameter count does not match architecture");

    in.read(reinterpret_cast<char*>(result.net.theta().data()),
            static_cast<std::streamsize>(p * sizeof(double)));
    in.read(reinterpret_cast<char*>(result.net.theta_init().data()),
            static_cast<std::streamsize>(p * sizeof(double)));
    if (!in) throw CorruptFile("load_checkpoint: truncated parameter payload");

    result.meta.epoch = header.value("epoch", 0);
    result.meta.seed = header.value("seed", std::uint64_t{0});
    result.meta.config_fingerprint = header.value("config_fingerprint", "");
    return result;
}

} // namespace lipscan::nn
