#include "iocnn/serialize.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace iocnn {

using nlohmann::json;

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::string format_g17(double v) {
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, r.ptr);
}

std::string format_shortest(double v) {
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw std::runtime_error("malformed number: '" + s + "'");
    return v;
}

namespace {

ActivationKind activation_from_name(const std::string& s) {
    if (s == "relu") return ActivationKind::relu;
    if (s == "elu") return ActivationKind::elu;
    if (s == "leaky_relu") return ActivationKind::leaky_relu;
    if (s == "sigmoid") return ActivationKind::sigmoid;
    if (s == "identity") return ActivationKind::identity;
    throw std::runtime_error("unknown activation: " + s);
}

FinalMap final_map_from_name(const std::string& s) {
    if (s == "none") return FinalMap::none;
    if (s == "softmax") return FinalMap::softmax;
    if (s == "sigmoid") return FinalMap::sigmoid;
    throw std::runtime_error("unknown final_map: " + s);
}

}  // namespace

json spec_to_json(const ModelSpec& spec) {
    json layers = json::array();
    for (const LayerSpec& l : spec.layers) {
        json jl;
        jl["kind"] = kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::dense: jl["width"] = l.width; break;
            case LayerKind::conv2d:
                jl["filters"] = l.filters;
                jl["kernel"] = l.kernel;
                jl["stride"] = l.stride == 0 ? 1 : l.stride;
                break;
            case LayerKind::maxpool:
                jl["kernel"] = l.kernel;
                jl["stride"] = l.stride == 0 ? l.kernel : l.stride;
                break;
            case LayerKind::batchnorm: break;
            case LayerKind::activation: jl["activation"] = activation_name(l.activation); break;
            case LayerKind::skip_add: jl["source"] = l.skip_source; break;
        }
        layers.push_back(jl);
    }
    json j;
    j["input_shape"] = spec.input_shape.dims;
    j["num_outputs"] = spec.num_outputs;
    j["final_map"] = final_map_name(spec.final_map);
    j["layers"] = layers;
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.input_shape = Shape(j.at("input_shape").get<std::vector<std::size_t>>());
    spec.num_outputs = j.at("num_outputs").get<std::size_t>();
    spec.final_map = final_map_from_name(j.at("final_map").get<std::string>());
    for (const json& jl : j.at("layers")) {
        const std::string kind = jl.at("kind").get<std::string>();
        if (kind == "dense") {
            spec.layers.push_back(LayerSpec::dense(jl.at("width").get<std::size_t>()));
        } else if (kind == "conv2d") {
            spec.layers.push_back(LayerSpec::conv2d(
                jl.at("filters").get<std::size_t>(), jl.at("kernel").get<std::size_t>(),
                jl.value("stride", std::size_t{1})));
        } else if (kind == "maxpool") {
            spec.layers.push_back(LayerSpec::maxpool(jl.at("kernel").get<std::size_t>(),
                                                     jl.value("stride", std::size_t{0})));
        } else if (kind == "batchnorm") {
            spec.layers.push_back(LayerSpec::batchnorm());
        } else if (kind == "activation") {
            spec.layers.push_back(
                LayerSpec::act(activation_from_name(jl.at("activation").get<std::string>())));
        } else if (kind == "skip_add") {
            spec.layers.push_back(LayerSpec::skip_add(jl.at("source").get<int>()));
        } else {
            throw std::runtime_error("unknown layer kind: " + kind);
        }
    }
    return spec;
}

json policy_to_json(const ConstraintPolicy& policy) {
    json j;
    j["strategy"] = strategy_name(policy.strategy);
    j["epsilon"] = policy.epsilon;
    j["constrain_bn_gamma"] = policy.constrain_bn_gamma;
    return j;
}

ConstraintPolicy policy_from_json(const json& j) {
    ConstraintPolicy p;
    p.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    p.epsilon = j.value("epsilon", 5.0);
    p.constrain_bn_gamma = j.value("constrain_bn_gamma", true);
    p.validate();
    return p;
}

namespace {

constexpr int kFormatVersion = 1;

void write_tensor_block(std::ostream& os, std::size_t layer, const char* name, const Tensor& t) {
    if (t.empty()) return;
    os << "param " << layer << ' ' << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (i) os << ' ';
        os << format_g17(t[i]);
    }
    os << '\n';
}

}  // namespace

void save_model(const Model& model, const std::string& path,
                const std::optional<ConstraintPolicy>& policy) {
    json header;
    header["spec"] = spec_to_json(model.spec);
    header["constraint"] = policy ? policy_to_json(*policy) : json(nullptr);

    std::ostringstream body;
    body << "IOCNN " << kFormatVersion << '\n';
    body << header.dump() << '\n';
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const LayerParams& p = model.params[i];
        write_tensor_block(body, i, "W", p.W);
        write_tensor_block(body, i, "b", p.b);
        write_tensor_block(body, i, "gamma", p.gamma);
        write_tensor_block(body, i, "beta", p.beta);
        write_tensor_block(body, i, "running_mean", p.running_mean);
        write_tensor_block(body, i, "running_var", p.running_var);
    }
    const std::string bytes = body.str();
    const std::uint32_t crc = crc32(bytes.data(), bytes.size());

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << bytes << "crc32 " << std::hex << std::uppercase << crc << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    // The checksum line is the last non-empty line.
    std::size_t end = content.size();
    while (end > 0 && (content[end - 1] == '\n' || content[end - 1] == '\r')) --end;
    std::size_t line_start = content.rfind('\n', end == 0 ? 0 : end - 1);
    line_start = line_start == std::string::npos ? 0 : line_start + 1;
    std::istringstream crc_line(content.substr(line_start, end - line_start));
    std::string tag;
    std::uint32_t stored_crc = 0;
    crc_line >> tag >> std::hex >> stored_crc;
    if (tag != "crc32") throw ChecksumError("model file missing checksum line: " + path);

    const std::uint32_t actual = crc32(content.data(), line_start);
    if (actual != stored_crc)
        throw ChecksumError("model file checksum mismatch in " + path);

    std::istringstream body(content.substr(0, line_start));
    std::string magic;
    int version = -1;
    body >> magic >> version;
    if (magic != "IOCNN") throw std::runtime_error("not a model file: " + path);
    if (version != kFormatVersion)
        throw VersionError("unsupported model format version " + std::to_string(version));
    body.ignore();  // newline after version

    std::string header_line;
    std::getline(body, header_line);
    json header = json::parse(header_line);

    LoadedModel out;
    out.model.spec = spec_from_json(header.at("spec"));
    out.model.out_shapes = layer_output_shapes(out.model.spec);
    out.model.params.resize(out.model.spec.layers.size());
    out.model.weight_ordinal.assign(out.model.spec.layers.size(), 0);
    int ordinal = 0;
    for (std::size_t i = 0; i < out.model.spec.layers.size(); ++i) {
        LayerKind k = out.model.spec.layers[i].kind;
        if (k == LayerKind::dense || k == LayerKind::conv2d)
            out.model.weight_ordinal[i] = ++ordinal;
    }
    if (!header.at("constraint").is_null())
        out.policy = policy_from_json(header.at("constraint"));

    std::string word;
    while (body >> word) {
        if (word != "param") throw std::runtime_error("malformed model file near '" + word + "'");
        std::size_t layer, rows, cols;
        std::string name;
        body >> layer >> name >> rows >> cols;
        if (!body || layer >= out.model.params.size())
            throw std::runtime_error("malformed parameter block in " + path);
        Tensor t(rows, cols);
        for (std::size_t v = 0; v < t.size(); ++v) {
            body >> word;
            t[v] = parse_double(word);
        }
        LayerParams& p = out.model.params[layer];
        if (name == "W") p.W = std::move(t);
        else if (name == "b") p.b = std::move(t);
        else if (name == "gamma") p.gamma = std::move(t);
        else if (name == "beta") p.beta = std::move(t);
        else if (name == "running_mean") p.running_mean = std::move(t);
        else if (name == "running_var") p.running_var = std::move(t);
        else throw std::runtime_error("unknown parameter name '" + name + "' in " + path);
    }

    for (std::size_t i = 0; i < out.model.params.size(); ++i) {
        const Tensor& rv = out.model.params[i].running_var;
        for (std::size_t v = 0; v < rv.size(); ++v)
            if (!(rv[v] > 0.0))
                throw std::runtime_error("model file has non-positive running_var at layer " +
                                         std::to_string(i));
    }
    return out;
}

}  // namespace iocnn
