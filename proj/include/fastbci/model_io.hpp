#pragma once

// Model files: a binary tensor container ("FABM") plus a JSON sidecar holding
// the classifier spec and pretraining provenance.
//
//   magic "FABM" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims..., f64 values
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "fastbci/binary_io.hpp"
#include "fastbci/model.hpp"
#include "json.hpp"

namespace fastbci {

enum class PretrainStrategy { maml, transfer };

inline std::string_view to_string(PretrainStrategy s) { return s == PretrainStrategy::maml ? "maml" : "transfer"; }

inline PretrainStrategy parse_strategy(std::string_view text) {
    if (text == "maml") {
        return PretrainStrategy::maml;
    }
    if (text == "transfer") {
        return PretrainStrategy::transfer;
    }
    throw std::invalid_argument("unknown strategy '" + std::string(text) + "' (expected maml|transfer)");
}

struct Provenance {
    PretrainStrategy strategy = PretrainStrategy::transfer;
    int activity = 0;
    std::uint64_t seed = 0;
    /// Fine-tuning learning rate implied by pretraining (MAML inner-loop rate).
    double inner_lr = 0.0;
    std::string config_hash;
};

struct Model {
    ClassifierSpec spec;
    ParamSet params;
    Provenance provenance;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

inline nlohmann::json spec_to_json(const ClassifierSpec& s) {
    return {{"channels", s.channels},
            {"time_points", s.time_points},
            {"n_classes", s.n_classes},
            {"norm", to_string(s.norm)},
            {"dropout_p", s.dropout_p},
            {"temporal_filters", s.temporal_filters},
            {"temporal_kernel", s.temporal_kernel},
            {"depth_multiplier", s.depth_multiplier},
            {"separable_filters", s.separable_filters},
            {"separable_kernel", s.separable_kernel},
            {"pool1", s.pool1},
            {"pool2", s.pool2},
            {"norm_eps", s.norm_eps},
            {"bn_momentum", s.bn_momentum},
            {"elu_alpha", s.elu_alpha}};
}

inline ClassifierSpec spec_from_json(const nlohmann::json& j) {
    ClassifierSpec s;
    s.channels = j.value("channels", s.channels);
    s.time_points = j.value("time_points", s.time_points);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.norm = parse_norm_kind(j.value("norm", std::string(to_string(s.norm))));
    s.dropout_p = j.value("dropout_p", s.dropout_p);
    s.temporal_filters = j.value("temporal_filters", s.temporal_filters);
    s.temporal_kernel = j.value("temporal_kernel", s.temporal_kernel);
    s.depth_multiplier = j.value("depth_multiplier", s.depth_multiplier);
    s.separable_filters = j.value("separable_filters", s.separable_filters);
    s.separable_kernel = j.value("separable_kernel", s.separable_kernel);
    s.pool1 = j.value("pool1", s.pool1);
    s.pool2 = j.value("pool2", s.pool2);
    s.norm_eps = j.value("norm_eps", s.norm_eps);
    s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
    s.elu_alpha = j.value("elu_alpha", s.elu_alpha);
    s.validate();
    return s;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& model_file) {
    auto p = model_file;
    p += ".json";
    return p;
}

inline void write_tensors(std::ostream& out, const ParamSet& params) {
    out.write("FABM", 4);
    io::write_u32(out, kModelFormatVersion);
    const auto count = params.params().size() + params.buffers().size();
    io::write_u32(out, static_cast<std::uint32_t>(count));
    for (const auto* list : {&params.params(), &params.buffers()}) {
        for (const auto& [name, t] : *list) {
            io::write_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
            for (std::size_t d : t.shape()) {
                io::write_u32(out, static_cast<std::uint32_t>(d));
            }
            for (double v : t.data()) {
                io::write_f64(out, v);
            }
        }
    }
}

/// Reads tensors in file order. `is_buffer(name)` decides which entries are
/// non-trainable state.
template <class IsBuffer>
ParamSet read_tensors(std::istream& in, IsBuffer&& is_buffer) {
    char magic[4];
    io::read_exact(in, magic, 4, "magic");
    if (std::string_view(magic, 4) != "FABM") {
        throw FormatError("not a model file (bad magic)");
    }
    const std::uint32_t version = io::read_u32(in, "version");
    if (version != kModelFormatVersion) {
        throw FormatError("unsupported model format version " + std::to_string(version));
    }
    const std::uint32_t count = io::read_u32(in, "tensor count");
    ParamSet params;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = io::read_u32(in, "name length");
        if (name_len > 4096) {
            throw FormatError("implausible tensor name length");
        }
        std::string name(name_len, '\0');
        io::read_exact(in, name.data(), name_len, "tensor name");
        const std::uint32_t rank = io::read_u32(in, "rank");
        if (rank == 0 || rank > 8) {
            throw FormatError("implausible tensor rank for '" + name + "'");
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = io::read_u32(in, "dimension");
            if (d == 0) {
                throw FormatError("zero dimension in tensor '" + name + "'");
            }
        }
        const std::size_t n = shape_numel(shape);
        std::vector<unsigned char> bytes(n * 8);
        io::read_exact(in, reinterpret_cast<char*>(bytes.data()), bytes.size(), "tensor values");
        std::vector<double> values(n);
        io::decode_f64(bytes.data(), n, values.data());
        Tensor t(std::move(shape), std::move(values));
        if (is_buffer(name)) {
            params.add_buffer(std::move(name), std::move(t));
        } else {
            params.add(std::move(name), std::move(t));
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after last tensor");
    }
    return params;
}

inline nlohmann::json model_sidecar(const Model& model) {
    return {{"format", "FABM"},
            {"format_version", kModelFormatVersion},
            {"spec", spec_to_json(model.spec)},
            {"provenance",
             {{"strategy", to_string(model.provenance.strategy)},
              {"activity", model.provenance.activity},
              {"seed", model.provenance.seed},
              {"inner_lr", model.provenance.inner_lr},
              {"config_hash", model.provenance.config_hash}}},
            {"param_count", model.params.param_count()}};
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open " + path.string() + " for writing");
        }
        write_tensors(out, model.params);
    }
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    side << model_sidecar(model).dump(2) << '\n';
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream side(sidecar_path(path));
    if (!side) {
        throw std::runtime_error("missing model sidecar " + sidecar_path(path).string());
    }
    const auto meta = nlohmann::json::parse(side);
    Model m;
    m.spec = spec_from_json(meta.at("spec"));
    const auto& prov = meta.at("provenance");
    m.provenance.strategy = parse_strategy(prov.at("strategy").get<std::string>());
    m.provenance.activity = prov.value("activity", 0);
    m.provenance.seed = prov.value("seed", std::uint64_t{0});
    m.provenance.inner_lr = prov.value("inner_lr", 0.0);
    m.provenance.config_hash = prov.value("config_hash", std::string{});
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open model file " + path.string());
    }
    m.params = read_tensors(in, [](const std::string& name) {
        return name.ends_with(".running_mean") || name.ends_with(".running_var");
    });
    // Layout must match a freshly built classifier for this spec.
    Rng probe_rng(0);
    const ParamSet expected = build_classifier(m.spec, probe_rng);
    auto same_layout = [](const auto& a, const auto& b) {
        if (a.size() != b.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
                return false;
            }
        }
        return true;
    };
    if (!same_layout(m.params.params(), expected.params()) || !same_layout(m.params.buffers(), expected.buffers())) {
        throw FormatError("model tensors do not match the classifier spec in " + sidecar_path(path).string());
    }
    return m;
}

}  // namespace fastbci
