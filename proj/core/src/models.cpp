#include "kdbench/models.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "binio.hpp"
#include "kdbench/errors.hpp"
#include "kdbench/rng.hpp"

namespace kdbench {

void MlpSpec::validate() const {
    if (input_dim < 1) throw DomainError("input_dim must be >= 1");
    if (hidden_widths.empty()) throw DomainError("at least one hidden layer is required");
    for (int w : hidden_widths)
        if (w < 1) throw DomainError("hidden widths must be >= 1");
    if (num_classes < 2) throw DomainError("num_classes must be >= 2");
}

bool MlpSpec::same_architecture(const MlpSpec& other) const {
    return input_dim == other.input_dim && hidden_widths == other.hidden_widths &&
           num_classes == other.num_classes;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (int l = 0; l < num_layers(); ++l) {
        const auto prefix = "layer" + std::to_string(l);
        out.emplace_back(prefix + ".weight", &weights[static_cast<std::size_t>(l)]);
        out.emplace_back(prefix + ".bias", &biases[static_cast<std::size_t>(l)]);
    }
    return out;
}

std::vector<Tensor*> ModelParams::trainable_tensors() {
    if (frozen) throw ContractError("frozen parameters are not trainable");
    std::vector<Tensor*> out;
    for (int l = 0; l < num_layers(); ++l) {
        out.push_back(&weights[static_cast<std::size_t>(l)]);
        out.push_back(&biases[static_cast<std::size_t>(l)]);
    }
    return out;
}

ModelParams init(const MlpSpec& spec) {
    spec.validate();
    ModelParams params;
    params.spec = spec;
    Rng rng(mix_seed(spec.init_seed, kStreamInit));
    std::vector<int> widths;
    widths.push_back(spec.input_dim);
    widths.insert(widths.end(), spec.hidden_widths.begin(), spec.hidden_widths.end());
    widths.push_back(spec.num_classes);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int fan_in = widths[l];
        const int fan_out = widths[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Tensor w = Tensor::zeros({fan_in, fan_out});
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
        params.weights.push_back(std::move(w));
        params.biases.push_back(Tensor::zeros({1, fan_out}));
    }
    return params;
}

Var forward(Tape& tape, ModelParams& params, Var x) {
    if (params.num_layers() == 0) throw ContractError("model has no layers");
    Var h = x;
    for (int l = 0; l < params.num_layers(); ++l) {
        auto& w = params.weights[static_cast<std::size_t>(l)];
        auto& b = params.biases[static_cast<std::size_t>(l)];
        Var wv, bv;
        if (params.frozen) {
            wv = tape.constant(w);
            bv = tape.constant(b);
        } else {
            w.requires_grad = true;
            b.requires_grad = true;
            wv = tape.leaf(w);
            bv = tape.leaf(b);
        }
        h = tape.linear(h, wv, bv);
        if (l + 1 < params.num_layers()) h = tape.relu(h);
    }
    return h;
}

Tensor forward_eval(const ModelParams& params, const Tensor& x) {
    if (params.num_layers() == 0) throw ContractError("model has no layers");
    if (x.shape.size() != 2) throw ShapeError("forward_eval expects a [batch, dim] tensor");
    Tensor h = x;
    for (int l = 0; l < params.num_layers(); ++l) {
        const auto& w = params.weights[static_cast<std::size_t>(l)];
        const auto& b = params.biases[static_cast<std::size_t>(l)];
        if (h.cols() != w.rows())
            throw ShapeError("layer " + std::to_string(l) + " expects width " + std::to_string(w.rows()));
        Tensor out = Tensor::zeros({h.rows(), w.cols()});
        for (int i = 0; i < h.rows(); ++i) {
            for (int k = 0; k < w.rows(); ++k) {
                const double a = h.at(i, k);
                if (a == 0.0) continue;
                for (int j = 0; j < w.cols(); ++j) out.at(i, j) += a * w.at(k, j);
            }
            for (int j = 0; j < w.cols(); ++j) out.at(i, j) += b.data[static_cast<std::size_t>(j)];
        }
        if (l + 1 < params.num_layers())
            for (auto& v : out.data) v = std::max(0.0, v);
        h = std::move(out);
    }
    return h;
}

double accuracy(const ModelParams& params, const DatasetSplit& split) {
    if (split.size() == 0) throw DomainError("accuracy needs a non-empty split");
    const Tensor logits = forward_eval(params, split.features);
    int hits = 0;
    for (int i = 0; i < split.size(); ++i) {
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (best == split.labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / split.size();
}

namespace {
constexpr char kCkptMagic[8] = {'K', 'D', 'B', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t) {
    binio::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) binio::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) binio::write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
    const auto rank = binio::read_u32(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(binio::read_u32(is));
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = binio::read_f64(is);
    return t;
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
        os.write(kCkptMagic, 8);
        binio::write_u32(os, kCkptVersion);
        binio::write_u32(os, static_cast<std::uint32_t>(params.spec.input_dim));
        binio::write_u32(os, static_cast<std::uint32_t>(params.spec.hidden_widths.size()));
        for (int w : params.spec.hidden_widths) binio::write_u32(os, static_cast<std::uint32_t>(w));
        binio::write_u32(os, static_cast<std::uint32_t>(params.spec.num_classes));
        binio::write_u64(os, params.spec.init_seed);
        binio::write_u8(os, params.frozen ? 1 : 0);
        binio::write_u32(os, static_cast<std::uint32_t>(params.num_layers()));
        for (int l = 0; l < params.num_layers(); ++l) {
            write_tensor(os, params.weights[static_cast<std::size_t>(l)]);
            write_tensor(os, params.biases[static_cast<std::size_t>(l)]);
        }
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path);
    binio::expect_magic(is, kCkptMagic, "checkpoint");
    const auto version = binio::read_u32(is);
    if (version != kCkptVersion) throw ConfigError("unsupported checkpoint version");
    ModelParams params;
    params.spec.input_dim = static_cast<int>(binio::read_u32(is));
    const auto n_hidden = binio::read_u32(is);
    params.spec.hidden_widths.resize(n_hidden);
    for (auto& w : params.spec.hidden_widths) w = static_cast<int>(binio::read_u32(is));
    params.spec.num_classes = static_cast<int>(binio::read_u32(is));
    params.spec.init_seed = binio::read_u64(is);
    params.frozen = binio::read_u8(is) != 0;
    const auto layers = binio::read_u32(is);
    for (std::uint32_t l = 0; l < layers; ++l) {
        params.weights.push_back(read_tensor(is));
        params.biases.push_back(read_tensor(is));
    }
    return params;
}

}  // namespace kdbench
