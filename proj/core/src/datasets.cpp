#include "kdbench/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "binio.hpp"
#include "kdbench/errors.hpp"

namespace kdbench {

void GaussianMixtureSpec::validate() const {
    if (num_classes < 2) throw DomainError("num_classes must be >= 2");
    if (dim < 2) throw DomainError("dim must be >= 2");
    if (static_cast<int>(means.size()) != num_classes)
        throw DomainError("means must have one row per class");
    for (const auto& m : means)
        if (static_cast<int>(m.size()) != dim) throw DomainError("each class mean must have length dim");
    if (!(covariance_scale > 0.0)) throw DomainError("covariance_scale must be > 0");
    const double noise_cap = 1.0 - 1.0 / num_classes;
    if (label_noise < 0.0 || label_noise >= noise_cap)
        throw DomainError("label_noise must lie in [0, 1 - 1/num_classes)");
}

GaussianMixtureSpec random_means_spec(int num_classes, int dim, double radius,
                                      double covariance_scale, double label_noise,
                                      std::uint64_t seed) {
    if (!(radius > 0.0)) throw DomainError("mean radius must be > 0");
    GaussianMixtureSpec spec;
    spec.num_classes = num_classes;
    spec.dim = dim;
    spec.covariance_scale = covariance_scale;
    spec.label_noise = label_noise;
    spec.seed = seed;
    Rng rng(mix_seed(seed, "means"));
    spec.means.assign(static_cast<std::size_t>(std::max(num_classes, 0)), {});
    for (auto& mean : spec.means) {
        mean.resize(static_cast<std::size_t>(dim));
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (auto& v : mean) {
                v = rng.normal();
                norm2 += v * v;
            }
        } while (norm2 == 0.0);
        const double s = radius / std::sqrt(norm2);
        for (auto& v : mean) v *= s;
    }
    spec.validate();
    return spec;
}

namespace {

DatasetSplit draw_split(const GaussianMixtureSpec& spec, int n, SplitRole role, std::uint64_t stream) {
    DatasetSplit split;
    split.role = role;
    split.features = Tensor::zeros({n, spec.dim});
    split.labels.resize(static_cast<std::size_t>(n));
    Rng rng(stream);
    const double stddev = std::sqrt(spec.covariance_scale);
    for (int i = 0; i < n; ++i) {
        const int c = i % spec.num_classes;
        split.labels[static_cast<std::size_t>(i)] = c;
        for (int d = 0; d < spec.dim; ++d)
            split.features.at(i, d) = spec.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +
                                      stddev * rng.normal();
    }
    return split;
}

}  // namespace

Dataset generate(const GaussianMixtureSpec& spec, int n_train, int n_val) {
    spec.validate();
    if (n_train < 1 || n_val < 1) throw DomainError("split sizes must be >= 1");
    for (int a = 0; a < spec.num_classes; ++a)
        for (int b = a + 1; b < spec.num_classes; ++b)
            if (spec.means[static_cast<std::size_t>(a)] == spec.means[static_cast<std::size_t>(b)])
                throw DomainError("class means must be pairwise distinct");

    Dataset ds;
    ds.train = draw_split(spec, n_train, SplitRole::Train, mix_seed(spec.seed, "data/train"));
    ds.val = draw_split(spec, n_val, SplitRole::Val, mix_seed(spec.seed, "data/val"));

    const auto n_noisy = static_cast<int>(std::floor(spec.label_noise * n_train + 1e-9));
    if (n_noisy > 0) {
        Rng rng(mix_seed(spec.seed, "data/noise"));
        const auto victims = rng.sample_without_replacement(n_train, n_noisy);
        for (int idx : victims)
            ds.train.labels[static_cast<std::size_t>(idx)] = static_cast<int>(rng.below(spec.num_classes));
    }
    return ds;
}

BayesEstimate bayes_accuracy(const GaussianMixtureSpec& spec, long long n_mc) {
    spec.validate();
    if (n_mc < 10000) throw DomainError("n_mc must be >= 10000");

    const int k = spec.num_classes;
    const long long n_cycles = (n_mc + k - 1) / k;
    Rng rng(mix_seed(spec.seed, "bayes"));
    const double stddev = std::sqrt(spec.covariance_scale);
    std::vector<double> eps(static_cast<std::size_t>(spec.dim));
    std::vector<double> x(static_cast<std::size_t>(spec.dim));

    // One noise draw is shared by all k classes per cycle, so relabeling the
    // classes permutes terms inside each cycle sum without changing it.
    double sum = 0.0;
    double sum_sq = 0.0;
    for (long long cyc = 0; cyc < n_cycles; ++cyc) {
        for (auto& e : eps) e = stddev * rng.normal();
        int hits = 0;
        for (int c = 0; c < k; ++c) {
            for (int d = 0; d < spec.dim; ++d)
                x[static_cast<std::size_t>(d)] =
                    spec.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +
                    eps[static_cast<std::size_t>(d)];
            int best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                double dist2 = 0.0;
                for (int d = 0; d < spec.dim; ++d) {
                    const double diff =
                        x[static_cast<std::size_t>(d)] - spec.means[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
                    dist2 += diff * diff;
                }
                const double score = -dist2;
                if (score > best_score) {
                    best_score = score;
                    best = j;
                }
            }
            if (best == c) ++hits;
        }
        const double acc = static_cast<double>(hits) / k;
        sum += acc;
        sum_sq += acc * acc;
    }

    BayesEstimate est;
    est.accuracy = sum / static_cast<double>(n_cycles);
    if (n_cycles > 1) {
        const double var =
            std::max(0.0, (sum_sq - sum * sum / static_cast<double>(n_cycles)) / static_cast<double>(n_cycles - 1));
        est.std_error = std::sqrt(var / static_cast<double>(n_cycles));
    }
    return est;
}

MixupPair mixup_with(double m, const Tensor& x1, const Tensor& x2,
                     const std::vector<double>& y1, const std::vector<double>& y2) {
    if (!(m >= 0.0 && m <= 1.0)) throw DomainError("mixup coefficient must lie in [0, 1]");
    if (!x1.same_shape(x2)) throw ShapeError("mixup inputs must share a shape");
    if (y1.size() != y2.size()) throw ShapeError("mixup labels must share a length");
    MixupPair out;
    out.features = x1;
    for (std::size_t i = 0; i < out.features.data.size(); ++i)
        out.features.data[i] = m * x1.data[i] + (1.0 - m) * x2.data[i];
    out.soft_label.resize(y1.size());
    for (std::size_t i = 0; i < y1.size(); ++i) out.soft_label[i] = m * y1[i] + (1.0 - m) * y2[i];
    return out;
}

MixupPair mixup(const Tensor& x1, const Tensor& x2, const std::vector<double>& y1,
                const std::vector<double>& y2, double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw DomainError("mixup alpha must be > 0");
    return mixup_with(rng.beta(alpha, alpha), x1, x2, y1, y2);
}

BatchStream::BatchStream(const DatasetSplit& split, int batch_size, std::uint64_t eseed)
    : split_(&split), batch_size_(batch_size) {
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (batch_size > split.size()) throw DomainError("batch_size must not exceed the split size");
    Rng rng(eseed);
    order_ = rng.permutation(split.size());
}

int BatchStream::batches_per_epoch() const {
    return (split_->size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
    Batch batch;
    const int dim = split_->features.cols();
    batch.features = Tensor::zeros({static_cast<int>(take), dim});
    batch.labels.resize(take);
    for (std::size_t i = 0; i < take; ++i) {
        const int src = order_[cursor_ + i];
        batch.labels[i] = split_->labels[static_cast<std::size_t>(src)];
        for (int d = 0; d < dim; ++d) batch.features.at(static_cast<int>(i), d) = split_->features.at(src, d);
    }
    cursor_ += take;
    return batch;
}

std::uint64_t epoch_seed(std::uint64_t batch_seed, long long epoch_index) {
    return mix_seed(batch_seed, static_cast<std::uint64_t>(epoch_index) + 1);
}

namespace {
constexpr char kSplitMagic[8] = {'K', 'D', 'B', 'S', 'P', 'L', 'T', '\0'};
constexpr std::uint32_t kSplitVersion = 1;
}  // namespace

void save_split(const std::string& path, const DatasetSplit& split) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
        os.write(kSplitMagic, 8);
        binio::write_u32(os, kSplitVersion);
        binio::write_u8(os, split.role == SplitRole::Train ? 0 : 1);
        binio::write_u32(os, static_cast<std::uint32_t>(split.size()));
        binio::write_u32(os, static_cast<std::uint32_t>(split.features.cols()));
        for (double v : split.features.data) binio::write_f64(os, v);
        for (int v : split.labels) binio::write_i32(os, v);
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

DatasetSplit load_split(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path);
    binio::expect_magic(is, kSplitMagic, "dataset split");
    const auto version = binio::read_u32(is);
    if (version != kSplitVersion) throw ConfigError("unsupported dataset split version");
    DatasetSplit split;
    split.role = binio::read_u8(is) == 0 ? SplitRole::Train : SplitRole::Val;
    const auto n = static_cast<int>(binio::read_u32(is));
    const auto dim = static_cast<int>(binio::read_u32(is));
    split.features = Tensor::zeros({n, dim});
    for (auto& v : split.features.data) v = binio::read_f64(is);
    split.labels.resize(static_cast<std::size_t>(n));
    for (auto& v : split.labels) v = binio::read_i32(is);
    return split;
}

}  // namespace kdbench
