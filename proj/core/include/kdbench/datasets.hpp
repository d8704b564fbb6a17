#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdbench/rng.hpp"
#include "kdbench/tensor.hpp"

namespace kdbench {

// Isotropic Gaussian mixture with equal class priors. The Bayes-optimal
// classifier for this family is the nearest class mean, which makes the
// achievable accuracy ceiling computable by Monte Carlo.
struct GaussianMixtureSpec {
    int num_classes = 0;
    int dim = 0;
    std::vector<std::vector<double>> means;  // num_classes rows of length dim
    double covariance_scale = 1.0;           // shared isotropic covariance = scale * I
    double label_noise = 0.0;                // fraction of train labels resampled uniformly
    std::uint64_t seed = 0;

    // Throws DomainError on num_classes < 2, dim < 2, shape mismatch in means,
    // covariance_scale <= 0, or label_noise outside [0, 1 - 1/num_classes).
    void validate() const;
};

// Places class means uniformly at random on the sphere of the given radius.
GaussianMixtureSpec random_means_spec(int num_classes, int dim, double radius,
                                      double covariance_scale, double label_noise,
                                      std::uint64_t seed);

enum class SplitRole { Train, Val };

struct DatasetSplit {
    Tensor features;          // [n, dim]
    std::vector<int> labels;  // length n
    SplitRole role = SplitRole::Train;

    int size() const { return static_cast<int>(labels.size()); }
};

struct Dataset {
    DatasetSplit train;
    DatasetSplit val;
};

// Draws class-balanced samples; exactly floor(label_noise * n_train) train
// labels are resampled uniformly over all classes. Validation labels are
// noise free. Output is a pure function of (spec, n_train, n_val).
Dataset generate(const GaussianMixtureSpec& spec, int n_train, int n_val);

struct BayesEstimate {
    double accuracy = 0.0;
    double std_error = 0.0;
};

// Monte Carlo estimate of the accuracy of the Bayes-optimal classifier
// (argmax of class-conditional densities, ties to the lowest class index).
// Each draw reuses one noise vector across all classes, which reduces
// variance and makes the estimate exactly invariant to permuting class
// indices. Requires n_mc >= 10000.
BayesEstimate bayes_accuracy(const GaussianMixtureSpec& spec, long long n_mc);

struct MixupPair {
    Tensor features;                 // same shape as the inputs
    std::vector<double> soft_label;  // convex blend of the one-hot labels
};

// Blends with a fixed coefficient m in [0, 1]: m * (x1, y1) + (1-m) * (x2, y2).
MixupPair mixup_with(double m, const Tensor& x1, const Tensor& x2,
                     const std::vector<double>& y1, const std::vector<double>& y2);

// Draws m ~ Beta(alpha, alpha) from rng, then blends.
MixupPair mixup(const Tensor& x1, const Tensor& x2, const std::vector<double>& y1,
                const std::vector<double>& y2, double alpha, Rng& rng);

struct Batch {
    Tensor features;          // [b, dim]
    std::vector<int> labels;  // length b
};

// Iterates one epoch of the split in a seeded random order. The final short
// batch is kept, so every example appears exactly once per epoch. The split
// must outlive the stream.
class BatchStream {
  public:
    // Throws DomainError unless 0 < batch_size <= split.size().
    BatchStream(const DatasetSplit& split, int batch_size, std::uint64_t epoch_seed);

    std::optional<Batch> next();
    int batches_per_epoch() const;

  private:
    const DatasetSplit* split_;
    int batch_size_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
};

std::uint64_t epoch_seed(std::uint64_t batch_seed, long long epoch_index);

// Binary cache: magic + version + role + shape header, row-major float64
// features, int32 labels, little-endian. save is write-then-rename.
void save_split(const std::string& path, const DatasetSplit& split);
DatasetSplit load_split(const std::string& path);

}  // namespace kdbench
