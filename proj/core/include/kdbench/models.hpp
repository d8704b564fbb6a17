#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kdbench/datasets.hpp"
#include "kdbench/tape.hpp"
#include "kdbench/tensor.hpp"

namespace kdbench {

struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden_widths;
    int num_classes = 0;
    std::uint64_t init_seed = 0;

    // Throws DomainError on input_dim < 1, empty hidden_widths, any width < 1,
    // or num_classes < 2.
    void validate() const;
    bool same_architecture(const MlpSpec& other) const;
};

// Plain parameter storage: one weight [in, out] and one bias [out] per layer,
// in forward order. ReLU sits between layers; the last layer emits raw logits.
struct ModelParams {
    MlpSpec spec;
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    bool frozen = false;

    int num_layers() const { return static_cast<int>(weights.size()); }
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
    std::vector<Tensor*> trainable_tensors();  // ContractError if frozen
};

// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases,
// drawn from init_seed so the same spec always produces the same parameters.
ModelParams init(const MlpSpec& spec);

// Builds the compute graph for a batch. Frozen parameters enter as constants,
// trainable ones as leaves, so gradient state exists only when it can be used.
Var forward(Tape& tape, ModelParams& params, Var x);

// Graph-free forward for evaluation and teacher inference.
Tensor forward_eval(const ModelParams& params, const Tensor& x);

// Fraction of examples whose argmax logit (ties to the lowest index) matches
// the label.
double accuracy(const ModelParams& params, const DatasetSplit& split);

// Checkpoint: magic + version + spec + frozen flag + tensors, little-endian
// float64, exact-roundtrip. save is write-then-rename.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace kdbench
