#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "concner/autograd.hpp"
#include "concner/corpus.hpp"
#include "concner/tensor.hpp"

namespace concner {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_len = 32;
  std::size_t label_count = 9;
  std::uint64_t init_seed = 1;
  double init_scale = 0.1;

  // Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

// All learnable tensors, in a fixed declaration order:
//   tok_emb [V,d], pos_emb [max_len,d],
//   layer<k>.{attn.wq,attn.bq,attn.wk,attn.bk,attn.wv,attn.bv,attn.wo,attn.bo,
//             ln1.gain,ln1.bias,ffn.w1,ffn.b1,ffn.w2,ffn.b2,ln2.gain,ln2.bias},
//   cls.weight [|Y|,d], cls.bias [|Y|].
struct ModelParams {
  EncoderConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t parameter_count() const noexcept;

  bool operator==(const ModelParams&) const = default;
};

// Names and shapes implied by a config, in declaration order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const EncoderConfig& config);

// Uniform in [-init_scale, init_scale] except layer-norm gains (1) and biases (0).
// Each tensor draws from its own (init_seed, name) stream.
ModelParams init_params(const EncoderConfig& config);

// Throws ArchitectureMismatch if names/shapes disagree with the config.
void check_params(const ModelParams& params);

// Row-major [batch, width] token ids with a validity mask (1 = real token).
struct PaddedBatch {
  std::size_t batch = 0;
  std::size_t width = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  static PaddedBatch from_sentences(const std::vector<std::vector<TokenId>>& sentences);
  std::size_t valid_count(std::size_t sentence) const;
};

// Model parameters placed on a tape (as variables when trainable, constants otherwise).
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params, bool trainable);

  struct Layer {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
    Var ln1_gain, ln1_bias;
    Var w1, b1, w2, b2;
    Var ln2_gain, ln2_bias;
  };

  Tape& tape() const { return *tape_; }
  const EncoderConfig& config() const { return config_; }
  const std::vector<Var>& vars() const { return vars_; }

  Var tok_emb, pos_emb;
  std::vector<Layer> layers;
  Var cls_weight, cls_bias;

 private:
  Tape* tape_;
  EncoderConfig config_;
  std::vector<Var> vars_;
};

// Hidden states of the unmasked tokens only, packed in batch order:
// sentence s owns rows [offsets[s], offsets[s+1]).
struct EncodedBatch {
  Var hidden;
  std::vector<std::size_t> offsets;

  std::size_t sentences() const noexcept { return offsets.size() - 1; }
  std::size_t tokens() const noexcept { return offsets.back(); }
};

// x_i = E[w_i] + P[i], then per block: self-attention (padded keys excluded)
// -> residual -> layer norm -> relu FFN -> residual -> layer norm.
EncodedBatch encode(const BoundModel& model, const PaddedBatch& batch);

// Average of each sentence's rows -> [sentences, d].
Var pool_sentences(const EncodedBatch& encoded);

// softmax(h W^T + b) per row -> [rows, |Y|].
Var classify(const BoundModel& model, Var hidden);

// ------------------------------------------------------------ value level

// Packed hidden states as in EncodedBatch.
struct HiddenStates {
  Tensor hidden;
  std::vector<std::size_t> offsets;
};

HiddenStates encode(const ModelParams& params, const PaddedBatch& batch);

// Mean of h's rows where mask is nonzero. Throws AllMasked.
Tensor pool_sentence(const Tensor& h, std::span<const std::uint8_t> mask);

// Label distribution for one hidden vector.
Tensor classify(const ModelParams& params, std::span<const double> h);

// Label distributions for every row of a [rows, d] matrix.
Tensor classify_rows(const ModelParams& params, const Tensor& hidden);

}  // namespace concner
