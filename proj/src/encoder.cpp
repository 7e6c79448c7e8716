#include "concner/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "concner/error.hpp"
#include "concner/rng.hpp"

namespace concner {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void config_error(const char* field, const std::string& why) {
  throw Error(ErrorCode::ConfigError, std::string(field) + ": " + why);
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size < 2) config_error("vocab_size", "must be >= 2");
  if (embed_dim < 1) config_error("embed_dim", "must be >= 1");
  if (num_heads < 1) config_error("num_heads", "must be >= 1");
  if (embed_dim % num_heads != 0) config_error("embed_dim", "must be divisible by num_heads");
  if (ffn_dim < 1) config_error("ffn_dim", "must be >= 1");
  if (max_len < 1) config_error("max_len", "must be >= 1");
  if (label_count < 1) config_error("label_count", "must be >= 1");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
    config_error("init_scale", "must be finite and >= 0");
  }
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const EncoderConfig& c) {
  const std::size_t d = c.embed_dim;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"tok_emb", {c.vocab_size, d}});
  out.push_back({"pos_emb", {c.max_len, d}});
  for (std::size_t k = 0; k < c.num_layers; ++k) {
    const std::string p = "layer" + std::to_string(k) + ".";
    out.push_back({p + "attn.wq", {d, d}});
    out.push_back({p + "attn.bq", {d}});
    out.push_back({p + "attn.wk", {d, d}});
    out.push_back({p + "attn.bk", {d}});
    out.push_back({p + "attn.wv", {d, d}});
    out.push_back({p + "attn.bv", {d}});
    out.push_back({p + "attn.wo", {d, d}});
    out.push_back({p + "attn.bo", {d}});
    out.push_back({p + "ln1.gain", {d}});
    out.push_back({p + "ln1.bias", {d}});
    out.push_back({p + "ffn.w1", {d, c.ffn_dim}});
    out.push_back({p + "ffn.b1", {c.ffn_dim}});
    out.push_back({p + "ffn.w2", {c.ffn_dim, d}});
    out.push_back({p + "ffn.b2", {d}});
    out.push_back({p + "ln2.gain", {d}});
    out.push_back({p + "ln2.bias", {d}});
  }
  out.push_back({"cls.weight", {c.label_count, d}});
  out.push_back({"cls.bias", {c.label_count}});
  return out;
}

ModelParams init_params(const EncoderConfig& config) {
  config.validate();
  ModelParams params;
  params.config = config;
  for (auto& [name, shape] : parameter_layout(config)) {
    Tensor t(shape, 0.0);
    if (ends_with(name, "gain")) {
      std::fill(t.values().begin(), t.values().end(), 1.0);
    } else if (ends_with(name, "ln1.bias") || ends_with(name, "ln2.bias")) {
      // layer-norm shifts start at zero
    } else {
      Rng rng(config.init_seed, name);
      for (auto& v : t.values()) v = rng.uniform(-config.init_scale, config.init_scale);
    }
    params.names.push_back(name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

void check_params(const ModelParams& params) {
  const auto layout = parameter_layout(params.config);
  if (layout.size() != params.names.size() || params.names.size() != params.tensors.size()) {
    throw Error(ErrorCode::ArchitectureMismatch,
                "expected " + std::to_string(layout.size()) + " tensors, found " +
                    std::to_string(params.names.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params.names[i] || layout[i].second != params.tensors[i].shape()) {
      throw Error(ErrorCode::ArchitectureMismatch,
                  "tensor " + std::to_string(i) + ": expected " + layout[i].first +
                      shape_string(layout[i].second) + ", found " + params.names[i] +
                      shape_string(params.tensors[i].shape()));
    }
  }
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return tensors[i];
  }
  throw Error(ErrorCode::ArchitectureMismatch, "no parameter named " + name);
}

Tensor& ModelParams::at(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ModelParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

// ------------------------------------------------------------- batching

PaddedBatch PaddedBatch::from_sentences(const std::vector<std::vector<TokenId>>& sentences) {
  PaddedBatch b;
  b.batch = sentences.size();
  for (const auto& s : sentences) b.width = std::max(b.width, s.size());
  b.ids.assign(b.batch * b.width, Vocabulary::kPad);
  b.mask.assign(b.batch * b.width, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy(sentences[i].begin(), sentences[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.width));
    std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(i * b.width), sentences[i].size(), 1);
  }
  return b;
}

std::size_t PaddedBatch::valid_count(std::size_t sentence) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < width; ++j) n += mask[sentence * width + j] ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------- model

BoundModel::BoundModel(Tape& tape, const ModelParams& params, bool trainable)
    : tape_(&tape), config_(params.config) {
  check_params(params);
  for (const auto& t : params.tensors) {
    vars_.push_back(trainable ? tape.variable(t) : tape.constant(t));
  }
  std::size_t i = 0;
  tok_emb = vars_[i++];
  pos_emb = vars_[i++];
  for (std::size_t k = 0; k < config_.num_layers; ++k) {
    Layer l;
    for (Var* slot : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain,
                      &l.ln1_bias, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias}) {
      *slot = vars_[i++];
    }
    layers.push_back(l);
  }
  cls_weight = vars_[i++];
  cls_bias = vars_[i++];
}

namespace {

Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

}  // namespace

EncodedBatch encode(const BoundModel& model, const PaddedBatch& batch) {
  const EncoderConfig& cfg = model.config();
  if (batch.ids.size() != batch.batch * batch.width || batch.mask.size() != batch.ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "encode: padded batch arrays disagree with its shape");
  }
  if (batch.batch == 0) throw Error(ErrorCode::EmptyTensor, "encode: empty batch");

  // Positions after a sentence's last real token cannot influence any real
  // token (they are masked keys), so each sentence is run at its trimmed width.
  std::vector<std::size_t> width(batch.batch, 0);
  std::vector<std::size_t> tok_ids, pos_ids, packed;
  std::vector<std::size_t> row_start(batch.batch + 1, 0);
  EncodedBatch out;
  out.offsets.push_back(0);
  for (std::size_t s = 0; s < batch.batch; ++s) {
    for (std::size_t j = 0; j < batch.width; ++j) {
      if (batch.mask[s * batch.width + j]) width[s] = j + 1;
    }
    if (width[s] == 0) {
      throw Error(ErrorCode::AllMasked, "encode: sentence " + std::to_string(s) + " has no tokens");
    }
    if (width[s] > cfg.max_len) {
      throw Error(ErrorCode::SentenceTooLong, "encode: sentence " + std::to_string(s) +
                                                  " spans " + std::to_string(width[s]) +
                                                  " positions, max_len is " +
                                                  std::to_string(cfg.max_len));
    }
    row_start[s + 1] = row_start[s] + width[s];
    for (std::size_t j = 0; j < width[s]; ++j) {
      const bool real = batch.mask[s * batch.width + j] != 0;
      const TokenId id = real ? batch.ids[s * batch.width + j] : Vocabulary::kPad;
      if (id >= cfg.vocab_size) {
        throw Error(ErrorCode::IdOutOfRange, "encode: token id " + std::to_string(id) +
                                                 " >= vocab_size " +
                                                 std::to_string(cfg.vocab_size));
      }
      tok_ids.push_back(id);
      pos_ids.push_back(j);
      if (real) packed.push_back(row_start[s] + j);
    }
    out.offsets.push_back(packed.size());
  }

  Var x = add(gather_rows(model.tok_emb, tok_ids), gather_rows(model.pos_emb, pos_ids));

  const std::size_t d = cfg.embed_dim;
  const std::size_t head_dim = d / cfg.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // Key masks per sentence, expanded to [width, width].
  std::vector<std::vector<std::uint8_t>> key_exclude(batch.batch);
  for (std::size_t s = 0; s < batch.batch; ++s) {
    auto& ex = key_exclude[s];
    ex.assign(width[s] * width[s], 0);
    for (std::size_t q = 0; q < width[s]; ++q)
      for (std::size_t k = 0; k < width[s]; ++k) ex[q * width[s] + k] = batch.mask[s * batch.width + k] ? 0 : 1;
  }

  for (const auto& layer : model.layers) {
    Var q = linear(x, layer.wq, layer.bq);
    Var k = linear(x, layer.wk, layer.bk);
    Var v = linear(x, layer.wv, layer.bv);
    std::vector<Var> per_sentence;
    per_sentence.reserve(batch.batch);
    for (std::size_t s = 0; s < batch.batch; ++s) {
      Var qs = slice_rows(q, row_start[s], row_start[s + 1]);
      Var ks = slice_rows(k, row_start[s], row_start[s + 1]);
      Var vs = slice_rows(v, row_start[s], row_start[s + 1]);
      std::vector<Var> heads;
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        Var qh = cfg.num_heads == 1 ? qs : slice_cols(qs, h * head_dim, (h + 1) * head_dim);
        Var kh = cfg.num_heads == 1 ? ks : slice_cols(ks, h * head_dim, (h + 1) * head_dim);
        Var vh = cfg.num_heads == 1 ? vs : slice_cols(vs, h * head_dim, (h + 1) * head_dim);
        Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        Var attn = softmax_rows(scores, key_exclude[s]);
        heads.push_back(matmul(attn, vh));
      }
      per_sentence.push_back(heads.size() == 1 ? heads.front() : concat_cols(heads));
    }
    Var mixed = per_sentence.size() == 1 ? per_sentence.front() : concat_rows(per_sentence);
    x = layer_norm_rows(add(x, linear(mixed, layer.wo, layer.bo)), layer.ln1_gain, layer.ln1_bias);
    Var ffn = linear(relu(linear(x, layer.w1, layer.b1)), layer.w2, layer.b2);
    x = layer_norm_rows(add(x, ffn), layer.ln2_gain, layer.ln2_bias);
  }

  out.hidden = gather_rows(x, packed);
  return out;
}

Var pool_sentences(const EncodedBatch& encoded) {
  std::vector<Var> reps;
  reps.reserve(encoded.sentences());
  for (std::size_t s = 0; s < encoded.sentences(); ++s) {
    reps.push_back(mean_rows(slice_rows(encoded.hidden, encoded.offsets[s], encoded.offsets[s + 1])));
  }
  return concat_rows(reps);
}

Var classify(const BoundModel& model, Var hidden) {
  return softmax_rows(add(matmul(hidden, transpose(model.cls_weight)), model.cls_bias));
}

// ------------------------------------------------------------ value level

HiddenStates encode(const ModelParams& params, const PaddedBatch& batch) {
  Tape tape;
  BoundModel model(tape, params, false);
  EncodedBatch e = encode(model, batch);
  return {e.hidden.value(), e.offsets};
}

Tensor pool_sentence(const Tensor& h, std::span<const std::uint8_t> mask) {
  Tape tape;
  return mean_rows(tape.constant(h), mask).value();
}

Tensor classify(const ModelParams& params, std::span<const double> h) {
  Tensor row({1, h.size()}, std::vector<double>(h.begin(), h.end()));
  Tensor probs = classify_rows(params, row);
  return Tensor({probs.size()}, std::vector<double>(probs.values().begin(), probs.values().end()));
}

Tensor classify_rows(const ModelParams& params, const Tensor& hidden) {
  Tape tape;
  Var w = tape.constant(params.at("cls.weight"));
  Var b = tape.constant(params.at("cls.bias"));
  if (hidden.rank() != 2 || hidden.cols() != w.value().shape()[1]) {
    throw Error(ErrorCode::ShapeMismatch, "classify: hidden " + shape_string(hidden.shape()) +
                                              " vs classifier " + shape_string(w.shape()));
  }
  return softmax_rows(add(matmul(tape.constant(hidden), transpose(w)), b)).value();
}

}  // namespace concner
