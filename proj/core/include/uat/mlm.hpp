#pragma once

// Small pre-LN transformer-encoder masked language model.
//
// MaskedLm<T> is the network; MlmModel bundles a float network with its
// vocabulary and training metadata (what a checkpoint stores). Inference
// members are const and safe to call concurrently once parameters are frozen
// (set_trainable(false), the state after construction and after training).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "uat/optim.hpp"
#include "uat/tensor.hpp"
#include "uat/vocab.hpp"

namespace uat {

struct MlmConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 64;
  double layernorm_epsilon = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MlmConfig from_json(const nlohmann::json& j);
  bool operator==(const MlmConfig&) const = default;
};

// Half-open [begin, end) range of positions.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
};

// How a trigger token's conditional probability is queried.
enum class ContextMode {
  kLeftOnly,  // prefix ⊕ [mask]
  kFull,      // whole trigger with the queried position masked
};

std::string_view context_mode_name(ContextMode mode);
ContextMode parse_context_mode(std::string_view name);

template <typename T>
class MaskedLm {
 public:
  using Param = std::pair<std::string, Tensor<T>>;

  explicit MaskedLm(const MlmConfig& config);
  // Copies own their parameter storage.
  MaskedLm(const MaskedLm& other);
  MaskedLm& operator=(const MaskedLm& other);
  MaskedLm(MaskedLm&&) noexcept = default;
  MaskedLm& operator=(MaskedLm&&) noexcept = default;

  const MlmConfig& config() const { return config_; }
  // Parameters in declared order (the checkpoint manifest order).
  const std::vector<Param>& parameters() const { return params_; }
  std::vector<Param>& parameters() { return params_; }
  const Tensor<T>& parameter(std::string_view name) const;
  std::vector<Shape> expected_shapes() const;
  std::vector<std::string> parameter_names() const;

  void set_trainable(bool trainable);

  template <typename U>
  MaskedLm<U> cast() const;

  // Word embeddings of `tokens` as a fresh leaf tensor (n x d_model).
  Tensor<T> word_embeddings(std::span<const TokenId> tokens, bool requires_grad = false) const;
  // Final-layer hidden states (after the last layer norm), n x d_model.
  // `word_emb` carries the per-position word embeddings so callers can
  // differentiate with respect to (or perturb) them; positions and the pad
  // attention mask come from `tokens`.
  Tensor<T> hidden_states(const Tensor<T>& word_emb, std::span<const TokenId> tokens) const;
  Tensor<T> hidden_states(std::span<const TokenId> tokens) const;
  // Vocabulary logits at the given rows of `hidden` (tied output projection).
  Tensor<T> logits_at(const Tensor<T>& hidden, std::span<const std::size_t> rows) const;

  // Distribution over the vocabulary at mask_pos; tokens[mask_pos] must be [mask].
  std::vector<double> predict_mask(std::span<const TokenId> tokens, std::size_t mask_pos) const;

  // log p(target | tokens) at query_pos. When grad_out is non-null it receives
  // d log p / d(word embeddings) for the positions in `span`, row-major
  // (span.size() x d_model).
  double token_log_prob(std::span<const TokenId> tokens, std::size_t query_pos, TokenId target,
                        Span span = {}, std::vector<T>* grad_out = nullptr) const;
  // Same quantity evaluated on caller-supplied word embeddings (no grad).
  double token_log_prob_from_embeddings(const Tensor<T>& word_emb,
                                        std::span<const TokenId> tokens, std::size_t query_pos,
                                        TokenId target) const;

  // d CE(target at mask_pos) / d(word embeddings of span), span.size() x d_model.
  std::vector<T> mask_grad(std::span<const TokenId> tokens, std::size_t mask_pos, TokenId target,
                           Span span) const;

  // Probability of `next` following `prefix`, read at a trailing [mask].
  // Prefixes longer than max_seq_len - 1 keep their rightmost tokens.
  double left_conditional(std::span<const TokenId> prefix, TokenId next) const;
  std::vector<double> left_conditional_distribution(std::span<const TokenId> prefix) const;

  // Mean of final hidden states over non-pad positions.
  std::vector<double> sentence_embedding(std::span<const TokenId> tokens) const;

  // exp(-(1/n) sum_i log p(tokens[i] | tokens with i masked)) over non-pad i.
  double pseudo_perplexity(std::span<const TokenId> tokens) const;

 private:
  Tensor<T> make_param(const std::string& name, Shape shape);
  void check_length(std::size_t n, const char* op) const;

  MlmConfig config_;
  std::vector<Param> params_;
};

extern template class MaskedLm<float>;
extern template class MaskedLm<double>;

struct MlmModel {
  Vocabulary vocab;
  MaskedLm<float> lm;
  // Free-form training record written to the checkpoint header.
  nlohmann::json metadata = nlohmann::json::object();

  MlmModel(Vocabulary v, const MlmConfig& config) : vocab(std::move(v)), lm(config) {}
  MlmModel(Vocabulary v, MaskedLm<float> net) : vocab(std::move(v)), lm(std::move(net)) {}
  const MlmConfig& config() const { return lm.config(); }
};

inline constexpr double kDefaultMaskProbability = 0.15;

struct PretrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;   // sequences per optimizer step
  std::size_t max_steps = 0;     // 0 = no limit
  double mask_probability = kDefaultMaskProbability;
  AdamWOptions optimizer{};
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct PretrainResult {
  MlmModel model;
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
};

// Masked-token training from scratch on encoded corpus lines.
PretrainResult pretrain(const Vocabulary& vocab, std::span<const std::string> corpus,
                        MlmConfig config, const PretrainOptions& options);

// Mean masked-token cross-entropy of `lines` under a fixed masking draw.
double masked_lm_loss(const MlmModel& model, std::span<const TokenIds> lines, double mask_probability,
                      std::uint64_t seed);

}  // namespace uat
