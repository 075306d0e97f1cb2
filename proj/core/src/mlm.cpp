#include "uat/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uat/error.hpp"
#include "uat/rng.hpp"

namespace uat {

namespace {

constexpr double kAttentionMaskValue = -1e9;

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<std::size_t> to_rows(std::span<const TokenId> tokens) {
  return {tokens.begin(), tokens.end()};
}

}  // namespace

// ---- MlmConfig ------------------------------------------------------------

void MlmConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, "MlmConfig: " + msg); };
  if (vocab_size < kMinVocabSize || vocab_size > kMaxVocabSize) {
    fail("vocab_size " + std::to_string(vocab_size) + " outside [" + std::to_string(kMinVocabSize) +
         ", " + std::to_string(kMaxVocabSize) + "]");
  }
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_ff == 0) fail("d_ff must be positive");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (!(layernorm_epsilon > 0)) fail("layernorm_epsilon must be positive");
}

nlohmann::json MlmConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"d_ff", d_ff},
          {"max_seq_len", max_seq_len},
          {"layernorm_epsilon", layernorm_epsilon},
          {"seed", seed}};
}

MlmConfig MlmConfig::from_json(const nlohmann::json& j) {
  MlmConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.layernorm_epsilon = j.at("layernorm_epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string_view context_mode_name(ContextMode mode) {
  return mode == ContextMode::kFull ? "full" : "left-only";
}

ContextMode parse_context_mode(std::string_view name) {
  if (name == "left-only" || name == "left") return ContextMode::kLeftOnly;
  if (name == "full") return ContextMode::kFull;
  throw Error(ErrorCode::kInvalidArgument, "unknown context mode '" + std::string(name) + "'");
}

// ---- MaskedLm -------------------------------------------------------------

template <typename T>
MaskedLm<T>::MaskedLm(const MlmConfig& config) : config_(config) {
  config_.validate();
  const std::size_t V = config_.vocab_size, d = config_.d_model, S = config_.max_seq_len,
                    ff = config_.d_ff;
  Rng rng = make_rng(config_.seed, "mlm.init");

  auto normal = [&](const std::string& name, Shape shape, double stddev) {
    Tensor<T> t = make_param(name, std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  };
  auto constant = [&](const std::string& name, Shape shape, T value) {
    Tensor<T> t = make_param(name, std::move(shape));
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
  };

  normal("embed.tokens", {V, d}, 0.02);
  normal("embed.positions", {S, d}, 0.02);
  const double proj_scale = 1.0 / std::sqrt(2.0 * double(std::max<std::size_t>(config_.n_layers, 1)));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    constant(p + "ln1.gamma", {d}, T(1));
    constant(p + "ln1.beta", {d}, T(0));
    for (const char* w : {"wq", "wk", "wv"}) {
      normal(p + "attn." + w, {d, d}, 1.0 / std::sqrt(double(d)));
      constant(p + "attn.b" + std::string(w + 1), {d}, T(0));
    }
    normal(p + "attn.wo", {d, d}, proj_scale / std::sqrt(double(d)));
    constant(p + "attn.bo", {d}, T(0));
    constant(p + "ln2.gamma", {d}, T(1));
    constant(p + "ln2.beta", {d}, T(0));
    normal(p + "ffn.w1", {d, ff}, 1.0 / std::sqrt(double(d)));
    constant(p + "ffn.b1", {ff}, T(0));
    normal(p + "ffn.w2", {ff, d}, proj_scale / std::sqrt(double(ff)));
    constant(p + "ffn.b2", {d}, T(0));
  }
  constant("final_ln.gamma", {d}, T(1));
  constant("final_ln.beta", {d}, T(0));
  constant("output.bias", {V}, T(0));
}

template <typename T>
MaskedLm<T>::MaskedLm(const MaskedLm& other) : config_(other.config_) {
  params_.reserve(other.params_.size());
  for (const auto& [name, t] : other.params_) params_.emplace_back(name, t.detach(t.requires_grad()));
}

template <typename T>
MaskedLm<T>& MaskedLm<T>::operator=(const MaskedLm& other) {
  if (this != &other) *this = MaskedLm(other);
  return *this;
}

template <typename T>
Tensor<T> MaskedLm<T>::make_param(const std::string& name, Shape shape) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
const Tensor<T>& MaskedLm<T>::parameter(std::string_view name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw Error(ErrorCode::kInvalidArgument, "no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::vector<Shape> MaskedLm<T>::expected_shapes() const {
  std::vector<Shape> out;
  for (const auto& [n, t] : params_) out.push_back(t.shape());
  return out;
}

template <typename T>
std::vector<std::string> MaskedLm<T>::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : params_) out.push_back(n);
  return out;
}

template <typename T>
void MaskedLm<T>::set_trainable(bool trainable) {
  for (auto& [n, t] : params_) {
    t.set_requires_grad(trainable);
    t.zero_grad();
  }
}

template <typename T>
template <typename U>
MaskedLm<U> MaskedLm<T>::cast() const {
  MaskedLm<U> out(config_);
  auto& dst = out.parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].second.data();
    auto d = dst[i].second.mutable_data();
    std::transform(src.begin(), src.end(), d.begin(), [](T v) { return static_cast<U>(v); });
  }
  return out;
}

template <typename T>
void MaskedLm<T>::check_length(std::size_t n, const char* op) const {
  if (n == 0) throw Error(ErrorCode::kEmptyInput, std::string(op) + ": empty token sequence");
  if (n > config_.max_seq_len) {
    throw Error(ErrorCode::kInvalidArgument, std::string(op) + ": sequence length " +
                                                 std::to_string(n) + " exceeds max_seq_len " +
                                                 std::to_string(config_.max_seq_len));
  }
}

template <typename T>
Tensor<T> MaskedLm<T>::word_embeddings(std::span<const TokenId> tokens, bool requires_grad) const {
  const auto rows = to_rows(tokens);
  return gather_rows(params_[0].second, std::span<const std::size_t>(rows)).detach(requires_grad);
}

template <typename T>
Tensor<T> MaskedLm<T>::hidden_states(const Tensor<T>& word_emb, std::span<const TokenId> tokens) const {
  const std::size_t n = tokens.size();
  check_length(n, "hidden_states");
  if (word_emb.rows() != n || word_emb.cols() != config_.d_model) {
    throw Error(ErrorCode::kShapeMismatch, "hidden_states: embeddings do not match token count");
  }
  const std::size_t d = config_.d_model, H = config_.n_heads, dh = d / H;
  const auto pos_rows = iota_rows(n);
  Tensor<T> x = add(word_emb, gather_rows(params_[1].second, std::span<const std::size_t>(pos_rows)));

  Tensor<T> key_mask;
  if (std::find(tokens.begin(), tokens.end(), kPadId) != tokens.end()) {
    std::vector<T> m(n * n, T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (tokens[j] == kPadId) m[i * n + j] = static_cast<T>(kAttentionMaskValue);
    key_mask = Tensor<T>::matrix(n, n, std::move(m));
  }

  const double eps = config_.layernorm_epsilon;
  const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
  std::size_t idx = 2;
  auto next = [&]() -> const Tensor<T>& { return params_[idx++].second; };
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const auto& g1 = next(); const auto& b1 = next();
    const auto& wq = next(); const auto& bq = next();
    const auto& wk = next(); const auto& bk = next();
    const auto& wv = next(); const auto& bv = next();
    const auto& wo = next(); const auto& bo = next();
    const auto& g2 = next(); const auto& b2 = next();
    const auto& w1 = next(); const auto& fb1 = next();
    const auto& w2 = next(); const auto& fb2 = next();

    Tensor<T> h = layer_norm(x, g1, b1, eps);
    Tensor<T> q = add_row(matmul(h, wq), bq);
    Tensor<T> k = add_row(matmul(h, wk), bk);
    Tensor<T> v = add_row(matmul(h, wv), bv);
    std::vector<Tensor<T>> heads;
    heads.reserve(H);
    for (std::size_t hd = 0; hd < H; ++hd) {
      Tensor<T> qh = slice_cols(q, hd * dh, dh);
      Tensor<T> kh = slice_cols(k, hd * dh, dh);
      Tensor<T> vh = slice_cols(v, hd * dh, dh);
      Tensor<T> scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
      if (key_mask.defined()) scores = add(scores, key_mask);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    Tensor<T> attn = H == 1 ? heads[0] : concat_cols(std::span<const Tensor<T>>(heads));
    x = add(x, add_row(matmul(attn, wo), bo));

    Tensor<T> h2 = layer_norm(x, g2, b2, eps);
    Tensor<T> f = add_row(matmul(gelu(add_row(matmul(h2, w1), fb1)), w2), fb2);
    x = add(x, f);
  }
  const auto& gf = next();
  const auto& bf = next();
  return layer_norm(x, gf, bf, eps);
}

template <typename T>
Tensor<T> MaskedLm<T>::hidden_states(std::span<const TokenId> tokens) const {
  check_length(tokens.size(), "hidden_states");
  return hidden_states(word_embeddings(tokens), tokens);
}

template <typename T>
Tensor<T> MaskedLm<T>::logits_at(const Tensor<T>& hidden, std::span<const std::size_t> rows) const {
  Tensor<T> sel = gather_rows(hidden, rows);
  return add_row(matmul_nt(sel, params_[0].second), params_.back().second);
}

template <typename T>
std::vector<double> MaskedLm<T>::predict_mask(std::span<const TokenId> tokens,
                                              std::size_t mask_pos) const {
  if (mask_pos >= tokens.size()) {
    throw Error(ErrorCode::kInvalidArgument, "predict_mask: mask_pos " + std::to_string(mask_pos) +
                                                 " out of range for length " +
                                                 std::to_string(tokens.size()));
  }
  if (tokens[mask_pos] != kMaskId) {
    throw Error(ErrorCode::kInvalidArgument,
                "predict_mask: token at mask_pos " + std::to_string(mask_pos) + " is not [mask]");
  }
  const std::size_t row = mask_pos;
  Tensor<T> logits = logits_at(hidden_states(tokens), std::span<const std::size_t>(&row, 1));
  auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(double(z[i]) - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

template <typename T>
double MaskedLm<T>::token_log_prob(std::span<const TokenId> tokens, std::size_t query_pos,
                                   TokenId target, Span span, std::vector<T>* grad_out) const {
  if (query_pos >= tokens.size()) {
    throw Error(ErrorCode::kInvalidArgument, "token_log_prob: query position out of range");
  }
  if (target >= config_.vocab_size) {
    throw Error(ErrorCode::kInvalidArgument, "token_log_prob: target id out of range");
  }
  if (grad_out && span.end > tokens.size()) {
    throw Error(ErrorCode::kInvalidArgument, "token_log_prob: span exceeds sequence");
  }
  if (grad_out && params_[0].second.requires_grad()) {
    throw Error(ErrorCode::kInvalidArgument, "token_log_prob: model is in training mode");
  }
  Tensor<T> emb = word_embeddings(tokens, grad_out != nullptr);
  const std::size_t row = query_pos;
  const std::size_t tgt = target;
  Tensor<T> logits = logits_at(hidden_states(emb, tokens), std::span<const std::size_t>(&row, 1));
  Tensor<T> ce = cross_entropy(logits, std::span<const std::size_t>(&tgt, 1));
  if (grad_out) {
    const std::size_t d = config_.d_model;
    grad_out->assign(span.size() * d, T(0));
    backward(ce);
    if (emb.has_grad()) {
      auto g = emb.grad();
      for (std::size_t i = 0; i < span.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) (*grad_out)[i * d + j] = -g[(span.begin + i) * d + j];
    }
  }
  return -double(ce.item());
}

template <typename T>
double MaskedLm<T>::token_log_prob_from_embeddings(const Tensor<T>& word_emb,
                                                   std::span<const TokenId> tokens,
                                                   std::size_t query_pos, TokenId target) const {
  const std::size_t row = query_pos;
  const std::size_t tgt = target;
  Tensor<T> logits = logits_at(hidden_states(word_emb, tokens), std::span<const std::size_t>(&row, 1));
  return -double(cross_entropy(logits, std::span<const std::size_t>(&tgt, 1)).item());
}

template <typename T>
std::vector<T> MaskedLm<T>::mask_grad(std::span<const TokenId> tokens, std::size_t mask_pos,
                                      TokenId target, Span span) const {
  if (span.empty()) throw Error(ErrorCode::kInvalidArgument, "mask_grad: empty span");
  if (span.end > tokens.size()) throw Error(ErrorCode::kInvalidArgument, "mask_grad: span out of bounds");
  if (mask_pos >= tokens.size() || tokens[mask_pos] != kMaskId) {
    throw Error(ErrorCode::kInvalidArgument, "mask_grad: no [mask] at mask_pos");
  }
  std::vector<T> grad;
  token_log_prob(tokens, mask_pos, target, span, &grad);
  for (T& g : grad) g = -g;
  return grad;
}

template <typename T>
std::vector<double> MaskedLm<T>::left_conditional_distribution(std::span<const TokenId> prefix) const {
  if (prefix.empty()) throw Error(ErrorCode::kEmptyInput, "left_conditional: empty prefix");
  const std::size_t keep = std::min(prefix.size(), config_.max_seq_len - 1);
  TokenIds input(prefix.end() - keep, prefix.end());
  input.push_back(kMaskId);
  return predict_mask(input, input.size() - 1);
}

template <typename T>
double MaskedLm<T>::left_conditional(std::span<const TokenId> prefix, TokenId next) const {
  if (next >= config_.vocab_size) {
    throw Error(ErrorCode::kInvalidArgument, "left_conditional: token id out of range");
  }
  return left_conditional_distribution(prefix)[next];
}

template <typename T>
std::vector<double> MaskedLm<T>::sentence_embedding(std::span<const TokenId> tokens) const {
  const auto n_real = std::count_if(tokens.begin(), tokens.end(), [](TokenId t) { return t != kPadId; });
  if (n_real == 0) throw Error(ErrorCode::kEmptyInput, "sentence_embedding: input has no non-pad tokens");
  Tensor<T> h = hidden_states(tokens);
  const std::size_t d = config_.d_model;
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == kPadId) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += h.data()[i * d + j];
  }
  for (double& v : out) v /= double(n_real);
  return out;
}

template <typename T>
double MaskedLm<T>::pseudo_perplexity(std::span<const TokenId> tokens) const {
  check_length(tokens.size(), "pseudo_perplexity");
  TokenIds work(tokens.begin(), tokens.end());
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == kPadId) continue;
    work[i] = kMaskId;
    total += token_log_prob(work, i, tokens[i]);
    work[i] = tokens[i];
    ++n;
  }
  if (n == 0) return 1.0;
  return std::exp(-total / double(n));
}

template class MaskedLm<float>;
template class MaskedLm<double>;
template MaskedLm<double> MaskedLm<float>::cast<double>() const;
template MaskedLm<float> MaskedLm<double>::cast<float>() const;
template MaskedLm<float> MaskedLm<float>::cast<float>() const;

// ---- training -------------------------------------------------------------

namespace {

std::vector<TokenIds> encode_corpus(const Vocabulary& vocab, std::span<const std::string> corpus,
                                    std::size_t max_len) {
  std::vector<TokenIds> out;
  for (const auto& line : corpus) {
    TokenIds ids = vocab.encode(line);
    if (ids.empty()) continue;
    if (ids.size() > max_len) ids.resize(max_len);
    out.push_back(std::move(ids));
  }
  return out;
}

// Picks masked positions: each independently with probability p, at least one.
std::vector<std::size_t> draw_mask_positions(std::size_t n, double p, Rng& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i)
    if (coin(rng)) pos.push_back(i);
  if (pos.empty()) pos.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  return pos;
}

}  // namespace

PretrainResult pretrain(const Vocabulary& vocab, std::span<const std::string> corpus,
                        MlmConfig config, const PretrainOptions& options) {
  if (!(options.mask_probability > 0 && options.mask_probability < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "pretrain: mask probability must be in (0, 1)");
  }
  if (options.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "pretrain: batch_size must be positive");
  config.vocab_size = vocab.size();
  auto lines = encode_corpus(vocab, corpus, config.max_seq_len);
  if (lines.empty()) throw Error(ErrorCode::kEmptyInput, "pretrain: corpus encodes to nothing");

  PretrainResult result{MlmModel(vocab, config), {}, 0};
  MaskedLm<float>& lm = result.model.lm;
  lm.set_trainable(true);
  std::vector<Tensor<float>> params;
  for (auto& [n, t] : lm.parameters()) params.push_back(t);
  AdamW opt(params, options.optimizer);
  const Tensor<float>& table = lm.parameters()[0].second;

  Rng rng = make_rng(options.seed, "pretrain");
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  bool done = false;
  for (std::size_t epoch = 0; epoch < options.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      double batch_loss = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const TokenIds& seq = lines[order[b]];
        auto masked = draw_mask_positions(seq.size(), options.mask_probability, rng);
        TokenIds input = seq;
        std::vector<std::size_t> targets;
        for (std::size_t p : masked) {
          targets.push_back(seq[p]);
          input[p] = kMaskId;
        }
        const auto rows = to_rows(input);
        Tensor<float> emb = gather_rows(table, std::span<const std::size_t>(rows));
        Tensor<float> logits = lm.logits_at(lm.hidden_states(emb, input), masked);
        Tensor<float> loss = scale(cross_entropy(logits, std::span<const std::size_t>(targets)),
                                   1.0f / float(stop - start));
        backward(loss);
        batch_loss += loss.item();
      }
      if (!std::isfinite(batch_loss)) {
        lm.set_trainable(false);
        throw Error(ErrorCode::kDivergence, "pretrain: loss became non-finite at epoch " +
                                                std::to_string(epoch) + " step " +
                                                std::to_string(result.steps));
      }
      opt.step();
      opt.zero_grad();
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++result.steps;
      if (options.max_steps && result.steps >= options.max_steps) {
        done = true;
        break;
      }
    }
    const double mean_loss = epoch_loss / double(std::max<std::size_t>(epoch_batches, 1));
    result.epoch_losses.push_back(mean_loss);
    if (options.on_epoch) options.on_epoch(epoch, mean_loss);
  }
  lm.set_trainable(false);
  for (const auto& [name, t] : lm.parameters())
    for (float v : t.data())
      if (!std::isfinite(v)) throw Error(ErrorCode::kDivergence, "pretrain: non-finite weight in " + name);

  result.model.metadata = {{"objective", "masked_lm"},
                           {"epochs", result.epoch_losses.size()},
                           {"steps", result.steps},
                           {"batch_size", options.batch_size},
                           {"mask_probability", options.mask_probability},
                           {"learning_rate", options.optimizer.learning_rate},
                           {"weight_decay", options.optimizer.weight_decay},
                           {"seed", options.seed},
                           {"epoch_losses", result.epoch_losses}};
  return result;
}

double masked_lm_loss(const MlmModel& model, std::span<const TokenIds> lines, double mask_probability,
                      std::uint64_t seed) {
  Rng rng = make_rng(seed, "masked_lm_loss");
  double total = 0;
  std::size_t count = 0;
  for (const auto& seq : lines) {
    if (seq.empty()) continue;
    auto masked = draw_mask_positions(seq.size(), mask_probability, rng);
    TokenIds input = seq;
    for (std::size_t p : masked) input[p] = kMaskId;
    for (std::size_t p : masked) {
      total -= model.lm.token_log_prob(input, p, seq[p]);
      ++count;
    }
  }
  return count ? total / double(count) : 0.0;
}

}  // namespace uat
