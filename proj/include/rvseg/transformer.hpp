#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "rvseg/ops.hpp"
#include "rvseg/rng.hpp"
#include "rvseg/tensor.hpp"

namespace rvseg {

// One pre-norm transformer block over token columns:
//
//   h   = x + MSA(LN1(x))
//   out = h + FFN(LN2(h))
//
// x is [D, T] (feature column per token). Attention keys at pad positions are
// excluded via the valid mask; pad *query* columns still produce values, but
// they never feed back into valid columns, which is what keeps the whole
// pipeline pad-invariant.
template <typename T>
struct TransformerBlockParams {
    int dim = 0;

    // Bias-free attention projections, all [D, D].
    Tensor<T> wq, wk, wv, wo;

    // Per-column layer norms.
    Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    // Position-wise FFN, D -> 4D -> D with biases.
    Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    static TransformerBlockParams init(int dim, Rng& rng);

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".wq", wq);
        f(prefix + ".wk", wk);
        f(prefix + ".wv", wv);
        f(prefix + ".wo", wo);
        f(prefix + ".ln1_gain", ln1_gain);
        f(prefix + ".ln1_bias", ln1_bias);
        f(prefix + ".ln2_gain", ln2_gain);
        f(prefix + ".ln2_bias", ln2_bias);
        f(prefix + ".ffn_w1", ffn_w1);
        f(prefix + ".ffn_b1", ffn_b1);
        f(prefix + ".ffn_w2", ffn_w2);
        f(prefix + ".ffn_b2", ffn_b2);
    }
};

// Masked multi-head self-attention on [D, T] columns. valid_keys has shape
// [T]; zero entries are excluded as attention targets. D must be divisible
// by heads; per-head scores are scaled by 1/sqrt(D/heads).
template <typename T>
Tensor<T> msa(const Tensor<T>& x, const TransformerBlockParams<T>& p, int heads,
              const Mask& valid_keys);

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                            int heads, const Mask& valid_keys);

// Vocabulary plus learned token/position embeddings.
//
// Vocab file format: one token per line; line 0 must be "<pad>" and line 1
// "<unk>". Lookup of an out-of-vocabulary word yields the <unk> id.
template <typename T>
struct TokenTable {
    std::vector<std::string> words;
    std::unordered_map<std::string, int64_t> index;
    Tensor<T> embedding;   // [V, D]
    Tensor<T> positional;  // [T_max, D]

    static TokenTable init(std::vector<std::string> vocab, int dim, int t_max, Rng& rng);

    int64_t vocab_size() const { return static_cast<int64_t>(words.size()); }
    int64_t dim() const { return embedding.extent(1); }
    int64_t t_max() const { return positional.extent(0); }
    int64_t id_of(const std::string& word) const;

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".embedding", embedding);
        f(prefix + ".positional", positional);
    }
};

// Reads a vocab file and validates the reserved first two lines.
std::vector<std::string> load_vocab(const std::string& path);

// Lowercased whitespace tokenization. Throws InputError if no tokens remain.
std::vector<std::string> tokenize(const std::string& text);

// A tokenized, embedded referring expression. ids/valid always have length
// T_max; the first n_valid entries are real tokens, the rest are pad.
template <typename T>
struct LanguageState {
    std::vector<int> ids;
    int64_t n_valid = 0;
    Mask valid;          // [T_max], 1 for real tokens
    Tensor<T> features;  // [D, T_max]
};

// Tokenizes, truncates to T_max, pads, and embeds. Positional embeddings are
// added at valid positions only, so pad columns carry exactly the pad
// embedding regardless of position.
template <typename T>
LanguageState<T> embed(const TokenTable<T>& table, const std::string& text);

// Embeds an explicit padded id vector (length T_max, first n_valid real).
// Exposed so tests can perturb pad-position ids directly.
template <typename T>
LanguageState<T> embed_ids(const TokenTable<T>& table, const std::vector<int>& ids,
                           int64_t n_valid);

#define RVSEG_DECLARE_TRANSFORMER(T)                                                     \
    extern template struct TransformerBlockParams<T>;                                    \
    extern template Tensor<T> msa<T>(const Tensor<T>&, const TransformerBlockParams<T>&, \
                                     int, const Mask&);                                  \
    extern template Tensor<T> transformer_block<T>(                                      \
        const Tensor<T>&, const TransformerBlockParams<T>&, int, const Mask&);           \
    extern template struct TokenTable<T>;                                                \
    extern template LanguageState<T> embed<T>(const TokenTable<T>&, const std::string&); \
    extern template LanguageState<T> embed_ids<T>(const TokenTable<T>&,                  \
                                                  const std::vector<int>&, int64_t);

RVSEG_DECLARE_TRANSFORMER(float)
RVSEG_DECLARE_TRANSFORMER(double)
#undef RVSEG_DECLARE_TRANSFORMER

}  // namespace rvseg
