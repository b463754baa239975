#include "rvseg/transformer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rvseg/errors.hpp"

namespace rvseg {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kEmbedStd = 0.02;
}  // namespace

template <typename T>
TransformerBlockParams<T> TransformerBlockParams<T>::init(int dim, Rng& rng) {
    if (dim <= 0) throw ContractError("transformer block dim must be positive");
    const auto std = static_cast<T>(kEmbedStd);
    TransformerBlockParams p;
    p.dim = dim;
    p.wq = Tensor<T>::randn({dim, dim}, rng, std);
    p.wk = Tensor<T>::randn({dim, dim}, rng, std);
    p.wv = Tensor<T>::randn({dim, dim}, rng, std);
    p.wo = Tensor<T>::randn({dim, dim}, rng, std);
    p.ln1_gain = Tensor<T>::ones({dim});
    p.ln1_bias = Tensor<T>::zeros({dim});
    p.ln2_gain = Tensor<T>::ones({dim});
    p.ln2_bias = Tensor<T>::zeros({dim});
    p.ffn_w1 = Tensor<T>::randn({4 * dim, dim}, rng, std);
    p.ffn_b1 = Tensor<T>::zeros({4 * dim});
    p.ffn_w2 = Tensor<T>::randn({dim, 4 * dim}, rng, std);
    p.ffn_b2 = Tensor<T>::zeros({dim});
    return p;
}

template <typename T>
Tensor<T> msa(const Tensor<T>& x, const TransformerBlockParams<T>& p, int heads,
              const Mask& valid_keys) {
    if (x.rank() != 2) throw ShapeError("msa expects [D,T], got " + shape_str(x.shape()));
    const int64_t d = x.extent(0);
    const int64_t t = x.extent(1);
    if (d != p.dim) throw ShapeError("msa: feature dim mismatch");
    if (heads <= 0 || d % heads != 0)
        throw ContractError("msa: dim " + std::to_string(d) + " not divisible by heads " +
                            std::to_string(heads));
    if (valid_keys.shape != Shape{t}) throw ShapeError("msa: valid mask must be [T]");

    const int64_t dh = d / heads;
    const T scale_f = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor<T> q = matmul(p.wq, x);
    const Tensor<T> k = matmul(p.wk, x);
    const Tensor<T> v = matmul(p.wv, x);

    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Tensor<T> qh = slice(q, 0, h * dh, dh);
        const Tensor<T> kh = slice(k, 0, h * dh, dh);
        const Tensor<T> vh = slice(v, 0, h * dh, dh);
        // scores[query, key]; pad keys are excluded from the normalization.
        const Tensor<T> scores = scale(matmul(transpose2d(qh), kh), scale_f);
        const Tensor<T> attn = softmax(scores, 1, valid_keys);
        head_outs.push_back(matmul(vh, transpose2d(attn)));
    }
    return matmul(p.wo, concat(head_outs, 0));
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockParams<T>& p,
                            int heads, const Mask& valid_keys) {
    const Tensor<T> normed1 =
        layer_norm_cols(x, p.ln1_gain, p.ln1_bias, static_cast<T>(kLnEps));
    const Tensor<T> h = add(x, msa(normed1, p, heads, valid_keys));
    const Tensor<T> normed2 =
        layer_norm_cols(h, p.ln2_gain, p.ln2_bias, static_cast<T>(kLnEps));
    const Tensor<T> mid = relu(add_row_bias(matmul(p.ffn_w1, normed2), p.ffn_b1));
    const Tensor<T> ffn = add_row_bias(matmul(p.ffn_w2, mid), p.ffn_b2);
    return add(h, ffn);
}

template <typename T>
TokenTable<T> TokenTable<T>::init(std::vector<std::string> vocab, int dim, int t_max,
                                  Rng& rng) {
    if (vocab.size() < 2 || vocab[0] != "<pad>" || vocab[1] != "<unk>")
        throw InputError("vocab must start with <pad>, <unk>");
    if (dim <= 0 || t_max <= 0) throw ContractError("token table dim/t_max must be positive");
    TokenTable table;
    table.words = std::move(vocab);
    for (size_t i = 0; i < table.words.size(); ++i) {
        const auto [it, fresh] = table.index.emplace(table.words[i], static_cast<int64_t>(i));
        if (!fresh) throw InputError("duplicate vocab entry: " + table.words[i]);
    }
    const auto v = static_cast<int64_t>(table.words.size());
    table.embedding = Tensor<T>::randn({v, dim}, rng, static_cast<T>(kEmbedStd));
    table.positional = Tensor<T>::randn({t_max, dim}, rng, static_cast<T>(kEmbedStd));
    return table;
}

template <typename T>
int64_t TokenTable<T>::id_of(const std::string& word) const {
    const auto it = index.find(word);
    return it == index.end() ? 1 : it->second;
}

std::vector<std::string> load_vocab(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open vocab file: " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        words.push_back(line);
    }
    if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>")
        throw IoError("vocab file must begin with <pad> and <unk> lines: " + path);
    return words;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream ss(lowered);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) throw InputError("empty referring expression");
    return tokens;
}

template <typename T>
LanguageState<T> embed_ids(const TokenTable<T>& table, const std::vector<int>& ids,
                           int64_t n_valid) {
    const int64_t t_max = table.t_max();
    if (static_cast<int64_t>(ids.size()) != t_max)
        throw ContractError("embed_ids: id vector must have length T_max");
    if (n_valid < 1 || n_valid > t_max)
        throw ContractError("embed_ids: n_valid out of range");
    LanguageState<T> state;
    state.ids = ids;
    state.n_valid = n_valid;
    state.valid = Mask::zeros({t_max});
    std::vector<T> valid_f(static_cast<size_t>(t_max), T(0));
    for (int64_t i = 0; i < n_valid; ++i) {
        state.valid.v[static_cast<size_t>(i)] = 1;
        valid_f[static_cast<size_t>(i)] = T(1);
    }
    const Tensor<T> tok_feats = embed_tokens(table.embedding, state.ids);  // [D, T]
    const Tensor<T> pos = transpose2d(table.positional);                   // [D, T]
    const Tensor<T> valid_row = Tensor<T>::from_data({t_max}, std::move(valid_f));
    state.features = add(tok_feats, mul(pos, valid_row));
    return state;
}

template <typename T>
LanguageState<T> embed(const TokenTable<T>& table, const std::string& text) {
    const auto tokens = tokenize(text);
    const int64_t t_max = table.t_max();
    const auto n_valid = std::min<int64_t>(static_cast<int64_t>(tokens.size()), t_max);
    std::vector<int> ids(static_cast<size_t>(t_max), 0);
    for (int64_t i = 0; i < n_valid; ++i)
        ids[static_cast<size_t>(i)] = static_cast<int>(table.id_of(tokens[static_cast<size_t>(i)]));
    return embed_ids(table, ids, n_valid);
}

#define RVSEG_INSTANTIATE_TRANSFORMER(T)                                          \
    template struct TransformerBlockParams<T>;                                    \
    template Tensor<T> msa<T>(const Tensor<T>&, const TransformerBlockParams<T>&, \
                              int, const Mask&);                                  \
    template Tensor<T> transformer_block<T>(                                      \
        const Tensor<T>&, const TransformerBlockParams<T>&, int, const Mask&);    \
    template struct TokenTable<T>;                                                \
    template LanguageState<T> embed<T>(const TokenTable<T>&, const std::string&); \
    template LanguageState<T> embed_ids<T>(const TokenTable<T>&,                  \
                                           const std::vector<int>&, int64_t);

RVSEG_INSTANTIATE_TRANSFORMER(float)
RVSEG_INSTANTIATE_TRANSFORMER(double)
#undef RVSEG_INSTANTIATE_TRANSFORMER

}  // namespace rvseg
