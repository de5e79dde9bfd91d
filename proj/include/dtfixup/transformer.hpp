#pragma once

// Vanilla and relation-aware transformer encoder blocks.
//
// Each block is an attention layer followed by an MLP layer, so an encoder of
// N blocks has L = 2N layers. With use_layer_norm the block is post-LN:
//
//   y~ = LN(x + attn(x)),   y = LN(y~ + mlp(y~))
//
// and without it each layer is a bare residual update x + G(x).

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dtfixup/scheme.hpp"
#include "dtfixup/tensor.hpp"

namespace dtfixup {

struct EncoderConfig {
    std::size_t n_blocks = 1;
    std::size_t d_x = 8;
    std::size_t d_z = 8;
    std::size_t n_heads = 1;
    std::size_t mlp_hidden = 16;
    bool relational = false;
    bool use_layer_norm = false;
    std::size_t n_relations = 0;
    // One relation table pair for the whole model, or one per block.
    bool share_relations = true;

    std::size_t n_layers() const { return 2 * n_blocks; }
    // Throws ConfigError listing every violated constraint.
    void validate() const;
};

struct HeadParams {
    Tensor q, k, v;  // d_x x d_z each
};

struct LayerNormParams {
    Tensor gain, bias;  // d_x each
};

struct BlockParams {
    std::vector<HeadParams> heads;
    Tensor w;       // (H * d_z) x d_x, concatenated head outputs -> model width
    Tensor w_bias;  // d_x
    Tensor w1;      // d_x x mlp_hidden
    Tensor b1;      // mlp_hidden
    Tensor w2;      // mlp_hidden x d_x
    Tensor b2;      // d_x
    std::optional<LayerNormParams> ln_attn, ln_mlp;
};

struct RelationTables {
    Tensor key;    // r^k: n_relations x d_z
    Tensor value;  // r^v: n_relations x d_z
};

// Per-pair relation labels r_ij for one input sequence; row-major n x n.
class RelationLabels {
public:
    RelationLabels() = default;
    RelationLabels(std::size_t n, std::vector<std::size_t> labels);
    static RelationLabels uniform(std::size_t n, std::size_t label = 0);

    std::size_t n() const { return n_; }
    std::size_t operator()(std::size_t i, std::size_t j) const { return labels_[i * n_ + j]; }
    std::span<const std::size_t> flat() const { return labels_; }
    std::size_t max_label() const;
    // Relabel under a token permutation: out(i, j) = in(perm[i], perm[j]).
    RelationLabels permuted(std::span<const std::size_t> perm) const;

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> labels_;
};

// Labels plus the tables they index.
struct RelationMap {
    const RelationLabels& labels;
    const RelationTables& tables;
};

enum class ParamKind {
    Query,
    Key,
    Value,
    Output,
    OutputBias,
    Mlp1,
    Mlp1Bias,
    Mlp2,
    Mlp2Bias,
    LnGain,
    LnBias,
    RelKey,
    RelValue,
};

std::string_view param_kind_name(ParamKind kind);
// Weights the stability analysis covers (biases and LN parameters excluded).
bool is_analysed_weight(ParamKind kind);

struct ParamRef {
    ParamKind kind;
    int layer;  // 0-based layer index (2b attention, 2b+1 MLP); -1 for shared relation tables
    int head;   // head index for q/k/v, else -1
    Tensor* tensor;
};

struct ConstParamRef {
    ParamKind kind;
    int layer;
    int head;
    const Tensor* tensor;
};

class Encoder {
public:
    Encoder() = default;
    // All weights zero, LN gains one (when enabled).
    explicit Encoder(EncoderConfig config);

    const EncoderConfig& config() const { return config_; }
    std::vector<BlockParams>& blocks() { return blocks_; }
    const std::vector<BlockParams>& blocks() const { return blocks_; }
    std::vector<RelationTables>& relation_tables() { return relations_; }
    const std::vector<RelationTables>& relation_tables() const { return relations_; }
    const RelationTables& relations_for(std::size_t block) const;

    const std::optional<InitScheme>& scheme() const { return scheme_; }
    bool scaled() const { return scaled_; }
    void set_scheme(InitScheme scheme, bool scaled) {
        scheme_ = scheme;
        scaled_ = scaled;
    }

    // Every parameter tensor in a fixed order.
    std::vector<ParamRef> params();
    std::vector<ConstParamRef> params() const;
    std::size_t parameter_count() const;

    // Copy whose parameters are leaves on `tape`.
    Encoder bind(Tape& tape) const;

private:
    EncoderConfig config_;
    std::vector<BlockParams> blocks_;
    std::vector<RelationTables> relations_;
    std::optional<InitScheme> scheme_;
    bool scaled_ = false;
};

// Attention output before skip/LN: concat_h(alpha_h x v_h) w + w_bias.
// `attention_out`, when set, receives the row-stochastic alpha of every head.
Tensor attention_vanilla(const Tensor& x, const BlockParams& params, const EncoderConfig& config,
                         std::vector<Tensor>* attention_out = nullptr);
Tensor attention_relational(const Tensor& x, const RelationMap& rel, const BlockParams& params,
                            const EncoderConfig& config, std::vector<Tensor>* attention_out = nullptr);
Tensor mlp_forward(const Tensor& x, const BlockParams& params);

// One block. `after_attention`, when set, receives the hidden state between
// the two layers.
Tensor block_forward(const Tensor& x, const BlockParams& params, const EncoderConfig& config,
                     const std::optional<RelationMap>& rel = std::nullopt, Tensor* after_attention = nullptr,
                     std::vector<Tensor>* attention_out = nullptr);

struct EncoderOutput {
    Tensor y;
    std::vector<double> hidden_norms;  // ||x_{l+1}||_F after each of the L layers
    std::vector<Tensor> layer_inputs;  // x_l entering each layer (L entries)
    std::vector<Tensor> attention;     // alpha per attention layer and head, when requested
};

struct ForwardOptions {
    bool keep_attention = false;
};

EncoderOutput encoder_forward(const Tensor& x, const Encoder& encoder, const RelationLabels* labels = nullptr,
                              ForwardOptions options = {});
// Raw stack form. `tables` holds one entry (shared) or one per block; it is
// ignored for vanilla configs. An empty stack returns x unchanged.
EncoderOutput encoder_forward(const Tensor& x, std::span<const BlockParams> stack, const EncoderConfig& config,
                              const RelationLabels* labels, std::span<const RelationTables> tables,
                              ForwardOptions options = {});

} // namespace dtfixup
