#include "dtfixup/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "dtfixup/errors.hpp"

namespace dtfixup {

void EncoderConfig::validate() const {
    std::vector<std::string> errors;
    if (n_blocks < 1) errors.emplace_back("n_blocks must be >= 1");
    if (d_x < 1) errors.emplace_back("d_x must be >= 1");
    if (d_z < 1) errors.emplace_back("d_z must be >= 1");
    if (n_heads < 1) errors.emplace_back("n_heads must be >= 1");
    if (mlp_hidden < 1) errors.emplace_back("mlp_hidden must be >= 1");
    if (relational && n_relations < 1) errors.emplace_back("relational encoders need n_relations >= 1");
    if (errors.empty()) return;
    std::string msg = "invalid encoder config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ConfigError(msg);
}

// ---- RelationLabels ------------------------------------------------------

RelationLabels::RelationLabels(std::size_t n, std::vector<std::size_t> labels) : n_(n), labels_(std::move(labels)) {
    if (labels_.size() != n * n)
        throw DimensionError(fmt::format("relation labels: {} entries for a {}x{} grid", labels_.size(), n, n));
}

RelationLabels RelationLabels::uniform(std::size_t n, std::size_t label) {
    return {n, std::vector<std::size_t>(n * n, label)};
}

std::size_t RelationLabels::max_label() const {
    return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
}

RelationLabels RelationLabels::permuted(std::span<const std::size_t> perm) const {
    if (perm.size() != n_) throw DimensionError("relation labels: permutation length differs from n");
    std::vector<std::size_t> out(n_ * n_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j) out[i * n_ + j] = (*this)(perm[i], perm[j]);
    return {n_, std::move(out)};
}

// ---- parameters ----------------------------------------------------------

std::string_view param_kind_name(ParamKind kind) {
    switch (kind) {
    case ParamKind::Query: return "q";
    case ParamKind::Key: return "k";
    case ParamKind::Value: return "v";
    case ParamKind::Output: return "w";
    case ParamKind::OutputBias: return "w_bias";
    case ParamKind::Mlp1: return "w1";
    case ParamKind::Mlp1Bias: return "b1";
    case ParamKind::Mlp2: return "w2";
    case ParamKind::Mlp2Bias: return "b2";
    case ParamKind::LnGain: return "ln_gain";
    case ParamKind::LnBias: return "ln_bias";
    case ParamKind::RelKey: return "r_k";
    case ParamKind::RelValue: return "r_v";
    }
    return "?";
}

bool is_analysed_weight(ParamKind kind) {
    switch (kind) {
    case ParamKind::Query:
    case ParamKind::Key:
    case ParamKind::Value:
    case ParamKind::Output:
    case ParamKind::Mlp1:
    case ParamKind::Mlp2:
    case ParamKind::RelKey:
    case ParamKind::RelValue: return true;
    default: return false;
    }
}

Encoder::Encoder(EncoderConfig config) : config_(config) {
    config_.validate();
    const auto dx = config_.d_x, dz = config_.d_z, h = config_.n_heads, hid = config_.mlp_hidden;
    blocks_.resize(config_.n_blocks);
    for (auto& b : blocks_) {
        b.heads.resize(h, HeadParams{Tensor::zeros({dx, dz}), Tensor::zeros({dx, dz}), Tensor::zeros({dx, dz})});
        b.w = Tensor::zeros({h * dz, dx});
        b.w_bias = Tensor::zeros({dx});
        b.w1 = Tensor::zeros({dx, hid});
        b.b1 = Tensor::zeros({hid});
        b.w2 = Tensor::zeros({hid, dx});
        b.b2 = Tensor::zeros({dx});
        if (config_.use_layer_norm) {
            b.ln_attn = LayerNormParams{Tensor::full({dx}, 1.0), Tensor::zeros({dx})};
            b.ln_mlp = LayerNormParams{Tensor::full({dx}, 1.0), Tensor::zeros({dx})};
        }
    }
    if (config_.relational) {
        const std::size_t count = config_.share_relations ? 1 : config_.n_blocks;
        relations_.assign(count, RelationTables{Tensor::zeros({config_.n_relations, dz}),
                                                Tensor::zeros({config_.n_relations, dz})});
    }
}

const RelationTables& Encoder::relations_for(std::size_t block) const {
    if (relations_.empty()) throw UsageError("encoder has no relation tables");
    return relations_[relations_.size() == 1 ? 0 : block];
}

namespace {

template <class Ref, class Self>
std::vector<Ref> collect_params(Self& self) {
    std::vector<Ref> out;
    int layer = 0;
    for (auto& b : self.blocks()) {
        const int attn = layer, mlp = layer + 1;
        for (int h = 0; h < static_cast<int>(b.heads.size()); ++h) {
            out.push_back({ParamKind::Query, attn, h, &b.heads[h].q});
            out.push_back({ParamKind::Key, attn, h, &b.heads[h].k});
            out.push_back({ParamKind::Value, attn, h, &b.heads[h].v});
        }
        out.push_back({ParamKind::Output, attn, -1, &b.w});
        out.push_back({ParamKind::OutputBias, attn, -1, &b.w_bias});
        if (b.ln_attn) {
            out.push_back({ParamKind::LnGain, attn, -1, &b.ln_attn->gain});
            out.push_back({ParamKind::LnBias, attn, -1, &b.ln_attn->bias});
        }
        out.push_back({ParamKind::Mlp1, mlp, -1, &b.w1});
        out.push_back({ParamKind::Mlp1Bias, mlp, -1, &b.b1});
        out.push_back({ParamKind::Mlp2, mlp, -1, &b.w2});
        out.push_back({ParamKind::Mlp2Bias, mlp, -1, &b.b2});
        if (b.ln_mlp) {
            out.push_back({ParamKind::LnGain, mlp, -1, &b.ln_mlp->gain});
            out.push_back({ParamKind::LnBias, mlp, -1, &b.ln_mlp->bias});
        }
        layer += 2;
    }
    const bool shared = self.relation_tables().size() == 1;
    int block = 0;
    for (auto& t : self.relation_tables()) {
        const int l = shared ? -1 : 2 * block;
        out.push_back({ParamKind::RelKey, l, -1, &t.key});
        out.push_back({ParamKind::RelValue, l, -1, &t.value});
        ++block;
    }
    return out;
}

} // namespace

std::vector<ParamRef> Encoder::params() { return collect_params<ParamRef>(*this); }
std::vector<ConstParamRef> Encoder::params() const { return collect_params<ConstParamRef>(*this); }

std::size_t Encoder::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.tensor->size();
    return n;
}

Encoder Encoder::bind(Tape& tape) const {
    Encoder out = *this;
    for (auto& p : out.params()) *p.tensor = tape.leaf(*p.tensor);
    return out;
}

// ---- forward -------------------------------------------------------------

namespace {

void check_width(const Tensor& x, const EncoderConfig& config) {
    if (x.rank() != 2 || x.cols() != config.d_x)
        throw DimensionError(
            fmt::format("encoder input must be n x {}, got {}", config.d_x, shape_str(x.shape())));
}

// Shared body of both attention variants; `rel` adds the key/value offsets.
Tensor attention(const Tensor& x, const RelationMap* rel, const BlockParams& params, const EncoderConfig& config,
                 std::vector<Tensor>* attention_out) {
    check_width(x, config);
    const auto n = x.shape()[0];
    if (rel && rel->labels.n() != n)
        throw DimensionError(fmt::format("relation label grid is {}x{}, input has {} tokens", rel->labels.n(),
                                         rel->labels.n(), n));
    const double inv_temp = 1.0 / std::sqrt(static_cast<double>(config.d_z));

    std::vector<Tensor> heads;
    heads.reserve(params.heads.size());
    for (const auto& h : params.heads) {
        const Tensor q = matmul(x, h.q);
        Tensor logits = matmul(q, transpose(matmul(x, h.k)));
        if (rel) logits = add(logits, relation_gather(matmul(q, transpose(rel->tables.key)), rel->labels.flat()));
        const Tensor alpha = softmax_rows(scale(logits, inv_temp));
        if (attention_out) attention_out->push_back(alpha.detach());
        Tensor z = matmul(alpha, matmul(x, h.v));
        if (rel)
            z = add(z, matmul(relation_scatter(alpha, rel->labels.flat(), rel->tables.value.shape()[0]),
                              rel->tables.value));
        heads.push_back(std::move(z));
    }
    const Tensor cat = heads.size() == 1 ? heads.front() : concat_last(heads);
    return add(matmul(cat, params.w), params.w_bias);
}

} // namespace

Tensor attention_vanilla(const Tensor& x, const BlockParams& params, const EncoderConfig& config,
                         std::vector<Tensor>* attention_out) {
    return attention(x, nullptr, params, config, attention_out);
}

Tensor attention_relational(const Tensor& x, const RelationMap& rel, const BlockParams& params,
                            const EncoderConfig& config, std::vector<Tensor>* attention_out) {
    return attention(x, &rel, params, config, attention_out);
}

Tensor mlp_forward(const Tensor& x, const BlockParams& params) {
    return add(matmul(relu(add(matmul(x, params.w1), params.b1)), params.w2), params.b2);
}

Tensor block_forward(const Tensor& x, const BlockParams& params, const EncoderConfig& config,
                     const std::optional<RelationMap>& rel, Tensor* after_attention,
                     std::vector<Tensor>* attention_out) {
    if (config.relational && !rel) throw UsageError("relational block needs relation labels and tables");
    const Tensor a = rel ? attention_relational(x, *rel, params, config, attention_out)
                         : attention_vanilla(x, params, config, attention_out);
    Tensor h = add(x, a);
    if (config.use_layer_norm) {
        if (!params.ln_attn || !params.ln_mlp) throw UsageError("layer norm enabled but block has no LN parameters");
        h = layer_norm(h, params.ln_attn->gain, params.ln_attn->bias);
    }
    if (after_attention) *after_attention = h;
    Tensor y = add(h, mlp_forward(h, params));
    if (config.use_layer_norm) y = layer_norm(y, params.ln_mlp->gain, params.ln_mlp->bias);
    return y;
}

EncoderOutput encoder_forward(const Tensor& x, std::span<const BlockParams> stack, const EncoderConfig& config,
                              const RelationLabels* labels, std::span<const RelationTables> tables,
                              ForwardOptions options) {
    check_width(x, config);
    if (stack.size() != config.n_blocks)
        throw DimensionError(fmt::format("stack has {} blocks, config says {}", stack.size(), config.n_blocks));
    if (config.relational && !stack.empty()) {
        if (!labels) throw UsageError("relational encoder needs relation labels");
        if (tables.size() != 1 && tables.size() != stack.size())
            throw DimensionError("relation tables must be shared (1) or per block");
    }

    EncoderOutput out;
    out.y = x;
    std::vector<Tensor>* attn = options.keep_attention ? &out.attention : nullptr;
    for (std::size_t b = 0; b < stack.size(); ++b) {
        std::optional<RelationMap> rel;
        if (config.relational) rel.emplace(RelationMap{*labels, tables[tables.size() == 1 ? 0 : b]});
        Tensor mid;
        out.layer_inputs.push_back(out.y);
        Tensor next = block_forward(out.y, stack[b], config, rel, &mid, attn);
        out.hidden_norms.push_back(mid.norm());
        out.layer_inputs.push_back(mid);
        out.hidden_norms.push_back(next.norm());
        out.y = std::move(next);
    }
    return out;
}

EncoderOutput encoder_forward(const Tensor& x, const Encoder& encoder, const RelationLabels* labels,
                              ForwardOptions options) {
    return encoder_forward(x, encoder.blocks(), encoder.config(), labels, encoder.relation_tables(), options);
}

} // namespace dtfixup
