#include "lms/accounting.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lms {
namespace {

std::uint64_t u64(Index v) { return static_cast<std::uint64_t>(v); }

Index spatial_numel(const Shape& s) {
    Index n = 1;
    for (int i = 2; i < s.rank(); ++i) n *= s[i];
    return n;
}

Extents3 extents_of(const Shape& s) { return {s[2], s[3], s[4]}; }

// Shape-level replay of the forward pass. Every op appends a row; tensors are ids into `shapes`.
class Tracer {
   public:
    explicit Tracer(int precision_bytes) : bytes_(precision_bytes) {}

    int input(const Shape& s) { return new_tensor(s); }
    const Shape& shape(int id) const { return shapes_[static_cast<std::size_t>(id)]; }
    const std::vector<CostRow>& rows() const { return rows_; }
    std::vector<std::uint64_t> sizes() const {
        std::vector<std::uint64_t> out;
        for (const Shape& s : shapes_) out.push_back(u64(s.numel()) * static_cast<std::uint64_t>(bytes_));
        return out;
    }

    int conv(const ConvLayer& l, int x) {
        const Shape& s = shape(x);
        const Index od = (s[2] + 2 * l.pad - l.k) / l.stride + 1;
        const Index oh = (s[3] + 2 * l.pad - l.k) / l.stride + 1;
        const Index ow = (s[4] + 2 * l.pad - l.k) / l.stride + 1;
        const Shape out{s[0], l.cout, od, oh, ow};
        const std::uint64_t macs = u64(s[0]) * u64(l.cout) * u64(od * oh * ow) * u64((l.cin / l.groups) * l.k * l.k * l.k);
        return emit(l.name, l.groups == l.cin && l.groups > 1 ? "dwconv3d" : "conv3d", l.param_count(), macs, 0, out,
                    {x});
    }

    int conv_transpose(const ConvTransposeLayer& l, int x) {
        const Shape& s = shape(x);
        const Shape out{s[0], l.cout, 2 * s[2], 2 * s[3], 2 * s[4]};
        // One kernel tap lands on each output voxel.
        const std::uint64_t macs = u64(out.numel()) * u64(l.cin);
        return emit(l.name, "convtranspose3d", l.param_count(), macs, 0, out, {x});
    }

    int ghost(const GhostConv& g, int x) {
        if (g.dense) return conv(g.dense_conv(), x);
        const int primary = conv(g.primary(), x);
        const int cheap = conv(g.cheap(), primary);
        return concat(g.name + ".concat", {primary, cheap});
    }

    int norm(const GroupNormLayer& l, int x) {
        // Two statistics passes plus normalize and affine.
        return emit(l.name, "groupnorm", l.param_count(), 0, 4 * u64(shape(x).numel()), shape(x), {x});
    }

    int linear(const LinearLayer& l, int v) {
        const Shape& s = shape(v);
        return emit(l.name, "linear", l.param_count(), u64(s[0]) * u64(l.in) * u64(l.out), 0, Shape{s[0], l.out}, {v});
    }

    int pointwise(const std::string& name, const std::string& kind, std::vector<int> in, std::uint64_t per_element = 1) {
        const Shape out = shape(in.front());
        return emit(name, kind, 0, 0, per_element * u64(out.numel()), out, std::move(in));
    }

    int with_shape(const std::string& name, const std::string& kind, std::vector<int> in, const Shape& out,
                   std::uint64_t aux) {
        return emit(name, kind, 0, 0, aux, out, std::move(in));
    }

    int concat(const std::string& name, std::vector<int> parts) {
        Shape s = shape(parts.front());
        Index c = 0;
        for (int p : parts) c += shape(p)[1];
        const Shape out{s[0], c, s[2], s[3], s[4]};
        return emit(name, "concat", 0, 0, u64(out.numel()), out, std::move(parts));
    }

    int maxpool(const std::string& name, int x) {
        const Shape& s = shape(x);
        return emit(name, "maxpool3d", 0, 0, u64(s.numel()), Shape{s[0], s[1], s[2] / 2, s[3] / 2, s[4] / 2}, {x});
    }

    int resample(const std::string& name, int x, Extents3 e) {
        const Shape& s = shape(x);
        const Shape out{s[0], s[1], e.d, e.h, e.w};
        const bool copy = extents_of(s) == e;
        return emit(name, "trilinear", 0, 0, (copy ? 1 : 8) * u64(out.numel()), out, {x});
    }

    int softmax(const std::string& name, int x) { return pointwise(name, "softmax", {x}, 3); }

    int se(const SqueezeExcite& l, int x) {
        const Shape& s = shape(x);
        const int pooled = with_shape(l.name + ".pool", "gap3d", {x}, Shape{s[0], s[1]}, u64(s.numel()));
        const int h = pointwise(l.name + ".act", "silu", {linear(l.reduce(), pooled)});
        const int gate = pointwise(l.name + ".gate", "sigmoid", {linear(l.expand(), h)});
        return pointwise(l.name + ".scale", "mul", {x, gate});
    }

    int film(const FilmGenerator& l, int anchors, int x) {
        const Index b = shape(anchors)[0];
        const std::uint64_t macs = u64(b) * u64(3 * l.anchors) * u64(l.channels);
        const int gamma = emit(l.name + ".gamma", "linear", l.channels * 3 * l.anchors, macs, 0, Shape{b, l.channels},
                               {anchors});
        const int beta = emit(l.name + ".beta", "linear", l.channels * 3 * l.anchors, macs, 0, Shape{b, l.channels},
                              {anchors});
        return pointwise(l.name + ".apply", "film", {x, gamma, beta}, 2);
    }

   private:
    int new_tensor(const Shape& s) {
        shapes_.push_back(s);
        return static_cast<int>(shapes_.size()) - 1;
    }

    int emit(const std::string& name, const std::string& kind, Index params, std::uint64_t macs, std::uint64_t aux,
             const Shape& out, std::vector<int> inputs) {
        CostRow r;
        r.name = name;
        r.kind = kind;
        // Shared layers (the router controller serves two stages) own their parameters once.
        r.params = counted_.insert(name).second ? params : 0;
        r.macs = macs;
        r.aux_ops = aux;
        r.output = out;
        r.activ_bytes = u64(out.numel()) * static_cast<std::uint64_t>(bytes_);
        r.inputs = std::move(inputs);
        r.output_id = new_tensor(out);
        rows_.push_back(std::move(r));
        return rows_.back().output_id;
    }

    int bytes_;
    std::set<std::string> counted_;
    std::vector<Shape> shapes_;
    std::vector<CostRow> rows_;
};

struct Trace {
    Tracer tracer;
    int input = -1;
};

Trace trace_model(const Model& model, const Shape& input, int precision_bytes) {
    const ModelConfig& cfg = model.config();
    require_rank(input, 5, "cost input");
    if (input[0] < 1) throw_argument("cost input: batch must be positive");
    if (input[1] != cfg.in_channels) throw_shape("cost input: channel count differs from the config");
    check_input_extents(extents_of(input));
    if (precision_bytes != 4 && precision_bytes != 8) throw_argument("precision must be 4 or 8 bytes");

    Trace tr{Tracer(precision_bytes), -1};
    Tracer& t = tr.tracer;
    const int x = tr.input = t.input(input);

    const Stem& stem = model.stem();
    const int f0 = t.norm(stem.norm, t.ghost(stem.conv, x));

    std::optional<int> anchors;
    if (const auto& det = model.anchor_detector()) {
        int h = x;
        for (std::size_t i = 0; i < 3; ++i) {
            h = t.pointwise(det->convs[i].name + ".act", "silu", {t.norm(det->norms[i], t.conv(det->convs[i], h))});
        }
        const Shape& hs = t.shape(h);
        int v = t.with_shape("anchors.pool", "gap3d", {h}, Shape{hs[0], hs[1]}, u64(hs.numel()));
        v = t.pointwise(det->head.name + ".act", "silu", {t.linear(det->head.first(), v)});
        anchors = t.pointwise("anchors.sigmoid", "sigmoid", {t.linear(det->head.second(), v)});
    }

    int enc_in = f0;
    std::optional<int> texture;
    if (const auto& l = model.lspm()) {
        const int sm = t.pointwise("lspm.texture.act", "silu", {t.norm(l->smooth_norm, t.conv(l->smooth, f0))});
        const int diff = t.pointwise("lspm.texture.residual", "abs_diff", {sm, f0}, 2);
        texture = t.pointwise("lspm.texture.sigmoid", "sigmoid", {t.conv(l->texture_proj, diff)});
        int g = t.pointwise("lspm.gate.act1", "silu", {t.norm(l->gate_norm1, t.conv(l->gate_conv1, f0))});
        g = t.pointwise("lspm.gate.act2", "silu", {t.norm(l->gate_norm2, t.conv(l->gate_conv2, g))});
        g = t.pointwise("lspm.gate.sigmoid", "sigmoid", {t.conv(l->gate_collapse, g)});
        const int w = t.softmax("lspm.mixer.softmax", t.conv(l->mixer_logits, g));
        const int z1 = t.conv(l->expert1, f0);
        const int z2 = t.conv(l->expert2, f0);
        enc_in = t.pointwise("lspm.mixer.blend", "blend", {w, z1, z2}, 3);
    }

    std::array<int, 4> skips{};
    int h = enc_in;
    for (std::size_t i = 0; i < 4; ++i) {
        const EncoderStage& s = model.encoder().stages[i];
        int f = t.norm(s.conv_norm, t.ghost(s.conv, h));
        if (s.film) f = t.film(*s.film, *anchors, f);
        const Extents3 here = extents_of(t.shape(f));
        std::vector<int> blend_in;
        if (texture) blend_in.push_back(t.resample(s.se.name + ".route", *texture, here));
        const int detail = t.pointwise(s.detail.name + ".act", "silu", {t.norm(s.detail_norm, t.conv(s.detail, f))});
        const int smooth = t.conv(s.smooth, f);
        blend_in.push_back(detail);
        blend_in.push_back(smooth);
        const std::string stage = "encoder.stage" + std::to_string(i + 1);
        const int blended = t.pointwise(stage + ".blend", "blend", blend_in, 4);
        skips[i] = t.se(s.se, blended);
        h = s.pool ? t.maxpool(stage + ".pool", skips[i]) : skips[i];
    }

    const SkipFusion& fusion = model.skip_fusion();
    std::array<int, 4> aligned{};
    if (fusion.router) {
        for (std::size_t i = 0; i < 4; ++i) aligned[i] = t.conv(fusion.router->align[i], skips[i]);
    }

    const Decoder& dec = model.decoder();
    int d = t.conv(dec.bottleneck, skips[3]);
    for (std::size_t j = 0; j < 4; ++j) {
        const DecoderStage& s = dec.stages[j];
        const Extents3 target = s.output_extents(extents_of(t.shape(d)));
        const std::string tag = std::to_string(j + 1);
        int skip;
        if (fusion.plan[j].mode == SkipMode::kRouter) {
            const SkipRouter& r = *fusion.router;
            std::vector<int> res;
            for (std::size_t i = 0; i < 4; ++i) {
                res.push_back(t.resample("router.stage" + tag + ".resample" + std::to_string(i + 1), aligned[i], target));
            }
            int c = t.concat("router.stage" + tag + ".concat", res);
            c = t.pointwise("router.stage" + tag + ".act", "silu", {t.conv(r.controller1, c)});
            const int w = t.softmax("router.stage" + tag + ".softmax", t.conv(r.controller2, c));
            std::vector<int> mix_in{w};
            mix_in.insert(mix_in.end(), res.begin(), res.end());
            const int mixed = t.pointwise("router.stage" + tag + ".mix", "blend", mix_in, 8);
            skip = t.conv(r.proj[j], mixed);
        } else {
            const SkipSource src = fusion.plan[j].source;
            const int source = src == SkipSource::kStem ? f0 : skips[static_cast<std::size_t>(src) - 1];
            const ConvLayer& proj = fusion.single[j]->proj;
            skip = t.resample(proj.name + ".resample", t.conv(proj, source), target);
        }
        int u = s.upsample ? t.conv_transpose(s.up, d) : t.conv(s.up_pointwise, d);
        const std::string pre = "decoder.stage" + tag;
        if (s.spb) {
            const Shape us = t.shape(u);
            const Index k = model.config().anchors;
            const int pos = t.with_shape("decoder.spb" + tag + ".offsets", "position", {*anchors},
                                         Shape{us[0], k, us[2], us[3], us[4]}, 2 * u64(us[0] * k * spatial_numel(us)));
            u = t.pointwise(pre + ".spb_add", "add", {u, t.conv(*s.spb, pos)});
        }
        const int fused = t.conv(s.fuse, t.concat(pre + ".concat", {u, skip}));
        const int pi = t.softmax(pre + ".softmax", t.conv(s.gate, fused));
        const int f1 = t.pointwise(pre + ".path1.act", "silu", {t.norm(s.path1_norm, t.conv(s.path1, fused))});
        const int f2 = t.pointwise(pre + ".path2.act", "silu", {t.norm(s.path2_norm, t.ghost(s.path2, fused))});
        const int f3 = t.pointwise(pre + ".path3.act", "silu", {t.norm(s.path3_norm, t.conv(s.path3, fused))});
        const int gated = t.pointwise(pre + ".blend", "blend", {pi, f1, f2, f3}, 6);
        d = t.se(s.se, gated);
    }
    const int logits = t.conv(dec.head.proj, d);
    if (dec.head.upsample) {
        t.conv_transpose(dec.head.up, logits);
    } else {
        t.conv(dec.head.up_pointwise, logits);
    }
    return tr;
}

std::string dotted_prefix(const std::string& name, int depth) {
    std::size_t pos = 0;
    for (int i = 0; i < depth; ++i) {
        pos = name.find('.', pos);
        if (pos == std::string::npos) return name;
        if (i + 1 < depth) ++pos;
    }
    return name.substr(0, pos);
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

}  // namespace

Index CostReport::total_params() const {
    Index n = 0;
    for (const CostRow& r : rows) n += r.params;
    return n;
}

std::uint64_t CostReport::total_macs() const {
    std::uint64_t n = 0;
    for (const CostRow& r : rows) n += r.macs;
    return n;
}

std::uint64_t CostReport::total_aux_ops() const {
    std::uint64_t n = 0;
    for (const CostRow& r : rows) n += r.aux_ops;
    return n;
}

std::uint64_t CostReport::total_flops(FlopConvention c) const {
    return c == FlopConvention::kTwoPerMac ? 2 * total_macs() : total_macs();
}

Index CostReport::params(const std::string& prefix) const {
    Index n = 0;
    for (const CostRow& r : rows) {
        if (starts_with(r.name, prefix)) n += r.params;
    }
    return n;
}

std::uint64_t CostReport::macs(const std::string& prefix) const {
    std::uint64_t n = 0;
    for (const CostRow& r : rows) {
        if (starts_with(r.name, prefix)) n += r.macs;
    }
    return n;
}

std::vector<CostGroup> CostReport::groups(int depth) const {
    std::vector<CostGroup> out;
    std::map<std::string, std::size_t> where;
    for (const CostRow& r : rows) {
        const std::string key = dotted_prefix(r.name, depth);
        auto it = where.find(key);
        if (it == where.end()) {
            it = where.emplace(key, out.size()).first;
            out.push_back(CostGroup{key});
        }
        CostGroup& g = out[it->second];
        g.params += r.params;
        g.macs += r.macs;
        g.aux_ops += r.aux_ops;
    }
    return out;
}

std::uint64_t peak_live_bytes(const std::vector<std::uint64_t>& sizes, const std::vector<CostRow>& ops,
                              const std::vector<int>& pinned) {
    std::vector<int> last_use(sizes.size(), -1);
    std::vector<bool> produced(sizes.size(), false);
    for (std::size_t i = 0; i < ops.size(); ++i) {
        for (int in : ops[i].inputs) last_use[static_cast<std::size_t>(in)] = static_cast<int>(i);
        produced[static_cast<std::size_t>(ops[i].output_id)] = true;
    }
    for (int p : pinned) last_use[static_cast<std::size_t>(p)] = static_cast<int>(ops.size());

    std::uint64_t live = 0;
    for (std::size_t id = 0; id < sizes.size(); ++id) {
        if (!produced[id]) live += sizes[id];  // graph inputs are resident from the start
    }
    std::uint64_t peak = live;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        live += sizes[static_cast<std::size_t>(ops[i].output_id)];
        peak = std::max(peak, live);
        std::vector<int> seen;
        for (int in : ops[i].inputs) {
            if (last_use[static_cast<std::size_t>(in)] != static_cast<int>(i)) continue;
            if (std::find(seen.begin(), seen.end(), in) != seen.end()) continue;
            seen.push_back(in);
            live -= sizes[static_cast<std::size_t>(in)];
        }
    }
    return peak;
}

std::uint64_t CostReport::peak_activation_bytes() const {
    std::vector<std::uint64_t> sizes(rows.size() + 1, 0);
    sizes[0] = static_cast<std::uint64_t>(input.numel()) * static_cast<std::uint64_t>(precision_bytes);
    for (const CostRow& r : rows) sizes[static_cast<std::size_t>(r.output_id)] = r.activ_bytes;
    return peak_live_bytes(sizes, rows);
}

std::string CostReport::text() const {
    std::ostringstream os;
    os << "config " << fingerprint << "  input " << input.str() << "  activations " << precision_bytes * 8 << "-bit\n";
    os << std::left << std::setw(28) << "module" << std::right << std::setw(12) << "params" << std::setw(16) << "MACs"
       << std::setw(16) << "aux ops" << '\n';
    for (const CostGroup& g : groups()) {
        os << std::left << std::setw(28) << g.name << std::right << std::setw(12) << g.params << std::setw(16) << g.macs
           << std::setw(16) << g.aux_ops << '\n';
    }
    const auto giga = [](std::uint64_t v) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(3) << static_cast<double>(v) / 1e9;
        return s.str();
    };
    os << "total params        " << total_params() << '\n';
    os << "total MACs          " << total_macs() << '\n';
    os << "GFLOPs (2 per MAC)  " << giga(total_flops(FlopConvention::kTwoPerMac)) << '\n';
    os << "GFLOPs (1 per MAC)  " << giga(total_flops(FlopConvention::kOnePerMac)) << '\n';
    os << "aux ops (excluded)  " << total_aux_ops() << '\n';
    os << "peak activations    " << peak_activation_bytes() << " bytes (liveness estimate, not a measurement)\n";
    return os.str();
}

std::string CostReport::json() const {
    using nlohmann::json;
    json rows_json = json::array();
    for (const CostRow& r : rows) {
        std::vector<Index> out(r.output.dims().begin(), r.output.dims().end());
        rows_json.push_back({{"name", r.name},
                             {"kind", r.kind},
                             {"params", r.params},
                             {"macs", r.macs},
                             {"flops_2", r.flops(FlopConvention::kTwoPerMac)},
                             {"flops_1", r.flops(FlopConvention::kOnePerMac)},
                             {"aux_ops", r.aux_ops},
                             {"activ_bytes", r.activ_bytes},
                             {"output", out}});
    }
    json groups_json = json::array();
    for (const CostGroup& g : groups()) {
        groups_json.push_back({{"name", g.name}, {"params", g.params}, {"macs", g.macs}, {"aux_ops", g.aux_ops}});
    }
    std::vector<Index> in(input.dims().begin(), input.dims().end());
    json doc{{"fingerprint", fingerprint},
             {"input", in},
             {"precision_bytes", precision_bytes},
             {"rows", rows_json},
             {"groups", groups_json},
             {"totals",
              {{"params", total_params()},
               {"macs", total_macs()},
               {"flops", {{"mac=2flop", total_flops(FlopConvention::kTwoPerMac)},
                          {"mac=1flop", total_flops(FlopConvention::kOnePerMac)}}},
               {"aux_ops", total_aux_ops()},
               {"peak_activation_bytes", peak_activation_bytes()}}}};
    return doc.dump(2);
}

ParamBreakdown count_params(const Model& model) {
    const ParamStore& s = model.params();
    ParamBreakdown b;
    b.total = s.scalar_count();
    b.stem = s.scalar_count("stem.");
    b.anchors = s.scalar_count("anchors.");
    b.lspm = s.scalar_count("lspm.");
    b.lspm_texture = s.scalar_count("lspm.texture.");
    b.lspm_gate = s.scalar_count("lspm.gate.");
    b.lspm_mixer = s.scalar_count("lspm.mixer.");
    b.encoder = s.scalar_count("encoder.");
    b.router = s.scalar_count("router.");
    b.router_core = s.scalar_count("router.align") + s.scalar_count("router.controller");
    b.decoder = s.scalar_count("decoder.");
    return b;
}

CostReport count_costs(const Model& model, const Shape& input, int precision_bytes) {
    Trace tr = trace_model(model, input, precision_bytes);
    CostReport r;
    r.fingerprint = model.config().fingerprint();
    r.input = input;
    r.precision_bytes = precision_bytes;
    r.rows = tr.tracer.rows();
    return r;
}

std::uint64_t estimate_activation_memory(const Model& model, const Shape& input, int precision_bytes) {
    return count_costs(model, input, precision_bytes).peak_activation_bytes();
}

}  // namespace lms
