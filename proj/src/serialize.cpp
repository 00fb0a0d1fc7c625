#include "rpop/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rpop {

namespace {

static_assert(std::endian::native == std::endian::little, "RPOPv1 files are little-endian");

constexpr char kMagic[6] = {'R', 'P', 'O', 'P', 'v', '1'};

struct Writer {
    std::ofstream out;

    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw std::runtime_error("save: cannot open " + path);
    }

    void u32(uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
    void mat(const Mat<double>& m) {
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    }
    void vec(const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
};

struct Reader {
    std::ifstream in;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw std::runtime_error("load: cannot open " + p);
    }

    uint32_t u32() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw std::runtime_error("load: truncated file " + path);
        return v;
    }
    Mat<double> mat(int rows, int cols) {
        Mat<double> m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("load: truncated file " + path);
        return m;
    }
    std::vector<double> vec(int n) {
        std::vector<double> v(n);
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) throw std::runtime_error("load: truncated file " + path);
        return v;
    }
    void expect_eof() {
        in.peek();
        if (!in.eof()) throw std::runtime_error("load: trailing bytes in " + path);
    }
};

void write_header(Writer& w, const ModelConfig& c) {
    w.out.write(kMagic, sizeof kMagic);
    w.u32(static_cast<uint32_t>(c.layers));
    w.u32(static_cast<uint32_t>(c.heads));
    w.u32(static_cast<uint32_t>(c.d_model));
    w.u32(static_cast<uint32_t>(c.d_ffn));
    w.u32(static_cast<uint32_t>(c.tokens_per_obs));
    w.u32(static_cast<uint32_t>(c.vocab));
    w.u32(static_cast<uint32_t>(c.actions));
}

ModelConfig read_header(Reader& r) {
    char magic[6];
    r.in.read(magic, sizeof magic);
    if (!r.in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("load: " + r.path + " is not an RPOPv1 file");
    ModelConfig c;
    c.layers = static_cast<int>(r.u32());
    c.heads = static_cast<int>(r.u32());
    c.d_model = static_cast<int>(r.u32());
    c.d_ffn = static_cast<int>(r.u32());
    c.tokens_per_obs = static_cast<int>(r.u32());
    c.vocab = static_cast<int>(r.u32());
    c.actions = static_cast<int>(r.u32());
    c.d_embed = c.d_model;
    c.validate();
    return c;
}

void write_stack_body(Writer& w, const StackParams<double>& p) {
    for (const auto& l : p.layers) {
        for (const auto& h : l.msr.heads) {
            w.mat(h.w_q);
            w.mat(h.w_k);
            w.mat(h.w_v);
        }
        w.mat(l.msr.w_g);
        w.mat(l.msr.w_o);
        w.vec(l.msr.gn_scale);
        w.vec(l.msr.gn_shift);
        w.mat(l.ffn_w1);
        w.mat(l.ffn_w2);
        w.vec(l.ln1.scale);
        w.vec(l.ln1.shift);
        w.vec(l.ln2.scale);
        w.vec(l.ln2.shift);
    }
}

StackParams<double> read_stack_body(Reader& r, const ModelConfig& c) {
    StackParams<double> p;
    p.config = c;
    p.angles = RotationAngles::standard(c.d_head());
    p.layers.resize(c.layers);
    for (auto& l : p.layers) {
        l.msr.heads.resize(c.heads);
        for (int h = 0; h < c.heads; ++h) {
            l.msr.heads[h].w_q = r.mat(c.d_model, c.d_head());
            l.msr.heads[h].w_k = r.mat(c.d_model, c.d_head());
            l.msr.heads[h].w_v = r.mat(c.d_model, c.d_head());
            l.msr.heads[h].eta = head_eta(h);
        }
        l.msr.w_g = r.mat(c.d_model, c.d_model);
        l.msr.w_o = r.mat(c.d_model, c.d_model);
        l.msr.gn_scale = r.vec(c.d_model);
        l.msr.gn_shift = r.vec(c.d_model);
        l.ffn_w1 = r.mat(c.d_model, c.d_ffn);
        l.ffn_w2 = r.mat(c.d_ffn, c.d_model);
        l.ln1.scale = r.vec(c.d_model);
        l.ln1.shift = r.vec(c.d_model);
        l.ln2.scale = r.vec(c.d_model);
        l.ln2.shift = r.vec(c.d_model);
    }
    return p;
}

}  // namespace

void save_stack(const std::string& path, const StackParams<double>& stack) {
    Writer w(path);
    write_header(w, stack.config);
    write_stack_body(w, stack);
    if (!w.out) throw std::runtime_error("save_stack: write failed for " + path);
}

StackParams<double> load_stack(const std::string& path) {
    Reader r(path);
    ModelConfig c = read_header(r);
    auto p = read_stack_body(r, c);
    r.expect_eof();
    return p;
}

void save_bundle(const std::string& path, const WorldModel<double>& model) {
    Writer w(path);
    write_header(w, model.cfg);
    write_stack_body(w, model.stack);
    w.u32(static_cast<uint32_t>(model.cfg.d_embed));
    w.u32(static_cast<uint32_t>(model.cfg.reward_dim()));
    w.u32(static_cast<uint32_t>(model.cfg.blocks_per_chunk));
    w.u32(static_cast<uint32_t>(model.cfg.context_blocks));
    w.mat(model.codebook);
    w.mat(model.action_table);
    w.mat(model.pred_tokens);
    w.mat(model.obs_head);
    w.mat(model.reward_head);
    w.mat(model.done_head);
    w.mat(model.adapter);
    if (!w.out) throw std::runtime_error("save_bundle: write failed for " + path);
}

WorldModel<double> load_bundle(const std::string& path) {
    Reader r(path);
    ModelConfig c = read_header(r);
    auto stack = read_stack_body(r, c);
    c.d_embed = static_cast<int>(r.u32());
    const uint32_t reward_dim = r.u32();
    if (reward_dim != 1 && reward_dim != 3)
        throw std::runtime_error("load_bundle: unsupported reward head width in " + path);
    c.reward_mode = reward_dim == 3 ? RewardMode::categorical : RewardMode::mse;
    c.blocks_per_chunk = static_cast<int>(r.u32());
    c.context_blocks = static_cast<int>(r.u32());
    c.validate();

    WorldModel<double> m;
    m.cfg = c;
    m.stack = std::move(stack);
    m.stack.config = c;
    m.codebook = r.mat(c.vocab, c.d_embed);
    m.action_table = r.mat(c.actions, c.d_model);
    m.pred_tokens = r.mat(c.tokens_per_obs, c.d_model);
    m.obs_head = r.mat(c.d_model, c.vocab);
    m.reward_head = r.mat(c.d_model, static_cast<int>(reward_dim));
    m.done_head = r.mat(c.d_model, 2);
    m.adapter = r.mat(c.d_embed, c.d_model);
    r.expect_eof();
    return m;
}

void save_codebook(const std::string& path, const Codebook& cb) {
    Writer w(path);
    w.u32(static_cast<uint32_t>(cb.size()));
    w.u32(static_cast<uint32_t>(cb.dim()));
    w.mat(cb.vectors);
    if (!w.out) throw std::runtime_error("save_codebook: write failed for " + path);
}

Codebook load_codebook(const std::string& path) {
    Reader r(path);
    const int n = static_cast<int>(r.u32());
    const int d = static_cast<int>(r.u32());
    if (n < 2 || d < 1 || n > (1 << 24) || d > (1 << 20))
        throw std::runtime_error("load_codebook: implausible dimensions in " + path);
    auto vectors = r.mat(n, d);
    r.expect_eof();
    return make_codebook(std::move(vectors));
}

}  // namespace rpop
