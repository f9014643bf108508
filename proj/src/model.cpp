#include "mome/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "mome/common.hpp"
#include "mome/rng.hpp"

namespace mome {

std::vector<std::array<double, 3>> make_query_refs(const ExperimentConfig& cfg) {
    const int n = cfg.model.queries;
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    Rng rng(mix_seed(cfg.train.seed, 0x9e3779b9ull));
    // normalized height of a near-ground anchor (1 m above the ground plane)
    const double z01 = (cfg.scene.ground_z + 1.0 - cfg.geometry.range.min[2]) /
                       cfg.geometry.range.extent(2);
    std::vector<std::array<double, 3>> refs;
    refs.reserve(static_cast<std::size_t>(n));
    const double lo = 0.06, hi = 0.94;
    for (int r = 0; r < side && static_cast<int>(refs.size()) < n; ++r)
        for (int c = 0; c < side && static_cast<int>(refs.size()) < n; ++c) {
            const double jx = rng.uniform(-0.3, 0.3);
            const double jy = rng.uniform(-0.3, 0.3);
            const double x = lo + (hi - lo) * (c + 0.5 + jx) / side;
            const double y = lo + (hi - lo) * (r + 0.5 + jy) / side;
            refs.push_back({x, y, z01});
        }
    return refs;
}

Model build_model(const ExperimentConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.rig = cfg.default_rig();
    m.query_refs = make_query_refs(cfg);

    Rng rng(mix_seed(cfg.train.seed, 0x5eedull));
    init_encoder_params(m.params, cfg.model.dim, rng);
    init_decoder_params(m.params, cfg.model, rng);
    init_head_params(m.params, cfg.model, rng);
    init_router_params(m.params, cfg.model, rng);

    // learnable query embeddings; reference points stored as a frozen
    // parameter so checkpoints carry them
    std::vector<double> embed(static_cast<std::size_t>(cfg.model.queries) * cfg.model.dim);
    for (double& v : embed) v = rng.normal(0.0, 0.1);
    m.params.add("query.embed", {cfg.model.queries, cfg.model.dim}, std::move(embed));
    std::vector<double> refs_flat;
    refs_flat.reserve(m.query_refs.size() * 3);
    for (const auto& r : m.query_refs) {
        refs_flat.push_back(r[0]);
        refs_flat.push_back(r[1]);
        refs_flat.push_back(r[2]);
    }
    m.params.add("query.ref", {cfg.model.queries, 3}, std::move(refs_flat), /*trainable=*/false);

    m.feat_pe = feature_pos_encoding(m.layout());
    m.query_pe = query_pos_encoding(m.query_refs, cfg.model.dim);
    return m;
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

bool get_u32(std::ifstream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return true;
}

bool get_u64(std::ifstream& in, std::uint64_t& v) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

bool get_f64(std::ifstream& in, double& v) {
    std::uint64_t bits;
    if (!get_u64(in, bits)) return false;
    std::memcpy(&v, &bits, 8);
    return true;
}

void write_record(std::ofstream& out, const std::string& name, const Shape& shape,
                  const std::vector<double>& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : data) put_f64(out, v);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("MOME", 4);
    put_u32(out, kCheckpointVersion);
    // reserved meta record carrying the resolved config hash (hi, lo halves)
    const std::uint64_t h = model.cfg.hash();
    write_record(out, "meta.config_hash", {2},
                 {static_cast<double>(h >> 32), static_cast<double>(h & 0xffffffffull)});
    for (const Param& p : model.params.all()) write_record(out, p.name, p.shape, p.value);
    if (!out) throw IoError("short write on checkpoint: " + path);
}

bool load_checkpoint(Model& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "MOME", 4) != 0)
        throw IoError("bad checkpoint magic in " + path);
    std::uint32_t version = 0;
    if (!get_u32(in, version) || version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path);

    bool hash_matches = true;
    std::vector<std::string> seen;
    for (;;) {
        std::uint32_t name_len = 0;
        if (!get_u32(in, name_len)) break;  // clean EOF
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw IoError("truncated checkpoint: " + path);
        std::uint32_t rank = 0;
        if (!get_u32(in, rank)) throw IoError("truncated checkpoint: " + path);
        Shape shape(rank);
        std::int64_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::uint64_t d = 0;
            if (!get_u64(in, d)) throw IoError("truncated checkpoint: " + path);
            shape[i] = static_cast<int>(d);
            count *= shape[i];
        }
        std::vector<double> data(static_cast<std::size_t>(count));
        for (auto& v : data)
            if (!get_f64(in, v)) throw IoError("truncated checkpoint: " + path);

        if (name.rfind("meta.", 0) == 0) {
            if (name == "meta.config_hash" && data.size() == 2) {
                const std::uint64_t h = (static_cast<std::uint64_t>(data[0]) << 32) |
                                        static_cast<std::uint64_t>(data[1]);
                hash_matches = (h == model.cfg.hash());
            }
            continue;
        }
        Param* p = model.params.find(name);
        if (p == nullptr) throw IoError("checkpoint parameter not in manifest: " + name);
        if (p->shape != shape)
            throw IoError("checkpoint shape mismatch for " + name + ": got " + shape_str(shape) +
                          ", expected " + shape_str(p->shape));
        p->value = std::move(data);
        seen.push_back(name);
    }
    for (const std::string& name : model.params.manifest()) {
        if (std::find(seen.begin(), seen.end(), name) == seen.end())
            throw IoError("checkpoint missing parameter: " + name);
    }
    // refresh derived state from the (frozen) reference-point parameter
    const Param& refs = model.params.at("query.ref");
    model.query_refs.resize(static_cast<std::size_t>(model.cfg.model.queries));
    for (int i = 0; i < model.cfg.model.queries; ++i)
        for (int a = 0; a < 3; ++a)
            model.query_refs[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] =
                refs.value[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(a)];
    model.query_pe = query_pos_encoding(model.query_refs, model.cfg.model.dim);
    if (!hash_matches)
        log_info("checkpoint " + path + " was written under a different config hash");
    return hash_matches;
}

}  // namespace mome
