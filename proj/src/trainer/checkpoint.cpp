#include "lmvae/trainer/checkpoint.hpp"

#include <sstream>

#include "lmvae/autodiff/serialize.hpp"
#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::trainer {

std::size_t ModelState::expert_count() const {
    return policy == Policy::Expansion ? pool.size() : mixture.size();
}

vae::VaeExpert ModelState::expert(std::size_t i) const {
    return policy == Policy::Expansion ? pool.compose(i) : mixture.expert(i);
}

std::vector<std::size_t> ModelState::routable() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < expert_count(); ++i)
        if (policy != Policy::Mixture || mixture.assignment()[i]) out.push_back(i);
    return out;
}

mixture::MixtureState ModelState::routing_state() const {
    const auto ids = routable();
    if (ids.empty()) throw ContractError("no expert has been trained yet");
    std::vector<vae::VaeExpert> experts;
    for (auto i : ids) experts.push_back(expert(i));
    return mixture::MixtureState(std::move(experts));
}

ModelState build_model(const RunConfig& config, std::size_t input_width, Rng& rng) {
    ModelState m;
    m.policy = config.policy;
    const auto ec = config.expert_config(input_width);
    if (config.policy == Policy::Expansion) {
        m.pool = expansion::ExpansionPool(ec, config.threshold, rng);
        return m;
    }
    const std::size_t k = config.policy == Policy::Transfer ? 1 : config.experts;
    std::vector<vae::VaeExpert> experts;
    for (std::size_t i = 0; i < k; ++i) experts.emplace_back(i, ec, rng);
    m.mixture = mixture::MixtureState(std::move(experts), config.floor_e, config.penalty_u);
    return m;
}

RunConfig Checkpoint::config() const { return parse_config(config_ini, base_dir); }

std::string checkpoint_config_text(const RunConfig& config) {
    RunConfig c = config;
    c.output_dir.clear();
    c.stop_after_tasks = 0;
    return to_ini(c);
}

namespace {

void put_section(ByteWriter& out, const std::string& name, const ByteWriter& body) {
    out.str(name);
    out.u64(body.bytes().size());
    out.raw(std::span<const std::uint8_t>(body.bytes()));
}

void put_u8s(ByteWriter& w, const std::vector<std::uint8_t>& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    w.raw(std::span<const std::uint8_t>(v));
}

void put_f64s(ByteWriter& w, const std::vector<double>& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    w.f64s(v);
}

std::vector<std::uint8_t> get_u8s(ByteReader& r) {
    auto s = r.raw(r.u32());
    return {s.begin(), s.end()};
}

std::vector<double> get_f64s(ByteReader& r) {
    std::vector<double> v(r.u32());
    for (auto& x : v) x = r.f64();
    return v;
}

ad::MlpNetwork take(std::vector<ad::NamedNetwork>& nets, std::size_t& cursor, const std::string& name,
                    ByteReader& r) {
    if (cursor >= nets.size() || nets[cursor].name != name) r.fail("expected network '" + name + "'");
    return nets[cursor++].network;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    ByteWriter cfg;
    cfg.str(c.config_ini);
    cfg.str(c.base_dir);

    ByteWriter prog;
    prog.str(c.rng_state);
    prog.u64(c.completed);
    prog.u32(static_cast<std::uint32_t>(c.task_expert.size()));
    for (auto e : c.task_expert) prog.u32(static_cast<std::uint32_t>(e));
    prog.u32(static_cast<std::uint32_t>(c.freezes.size()));
    for (const auto& f : c.freezes) {
        prog.u64(f.task);
        prog.str(f.part);
        prog.u32(static_cast<std::uint32_t>(f.expert));
        prog.u64(f.digest);
    }
    prog.u64(c.log_offset);

    ByteWriter model;
    std::vector<ad::NamedNetwork> nets;
    const auto& m = c.model;
    model.u8(static_cast<std::uint8_t>(m.policy));
    if (m.policy == Policy::Expansion) {
        model.u32(static_cast<std::uint32_t>(m.pool.config().input_width));
        model.f64(m.pool.threshold());
        model.u8(m.pool.shared_frozen() ? 1 : 0);
        model.u32(static_cast<std::uint32_t>(m.pool.size()));
        nets.push_back({"shared.encoder", m.pool.shared_encoder()});
        nets.push_back({"shared.decoder", m.pool.shared_decoder()});
        for (std::size_t i = 0; i < m.pool.size(); ++i) {
            const auto& s = m.pool.specific(i);
            const auto p = "head" + std::to_string(i);
            nets.push_back({p + ".encoder", s.encoder_head});
            nets.push_back({p + ".decoder", s.decoder_head});
            if (!s.class_encoder.empty()) nets.push_back({p + ".class", s.class_encoder});
        }
    } else {
        const auto& s = m.mixture;
        model.f64(s.floor_e());
        model.f64(s.penalty_u());
        model.u32(static_cast<std::uint32_t>(s.size()));
        for (const auto& e : s.experts()) {
            model.u32(static_cast<std::uint32_t>(e.index()));
            model.u32(static_cast<std::uint32_t>(e.latent_width()));
            model.u8(e.frozen() ? 1 : 0);
            const auto p = "expert" + std::to_string(e.index());
            nets.push_back({p + ".encoder", e.encoder()});
            nets.push_back({p + ".decoder", e.decoder()});
            if (e.has_class_encoder()) nets.push_back({p + ".class", e.class_encoder()});
        }
        put_u8s(model, s.assignment());
        put_u8s(model, s.previous());
        put_f64s(model, s.dirichlet());
        put_f64s(model, s.weights());
    }
    ByteWriter params;
    ad::write_networks(params, nets);

    ByteWriter out;
    out.raw("LMVC");
    out.u32(c.version);
    out.u32(4);
    put_section(out, "config", cfg);
    put_section(out, "progress", prog);
    put_section(out, "model", model);
    put_section(out, "networks", params);
    return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    auto magic = r.raw(4);
    if (std::string(magic.begin(), magic.end()) != "LMVC") {
        ByteReader at(bytes, context);
        at.fail("bad magic, not a checkpoint");
    }
    Checkpoint c;
    c.version = r.u32();
    if (c.version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(c.version));
    const auto sections = r.u32();
    std::span<const std::uint8_t> cfg, prog, model, params;
    for (std::uint32_t i = 0; i < sections; ++i) {
        const auto name = r.str();
        const auto len = r.u64();
        if (len > r.remaining()) r.fail("section '" + name + "' overruns the file");
        auto body = r.raw(len);
        if (name == "config") cfg = body;
        else if (name == "progress") prog = body;
        else if (name == "model") model = body;
        else if (name == "networks") params = body;
    }
    if (cfg.empty() || prog.empty() || model.empty() || params.empty()) r.fail("missing checkpoint section");

    ByteReader rc(cfg, context + " [config]");
    c.config_ini = rc.str();
    c.base_dir = rc.str();
    const RunConfig config = c.config();

    ByteReader rp(prog, context + " [progress]");
    c.rng_state = rp.str();
    c.completed = rp.u64();
    c.task_expert.resize(rp.u32());
    for (auto& e : c.task_expert) e = rp.u32();
    c.freezes.resize(rp.u32());
    for (auto& f : c.freezes) {
        f.task = rp.u64();
        f.part = rp.str();
        f.expert = rp.u32();
        f.digest = rp.u64();
    }
    c.log_offset = rp.u64();

    ByteReader rn(params, context + " [networks]");
    auto nets = ad::read_networks(rn);
    std::size_t cursor = 0;

    ByteReader rm(model, context + " [model]");
    auto& m = c.model;
    const auto policy = rm.u8();
    if (policy > 2) rm.fail("unknown policy tag " + std::to_string(policy));
    m.policy = static_cast<Policy>(policy);
    if (m.policy != config.policy) rm.fail("policy disagrees with the stored configuration");
    if (m.policy == Policy::Expansion) {
        const std::size_t width = rm.u32();
        const double threshold = rm.f64();
        const bool shared_frozen = rm.u8() != 0;
        const std::size_t count = rm.u32();
        auto shared_enc = take(nets, cursor, "shared.encoder", rm);
        auto shared_dec = take(nets, cursor, "shared.decoder", rm);
        std::vector<expansion::SpecificParts> parts(count);
        for (std::size_t i = 0; i < count; ++i) {
            const auto p = "head" + std::to_string(i);
            parts[i].encoder_head = take(nets, cursor, p + ".encoder", rm);
            parts[i].decoder_head = take(nets, cursor, p + ".decoder", rm);
            if (config.discrete()) parts[i].class_encoder = take(nets, cursor, p + ".class", rm);
        }
        m.pool = expansion::ExpansionPool(config.expert_config(width), threshold, std::move(shared_enc),
                                          std::move(shared_dec), std::move(parts), shared_frozen);
    } else {
        const double e = rm.f64(), u = rm.f64();
        const std::size_t k = rm.u32();
        std::vector<vae::VaeExpert> experts;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t index = rm.u32(), latent = rm.u32();
            const bool frozen = rm.u8() != 0;
            const auto p = "expert" + std::to_string(index);
            auto enc = take(nets, cursor, p + ".encoder", rm);
            auto dec = take(nets, cursor, p + ".decoder", rm);
            ad::MlpNetwork cls;
            if (config.discrete()) cls = take(nets, cursor, p + ".class", rm);
            experts.emplace_back(index, enc, dec, latent, cls);
            if (frozen) experts.back().set_frozen(true);
        }
        m.mixture = mixture::MixtureState(std::move(experts), e, u);
        auto cc = get_u8s(rm), cp = get_u8s(rm);
        auto a = get_f64s(rm), w = get_f64s(rm);
        m.mixture.restore(std::move(cc), std::move(cp), std::move(a), std::move(w));
    }
    if (cursor != nets.size()) rn.fail("unexpected extra networks");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    write_file_bytes(path, bytes);
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path), path); }

std::uint64_t frozen_digest(const ModelState& model, const FreezeRecord& r) {
    if (r.part == "shared") return ad::parameter_digest(model.pool.shared_parameters());
    return ad::parameter_digest(model.expert(r.expert).parameters());
}

std::string checkpoint_manifest(const Checkpoint& c) {
    const auto config = c.config();
    std::ostringstream s;
    s << "format: LMVC version " << c.version << "\n";
    s << "mode: " << mode_name(config.mode) << "\n";
    s << "policy: " << policy_name(c.model.policy) << "\n";
    s << "seed: " << config.seed << "\n";
    s << "tasks completed: " << c.completed << " of " << config.order.size() << "\n";
    for (std::size_t t = 0; t < c.task_expert.size(); ++t)
        s << "  task " << t << " (" << (t < config.order.size() ? config.order[t] : "?") << ") -> expert "
          << c.task_expert[t] << "\n";
    s << "experts: " << c.model.expert_count() << "\n";
    for (std::size_t i = 0; i < c.model.expert_count(); ++i) {
        const auto e = c.model.expert(i);
        const auto params = e.parameters();
        std::size_t count = 0;
        for (const auto& p : params) count += p.numel();
        s << "  expert " << i << ": " << count << " parameters, digest " << hex64(ad::parameter_digest(params));
        if (c.model.policy == Policy::Mixture)
            s << ", c=" << int(c.model.mixture.assignment()[i]) << ", frozen=" << (e.frozen() ? "yes" : "no");
        s << "\n";
    }
    if (c.model.policy == Policy::Expansion)
        s << "shared part: " << (c.model.pool.shared_frozen() ? "frozen" : "trainable") << ", threshold "
          << format_real(c.model.pool.threshold()) << "\n";
    s << "freeze records: " << c.freezes.size() << "\n";
    for (const auto& f : c.freezes)
        s << "  after task " << f.task << ": " << f.part << (f.part == "expert" ? " " + std::to_string(f.expert) : "")
          << " digest " << hex64(f.digest) << "\n";
    s << "event log offset: " << c.log_offset << " bytes\n";
    return s.str();
}

}  // namespace lmvae::trainer
