#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmvae/expansion/expansion.hpp"
#include "lmvae/mixture/mixture.hpp"
#include "lmvae/trainer/config.hpp"
#include "lmvae/trainer/events.hpp"

namespace lmvae::trainer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// The learned model under any policy. Mixture and transfer runs keep a
/// MixtureState (K = 1 for transfer); expansion runs keep a pool.
struct ModelState {
    Policy policy = Policy::Mixture;
    mixture::MixtureState mixture;
    expansion::ExpansionPool pool;

    std::size_t expert_count() const;
    /// Composed for pools; shares parameters with the model.
    vae::VaeExpert expert(std::size_t i) const;
    /// Experts eligible for inference routing: consumed ones in fixed-K
    /// mode, every expert otherwise.
    std::vector<std::size_t> routable() const;
    /// Mixture over routable() in that order.
    mixture::MixtureState routing_state() const;
};

ModelState build_model(const RunConfig& config, std::size_t input_width, Rng& rng);

struct FreezeRecord {
    std::size_t task = 0;
    std::string part;  // "expert" or "shared"
    std::size_t expert = 0;
    std::uint64_t digest = 0;
};

/// Container: "LMVC" | u32 version | u32 section count | per section:
/// str name | u64 length | bytes. Sections: config, progress, model,
/// networks.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_ini;  // output_dir and stop_after_tasks cleared
    std::string base_dir;
    ModelState model;
    std::string rng_state;
    std::size_t completed = 0;
    std::vector<std::size_t> task_expert;
    std::vector<FreezeRecord> freezes;
    std::uint64_t log_offset = 0;

    RunConfig config() const;
};

/// The config text stored in checkpoints; fields that only steer where and
/// how long a run goes are cleared so interrupted runs match.
std::string checkpoint_config_text(const RunConfig& config);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint");
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Human-readable manifest for inspect-checkpoint.
std::string checkpoint_manifest(const Checkpoint& ckpt);

/// Digest of the parameters a freeze record covers.
std::uint64_t frozen_digest(const ModelState& model, const FreezeRecord& r);

}  // namespace lmvae::trainer
