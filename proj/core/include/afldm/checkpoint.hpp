#pragma once

// Checkpoint files: a text header
//
//   afldm-checkpoint 1
//   type=vae|ldm
//   key=value ...          (model config; "vae." / "unet." prefixes for ldm)
//   <blank line>
//
// followed by "tensor <name>\n" + AFT1 blob for every parameter, sorted by
// name. LDM checkpoints embed the VAE parameters as vae.* and the U-Net
// parameters as unet.*.

#include <filesystem>
#include <map>
#include <string>

#include "afldm/networks.hpp"

namespace afldm {

inline constexpr int kCheckpointVersion = 1;

struct RawCheckpoint {
  int version = kCheckpointVersion;
  std::string kind;
  std::map<std::string, std::string> header;
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const RawCheckpoint& ckpt);
// Parses the whole file; throws CheckpointError and returns nothing on any
// inconsistency.
RawCheckpoint read_checkpoint(const std::filesystem::path& path);

void save_vae(const std::filesystem::path& path, const Vae& vae);
Vae load_vae(const std::filesystem::path& path);

struct Ldm {
  Vae vae;
  UNet unet;
};

void save_ldm(const std::filesystem::path& path, const Vae& vae, const UNet& unet);
Ldm load_ldm(const std::filesystem::path& path);

// Copies `tensors` (names relative to the parameter set) into `params`.
// Unknown names, missing names and shape mismatches are errors; `params` is
// untouched unless every check passes.
void assign_parameters(nn::ParamSet& params, const std::map<std::string, Tensor>& tensors, const std::string& what);

}  // namespace afldm
