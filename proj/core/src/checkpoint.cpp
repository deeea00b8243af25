#include "afldm/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "afldm/error.hpp"
#include "afldm/tensor_io.hpp"

namespace afldm {
namespace {

constexpr const char* kMagicLine = "afldm-checkpoint";

std::map<std::string, std::string> with_prefix(const std::map<std::string, std::string>& m, const std::string& p) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : m) out[p + k] = v;
  return out;
}

std::map<std::string, std::string> strip_prefix(const std::map<std::string, std::string>& m, const std::string& p) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : m) {
    if (k.rfind(p, 0) == 0) out[k.substr(p.size())] = v;
  }
  return out;
}

std::map<std::string, Tensor> tensors_with_prefix(const std::map<std::string, Tensor>& m, const std::string& p,
                                                  bool strip) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : m) {
    if (strip) {
      if (k.rfind(p, 0) == 0) out[k.substr(p.size())] = v;
    } else {
      out[p + k] = v;
    }
  }
  return out;
}

ModelConfig parse_config(const std::map<std::string, std::string>& values, const std::string& what) {
  try {
    return ModelConfig::from_map(values);
  } catch (const ConfigError& e) {
    throw CheckpointError(what + " config: " + e.what());
  }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const RawCheckpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  os << kMagicLine << ' ' << ckpt.version << '\n';
  os << "type=" << ckpt.kind << '\n';
  for (const auto& [k, v] : ckpt.header) os << k << '=' << v << '\n';
  os << '\n';
  for (const auto& [name, t] : ckpt.tensors) {
    os << "tensor " << name << '\n';
    write_tensor(os, t);
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary);
    if (!file) throw CheckpointError("cannot open " + tmp + " for writing");
    const std::string bytes = os.str();
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw CheckpointError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

RawCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  RawCheckpoint ckpt;
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("checkpoint " + path.string() + " is empty");
  std::istringstream first(line);
  std::string magic;
  int version = -1;
  first >> magic >> version;
  if (magic != kMagicLine) throw CheckpointError("not an afldm checkpoint: " + path.string());
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (this build reads " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ckpt.version = version;
  bool header_done = false;
  while (std::getline(is, line)) {
    if (line.empty()) {
      header_done = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed checkpoint header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "type") {
      ckpt.kind = value;
    } else {
      ckpt.header[key] = value;
    }
  }
  if (!header_done) throw CheckpointError("checkpoint truncated inside the header");
  if (ckpt.kind.empty()) throw CheckpointError("checkpoint header has no type");
  while (std::getline(is, line)) {
    if (line.rfind("tensor ", 0) != 0) throw CheckpointError("expected a tensor record, got '" + line + "'");
    const std::string name = line.substr(7);
    if (ckpt.tensors.count(name)) throw CheckpointError("duplicate tensor '" + name + "'");
    ckpt.tensors.emplace(name, read_tensor(is));
  }
  if (!is.eof()) throw CheckpointError("error reading checkpoint " + path.string());
  return ckpt;
}

void assign_parameters(nn::ParamSet& params, const std::map<std::string, Tensor>& tensors, const std::string& what) {
  for (const auto& [name, t] : tensors) {
    if (!params.contains(name)) throw CheckpointError(what + ": unknown tensor '" + name + "'");
    const Tensor& target = params.at(name);
    if (target.shape() != t.shape()) {
      throw CheckpointError(what + ": tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                            shape_str(target.shape()));
    }
  }
  for (const auto& [name, _] : params.items()) {
    if (!tensors.count(name)) throw CheckpointError(what + ": tensor '" + name + "' missing from checkpoint");
  }
  for (auto& [name, target] : params.items()) {
    target = tensors.at(name).to(target.dtype()).detach();
  }
}

void save_vae(const std::filesystem::path& path, const Vae& vae) {
  RawCheckpoint ckpt;
  ckpt.kind = "vae";
  ckpt.header = vae.config().to_map();
  ckpt.tensors = vae.params().items();
  write_checkpoint(path, ckpt);
}

Vae load_vae(const std::filesystem::path& path) {
  RawCheckpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != "vae") throw CheckpointError("expected a vae checkpoint, found '" + ckpt.kind + "'");
  Vae vae(parse_config(ckpt.header, "vae"));
  assign_parameters(vae.params(), ckpt.tensors, "vae");
  return vae;
}

void save_ldm(const std::filesystem::path& path, const Vae& vae, const UNet& unet) {
  RawCheckpoint ckpt;
  ckpt.kind = "ldm";
  ckpt.header = with_prefix(vae.config().to_map(), "vae.");
  for (auto& kv : with_prefix(unet.config().to_map(), "unet.")) ckpt.header.insert(kv);
  ckpt.tensors = tensors_with_prefix(vae.params().items(), "vae.", false);
  for (auto& kv : tensors_with_prefix(unet.params().items(), "unet.", false)) ckpt.tensors.insert(kv);
  write_checkpoint(path, ckpt);
}

Ldm load_ldm(const std::filesystem::path& path) {
  RawCheckpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != "ldm") throw CheckpointError("expected an ldm checkpoint, found '" + ckpt.kind + "'");
  for (const auto& [k, _] : ckpt.header) {
    if (k.rfind("vae.", 0) != 0 && k.rfind("unet.", 0) != 0) throw CheckpointError("unknown header key '" + k + "'");
  }
  for (const auto& [k, _] : ckpt.tensors) {
    if (k.rfind("vae.", 0) != 0 && k.rfind("unet.", 0) != 0) throw CheckpointError("unknown tensor '" + k + "'");
  }
  Ldm ldm{Vae(parse_config(strip_prefix(ckpt.header, "vae."), "vae")),
          UNet(parse_config(strip_prefix(ckpt.header, "unet."), "unet"))};
  assign_parameters(ldm.vae.params(), tensors_with_prefix(ckpt.tensors, "vae.", true), "vae");
  assign_parameters(ldm.unet.params(), tensors_with_prefix(ckpt.tensors, "unet.", true), "unet");
  return ldm;
}

}  // namespace afldm
