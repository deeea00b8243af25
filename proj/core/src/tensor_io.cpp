#include "afldm/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "afldm/error.hpp"

namespace afldm {
namespace {

constexpr std::array<char, 4> kMagic = {'A', 'F', 'T', '1'};

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw CheckpointError("tensor stream truncated");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  if (t.dtype() == DType::kF32) {
    for (double v : t.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  } else {
    for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) throw CheckpointError("tensor stream truncated");
  if (magic != kMagic) throw CheckpointError("bad tensor magic (expected AFT1)");
  const auto code = get_le<std::uint8_t>(is);
  if (code > 1) throw CheckpointError("unknown tensor dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint8_t>(is);
  if (rank == 0) throw CheckpointError("tensor rank 0 is not supported");
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const auto d = get_le<std::uint32_t>(is);
    if (d == 0) throw CheckpointError("tensor dimension of size 0");
    shape.push_back(static_cast<std::int64_t>(d));
  }
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : values) {
    v = dtype == DType::kF32 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is)))
                             : std::bit_cast<double>(get_le<std::uint64_t>(is));
  }
  return Tensor::from_vector(shape, std::move(values), dtype);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw CheckpointError("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace afldm
