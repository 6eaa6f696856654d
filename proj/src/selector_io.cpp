#include <array>

#include "cdviews/binary_io.hpp"
#include "cdviews/selector.hpp"

namespace cdviews {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'D', 'V', 'S'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kLittleEndian = 1;

}  // namespace

std::string serialize_params(const SelectorParams& params) {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic.data(), kMagic.size()));
  w.put(kVersion);
  w.put(kLittleEndian);
  const auto& c = params.config;
  for (std::uint32_t field : {c.d_in, c.d_model, c.n_heads, c.d_ff, c.n_layers, c.seed}) {
    w.put(field);
  }
  params.for_each_tensor([&](std::string_view, const Matrix& m) {
    // Row-major, regardless of Eigen's column-major storage.
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.put(m(i, j));
  });
  w.seal();
  return w.release();
}

SelectorParams deserialize_params(std::string_view bytes) {
  ByteReader header(bytes);
  if (header.get_bytes(4) != std::string_view(kMagic.data(), kMagic.size())) {
    throw Error(ErrorCode::FormatVersionMismatch, "bad magic, not a params file");
  }
  const auto version = header.get<std::uint16_t>();
  if (version != kVersion) {
    throw Error(ErrorCode::FormatVersionMismatch, "unsupported version " + std::to_string(version));
  }
  if (header.get<std::uint8_t>() != kLittleEndian) {
    throw Error(ErrorCode::FormatVersionMismatch, "params file is not little-endian");
  }

  ByteReader r(verify_sealed(bytes));
  r.get_bytes(4 + sizeof(std::uint16_t) + sizeof(std::uint8_t));
  SelectorConfig c;
  c.d_in = r.get<std::uint32_t>();
  c.d_model = r.get<std::uint32_t>();
  c.n_heads = r.get<std::uint32_t>();
  c.d_ff = r.get<std::uint32_t>();
  c.n_layers = r.get<std::uint32_t>();
  c.seed = r.get<std::uint32_t>();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatVersionMismatch, std::string("bad config block: ") + e.what());
  }
  SelectorParams p = SelectorParams::zeros(c);
  p.for_each_tensor([&](std::string_view, Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
  });
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptChecksum, "trailing bytes after tensors");
  return p;
}

void save_params(const SelectorParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_params(params));
}

SelectorParams load_params(const std::filesystem::path& path) {
  return deserialize_params(read_file(path));
}

}  // namespace cdviews
