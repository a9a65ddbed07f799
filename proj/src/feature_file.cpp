#include "avsd/feature_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "avsd/error.hpp"

namespace avsd {

namespace {

template <typename U>
void put_le(std::vector<std::byte>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::span<const std::byte> bytes, std::size_t pos) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    value |= static_cast<U>(std::to_integer<unsigned>(bytes[pos + i])) << (8 * i);
  return value;
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kVideo: return "video";
    case Modality::kAudio: return "audio";
    case Modality::kTensor: return "tensor";
  }
  return "unknown";
}

}  // namespace

void check_modality_shape(const Shape& shape, Modality modality) {
  switch (modality) {
    case Modality::kVideo:
      AVSD_REQUIRE(shape.size() == 4 && shape[1] == kVideoGrid && shape[2] == kVideoGrid &&
                       shape[3] == kVideoChannels,
                   "video features must be [frames x 7 x 7 x 512], got " + shape_string(shape));
      break;
    case Modality::kAudio:
      AVSD_REQUIRE(shape.size() == 2 && shape[1] == kAudioChannels,
                   "audio features must be [steps x 128], got " + shape_string(shape));
      break;
    case Modality::kTensor:
      break;
  }
}

template <typename T>
void append_record(std::vector<std::byte>& out, const Tensor<T>& tensor, Modality modality) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  check_modality_shape(tensor.shape(), modality);
  AVSD_REQUIRE(tensor.rank() <= 255, "tensor rank too large for the feature format");
  for (char c : kFeatureMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(modality));
  out.push_back(static_cast<std::byte>(std::is_same_v<T, float> ? DType::kF32 : DType::kF64));
  out.push_back(static_cast<std::byte>(tensor.rank()));
  for (auto d : tensor.shape()) {
    AVSD_REQUIRE(d <= std::numeric_limits<std::uint32_t>::max(), "dimension exceeds u32");
    put_le(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + tensor.size() * sizeof(T));
  for (T v : tensor.values()) {
    if constexpr (std::is_same_v<T, float>)
      put_le(out, std::bit_cast<std::uint32_t>(v));
    else
      put_le(out, std::bit_cast<std::uint64_t>(v));
  }
}

template <typename T>
Tensor<T> decode_record(std::span<const std::byte> bytes, std::size_t& pos,
                        Modality* modality_out, DType* dtype_out) {
  const std::size_t start = pos;
  if (bytes.size() < pos + 8) throw CodecError("truncated header", bytes.size());
  if (std::memcmp(bytes.data() + pos, kFeatureMagic, sizeof(kFeatureMagic)) != 0)
    throw CodecError("bad magic, expected \"AVSF1\"", pos);
  const auto modality_code = std::to_integer<unsigned>(bytes[pos + 5]);
  if (modality_code > 2) throw CodecError("unknown modality tag " +
                                              std::to_string(modality_code), pos + 5);
  const auto dtype_code = std::to_integer<unsigned>(bytes[pos + 6]);
  if (dtype_code > 1) throw CodecError("unknown dtype code " + std::to_string(dtype_code),
                                       pos + 6);
  const auto rank = std::to_integer<std::size_t>(bytes[pos + 7]);
  if (rank == 0) throw CodecError("rank must be positive", pos + 7);
  pos += 8;
  if (bytes.size() < pos + 4 * rank) throw CodecError("truncated shape header", bytes.size());
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_le<std::uint32_t>(bytes, pos);
    if (shape[i] == 0) throw CodecError("zero dimension in shape header", pos);
    pos += 4;
  }
  const auto modality = static_cast<Modality>(modality_code);
  try {
    check_modality_shape(shape, modality);
  } catch (const ContractError& e) {
    throw CodecError(std::string(modality_name(modality)) + " record: " + e.what(), start + 8);
  }
  const std::size_t width = dtype_code == 0 ? 4 : 8;
  const std::size_t count = shape_size(shape);
  if (bytes.size() - pos < count * width)
    throw CodecError("truncated payload: need " + std::to_string(count * width) +
                         " bytes, have " + std::to_string(bytes.size() - pos),
                     bytes.size());
  std::vector<T> values(count);
  for (std::size_t i = 0; i < count; ++i, pos += width) {
    if (width == 4)
      values[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos)));
    else
      values[i] = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos)));
  }
  if (modality_out) *modality_out = modality;
  if (dtype_out) *dtype_out = static_cast<DType>(dtype_code);
  return Tensor<T>(std::move(shape), std::move(values));
}

std::vector<std::byte> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw DataError("failed reading " + path.string());
  return bytes;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

void write_feature_file(const std::filesystem::path& path, const Tensor<float>& tensor,
                        Modality modality) {
  std::vector<std::byte> bytes;
  append_record(bytes, tensor, modality);
  write_bytes(path, bytes);
}

Tensor<float> read_feature_file(const std::filesystem::path& path, Modality expected) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  Modality modality;
  DType dtype;
  auto tensor = decode_record<float>(bytes, pos, &modality, &dtype);
  if (modality != expected)
    throw CodecError(path.string() + ": modality tag is " + modality_name(modality) +
                         ", expected " + modality_name(expected),
                     5);
  if (dtype != DType::kF32) throw CodecError(path.string() + ": features must be f32", 6);
  if (pos != bytes.size())
    throw CodecError(path.string() + ": trailing bytes after payload", pos);
  return tensor;
}

template void append_record(std::vector<std::byte>&, const Tensor<float>&, Modality);
template void append_record(std::vector<std::byte>&, const Tensor<double>&, Modality);
template Tensor<float> decode_record(std::span<const std::byte>, std::size_t&, Modality*,
                                     DType*);
template Tensor<double> decode_record(std::span<const std::byte>, std::size_t&, Modality*,
                                      DType*);

}  // namespace avsd
