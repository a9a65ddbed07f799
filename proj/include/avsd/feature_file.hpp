#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "avsd/tensor.hpp"

namespace avsd {

// On-disk layout of one record, little-endian throughout:
//
//   offset  size      field
//   0       5         magic "AVSF1"
//   5       1         modality   (0 video, 1 audio, 2 generic tensor)
//   6       1         dtype      (0 f32, 1 f64)
//   7       1         rank
//   8       4*rank    dims, u32 each
//   8+4r    ...       payload, row-major
//
// Video records are [frames x 7 x 7 x 512], audio records [steps x 128].
// Checkpoints concatenate generic-tensor records in one file.

enum class Modality : std::uint8_t { kVideo = 0, kAudio = 1, kTensor = 2 };
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

inline constexpr char kFeatureMagic[5] = {'A', 'V', 'S', 'F', '1'};
inline constexpr std::size_t kVideoGrid = 7;
inline constexpr std::size_t kVideoChannels = 512;
inline constexpr std::size_t kAudioChannels = 128;

/// Validates a tensor shape against the modality schema.
void check_modality_shape(const Shape& shape, Modality modality);

template <typename T>
void append_record(std::vector<std::byte>& out, const Tensor<T>& tensor, Modality modality);

/// Decodes the record starting at `pos` and advances `pos` past it. Values are
/// converted to T; f32 payloads survive a float round trip bit for bit.
template <typename T>
Tensor<T> decode_record(std::span<const std::byte> bytes, std::size_t& pos,
                        Modality* modality_out = nullptr, DType* dtype_out = nullptr);

void write_feature_file(const std::filesystem::path& path, const Tensor<float>& tensor,
                        Modality modality);
/// Reads a single-record file and checks it against `expected`.
Tensor<float> read_feature_file(const std::filesystem::path& path, Modality expected);

std::vector<std::byte> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace avsd
