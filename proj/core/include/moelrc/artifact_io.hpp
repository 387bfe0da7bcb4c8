#pragma once

// On-disk layout of a compressed model directory:
//
//   manifest.json        header and one record per projection
//   blobs/L<l>_E<e>_<p>.q.bin   quantized weights
//   blobs/L<l>_E<e>_<p>.c.bin   compensator (only when rank > 0)
//
// Blobs are little-endian and each carries a CRC32 in the manifest so a
// single expert can be fetched and verified without touching the rest.
//
// A synthetic model directory holds model.json and model.bin (every gate and
// expert matrix as raw float64).

#include "moelrc/artifact.hpp"
#include "moelrc/moe_model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace moelrc {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_quantized(const QuantizedMatrix& qm);
QuantizedMatrix decode_quantized(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_compensator(const Compensator& c);
Compensator decode_compensator(std::span<const std::uint8_t> bytes);

void save_artifact(const CompressedModel& artifact, const std::filesystem::path& dir);

/// Throws FormatError on a version mismatch, missing or truncated blob, and
/// ChecksumError (naming the layer, expert and projection) on a CRC mismatch.
CompressedModel load_artifact(const std::filesystem::path& dir);

/// `generator` is stored verbatim in model.json for provenance.
void save_model(const MoEModel& model, const std::filesystem::path& dir,
                const std::string& generator_json = "{}");
MoEModel load_model(const std::filesystem::path& dir);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace moelrc
