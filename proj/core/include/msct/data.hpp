#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msct/objectives.hpp"
#include "msct/tensor.hpp"

namespace msct {

enum class Category { RARV, FARV, RAFV, FAFV };

const char* to_string(Category c);
Category parse_category(const std::string& s);
/// RARV -> (1,1,1), FARV -> (0,1,0), RAFV -> (1,0,0), FAFV -> (0,0,0).
LabelTriple labels_for(Category c);
inline const Category kAllCategories[4] = {Category::RARV, Category::FARV, Category::RAFV,
                                           Category::FAFV};

struct SampleRecord {
  std::string sample_id;
  Category category = Category::RARV;
  LabelTriple labels;
  Tensor audio;   // [T, C_a]
  Tensor visual;  // [T, C_v_feat]
  // Generator-only ground truth ([T, d_latent]); never serialized.
  Tensor latent_audio, latent_visual;
};

struct DatasetSplit {
  std::vector<SampleRecord> train, val, test;
  std::uint64_t seed = 0;
};

struct SynthConfig {
  int n_per_category = 16;       // train samples per category
  int n_val_per_category = 0;
  int n_test_per_category = 0;
  int T = 8;
  int C_a = 12;
  int C_v_feat = 10;
  int d_latent = 2;
  int smooth_window = 3;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Synthetic paired streams where forgery is cross-modal misalignment: a
/// smooth latent path is embedded into each modality by a fixed random
/// affine map; fake modalities embed an independently drawn path instead.
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SynthConfig cfg);

  DatasetSplit generate() const;

  // Per-dataset embedding maps and offsets, fixed by the seed. Exposed so
  // tests can invert the embedding.
  const Tensor& audio_embedding() const { return embed_a_; }   // [d_latent, C_a]
  const Tensor& visual_embedding() const { return embed_v_; }  // [d_latent, C_v_feat]
  const Tensor& audio_offset() const { return offset_a_; }     // [C_a]
  const Tensor& visual_offset() const { return offset_v_; }    // [C_v_feat]

  const SynthConfig& config() const { return cfg_; }

 private:
  SynthConfig cfg_;
  Tensor embed_a_, embed_v_, offset_a_, offset_v_;
  std::mt19937_64 rng_after_embed_;
};

DatasetSplit generate_dataset(const SynthConfig& cfg);

/// Loader failures carry a machine-readable kind plus the offending
/// sample_id (empty for manifest-level problems).
class DataError : public std::runtime_error {
 public:
  enum class Kind { MissingFile, DimensionMismatch, UnknownCategory, BadFormat, NonFinite };

  DataError(Kind kind, std::string sample_id, const std::string& message)
      : std::runtime_error(message), kind_(kind), sample_id_(std::move(sample_id)) {}

  Kind kind() const { return kind_; }
  const std::string& sample_id() const { return sample_id_; }

 private:
  Kind kind_;
  std::string sample_id_;
};

/// Feature files: magic "MSCTFEAT", two uint32 little-endian dims (rows,
/// cols), then rows*cols doubles, little-endian, row-major.
void write_feature_file(const std::filesystem::path& path, const Tensor& features);
Tensor read_feature_file(const std::filesystem::path& path, const std::string& sample_id);

/// Writes manifest.csv plus one feature file pair per sample under dir.
/// Returns the manifest path.
std::filesystem::path export_dataset(const DatasetSplit& ds, const std::filesystem::path& dir);

/// Reads a manifest (header `sample_id,category,split,audio_path,visual_path`)
/// and every referenced feature file. Relative paths resolve against the
/// manifest's directory.
DatasetSplit load_manifest(const std::filesystem::path& manifest_path);

struct Batch {
  Tensor audio;   // [B, C_a, T]
  Tensor visual;  // [B, T, C_v_feat]
  std::vector<LabelTriple> labels;
  std::vector<std::string> sample_ids;
  std::vector<Category> categories;
};

/// Deterministic shuffle, then batches of size B with the final short batch
/// included. Throws on an empty split.
std::vector<Batch> batch_iter(const std::vector<SampleRecord>& split, int B,
                              std::uint64_t shuffle_seed);

}  // namespace msct
