#include "msct/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "feature-file I/O assumes a little-endian host");

namespace msct {

const char* to_string(Category c) {
  switch (c) {
    case Category::RARV: return "RARV";
    case Category::FARV: return "FARV";
    case Category::RAFV: return "RAFV";
    case Category::FAFV: return "FAFV";
  }
  return "?";
}

Category parse_category(const std::string& s) {
  if (s == "RARV") return Category::RARV;
  if (s == "FARV") return Category::FARV;
  if (s == "RAFV") return Category::RAFV;
  if (s == "FAFV") return Category::FAFV;
  throw DataError(DataError::Kind::UnknownCategory, "", "unknown category '" + s + "'");
}

LabelTriple labels_for(Category c) {
  switch (c) {
    case Category::RARV: return {1, 1, 1};
    case Category::FARV: return {0, 1, 0};
    case Category::RAFV: return {1, 0, 0};
    case Category::FAFV: return {0, 0, 0};
  }
  return {};
}

void SynthConfig::validate() const {
  if (n_per_category < 1) throw std::invalid_argument("synth config: n_per_category must be >= 1");
  if (n_val_per_category < 0 || n_test_per_category < 0) {
    throw std::invalid_argument("synth config: split sizes must be nonnegative");
  }
  if (T < 1 || C_a < 1 || C_v_feat < 1 || d_latent < 1) {
    throw std::invalid_argument("synth config: dimensions must be positive");
  }
  if (smooth_window < 1) throw std::invalid_argument("synth config: smooth_window must be >= 1");
  if (noise_sigma < 0) throw std::invalid_argument("synth config: noise_sigma must be nonnegative");
}

namespace {

/// Smooth random walk in latent space: cumulative Gaussian steps, then a
/// clamped-window moving average.
Tensor draw_latent_path(int T, int d, int window, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> walk(static_cast<size_t>(T) * d);
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
      acc += gauss(rng);
      walk[t * d + j] = acc;
    }
  }
  const int half = window / 2;
  std::vector<double> smooth(walk.size());
  for (int t = 0; t < T; ++t) {
    const int lo = std::max(0, t - half);
    const int hi = std::min(T - 1, t + half);
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int u = lo; u <= hi; ++u) s += walk[u * d + j];
      smooth[t * d + j] = s / static_cast<double>(hi - lo + 1);
    }
  }
  // Project each frame onto the unit sphere: a random walk's magnitude grows
  // with t, which would let late frames dominate any flattened comparison.
  for (int t = 0; t < T; ++t) {
    double norm2 = 0.0;
    for (int j = 0; j < d; ++j) norm2 += smooth[t * d + j] * smooth[t * d + j];
    const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    for (int j = 0; j < d; ++j) smooth[t * d + j] *= inv;
  }
  return Tensor({T, d}, std::move(smooth));
}

/// latent [T, d] -> features [T, C]: X = L E + offset + noise.
Tensor embed_stream(const Tensor& latent, const Tensor& embed, const Tensor& offset,
                    double sigma, std::mt19937_64& rng) {
  const auto T = latent.size(0), d = latent.size(1), C = embed.size(1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(static_cast<size_t>(T) * C);
  auto ld = latent.data();
  auto ed = embed.data();
  auto od = offset.data();
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t c = 0; c < C; ++c) {
      double v = od[c];
      for (std::int64_t j = 0; j < d; ++j) v += ld[t * d + j] * ed[j * C + c];
      if (sigma > 0) v += sigma * gauss(rng);
      out[t * C + c] = v;
    }
  }
  return Tensor({T, C}, std::move(out));
}

}  // namespace

SyntheticGenerator::SyntheticGenerator(SynthConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  // Unit-scale embedding entries keep the optimal inverse maps small, so a
  // small-init encoder can reach them within a short training budget.
  embed_a_ = Tensor::randn({cfg_.d_latent, cfg_.C_a}, rng, 1.0);
  embed_v_ = Tensor::randn({cfg_.d_latent, cfg_.C_v_feat}, rng, 1.0);
  offset_a_ = Tensor::randn({cfg_.C_a}, rng, 0.1);
  offset_v_ = Tensor::randn({cfg_.C_v_feat}, rng, 0.1);
  rng_after_embed_ = rng;
}

DatasetSplit SyntheticGenerator::generate() const {
  DatasetSplit ds;
  ds.seed = cfg_.seed;
  std::mt19937_64 rng = rng_after_embed_;  // samples continue the seed stream

  struct SplitPlan {
    const char* name;
    int count;
    std::vector<SampleRecord>* out;
  };
  SplitPlan plans[3] = {{"train", cfg_.n_per_category, &ds.train},
                        {"val", cfg_.n_val_per_category, &ds.val},
                        {"test", cfg_.n_test_per_category, &ds.test}};

  for (const auto& plan : plans) {
    for (Category cat : kAllCategories) {
      const auto labels = labels_for(cat);
      for (int i = 0; i < plan.count; ++i) {
        SampleRecord rec;
        std::ostringstream id;
        id << plan.name << "-" << to_string(cat) << "-" << std::setw(4) << std::setfill('0') << i;
        rec.sample_id = id.str();
        rec.category = cat;
        rec.labels = labels;

        // Real modalities share the content path; each fake modality gets
        // an independent one.
        Tensor shared = draw_latent_path(cfg_.T, cfg_.d_latent, cfg_.smooth_window, rng);
        rec.latent_audio = labels.y_a == 1
                               ? shared
                               : draw_latent_path(cfg_.T, cfg_.d_latent, cfg_.smooth_window, rng);
        rec.latent_visual = labels.y_v == 1
                                ? shared
                                : draw_latent_path(cfg_.T, cfg_.d_latent, cfg_.smooth_window, rng);
        rec.audio = embed_stream(rec.latent_audio, embed_a_, offset_a_, cfg_.noise_sigma, rng);
        rec.visual = embed_stream(rec.latent_visual, embed_v_, offset_v_, cfg_.noise_sigma, rng);
        plan.out->push_back(std::move(rec));
      }
    }
  }
  return ds;
}

DatasetSplit generate_dataset(const SynthConfig& cfg) {
  return SyntheticGenerator(cfg).generate();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kFeatureMagic[8] = {'M', 'S', 'C', 'T', 'F', 'E', 'A', 'T'};

std::string split_name_of(const DatasetSplit& ds, const std::vector<SampleRecord>* v) {
  if (v == &ds.train) return "train";
  if (v == &ds.val) return "val";
  return "test";
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const Tensor& features) {
  if (features.ndim() != 2) {
    throw std::invalid_argument("write_feature_file: features must be rank 2, got " +
                                shape_to_string(features.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::MissingFile, "", "cannot open for writing: " + path.string());
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  const std::uint32_t rows = static_cast<std::uint32_t>(features.size(0));
  const std::uint32_t cols = static_cast<std::uint32_t>(features.size(1));
  out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  auto d = features.data();
  out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  if (!out) throw DataError(DataError::Kind::MissingFile, "", "write failed: " + path.string());
}

Tensor read_feature_file(const std::filesystem::path& path, const std::string& sample_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(DataError::Kind::MissingFile, sample_id,
                    "missing feature file for sample '" + sample_id + "': " + path.string());
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0) {
    throw DataError(DataError::Kind::BadFormat, sample_id,
                    "bad feature-file magic for sample '" + sample_id + "': " + path.string());
  }
  std::uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!in || rows == 0 || cols == 0) {
    throw DataError(DataError::Kind::BadFormat, sample_id,
                    "bad feature-file header for sample '" + sample_id + "': " + path.string());
  }
  std::vector<double> body(static_cast<size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(body.data()),
          static_cast<std::streamsize>(body.size() * sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(body.size() * sizeof(double))) {
    throw DataError(DataError::Kind::DimensionMismatch, sample_id,
                    "feature file body shorter than header dims (" + std::to_string(rows) + "x" +
                        std::to_string(cols) + ") for sample '" + sample_id + "'");
  }
  if (!all_finite(body)) {
    throw DataError(DataError::Kind::NonFinite, sample_id,
                    "feature file contains non-finite values for sample '" + sample_id + "'");
  }
  return Tensor({static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)},
                std::move(body));
}

std::filesystem::path export_dataset(const DatasetSplit& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  const auto manifest_path = dir / "manifest.csv";
  std::ofstream manifest(manifest_path);
  if (!manifest) {
    throw DataError(DataError::Kind::MissingFile, "",
                    "cannot open manifest for writing: " + manifest_path.string());
  }
  manifest << "sample_id,category,split,audio_path,visual_path\n";
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    const std::string split_name = split_name_of(ds, split);
    for (const auto& rec : *split) {
      const std::string a_rel = "features/" + rec.sample_id + ".audio.bin";
      const std::string v_rel = "features/" + rec.sample_id + ".visual.bin";
      write_feature_file(dir / a_rel, rec.audio);
      write_feature_file(dir / v_rel, rec.visual);
      manifest << rec.sample_id << ',' << to_string(rec.category) << ',' << split_name << ','
               << a_rel << ',' << v_rel << '\n';
    }
  }
  manifest.flush();
  if (!manifest) {
    throw DataError(DataError::Kind::MissingFile, "", "manifest write failed: " + manifest_path.string());
  }
  return manifest_path;
}

DatasetSplit load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw DataError(DataError::Kind::MissingFile, "",
                    "manifest not found: " + manifest_path.string());
  }
  const auto base = manifest_path.parent_path();
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(DataError::Kind::BadFormat, "", "manifest is empty: " + manifest_path.string());
  }
  if (line != "sample_id,category,split,audio_path,visual_path") {
    throw DataError(DataError::Kind::BadFormat, "",
                    "unexpected manifest header: '" + line + "'");
  }

  DatasetSplit ds;
  std::int64_t audio_rows = -1, audio_cols = -1, visual_rows = -1, visual_cols = -1;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) {
      throw DataError(DataError::Kind::BadFormat, fields.empty() ? "" : fields[0],
                      "manifest line " + std::to_string(line_no) + " has " +
                          std::to_string(fields.size()) + " fields, expected 5");
    }
    SampleRecord rec;
    rec.sample_id = fields[0];
    try {
      rec.category = parse_category(fields[1]);
    } catch (const DataError& e) {
      throw DataError(DataError::Kind::UnknownCategory, rec.sample_id,
                      "unknown category '" + fields[1] + "' for sample '" + rec.sample_id + "'");
    }
    rec.labels = labels_for(rec.category);

    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    rec.audio = read_feature_file(resolve(fields[3]), rec.sample_id);
    rec.visual = read_feature_file(resolve(fields[4]), rec.sample_id);

    // All samples must agree on dimensions or batches cannot be assembled.
    if (audio_rows < 0) {
      audio_rows = rec.audio.size(0);
      audio_cols = rec.audio.size(1);
      visual_rows = rec.visual.size(0);
      visual_cols = rec.visual.size(1);
    } else if (rec.audio.size(0) != audio_rows || rec.audio.size(1) != audio_cols ||
               rec.visual.size(0) != visual_rows || rec.visual.size(1) != visual_cols) {
      throw DataError(DataError::Kind::DimensionMismatch, rec.sample_id,
                      "sample '" + rec.sample_id + "' dimensions disagree with the dataset (audio " +
                          shape_to_string(rec.audio.shape()) + ", visual " +
                          shape_to_string(rec.visual.shape()) + ")");
    }
    if (rec.audio.size(0) != rec.visual.size(0)) {
      throw DataError(DataError::Kind::DimensionMismatch, rec.sample_id,
                      "sample '" + rec.sample_id + "' has differing audio/visual frame counts");
    }

    if (fields[2] == "train") ds.train.push_back(std::move(rec));
    else if (fields[2] == "val") ds.val.push_back(std::move(rec));
    else if (fields[2] == "test") ds.test.push_back(std::move(rec));
    else {
      throw DataError(DataError::Kind::BadFormat, rec.sample_id,
                      "unknown split '" + fields[2] + "' for sample '" + rec.sample_id + "'");
    }
  }
  return ds;
}

std::vector<Batch> batch_iter(const std::vector<SampleRecord>& split, int B,
                              std::uint64_t shuffle_seed) {
  if (B < 1) throw std::invalid_argument("batch_iter: batch size must be >= 1");
  if (split.empty()) throw std::invalid_argument("batch_iter: empty split");

  std::vector<size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::int64_t T = split.front().audio.size(0);
  const std::int64_t C_a = split.front().audio.size(1);
  const std::int64_t C_v = split.front().visual.size(1);

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(B)) {
    const std::int64_t n = static_cast<std::int64_t>(
        std::min(order.size() - start, static_cast<size_t>(B)));
    Batch batch;
    batch.audio = Tensor::zeros({n, C_a, T});
    batch.visual = Tensor::zeros({n, T, C_v});
    auto& ad = batch.audio.mutable_values();
    auto& vd = batch.visual.mutable_values();
    for (std::int64_t b = 0; b < n; ++b) {
      const auto& rec = split[order[start + static_cast<size_t>(b)]];
      if (rec.audio.size(0) != T || rec.audio.size(1) != C_a || rec.visual.size(1) != C_v) {
        throw DataError(DataError::Kind::DimensionMismatch, rec.sample_id,
                        "sample '" + rec.sample_id + "' dimensions disagree with the batch");
      }
      auto a = rec.audio.data();
      auto v = rec.visual.data();
      // Record layout is [T, C]; the audio batch layout is [C_a, T].
      for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t c = 0; c < C_a; ++c) ad[(b * C_a + c) * T + t] = a[t * C_a + c];
      }
      std::copy(v.begin(), v.end(), vd.begin() + b * T * C_v);
      batch.labels.push_back(rec.labels);
      batch.sample_ids.push_back(rec.sample_id);
      batch.categories.push_back(rec.category);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace msct
