#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mexit {

struct MultimodalSample {
  std::vector<double> text;
  std::vector<double> vision;
  std::size_t label = 0;
  std::uint64_t id = 0;  // unique across splits
};

enum class DifficultyTier { VisionEasy, TextEasy, FusionEasy, DeepOnly };

std::string to_string(DifficultyTier tier);
DifficultyTier parse_tier(std::string_view name);

/// Synthetic multimodal benchmark description.
///
/// Classes come in four difficulty tiers. Vision-easy and text-easy classes
/// are linearly separable from one modality alone; fusion-easy classes share
/// their per-modality signatures pairwise so only the joint view resolves
/// them; deep-only classes hide the label in the product of per-sample signs
/// across modalities (an XOR no single affine map can undo).
struct DatasetSpec {
  std::size_t classes = 16;
  std::size_t text_dim = 24;
  std::size_t vision_dim = 24;
  std::size_t train_size = 800;
  std::size_t val_size = 400;
  std::size_t test_size = 400;
  std::vector<DifficultyTier> tiers;  // per class; empty -> round-robin over the four tiers
  double easy_scale = 3.0;
  double fusion_scale = 2.2;
  double deep_scale = 1.4;
  double easy_noise = 0.6;
  double fusion_noise = 0.6;
  double deep_noise = 0.8;
  std::uint64_t seed = 0;

  std::vector<DifficultyTier> resolved_tiers() const;
  void validate() const;  // split sizes divisible by classes, dims >= 1
};

struct Dataset {
  DatasetSpec spec;
  std::vector<MultimodalSample> train;
  std::vector<MultimodalSample> val;
  std::vector<MultimodalSample> test;
};

/// Deterministic given spec.seed; splits are disjoint and class-balanced.
Dataset generate_synthetic(const DatasetSpec& spec);

struct ClassMeans {
  std::vector<double> text;
  std::vector<double> vision;
};

/// Population feature means the generator draws around (zero for deep-only
/// classes, whose signatures are sign-symmetric).
ClassMeans expected_class_means(const DatasetSpec& spec, std::size_t label);

/// JSON-lines persistence: <dir>/{train,val,test}.jsonl, each with a header
/// record followed by one sample per line.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Per-sample exit logits produced outside the model path (or dumped from a
/// trained network), for policy-only workflows.
struct LogitTraceRecord {
  std::vector<std::vector<double>> exit_logits;   // B vectors of length K
  std::vector<double> gate_logits;                // length B when gates present, else empty
  std::vector<double> final_logits;               // length K
  std::size_t label = 0;
  std::vector<double> cost_fractions;             // optional, length B+1 (last = final)
};

struct LogitTrace {
  std::size_t exit_count = 0;   // B
  std::size_t classes = 0;      // K
  std::vector<std::string> anchors;  // length B
  std::vector<LogitTraceRecord> records;
};

void save_logit_trace(const LogitTrace& trace, const std::filesystem::path& path);
/// Throws format_error with the offending line number on schema violations.
LogitTrace load_logit_trace(const std::filesystem::path& path);

}  // namespace mexit
