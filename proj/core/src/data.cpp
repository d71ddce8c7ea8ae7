#include "mexit/data.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "mexit/errors.hpp"
#include "mexit/rng.hpp"

namespace mexit {

using nlohmann::json;

std::string to_string(DifficultyTier tier) {
  switch (tier) {
    case DifficultyTier::VisionEasy: return "vision-easy";
    case DifficultyTier::TextEasy: return "text-easy";
    case DifficultyTier::FusionEasy: return "fusion-easy";
    case DifficultyTier::DeepOnly: return "deep-only";
  }
  return "?";
}

DifficultyTier parse_tier(std::string_view name) {
  if (name == "vision-easy") return DifficultyTier::VisionEasy;
  if (name == "text-easy") return DifficultyTier::TextEasy;
  if (name == "fusion-easy") return DifficultyTier::FusionEasy;
  if (name == "deep-only") return DifficultyTier::DeepOnly;
  throw invalid_input("unknown difficulty tier: '" + std::string(name) + "'");
}

std::vector<DifficultyTier> DatasetSpec::resolved_tiers() const {
  if (!tiers.empty()) {
    if (tiers.size() != classes) {
      throw invalid_input("dataset: tiers must list one entry per class");
    }
    return tiers;
  }
  static constexpr DifficultyTier cycle[4] = {
      DifficultyTier::VisionEasy, DifficultyTier::TextEasy, DifficultyTier::FusionEasy,
      DifficultyTier::DeepOnly};
  std::vector<DifficultyTier> out(classes);
  for (std::size_t c = 0; c < classes; ++c) out[c] = cycle[c % 4];
  return out;
}

void DatasetSpec::validate() const {
  if (classes < 2) throw invalid_input("dataset: classes must be >= 2");
  if (text_dim < 1 || vision_dim < 1) throw invalid_input("dataset: feature dims must be >= 1");
  if (train_size % classes != 0 || val_size % classes != 0 || test_size % classes != 0) {
    throw invalid_input("dataset: split sizes must be divisible by the class count");
  }
  resolved_tiers();  // validates tier list length
}

namespace {

std::vector<double> unit_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double norm2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double norm = std::sqrt(norm2);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  } else {
    v[0] = 1.0;
  }
  return v;
}

// Per-class feature directions. Fusion-easy classes share text signatures
// along one grid axis and vision signatures along the other; deep-only
// classes come in pairs that share a direction pair and differ only in the
// sign relation between modalities.
struct Signatures {
  std::vector<std::vector<double>> text_sig, vision_sig;        // per class
  std::vector<std::vector<double>> fusion_text, fusion_vision;  // shared pools
  std::vector<std::size_t> fusion_text_idx, fusion_vision_idx;  // per class
  std::vector<std::vector<double>> deep_text, deep_vision;      // per pair
  std::vector<std::size_t> deep_pair;                           // per class
  std::vector<int> deep_parity;                                 // per class, 0 or 1
};

Signatures make_signatures(const DatasetSpec& spec) {
  const auto tiers = spec.resolved_tiers();
  Rng rng = Rng::substream(spec.seed, "data/signatures");
  Signatures sig;
  sig.text_sig.resize(spec.classes);
  sig.vision_sig.resize(spec.classes);
  sig.fusion_text_idx.assign(spec.classes, 0);
  sig.fusion_vision_idx.assign(spec.classes, 0);
  sig.deep_pair.assign(spec.classes, 0);
  sig.deep_parity.assign(spec.classes, 0);

  for (std::size_t c = 0; c < spec.classes; ++c) {
    sig.text_sig[c] = unit_vector(rng, spec.text_dim);
    sig.vision_sig[c] = unit_vector(rng, spec.vision_dim);
  }

  std::vector<std::size_t> fusion_classes, deep_classes;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (tiers[c] == DifficultyTier::FusionEasy) fusion_classes.push_back(c);
    if (tiers[c] == DifficultyTier::DeepOnly) deep_classes.push_back(c);
  }

  if (!fusion_classes.empty()) {
    const std::size_t m = fusion_classes.size();
    const std::size_t width =
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m))));
    const std::size_t rows = (m - 1) / width + 1;
    for (std::size_t i = 0; i < rows; ++i) sig.fusion_text.push_back(unit_vector(rng, spec.text_dim));
    for (std::size_t i = 0; i < std::min(m, width); ++i) {
      sig.fusion_vision.push_back(unit_vector(rng, spec.vision_dim));
    }
    for (std::size_t i = 0; i < m; ++i) {
      sig.fusion_text_idx[fusion_classes[i]] = i / width;
      sig.fusion_vision_idx[fusion_classes[i]] = i % width;
    }
  }

  if (!deep_classes.empty()) {
    const std::size_t pairs = (deep_classes.size() + 1) / 2;
    for (std::size_t p = 0; p < pairs; ++p) {
      sig.deep_text.push_back(unit_vector(rng, spec.text_dim));
      sig.deep_vision.push_back(unit_vector(rng, spec.vision_dim));
    }
    for (std::size_t i = 0; i < deep_classes.size(); ++i) {
      sig.deep_pair[deep_classes[i]] = i / 2;
      sig.deep_parity[deep_classes[i]] = static_cast<int>(i % 2);
    }
  }
  return sig;
}

MultimodalSample draw_sample(const DatasetSpec& spec, const Signatures& sig, DifficultyTier tier,
                             std::size_t c, Rng& rng) {
  MultimodalSample s;
  s.label = c;
  s.text.resize(spec.text_dim);
  s.vision.resize(spec.vision_dim);

  auto fill = [&rng](std::vector<double>& dst, const std::vector<double>* dir, double scale,
                     double noise) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = (dir != nullptr ? scale * (*dir)[i] : 0.0) + noise * rng.normal();
    }
  };

  switch (tier) {
    case DifficultyTier::VisionEasy:
      fill(s.text, nullptr, 0.0, spec.easy_noise);
      fill(s.vision, &sig.vision_sig[c], spec.easy_scale, spec.easy_noise);
      break;
    case DifficultyTier::TextEasy:
      fill(s.text, &sig.text_sig[c], spec.easy_scale, spec.easy_noise);
      fill(s.vision, nullptr, 0.0, spec.easy_noise);
      break;
    case DifficultyTier::FusionEasy:
      fill(s.text, &sig.fusion_text[sig.fusion_text_idx[c]], spec.fusion_scale, spec.fusion_noise);
      fill(s.vision, &sig.fusion_vision[sig.fusion_vision_idx[c]], spec.fusion_scale,
           spec.fusion_noise);
      break;
    case DifficultyTier::DeepOnly: {
      const int sgn = rng.sign();
      const int vsgn = sig.deep_parity[c] == 0 ? sgn : -sgn;
      const std::size_t p = sig.deep_pair[c];
      fill(s.text, &sig.deep_text[p], spec.deep_scale * sgn, spec.deep_noise);
      fill(s.vision, &sig.deep_vision[p], spec.deep_scale * vsgn, spec.deep_noise);
      break;
    }
  }
  return s;
}

}  // namespace

Dataset generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  const auto tiers = spec.resolved_tiers();
  const Signatures sig = make_signatures(spec);

  Dataset out;
  out.spec = spec;
  std::uint64_t next_id = 0;

  const std::pair<const char*, std::size_t> splits[3] = {
      {"train", spec.train_size}, {"val", spec.val_size}, {"test", spec.test_size}};
  std::vector<MultimodalSample>* dests[3] = {&out.train, &out.val, &out.test};

  for (int si = 0; si < 3; ++si) {
    const auto [split_name, size] = splits[si];
    const std::size_t per_class = size / spec.classes;
    dests[si]->reserve(size);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      Rng rng = Rng::substream(spec.seed,
                               "data/" + std::string(split_name) + "/class" + std::to_string(c));
      for (std::size_t j = 0; j < per_class; ++j) {
        MultimodalSample s = draw_sample(spec, sig, tiers[c], c, rng);
        s.id = next_id++;
        dests[si]->push_back(std::move(s));
      }
    }
  }
  return out;
}

ClassMeans expected_class_means(const DatasetSpec& spec, std::size_t label) {
  spec.validate();
  if (label >= spec.classes) throw invalid_input("expected_class_means: label out of range");
  const auto tiers = spec.resolved_tiers();
  const Signatures sig = make_signatures(spec);

  ClassMeans means;
  means.text.assign(spec.text_dim, 0.0);
  means.vision.assign(spec.vision_dim, 0.0);
  auto scaled = [](const std::vector<double>& dir, double scale) {
    std::vector<double> out(dir.size());
    for (std::size_t i = 0; i < dir.size(); ++i) out[i] = scale * dir[i];
    return out;
  };

  switch (tiers[label]) {
    case DifficultyTier::VisionEasy:
      means.vision = scaled(sig.vision_sig[label], spec.easy_scale);
      break;
    case DifficultyTier::TextEasy:
      means.text = scaled(sig.text_sig[label], spec.easy_scale);
      break;
    case DifficultyTier::FusionEasy:
      means.text = scaled(sig.fusion_text[sig.fusion_text_idx[label]], spec.fusion_scale);
      means.vision = scaled(sig.fusion_vision[sig.fusion_vision_idx[label]], spec.fusion_scale);
      break;
    case DifficultyTier::DeepOnly:
      break;  // sign-symmetric, zero mean
  }
  return means;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence

namespace {

json spec_to_json(const DatasetSpec& spec) {
  json j;
  j["v"] = 1;
  j["classes"] = spec.classes;
  j["text_dim"] = spec.text_dim;
  j["vision_dim"] = spec.vision_dim;
  j["train_size"] = spec.train_size;
  j["val_size"] = spec.val_size;
  j["test_size"] = spec.test_size;
  json tiers = json::array();
  for (DifficultyTier t : spec.resolved_tiers()) tiers.push_back(to_string(t));
  j["tiers"] = tiers;
  j["easy_scale"] = spec.easy_scale;
  j["fusion_scale"] = spec.fusion_scale;
  j["deep_scale"] = spec.deep_scale;
  j["easy_noise"] = spec.easy_noise;
  j["fusion_noise"] = spec.fusion_noise;
  j["deep_noise"] = spec.deep_noise;
  j["seed"] = spec.seed;
  return j;
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec spec;
  spec.classes = j.at("classes").get<std::size_t>();
  spec.text_dim = j.at("text_dim").get<std::size_t>();
  spec.vision_dim = j.at("vision_dim").get<std::size_t>();
  spec.train_size = j.at("train_size").get<std::size_t>();
  spec.val_size = j.at("val_size").get<std::size_t>();
  spec.test_size = j.at("test_size").get<std::size_t>();
  spec.tiers.clear();
  for (const auto& t : j.at("tiers")) spec.tiers.push_back(parse_tier(t.get<std::string>()));
  spec.easy_scale = j.at("easy_scale").get<double>();
  spec.fusion_scale = j.at("fusion_scale").get<double>();
  spec.deep_scale = j.at("deep_scale").get<double>();
  spec.easy_noise = j.at("easy_noise").get<double>();
  spec.fusion_noise = j.at("fusion_noise").get<double>();
  spec.deep_noise = j.at("deep_noise").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

void save_split(const std::vector<MultimodalSample>& samples, const DatasetSpec& spec,
                const char* split_name, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw format_error("dataset: cannot open '" + path.string() + "' for writing");
  json header;
  header["v"] = 1;
  header["kind"] = "dataset";
  header["split"] = split_name;
  header["classes"] = spec.classes;
  header["text_dim"] = spec.text_dim;
  header["vision_dim"] = spec.vision_dim;
  header["count"] = samples.size();
  out << header.dump() << "\n";
  for (const MultimodalSample& s : samples) {
    json rec;
    rec["id"] = s.id;
    rec["label"] = s.label;
    rec["text"] = s.text;
    rec["vision"] = s.vision;
    out << rec.dump() << "\n";
  }
  if (!out.good()) throw format_error("dataset: write failed for '" + path.string() + "'");
}

std::vector<MultimodalSample> load_split(const DatasetSpec& spec, const char* split_name,
                                         const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("dataset: cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw format_error("dataset '" + path.string() + "' line " + std::to_string(line_no) + ": " +
                       what);
  };

  if (!std::getline(in, line)) throw format_error("dataset '" + path.string() + "': empty file");
  line_no = 1;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    fail(e.what());
  }
  if (header.value("kind", "") != "dataset" || header.value("v", 0) != 1) {
    fail("bad header");
  }
  if (header.value("split", "") != split_name) fail("split name mismatch");
  const std::size_t count = header.at("count").get<std::size_t>();

  std::vector<MultimodalSample> samples;
  samples.reserve(count);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(e.what());
    }
    MultimodalSample s;
    try {
      s.id = rec.at("id").get<std::uint64_t>();
      s.label = rec.at("label").get<std::size_t>();
      s.text = rec.at("text").get<std::vector<double>>();
      s.vision = rec.at("vision").get<std::vector<double>>();
    } catch (const json::exception& e) {
      fail(e.what());
    }
    if (s.label >= spec.classes) fail("label out of range");
    if (s.text.size() != spec.text_dim || s.vision.size() != spec.vision_dim) {
      fail("feature dimensions do not match spec");
    }
    for (double v : s.text) {
      if (!std::isfinite(v)) fail("non-finite text feature");
    }
    for (double v : s.vision) {
      if (!std::isfinite(v)) fail("non-finite vision feature");
    }
    samples.push_back(std::move(s));
  }
  if (samples.size() != count) {
    throw format_error("dataset '" + path.string() + "': expected " + std::to_string(count) +
                       " samples, found " + std::to_string(samples.size()) +
                       " (truncated file?)");
  }
  return samples;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "spec.json");
    if (!out) throw format_error("dataset: cannot write spec.json");
    out << spec_to_json(data.spec).dump(2) << "\n";
  }
  save_split(data.train, data.spec, "train", dir / "train.jsonl");
  save_split(data.val, data.spec, "val", dir / "val.jsonl");
  save_split(data.test, data.spec, "test", dir / "test.jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto spec_path = dir / "spec.json";
  std::ifstream in(spec_path);
  if (!in) throw format_error("dataset: cannot open '" + spec_path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw format_error("dataset spec '" + spec_path.string() + "': " + e.what());
  }
  Dataset data;
  data.spec = spec_from_json(j);
  data.train = load_split(data.spec, "train", dir / "train.jsonl");
  data.val = load_split(data.spec, "val", dir / "val.jsonl");
  data.test = load_split(data.spec, "test", dir / "test.jsonl");
  return data;
}

// ---------------------------------------------------------------------------
// Logit traces

void save_logit_trace(const LogitTrace& trace, const std::filesystem::path& path) {
  if (trace.anchors.size() != trace.exit_count) {
    throw invalid_input("logit trace: anchors must list one entry per exit");
  }
  std::ofstream out(path);
  if (!out) throw format_error("logit trace: cannot open '" + path.string() + "' for writing");
  json header;
  header["v"] = 1;
  header["kind"] = "logit-trace";
  header["B"] = trace.exit_count;
  header["K"] = trace.classes;
  header["anchors"] = trace.anchors;
  out << header.dump() << "\n";
  for (const LogitTraceRecord& r : trace.records) {
    json rec;
    rec["exits"] = r.exit_logits;
    rec["final"] = r.final_logits;
    rec["label"] = r.label;
    if (!r.gate_logits.empty()) rec["gates"] = r.gate_logits;
    if (!r.cost_fractions.empty()) rec["costs"] = r.cost_fractions;
    out << rec.dump() << "\n";
  }
  if (!out.good()) throw format_error("logit trace: write failed for '" + path.string() + "'");
}

LogitTrace load_logit_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("logit trace: cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw format_error("logit trace '" + path.string() + "' line " + std::to_string(line_no) +
                       ": " + what);
  };

  if (!std::getline(in, line)) throw format_error("logit trace '" + path.string() + "': empty file");
  line_no = 1;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    fail(e.what());
  }
  if (header.value("kind", "") != "logit-trace" || header.value("v", 0) != 1) fail("bad header");

  LogitTrace trace;
  try {
    trace.exit_count = header.at("B").get<std::size_t>();
    trace.classes = header.at("K").get<std::size_t>();
    trace.anchors = header.at("anchors").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(e.what());
  }
  if (trace.anchors.size() != trace.exit_count) fail("anchor list does not match B");
  if (trace.classes < 2) fail("K must be >= 2");

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(e.what());
    }
    LogitTraceRecord r;
    try {
      r.exit_logits = rec.at("exits").get<std::vector<std::vector<double>>>();
      r.final_logits = rec.at("final").get<std::vector<double>>();
      r.label = rec.at("label").get<std::size_t>();
      if (rec.contains("gates")) r.gate_logits = rec.at("gates").get<std::vector<double>>();
      if (rec.contains("costs")) r.cost_fractions = rec.at("costs").get<std::vector<double>>();
    } catch (const json::exception& e) {
      fail(e.what());
    }
    if (r.exit_logits.size() != trace.exit_count) fail("record has inconsistent exit count B");
    for (const auto& z : r.exit_logits) {
      if (z.size() != trace.classes) fail("exit logit vector has inconsistent K");
    }
    if (r.final_logits.size() != trace.classes) fail("final logit vector has inconsistent K");
    if (r.label >= trace.classes) fail("label out of range");
    if (!r.gate_logits.empty() && r.gate_logits.size() != trace.exit_count) {
      fail("gate logits have inconsistent exit count");
    }
    if (!r.cost_fractions.empty() && r.cost_fractions.size() != trace.exit_count + 1) {
      fail("cost fractions must have B+1 entries");
    }
    trace.records.push_back(std::move(r));
  }
  return trace;
}

}  // namespace mexit
