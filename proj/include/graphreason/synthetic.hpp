#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "graphreason/knowledge_graph.hpp"
#include "graphreason/scene.hpp"

namespace graphreason {

// Scene generator parameters. Classes are laid out as
//   [0, A)      ambiguous, in look-alike pairs (0,1), (2,3), ...
//   [A, 2A)     parent classes; class j < A belongs to parent A + j
//   [2A, C)     free context classes
// with A = 2 * floor(ambiguity * C / 2). Look-alike pairs share one feature
// prototype. The first member of a pair always appears as a horizontal
// chain next to its parent, the second as a vertical chain.
struct SceneSpec {
  std::size_t grid_h = 16;
  std::size_t grid_w = 16;
  double cell_px = 4;  // pixels per grid cell
  std::size_t classes = 8;
  std::size_t feature_dim = 8;
  std::size_t min_regions = 4;
  std::size_t max_regions = 8;
  double ambiguity = 0.5;  // rho
  double noise = 1.5;      // per-cell feature noise std
  std::size_t chain_min = 2;
  std::size_t chain_max = 3;
  std::size_t max_retries = 200;
  std::uint64_t seed = 1;  // world seed: prototypes

  std::size_t ambiguous_classes() const;
  double height() const { return static_cast<double>(grid_h) * cell_px; }
  double width() const { return static_cast<double>(grid_w) * cell_px; }
  // Throws ConfigError for unusable settings.
  void check() const;
};

void write_spec(std::ostream& out, const SceneSpec& spec);
SceneSpec parse_spec(std::istream& in);

ClassVocabulary synthetic_vocabulary(const SceneSpec& spec);
// is-part-of (child -> parent) and similarity (pair members), already
// inverted and row-normalized.
KnowledgeGraph synthetic_graph(const SceneSpec& spec);

// [C x Dh] class prototypes drawn from the world seed.
std::vector<double> class_prototypes(const SceneSpec& spec);

// Pure function of (spec, seed); GenerationError if placement keeps failing.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

struct SplitFractions {
  double val = 1.0 / 7.0;
  double test = 1.0 / 7.0;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};
// floor(n * fraction) for val and test; the remainder goes to train.
SplitSizes split_sizes(std::size_t n, const SplitFractions& fractions);

struct ManifestEntry {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;
};

struct Dataset {
  SceneSpec spec;
  ClassVocabulary vocab;
  KnowledgeGraph graph;
  std::vector<Scene> train, val, test;
  std::vector<ManifestEntry> manifest;
};

Dataset generate_dataset(const SceneSpec& spec, std::size_t n_scenes, std::uint64_t seed,
                         const SplitFractions& fractions = {});

// Directory layout: spec.cfg, manifest.tsv, knowledge_graph.tsv and one
// <split>.scenes file per split, one scene per line.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

void write_scene(std::ostream& out, const Scene& scene);
Scene parse_scene(const std::string& line);

// FNV-1a over the serialized scene content, excluding its id.
std::uint64_t scene_digest(const Scene& scene);

enum class DropMode { kPre, kPost };
DropMode parse_drop_mode(const std::string& name);
std::string drop_mode_name(DropMode mode);

struct DropProtocol {
  double delta = 0;
  double jitter = 0.2;  // corner perturbation as a fraction of box size
  std::size_t proposals_per_box = 3;
  DropMode mode = DropMode::kPost;
};

struct DropResult {
  std::vector<std::size_t> kept;  // ascending region indices
  std::vector<Box> proposals;
  double recall = 1;
};

// Proposals depend only on (scene, jitter, count, seed), never on delta.
std::vector<Box> jittered_proposals(const Scene& scene, const DropProtocol& protocol, std::uint64_t seed);
DropResult drop_regions(const Scene& scene, const DropProtocol& protocol, std::uint64_t seed);

}  // namespace graphreason
