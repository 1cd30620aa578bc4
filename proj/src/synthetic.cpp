#include "graphreason/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "graphreason/encoding.hpp"
#include "graphreason/errors.hpp"
#include "graphreason/params.hpp"

namespace graphreason {

namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726f746f747970ULL;
constexpr std::uint64_t kProposalStream = 0x70726f706f73616cULL;

// Integer cell rectangle [x, x + w) x [y, y + h).
struct CellRect {
  long x = 0, y = 0, w = 0, h = 0;
};

struct Placed {
  CellRect rect;
  std::size_t label = 0;
};

// Rectangles conflict unless separated by at least one empty cell.
bool conflicts(const CellRect& a, const CellRect& b) {
  return a.x < b.x + b.w + 1 && b.x < a.x + a.w + 1 && a.y < b.y + b.h + 1 && b.y < a.y + a.h + 1;
}

bool fits(const std::vector<Placed>& placed, const std::vector<Placed>& candidate, const SceneSpec& spec) {
  for (const auto& c : candidate) {
    if (c.rect.x < 0 || c.rect.y < 0 || c.rect.x + c.rect.w > static_cast<long>(spec.grid_w) ||
        c.rect.y + c.rect.h > static_cast<long>(spec.grid_h)) {
      return false;
    }
    for (const auto& p : placed) {
      if (conflicts(c.rect, p.rect)) return false;
    }
  }
  return true;
}

long uniform_long(Rng& rng, long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); }

// A parent box with a chain of children beside it, in group-local cells.
std::vector<Placed> make_group(std::size_t child, std::size_t parent, std::size_t k, Rng& rng) {
  std::vector<Placed> g;
  g.push_back({{0, 0, 3, 3}, parent});
  const bool horizontal = child % 2 == 0;
  const bool before = uniform_long(rng, 0, 1) == 1;
  const long offset = uniform_long(rng, 0, 1);
  for (long t = 0; t < static_cast<long>(k); ++t) {
    const long along = before ? -3 - 3 * t : 4 + 3 * t;
    CellRect r = horizontal ? CellRect{along, offset, 2, 2} : CellRect{offset, along, 2, 2};
    g.push_back({r, child});
  }
  return g;
}

// Shifts a group to a random position where its bounding box fits the grid.
bool position_group(std::vector<Placed>& g, const SceneSpec& spec, Rng& rng) {
  long x0 = g[0].rect.x, y0 = g[0].rect.y, x1 = x0, y1 = y0;
  for (const auto& p : g) {
    x0 = std::min(x0, p.rect.x);
    y0 = std::min(y0, p.rect.y);
    x1 = std::max(x1, p.rect.x + p.rect.w);
    y1 = std::max(y1, p.rect.y + p.rect.h);
  }
  const long span_x = static_cast<long>(spec.grid_w) - (x1 - x0);
  const long span_y = static_cast<long>(spec.grid_h) - (y1 - y0);
  if (span_x < 0 || span_y < 0) return false;
  const long dx = uniform_long(rng, 0, span_x) - x0;
  const long dy = uniform_long(rng, 0, span_y) - y0;
  for (auto& p : g) {
    p.rect.x += dx;
    p.rect.y += dy;
  }
  return true;
}

std::optional<std::vector<Placed>> try_layout(const SceneSpec& spec, Rng& rng) {
  const std::size_t amb = spec.ambiguous_classes();
  const std::size_t target = static_cast<std::size_t>(
      uniform_long(rng, static_cast<long>(spec.min_regions), static_cast<long>(spec.max_regions)));
  std::vector<Placed> placed;
  if (amb > 0) {
    while (target - placed.size() >= 1 + spec.chain_min) {
      if (!placed.empty() && uniform_long(rng, 0, 1) == 0) break;
      const std::size_t child = static_cast<std::size_t>(uniform_long(rng, 0, static_cast<long>(amb) - 1));
      const std::size_t k_max = std::min(spec.chain_max, target - placed.size() - 1);
      const std::size_t k = static_cast<std::size_t>(
          uniform_long(rng, static_cast<long>(spec.chain_min), static_cast<long>(k_max)));
      bool done = false;
      for (std::size_t attempt = 0; attempt < spec.max_retries && !done; ++attempt) {
        auto g = make_group(child, amb + child, k, rng);
        if (position_group(g, spec, rng) && fits(placed, g, spec)) {
          placed.insert(placed.end(), g.begin(), g.end());
          done = true;
        }
      }
      if (!done) {
        if (placed.empty()) return std::nullopt;
        break;
      }
    }
  }
  while (placed.size() < target) {
    const std::size_t label =
        static_cast<std::size_t>(uniform_long(rng, static_cast<long>(amb), static_cast<long>(spec.classes) - 1));
    bool done = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !done; ++attempt) {
      const long size = uniform_long(rng, 2, 3);
      std::vector<Placed> one{{{uniform_long(rng, 0, static_cast<long>(spec.grid_w) - size),
                                uniform_long(rng, 0, static_cast<long>(spec.grid_h) - size), size, size},
                               label}};
      if (fits(placed, one, spec)) {
        placed.push_back(one.front());
        done = true;
      }
    }
    if (!done) break;
  }
  if (placed.size() < spec.min_regions) return std::nullopt;
  return placed;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> words(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto w : split(text, ' ')) {
    if (!w.empty()) out.push_back(w);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text, const std::string& what) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw LoadError("malformed " + what + " '" + std::string(text) + "'");
  }
  return value;
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string scene_body(const Scene& scene) {
  std::ostringstream out;
  out << scene.grid_h() << ' ' << scene.grid_w() << ' ' << scene.feature_dim() << '\t' << format_number(scene.height)
      << ' ' << format_number(scene.width) << '\t';
  const auto data = scene.features.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i) out << ' ';
    out << encode_double(static_cast<double>(data[i]));
  }
  for (std::size_t r = 0; r < scene.boxes.size(); ++r) {
    const Box& b = scene.boxes[r];
    out << '\t' << format_number(b.x1) << ' ' << format_number(b.y1) << ' ' << format_number(b.x2) << ' '
        << format_number(b.y2) << ' ' << scene.labels[r];
  }
  return out.str();
}

void read_scenes(const std::filesystem::path& path, std::vector<Scene>& out) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_scene(line));
  }
}

}  // namespace

std::size_t SceneSpec::ambiguous_classes() const {
  const auto pairs = static_cast<std::size_t>(std::floor(ambiguity * static_cast<double>(classes) / 2.0 + 1e-9));
  return 2 * pairs;
}

void SceneSpec::check() const {
  if (classes < 4) throw ConfigError("synthetic scenes need at least 4 classes");
  if (!(ambiguity >= 0 && ambiguity <= 1)) throw ConfigError("ambiguity must lie in [0, 1]");
  const std::size_t amb = ambiguous_classes();
  if (2 * amb > classes) {
    throw ConfigError("ambiguity " + format_number(ambiguity) + " leaves too few parent classes for " +
                      std::to_string(amb) + " ambiguous classes");
  }
  if (grid_h < 1 || grid_w < 1 || feature_dim < 1 || !(cell_px > 0) || !(noise >= 0)) {
    throw ConfigError("grid, feature depth, cell size must be positive and noise non-negative");
  }
  if (min_regions < 1 || min_regions > max_regions) throw ConfigError("need 1 <= min_regions <= max_regions");
  if (chain_min < 1 || chain_min > chain_max) throw ConfigError("need 1 <= chain_min <= chain_max");
  if (amb > 0 && max_regions < 1 + chain_min) throw ConfigError("max_regions cannot hold a parent and its chain");
  if (max_retries < 1) throw ConfigError("max_retries must be positive");
}

void write_spec(std::ostream& out, const SceneSpec& spec) {
  out << "grid_h=" << spec.grid_h << "\ngrid_w=" << spec.grid_w << "\ncell_px=" << format_number(spec.cell_px)
      << "\nclasses=" << spec.classes << "\nfeature_dim=" << spec.feature_dim << "\nmin_regions=" << spec.min_regions
      << "\nmax_regions=" << spec.max_regions << "\nambiguity=" << format_number(spec.ambiguity)
      << "\nnoise=" << format_number(spec.noise) << "\nchain_min=" << spec.chain_min
      << "\nchain_max=" << spec.chain_max << "\nmax_retries=" << spec.max_retries << "\nseed=" << spec.seed << '\n';
}

SceneSpec parse_spec(std::istream& in) {
  SceneSpec spec;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError("spec line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    auto as_size = [&] { return parse_number<std::size_t>(value, key); };
    if (key == "grid_h") spec.grid_h = as_size();
    else if (key == "grid_w") spec.grid_w = as_size();
    else if (key == "cell_px") spec.cell_px = parse_number<double>(value, key);
    else if (key == "classes") spec.classes = as_size();
    else if (key == "feature_dim") spec.feature_dim = as_size();
    else if (key == "min_regions") spec.min_regions = as_size();
    else if (key == "max_regions") spec.max_regions = as_size();
    else if (key == "ambiguity") spec.ambiguity = parse_number<double>(value, key);
    else if (key == "noise") spec.noise = parse_number<double>(value, key);
    else if (key == "chain_min") spec.chain_min = as_size();
    else if (key == "chain_max") spec.chain_max = as_size();
    else if (key == "max_retries") spec.max_retries = as_size();
    else if (key == "seed") spec.seed = parse_number<std::uint64_t>(value, key);
    else throw LoadError("unknown spec key '" + key + "'");
  }
  return spec;
}

ClassVocabulary synthetic_vocabulary(const SceneSpec& spec) {
  const std::size_t amb = spec.ambiguous_classes();
  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (c < amb) names.push_back("part" + std::to_string(c / 2) + (c % 2 == 0 ? "_h" : "_v"));
    else if (c < 2 * amb) names.push_back("whole" + std::to_string(c - amb));
    else names.push_back("thing" + std::to_string(c - 2 * amb));
  }
  return ClassVocabulary(std::move(names));
}

KnowledgeGraph synthetic_graph(const SceneSpec& spec) {
  const std::size_t c = spec.classes, amb = spec.ambiguous_classes();
  KnowledgeGraph g;
  g.classes = c;
  EdgeType part{"is-part-of", true, std::vector<double>(c * c, 0.0)};
  EdgeType similar{"similarity", false, std::vector<double>(c * c, 0.0)};
  for (std::size_t j = 0; j < amb; ++j) {
    part.adjacency[j * c + amb + j] = 1.0;
    const std::size_t twin = j ^ 1U;
    similar.adjacency[j * c + twin] = 1.0;
  }
  g.types.push_back(std::move(part));
  g.types.push_back(std::move(similar));
  return row_normalize(add_inverse_edges(std::move(g)));
}

std::vector<double> class_prototypes(const SceneSpec& spec) {
  const std::size_t c = spec.classes, dh = spec.feature_dim, amb = spec.ambiguous_classes();
  Rng rng(spec.seed ^ kPrototypeStream);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> proto(c * dh);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t d = 0; d < dh; ++d) {
      proto[k * dh + d] = (k < amb && k % 2 == 1) ? proto[(k - 1) * dh + d] : dist(rng);
    }
  }
  return proto;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.check();
  Rng rng(seed);
  std::optional<std::vector<Placed>> layout;
  for (std::size_t attempt = 0; attempt < spec.max_retries && !layout; ++attempt) layout = try_layout(spec, rng);
  if (!layout) {
    throw GenerationError("could not place " + std::to_string(spec.min_regions) + " regions on a " +
                          std::to_string(spec.grid_h) + "x" + std::to_string(spec.grid_w) + " grid after " +
                          std::to_string(spec.max_retries) + " attempts");
  }
  auto& placed = *layout;
  for (std::size_t i = placed.size(); i > 1; --i) {
    std::swap(placed[i - 1], placed[static_cast<std::size_t>(uniform_long(rng, 0, static_cast<long>(i) - 1))]);
  }

  const std::size_t h = spec.grid_h, w = spec.grid_w, dh = spec.feature_dim;
  const auto proto = class_prototypes(spec);
  std::vector<long> owner(h * w, -1);
  for (std::size_t r = 0; r < placed.size(); ++r) {
    const auto& rect = placed[r].rect;
    for (long y = rect.y; y < rect.y + rect.h; ++y)
      for (long x = rect.x; x < rect.x + rect.w; ++x) owner[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = static_cast<long>(r);
  }
  std::normal_distribution<double> noise(0.0, spec.noise);
  Tensor features({h, w, dh});
  for (std::size_t cell = 0; cell < h * w; ++cell) {
    for (std::size_t d = 0; d < dh; ++d) {
      double v = noise(rng);
      if (owner[cell] >= 0) v += proto[placed[static_cast<std::size_t>(owner[cell])].label * dh + d];
      features[cell * dh + d] = static_cast<Scalar>(v);
    }
  }

  Scene scene;
  scene.id = hex64(seed);
  scene.features = features;
  scene.height = spec.height();
  scene.width = spec.width();
  for (const auto& p : placed) {
    const double px = spec.cell_px;
    scene.boxes.push_back({static_cast<double>(p.rect.x) * px, static_cast<double>(p.rect.y) * px,
                           static_cast<double>(p.rect.x + p.rect.w) * px, static_cast<double>(p.rect.y + p.rect.h) * px});
    scene.labels.push_back(p.label);
  }
  return scene;
}

SplitSizes split_sizes(std::size_t n, const SplitFractions& fractions) {
  if (fractions.val < 0 || fractions.test < 0 || fractions.val + fractions.test > 1) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  SplitSizes s;
  // The epsilon keeps exact products such as 700 * (1/7) from rounding down.
  s.val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions.val + 1e-9));
  s.test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions.test + 1e-9));
  s.train = n - s.val - s.test;
  return s;
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t n_scenes, std::uint64_t seed,
                         const SplitFractions& fractions) {
  if (n_scenes < 1) throw ConfigError("dataset needs at least one scene");
  spec.check();
  Dataset ds;
  ds.spec = spec;
  ds.vocab = synthetic_vocabulary(spec);
  ds.graph = synthetic_graph(spec);
  const SplitSizes sizes = split_sizes(n_scenes, fractions);
  std::uint64_t stream = seed;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const std::uint64_t scene_seed = splitmix64(stream);
    Scene scene = generate_scene(spec, scene_seed);
    scene.id = "scene" + std::to_string(i);
    const char* split_name = i < sizes.train ? "train" : (i < sizes.train + sizes.val ? "val" : "test");
    ds.manifest.push_back({scene.id, split_name, scene_seed});
    auto& bucket = i < sizes.train ? ds.train : (i < sizes.train + sizes.val ? ds.val : ds.test);
    bucket.push_back(std::move(scene));
  }
  return ds;
}

void write_scene(std::ostream& out, const Scene& scene) { out << scene.id << '\t' << scene_body(scene) << '\n'; }

Scene parse_scene(const std::string& line) {
  const auto fields = split(line, '\t');
  if (fields.size() < 4) throw LoadError("scene record has " + std::to_string(fields.size()) + " fields, need >= 4");
  Scene scene;
  scene.id = std::string(fields[0]);
  const auto dims = words(fields[1]);
  const auto extent = words(fields[2]);
  if (dims.size() != 3 || extent.size() != 2) throw LoadError("scene " + scene.id + ": malformed dimensions");
  const auto h = parse_number<std::size_t>(dims[0], "grid height");
  const auto w = parse_number<std::size_t>(dims[1], "grid width");
  const auto dh = parse_number<std::size_t>(dims[2], "feature depth");
  scene.height = parse_number<double>(extent[0], "scene height");
  scene.width = parse_number<double>(extent[1], "scene width");
  const auto values = words(fields[3]);
  if (values.size() != h * w * dh) {
    throw LoadError("scene " + scene.id + ": expected " + std::to_string(h * w * dh) + " feature values, got " +
                    std::to_string(values.size()));
  }
  Tensor features({h, w, dh});
  for (std::size_t i = 0; i < values.size(); ++i) features[i] = static_cast<Scalar>(decode_double(values[i]));
  scene.features = features;
  for (std::size_t f = 4; f < fields.size(); ++f) {
    const auto parts = words(fields[f]);
    if (parts.size() != 5) throw LoadError("scene " + scene.id + ": malformed region '" + std::string(fields[f]) + "'");
    Box b{parse_number<double>(parts[0], "x1"), parse_number<double>(parts[1], "y1"),
          parse_number<double>(parts[2], "x2"), parse_number<double>(parts[3], "y2")};
    if (!b.valid()) throw LoadError("scene " + scene.id + ": degenerate region");
    scene.boxes.push_back(b);
    scene.labels.push_back(parse_number<std::size_t>(parts[4], "label"));
  }
  return scene;
}

std::uint64_t scene_digest(const Scene& scene) { return fnv1a64(scene_body(scene)); }

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name);
    if (!out) throw LoadError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("spec.cfg");
    write_spec(out, dataset.spec);
  }
  {
    auto out = open("manifest.tsv");
    out << "# scene_id\tsplit\tseed\n";
    for (const auto& m : dataset.manifest) out << m.id << '\t' << m.split << '\t' << m.seed << '\n';
  }
  save_graph(dir / "knowledge_graph.tsv", dataset.graph, dataset.vocab);
  const std::pair<const char*, const std::vector<Scene>*> splits[] = {
      {"train", &dataset.train}, {"val", &dataset.val}, {"test", &dataset.test}};
  for (const auto& [name, scenes] : splits) {
    auto out = open(std::string(name) + ".scenes");
    for (const auto& s : *scenes) write_scene(out, s);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / "spec.cfg");
    if (!in) throw LoadError("cannot open " + (dir / "spec.cfg").string());
    ds.spec = parse_spec(in);
  }
  ds.vocab = synthetic_vocabulary(ds.spec);
  ds.graph = row_normalize(add_inverse_edges(load_graph(dir / "knowledge_graph.tsv", ds.vocab)));
  {
    std::ifstream in(dir / "manifest.tsv");
    if (!in) throw LoadError("cannot open " + (dir / "manifest.tsv").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line.front() == '#') continue;
      const auto f = split(line, '\t');
      if (f.size() != 3) throw LoadError("malformed manifest line: " + line);
      ds.manifest.push_back({std::string(f[0]), std::string(f[1]), parse_number<std::uint64_t>(f[2], "seed")});
    }
  }
  read_scenes(dir / "train.scenes", ds.train);
  read_scenes(dir / "val.scenes", ds.val);
  read_scenes(dir / "test.scenes", ds.test);
  for (const auto* split_scenes : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& s : *split_scenes) {
      for (auto l : s.labels) {
        if (l >= ds.spec.classes) throw LoadError("scene " + s.id + ": label " + std::to_string(l) + " out of range");
      }
    }
  }
  return ds;
}

DropMode parse_drop_mode(const std::string& name) {
  if (name == "pre") return DropMode::kPre;
  if (name == "post") return DropMode::kPost;
  throw ConfigError("unknown drop mode '" + name + "'");
}

std::string drop_mode_name(DropMode mode) { return mode == DropMode::kPre ? "pre" : "post"; }

std::vector<Box> jittered_proposals(const Scene& scene, const DropProtocol& protocol, std::uint64_t seed) {
  Rng rng(seed ^ kProposalStream);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Box> out;
  for (const auto& b : scene.boxes) {
    for (std::size_t k = 0; k < protocol.proposals_per_box; ++k) {
      const double jw = protocol.jitter * b.width(), jh = protocol.jitter * b.height();
      Box p{b.x1 + jw * unit(rng), b.y1 + jh * unit(rng), b.x2 + jw * unit(rng), b.y2 + jh * unit(rng)};
      p.x1 = std::clamp(p.x1, 0.0, scene.width);
      p.x2 = std::clamp(p.x2, 0.0, scene.width);
      p.y1 = std::clamp(p.y1, 0.0, scene.height);
      p.y2 = std::clamp(p.y2, 0.0, scene.height);
      out.push_back(p);
    }
  }
  return out;
}

DropResult drop_regions(const Scene& scene, const DropProtocol& protocol, std::uint64_t seed) {
  if (!(protocol.delta >= 0 && protocol.delta < 1)) throw ContractError("delta must lie in [0, 1)");
  DropResult res;
  res.proposals = jittered_proposals(scene, protocol, seed);
  for (std::size_t r = 0; r < scene.boxes.size(); ++r) {
    double best = 0;
    for (const auto& p : res.proposals) {
      if (p.valid()) best = std::max(best, iou(scene.boxes[r], p));
    }
    if (best > protocol.delta) res.kept.push_back(r);
  }
  res.recall = scene.boxes.empty() ? 1.0
                                   : static_cast<double>(res.kept.size()) / static_cast<double>(scene.boxes.size());
  return res;
}

}  // namespace graphreason
