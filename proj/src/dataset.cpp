#include "cnnmap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "cnnmap/errors.hpp"

namespace cnnmap {

namespace fs = std::filesystem;

float decode_depth(std::uint16_t raw, DepthEncoding encoding) {
  switch (encoding) {
    case DepthEncoding::tum:
      return static_cast<float>(raw) / 5000.0f;
    case DepthEncoding::millimeters:
      return raw == 65535 ? 0.0f : static_cast<float>(raw) / 1000.0f;
  }
  return 0.0f;
}

namespace {

DepthMap read_depth(const fs::path& path, DepthEncoding encoding) {
  const Image16 raw = read_png16(path);
  DepthMap d;
  d.width = raw.width;
  d.height = raw.height;
  d.meters.resize(raw.pixels.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) d.meters[i] = decode_depth(raw.pixels[i], encoding);
  return d;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_double(const std::string& token) {
  if (token.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

std::vector<double> parse_numbers(const std::string& line, const fs::path& file, std::size_t line_no,
                                  std::size_t expected) {
  const auto tokens = split_ws(line);
  if (tokens.size() != expected) {
    throw ParseError(file.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                         " values, found " + std::to_string(tokens.size()),
                     line_no, ParseError::Unit::line);
  }
  std::vector<double> values;
  for (const auto& t : tokens) {
    auto v = parse_double(t);
    if (!v) {
      throw ParseError(file.string() + ":" + std::to_string(line_no) + ": not a number: '" + t + "'", line_no,
                       ParseError::Unit::line);
    }
    values.push_back(*v);
  }
  return values;
}

std::optional<Intrinsics> read_intrinsics_file(const fs::path& dir) {
  for (const fs::path& candidate : {dir / "intrinsics.txt", dir.parent_path() / "intrinsics.txt"}) {
    if (!fs::is_regular_file(candidate)) continue;
    std::ifstream in(candidate);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      auto v = parse_numbers(line, candidate, line_no, 4);
      if (!(v[0] > 0 && v[1] > 0)) {
        throw ParseError(candidate.string() + ": focal lengths must be positive", line_no, ParseError::Unit::line);
      }
      return Intrinsics{v[0], v[1], v[2], v[3]};
    }
  }
  return std::nullopt;
}

struct StampedFile {
  double t;
  fs::path path;
};

// rgb.txt / depth.txt lists when present, otherwise timestamps from file names.
std::vector<StampedFile> list_stamped(const fs::path& dir, const std::string& sub) {
  std::vector<StampedFile> out;
  const fs::path list = dir / (sub + ".txt");
  if (fs::is_regular_file(list)) {
    std::ifstream in(list);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto tokens = split_ws(line);
      auto t = tokens.size() == 2 ? parse_double(tokens[0]) : std::nullopt;
      if (!t) {
        throw ParseError(list.string() + ":" + std::to_string(line_no) + ": expected 'timestamp filename'",
                         line_no, ParseError::Unit::line);
      }
      out.push_back({*t, dir / tokens[1]});
    }
  } else if (fs::is_directory(dir / sub)) {
    for (const auto& entry : fs::directory_iterator(dir / sub)) {
      if (entry.path().extension() != ".png") continue;
      auto t = parse_double(entry.path().stem().string());
      if (!t) throw DatasetLayoutError("cannot read timestamp from file name '" + entry.path().string() + "'");
      out.push_back({*t, entry.path()});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return out;
}

Mat3 top_left(const std::vector<double>& m) {
  return {{{m[0], m[1], m[2]}, {m[4], m[5], m[6]}, {m[8], m[9], m[10]}}};
}

}  // namespace

Frame Frame::decoded() const {
  Frame f = *this;
  if (!f.rgb && f.rgb_file) f.rgb = read_png8(*f.rgb_file);
  if (!f.depth && f.depth_file) f.depth = read_depth(*f.depth_file, f.depth_encoding);
  return f;
}

std::vector<std::pair<std::size_t, std::size_t>> associate_timestamps(const std::vector<double>& a,
                                                                      const std::vector<double>& b,
                                                                      double tolerance) {
  std::vector<std::size_t> b_order(b.size());
  for (std::size_t j = 0; j < b.size(); ++j) b_order[j] = j;
  std::sort(b_order.begin(), b_order.end(), [&](std::size_t x, std::size_t y) { return b[x] < b[y]; });
  std::vector<double> b_sorted(b.size());
  for (std::size_t j = 0; j < b.size(); ++j) b_sorted[j] = b[b_order[j]];

  struct Candidate {
    double dt;
    std::size_t i;
    std::size_t j;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto lo = std::lower_bound(b_sorted.begin(), b_sorted.end(), a[i] - tolerance);
    for (auto it = lo; it != b_sorted.end() && *it <= a[i] + tolerance; ++it) {
      const double dt = std::abs(*it - a[i]);
      if (dt < tolerance) candidates.push_back({dt, i, b_order[static_cast<std::size_t>(it - b_sorted.begin())]});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.dt != y.dt) return x.dt < y.dt;
    if (x.i != y.i) return x.i < y.i;
    return x.j < y.j;
  });
  std::vector<bool> used_a(a.size()), used_b(b.size());
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& c : candidates) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = true;
    pairs.emplace_back(c.i, c.j);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

Sequence load_tum_sequence(const fs::path& dir, double assoc_tolerance) {
  if (!fs::is_directory(dir)) throw DatasetLayoutError("not a directory: '" + dir.string() + "'");
  const fs::path gt_path = dir / "groundtruth.txt";
  if (!fs::is_regular_file(gt_path)) throw DatasetLayoutError("missing groundtruth.txt in '" + dir.string() + "'");

  std::vector<double> gt_t;
  std::vector<Pose> gt_pose;
  {
    std::ifstream in(gt_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto v = parse_numbers(line, gt_path, line_no, 8);
      const Quaternion q{v[7], v[4], v[5], v[6]};  // file order qx qy qz qw
      if (!(q.norm() > 0.0)) {
        throw ParseError(gt_path.string() + ":" + std::to_string(line_no) + ": zero quaternion", line_no,
                         ParseError::Unit::line);
      }
      gt_t.push_back(v[0]);
      gt_pose.push_back(Pose::canonical({v[1], v[2], v[3]}, q));
    }
  }

  const auto rgb = list_stamped(dir, "rgb");
  const auto depth = list_stamped(dir, "depth");
  if (rgb.empty() && depth.empty()) throw DatasetLayoutError("no rgb/ or depth/ images in '" + dir.string() + "'");

  struct Partial {
    double t;
    std::optional<fs::path> rgb, depth;
  };
  std::vector<Partial> partial;
  if (!rgb.empty() && !depth.empty()) {
    std::vector<double> ta, tb;
    for (const auto& f : rgb) ta.push_back(f.t);
    for (const auto& f : depth) tb.push_back(f.t);
    for (auto [i, j] : associate_timestamps(ta, tb, assoc_tolerance)) {
      partial.push_back({rgb[i].t, rgb[i].path, depth[j].path});
    }
  } else if (!rgb.empty()) {
    for (const auto& f : rgb) partial.push_back({f.t, f.path, std::nullopt});
  } else {
    for (const auto& f : depth) partial.push_back({f.t, std::nullopt, f.path});
  }

  std::vector<double> tp;
  for (const auto& p : partial) tp.push_back(p.t);
  Sequence seq;
  seq.intrinsics = read_intrinsics_file(dir).value_or(Intrinsics::tum());
  seq.tag = dir.filename().string();
  for (auto [i, j] : associate_timestamps(tp, gt_t, assoc_tolerance)) {
    Frame f;
    f.rgb_file = partial[i].rgb;
    f.depth_file = partial[i].depth;
    f.depth_encoding = DepthEncoding::tum;
    f.pose = gt_pose[j];
    f.timestamp = partial[i].t;
    seq.frames.push_back(std::move(f));
  }
  if (seq.frames.empty()) throw DatasetLayoutError("no frames could be associated in '" + dir.string() + "'");
  return seq;
}

Sequence load_7scenes_sequence(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetLayoutError("not a directory: '" + dir.string() + "'");
  static const std::regex pattern(R"(frame-(\d{6})\.(color\.png|depth\.png|pose\.txt))");
  struct Files {
    std::optional<fs::path> color, depth, pose;
  };
  std::map<std::size_t, Files> by_index;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) continue;
    auto& files = by_index[std::stoul(m[1].str())];
    if (m[2] == "color.png") {
      files.color = entry.path();
    } else if (m[2] == "depth.png") {
      files.depth = entry.path();
    } else {
      files.pose = entry.path();
    }
  }
  if (by_index.empty()) throw DatasetLayoutError("no frame-NNNNNN files in '" + dir.string() + "'");

  bool any_depth = false;
  for (const auto& [idx, files] : by_index) any_depth |= files.depth.has_value();

  Sequence seq;
  seq.intrinsics = read_intrinsics_file(dir).value_or(Intrinsics::seven_scenes());
  seq.tag = dir.filename().string();
  const std::size_t first = by_index.begin()->first;
  const std::size_t last = by_index.rbegin()->first;
  for (std::size_t idx = first; idx <= last; ++idx) {
    auto it = by_index.find(idx);
    const std::string frame_name = "frame " + std::to_string(idx);
    if (it == by_index.end() || !it->second.color) {
      throw DatasetLayoutError(frame_name + ": missing color image in '" + dir.string() + "'");
    }
    const Files& files = it->second;
    if (!files.pose) throw DatasetLayoutError(frame_name + ": missing pose file in '" + dir.string() + "'");
    if (any_depth && !files.depth) {
      throw DatasetLayoutError(frame_name + ": missing depth image in '" + dir.string() + "'");
    }

    std::ifstream in(*files.pose);
    std::string text, line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
      ++lines;
      text += line + ' ';
    }
    const auto m = parse_numbers(text, *files.pose, lines, 16);
    Frame f;
    f.rgb_file = files.color;
    f.depth_file = files.depth;
    f.depth_encoding = DepthEncoding::millimeters;
    f.pose = Pose::canonical({m[3], m[7], m[11]}, quat_from_matrix(top_left(m)));
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

Sequence load_manifest_sequence(const fs::path& csv_path) {
  static const char* kHeader = "image,tx,ty,tz,qw,qx,qy,qz";
  std::ifstream in(csv_path);
  if (!in) throw DatasetLayoutError("cannot open manifest '" + csv_path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != kHeader) {
    throw ParseError(csv_path.string() + ":1: bad header, expected columns " + kHeader, 1, ParseError::Unit::line);
  }
  const fs::path base = csv_path.parent_path();
  Sequence seq;
  seq.intrinsics = read_intrinsics_file(base).value_or(Intrinsics::tum());
  seq.tag = csv_path.stem().string();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) fields.push_back(trim(field));
    if (fields.size() != 8) {
      throw ParseError(csv_path.string() + ":" + std::to_string(line_no) + ": expected 8 columns", line_no,
                       ParseError::Unit::line);
    }
    std::vector<double> v;
    for (std::size_t i = 1; i < 8; ++i) {
      auto d = parse_double(fields[i]);
      if (!d) {
        throw ParseError(csv_path.string() + ":" + std::to_string(line_no) + ": not a number: '" + fields[i] + "'",
                         line_no, ParseError::Unit::line);
      }
      v.push_back(*d);
    }
    const fs::path image = base / fields[0];
    if (!fs::is_regular_file(image)) throw DatasetLayoutError("missing image file '" + image.string() + "'");
    const Quaternion q{v[3], v[4], v[5], v[6]};
    if (!(q.norm() > 0.0)) {
      throw ParseError(csv_path.string() + ":" + std::to_string(line_no) + ": zero quaternion", line_no,
                       ParseError::Unit::line);
    }
    Frame f;
    f.rgb_file = image;
    f.pose = Pose::canonical({v[0], v[1], v[2]}, q);
    seq.frames.push_back(std::move(f));
  }
  if (seq.frames.empty()) throw DatasetLayoutError("manifest '" + csv_path.string() + "' has no rows");
  return seq;
}

Sequence load_sequence_auto(const fs::path& path) {
  if (fs::is_regular_file(path) && path.extension() == ".csv") return load_manifest_sequence(path);
  if (!fs::is_directory(path)) throw DatasetLayoutError("no such dataset: '" + path.string() + "'");
  if (fs::is_regular_file(path / "groundtruth.txt")) return load_tum_sequence(path);
  return load_7scenes_sequence(path);
}

PointMap backproject(const DepthMap& depth, const Intrinsics& k) {
  PointMap p;
  p.width = depth.width;
  p.height = depth.height;
  p.xyz.assign(depth.width * depth.height * 3, 0.0);
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (!(d > 0.0)) continue;
      double* out = p.xyz.data() + (v * depth.width + u) * 3;
      out[0] = (static_cast<double>(u) - k.cx) * d / k.fx;
      out[1] = (static_cast<double>(v) - k.cy) * d / k.fy;
      out[2] = d;
    }
  }
  return p;
}

namespace {

// Native-resolution plane; `valid` (when non-empty) marks usable samples.
struct Plane {
  std::vector<float> values;
  const std::vector<std::uint8_t>* valid = nullptr;
};

void resample_plane(const Plane& plane, std::size_t width, std::size_t height, std::size_t out_size, float* dst) {
  const std::size_t side = std::min(width, height);
  const std::size_t x0 = (width - side) / 2;
  const std::size_t y0 = (height - side) / 2;
  const double scale = static_cast<double>(side) / static_cast<double>(out_size);
  auto coord = [&](std::size_t d, std::size_t origin, std::size_t& lo, std::size_t& hi, double& frac) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(side - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, side - 1);
    frac = s - static_cast<double>(lo);
    lo += origin;
    hi += origin;
  };
  for (std::size_t oy = 0; oy < out_size; ++oy) {
    std::size_t ya, yb;
    double fy;
    coord(oy, y0, ya, yb, fy);
    for (std::size_t ox = 0; ox < out_size; ++ox) {
      std::size_t xa, xb;
      double fx;
      coord(ox, x0, xa, xb, fx);
      const std::size_t idx[4] = {ya * width + xa, ya * width + xb, yb * width + xa, yb * width + xb};
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      double acc = 0.0, wsum = 0.0;
      for (int i = 0; i < 4; ++i) {
        if (plane.valid && !(*plane.valid)[idx[i]]) continue;
        acc += w[i] * plane.values[idx[i]];
        wsum += w[i];
      }
      float v = 0.0f;
      if (!plane.valid) {
        v = static_cast<float>(acc);
      } else if (wsum > 0.0) {
        v = static_cast<float>(acc / wsum);
      }
      dst[oy * out_size + ox] = v;
    }
  }
}

}  // namespace

Tensor<float> assemble_input(const Frame& source, const InputSpec& spec, const Intrinsics& k, std::size_t out_size) {
  if (spec.needs_color() && !source.has_rgb()) {
    throw MissingModalityError("input kind '" + std::string(spec.name()) + "' needs color but the frame has none");
  }
  if (spec.needs_depth() && !source.has_depth()) {
    throw MissingModalityError("input kind '" + std::string(spec.name()) + "' needs depth but the frame has none");
  }
  const bool need_decode = (spec.needs_color() && !source.rgb) || (spec.needs_depth() && !source.depth);
  const Frame decoded = need_decode ? source.decoded() : Frame{};
  const Frame& frame = need_decode ? decoded : source;

  std::size_t width = 0, height = 0;
  if (spec.needs_color()) {
    width = frame.rgb->width;
    height = frame.rgb->height;
  }
  if (spec.needs_depth()) {
    if (width != 0 && (frame.depth->width != width || frame.depth->height != height)) {
      throw DimensionError("depth " + std::to_string(frame.depth->width) + "x" + std::to_string(frame.depth->height) +
                           " does not match color " + std::to_string(width) + "x" + std::to_string(height));
    }
    width = frame.depth->width;
    height = frame.depth->height;
  }

  std::vector<Plane> planes;
  const std::size_t pixels = width * height;
  if (spec.needs_color()) {
    const Image8& img = *frame.rgb;
    auto channel = [&](std::size_t c) {
      Plane p;
      p.values.resize(pixels);
      const std::size_t src_c = img.channels == 1 ? 0 : c;
      for (std::size_t i = 0; i < pixels; ++i) p.values[i] = img.pixels[i * img.channels + src_c] / 255.0f - 0.5f;
      return p;
    };
    if (spec.kind == InputKind::gray) {
      Plane p;
      p.values.resize(pixels);
      for (std::size_t i = 0; i < pixels; ++i) {
        const std::uint8_t* px = img.pixels.data() + i * img.channels;
        const double luma = img.channels == 1 ? px[0] : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        p.values[i] = static_cast<float>(luma / 255.0 - 0.5);
      }
      planes.push_back(std::move(p));
    } else {
      for (std::size_t c = 0; c < 3; ++c) planes.push_back(channel(c));
    }
  }

  std::vector<std::uint8_t> valid;
  if (spec.needs_depth()) {
    const DepthMap& depth = *frame.depth;
    valid.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) valid[i] = depth.meters[i] > 0.0f ? 1 : 0;
    if (spec.kind == InputKind::depth || spec.kind == InputKind::rgbd) {
      planes.push_back(Plane{depth.meters, &valid});
    } else {
      const PointMap points = backproject(depth, k);
      for (std::size_t c = 0; c < 3; ++c) {
        Plane p;
        p.values.resize(pixels);
        for (std::size_t i = 0; i < pixels; ++i) p.values[i] = static_cast<float>(points.xyz[i * 3 + c]);
        p.valid = &valid;
        planes.push_back(std::move(p));
      }
    }
  }

  Tensor<float> out({planes.size(), out_size, out_size});
  for (std::size_t c = 0; c < planes.size(); ++c) {
    resample_plane(planes[c], width, height, out_size, out.raw() + c * out_size * out_size);
  }
  return out;
}

}  // namespace cnnmap
