#include "lutnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace lutnet {

void Dataset::validate() const {
  if (targets.size() != 0 && targets.rows() != features.rows())
    throw Error(ErrorKind::InvariantViolation, "dataset: target rows differ from the feature rows");
  if (!(labels.empty() && targets.size() != 0) && static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw Error(ErrorKind::InvariantViolation, "dataset: label count differs from the feature rows");
  for (int l : labels)
    if (l < 0 || l >= classes) throw Error(ErrorKind::InvariantViolation, "dataset: label outside [0, classes)");
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void need(const std::vector<unsigned char>& b, std::size_t bytes, const std::filesystem::path& path) {
  if (b.size() < bytes) throw Error(ErrorKind::Parse, path.string() + ": truncated IDX file");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(cell);
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  need(img, 16, images);
  need(lab, 8, labels);
  if (be32(img, 0) != 0x00000803) throw Error(ErrorKind::Parse, images.string() + ": bad IDX image magic");
  if (be32(lab, 0) != 0x00000801) throw Error(ErrorKind::Parse, labels.string() + ": bad IDX label magic");
  const std::uint32_t count = be32(img, 4);
  const std::uint32_t rows = be32(img, 8);
  const std::uint32_t cols = be32(img, 12);
  if (be32(lab, 4) != count) throw Error(ErrorKind::Parse, "IDX image and label counts differ");
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  need(img, 16 + pixels * count, images);
  need(lab, 8 + std::size_t{count}, labels);

  Dataset d;
  d.features.resize(count, static_cast<Eigen::Index>(pixels));
  d.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t base = 16 + pixels * i;
    for (std::size_t p = 0; p < pixels; ++p) d.features(i, static_cast<Eigen::Index>(p)) = img[base + p] / 255.0;
    d.labels[i] = lab[8 + i];
  }
  d.classes = count ? *std::max_element(d.labels.begin(), d.labels.end()) + 1 : 0;
  d.normalization.kind = NormalizationKind::Scale;
  d.normalization.center = VectorXd::Zero(static_cast<Eigen::Index>(pixels));
  d.normalization.spread = VectorXd::Constant(static_cast<Eigen::Index>(pixels), 255.0);
  d.image_shape = SpatialShape{static_cast<int>(rows), static_cast<int>(cols), 1};
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Parse, path.string() + ": empty CSV file");
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end()) throw Error(ErrorKind::Parse, path.string() + ": no label column '" + label_column + "'");
  const std::size_t label_at = static_cast<std::size_t>(it - header.begin());

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " cells");
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_at) continue;
      double v = 0.0;
      if (!parse_double(cells[c], v) || !std::isfinite(v))
        throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                                          cells[c] + "' in column '" + header[c] + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
    raw_labels.push_back(cells[label_at]);
  }

  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto f = static_cast<Eigen::Index>(header.size() - 1);
  d.features.resize(n, f);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < f; ++c) d.features(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];

  bool numeric = true;
  std::vector<int> ints(raw_labels.size());
  for (std::size_t i = 0; i < raw_labels.size() && numeric; ++i)
    numeric = parse_int(raw_labels[i], ints[i]) && ints[i] >= 0;
  if (numeric) {
    d.labels = ints;
    d.classes = ints.empty() ? 0 : *std::max_element(ints.begin(), ints.end()) + 1;
  } else {
    std::map<std::string, int> ids;
    for (const auto& s : raw_labels) ids.emplace(s, 0);
    int next = 0;
    for (auto& [name, id] : ids) {
      id = next++;
      d.class_names.push_back(name);
    }
    for (const auto& s : raw_labels) d.labels.push_back(ids.at(s));
    d.classes = next;
  }

  Normalization norm;
  norm.kind = NormalizationKind::Standardize;
  norm.center = VectorXd::Zero(f);
  norm.spread = VectorXd::Ones(f);
  if (n > 0) {
    norm.center = d.features.colwise().mean().transpose();
    for (Eigen::Index c = 0; c < f; ++c) {
      const double var = (d.features.col(c).array() - norm.center[c]).square().mean();
      const double sd = std::sqrt(var);
      norm.spread[c] = sd > 0.0 ? sd : 1.0;
    }
  }
  return apply_normalization(std::move(d), norm);
}

Dataset apply_normalization(Dataset data, const Normalization& norm) {
  if (norm.kind == NormalizationKind::Standardize) {
    if (norm.center.size() != data.features.cols())
      throw Error(ErrorKind::WidthMismatch, "normalization width differs from the dataset");
    for (Eigen::Index c = 0; c < data.features.cols(); ++c)
      data.features.col(c) = (data.features.col(c).array() - norm.center[c]) / norm.spread[c];
  }
  data.normalization = norm;
  return data;
}

Dataset subset(const Dataset& data, const std::vector<int>& indices) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), data.features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(indices[i]);
    if (!data.labels.empty()) out.labels.push_back(data.labels[static_cast<std::size_t>(indices[i])]);
  }
  if (data.targets.size() != 0) {
    out.targets.resize(static_cast<Eigen::Index>(indices.size()), data.targets.cols());
    for (std::size_t i = 0; i < indices.size(); ++i)
      out.targets.row(static_cast<Eigen::Index>(i)) = data.targets.row(indices[i]);
  }
  out.classes = data.classes;
  out.normalization = data.normalization;
  out.image_shape = data.image_shape;
  out.class_names = data.class_names;
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw Error(ErrorKind::InvalidSpec, "train fraction must be in [0, 1]");
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order);
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(order.size())));
  return {subset(data, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut)}),
          subset(data, {order.begin() + static_cast<std::ptrdiff_t>(cut), order.end()})};
}

Dataset fit_to_quantizer(Dataset data, const QuantizerParams& q) {
  const bool standardized = data.normalization.kind == NormalizationKind::Standardize;
  for (Eigen::Index r = 0; r < data.features.rows(); ++r)
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      double u = data.features(r, c);
      if (standardized) u = (u + 3.0) / 6.0;
      u = std::clamp(u, 0.0, 1.0);
      data.features(r, c) = q.is_binary() ? (2.0 * u - 1.0) * q.max_val : u * q.max_val;
    }
  return data;
}

DataSplits load_data_dir(const std::filesystem::path& dir, const std::string& label_column) {
  const auto train_img = dir / "train-images-idx3-ubyte";
  if (std::filesystem::exists(train_img)) {
    DataSplits s;
    s.train = load_idx(train_img, dir / "train-labels-idx1-ubyte");
    s.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    return s;
  }
  if (std::filesystem::exists(dir / "train.csv")) {
    DataSplits s;
    s.train = load_csv(dir / "train.csv", label_column);
    Dataset test = load_csv(dir / "test.csv", label_column);
    // Undo the test set's own standardization, then use the training statistics.
    for (Eigen::Index c = 0; c < test.features.cols(); ++c)
      test.features.col(c) = test.features.col(c).array() * test.normalization.spread[c] + test.normalization.center[c];
    s.test = apply_normalization(std::move(test), s.train.normalization);
    if (!s.train.class_names.empty() && s.train.class_names != s.test.class_names)
      throw Error(ErrorKind::Parse, "train.csv and test.csv use different class names");
    s.test.classes = std::max(s.test.classes, s.train.classes);
    s.train.classes = s.test.classes;
    return s;
  }
  throw Error(ErrorKind::Io, dir.string() + ": expected MNIST IDX files or train.csv/test.csv");
}

}  // namespace lutnet
