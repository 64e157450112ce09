#include "efc/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "efc/serialize.hpp"

namespace efc {

void Dataset::validate() const {
  require(inputs.rows() == labels.size(),
          "dataset: " + std::to_string(inputs.rows()) + " inputs vs " +
          std::to_string(labels.size()) + " labels");
  require(num_classes > 0, "dataset: num_classes must be positive");
  for (Index i = 0; i < labels.size(); ++i)
    require(labels[i] >= 0 && labels[i] < num_classes,
            "dataset: label " + std::to_string(labels[i]) + " at row " +
            std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
}

Dataset Dataset::subset(const std::vector<Index>& idx) const {
  Dataset out;
  out.num_classes = num_classes;
  out.inputs.resize(idx.size(), inputs.cols());
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < inputs.rows(), "subset index out of range");
    out.inputs.row(i) = inputs.row(idx[i]);
    out.labels[i] = labels[idx[i]];
  }
  return out;
}

LossSpec make_loss(LossKind kind, int label, int num_classes) {
  require(label >= 0 && label < num_classes, "label outside class range");
  LossSpec loss;
  loss.kind = kind;
  if (kind == LossKind::SoftmaxCrossEntropy) {
    loss.label = label;
  } else {
    loss.target = Vec::Zero(num_classes);
    loss.target[label] = 1.0;
  }
  return loss;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path, long long offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw DataError(path + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Mat load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::uint32_t magic = read_be32(in, path, 0);
  if (magic != 0x00000803)
    throw DataError(path + ": bad magic 0x" + std::to_string(magic) +
                    " at byte offset 0, expected 0x803 image file");
  std::uint32_t count = read_be32(in, path, 4);
  std::uint32_t rows = read_be32(in, path, 8);
  std::uint32_t cols = read_be32(in, path, 12);
  const std::size_t pixels = std::size_t(rows) * cols;
  Mat out(count, pixels);
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(pixels));
    if (!in)
      throw DataError(path + ": truncated image " + std::to_string(i) +
                      " at byte offset " + std::to_string(16 + std::size_t(i) * pixels));
    for (std::size_t p = 0; p < pixels; ++p) out(i, Index(p)) = buf[p] / 255.0;
  }
  return out;
}

Eigen::VectorXi load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::uint32_t magic = read_be32(in, path, 0);
  if (magic != 0x00000801)
    throw DataError(path + ": bad magic 0x" + std::to_string(magic) +
                    " at byte offset 0, expected 0x801 label file");
  std::uint32_t count = read_be32(in, path, 4);
  Eigen::VectorXi out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    char b;
    in.read(&b, 1);
    if (!in)
      throw DataError(path + ": truncated label " + std::to_string(i) +
                      " at byte offset " + std::to_string(8 + i));
    out[i] = static_cast<unsigned char>(b);
  }
  return out;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  Dataset d;
  d.inputs = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  require(d.inputs.rows() == d.labels.size(),
          "idx image/label counts differ: " + std::to_string(d.inputs.rows()) +
          " vs " + std::to_string(d.labels.size()));
  d.num_classes = d.labels.size() ? d.labels.maxCoeff() + 1 : 0;
  d.validate();
  return d;
}

TaskSequence synthetic_tasks(int num_tasks, int classes_per_task, int dim,
                             int train_per_class, int test_per_class,
                             std::uint64_t seed, double separation, double spread,
                             int shared_rank, double task_overlap) {
  require(num_tasks > 0 && classes_per_task > 0 && dim > 0, "synthetic_tasks: sizes must be positive");
  require(train_per_class > 0 && test_per_class > 0, "synthetic_tasks: counts must be positive");
  require(shared_rank <= dim, "synthetic_tasks: shared_rank exceeds the input dimension");
  require(task_overlap >= 0.0 && task_overlap < 1.0,
          "synthetic_tasks: task_overlap must lie in [0, 1)");
  const int num_classes = num_tasks * classes_per_task;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // With shared_rank > 0 every prototype lives in one rank-dimensional
  // subspace (an orthonormal basis drawn once), so tasks share features the
  // way image tasks share strokes; 0 keeps independent full-space prototypes.
  Mat basis;
  if (shared_rank > 0) {
    Mat raw(dim, shared_rank);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < shared_rank; ++j) raw(i, j) = normal(rng);
    Eigen::HouseholderQR<Mat> qr(raw);
    basis = Mat(qr.householderQ()) .leftCols(shared_rank);
  }

  // With task_overlap > 0 class slot k of every task shares one parent
  // direction: each task's class k is a fresh refinement of the same family,
  // so later tasks reuse (and overwrite) the features of earlier ones instead
  // of occupying independent regions of input space.
  const int proto_dim = shared_rank > 0 ? shared_rank : dim;
  std::vector<Vec> parents;
  if (task_overlap > 0.0) {
    for (int k = 0; k < classes_per_task; ++k) {
      Vec p(proto_dim);
      for (Index i = 0; i < p.size(); ++i) p[i] = normal(rng);
      parents.push_back(p / p.norm());
    }
  }

  std::vector<Vec> prototypes;
  for (int c = 0; c < num_classes; ++c) {
    Vec p(proto_dim);
    for (Index i = 0; i < p.size(); ++i) p[i] = normal(rng);
    if (task_overlap > 0.0) {
      p /= p.norm();
      p = task_overlap * parents[std::size_t(c % classes_per_task)] +
          std::sqrt(1.0 - task_overlap * task_overlap) * p;
    }
    p *= separation / p.norm();
    prototypes.push_back(shared_rank > 0 ? Vec(basis * p) : p);
  }

  auto draw_class = [&](int c, int count, Mat& x, Eigen::VectorXi& y, Index at) {
    for (int s = 0; s < count; ++s) {
      for (int i = 0; i < dim; ++i) x(at, i) = prototypes[c][i] + spread * normal(rng);
      y[at] = c;
      ++at;
    }
    return at;
  };

  TaskSequence seq;
  seq.input_dim = dim;
  seq.num_classes = num_classes;
  for (int t = 0; t < num_tasks; ++t) {
    TaskData task;
    task.train.num_classes = task.test.num_classes = num_classes;
    task.train.inputs.resize(Index(classes_per_task) * train_per_class, dim);
    task.train.labels.resize(Index(classes_per_task) * train_per_class);
    task.test.inputs.resize(Index(classes_per_task) * test_per_class, dim);
    task.test.labels.resize(Index(classes_per_task) * test_per_class);
    Index at_train = 0, at_test = 0;
    for (int k = 0; k < classes_per_task; ++k) {
      int c = t * classes_per_task + k;
      task.classes.push_back(c);
      at_train = draw_class(c, train_per_class, task.train.inputs, task.train.labels, at_train);
      at_test = draw_class(c, test_per_class, task.test.inputs, task.test.labels, at_test);
    }
    seq.tasks.push_back(std::move(task));
  }
  return seq;
}

TaskSequence split_tasks(const Dataset& train, const Dataset& test,
                         const std::vector<std::vector<int>>& class_sets) {
  train.validate();
  test.validate();
  require(!class_sets.empty(), "split_tasks: no class sets given");
  std::set<int> seen;
  for (const auto& s : class_sets)
    for (int c : s)
      require(seen.insert(c).second,
              "split_tasks: class " + std::to_string(c) + " appears in two sets");

  TaskSequence seq;
  seq.input_dim = int(train.inputs.cols());
  seq.num_classes = train.num_classes;
  for (const auto& s : class_sets) {
    TaskData task;
    task.classes = s;
    auto pick = [&](const Dataset& d) {
      std::vector<Index> idx;
      for (Index i = 0; i < d.size(); ++i)
        if (std::find(s.begin(), s.end(), d.labels[i]) != s.end()) idx.push_back(i);
      return d.subset(idx);
    };
    task.train = pick(train);
    task.test = pick(test);
    for (int c : s) {
      bool found = false;
      for (Index i = 0; i < task.train.size() && !found; ++i)
        found = task.train.labels[i] == c;
      require(found, "split_tasks: class " + std::to_string(c) + " has no training samples");
    }
    seq.tasks.push_back(std::move(task));
  }
  return seq;
}

namespace {
Dataset merge(const TaskSequence& seq, bool use_train) {
  Dataset out;
  Index total = 0, cols = 0;
  for (const auto& t : seq.tasks) {
    const Dataset& d = use_train ? t.train : t.test;
    total += d.size();
    cols = d.inputs.cols();
    out.num_classes = d.num_classes;
  }
  out.inputs.resize(total, cols);
  out.labels.resize(total);
  Index at = 0;
  for (const auto& t : seq.tasks) {
    const Dataset& d = use_train ? t.train : t.test;
    out.inputs.middleRows(at, d.size()) = d.inputs;
    out.labels.segment(at, d.size()) = d.labels;
    at += d.size();
  }
  return out;
}
}  // namespace

Dataset merge_train(const TaskSequence& seq) { return merge(seq, true); }
Dataset merge_test(const TaskSequence& seq) { return merge(seq, false); }

void save_features(const std::string& base, const Dataset& data) {
  data.validate();
  write_matrix(base + ".fmat", data.inputs);
  std::ofstream out(base + ".lbl", std::ios::binary);
  if (!out) throw DataError("cannot open " + base + ".lbl for writing");
  out.write("EFCL", 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  std::int64_t count = data.labels.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  std::int32_t classes = data.num_classes;
  out.write(reinterpret_cast<const char*>(&classes), 4);
  for (Index i = 0; i < count; ++i) {
    std::int32_t v = data.labels[i];
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!out) throw DataError("short write to " + base + ".lbl");
}

Dataset load_features(const std::string& base) {
  Dataset d;
  d.inputs = read_matrix(base + ".fmat");
  std::string path = base + ".lbl";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "EFCL")
    throw DataError(path + ": bad magic at byte offset 0, expected EFCL");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (!in || version != 1)
    throw DataError(path + ": unsupported version at byte offset 4");
  std::int64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  std::int32_t classes = 0;
  in.read(reinterpret_cast<char*>(&classes), 4);
  if (!in || count < 0) throw DataError(path + ": bad header at byte offset 8");
  d.labels.resize(count);
  d.num_classes = classes;
  for (Index i = 0; i < count; ++i) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in)
      throw DataError(path + ": truncated label at byte offset " +
                      std::to_string(20 + 4 * i));
    d.labels[i] = v;
  }
  d.validate();
  require(d.inputs.rows() == d.labels.size(),
          base + ": feature rows do not match label count");
  return d;
}

}  // namespace efc
