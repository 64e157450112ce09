#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efc/net.hpp"

namespace efc {

struct Dataset {
  Mat inputs;              // one sample per row
  Eigen::VectorXi labels;  // global class ids
  int num_classes = 0;

  Index size() const { return inputs.rows(); }
  void validate() const;
  Dataset subset(const std::vector<Index>& idx) const;
};

// Loss for one labeled sample; SquaredError uses a one-hot target.
LossSpec make_loss(LossKind kind, int label, int num_classes);

struct TaskData {
  Dataset train;
  Dataset test;
  std::vector<int> classes;
};

struct TaskSequence {
  std::vector<TaskData> tasks;
  int input_dim = 0;
  int num_classes = 0;
};

// IDX-format reader (images give one flattened [0,1] row per sample).
Mat load_idx_images(const std::string& path);
Eigen::VectorXi load_idx_labels(const std::string& path);
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// Gaussian cluster tasks: per class a seeded prototype of norm `separation`,
// samples drawn around it with isotropic `spread`. A positive `shared_rank`
// confines every prototype to one shared rank-dimensional subspace so tasks
// overlap in feature space (image-like); 0 draws independent full-space
// prototypes. A positive `task_overlap` (< 1) makes class slot k of every
// task a refinement of one shared parent direction (cosine ~= overlap^2
// between same-slot classes of different tasks), so sequential tasks compete
// for the same features instead of occupying independent regions.
TaskSequence synthetic_tasks(int num_tasks, int classes_per_task, int dim,
                             int train_per_class, int test_per_class,
                             std::uint64_t seed, double separation = 4.0,
                             double spread = 1.0, int shared_rank = 0,
                             double task_overlap = 0.0);

// Partition an existing train/test pair by class sets (sets must be disjoint;
// every listed class must be populated).
TaskSequence split_tasks(const Dataset& train, const Dataset& test,
                         const std::vector<std::vector<int>>& class_sets);

// Union of every task's train (resp. test) split, for joint training.
Dataset merge_train(const TaskSequence& seq);
Dataset merge_test(const TaskSequence& seq);

// Precomputed-feature pathway: <base>.fmat holds the feature matrix,
// <base>.lbl the labels ("EFCL" magic, u32 version, i64 count, i32 classes,
// i32 payload).
void save_features(const std::string& base, const Dataset& data);
Dataset load_features(const std::string& base);

}  // namespace efc
