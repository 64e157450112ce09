#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efc/baselines.hpp"
#include "efc/equilibrium.hpp"

namespace efc {

enum class Scenario { TaskIl, ClassIl };

// Everything that determines a continual run. The seed fixes data generation,
// network initialization, and batch order, so equal configs replay bit-equal.
struct RunConfig {
  // learner
  LearnerKind learner = LearnerKind::Sgd;
  double learning_rate = 1e-3;
  double strength = 0.0;      // regularizer / preservation strength
  double fisher_decay = 0.9;  // online-anchor curvature decay (accumulating kinds)
  double gamma_cap = 1.0;     // preservation saturation (equilibrium learner)
  double controller_alpha = 0.5;
  double target_lambda = 0.3;
  double settle_dt = 0.05;   // Euler step for equilibrium-learner settles
  double settle_tol = 1e-4;  // convergence tolerance for training settles
  LossKind settle_loss = LossKind::SquaredError;  // equilibrium-learner settles
  std::string optimizer = "default";  // "default" (per-method), "sgd", or "adam"

  // network
  std::vector<int> hidden = {100, 100};
  Activation hidden_act = Activation::ReLU;
  // The equilibrium learner needs a positive readout (multiplicative gain
  // cannot move a dead or negative unit); gradient learners get logits.
  Activation readout_act = Activation::Linear;

  // training
  int epochs_per_task = 20;
  int batch_size = 10;
  LossKind train_loss = LossKind::SoftmaxCrossEntropy;  // gradients + reported loss
  std::uint64_t seed = 0;
  bool joint = false;  // merge every task into one (upper-bound baseline)

  // data: "synthetic", "mnist", or "features:<base>"
  std::string dataset = "synthetic";
  std::string data_dir;  // falls back to the EFC_DATA_DIR environment variable
  int num_tasks = 5;
  int classes_per_task = 2;
  int input_dim = 32;
  int train_per_class = 100;
  int test_per_class = 30;
  double separation = 4.0;
  double spread = 1.0;
  int shared_rank = 0;       // >0: prototypes share a rank-dim subspace
  double task_overlap = 0.0; // >0: same-slot classes refine one parent direction

  // outputs (empty output_dir = keep everything in memory)
  std::string output_dir;
  std::string run_name = "run";
};

struct EpochRecord {
  int task = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::vector<double> class_il;  // per seen task; argmax over classes seen so far
  std::vector<double> task_il;   // per seen task; argmax within the task's classes
  double mean_class_il = 0.0;
  double mean_task_il = 0.0;
};

struct RunRecord {
  RunConfig config;
  std::vector<EpochRecord> timeline;
  double final_class_il = 0.0;  // percent, mean over tasks, full shared head
  double final_task_il = 0.0;   // percent, mean over tasks, restricted argmax
  Mat confusion;                // row-normalized, true class x predicted class
  std::vector<int> empty_confusion_rows;
  std::vector<std::string> events;  // anchor consolidations, failures
  bool failed = false;
  std::string failure;
  double wall_seconds = 0.0;
};

// Dataset assembly per config (synthetic clusters, IDX files split into class
// pairs, or a precomputed-feature pair split the same way).
TaskSequence build_tasks(const RunConfig& config);
NetworkParams build_network(const RunConfig& config, int input_dim,
                            int num_classes);
Learner build_learner(const RunConfig& config);

// Shared-head prediction, optionally restricted to an allowed class set.
int predict(const NetworkParams& net, const Vec& input,
            const std::vector<int>* allowed = nullptr);
double accuracy(const NetworkParams& net, const Dataset& data,
                const std::vector<int>* allowed = nullptr);
double mean_loss(const NetworkParams& net, const Dataset& data, LossKind kind);

// Sequential training over the task list with per-boundary consolidation,
// per-epoch evaluation of both metrics, and a final confusion matrix. The
// two-argument form trains on a caller-supplied sequence (grid search swaps
// in validation splits); evaluation always runs over that sequence's tests.
RunRecord run_continual(const RunConfig& config);
RunRecord run_continual(const RunConfig& config, const TaskSequence& seq);

struct ConfusionResult {
  Mat matrix;                   // rows sum to 1 for populated classes
  std::vector<int> empty_rows;  // classes with no test sample
};
ConfusionResult confusion_matrix(const NetworkParams& net,
                                 const std::vector<Dataset>& test_sets,
                                 int num_classes);

// --- Two-task validation study -------------------------------------------
// Trains task A once, then replays task B from the same parameters under
// each method, aligning learning rates so task-B accuracy crosses 90% after
// comparable step counts.

struct MethodCurve {
  std::string name;
  double learning_rate = 0.0;
  double strength = 0.0;
  std::vector<double> task_a_loss;      // task-A train loss (shared metric)
  std::vector<double> task_a_accuracy;  // task-A test, shared head
  std::vector<double> task_b_accuracy;  // task-B test, shared head
  std::vector<double> class_il_loss;    // union test loss, shared head
  std::vector<double> grad_b_sq;        // ||mean task-B gradient||^2
  std::vector<double> grad_dot;         // task-A gradient . task-B gradient
  int t90 = -1;                         // first step with task-B accuracy >= 0.9
  double delta_l_a_at_t90 = 0.0;
};

struct ValidationRecord {
  double align_identity = 0.0;  // alignment(I, F_A) at the consolidation point
  double align_diag = 0.0;      // alignment(D_A, F_A)
  double align_tilde = 0.0;     // alignment(averaged equilibrium curvature, F_A)
  std::vector<MethodCurve> methods;  // bp, ewc, fish, efc
  bool aligned = false;  // every t90 within +-10% of the reference
  std::vector<std::string> events;
};

struct ValidationSetup {
  double bp_lr = 1e-3;
  double ewc_strength = 30.0;
  double fish_strength = 30.0;
  double efc_strength = 300.0;
  int max_steps = 1500;
  int tilde_samples = 32;  // inputs averaged into the equilibrium curvature
  int pretrain_epochs = 200;
  double pretrain_lr = 1e-3;
  double pretrain_loss_floor = 0.02;
  int lr_align_attempts = 4;  // learning-rate retries per method for t90
};

ValidationRecord validation_experiment(const RunConfig& config,
                                       const ValidationSetup& setup = {});

// Compressed sign sequence of d(L_A+L_B)/dt = -||g_B||^2 - g_A.g_B along a
// recorded trajectory. `tol` is the stationary band relative to the largest
// magnitude. Also reports where |...| is smallest (the crossing).
struct RegimeTimeline {
  std::vector<Regime> sequence;  // consecutive duplicates collapsed
  int crossing_index = -1;
};
RegimeTimeline regime_timeline(const std::vector<double>& grad_b_sq,
                               const std::vector<double>& grad_dot,
                               double tol = 0.05);

// --- Hyperparameter grid ---------------------------------------------------

struct GridCell {
  double learning_rate = 0.0;
  double strength = 0.0;
  double score = 0.0;  // validation-split accuracy (percent)
};

struct GridResult {
  GridCell best;
  std::vector<GridCell> table;
};

// Trains each cell with shortened epochs on a 90/10 train/validation split,
// scoring by final validation accuracy for the scenario; ties break toward
// the lexicographically smallest (learning_rate, strength).
GridResult grid_search(const RunConfig& base,
                       const std::vector<double>& learning_rates,
                       const std::vector<double>& strengths,
                       Scenario scenario = Scenario::ClassIl);

// --- Persistence ------------------------------------------------------------

void save_run(const RunRecord& record);  // no-op when output_dir is empty
std::string run_record_json(const RunRecord& record);
void save_timeline_csv(const std::string& path, const RunRecord& record);
void save_method_curves_csv(const std::string& path, const MethodCurve& curve);

std::string learner_name(LearnerKind kind);
LearnerKind learner_from_name(const std::string& name);

}  // namespace efc
