#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace polymatch {

/// Training objective used by the synthetic-clusters driver.
enum class TrainLoss {
  m3g,          ///< multiway matching-gap loss over all k views jointly
  infonce_pwe,  ///< InfoNCE summed over all view pairs
  infonce_ave,  ///< InfoNCE of each view against the average of the others
  byol_pwe,     ///< cosine-alignment loss over all view pairs
  byol_ave,     ///< cosine-alignment loss against the average of the others
};

const char* train_loss_name(TrainLoss loss);
TrainLoss train_loss_from_name(const std::string& name);

/// Configuration of the synthetic self-supervised training run: draw
/// well-separated clusters on the input sphere, present each sample as k
/// noisy views, and train a two-layer encoder (affine, tanh, affine, row
/// renormalization) so that views of the same sample match under the chosen
/// loss. View 1 goes through an EMA teacher copy of the encoder and carries
/// no gradient; views 2..k go through the student.
struct SyntheticTrainConfig {
  int clusters = 8;
  int samples_per_cluster = 16;
  int views = 3;  ///< k
  int input_dim = 16;
  int hidden_dim = 32;
  int embed_dim = 8;
  double base_noise = 0.25;  ///< within-cluster spread, shared by all views
  double view_noise = 0.15;  ///< per-view augmentation noise
  TrainLoss loss = TrainLoss::m3g;
  int epochs = 300;
  int batch = 16;  ///< points per solve; views * batch must fit the tensor cap
  double learning_rate = 2.0;
  double ema_rho = 0.9;   ///< teacher retention per step, in [0, 1]
  double epsilon = 0.2;   ///< entropic strength for the m3g loss
  double tau = 0.1;       ///< temperature for the InfoNCE losses
  std::uint64_t seed = 0;

  void validate() const;
};

/// Outcome of a run. The probe numbers come from one multinomial-regression
/// fit on frozen embeddings of clean (noise-free view) samples: trained on
/// the training samples, scored on a held-out set drawn from the same
/// clusters. baseline_accuracy is the same probe on the untrained encoder.
struct TrainMetrics {
  double final_loss = 0.0;      ///< mean training loss over the last epoch
  double view_alignment = 0.0;  ///< mean pairwise cosine between held-out views
  double probe_accuracy = 0.0;
  double baseline_accuracy = 0.0;
  std::vector<double> epoch_losses;  ///< mean training loss per epoch
};

/// Run the synthetic training loop. Deterministic for a fixed seed; throws
/// NumericalError if the training loss leaves the finite range.
TrainMetrics run_train(const SyntheticTrainConfig& cfg);

}  // namespace polymatch
