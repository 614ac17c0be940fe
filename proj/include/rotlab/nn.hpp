#pragma once

// Small fully-connected classifier with hand-written backpropagation.
//
// Layer l computes
//
//   h̃ = noise_b(h)            (dropout-b position, before the weights)
//   z  = h̃ Wᵀ + b
//   z̃ = noise_a(z)            (dropout-a position, between weights and BN)
//   u  = BN(z̃)                (optional)
//   out = act(u)
//
// Only one of the two noise positions is active per layer.

#include "rotlab/bn_lab.hpp"
#include "rotlab/regularizers.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rotlab {

enum class Activation { relu, none };
enum class NoisePosition { before_weight, after_weight };

struct LayerSpec {
  std::size_t width = 1;
  Activation activation = Activation::relu;
  std::optional<NoiseOpSpec> noise;
  NoisePosition noise_position = NoisePosition::before_weight;
  bool batchnorm = false;
};

struct ModelSpec {
  std::size_t input_dim = 1;
  std::vector<LayerSpec> layers;  ///< last layer produces the logits

  void validate() const;
  bool needs_batch_statistics() const;
};

struct DenseLayer {
  LayerSpec spec;
  Mat W;  ///< out × in
  Vec b;
  std::optional<BatchNormState> bn;
};

struct LayerCache {
  Mat input;
  Mat weight_input;  ///< h̃
  std::vector<NoiseRealization> noise;
  Vec noise_center;
  Mat bn_input;      ///< z̃
  BatchNormCache bn;
  Mat pre_activation;
};

struct ForwardCache {
  Mode mode = Mode::eval;
  std::uint64_t version = 0;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Mat logits;
  ForwardCache cache;
};

struct Gradients {
  std::vector<Mat> W;
  std::vector<Vec> b;
  std::vector<Vec> gamma;  ///< empty for layers without BN
  std::vector<Vec> beta;
};

class Mlp {
 public:
  /// Weights ~ Unif(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  Mlp(ModelSpec spec, Rng& init_rng);

  const ModelSpec& spec() const { return spec_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Train mode samples one noise realization per row and layer and updates
  /// BN running statistics; eval mode is deterministic.
  ForwardResult forward(const Mat& x, Mode mode, Rng& rng);

  /// Exact gradients of the realized loss. Throws if parameters changed since
  /// the forward pass that produced `cache`.
  Gradients backward(const ForwardCache& cache, const Mat& dlogits) const;

  /// Marks parameters as modified; invalidates earlier caches.
  void touch() { ++version_; }
  std::uint64_t version() const { return version_; }

 private:
  ModelSpec spec_;
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 1;
};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
double softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dlogits);

/// Gradient of a centered or plain noise op given its realizations.
Mat noise_backward(const Mat& grad_out, const std::vector<NoiseRealization>& noise, bool centered);

struct Dataset {
  Mat X;
  std::vector<int> y;
};

struct MixtureSpec {
  std::size_t dim = 20;
  std::size_t n_train = 200;
  std::size_t n_val = 2000;
  double separation = 2.0;   ///< distance between class means
  double label_flip = 0.1;
};

/// Two Gaussian classes (identity covariance) with means ±separation/2 along
/// a random unit direction; a fraction of labels is flipped in both splits.
std::pair<Dataset, Dataset> make_two_gaussian(const MixtureSpec& spec, Rng& rng);

/// Rows of numbers, last column an integer class label; header optional.
Dataset load_csv_dataset(const std::string& path);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  MixtureSpec data;
  std::optional<std::string> train_csv;  ///< replaces the synthetic data
  std::optional<std::string> val_csv;
  std::size_t report_every = 0;          ///< 0: final epoch only

  void validate(const ModelSpec& model) const;
};

struct Regularizer {
  std::string name;
  std::optional<NoiseOpSpec> noise;  ///< none: baseline
  double strength() const;           ///< equivalent keep rate, 1 for the baseline
};

/// Copy of `base` with `noise` placed on every layer that reads hidden
/// activations (all but the first).
ModelSpec with_regularizer(const ModelSpec& base, const std::optional<NoiseOpSpec>& noise);

double accuracy(Mlp& model, const Dataset& data);

struct TrainRow {
  std::string regularizer;
  double strength = 1.0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

/// One training run; returns rows for the reporting epochs.
std::vector<TrainRow> train_one(const ModelSpec& model, const TrainConfig& config,
                                const Regularizer& reg);

struct SummaryRow {
  std::string regularizer;
  double strength = 1.0;
  double train_mean = 0.0, train_sd = 0.0;
  double val_mean = 0.0, val_sd = 0.0;
  double gap_mean = 0.0, gap_sd = 0.0;
  std::vector<double> gaps;  ///< per seed, in seed order
};

struct GeneralizationTable {
  std::vector<TrainRow> rows;
  std::vector<SummaryRow> summary;
};

/// Runs every regularizer on every seed (paired: same data and init per seed).
GeneralizationTable train_and_report(const ModelSpec& model, const TrainConfig& config,
                                     const std::vector<Regularizer>& grid,
                                     const std::vector<std::uint64_t>& seeds);

/// One-sided sign test of "a < b" over paired values: P(K >= k) for
/// K ~ Binomial(n, 1/2), where k counts pairs with a < b and ties are dropped.
double sign_test_p_value(const std::vector<double>& a, const std::vector<double>& b);

void write_train_csv(std::ostream& os, const std::vector<TrainRow>& rows);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

}  // namespace rotlab
