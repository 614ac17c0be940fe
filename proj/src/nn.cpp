#include "rotlab/nn.hpp"

#include "rotlab/csv.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rotlab {

void ModelSpec::validate() const {
  if (input_dim < 1) throw Error("input dimension must be positive");
  if (layers.empty()) throw Error("model needs at least one layer");
  for (const auto& l : layers) {
    if (l.width < 1) throw Error("layer widths must be positive");
    if (l.noise) {
      l.noise->validate();
      if (l.noise->placement != Placement::dense) {
        throw Error("the MLP only supports dense noise placement");
      }
    }
  }
}

bool ModelSpec::needs_batch_statistics() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
    return l.batchnorm || (l.noise && l.noise->centered);
  });
}

Mlp::Mlp(ModelSpec spec, Rng& init_rng) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t fan_in = spec_.input_dim;
  for (const auto& ls : spec_.layers) {
    DenseLayer layer;
    layer.spec = ls;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    layer.W.resize(static_cast<Eigen::Index>(ls.width), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = u(init_rng);
    layer.b = Vec::Zero(static_cast<Eigen::Index>(ls.width));
    if (ls.batchnorm) layer.bn.emplace(static_cast<Eigen::Index>(ls.width));
    layers_.push_back(std::move(layer));
    fan_in = ls.width;
  }
}

namespace {

Mat apply_noise(const NoiseOpSpec& spec, const Mat& x, Mode mode, Rng& rng, LayerCache& cache) {
  NoiseOp op(spec);
  op.set_mode(mode);
  cache.noise.clear();
  return op.forward(x, rng, &cache.noise, &cache.noise_center);
}

}  // namespace

ForwardResult Mlp::forward(const Mat& x, Mode mode, Rng& rng) {
  if (x.cols() != static_cast<Eigen::Index>(spec_.input_dim)) {
    throw Error("input width " + std::to_string(x.cols()) + " does not match the model (" +
                std::to_string(spec_.input_dim) + ")");
  }
  ForwardResult res;
  res.cache.mode = mode;
  res.cache.version = version_;
  res.cache.layers.resize(layers_.size());
  Mat h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    DenseLayer& layer = layers_[l];
    LayerCache& c = res.cache.layers[l];
    const auto& noise = layer.spec.noise;
    c.input = h;
    c.weight_input = (noise && layer.spec.noise_position == NoisePosition::before_weight)
                         ? apply_noise(*noise, h, mode, rng, c)
                         : h;
    Mat z = (c.weight_input * layer.W.transpose()).rowwise() + layer.b.transpose();
    c.bn_input = (noise && layer.spec.noise_position == NoisePosition::after_weight)
                     ? apply_noise(*noise, z, mode, rng, c)
                     : std::move(z);
    if (layer.bn) {
      if (mode == Mode::train) {
        c.pre_activation = bn_train_forward(c.bn_input, *layer.bn, &c.bn);
      } else {
        c.pre_activation = bn_test_forward(c.bn_input, *layer.bn);
        c.bn.inv_std = (layer.bn->running_var.array() + layer.bn->eps).rsqrt().matrix();
        c.bn.xhat = (c.bn_input.rowwise() - layer.bn->running_mean.transpose()) *
                    c.bn.inv_std.asDiagonal();
      }
    } else {
      c.pre_activation = c.bn_input;
    }
    h = layer.spec.activation == Activation::relu ? Mat(c.pre_activation.cwiseMax(0.0))
                                                  : c.pre_activation;
  }
  res.logits = std::move(h);
  return res;
}

Mat noise_backward(const Mat& grad_out, const std::vector<NoiseRealization>& noise,
                   bool centered) {
  if (noise.empty()) return grad_out;  // eval mode: identity
  if (static_cast<Eigen::Index>(noise.size()) != grad_out.rows()) {
    throw Error("noise cache does not match the gradient batch");
  }
  Mat g(grad_out.rows(), grad_out.cols());
  for (Eigen::Index n = 0; n < grad_out.rows(); ++n) {
    g.row(n) = noise[static_cast<std::size_t>(n)].apply_transpose(grad_out.row(n).transpose())
                   .transpose();
  }
  if (centered) {
    // x̃_n = N_n (x_n - m) + m with m the batch mean of x.
    const Vec through_mean = (grad_out - g).colwise().sum().transpose() /
                             static_cast<double>(grad_out.rows());
    g.rowwise() += through_mean.transpose();
  }
  return g;
}

Gradients Mlp::backward(const ForwardCache& cache, const Mat& dlogits) const {
  if (cache.version != version_ || cache.layers.size() != layers_.size()) {
    throw Error("stale forward cache: parameters changed since the forward pass");
  }
  Gradients grads;
  const std::size_t L = layers_.size();
  grads.W.resize(L);
  grads.b.resize(L);
  grads.gamma.resize(L);
  grads.beta.resize(L);
  Mat g = dlogits;
  for (std::size_t k = L; k-- > 0;) {
    const DenseLayer& layer = layers_[k];
    const LayerCache& c = cache.layers[k];
    if (g.rows() != c.pre_activation.rows() || g.cols() != c.pre_activation.cols()) {
      throw Error("gradient shape does not match the forward cache");
    }
    if (layer.spec.activation == Activation::relu) {
      g = g.cwiseProduct((c.pre_activation.array() > 0.0).cast<double>().matrix());
    }
    if (layer.bn) {
      const Mat& xhat = c.bn.xhat;
      grads.gamma[k] = g.cwiseProduct(xhat).colwise().sum().transpose();
      grads.beta[k] = g.colwise().sum().transpose();
      const Mat dxhat = g * layer.bn->gamma.asDiagonal();
      if (cache.mode == Mode::train) {
        const double n = static_cast<double>(g.rows());
        const Vec sum_d = dxhat.colwise().sum().transpose();
        const Vec sum_dx = dxhat.cwiseProduct(xhat).colwise().sum().transpose();
        Mat t = (n * dxhat).rowwise() - sum_d.transpose();
        t -= xhat * sum_dx.asDiagonal();
        g = t * (c.bn.inv_std / n).asDiagonal();
      } else {
        g = dxhat * c.bn.inv_std.asDiagonal();
      }
    }
    const bool centered = layer.spec.noise && layer.spec.noise->centered;
    if (layer.spec.noise && layer.spec.noise_position == NoisePosition::after_weight) {
      g = noise_backward(g, c.noise, centered);
    }
    grads.W[k] = g.transpose() * c.weight_input;
    grads.b[k] = g.colwise().sum().transpose();
    g = g * layer.W;
    if (layer.spec.noise && layer.spec.noise_position == NoisePosition::before_weight) {
      g = noise_backward(g, c.noise, centered);
    }
  }
  return grads;
}

double softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dlogits) {
  const Eigen::Index n = logits.rows();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0) {
    throw Error("logits and labels differ in length");
  }
  double loss = 0.0;
  if (dlogits) dlogits->resize(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw Error("label outside the logit range");
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    loss += -(logits(i, y) - m - std::log(z));
    if (dlogits) {
      dlogits->row(i) = e / z;
      (*dlogits)(i, y) -= 1.0;
    }
  }
  if (dlogits) *dlogits /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

std::pair<Dataset, Dataset> make_two_gaussian(const MixtureSpec& spec, Rng& rng) {
  if (spec.dim < 1 || spec.n_train < 2 || spec.n_val < 1) throw Error("invalid mixture spec");
  if (!(spec.label_flip >= 0.0 && spec.label_flip < 0.5)) {
    throw Error("label flip rate must lie in [0, 0.5)");
  }
  std::normal_distribution<double> z;
  Vec dir(static_cast<Eigen::Index>(spec.dim));
  for (auto& v : dir) v = z(rng);
  dir.normalize();
  auto draw = [&](std::size_t n) {
    Dataset d;
    d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.dim));
    d.y.resize(n);
    std::bernoulli_distribution coin(0.5), flip(spec.label_flip);
    for (std::size_t i = 0; i < n; ++i) {
      const int cls = coin(rng) ? 1 : 0;
      const double sign = cls == 1 ? 0.5 : -0.5;
      for (Eigen::Index j = 0; j < d.X.cols(); ++j) {
        d.X(static_cast<Eigen::Index>(i), j) = sign * spec.separation * dir(j) + z(rng);
      }
      d.y[i] = flip(rng) ? 1 - cls : cls;
    }
    return d;
  };
  Dataset train = draw(spec.n_train);
  Dataset val = draw(spec.n_val);
  return {std::move(train), std::move(val)};
}

Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (lineno == 1) continue;  // header
      throw Error(path + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    if (vals.size() < 2) throw Error(path + ":" + std::to_string(lineno) + ": too few columns");
    labels.push_back(static_cast<int>(vals.back()));
    vals.pop_back();
    if (!rows.empty() && rows.front().size() != vals.size()) {
      throw Error(path + ":" + std::to_string(lineno) + ": ragged row");
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw Error("dataset '" + path + "' is empty");
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  d.y = std::move(labels);
  return d;
}

void TrainConfig::validate(const ModelSpec& model) const {
  if (epochs < 1) throw ConfigError("epochs", "must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
  if (model.needs_batch_statistics() && batch_size < 2) {
    throw ConfigError("batch_size", "must be at least 2 with batch norm or centered noise");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
}

double Regularizer::strength() const { return noise ? noise->equivalent_keep_rate() : 1.0; }

ModelSpec with_regularizer(const ModelSpec& base, const std::optional<NoiseOpSpec>& noise) {
  ModelSpec m = base;
  for (std::size_t l = 0; l < m.layers.size(); ++l) m.layers[l].noise = l > 0 ? noise : std::nullopt;
  return m;
}

double accuracy(Mlp& model, const Dataset& data) {
  Rng unused(0);
  const Mat logits = model.forward(data.X, Mode::eval, unused).logits;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == data.y[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

std::vector<TrainRow> train_one(const ModelSpec& base, const TrainConfig& config,
                                const Regularizer& reg) {
  const ModelSpec spec = with_regularizer(base, reg.noise);
  config.validate(spec);
  Rng data_rng = make_rng(config.seed, 1);
  Rng init_rng = make_rng(config.seed, 2);
  Rng train_rng = make_rng(config.seed, 3);

  Dataset train, val;
  if (config.train_csv) {
    train = load_csv_dataset(*config.train_csv);
    if (!config.val_csv) throw ConfigError("val_csv", "required together with train_csv");
    val = load_csv_dataset(*config.val_csv);
  } else {
    std::tie(train, val) = make_two_gaussian(config.data, data_rng);
  }
  if (train.X.cols() != static_cast<Eigen::Index>(spec.input_dim) ||
      val.X.cols() != train.X.cols()) {
    throw ConfigError("input_dim", "does not match the dataset width");
  }

  Mlp model(spec, init_rng);
  std::vector<Mat> vW;
  std::vector<Vec> vb, vg, vbeta;
  for (const auto& l : model.layers()) {
    vW.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
    vb.push_back(Vec::Zero(l.b.size()));
    vg.push_back(l.bn ? Vec::Zero(l.bn->gamma.size()) : Vec());
    vbeta.push_back(l.bn ? Vec::Zero(l.bn->beta.size()) : Vec());
  }

  std::vector<TrainRow> rows;
  std::vector<std::size_t> order(static_cast<std::size_t>(train.X.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), train_rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (spec.needs_batch_statistics() && end - start < 2) continue;
      Mat xb(static_cast<Eigen::Index>(end - start), train.X.cols());
      std::vector<int> yb(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = train.X.row(static_cast<Eigen::Index>(order[i]));
        yb[i - start] = train.y[order[i]];
      }
      ForwardResult fr = model.forward(xb, Mode::train, train_rng);
      Mat dlogits;
      softmax_cross_entropy(fr.logits, yb, &dlogits);
      const Gradients g = model.backward(fr.cache, dlogits);
      auto& layers = model.layers();
      for (std::size_t k = 0; k < layers.size(); ++k) {
        vW[k] = config.momentum * vW[k] + g.W[k] + config.weight_decay * layers[k].W;
        vb[k] = config.momentum * vb[k] + g.b[k];
        layers[k].W -= config.learning_rate * vW[k];
        layers[k].b -= config.learning_rate * vb[k];
        if (layers[k].bn) {
          vg[k] = config.momentum * vg[k] + g.gamma[k];
          vbeta[k] = config.momentum * vbeta[k] + g.beta[k];
          layers[k].bn->gamma -= config.learning_rate * vg[k];
          layers[k].bn->beta -= config.learning_rate * vbeta[k];
        }
      }
      model.touch();
    }
    const bool report = epoch == config.epochs ||
                        (config.report_every > 0 && epoch % config.report_every == 0);
    if (report) {
      rows.push_back({reg.name, reg.strength(), config.seed, epoch, accuracy(model, train),
                      accuracy(model, val)});
    }
  }
  return rows;
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  RunningStats s;
  for (double x : v) s.push(x);
  return {s.mean(), std::sqrt(s.variance())};
}

}  // namespace

GeneralizationTable train_and_report(const ModelSpec& model, const TrainConfig& config,
                                     const std::vector<Regularizer>& grid,
                                     const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  GeneralizationTable table;
  for (const auto& reg : grid) {
    std::vector<double> tr, va, gap;
    for (std::uint64_t seed : seeds) {
      TrainConfig c = config;
      c.seed = seed;
      auto rows = train_one(model, c, reg);
      const TrainRow& last = rows.back();
      tr.push_back(last.train_acc);
      va.push_back(last.val_acc);
      gap.push_back(last.train_acc - last.val_acc);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    }
    SummaryRow s;
    s.regularizer = reg.name;
    s.strength = reg.strength();
    std::tie(s.train_mean, s.train_sd) = mean_sd(tr);
    std::tie(s.val_mean, s.val_sd) = mean_sd(va);
    std::tie(s.gap_mean, s.gap_sd) = mean_sd(gap);
    s.gaps = gap;
    table.summary.push_back(std::move(s));
  }
  return table;
}

double sign_test_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("sign test needs paired samples");
  int n = 0, k = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    ++n;
    if (a[i] < b[i]) ++k;
  }
  if (n == 0) return 1.0;
  double tail = 0.0, binom = 1.0;  // C(n, j)
  for (int j = 0; j <= n; ++j) {
    if (j >= k) tail += binom;
    binom = binom * (n - j) / (j + 1);
  }
  return tail / std::pow(2.0, n);
}

void write_train_csv(std::ostream& os, const std::vector<TrainRow>& rows) {
  csv::write_row(os, {"regularizer", "strength", "seed", "epoch", "train_acc", "val_acc"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.regularizer, csv::num(r.strength), std::to_string(r.seed),
                        std::to_string(r.epoch), csv::num(r.train_acc), csv::num(r.val_acc)});
  }
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  csv::write_row(os, {"regularizer", "strength", "train_mean", "train_sd", "val_mean", "val_sd",
                      "gap_mean", "gap_sd"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.regularizer, csv::num(r.strength), csv::num(r.train_mean),
                        csv::num(r.train_sd), csv::num(r.val_mean), csv::num(r.val_sd),
                        csv::num(r.gap_mean), csv::num(r.gap_sd)});
  }
}

}  // namespace rotlab
