#include "jaipw/flex_regressor.hpp"

#include <algorithm>
#include <cstdint>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_01.hpp>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  int bin = 0;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict_row(const MatrixXd& x, Index i) const {
    int k = 0;
    while (nodes[static_cast<size_t>(k)].feature >= 0) {
      const auto& nd = nodes[static_cast<size_t>(k)];
      k = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(k)].value;
  }
};

class GbtModel final : public RegressorModel {
 public:
  double base = 0.0;
  std::vector<Tree> trees;
  Index n_features = 0;

  VectorXd predict(const MatrixXd& x) const override {
    require(x.cols() == n_features, ErrorKind::DimensionMismatch, "gbt: feature count mismatch");
    VectorXd out = VectorXd::Constant(x.rows(), base);
    for (const auto& t : trees)
      for (Index i = 0; i < x.rows(); ++i) out(i) += t.predict_row(x, i);
    return out;
  }
  std::string kind() const override { return "gbt"; }
};

class LinearModel final : public RegressorModel {
 public:
  VectorXd coef;  // intercept first

  VectorXd predict(const MatrixXd& x) const override {
    require(x.cols() + 1 == coef.size(), ErrorKind::DimensionMismatch, "linear: feature count mismatch");
    return (x * coef.tail(x.cols())).array() + coef(0);
  }
  std::string kind() const override { return "linear"; }
};

double mse_against(const VectorXd& y, const VectorXd& pred) {
  return (y - pred).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace

struct FlexTrainer::Impl {
  MatrixXd features;
  FlexSettings settings;
  // Binned copy of the features for the boosting path.
  std::vector<std::vector<double>> thresholds;
  std::vector<std::uint8_t> row_bins;  // row-major: row_bins[i * f + j]
  Index n = 0, f = 0;

  void bin_features(int max_bins) {
    thresholds.assign(static_cast<size_t>(f), {});
    row_bins.assign(static_cast<size_t>(n * f), 0);
    std::vector<double> sorted(static_cast<size_t>(n));
    for (Index j = 0; j < f; ++j) {
      for (Index i = 0; i < n; ++i) sorted[static_cast<size_t>(i)] = features(i, j);
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> uniq = sorted;
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      auto& t = thresholds[static_cast<size_t>(j)];
      if (static_cast<int>(uniq.size()) <= max_bins) {
        for (size_t u = 0; u + 1 < uniq.size(); ++u) t.push_back(0.5 * (uniq[u] + uniq[u + 1]));
      } else {
        for (int b = 1; b < max_bins; ++b) {
          const auto pos = static_cast<size_t>((static_cast<double>(b) * static_cast<double>(n)) / max_bins);
          t.push_back(sorted[std::min(pos, sorted.size() - 1)]);
        }
        t.erase(std::unique(t.begin(), t.end()), t.end());
        if (!t.empty() && t.back() >= sorted.back()) t.pop_back();
      }
      for (Index i = 0; i < n; ++i) {
        const auto pos = std::lower_bound(t.begin(), t.end(), features(i, j)) - t.begin();
        row_bins[static_cast<size_t>(i * f + j)] = static_cast<std::uint8_t>(pos);
      }
    }
  }

  std::shared_ptr<const RegressorModel> fit_gbt(const VectorXd& y, const GbtSettings& s) const {
    auto model = std::make_shared<GbtModel>();
    model->n_features = f;
    model->base = y.mean();
    VectorXd pred = VectorXd::Constant(n, model->base);

    boost::random::mt19937_64 rng(s.seed);
    boost::random::uniform_01<double> unif;
    std::vector<Index> rows;
    rows.reserve(static_cast<size_t>(n));
    VectorXd grad(n);
    constexpr size_t kMaxBins = 256;
    const size_t hist_size = static_cast<size_t>(f) * kMaxBins;

    // Histograms for all features in one pass over the rows.
    auto build_hist = [&](const std::vector<Index>& members, std::vector<double>& hs, std::vector<double>& hc) {
      hs.assign(hist_size, 0.0);
      hc.assign(hist_size, 0.0);
      for (Index i : members) {
        const double g = grad(i);
        const std::uint8_t* rb = row_bins.data() + i * f;
        for (Index j = 0; j < f; ++j) {
          const size_t at = static_cast<size_t>(j) * kMaxBins + rb[j];
          hs[at] += g;
          hc[at] += 1.0;
        }
      }
    };

    struct Pending {
      int node;
      int depth;
      std::vector<Index> members;
      std::vector<double> hsum, hcnt;
    };

    for (int round = 0; round < s.rounds; ++round) {
      rows.clear();
      for (Index i = 0; i < n; ++i)
        if (s.subsample >= 1.0 || unif(rng) < s.subsample) rows.push_back(i);
      grad = y - pred;

      Tree tree;
      tree.nodes.push_back(TreeNode{});
      std::vector<Pending> queue;
      queue.push_back(Pending{0, 0, rows, {}, {}});
      build_hist(queue.front().members, queue.front().hsum, queue.front().hcnt);
      for (size_t qi = 0; qi < queue.size(); ++qi) {
        Pending cur = std::move(queue[qi]);
        double total = 0.0;
        for (Index i : cur.members) total += grad(i);
        const double cnt = static_cast<double>(cur.members.size());
        tree.nodes[static_cast<size_t>(cur.node)].value = s.learning_rate * total / (cnt + s.lambda);
        if (cur.depth >= s.max_depth || cur.members.size() < 2 * static_cast<size_t>(s.min_leaf)) continue;

        const double parent_score = total * total / (cnt + s.lambda);
        double best_gain = 1e-12;
        int best_feature = -1, best_bin = 0;
        for (Index j = 0; j < f; ++j) {
          const auto nb = thresholds[static_cast<size_t>(j)].size() + 1;
          if (nb < 2) continue;
          const double* hs = cur.hsum.data() + static_cast<size_t>(j) * kMaxBins;
          const double* hc = cur.hcnt.data() + static_cast<size_t>(j) * kMaxBins;
          double sl = 0.0, cl = 0.0;
          for (size_t b = 0; b + 1 < nb; ++b) {
            sl += hs[b];
            cl += hc[b];
            const double cr = cnt - cl;
            if (cl < s.min_leaf || cr < s.min_leaf) continue;
            const double sr = total - sl;
            const double gain = sl * sl / (cl + s.lambda) + sr * sr / (cr + s.lambda) - parent_score;
            if (gain > best_gain) {
              best_gain = gain;
              best_feature = static_cast<int>(j);
              best_bin = static_cast<int>(b);
            }
          }
        }
        if (best_feature < 0) continue;

        Pending left{static_cast<int>(tree.nodes.size()), cur.depth + 1, {}, {}, {}};
        Pending right{static_cast<int>(tree.nodes.size()) + 1, cur.depth + 1, {}, {}, {}};
        for (Index i : cur.members)
          (row_bins[static_cast<size_t>(i * f + best_feature)] <= best_bin ? left.members : right.members).push_back(i);
        if (cur.depth + 1 < s.max_depth) {
          // Build the smaller child's histogram; the sibling is the parent minus it.
          Pending& small = left.members.size() <= right.members.size() ? left : right;
          Pending& large = &small == &left ? right : left;
          build_hist(small.members, small.hsum, small.hcnt);
          large.hsum = std::move(cur.hsum);
          large.hcnt = std::move(cur.hcnt);
          for (size_t at = 0; at < hist_size; ++at) {
            large.hsum[at] -= small.hsum[at];
            large.hcnt[at] -= small.hcnt[at];
          }
        }
        auto& nd = tree.nodes[static_cast<size_t>(cur.node)];
        nd.feature = best_feature;
        nd.bin = best_bin;
        nd.threshold = thresholds[static_cast<size_t>(best_feature)][static_cast<size_t>(best_bin)];
        nd.left = left.node;
        nd.right = right.node;
        tree.nodes.push_back(TreeNode{});
        tree.nodes.push_back(TreeNode{});
        queue.push_back(std::move(left));
        queue.push_back(std::move(right));
      }

      // Route every training row through the new tree using bins.
      for (Index i = 0; i < n; ++i) {
        int k = 0;
        while (tree.nodes[static_cast<size_t>(k)].feature >= 0) {
          const auto& nd = tree.nodes[static_cast<size_t>(k)];
          k = row_bins[static_cast<size_t>(i * f + nd.feature)] <= nd.bin ? nd.left : nd.right;
        }
        pred(i) += tree.nodes[static_cast<size_t>(k)].value;
      }
      model->trees.push_back(std::move(tree));
    }
    model->training_mse = mse_against(y, pred);
    model->training_predictions = std::move(pred);
    model->baseline_mse = mse_against(y, VectorXd::Constant(n, model->base));
    return model;
  }

  std::shared_ptr<const RegressorModel> fit_linear(const VectorXd& y) const {
    MatrixXd x(n, f + 1);
    x.col(0).setOnes();
    x.rightCols(f) = features;
    auto model = std::make_shared<LinearModel>();
    model->coef = x.colPivHouseholderQr().solve(y);
    model->training_predictions = model->predict(features);
    model->training_mse = mse_against(y, model->training_predictions);
    model->baseline_mse = mse_against(y, VectorXd::Constant(n, y.mean()));
    return model;
  }
};

FlexTrainer::FlexTrainer(const MatrixXd& features, FlexSettings settings)
    : impl_(std::make_unique<Impl>()) {
  require(features.rows() >= 20, ErrorKind::TooFewRows, "flexible regressor needs at least 20 rows");
  require(features.allFinite(), ErrorKind::InvalidArgument, "flexible regressor features must be finite");
  impl_->features = features;
  impl_->settings = std::move(settings);
  impl_->n = features.rows();
  impl_->f = features.cols();
  if (const auto* g = std::get_if<GbtSettings>(&impl_->settings)) {
    require(g->rounds >= 1 && g->max_depth >= 1 && g->learning_rate > 0 && g->subsample > 0 &&
                g->subsample <= 1 && g->max_bins >= 2 && g->max_bins <= 256 && g->min_leaf >= 1 &&
                g->lambda >= 0,
            ErrorKind::Config, "invalid gradient boosting settings");
    impl_->bin_features(g->max_bins);
  }
}

FlexTrainer::~FlexTrainer() = default;
FlexTrainer::FlexTrainer(FlexTrainer&&) noexcept = default;
FlexTrainer& FlexTrainer::operator=(FlexTrainer&&) noexcept = default;

Index FlexTrainer::rows() const { return impl_->n; }

std::shared_ptr<const RegressorModel> FlexTrainer::fit(const VectorXd& response) const {
  require(response.size() == impl_->n, ErrorKind::DimensionMismatch,
          "flexible regressor: response length differs from rows");
  require(response.allFinite(), ErrorKind::InvalidArgument, "flexible regressor: response not finite");
  if (const auto* g = std::get_if<GbtSettings>(&impl_->settings)) return impl_->fit_gbt(response, *g);
  return impl_->fit_linear(response);
}

std::shared_ptr<const RegressorModel> fit_flex_regressor(const MatrixXd& features,
                                                         const VectorXd& response,
                                                         const FlexSettings& hyper) {
  return FlexTrainer(features, hyper).fit(response);
}

VectorXd predict_flex(const RegressorModel& model, const MatrixXd& features) {
  return model.predict(features);
}

}  // namespace jaipw
