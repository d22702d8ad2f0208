#include "vmfnet/probe.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>

#include "vmfnet/evaluate.hpp"

namespace vmfnet {

const char* probe_representation_name(ProbeRepresentation r) {
  switch (r) {
    case ProbeRepresentation::kImage: return "image";
    case ProbeRepresentation::kFeatures: return "features";
    case ProbeRepresentation::kLikelihoods: return "likelihoods";
  }
  return "?";
}

ProbeRepresentation probe_representation_from_name(const std::string& s) {
  if (s == "image") return ProbeRepresentation::kImage;
  if (s == "features") return ProbeRepresentation::kFeatures;
  if (s == "likelihoods") return ProbeRepresentation::kLikelihoods;
  throw ConfigError("unknown representation '" + s + "' (expected image, features or likelihoods)");
}

void ProbeConfig::validate() const {
  if (hidden < 1 || steps < 1) throw ConfigError("probe hidden/steps must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("probe learning_rate must be > 0");
  if (weight_decay < 0) throw ConfigError("probe weight_decay must be >= 0");
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("probe test_fraction must be in (0,1)");
}

namespace {

// 2x2-block downsample of the pixel mask onto the feature grid; a block is
// foreground if any of its pixels is.
std::vector<char> foreground_at_feature_res(const Sample& s) {
  const int fh = s.h / 2, fw = s.w / 2;
  std::vector<char> fg(static_cast<std::size_t>(fh) * fw, 0);
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) {
      char v = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          v |= s.mask[static_cast<std::size_t>(2 * y + dy) * s.w + 2 * x + dx] != 0;
      fg[static_cast<std::size_t>(y) * fw + x] = v;
    }
  return fg;
}

}  // namespace

template <typename T>
std::vector<std::vector<double>> probe_features(VmfNet<T>& model, const Dataset& ds,
                                                ProbeRepresentation rep) {
  std::vector<std::vector<double>> out(ds.samples.size());
  for (std::size_t si = 0; si < ds.subjects.size(); ++si) {
    const Subject& subj = ds.subjects[si];
    const Tensor<T> x = subject_batch<T>(ds, static_cast<int>(si));
    const auto* fwd = rep == ProbeRepresentation::kImage
                          ? nullptr
                          : &model.forward(x, Mode::kEval);
    for (std::size_t k = 0; k < subj.sample_indices.size(); ++k) {
      const Sample& sample = ds.samples[static_cast<std::size_t>(subj.sample_indices[k])];
      if (!sample.has_mask())
        throw InvalidInputError("probe: sample of subject " + subj.id + " lacks a mask");
      std::vector<double> vec;
      if (rep == ProbeRepresentation::kImage) {
        double acc = 0;
        int n = 0;
        for (std::size_t p = 0; p < sample.mask.size(); ++p)
          if (sample.mask[p] != 0) {
            acc += sample.image[p] / 255.0;
            ++n;
          }
        vec.push_back(n > 0 ? acc / n : 0.0);
      } else {
        const auto fg = foreground_at_feature_res(sample);
        int n = 0;
        for (char c : fg) n += c != 0;
        if (rep == ProbeRepresentation::kFeatures) {
          const auto& z = fwd->z[k];  // [h, w, D]
          vec.assign(static_cast<std::size_t>(z.d), 0.0);
          for (int p = 0; p < z.h * z.w; ++p) {
            if (n > 0 && !fg[static_cast<std::size_t>(p)]) continue;
            for (int d = 0; d < z.d; ++d)
              vec[static_cast<std::size_t>(d)] += z.data.data[static_cast<std::size_t>(p) * z.d + d];
          }
          const int denom = n > 0 ? n : z.h * z.w;
          for (auto& v : vec) v /= denom;
        } else {
          const auto& l = fwd->dec[k].lik;  // [h, w, J]
          vec.assign(static_cast<std::size_t>(l.j), 0.0);
          for (int p = 0; p < l.h * l.w; ++p) {
            if (n > 0 && !fg[static_cast<std::size_t>(p)]) continue;
            for (int j = 0; j < l.j; ++j)
              vec[static_cast<std::size_t>(j)] += l.data.data[static_cast<std::size_t>(p) * l.j + j];
          }
          const int denom = n > 0 ? n : l.h * l.w;
          for (auto& v : vec) v /= denom;
        }
      }
      out[static_cast<std::size_t>(subj.sample_indices[k])] = std::move(vec);
    }
  }
  return out;
}

ProbeResult probe_on_vectors(const std::vector<std::vector<double>>& vectors,
                             const std::vector<int>& labels, const std::vector<int>& subject_of,
                             int classes, const ProbeConfig& cfg, ProbeRepresentation rep) {
  cfg.validate();
  if (classes < 2) throw ConfigError("probe needs at least 2 domains");
  if (vectors.empty() || vectors.size() != labels.size() || vectors.size() != subject_of.size())
    throw InvalidInputError("probe: inconsistent inputs");

  // split held-out subjects per class
  std::map<int, std::vector<int>> class_subjects;  // class -> unique subject ids
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    auto& v = class_subjects[labels[i]];
    if (std::find(v.begin(), v.end(), subject_of[i]) == v.end()) v.push_back(subject_of[i]);
  }
  Rng rng(Rng::derive(cfg.seed, 0x70726f6265));
  std::vector<char> subject_is_test(1 + *std::max_element(subject_of.begin(), subject_of.end()), 0);
  for (auto& [cls, subs] : class_subjects) {
    for (std::size_t i = subs.size(); i > 1; --i)
      std::swap(subs[i - 1], subs[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    int n_test = std::max(1, static_cast<int>(std::floor(cfg.test_fraction * subs.size())));
    n_test = std::min(n_test, static_cast<int>(subs.size()) - 1);
    for (int i = 0; i < n_test; ++i) subject_is_test[static_cast<std::size_t>(subs[static_cast<std::size_t>(i)])] = 1;
  }

  std::vector<int> effective_labels = labels;
  if (cfg.shuffle_labels) {
    for (std::size_t i = effective_labels.size(); i > 1; --i)
      std::swap(effective_labels[i - 1],
                effective_labels[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
  }

  const int dim = static_cast<int>(vectors[0].size());
  std::vector<int> train_ids, test_ids;
  for (std::size_t i = 0; i < vectors.size(); ++i)
    (subject_is_test[static_cast<std::size_t>(subject_of[i])] ? test_ids : train_ids)
        .push_back(static_cast<int>(i));

  // feature standardization from the training split
  std::vector<double> mean(static_cast<std::size_t>(dim), 0.0), stdev(static_cast<std::size_t>(dim), 0.0);
  for (int id : train_ids)
    for (int d = 0; d < dim; ++d) mean[static_cast<std::size_t>(d)] += vectors[static_cast<std::size_t>(id)][static_cast<std::size_t>(d)];
  for (auto& m : mean) m /= static_cast<double>(train_ids.size());
  for (int id : train_ids)
    for (int d = 0; d < dim; ++d) {
      const double c = vectors[static_cast<std::size_t>(id)][static_cast<std::size_t>(d)] - mean[static_cast<std::size_t>(d)];
      stdev[static_cast<std::size_t>(d)] += c * c;
    }
  for (auto& s : stdev) s = std::sqrt(s / static_cast<double>(train_ids.size())) + 1e-8;

  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  const auto standardized = [&](int id) {
    Vec v(dim);
    for (int d = 0; d < dim; ++d)
      v[d] = (vectors[static_cast<std::size_t>(id)][static_cast<std::size_t>(d)] - mean[static_cast<std::size_t>(d)]) /
             stdev[static_cast<std::size_t>(d)];
    return v;
  };

  // two-layer perceptron: dim -> hidden (tanh) -> classes, full-batch Adam
  Mat w1(cfg.hidden, dim), w2(classes, cfg.hidden);
  Vec b1 = Vec::Zero(cfg.hidden), b2 = Vec::Zero(classes);
  for (int i = 0; i < w1.size(); ++i) w1.data()[i] = rng.normal() * std::sqrt(1.0 / dim);
  for (int i = 0; i < w2.size(); ++i) w2.data()[i] = rng.normal() * std::sqrt(1.0 / cfg.hidden);

  Mat xtr(dim, static_cast<int>(train_ids.size()));
  for (std::size_t i = 0; i < train_ids.size(); ++i) xtr.col(static_cast<int>(i)) = standardized(train_ids[i]);

  Mat m_w1 = Mat::Zero(cfg.hidden, dim), v_w1 = Mat::Zero(cfg.hidden, dim);
  Mat m_w2 = Mat::Zero(classes, cfg.hidden), v_w2 = Mat::Zero(classes, cfg.hidden);
  Vec m_b1 = Vec::Zero(cfg.hidden), v_b1 = Vec::Zero(cfg.hidden);
  Vec m_b2 = Vec::Zero(classes), v_b2 = Vec::Zero(classes);
  const double b1c = 0.9, b2c = 0.999, eps = 1e-8;
  const int ntr = static_cast<int>(train_ids.size());

  double train_ce = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    Mat h = (w1 * xtr).colwise() + b1;
    Mat ht = h.array().tanh();
    Mat logits = (w2 * ht).colwise() + b2;
    Mat probs(classes, ntr);
    train_ce = 0;
    for (int i = 0; i < ntr; ++i) {
      Vec col = logits.col(i);
      const double mx = col.maxCoeff();
      Vec e = (col.array() - mx).exp();
      probs.col(i) = e / e.sum();
      train_ce -= std::log(std::max(probs(effective_labels[static_cast<std::size_t>(train_ids[static_cast<std::size_t>(i)])], i), 1e-300));
    }
    train_ce /= ntr;

    Mat dlogits = probs;
    for (int i = 0; i < ntr; ++i)
      dlogits(effective_labels[static_cast<std::size_t>(train_ids[static_cast<std::size_t>(i)])], i) -= 1.0;
    dlogits /= static_cast<double>(ntr);
    Mat gw2 = dlogits * ht.transpose() + cfg.weight_decay * w2;
    Vec gb2 = dlogits.rowwise().sum();
    Mat dh = (w2.transpose() * dlogits).array() * (1.0 - ht.array().square());
    Mat gw1 = dh * xtr.transpose() + cfg.weight_decay * w1;
    Vec gb1 = dh.rowwise().sum();

    const double c1 = 1.0 - std::pow(b1c, step), c2 = 1.0 - std::pow(b2c, step);
    const auto adam = [&](auto& p, auto& m, auto& v, const auto& g) {
      m = b1c * m + (1 - b1c) * g;
      v = b2c * v.array() + (1 - b2c) * g.array().square();
      p.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    adam(w1, m_w1, v_w1, gw1);
    adam(b1, m_b1, v_b1, gb1);
    adam(w2, m_w2, v_w2, gw2);
    adam(b2, m_b2, v_b2, gb2);
  }

  const auto eval_ce = [&](const std::vector<int>& ids) {
    double ce = 0;
    for (int id : ids) {
      Vec h = (w1 * standardized(id) + b1).array().tanh();
      Vec logits = w2 * h + b2;
      const double mx = logits.maxCoeff();
      Vec e = (logits.array() - mx).exp();
      const double p = e[effective_labels[static_cast<std::size_t>(id)]] / e.sum();
      ce -= std::log(std::max(p, 1e-300));
    }
    return ce / static_cast<double>(ids.size());
  };

  ProbeResult res;
  res.representation = rep;
  res.classes = classes;
  res.train_samples = ntr;
  res.test_samples = static_cast<int>(test_ids.size());
  res.train_ce = train_ce;
  res.test_ce = eval_ce(test_ids);
  return res;
}

template <typename T>
ProbeResult alignment_probe(VmfNet<T>& model, const Dataset& source_set, ProbeRepresentation rep,
                            const ProbeConfig& cfg) {
  if (source_set.domain_ids.size() < 2)
    throw ConfigError("alignment probe needs at least 2 domains, got " +
                      std::to_string(source_set.domain_ids.size()));
  const auto vectors = probe_features(model, source_set, rep);
  std::vector<int> labels(source_set.samples.size());
  std::vector<int> subject_of(source_set.samples.size());
  for (std::size_t si = 0; si < source_set.subjects.size(); ++si) {
    const auto& subj = source_set.subjects[si];
    const auto it = std::find(source_set.domain_ids.begin(), source_set.domain_ids.end(), subj.domain_id);
    const int cls = static_cast<int>(it - source_set.domain_ids.begin());
    for (int s : subj.sample_indices) {
      labels[static_cast<std::size_t>(s)] = cls;
      subject_of[static_cast<std::size_t>(s)] = static_cast<int>(si);
    }
  }
  return probe_on_vectors(vectors, labels, subject_of,
                          static_cast<int>(source_set.domain_ids.size()), cfg, rep);
}

#define VMFNET_INSTANTIATE(T)                                                               \
  template std::vector<std::vector<double>> probe_features<T>(VmfNet<T>&, const Dataset&,   \
                                                              ProbeRepresentation);        \
  template ProbeResult alignment_probe<T>(VmfNet<T>&, const Dataset&, ProbeRepresentation, \
                                          const ProbeConfig&);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
