#include "vmfnet/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace vmfnet {

double dice_score(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                  int class_id) {
  if (pred.size() != truth.size()) throw ShapeError("dice_score: size mismatch");
  DiceCounts c;
  c.add(pred, truth, class_id);
  return c.percentage();
}

void DiceCounts::add(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& t,
                     int class_id) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pp = p[i] == class_id;
    const bool tt = t[i] == class_id;
    inter += pp && tt;
    pred += pp;
    truth += tt;
  }
}

const char* hd_variant_name(HdVariant v) {
  return v == HdVariant::kStandard ? "standard" : "modified";
}

HdVariant hd_variant_from_name(const std::string& s) {
  if (s == "standard") return HdVariant::kStandard;
  if (s == "modified") return HdVariant::kModified;
  throw ConfigError("unknown hausdorff variant '" + s + "' (expected standard or modified)");
}

std::vector<std::pair<int, int>> boundary_pixels(const std::uint8_t* labels, int h, int w,
                                                 int class_id) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (labels[static_cast<std::size_t>(y) * w + x] != class_id) continue;
      const bool edge =
          y == 0 || y == h - 1 || x == 0 || x == w - 1 ||
          labels[static_cast<std::size_t>(y - 1) * w + x] != class_id ||
          labels[static_cast<std::size_t>(y + 1) * w + x] != class_id ||
          labels[static_cast<std::size_t>(y) * w + x - 1] != class_id ||
          labels[static_cast<std::size_t>(y) * w + x + 1] != class_id;
      if (edge) out.emplace_back(y, x);
    }
  }
  return out;
}

namespace {

// directed distances from a to b: (max of minima, mean of minima)
std::pair<double, double> directed(const std::vector<std::pair<int, int>>& a,
                                   const std::vector<std::pair<int, int>>& b) {
  double max_min = 0, sum_min = 0;
  for (const auto& [ay, ax] : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [by, bx] : b) {
      const double dy = ay - by, dx = ax - bx;
      const double d2 = dy * dy + dx * dx;
      if (d2 < best) best = d2;
    }
    const double d = std::sqrt(best);
    max_min = std::max(max_min, d);
    sum_min += d;
  }
  return {max_min, sum_min / static_cast<double>(a.size())};
}

}  // namespace

std::optional<double> hausdorff(const std::vector<std::uint8_t>& pred,
                                const std::vector<std::uint8_t>& truth, int h, int w, int class_id,
                                HdVariant variant) {
  if (pred.size() != truth.size() || pred.size() != static_cast<std::size_t>(h) * w)
    throw ShapeError("hausdorff: size mismatch");
  const auto bp = boundary_pixels(pred.data(), h, w, class_id);
  const auto bt = boundary_pixels(truth.data(), h, w, class_id);
  if (bp.empty() || bt.empty()) return std::nullopt;
  const auto [max_pt, mean_pt] = directed(bp, bt);
  const auto [max_tp, mean_tp] = directed(bt, bp);
  return variant == HdVariant::kStandard ? std::max(max_pt, max_tp) : std::max(mean_pt, mean_tp);
}

double SubjectMetrics::mean_dice() const {
  double acc = 0;
  for (double d : dice_pct) acc += d;
  return dice_pct.empty() ? 0 : acc / static_cast<double>(dice_pct.size());
}

std::optional<double> SubjectMetrics::mean_hd() const {
  double acc = 0;
  int n = 0;
  for (const auto& h : hd)
    if (h) {
      acc += *h;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return acc / n;
}

MetricReport aggregate_metrics(std::vector<SubjectMetrics> subjects, int num_classes,
                               HdVariant variant, int both_empty_count) {
  MetricReport rep;
  rep.variant = variant;
  rep.num_classes = num_classes;
  rep.subjects = std::move(subjects);
  rep.both_empty_dice_count = both_empty_count;
  rep.mean_dice.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.std_dice.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.mean_hd.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.std_hd.assign(static_cast<std::size_t>(num_classes), 0.0);

  for (int c = 0; c < num_classes; ++c) {
    double sum = 0, sq = 0;
    double hsum = 0, hsq = 0;
    int hn = 0;
    for (const auto& s : rep.subjects) {
      const double d = s.dice_pct[static_cast<std::size_t>(c)];
      sum += d;
      sq += d * d;
      if (s.hd[static_cast<std::size_t>(c)]) {
        const double h = *s.hd[static_cast<std::size_t>(c)];
        hsum += h;
        hsq += h * h;
        ++hn;
      } else {
        ++rep.undefined_hd_count;
      }
    }
    const double n = static_cast<double>(rep.subjects.size());
    if (n > 0) {
      rep.mean_dice[static_cast<std::size_t>(c)] = sum / n;
      rep.std_dice[static_cast<std::size_t>(c)] = std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n)));
    }
    if (hn > 0) {
      rep.mean_hd[static_cast<std::size_t>(c)] = hsum / hn;
      rep.std_hd[static_cast<std::size_t>(c)] =
          std::sqrt(std::max(0.0, hsq / hn - (hsum / hn) * (hsum / hn)));
    }
  }
  double fg = 0;
  double fg_hd = 0;
  int fg_hd_n = 0;
  for (const auto& s : rep.subjects) {
    fg += s.mean_dice();
    if (auto h = s.mean_hd()) {
      fg_hd += *h;
      ++fg_hd_n;
    }
  }
  if (!rep.subjects.empty()) rep.mean_foreground_dice = fg / static_cast<double>(rep.subjects.size());
  if (fg_hd_n > 0) rep.mean_foreground_hd = fg_hd / fg_hd_n;
  return rep;
}

std::string MetricReport::table() const {
  std::ostringstream os;
  os << "subject";
  for (int c = 1; c <= num_classes; ++c) os << "\tdice_c" << c;
  for (int c = 1; c <= num_classes; ++c) os << "\thd_c" << c;
  os << "\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const auto& s : subjects) {
    os << s.subject_id;
    for (double d : s.dice_pct) os << "\t" << d;
    for (const auto& h : s.hd) {
      if (h)
        os << "\t" << *h;
      else
        os << "\tn/a";
    }
    os << "\n";
  }
  os << "mean";
  for (double d : mean_dice) os << "\t" << d;
  for (double h : mean_hd) os << "\t" << h;
  os << "\nstd";
  for (double d : std_dice) os << "\t" << d;
  for (double h : std_hd) os << "\t" << h;
  os << "\nforeground dice " << mean_foreground_dice;
  if (mean_foreground_hd) os << ", foreground hd (" << hd_variant_name(variant) << ") " << *mean_foreground_hd;
  os << ", undefined hd entries " << undefined_hd_count << "\n";
  return os.str();
}

}  // namespace vmfnet
