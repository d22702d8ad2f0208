#include "vmfnet/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vmfnet/png_io.hpp"
#include "vmfnet/rng.hpp"

namespace vmfnet {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kFormatVersion = "1";
constexpr int kMinClassArea64 = 20;  // pixels at 64x64, scaled quadratically
constexpr int kMaxGeometryAttempts = 64;

// domain stream tags
constexpr std::uint64_t kSubjectStream = 1;
constexpr std::uint64_t kSliceStream = 2;
constexpr std::uint64_t kSplitStream = 3;

struct SubjectGeometry {
  double cx, cy;        // structure centre
  double r_inner;       // disk radius
  double r_outer;       // ring outer radius
  double rv_radius;     // crescent disk radius
  double rv_angle;      // direction of the crescent centre
  double rv_dist;       // distance of the crescent centre
  double rot;           // ellipse orientation
  double ecc;           // ellipse axis ratio
  double bias_px, bias_py;
  double intensity[4];  // background, disk, ring, crescent
};

SubjectGeometry draw_geometry(Rng& rng, const DomainSpec& dom, int size) {
  const double s = size / 64.0;
  SubjectGeometry g{};
  g.cx = size / 2.0 + rng.uniform(-2.0, 2.0) * s;
  g.cy = size / 2.0 + rng.uniform(-2.0, 2.0) * s;
  g.r_inner = rng.uniform(6.0, 9.0) * s;
  g.r_outer = g.r_inner + rng.uniform(2.5, 4.0) * s;
  g.rv_radius = rng.uniform(5.0, 7.0) * s;
  g.rv_angle = rng.uniform(0.0, 6.283185307179586);
  g.rv_dist = g.r_outer + 0.45 * g.rv_radius;
  g.rot = rng.uniform(0.0, 6.283185307179586);
  g.ecc = rng.uniform(dom.ecc_min, dom.ecc_max);
  g.bias_px = rng.uniform(0.0, 6.283185307179586);
  g.bias_py = rng.uniform(0.0, 6.283185307179586);
  g.intensity[0] = 0.18 + rng.uniform(-0.02, 0.02);
  g.intensity[1] = 0.85 + rng.uniform(-0.03, 0.03);
  g.intensity[2] = 0.42 + rng.uniform(-0.03, 0.03);
  g.intensity[3] = 0.72 + rng.uniform(-0.03, 0.03);
  return g;
}

// Radius profile across the slice stack: thin at both ends, widest mid-stack.
double slice_scale(int slice, int slices) {
  return 0.78 + 0.36 * std::sin(3.141592653589793 * (slice + 1) / (slices + 1));
}

std::vector<std::uint8_t> render_mask(const SubjectGeometry& g, int size, double sk, double drift_x,
                                      double drift_y) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
  const double cx = g.cx + drift_x, cy = g.cy + drift_y;
  const double rvx = cx + g.rv_dist * sk * std::cos(g.rv_angle);
  const double rvy = cy + g.rv_dist * sk * std::sin(g.rv_angle);
  const double cr = std::cos(g.rot), sr = std::sin(g.rot);
  const double gap = 0.8 * size / 64.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      // rotated, eccentric coordinates for the disk/ring ellipse
      const double u = (cr * dx + sr * dy) / g.ecc;
      const double v = (-sr * dx + cr * dy) * g.ecc;
      const double de = std::sqrt(u * u + v * v);
      std::uint8_t label = 0;
      if (de <= g.r_inner * sk) {
        label = 1;
      } else if (de <= g.r_outer * sk) {
        label = 2;
      } else {
        const double rdx = x + 0.5 - rvx, rdy = y + 0.5 - rvy;
        if (rdx * rdx + rdy * rdy <= g.rv_radius * sk * g.rv_radius * sk &&
            de > (g.r_outer + gap) * sk)
          label = 3;
      }
      mask[static_cast<std::size_t>(y) * size + x] = label;
    }
  }
  return mask;
}

bool mask_has_min_areas(const std::vector<std::uint8_t>& mask, int size) {
  const double scale = size / 64.0;
  const int need = static_cast<int>(std::ceil(kMinClassArea64 * scale * scale));
  int counts[4] = {0, 0, 0, 0};
  for (auto v : mask) ++counts[v];
  return counts[1] >= need && counts[2] >= need && counts[3] >= need;
}

void gaussian_blur(std::vector<double>& img, int size, double sigma) {
  if (sigma < 0.05) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;
  std::vector<double> tmp(img.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, size - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * img[static_cast<std::size_t>(y) * size + xx];
      }
      tmp[static_cast<std::size_t>(y) * size + x] = acc;
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, size - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy) * size + x];
      }
      img[static_cast<std::size_t>(y) * size + x] = acc;
    }
}

std::string subject_name(const std::string& domain_id, int subject_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", subject_index + 1);
  return domain_id + buf;
}

ordered_json domain_to_json(const DomainSpec& d) {
  return ordered_json{{"id", d.id},
                      {"gamma", d.gamma},
                      {"contrast", d.contrast},
                      {"brightness", d.brightness},
                      {"bias_amplitude", d.bias_amplitude},
                      {"noise_sigma", d.noise_sigma},
                      {"blur_sigma", d.blur_sigma},
                      {"ecc_min", d.ecc_min},
                      {"ecc_max", d.ecc_max}};
}

std::string crc_hex(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

}  // namespace

void DomainSpec::validate() const {
  if (gamma < 0.2 || gamma > 5.0) throw ConfigError("domain gamma outside [0.2, 5]");
  if (contrast < 0.2 || contrast > 3.0) throw ConfigError("domain contrast outside [0.2, 3]");
  if (std::abs(brightness) > 0.5) throw ConfigError("domain brightness outside [-0.5, 0.5]");
  if (bias_amplitude < 0.0 || bias_amplitude > 0.8) throw ConfigError("bias amplitude outside [0, 0.8]");
  if (noise_sigma < 0.0 || noise_sigma > 0.3) throw ConfigError("noise sigma outside [0, 0.3]");
  if (blur_sigma < 0.0 || blur_sigma > 4.0) throw ConfigError("blur sigma outside [0, 4]");
  if (ecc_min < 0.6 || ecc_max > 1.5 || ecc_min > ecc_max) throw ConfigError("eccentricity range invalid");
}

std::vector<DomainSpec> default_domains(int count) {
  static const std::vector<DomainSpec> table = {
      {"A", 1.00, 1.00, 0.00, 0.05, 0.020, 0.0, 1.00, 1.10},
      {"B", 0.60, 1.25, 0.05, 0.30, 0.050, 1.1, 1.05, 1.25},
      {"C", 1.80, 0.80, -0.05, 0.15, 0.030, 0.5, 0.80, 0.95},
      {"D", 1.25, 0.90, 0.10, 0.45, 0.080, 0.0, 1.10, 1.35},
      {"E", 0.80, 1.40, -0.08, 0.10, 0.060, 0.8, 0.90, 1.05},
      {"F", 1.50, 0.70, 0.02, 0.25, 0.015, 1.6, 1.00, 1.20},
      {"G", 0.90, 1.10, -0.12, 0.55, 0.040, 0.3, 0.75, 0.90},
      {"H", 1.10, 0.85, 0.08, 0.02, 0.100, 0.9, 1.15, 1.30},
  };
  if (count < 1 || count > static_cast<int>(table.size()))
    throw ConfigError("num_domains must be in [1, " + std::to_string(table.size()) + "]");
  std::vector<DomainSpec> out(table.begin(), table.begin() + count);
  for (const auto& d : out) d.validate();
  return out;
}

void GeneratorConfig::validate() const {
  if (num_domains < 1 || subjects_per_domain < 1 || slices_per_subject < 1)
    throw ConfigError("generator counts must be >= 1");
  if (image_size < 32 || image_size > 512 || image_size % 4 != 0)
    throw ConfigError("image_size must be a multiple of 4 in [32, 512]");
}

RenderedSlice render_slice(const GeneratorConfig& cfg, const DomainSpec& domain, int domain_index,
                           int subject_index, int slice_index) {
  const int size = cfg.image_size;
  // geometry is a subject-level draw; retry (deterministically) until every
  // class clears the minimum-area constraint across the whole slice stack
  SubjectGeometry geo{};
  bool ok = false;
  for (int attempt = 0; attempt < kMaxGeometryAttempts && !ok; ++attempt) {
    Rng grng(Rng::derive(cfg.seed, kSubjectStream,
                         static_cast<std::uint64_t>(domain_index) * 1000 + subject_index, attempt));
    geo = draw_geometry(grng, domain, size);
    ok = true;
    for (int k = 0; k < cfg.slices_per_subject && ok; ++k) {
      Rng srng(Rng::derive(cfg.seed, kSliceStream,
                           static_cast<std::uint64_t>(domain_index) * 1000 + subject_index, k));
      const double drift_x = srng.uniform(-1.0, 1.0) * size / 64.0;
      const double drift_y = srng.uniform(-1.0, 1.0) * size / 64.0;
      auto m = render_mask(geo, size, slice_scale(k, cfg.slices_per_subject), drift_x, drift_y);
      ok = mask_has_min_areas(m, size);
    }
  }
  if (!ok)
    throw InvalidInputError("generator: could not satisfy class-area constraints for subject " +
                            std::to_string(subject_index));

  Rng srng(Rng::derive(cfg.seed, kSliceStream,
                       static_cast<std::uint64_t>(domain_index) * 1000 + subject_index, slice_index));
  const double drift_x = srng.uniform(-1.0, 1.0) * size / 64.0;
  const double drift_y = srng.uniform(-1.0, 1.0) * size / 64.0;
  const double sk = slice_scale(slice_index, cfg.slices_per_subject);
  RenderedSlice out;
  out.mask = render_mask(geo, size, sk, drift_x, drift_y);

  std::vector<double> img(out.mask.size());
  for (std::size_t i = 0; i < out.mask.size(); ++i) img[i] = geo.intensity[out.mask[i]];

  // domain transform chain: gamma -> contrast/brightness -> bias field ->
  // point-spread blur -> sensor noise -> clamp
  for (auto& v : img) v = std::pow(std::max(v, 0.0), domain.gamma);
  for (auto& v : img) v = (v - 0.5) * domain.contrast + 0.5 + domain.brightness;
  const double two_pi = 6.283185307179586;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      img[static_cast<std::size_t>(y) * size + x] *=
          1.0 + domain.bias_amplitude * std::sin(two_pi * x / size + geo.bias_px) *
                    std::sin(two_pi * y / size + geo.bias_py);
  gaussian_blur(img, size, domain.blur_sigma);
  for (auto& v : img) v += srng.normal(0.0, domain.noise_sigma);

  out.image.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    out.image[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  return out;
}

void generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto domains = default_domains(cfg.num_domains);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw IoError("cannot create output directory: " + out_dir.string());

  static const std::vector<std::array<std::uint8_t, 3>> palette = {
      {0, 0, 0}, {220, 40, 40}, {40, 220, 40}, {40, 40, 220}};

  ordered_json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["checksum"] = "crc32";
  manifest["classes"] = kNumClasses;
  manifest["image_size"] = cfg.image_size;
  manifest["generator"] = ordered_json{{"num_domains", cfg.num_domains},
                                       {"subjects_per_domain", cfg.subjects_per_domain},
                                       {"slices_per_subject", cfg.slices_per_subject},
                                       {"image_size", cfg.image_size},
                                       {"seed", cfg.seed}};
  manifest["domains"] = ordered_json::array();
  for (const auto& d : domains) manifest["domains"].push_back(domain_to_json(d));

  ordered_json subjects = ordered_json::array();
  for (int di = 0; di < cfg.num_domains; ++di) {
    const auto& dom = domains[static_cast<std::size_t>(di)];
    for (int si = 0; si < cfg.subjects_per_domain; ++si) {
      const std::string sid = subject_name(dom.id, si);
      const std::filesystem::path subj_dir = out_dir / ("domain_" + dom.id) / ("subject_" + sid);
      std::filesystem::create_directories(subj_dir, ec);
      if (ec) throw IoError("cannot create directory: " + subj_dir.string());
      ordered_json slices = ordered_json::array();
      for (int k = 0; k < cfg.slices_per_subject; ++k) {
        const RenderedSlice slice = render_slice(cfg, dom, di, si, k);
        GrayImage gi{cfg.image_size, cfg.image_size, slice.image};
        GrayImage gm{cfg.image_size, cfg.image_size, slice.mask};
        const auto img_rel = std::filesystem::path("domain_" + dom.id) / ("subject_" + sid) /
                             ("slice_" + std::to_string(k) + ".png");
        const auto mask_rel = std::filesystem::path("domain_" + dom.id) / ("subject_" + sid) /
                              ("slice_" + std::to_string(k) + "_mask.png");
        write_gray_png(out_dir / img_rel, gi);
        write_indexed_png(out_dir / mask_rel, gm, palette);
        slices.push_back(ordered_json{
            {"index", k},
            {"image", img_rel.generic_string()},
            {"mask", mask_rel.generic_string()},
            {"image_crc32", crc_hex(crc32_of(read_file_bytes(out_dir / img_rel)))},
            {"mask_crc32", crc_hex(crc32_of(read_file_bytes(out_dir / mask_rel)))}});
      }
      subjects.push_back(ordered_json{{"id", sid}, {"domain", dom.id}, {"slices", slices}});
    }
  }
  manifest["subjects"] = subjects;

  const std::filesystem::path tmp = out_dir / "manifest.json.tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write manifest: " + tmp.string());
    os << manifest.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, out_dir / "manifest.json");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw IoError("missing manifest: " + manifest_path.string());
  ordered_json manifest;
  try {
    std::ifstream is(manifest_path);
    is >> manifest;
  } catch (const std::exception& e) {
    throw CorruptDatasetError("unparsable manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("format_version") || !manifest["format_version"].is_string())
    throw CorruptDatasetError("manifest missing format_version: " + manifest_path.string());
  if (manifest["format_version"].get<std::string>() != kFormatVersion)
    throw FormatVersionError("unknown dataset format version '" +
                             manifest["format_version"].get<std::string>() + "' in " +
                             manifest_path.string());

  Dataset ds;
  ds.num_classes = manifest.value("classes", kNumClasses);
  ds.image_size = manifest.value("image_size", 0);
  for (const auto& d : manifest["domains"]) ds.domain_ids.push_back(d["id"].get<std::string>());

  const auto load_png = [&dir](const std::string& rel, const std::string& want_crc) {
    const auto path = dir / rel;
    if (!std::filesystem::exists(path))
      throw CorruptDatasetError("file listed in manifest is missing: " + path.string());
    auto bytes = read_file_bytes(path);
    if (crc_hex(crc32_of(bytes)) != want_crc)
      throw CorruptDatasetError("checksum mismatch for " + path.string());
    return decode_png8(bytes, path.string());
  };

  try {
    for (const auto& subj : manifest["subjects"]) {
      Subject subject;
      subject.id = subj["id"].get<std::string>();
      subject.domain_id = subj["domain"].get<std::string>();
      subject.labeled = true;
      for (const auto& sl : subj["slices"]) {
        Sample sample;
        sample.domain_id = subject.domain_id;
        sample.subject_id = subject.id;
        sample.slice_index = sl["index"].get<int>();
        const GrayImage img =
            load_png(sl["image"].get<std::string>(), sl["image_crc32"].get<std::string>());
        sample.h = img.h;
        sample.w = img.w;
        sample.image = img.pixels;
        if (ds.image_size == 0) ds.image_size = img.w;
        if (img.w != ds.image_size || img.h != ds.image_size)
          throw CorruptDatasetError("inconsistent image size in " + sl["image"].get<std::string>());
        if (sl.contains("mask") && !sl["mask"].is_null()) {
          const GrayImage m =
              load_png(sl["mask"].get<std::string>(), sl["mask_crc32"].get<std::string>());
          if (m.w != img.w || m.h != img.h)
            throw CorruptDatasetError("mask size differs from image in " + sl["mask"].get<std::string>());
          for (auto v : m.pixels)
            if (v > ds.num_classes)
              throw CorruptDatasetError("label out of range in " + sl["mask"].get<std::string>());
          sample.mask = m.pixels;
          sample.labeled = true;
        }
        subject.sample_indices.push_back(static_cast<int>(ds.samples.size()));
        ds.samples.push_back(std::move(sample));
      }
      if (subject.sample_indices.empty())
        throw CorruptDatasetError("subject " + subject.id + " has no slices");
      ds.subjects.push_back(std::move(subject));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDatasetError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  // subject ids must be globally unique (no leakage across domains)
  for (std::size_t a = 0; a < ds.subjects.size(); ++a)
    for (std::size_t b = a + 1; b < ds.subjects.size(); ++b)
      if (ds.subjects[a].id == ds.subjects[b].id)
        throw CorruptDatasetError("duplicate subject id: " + ds.subjects[a].id);
  return ds;
}

bool Dataset::has_domain(const std::string& id) const {
  return std::find(domain_ids.begin(), domain_ids.end(), id) != domain_ids.end();
}

std::vector<int> Dataset::subjects_in_domain(const std::string& id) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].domain_id == id) out.push_back(static_cast<int>(i));
  return out;
}

SplitResult split_dataset(const Dataset& ds, const std::string& holdout_domain,
                          double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled_fraction must be in (0, 1]");
  if (!ds.has_domain(holdout_domain)) {
    std::string valid;
    for (const auto& d : ds.domain_ids) valid += (valid.empty() ? "" : ", ") + d;
    throw ConfigError("holdout domain '" + holdout_domain + "' not in dataset (valid: " + valid + ")");
  }

  SplitResult out;
  out.train.image_size = out.test.image_size = ds.image_size;
  out.train.num_classes = out.test.num_classes = ds.num_classes;
  out.test.domain_ids = {holdout_domain};
  for (const auto& d : ds.domain_ids)
    if (d != holdout_domain) out.train.domain_ids.push_back(d);

  const auto copy_subject = [&ds](Dataset& dst, int subject_index, bool labeled) {
    const Subject& src = ds.subjects[static_cast<std::size_t>(subject_index)];
    Subject subj;
    subj.id = src.id;
    subj.domain_id = src.domain_id;
    subj.labeled = labeled;
    for (int si : src.sample_indices) {
      Sample s = ds.samples[static_cast<std::size_t>(si)];
      s.labeled = labeled && s.has_mask();
      subj.sample_indices.push_back(static_cast<int>(dst.samples.size()));
      dst.samples.push_back(std::move(s));
    }
    dst.subjects.push_back(std::move(subj));
  };

  for (std::size_t di = 0; di < ds.domain_ids.size(); ++di) {
    const auto& dom = ds.domain_ids[di];
    auto idx = ds.subjects_in_domain(dom);
    if (dom == holdout_domain) {
      for (int s : idx) copy_subject(out.test, s, true);
      continue;
    }
    // seeded shuffle, first ceil(fraction * N) subjects labeled
    Rng rng(Rng::derive(seed, kSplitStream, di));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    const int labeled_count =
        static_cast<int>(std::ceil(labeled_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      copy_subject(out.train, idx[i], static_cast<int>(i) < labeled_count);
  }
  return out;
}

std::string manifest_format_version() { return kFormatVersion; }

}  // namespace vmfnet
