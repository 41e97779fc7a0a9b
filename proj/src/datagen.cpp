#include "hst/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <Eigen/Geometry>

#include "hst/parallel.hpp"

namespace hst {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEyeHalfHeight = 0.05;

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

std::mt19937_64 tagged_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t tag) {
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(ss);
}

// Mouth opening beyond the neutral gap: lower lip and chin drop, upper lip
// lifts slightly, corners draw in. Inner lip gap grows by exactly `a`.
void open_mouth(Points& p, double a) {
  if (a == 0.0) return;
  const double cx = 0.5 * (p(48, 0) + p(54, 0));
  const double half = 0.5 * std::abs(p(54, 0) - p(48, 0));
  auto taper = [&](int i) {
    const double u = (p(i, 0) - cx) / half;
    return std::max(0.0, 1.0 - 0.5 * u * u);
  };
  for (int i : {55, 56, 57, 58, 59, 65, 66, 67}) p(i, 1) -= 0.85 * a * taper(i);
  for (int i : {49, 50, 51, 52, 53, 61, 62, 63}) p(i, 1) += 0.15 * a * taper(i);
  for (int i : {48, 54, 60, 64}) {
    p(i, 1) -= 0.35 * a;
    p(i, 0) = cx + (p(i, 0) - cx) * (1.0 - 0.12 * a);
  }
  for (int i = 4; i <= 12; ++i) p(i, 1) -= 0.7 * a * std::max(0.0, 1.0 - std::abs(i - 8) / 5.0);
}

// Lids close toward each eye's horizontal midline; openness 1 is the neutral eye.
void set_eyes(Points& p, double openness) {
  if (openness == 1.0) return;
  const double f = 0.05 + 0.95 * std::clamp(openness, 0.0, 1.0);
  for (int base : {36, 42}) {
    const double mid = 0.5 * (p(base, 1) + p(base + 3, 1));
    for (int i : {base + 1, base + 2, base + 4, base + 5}) p(i, 1) = mid + (p(i, 1) - mid) * f;
  }
}

struct Ellipse {
  double cx, cy, ax, by;
};

// Signed-distance coverage of an axis-aligned ellipse, antialiased over ~1 px.
double coverage(const Ellipse& e, double x, double y) {
  const double dx = (x - e.cx) / e.ax, dy = (y - e.cy) / e.by;
  const double r = std::sqrt(dx * dx + dy * dy);
  return std::clamp(0.5 - (r - 1.0) * std::min(e.ax, e.by), 0.0, 1.0);
}

// Pixel noise (sd 6) is read from a fixed table of Gaussian draws at a random
// per-patch offset; one normal draw per pixel dominated generation time.
class PixelNoise {
 public:
  explicit PixelNoise(std::mt19937_64& rng) {
    static const std::vector<double> table = [] {
      std::mt19937_64 g(0x91e5u);
      std::normal_distribution<double> nd(0.0, 6.0);
      std::vector<double> t(1u << 16);
      for (auto& v : t) v = nd(g);
      return t;
    }();
    table_ = &table;
    pos_ = std::uniform_int_distribution<std::size_t>(0, table.size() - 1)(rng);
  }
  double operator()() {
    const double v = (*table_)[pos_];
    pos_ = (pos_ + 1) & (table_->size() - 1);
    return v;
  }

 private:
  const std::vector<double>* table_ = nullptr;
  std::size_t pos_ = 0;
};

TexturePatch render_eye(const std::array<double, 3>& skin, double openness, double light, std::mt19937_64& rng) {
  PixelNoise px(rng);
  const Ellipse eye{15.5, 17.0, 11.0, std::max(0.3, 7.0 * openness)};
  const Ellipse iris{15.5, 17.0, 4.5, std::max(0.3, std::min(4.5, 7.0 * openness))};
  TexturePatch p;
  for (std::size_t y = 0; y < kPatchSize; ++y)
    for (std::size_t x = 0; x < kPatchSize; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double brow = (fy >= 3.0 && fy <= 6.0 && fx >= 4.0 && fx <= 27.0) ? 0.55 : 1.0;
      const double c_eye = coverage(eye, fx, fy), c_iris = coverage(iris, fx, fy) * c_eye;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = skin[c] * brow;
        v = v * (1.0 - c_eye) + 225.0 * (c_eye - c_iris) + 35.0 * c_iris;
        p.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v * light + px()), 0L, 255L));
      }
    }
  return p;
}

TexturePatch render_mouth(const std::array<double, 3>& skin, double aperture, double light, std::mt19937_64& rng) {
  PixelNoise px(rng);
  const Ellipse lips{15.5, 16.0, 13.0, 2.5 + 22.0 * aperture};
  const Ellipse cavity{15.5, 16.0, 11.0, std::max(0.3, 22.0 * aperture)};
  const std::array<double, 3> lip{skin[0] * 0.95, skin[1] * 0.55, skin[2] * 0.6};
  const std::array<double, 3> dark{55.0, 18.0, 22.0};
  TexturePatch p;
  for (std::size_t y = 0; y < kPatchSize; ++y)
    for (std::size_t x = 0; x < kPatchSize; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double c_lip = coverage(lips, fx, fy), c_cav = coverage(cavity, fx, fy) * c_lip;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = skin[c] * (1.0 - c_lip) + lip[c] * (c_lip - c_cav) + dark[c] * c_cav;
        p.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v * light + px()), 0L, 255L));
      }
    }
  return p;
}

Eigen::Matrix3d euler(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

}  // namespace

void SynthConfig::validate() const {
  require(frames >= 1, "synth: frames must be >= 1");
  require(fps > 0.0, "synth: fps must be positive");
  require(subjects >= 1, "synth: subjects must be >= 1");
  double sum = 0.0;
  for (double m : class_mix) {
    require(m >= 0.0, "synth: class mix entries must be non-negative");
    sum += m;
  }
  require(std::abs(sum - 1.0) < 1e-9, "synth: class mix must sum to 1");
  require(noise >= 0.0 && rigid >= 0.0, "synth: noise and rigid amplitude must be non-negative");
  require(texture == TextureMode::Patches || texture == TextureMode::Embeddings, "synth: unknown texture mode");
}

Points neutral_face() {
  Points p(kNumLandmarks, 3);
  for (int i = 0; i <= 16; ++i) {  // jaw, ear to ear through the chin
    const double th = kPi * i / 16.0;
    p.row(i) << -0.72 * std::cos(th), 0.05 - 1.0 * std::sin(th), -0.5 * (1.0 - std::sin(th));
  }
  for (int k = 0; k < 5; ++k) {  // brows
    const double arch = 0.06 * std::sin(kPi * k / 4.0);
    p.row(17 + k) << -0.62 + 0.125 * k, 0.22 + arch, 0.08 + 0.04 * std::sin(kPi * k / 4.0);
    p.row(22 + k) << 0.12 + 0.125 * k, 0.22 + arch, 0.08 + 0.04 * std::sin(kPi * k / 4.0);
  }
  const double bridge[4][2] = {{0.12, 0.15}, {-0.03, 0.22}, {-0.17, 0.30}, {-0.30, 0.38}};
  for (int k = 0; k < 4; ++k) p.row(27 + k) << 0.0, bridge[k][0], bridge[k][1];
  const double nostril[5][3] = {{-0.12, -0.36, 0.22}, {-0.06, -0.38, 0.25}, {0.0, -0.39, 0.27},
                                {0.06, -0.38, 0.25},  {0.12, -0.36, 0.22}};
  for (int k = 0; k < 5; ++k) p.row(31 + k) << nostril[k][0], nostril[k][1], nostril[k][2];
  // Eyes in Dlib order: corner, two upper-lid points, corner, two lower-lid points.
  const double eye_dx[6] = {-0.14, -0.05, 0.05, 0.14, 0.05, -0.05};
  const double eye_dy[6] = {0.0, kEyeHalfHeight, kEyeHalfHeight, 0.0, -kEyeHalfHeight, -kEyeHalfHeight};
  for (int k = 0; k < 6; ++k) {
    const double z = (k == 0 || k == 3) ? 0.10 : 0.12;
    p.row(36 + k) << -0.36 + eye_dx[k], eye_dy[k], z;
    p.row(42 + k) << 0.36 + eye_dx[k], eye_dy[k], z;
  }
  const double outer[12][2] = {{-0.25, -0.58}, {-0.16, -0.52}, {-0.07, -0.49}, {0.0, -0.50},
                               {0.07, -0.49},  {0.16, -0.52},  {0.25, -0.58},  {0.16, -0.65},
                               {0.07, -0.68},  {0.0, -0.685},  {-0.07, -0.68}, {-0.16, -0.65}};
  for (int k = 0; k < 12; ++k) p.row(48 + k) << outer[k][0], outer[k][1], 0.30 - 0.4 * std::abs(outer[k][0]);
  const double inner[8][2] = {{-0.20, -0.58}, {-0.08, -0.565}, {0.0, -0.565}, {0.08, -0.565},
                              {0.20, -0.58},  {0.08, -0.595},  {0.0, -0.595}, {-0.08, -0.595}};
  for (int k = 0; k < 8; ++k) p.row(60 + k) << inner[k][0], inner[k][1], 0.28 - 0.4 * std::abs(inner[k][0]);
  return p;
}

double lip_aperture(const Points& p) { return (p.row(62) - p.row(66)).norm(); }

SubjectProfile make_subject(std::uint32_t subject_id, std::uint64_t seed) {
  auto rng = tagged_rng(seed, subject_id, 0x5b1ec7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.008);
  SubjectProfile s;
  s.face = neutral_face();
  const double width = 1.0 + 0.06 * u(rng), length = 1.0 + 0.06 * u(rng);
  const double eyes = 1.0 + 0.05 * u(rng), mouth = 1.0 + 0.08 * u(rng);
  for (int i = 0; i < kNumLandmarks; ++i) {
    double sx = width;
    if (i >= 36 && i <= 47) sx *= eyes;
    if (i >= 48) sx *= mouth;
    s.face(i, 0) *= sx;
    s.face(i, 1) *= length;
    for (int c = 0; c < 3; ++c) s.face(i, c) += jitter(rng);
  }
  const double tone = 95.0 + 130.0 * (0.5 + 0.5 * u(rng));
  s.skin = {tone, tone * (0.78 + 0.06 * u(rng)), tone * (0.62 + 0.08 * u(rng))};
  return s;
}

std::vector<SimilarityTransform> head_motion(std::size_t frames, const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double r = cfg.rigid;
  const double deg = kPi / 180.0;
  const double s0 = std::exp(r * (std::log(60.0) + (std::log(140.0) - std::log(60.0)) * u01(rng)));
  const Eigen::RowVector3d t0(r * (200.0 + 240.0 * u01(rng)), r * (150.0 + 180.0 * u01(rng)), r * 50.0 * (2.0 * u01(rng) - 1.0));
  double period[6], phase[6];
  for (int k = 0; k < 6; ++k) {
    period[k] = cfg.fps * (4.0 + 8.0 * u01(rng));
    phase[k] = 2.0 * kPi * u01(rng);
  }
  auto wave = [&](int k, std::size_t f) { return std::sin(2.0 * kPi * static_cast<double>(f) / period[k] + phase[k]); };
  std::vector<SimilarityTransform> out(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double yaw = r * (25.0 * wave(0, f) + 2.0 * n01(rng)) * deg;
    const double pitch = r * (15.0 * wave(1, f) + 2.0 * n01(rng)) * deg;
    const double roll = r * (10.0 * wave(2, f) + 2.0 * n01(rng)) * deg;
    SimilarityTransform& T = out[f];
    T.rotation = euler(yaw, pitch, roll);
    T.scale = s0 * (1.0 + r * (0.15 * wave(3, f) + 0.01 * n01(rng)));
    T.translation = t0 + r * Eigen::RowVector3d(30.0 * wave(4, f) + n01(rng), 20.0 * wave(5, f) + n01(rng), n01(rng));
  }
  return out;
}

GeneratedSequence generate_sequence(int label, std::uint32_t subject, const SynthConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (label < kNormal || label > kYawning) fail(ErrorKind::InvalidArgument, "generate_sequence: invalid label " + std::to_string(label));
  const std::size_t N = cfg.frames;
  const SubjectProfile prof = make_subject(subject, cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  GeneratedSequence g;
  g.mouth_aperture.assign(N, 0.0);
  g.eye_openness.assign(N, 1.0);
  std::vector<double> open(N, 0.0);  // mouth opening beyond neutral

  if (cfg.blinks) {
    const int blinks = uniform_int(1, 3);
    for (int b = 0; b < blinks; ++b) {
      const int dur = uniform_int(4, 8);
      const int start = uniform_int(0, std::max(0, static_cast<int>(N) - dur));
      for (int k = 0; k <= dur && start + k < static_cast<int>(N); ++k)
        g.eye_openness[static_cast<std::size_t>(start + k)] =
            std::min(g.eye_openness[static_cast<std::size_t>(start + k)], 1.0 - 0.9 * std::sin(kPi * k / dur));
    }
  }

  if (label == kTalking) {
    // Speech bursts with an irregular 3-6 Hz syllable rhythm.
    double phase = 2.0 * kPi * u01(rng), freq = 3.0 + 3.0 * u01(rng);
    std::size_t next_freq = 0, seg_end = 0;
    bool speaking = u01(rng) < 0.8;
    double gate = speaking ? 1.0 : 0.0;
    for (std::size_t f = 0; f < N; ++f) {
      if (f >= seg_end) {
        speaking = !speaking;
        const double secs = speaking ? 2.0 + 4.0 * u01(rng) : 0.5 + 1.5 * u01(rng);
        seg_end = f + static_cast<std::size_t>(secs * cfg.fps);
      }
      if (f >= next_freq) {
        freq = 3.0 + 3.0 * u01(rng);
        next_freq = f + static_cast<std::size_t>((0.5 + u01(rng)) * cfg.fps);
      }
      gate += ((speaking ? 1.0 : 0.0) - gate) * 0.3;
      phase += 2.0 * kPi * freq / cfg.fps + 0.3 * n01(rng);
      open[f] = 0.15 * kFaceScale * gate * (0.5 - 0.5 * std::cos(phase));
    }
  } else if (label == kYawning) {
    const int events = uniform_int(1, 2);
    const int Ni = static_cast<int>(N);
    for (int e = 0; e < events; ++e) {
      const int len = std::min(uniform_int(30, 60), Ni);
      // Events are placed in separate halves when there are two.
      const int lo = events == 2 ? e * Ni / 2 : 0;
      const int hi = events == 2 ? (e + 1) * Ni / 2 : Ni;
      const int start = lo + uniform_int(0, std::max(0, hi - lo - len));
      const double amp = 0.6 * kFaceScale * (0.95 + 0.15 * u01(rng));
      for (int k = 0; k < len && start + k < Ni; ++k) {
        const double x = (k + 0.5) / len;  // ramp 35%, apex 30%, release 35%
        const double env = x < 0.35 ? smoothstep(x / 0.35) : x < 0.65 ? 1.0 : smoothstep((1.0 - x) / 0.35);
        const auto f = static_cast<std::size_t>(start + k);
        open[f] = std::max(open[f], amp * env);
        g.eye_openness[f] = std::min(g.eye_openness[f], 1.0 - 0.6 * env);
      }
      g.yawns.emplace_back(static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(std::min(start + len, Ni)));
    }
    std::sort(g.yawns.begin(), g.yawns.end());
  }

  const auto poses = head_motion(N, cfg, rng);
  const double light_sd = 0.08 * (cfg.noise > 0.0 ? 1.0 : 0.0);
  Sequence& s = g.sequence;
  s.label = label;
  s.subject = subject;
  s.frames = static_cast<std::uint32_t>(N);
  s.landmarks.resize(N * kNumLandmarks * 3);
  s.patches.resize(N * kNumRegions * kPatchBytes);
  for (std::size_t f = 0; f < N; ++f) {
    Points face = prof.face;
    open_mouth(face, open[f]);
    set_eyes(face, g.eye_openness[f]);
    g.mouth_aperture[f] = lip_aperture(face);
    if (cfg.noise > 0.0)
      for (Eigen::Index i = 0; i < face.size(); ++i) face.data()[i] += cfg.noise * n01(rng);
    const Points img = poses[f].apply(face);
    for (Eigen::Index i = 0; i < img.size(); ++i)
      s.landmarks[f * kNumLandmarks * 3 + static_cast<std::size_t>(i)] = static_cast<float>(img.data()[i]);

    // Texture shows the same state through its own per-frame jitter.
    const double light = std::clamp(1.0 + light_sd * n01(rng), 0.7, 1.3);
    const double eye_obs = std::clamp(g.eye_openness[f] + cfg.noise * 5.0 * n01(rng), 0.0, 1.3);
    const double mouth_obs = std::clamp(g.mouth_aperture[f] + cfg.noise * 1.4 * n01(rng), 0.0, 0.75);
    const TexturePatch patches[3] = {render_eye(prof.skin, eye_obs, light, rng),
                                     render_eye(prof.skin, eye_obs, light, rng),
                                     render_mouth(prof.skin, mouth_obs, light, rng)};
    for (std::size_t r = 0; r < kNumRegions; ++r)
      std::copy(patches[r].pixels.begin(), patches[r].pixels.end(),
                s.patches.begin() + static_cast<std::ptrdiff_t>((f * kNumRegions + r) * kPatchBytes));
  }

  if (cfg.texture == TextureMode::Embeddings) {
    s.embeddings.resize(N * kNumRegions * kTrunkWidth);
    constexpr std::size_t kChunk = 96;  // patches per trunk pass
    const std::size_t total = N * kNumRegions;
    for (std::size_t lo = 0; lo < total; lo += kChunk) {
      const std::size_t hi = std::min(total, lo + kChunk);
      std::vector<TexturePatch> batch(hi - lo);
      for (std::size_t i = lo; i < hi; ++i)
        std::copy_n(s.patches.begin() + static_cast<std::ptrdiff_t>(i * kPatchBytes), kPatchBytes, batch[i - lo].pixels.begin());
      const Tensor e = frozen_trunk_embeddings(batch);
      for (std::size_t k = 0; k < e.size(); ++k) s.embeddings[lo * kTrunkWidth + k] = static_cast<float>(e[k]);
    }
    s.patches.clear();
    s.patches.shrink_to_fit();
  }
  return g;
}

std::mt19937_64 sequence_rng(std::uint64_t seed, std::size_t index) { return tagged_rng(seed, index, 0x5e9); }

Split split_by_subject(const Container& data, std::uint64_t seed) {
  std::set<std::uint32_t> ids;
  for (const auto& s : data.sequences) ids.insert(s.subject);
  if (ids.size() < 5) fail(ErrorKind::InvalidArgument, "split: need at least 5 subjects, got " + std::to_string(ids.size()));
  std::vector<std::uint32_t> order(ids.begin(), ids.end());
  auto rng = tagged_rng(seed, 0, 0x5b117);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t S = order.size();
  const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(S))));
  std::set<std::uint32_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::set<std::uint32_t> test(order.begin() + static_cast<std::ptrdiff_t>(held),
                               order.begin() + static_cast<std::ptrdiff_t>(2 * held));
  Split sp;
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    const auto id = data.sequences[i].subject;
    (val.count(id) ? sp.val : test.count(id) ? sp.test : sp.train).push_back(i);
  }
  return sp;
}

GeneratedDataset generate_dataset(const SynthConfig& cfg, std::size_t threads) {
  cfg.validate();
  if (cfg.subjects < 5) fail(ErrorKind::InvalidArgument, "synth: need at least 5 subjects for a subject-disjoint split");
  const std::size_t n = cfg.n_sequences;
  // Exact class counts from the mix, then a seeded shuffle of labels and subjects.
  std::vector<int> labels;
  std::size_t assigned = 0;
  for (int c = 2; c >= 1; --c) {
    const auto k = static_cast<std::size_t>(std::llround(cfg.class_mix[static_cast<std::size_t>(c)] * static_cast<double>(n)));
    labels.insert(labels.end(), std::min(k, n - assigned), c);
    assigned = labels.size();
  }
  labels.insert(labels.end(), n - assigned, kNormal);
  auto rng = tagged_rng(cfg.seed, 0, 0xa551);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::vector<std::uint32_t> subjects(n);
  for (std::size_t i = 0; i < n; ++i) subjects[i] = static_cast<std::uint32_t>(i % cfg.subjects);
  std::shuffle(subjects.begin(), subjects.end(), rng);

  GeneratedDataset out;
  out.data.mode = cfg.texture;
  out.data.d_tex = cfg.texture == TextureMode::Embeddings ? static_cast<std::uint32_t>(kTrunkWidth) : 0;
  out.data.sequences.resize(n);
  out.meta.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    auto r = sequence_rng(cfg.seed, i);
    GeneratedSequence g = generate_sequence(labels[i], subjects[i], cfg, r);
    out.data.sequences[i] = std::move(g.sequence);
    out.meta[i] = std::move(g);
  });
  out.split = split_by_subject(out.data);
  return out;
}

}  // namespace hst
