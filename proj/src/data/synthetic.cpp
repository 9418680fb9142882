#include "facever/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "facever/container.hpp"
#include "facever/error.hpp"
#include "facever/image_io.hpp"

namespace facever {
namespace {

struct Rgb {
  double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb scale(Rgb a, double s) { return {a.r * s, a.g * s, a.b * s}; }

struct Mark {
  double u, v, radius, darkness;
};

// Face coordinates: origin at the eye midpoint, u to the image right, v down,
// one unit = the inter-eye distance. Eyes sit at (-0.5, 0) and (0.5, 0).
struct Traits {
  double face_w, face_h, face_cy;
  Rgb skin;
  Rgb hair;
  double hairline;
  double eye_rx, eye_ry;
  Rgb iris;
  double brow_v, brow_thick, brow_tilt, brow_len, brow_dark;
  double nose_len, nose_w, nose_shade;
  double mouth_v, mouth_w, mouth_thick;
  Rgb lip;
  std::vector<Mark> marks;
  bool beard, glasses;
};

struct Variation {
  double rotation, scale, shift_x, shift_y;
  double brightness, contrast;
  double light_angle, light_strength;
  double expression, brow_raise;
  double background;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
  }
  double normal(double stddev) {
    // Box-Muller on the raw engine keeps streams identical across stdlibs.
    const double u1 = std::max(uniform(0.0, 1.0), 1e-300);
    const double u2 = uniform(0.0, 1.0);
    return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }

 private:
  std::mt19937_64 engine_;
};

Traits draw_traits(Rng& rng) {
  Traits t{};
  t.face_w = rng.uniform(0.85, 1.1);
  t.face_h = rng.uniform(1.15, 1.45);
  t.face_cy = rng.uniform(0.2, 0.35);
  const double tone = rng.uniform(0.35, 0.85);
  t.skin = {std::min(1.0, tone + rng.uniform(0.02, 0.12)), tone * rng.uniform(0.78, 0.9),
            tone * rng.uniform(0.6, 0.78)};
  const double hair = rng.uniform(0.05, 0.7);
  t.hair = {hair * rng.uniform(0.9, 1.2), hair * rng.uniform(0.75, 0.95), hair * rng.uniform(0.5, 0.8)};
  t.hairline = rng.uniform(-0.9, -0.45);
  t.eye_rx = rng.uniform(0.11, 0.19);
  t.eye_ry = rng.uniform(0.05, 0.09);
  const double iris = rng.uniform(0.05, 0.35);
  t.iris = {iris, iris * rng.uniform(0.8, 1.3), iris * rng.uniform(0.8, 1.6)};
  t.brow_v = rng.uniform(-0.42, -0.22);
  t.brow_thick = rng.uniform(0.035, 0.08);
  t.brow_tilt = rng.uniform(-0.2, 0.2);
  t.brow_len = rng.uniform(0.2, 0.32);
  t.brow_dark = rng.uniform(0.3, 0.8);
  t.nose_len = rng.uniform(0.4, 0.65);
  t.nose_w = rng.uniform(0.1, 0.22);
  t.nose_shade = rng.uniform(0.05, 0.2);
  t.mouth_v = rng.uniform(0.8, 1.05);
  t.mouth_w = rng.uniform(0.18, 0.32);
  t.mouth_thick = rng.uniform(0.04, 0.09);
  t.lip = {rng.uniform(0.45, 0.75), rng.uniform(0.15, 0.35), rng.uniform(0.2, 0.35)};
  for (int i = 0; i < 3; ++i) {
    t.marks.push_back({rng.uniform(-0.7, 0.7), rng.uniform(-0.3, 1.1), rng.uniform(0.04, 0.09),
                       rng.uniform(0.1, 0.3)});
  }
  t.beard = rng.chance(0.25);
  t.glasses = rng.chance(0.2);
  return t;
}

Variation draw_variation(Rng& rng, const SyntheticConfig& c) {
  Variation v{};
  v.rotation = rng.normal(c.rotation_jitter);
  v.scale = 1.0 + rng.normal(c.scale_jitter);
  v.shift_x = rng.normal(c.shift_jitter);
  v.shift_y = rng.normal(c.shift_jitter);
  v.brightness = rng.normal(c.brightness_jitter);
  v.contrast = std::max(0.3, 1.0 + rng.normal(c.contrast_jitter));
  v.light_angle = rng.uniform(0.0, 2.0 * M_PI);
  v.light_strength = rng.uniform(0.0, c.illumination);
  v.expression = rng.normal(c.expression);
  v.brow_raise = rng.normal(c.expression * 0.15);
  v.background = rng.uniform(0.2, 0.8);
  return v;
}

// Coverage of a shape with signed distance d (negative inside), antialiased
// over `edge` units.
double cover(double d, double edge) { return std::clamp(0.5 - d / edge, 0.0, 1.0); }

double ellipse_distance(double u, double v, double cu, double cv, double a, double b) {
  const double du = (u - cu) / a, dv = (v - cv) / b;
  return (std::sqrt(du * du + dv * dv) - 1.0) * std::min(a, b);
}

double segment_distance(double u, double v, double u0, double v0, double u1, double v1) {
  const double du = u1 - u0, dv = v1 - v0;
  const double t = std::clamp(((u - u0) * du + (v - v0) * dv) / (du * du + dv * dv), 0.0, 1.0);
  return std::hypot(u - (u0 + t * du), v - (v0 + t * dv));
}

Rgb shade_face(const Traits& t, const Variation& var, double u, double v, double edge) {
  Rgb c{var.background, var.background, var.background};

  const double head = ellipse_distance(u, v, 0.0, t.face_cy, t.face_w, t.face_h);
  const double hair_shell = ellipse_distance(u, v, 0.0, t.face_cy - 0.05, t.face_w * 1.1, t.face_h * 1.08);
  if (hair_shell < edge && v < 0.45) {
    c = mix(c, t.hair, cover(hair_shell, edge));
  }
  const double face_cov = cover(head, edge);
  if (face_cov <= 0.0) return c;

  Rgb skin = t.skin;
  // Soft cheek shading towards the rim of the head.
  const double rim = std::clamp(1.0 + head / std::min(t.face_w, t.face_h), 0.0, 1.0);
  skin = scale(skin, 1.0 - 0.25 * rim * rim);
  if (t.beard && v > t.nose_len + 0.1) skin = mix(skin, t.hair, 0.55);
  for (const auto& m : t.marks) {
    const double d = std::hypot(u - m.u, v - m.v) - m.radius;
    skin = scale(skin, 1.0 - m.darkness * cover(d, edge * 2.0));
  }
  // Hair above the hairline, curving down at the temples.
  const double hairline = t.hairline + 0.35 * u * u;
  skin = mix(skin, t.hair, cover(v - hairline, edge * 1.5));

  for (double side : {-0.5, 0.5}) {
    const double socket = ellipse_distance(u, v, side, 0.0, t.eye_rx * 1.45, t.eye_ry * 2.2);
    skin = scale(skin, 1.0 - 0.18 * cover(socket, edge * 3.0));
    const double white = ellipse_distance(u, v, side, 0.0, t.eye_rx, t.eye_ry);
    skin = mix(skin, Rgb{0.92, 0.92, 0.9}, cover(white, edge));
    const double iris = std::hypot(u - side, v) - t.eye_ry * 0.95;
    skin = mix(skin, t.iris, cover(iris, edge));

    const double lift = var.brow_raise;
    const double inner = side < 0 ? -0.5 + t.brow_len : 0.5 - t.brow_len;
    const double outer = side < 0 ? -0.5 - t.brow_len : 0.5 + t.brow_len;
    const double brow = segment_distance(u, v, inner, t.brow_v + lift + t.brow_tilt * 0.5 * t.brow_len,
                                         outer, t.brow_v + lift - t.brow_tilt * 0.5 * t.brow_len) -
                        t.brow_thick;
    skin = mix(skin, scale(t.hair, 0.6), t.brow_dark * cover(brow, edge));

    if (t.glasses) {
      const double ring = std::abs(ellipse_distance(u, v, side, 0.02, 0.3, 0.22)) - 0.02;
      skin = mix(skin, Rgb{0.08, 0.08, 0.1}, cover(ring, edge));
    }
  }

  const double ridge = segment_distance(u, v, t.nose_w * 0.5, 0.1, t.nose_w * 0.6, t.nose_len) - 0.03;
  skin = scale(skin, 1.0 - t.nose_shade * cover(ridge, edge * 2.0));
  for (double side : {-1.0, 1.0}) {
    const double nostril = std::hypot(u - side * t.nose_w * 0.5, v - t.nose_len) - 0.035;
    skin = scale(skin, 1.0 - 0.5 * cover(nostril, edge));
  }

  const double mw = t.mouth_w * std::max(0.5, 1.0 + 0.5 * var.expression);
  const double mt = t.mouth_thick * std::max(0.4, 1.0 + var.expression);
  const double mouth = ellipse_distance(u, v, 0.0, t.mouth_v, mw, mt);
  skin = mix(skin, t.lip, cover(mouth, edge));
  const double seam = segment_distance(u, v, -mw, t.mouth_v, mw, t.mouth_v) - 0.008;
  skin = scale(skin, 1.0 - 0.4 * cover(seam, edge));

  return mix(c, skin, face_cov);
}

SyntheticImage render(const Traits& t, const Variation& var, const SyntheticConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);
  const double eye_d = cfg.eye_distance * var.scale;
  const double mid_x = 0.5 * (size - 1.0) + var.shift_x;
  const double mid_y = 0.4 * size + var.shift_y;
  const double cr = std::cos(var.rotation), sr = std::sin(var.rotation);
  const double edge = 1.0 / eye_d;

  SyntheticImage out;
  out.pixels = make_image(n, n, 3);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) - mid_x, dy = static_cast<double>(y) - mid_y;
      const double u = (cr * dx + sr * dy) / eye_d;
      const double v = (-sr * dx + cr * dy) / eye_d;
      Rgb c = shade_face(t, var, u, v, edge);
      const double xn = 2.0 * static_cast<double>(x) / (size - 1.0) - 1.0;
      const double yn = 2.0 * static_cast<double>(y) / (size - 1.0) - 1.0;
      const double light =
          1.0 + var.light_strength * (std::cos(var.light_angle) * xn + std::sin(var.light_angle) * yn);
      const double channel[3] = {c.r, c.g, c.b};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double val = ((channel[ch] - 0.5) * var.contrast + 0.5 + var.brightness) * light;
        val += rng.normal(cfg.noise);
        out.pixels[(y * n + x) * 3 + ch] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  // Eye centres in image space, then perturbed as a landmark detector would.
  auto to_image = [&](double u, double v) {
    return Point{mid_x + eye_d * (cr * u - sr * v), mid_y + eye_d * (sr * u + cr * v)};
  };
  out.eyes.left = to_image(-0.5, 0.0);
  out.eyes.right = to_image(0.5, 0.0);
  for (Point* p : {&out.eyes.left, &out.eyes.right}) {
    p->x += rng.normal(cfg.eye_label_noise);
    p->y += rng.normal(cfg.eye_label_noise);
  }
  return out;
}

std::string identity_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Subject_%03zu", i + 1);
  return buf;
}

}  // namespace

std::vector<SyntheticIdentity> generate_synthetic_faces(const SyntheticConfig& config) {
  if (config.identities == 0 || config.images_per_identity == 0 || config.image_size < 16) {
    throw ConfigError("synthetic dataset needs identities, images and a size of at least 16");
  }
  std::vector<SyntheticIdentity> out;
  out.reserve(config.identities);
  for (std::size_t i = 0; i < config.identities; ++i) {
    // Every identity gets its own stream so adding identities leaves the
    // existing ones unchanged.
    Rng rng(config.seed * 0x100000001b3ULL + i * 0x9e3779b97f4a7c15ULL + 1);
    const Traits traits = draw_traits(rng);
    SyntheticIdentity id{identity_name(i), {}};
    for (std::size_t k = 0; k < config.images_per_identity; ++k) {
      const Variation var = draw_variation(rng, config);
      id.images.push_back(render(traits, var, config, rng));
    }
    out.push_back(std::move(id));
  }
  return out;
}

void write_synthetic_lfw(const std::filesystem::path& dir, const SyntheticConfig& config,
                         const SyntheticLayout& layout) {
  if (layout.dev_identities >= config.identities) {
    throw ConfigError("synthetic layout leaves no identities for evaluation folds");
  }
  const std::size_t eval = config.identities - layout.dev_identities;
  if (layout.folds == 0 || eval % layout.folds != 0 || eval / layout.folds < 2) {
    throw ConfigError("evaluation identities must split evenly into folds of at least 2");
  }
  const auto people = generate_synthetic_faces(config);

  std::ostringstream eyes;
  eyes.precision(10);
  eyes << "image_id,lx,ly,rx,ry\n";
  for (const auto& person : people) {
    for (std::size_t k = 0; k < person.images.size(); ++k) {
      const auto id = image_id(person.name, static_cast<int>(k + 1));
      write_pnm(dir / "images" / person.name / (id + ".ppm"), person.images[k].pixels);
      const auto& e = person.images[k].eyes;
      eyes << id << ',' << e.left.x << ',' << e.left.y << ',' << e.right.x << ',' << e.right.y << '\n';
    }
  }
  atomic_write(dir / "eyes.csv", eyes.str());

  std::ostringstream dev;
  dev << layout.dev_identities << '\n';
  for (std::size_t i = 0; i < layout.dev_identities; ++i) {
    dev << people[i].name << '\t' << people[i].images.size() << '\n';
  }
  atomic_write(dir / "peopleDevTrain.txt", dev.str());

  DatasetIndex index;
  std::ostringstream people_txt, pairs_txt;
  const std::size_t per_fold = eval / layout.folds;
  people_txt << layout.folds << '\n';
  pairs_txt << layout.folds << '\t' << layout.pairs_per_class << '\n';
  for (std::size_t f = 0; f < layout.folds; ++f) {
    people_txt << per_fold << '\n';
    std::vector<std::string> names;
    for (std::size_t j = 0; j < per_fold; ++j) {
      const auto& person = people[layout.dev_identities + f * per_fold + j];
      people_txt << person.name << '\t' << person.images.size() << '\n';
      names.push_back(person.name);
      auto& ids = index.subjects[person.name];
      for (std::size_t k = 0; k < person.images.size(); ++k) {
        const auto id = image_id(person.name, static_cast<int>(k + 1));
        ids.push_back(id);
        index.images[id] = ImageRecord{person.name, static_cast<int>(k + 1), {}, {}};
      }
    }
    const auto pairs = sample_pairs(index, names, layout.pairs_per_class, layout.pair_seed + f);
    for (const auto& p : pairs) {
      const auto& a = index.image(p.a);
      const auto& b = index.image(p.b);
      if (p.matched) {
        pairs_txt << a.identity << '\t' << a.number << '\t' << b.number << '\n';
      } else {
        pairs_txt << a.identity << '\t' << a.number << '\t' << b.identity << '\t' << b.number << '\n';
      }
    }
  }
  atomic_write(dir / "people.txt", people_txt.str());
  atomic_write(dir / "pairs.txt", pairs_txt.str());
}

}  // namespace facever
