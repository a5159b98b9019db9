#include "metaseg/episodes/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "metaseg/common/error.hpp"
#include "metaseg/common/rng.hpp"

namespace metaseg::episodes {

namespace {

constexpr std::array<const char*, kNumShapes> kShapeNames{"disk", "square", "triangle", "ring", "cross"};
constexpr std::array<const char*, kNumTextures> kTextureNames{"solid", "stripes", "checker"};
constexpr int kPlacementTries = 1000;

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb out{0, 0, 0};
  switch (static_cast<int>(hp)) {
    case 0: out = {c, x, 0}; break;
    case 1: out = {x, c, 0}; break;
    case 2: out = {0, c, x}; break;
    case 3: out = {0, x, c}; break;
    case 4: out = {x, 0, c}; break;
    default: out = {c, 0, x}; break;
  }
  const double m = v - c;
  return {out.r + m, out.g + m, out.b + m};
}

std::uint8_t quantize(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

bool texture_on(Texture t, int x, int y) {
  switch (t) {
    case Texture::solid: return true;
    case Texture::stripes: return ((y / 2) % 2) == 0;
    case Texture::checker: return (((x / 2) + (y / 2)) % 2) == 0;
  }
  return true;
}

}  // namespace

ShapeKind class_shape(int class_id) { return static_cast<ShapeKind>((class_id - 1) % kNumShapes); }
Texture class_texture(int class_id) { return static_cast<Texture>((class_id - 1) / kNumShapes); }

void SynthConfig::validate() const {
  if (num_classes < 1) throw ValidationError("synth: num_classes must be at least 1");
  if (num_classes > kNumShapes * kNumTextures) {
    throw ValidationError("synth: at most " + std::to_string(kNumShapes * kNumTextures) + " distinct classes");
  }
  if (max_way < 1 || num_classes < max_way + 2) {
    throw ValidationError("synth: num_classes must be at least max_way + 2");
  }
  if (image_size < 16 || image_size % 4 != 0) throw ValidationError("synth: image_size must be a multiple of 4, >= 16");
  if (images_per_class < 1) throw ValidationError("synth: images_per_class must be positive");
  if (min_objects < 1 || max_objects < min_objects) throw ValidationError("synth: bad objects-per-image range");
  if (!(min_radius > 1.0) || max_radius < min_radius) throw ValidationError("synth: bad radius range");
  if (max_radius + 2 > image_size) throw ValidationError("synth: objects do not fit the canvas");
  if (mixed_prob < 0 || mixed_prob > 1) throw ValidationError("synth: mixed_prob outside [0, 1]");
  if (clutter < 0) throw ValidationError("synth: negative clutter count");
  if (noise < 0) throw ValidationError("synth: negative noise");
}

bool inside(const PlacedObject& o, double x, double y) {
  const double dx = x - o.cx, dy = y - o.cy, r = o.radius;
  const double d2 = dx * dx + dy * dy;
  switch (class_shape(o.class_id)) {
    case ShapeKind::disk: return d2 <= r * r;
    case ShapeKind::square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::triangle: {
      if (dy < -r || dy > 0.8 * r) return false;
      return std::abs(dx) <= (dy + r) / 1.8;
    }
    case ShapeKind::ring: return d2 <= r * r && d2 >= 0.3 * r * r;
    case ShapeKind::cross:
      return (std::abs(dx) <= r / 3 && std::abs(dy) <= r) || (std::abs(dy) <= r / 3 && std::abs(dx) <= r);
  }
  return false;
}

SynthOutput gen_synthetic_with_layout(const SynthConfig& config) {
  config.validate();
  SynthOutput out;
  SegDataset& ds = out.dataset;
  for (int c = 1; c <= config.num_classes; ++c) {
    ds.class_names[c] = std::string(kShapeNames[static_cast<std::size_t>(class_shape(c))]) + "_" +
                        kTextureNames[static_cast<std::size_t>(class_texture(c))];
  }
  const auto S = static_cast<std::size_t>(config.image_size);
  const double size = config.image_size;

  for (int primary = 1; primary <= config.num_classes; ++primary) {
    for (int i = 0; i < config.images_per_class; ++i) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(primary) * 100003ULL + static_cast<std::uint64_t>(i)));
      Record rec;
      char name[32];
      std::snprintf(name, sizeof name, "img_%03d_%04d", primary, i);
      rec.name = name;
      rec.height = rec.width = S;
      rec.image.resize(3 * S * S);
      rec.mask.assign(S * S, 0);

      // Background: two-tone gradient, then distractor strokes. Strokes and
      // objects share one color distribution, so color alone does not give
      // objects away.
      auto palette = [&rng]() {
        // separate statements: argument evaluation order is unspecified
        const double h = rng.uniform();
        const double sat = rng.uniform(0.0, 1.0);
        const double val = rng.uniform(0.3, 1.0);
        return hsv_to_rgb(h, sat, val);
      };
      const Rgb bg_a = palette();
      const Rgb bg_b = palette();
      const double angle = rng.uniform(0.0, 6.283185307179586);
      std::vector<double> canvas(3 * S * S);
      auto paint = [&](std::size_t x, std::size_t y, const Rgb& col) {
        canvas[(0 * S + y) * S + x] = col.r;
        canvas[(1 * S + y) * S + x] = col.g;
        canvas[(2 * S + y) * S + x] = col.b;
      };
      for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
          const double t = 0.5 + 0.5 * ((static_cast<double>(x) / size - 0.5) * std::cos(angle) +
                                        (static_cast<double>(y) / size - 0.5) * std::sin(angle));
          paint(x, y, Rgb{bg_a.r + t * (bg_b.r - bg_a.r), bg_a.g + t * (bg_b.g - bg_a.g),
                          bg_a.b + t * (bg_b.b - bg_a.b)});
        }
      }
      for (int k = 0; k < config.clutter; ++k) {
        const Rgb col = palette();
        if (rng.bernoulli(0.5)) {
          // straight stroke, 1 or 2 pixels wide
          const double x0 = rng.uniform(0.0, size), y0 = rng.uniform(0.0, size);
          const double dir = rng.uniform(0.0, 6.283185307179586);
          const double len = rng.uniform(0.25 * size, 0.6 * size);
          const double half_width = rng.bernoulli(0.5) ? 0.5 : 1.0;
          const double ux = std::cos(dir), uy = std::sin(dir);
          for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
              const double px = static_cast<double>(x) + 0.5 - x0, py = static_cast<double>(y) + 0.5 - y0;
              const double along = px * ux + py * uy, across = -px * uy + py * ux;
              if (along >= 0 && along <= len && std::abs(across) <= half_width) paint(x, y, col);
            }
          }
        } else {
          // elongated axis-aligned bar
          const double long_side = rng.uniform(0.3 * size, 0.8 * size);
          const double short_side = rng.uniform(2.0, 0.2 * size);
          const bool vertical = rng.bernoulli(0.5);
          const double w = vertical ? short_side : long_side, h = vertical ? long_side : short_side;
          const double x0 = rng.uniform(-0.5 * w, size - 0.5 * w), y0 = rng.uniform(-0.5 * h, size - 0.5 * h);
          for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
              const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
              if (px >= x0 && px <= x0 + w && py >= y0 && py <= y0 + h) paint(x, y, col);
            }
          }
        }
      }

      const int n_objects = rng.range(config.min_objects, config.max_objects);
      std::vector<PlacedObject> placed;
      for (int k = 0; k < n_objects; ++k) {
        PlacedObject obj;
        obj.class_id = primary;
        if (k > 0 && config.num_classes > 1 && rng.bernoulli(config.mixed_prob)) {
          int other = rng.range(1, config.num_classes - 1);
          if (other >= primary) ++other;
          obj.class_id = other;
        }
        bool ok = false;
        for (int attempt = 0; attempt < kPlacementTries && !ok; ++attempt) {
          obj.radius = rng.uniform(config.min_radius, config.max_radius);
          // up to half the radius may hang over the border
          obj.cx = rng.uniform(0.5 * obj.radius, size - 0.5 * obj.radius);
          obj.cy = rng.uniform(0.5 * obj.radius, size - 0.5 * obj.radius);
          ok = std::all_of(placed.begin(), placed.end(), [&](const PlacedObject& p) {
            return std::abs(p.cx - obj.cx) > p.radius + obj.radius + 1.0 ||
                   std::abs(p.cy - obj.cy) > p.radius + obj.radius + 1.0;
          });
        }
        if (!ok && k >= config.min_objects) break;  // optional extras may be dropped
        if (!ok) {
          throw ValidationError("synth: placement retry budget exhausted for '" + rec.name + "' (object " +
                                std::to_string(k + 1) + " of " + std::to_string(n_objects) + ")");
        }
        placed.push_back(obj);

        const Rgb fg = palette();
        const Rgb fg_dark{fg.r * 0.3, fg.g * 0.3, fg.b * 0.3};
        const Texture tex = class_texture(obj.class_id);
        const int ox = static_cast<int>(std::floor(obj.cx - obj.radius));
        const int oy = static_cast<int>(std::floor(obj.cy - obj.radius));
        for (std::size_t y = 0; y < S; ++y) {
          for (std::size_t x = 0; x < S; ++x) {
            if (!inside(obj, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
            rec.mask[y * S + x] = static_cast<std::uint8_t>(obj.class_id);
            const bool on = texture_on(tex, static_cast<int>(x) - ox, static_cast<int>(y) - oy);
            paint(x, y, on ? fg : fg_dark);
          }
        }
      }
      for (std::size_t j = 0; j < canvas.size(); ++j) {
        rec.image[j] = quantize(canvas[j] + config.noise * (2.0 * rng.uniform() - 1.0));
      }
      rec.refresh_present();
      ds.records.push_back(std::move(rec));
      out.layouts.push_back(std::move(placed));
    }
  }
  return out;
}

SegDataset gen_synthetic(const SynthConfig& config) { return gen_synthetic_with_layout(config).dataset; }

}  // namespace metaseg::episodes
