#include <algorithm>
#include <cmath>

#include "wp/pipeline.hpp"

namespace wp {

namespace {

double rect_area(double a, double b) { return std::abs(a) * std::abs(b); }

Vec3 jittered_color(const ScenePrimitive& prim, Rng& rng) {
  Vec3 c = prim.base_color;
  c.x = std::clamp(c.x + prim.color_jitter * uniform(rng, -1.0, 1.0), 0.0, 1.0);
  c.y = std::clamp(c.y + prim.color_jitter * uniform(rng, -1.0, 1.0), 0.0, 1.0);
  c.z = std::clamp(c.z + prim.color_jitter * uniform(rng, -1.0, 1.0), 0.0, 1.0);
  return c;
}

void emit_point(PointCloud& cloud, Vec3 p, const ScenePrimitive& prim, Rng& rng) {
  if (prim.noise_sigma > 0.0) {
    p.x += gaussian(rng, 0.0, prim.noise_sigma);
    p.y += gaussian(rng, 0.0, prim.noise_sigma);
    p.z += gaussian(rng, 0.0, prim.noise_sigma);
  }
  cloud.positions.push_back(p);
  cloud.colors.push_back(jittered_color(prim, rng));
  cloud.labels.push_back(prim.class_id);
}

void sample_floor(PointCloud& cloud, const ScenePrimitive& prim, Rng& rng) {
  const double area = rect_area(prim.extent.x, prim.extent.y);
  if (area <= 0.0) throw DataError("scene recipe: floor needs positive x and y extents");
  const auto n = static_cast<long long>(std::llround(area * prim.density));
  for (long long i = 0; i < n; ++i) {
    Vec3 p{prim.origin.x + uniform(rng, 0.0, prim.extent.x),
           prim.origin.y + uniform(rng, 0.0, prim.extent.y), prim.origin.z};
    emit_point(cloud, p, prim, rng);
  }
}

void sample_wall(PointCloud& cloud, const ScenePrimitive& prim, Rng& rng) {
  const bool normal_x = prim.extent.x == 0.0;
  const bool normal_y = prim.extent.y == 0.0;
  if (normal_x == normal_y)
    throw DataError("scene recipe: wall needs exactly one zero x or y extent");
  if (prim.extent.z <= 0.0) throw DataError("scene recipe: wall needs positive height");
  const double span = normal_x ? prim.extent.y : prim.extent.x;
  const double area = rect_area(span, prim.extent.z);
  if (area <= 0.0) throw DataError("scene recipe: wall has zero area");
  const auto n = static_cast<long long>(std::llround(area * prim.density));
  for (long long i = 0; i < n; ++i) {
    const double along = uniform(rng, 0.0, span);
    const double up = uniform(rng, 0.0, prim.extent.z);
    Vec3 p = normal_x ? Vec3{prim.origin.x, prim.origin.y + along, prim.origin.z + up}
                      : Vec3{prim.origin.x + along, prim.origin.y, prim.origin.z + up};
    emit_point(cloud, p, prim, rng);
  }
}

void sample_box(PointCloud& cloud, const ScenePrimitive& prim, Rng& rng) {
  const double ex = prim.extent.x, ey = prim.extent.y, ez = prim.extent.z;
  if (ex <= 0.0 || ey <= 0.0 || ez <= 0.0)
    throw DataError("scene recipe: box needs positive extents on all axes");
  // face order: z-, z+, y-, y+, x-, x+
  const double areas[6] = {ex * ey, ex * ey, ex * ez, ex * ez, ey * ez, ey * ez};
  double cumulative[6];
  double total = 0.0;
  for (int f = 0; f < 6; ++f) {
    total += areas[f];
    cumulative[f] = total;
  }
  const auto n = static_cast<long long>(std::llround(total * prim.density));
  for (long long i = 0; i < n; ++i) {
    const double pick = uniform(rng, 0.0, total);
    int face = 0;
    while (face < 5 && pick > cumulative[face]) ++face;
    const double u = uniform(rng, 0.0, 1.0), v = uniform(rng, 0.0, 1.0);
    Vec3 p = prim.origin;
    switch (face) {
      case 0: p = p + Vec3{u * ex, v * ey, 0.0}; break;
      case 1: p = p + Vec3{u * ex, v * ey, ez}; break;
      case 2: p = p + Vec3{u * ex, 0.0, v * ez}; break;
      case 3: p = p + Vec3{u * ex, ey, v * ez}; break;
      case 4: p = p + Vec3{0.0, u * ey, v * ez}; break;
      default: p = p + Vec3{ex, u * ey, v * ez}; break;
    }
    emit_point(cloud, p, prim, rng);
  }
}

}  // namespace

PointCloud generate_scene(const SceneRecipe& recipe, std::uint64_t seed) {
  if (recipe.primitives.empty()) throw DataError("scene recipe lists no primitives");
  Rng rng(seed);
  PointCloud cloud;
  for (const auto& prim : recipe.primitives) {
    if (prim.class_id < 0) throw DataError("scene recipe: negative class id");
    if (recipe.num_classes > 0 && prim.class_id >= recipe.num_classes)
      throw DataError("scene recipe: class id outside num_classes");
    if (prim.density <= 0.0) throw DataError("scene recipe: density must be positive");
    switch (prim.kind) {
      case ScenePrimitive::Kind::Floor: sample_floor(cloud, prim, rng); break;
      case ScenePrimitive::Kind::Wall: sample_wall(cloud, prim, rng); break;
      case ScenePrimitive::Kind::Box: sample_box(cloud, prim, rng); break;
    }
  }
  if (cloud.positions.empty()) throw DataError("scene recipe produced no points");
  return cloud;
}

SceneRecipe random_room_recipe(int num_classes, Rng& rng, double size_scale,
                               double density_scale) {
  if (num_classes < 2 || num_classes > 8)
    throw DataError("random room recipe supports 2 to 8 classes");
  if (size_scale <= 0.0 || density_scale <= 0.0)
    throw DataError("random room recipe: scales must be positive");

  const double sx = uniform(rng, 3.0, 4.5) * size_scale;
  const double sy = uniform(rng, 3.0, 4.5) * size_scale;
  const double height = 2.4 * size_scale;

  SceneRecipe recipe;
  recipe.num_classes = num_classes;

  ScenePrimitive floor;
  floor.kind = ScenePrimitive::Kind::Floor;
  floor.class_id = 0;
  floor.extent = {sx, sy, 0.0};
  floor.base_color = {0.45, 0.35, 0.25};
  floor.density = 40.0 * density_scale;
  floor.noise_sigma = 0.01;
  recipe.primitives.push_back(floor);

  const Vec3 wall_color{0.75, 0.72, 0.68};
  const double wall_density = 12.0 * density_scale;
  for (int side = 0; side < 4; ++side) {
    ScenePrimitive wall;
    wall.kind = ScenePrimitive::Kind::Wall;
    wall.class_id = 1;
    wall.base_color = wall_color;
    wall.density = wall_density;
    wall.noise_sigma = 0.01;
    switch (side) {
      case 0: wall.origin = {0, 0, 0}; wall.extent = {0, sy, height}; break;
      case 1: wall.origin = {sx, 0, 0}; wall.extent = {0, sy, height}; break;
      case 2: wall.origin = {0, 0, 0}; wall.extent = {sx, 0, height}; break;
      default: wall.origin = {0, sy, 0}; wall.extent = {sx, 0, height}; break;
    }
    recipe.primitives.push_back(wall);
  }

  static const Vec3 kPalette[6] = {{0.80, 0.15, 0.15}, {0.15, 0.60, 0.80}, {0.20, 0.70, 0.20},
                                   {0.85, 0.70, 0.10}, {0.60, 0.30, 0.70}, {0.90, 0.45, 0.10}};
  for (int cls = 2; cls < num_classes; ++cls) {
    ScenePrimitive box;
    box.kind = ScenePrimitive::Kind::Box;
    box.class_id = cls;
    box.extent = {uniform(rng, 0.4, 0.9), uniform(rng, 0.4, 0.9), uniform(rng, 0.3, 0.8)};
    const double margin = 0.3;
    box.origin = {uniform(rng, margin, std::max(margin + 0.01, sx - margin - box.extent.x)),
                  uniform(rng, margin, std::max(margin + 0.01, sy - margin - box.extent.y)), 0.0};
    box.base_color = kPalette[(cls - 2) % 6];
    box.density = 50.0 * density_scale;
    box.noise_sigma = 0.01;
    recipe.primitives.push_back(box);
  }
  return recipe;
}

}  // namespace wp
