#include "cdviews/synth.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "cdviews/error.hpp"
#include "fnv.hpp"

namespace cdviews {

namespace {

constexpr std::array<const char*, 24> kLabels{
    "chair",   "table",    "sofa",   "lamp",     "bed",      "cabinet", "desk",    "television",
    "plant",   "bookshelf", "door",  "window",   "armchair", "dresser", "mirror",  "piano",
    "toilet",  "sink",     "bathtub", "refrigerator", "oven", "trash can", "whiteboard", "radiator"};

bool overlaps_xy(const Box& a, const Box& b, double margin) {
  return a.min.x() < b.max.x() + margin && b.min.x() < a.max.x() + margin &&
         a.min.y() < b.max.y() + margin && b.min.y() < a.max.y() + margin;
}


std::vector<CameraPose> orbit_poses(const SynthSpec& spec, const Vec3& target) {
  const Vec3 center(spec.room.x() / 2, spec.room.y() / 2, spec.camera_height);
  const double radius = spec.orbit_radius_fraction * std::min(spec.room.x(), spec.room.y());
  std::vector<CameraPose> poses;
  for (std::size_t i = 0; i < spec.n_views; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / spec.n_views;
    const Vec3 eye = center + radius * Vec3(std::cos(a), std::sin(a), 0.0);
    poses.push_back(look_at(eye, target));
  }
  return poses;
}

std::vector<CameraPose> walk_poses(const SynthSpec& spec, std::mt19937_64& rng) {
  const double margin = 0.6;
  std::uniform_real_distribution<double> ux(margin, spec.room.x() - margin);
  std::uniform_real_distribution<double> uy(margin, spec.room.y() - margin);
  std::vector<Vec3> waypoints;
  for (int i = 0; i < 5; ++i) waypoints.emplace_back(ux(rng), uy(rng), spec.camera_height);

  std::vector<double> cumulative{0.0};
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const auto& a = waypoints[i];
    const auto& b = waypoints[(i + 1) % waypoints.size()];
    cumulative.push_back(cumulative.back() + (b - a).norm());
  }
  const double total = cumulative.back();
  std::normal_distribution<double> yaw_jitter(0.0, 0.15);
  const double pitch = -20.0 * std::numbers::pi / 180.0;

  std::vector<CameraPose> poses;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < spec.n_views; ++i) {
    const double s = total * static_cast<double>(i) / spec.n_views;
    while (cumulative[seg + 1] < s) ++seg;
    const auto& a = waypoints[seg];
    const auto& b = waypoints[(seg + 1) % waypoints.size()];
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double f = len > 0 ? (s - cumulative[seg]) / len : 0.0;
    const Vec3 eye = a + f * (b - a);
    const Vec3 dir = (b - a).normalized();
    const double yaw = std::atan2(dir.y(), dir.x()) + yaw_jitter(rng);
    const Vec3 look(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch),
                    std::sin(pitch));
    poses.push_back(look_at(eye, eye + look));
  }
  return poses;
}

std::array<double, 3> vec_to_array(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 array_to_vec(const nlohmann::json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

}  // namespace

bool oracle_visibility(const CameraPose& pose, const Box& box, const FrustumParams& frustum) {
  const Vec3 offset = box.center() - pose.position;
  const double depth = offset.dot(pose.forward());
  if (depth < frustum.near || depth > frustum.far) return false;
  const double dist = offset.norm();
  const double half_fov = 0.5 * frustum.fov_deg * std::numbers::pi / 180.0;
  const double angle = std::acos(std::clamp(depth / dist, -1.0, 1.0));
  return angle <= half_fov;
}

const SyntheticQA& SyntheticScene::qa(const std::string& question_id) const {
  for (const auto& q : qas) {
    if (q.qa.question_id == question_id) return q;
  }
  throw Error(ErrorCode::DataError, "scene '" + manifest.scene_id + "' has no question '" +
                                        question_id + "'");
}

SyntheticScene synth_scene(const SynthSpec& spec) {
  if (spec.n_views < 4) throw Error(ErrorCode::InvalidArgument, "n_views must be >= 4");
  if (!(spec.room.minCoeff() > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "room dimensions must be positive");
  }
  if (spec.n_objects > kLabels.size()) {
    throw Error(ErrorCode::InfeasibleSpec, "at most " + std::to_string(kLabels.size()) +
                                               " distinct object labels are available");
  }

  std::mt19937_64 rng(spec.seed);
  SyntheticScene scene;
  scene.manifest.scene_id = spec.scene_id;

  std::vector<std::size_t> label_order(kLabels.size());
  std::iota(label_order.begin(), label_order.end(), std::size_t{0});
  std::shuffle(label_order.begin(), label_order.end(), rng);

  const double wall = 0.2;
  std::uniform_real_distribution<double> footprint(0.4, 1.0);
  std::uniform_real_distribution<double> height(0.4, 1.2);
  for (std::size_t i = 0; i < spec.n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double sx = footprint(rng), sy = footprint(rng), sz = height(rng);
      if (sx + 2 * wall >= spec.room.x() || sy + 2 * wall >= spec.room.y() ||
          sz >= spec.room.z()) {
        continue;
      }
      std::uniform_real_distribution<double> px(wall, spec.room.x() - wall - sx);
      std::uniform_real_distribution<double> py(wall, spec.room.y() - wall - sy);
      Box box{Vec3(px(rng), py(rng), 0.0), Vec3::Zero()};
      box.max = box.min + Vec3(sx, sy, sz);
      const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(),
                                     [&](const SceneObject& o) { return overlaps_xy(o.box, box, 0.1); });
      if (!clash) {
        scene.objects.push_back({kLabels[label_order[i]], box});
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorCode::InfeasibleSpec,
                  "could not place object " + std::to_string(i) + " without overlap");
    }
  }

  std::vector<CameraPose> poses;
  if (spec.trajectory == Trajectory::Orbit) {
    Vec3 target(spec.room.x() / 2, spec.room.y() / 2, 0.5);
    if (!scene.objects.empty()) {
      target.setZero();
      for (const auto& o : scene.objects) target += o.box.center();
      target /= static_cast<double>(scene.objects.size());
    }
    poses = orbit_poses(spec, target);
  } else {
    poses = walk_poses(spec, rng);
  }

  for (std::size_t i = 0; i < poses.size(); ++i) {
    ViewRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "v%03zu", i);
    rec.view_id = id;
    rec.frame_index = static_cast<std::int64_t>(i);
    rec.pose = poses[i];
    scene.manifest.views.push_back(std::move(rec));
    std::vector<bool> seen;
    for (const auto& o : scene.objects) seen.push_back(oracle_visibility(poses[i], o.box));
    scene.visibility.push_back(std::move(seen));
  }

  std::vector<std::size_t> anchors(scene.objects.size());
  std::iota(anchors.begin(), anchors.end(), std::size_t{0});
  std::shuffle(anchors.begin(), anchors.end(), rng);
  for (std::size_t anchor : anchors) {
    if (scene.qas.size() >= spec.max_questions || scene.objects.size() < 2) break;
    std::size_t nearest = anchor;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < scene.objects.size(); ++j) {
      if (j == anchor) continue;
      const double d = (scene.objects[j].box.center() - scene.objects[anchor].box.center()).norm();
      if (d < best) {
        best = d;
        nearest = j;
      }
    }
    SyntheticQA q;
    q.anchor = anchor;
    q.answer = nearest;
    for (std::size_t v = 0; v < scene.visibility.size(); ++v) {
      if (scene.visibility[v][anchor] && scene.visibility[v][nearest]) q.answer_views.push_back(v);
    }
    if (q.answer_views.empty()) continue;
    q.qa.question_id = spec.scene_id + "_q" + std::to_string(scene.qas.size());
    q.qa.scene_id = spec.scene_id;
    q.qa.question = "What is next to the " + scene.objects[anchor].label + "?";
    q.qa.answers = {scene.objects[nearest].label};
    scene.qas.push_back(std::move(q));
  }
  return scene;
}

std::vector<Label> oracle_labels(const SyntheticScene& scene, const SyntheticQA& qa) {
  std::vector<Label> labels;
  for (const auto& row : scene.visibility) {
    const int seen = int{row[qa.anchor]} + int{row[qa.answer]};
    labels.push_back(seen == 2 ? Label::Positive : seen == 0 ? Label::Negative : Label::Uncertain);
  }
  return labels;
}

nlohmann::json scene_truth_to_json(const SyntheticScene& scene) {
  using nlohmann::json;
  json objects = json::array();
  for (const auto& o : scene.objects) {
    objects.push_back({{"label", o.label},
                       {"min", vec_to_array(o.box.min)},
                       {"max", vec_to_array(o.box.max)}});
  }
  json visibility = json::array();
  for (const auto& row : scene.visibility) {
    std::string bits;
    for (bool b : row) bits += b ? '1' : '0';
    visibility.push_back(bits);
  }
  json qas = json::array();
  for (const auto& q : scene.qas) {
    qas.push_back({{"qa", qa_to_json(q.qa)},
                   {"anchor", q.anchor},
                   {"answer", q.answer},
                   {"answer_views", q.answer_views}});
  }
  return {{"manifest", manifest_to_json(scene.manifest)},
          {"objects", objects},
          {"visibility", visibility},
          {"qas", qas}};
}

SyntheticScene scene_truth_from_json(const nlohmann::json& doc) {
  SyntheticScene scene;
  try {
    scene.manifest = manifest_from_json(doc.at("manifest"));
    for (const auto& o : doc.at("objects")) {
      scene.objects.push_back({o.at("label").get<std::string>(),
                               Box{array_to_vec(o.at("min")), array_to_vec(o.at("max"))}});
    }
    for (const auto& row : doc.at("visibility")) {
      std::vector<bool> bits;
      for (char c : row.get<std::string>()) bits.push_back(c == '1');
      scene.visibility.push_back(std::move(bits));
    }
    for (const auto& q : doc.at("qas")) {
      SyntheticQA s;
      s.qa = qa_from_json(q.at("qa"));
      s.anchor = q.at("anchor").get<std::size_t>();
      s.answer = q.at("answer").get<std::size_t>();
      s.answer_views = q.at("answer_views").get<std::vector<std::size_t>>();
      scene.qas.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("scene truth: ") + e.what());
  }
  return scene;
}

Vector concept_vector(const std::string& label, std::uint32_t d_in, std::uint64_t concept_seed) {
  std::mt19937_64 rng(concept_seed ^ detail::fnv1a(label));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d_in);
  for (auto& x : v) x = normal(rng);
  return v.normalized();
}

Vector offset_direction(std::uint32_t d_in, std::uint64_t concept_seed) {
  Vector dir = concept_vector("", d_in, concept_seed ^ 0x0ff5e7ULL);
  if (d_in > kLabels.size()) {
    Matrix basis(d_in, kLabels.size());
    for (std::size_t i = 0; i < kLabels.size(); ++i) {
      basis.col(static_cast<Eigen::Index>(i)) = concept_vector(kLabels[i], d_in, concept_seed);
    }
    Eigen::HouseholderQR<Matrix> qr(basis);
    const Matrix q = qr.householderQ() * Matrix::Identity(d_in, kLabels.size());
    dir -= q * (q.transpose() * dir);
  }
  return dir.normalized();
}

EmbeddingStore embed_synthetic(const std::vector<SyntheticScene>& scenes,
                               const EmbedOptions& options) {
  if (options.signal_strength < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "signal_strength must be >= 0");
  }
  EmbeddingStore store{TokenTable(options.d_in, options.tokens_per_view),
                       TokenTable(options.d_in, options.tokens_per_question)};
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 1.0 / std::sqrt(static_cast<double>(options.d_in)));

  auto noisy = [&](std::uint32_t tokens, const Vector& signal) {
    MatrixF m(tokens, options.d_in);
    for (std::uint32_t t = 0; t < tokens; ++t)
      for (std::uint32_t j = 0; j < options.d_in; ++j)
        m(t, j) = static_cast<float>(noise(rng) + signal(j));
    return m;
  };

  const Vector offset = options.shared_offset > 0.0
                            ? Vector(options.shared_offset *
                                     offset_direction(options.d_in, options.concept_seed))
                            : Vector(Vector::Zero(options.d_in));
  for (const auto& scene : scenes) {
    std::vector<Vector> concepts;
    for (const auto& o : scene.objects) {
      concepts.push_back(concept_vector(o.label, options.d_in, options.concept_seed));
    }
    for (std::size_t v = 0; v < scene.manifest.views.size(); ++v) {
      Vector signal = offset;
      for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        if (scene.visibility[v][o]) signal += options.signal_strength * concepts[o];
      }
      store.views.insert(EmbeddingStore::view_key(scene.manifest.scene_id,
                                                  scene.manifest.views[v].view_id),
                         noisy(options.tokens_per_view, signal));
    }
    for (const auto& q : scene.qas) {
      const Vector signal = concepts[q.anchor] + offset;
      store.questions.insert(q.qa.question_id, noisy(options.tokens_per_question, signal));
    }
  }
  return store;
}

double visibility_recovery(const std::vector<SyntheticScene>& scenes, const EmbeddingStore& store,
                           const EmbedOptions& options) {
  std::size_t correct = 0, total = 0;
  for (const auto& scene : scenes) {
    for (std::size_t v = 0; v < scene.manifest.views.size(); ++v) {
      const Vector mean = store.view_tokens(scene.manifest.scene_id, scene.manifest.views[v].view_id)
                              .colwise()
                              .mean()
                              .transpose();
      for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        const double proj =
            mean.dot(concept_vector(scene.objects[o].label, options.d_in, options.concept_seed));
        const bool predicted = proj > 0.5 * options.signal_strength;
        correct += predicted == scene.visibility[v][o];
        ++total;
      }
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace cdviews
