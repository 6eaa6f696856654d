#pragma once

// Synthetic posed scenes with known answers, used in place of real captures for
// desk-scale experiments. Objects are axis-aligned boxes on the floor of a
// z-up room; cameras follow an orbit or a closed walk.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdviews/embeddings.hpp"
#include "cdviews/label.hpp"
#include "cdviews/scene.hpp"

namespace cdviews {

struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  Vec3 center() const { return 0.5 * (min + max); }
};

struct SceneObject {
  std::string label;
  Box box;
};

enum class Trajectory { Orbit, Walk };

struct SynthSpec {
  std::string scene_id = "synth";
  Vec3 room{8.0, 8.0, 3.0};
  std::size_t n_objects = 8;
  std::size_t n_views = 64;
  Trajectory trajectory = Trajectory::Orbit;
  std::uint64_t seed = 0;
  std::size_t max_questions = 8;
  double camera_height = 1.5;
  /// Orbit radius as a fraction of the smaller room side.
  double orbit_radius_fraction = 0.35;
};

struct FrustumParams {
  double fov_deg = 60.0;
  double near = 0.1;
  double far = 10.0;
};

/// Box center inside the symmetric viewing cone and between near/far along the
/// optical axis.
bool oracle_visibility(const CameraPose& pose, const Box& box, const FrustumParams& frustum = {});

struct SyntheticQA {
  QAInstance qa;
  std::size_t anchor = 0;  // object named in the question
  std::size_t answer = 0;  // nearest other object
  /// Views seeing both objects; never empty.
  std::vector<std::size_t> answer_views;
};

struct SyntheticScene {
  SceneManifest manifest;
  std::vector<SceneObject> objects;
  /// visibility[view][object]
  std::vector<std::vector<bool>> visibility;
  std::vector<SyntheticQA> qas;

  const SyntheticQA& qa(const std::string& question_id) const;
};

/// Deterministic per spec. Throws InvalidArgument (n_views < 4, bad room) or
/// InfeasibleSpec (objects cannot be placed).
SyntheticScene synth_scene(const SynthSpec& spec);

/// Ground-truth labels mirroring the annotator's three options: Positive when
/// a view sees both objects, Negative when it sees neither, Uncertain otherwise.
std::vector<Label> oracle_labels(const SyntheticScene& scene, const SyntheticQA& qa);

nlohmann::json scene_truth_to_json(const SyntheticScene& scene);
SyntheticScene scene_truth_from_json(const nlohmann::json& doc);

struct EmbedOptions {
  std::uint32_t d_in = 64;
  std::uint32_t tokens_per_view = 4;
  std::uint32_t tokens_per_question = 4;
  std::uint64_t seed = 0;
  double signal_strength = 1.0;
  /// Concept vectors depend only on (label, concept_seed), so scenes embedded
  /// with different noise seeds share one concept space.
  std::uint64_t concept_seed = 0x5eedc0de;
  /// Norm of a constant vector added to every view and question token. Models the
  /// shared mean direction of real encoder outputs. Orthogonal to all label concepts
  /// when d_in exceeds the label vocabulary.
  double shared_offset = 0.0;
};

/// Unit direction of the shared offset.
Vector offset_direction(std::uint32_t d_in, std::uint64_t concept_seed);

/// Unit concept vector of a label.
Vector concept_vector(const std::string& label, std::uint32_t d_in, std::uint64_t concept_seed);

/// View tokens: N(0, 1/d_in) noise + signal_strength * (sum of visible concepts).
/// Question tokens: noise + the concept of the object the question names. Both
/// also carry shared_offset * offset_direction.
EmbeddingStore embed_synthetic(const std::vector<SyntheticScene>& scenes, const EmbedOptions& options);

/// Fraction of (view, object) pairs where thresholding the mean view token's
/// projection on the concept at signal_strength / 2 reproduces the visibility
/// oracle.
double visibility_recovery(const std::vector<SyntheticScene>& scenes, const EmbeddingStore& store,
                           const EmbedOptions& options);

}  // namespace cdviews
