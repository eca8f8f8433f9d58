#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "portrait/blink.hpp"
#include "portrait/camera.hpp"
#include "portrait/image.hpp"
#include "portrait/motion.hpp"

namespace portrait {

struct FrameRecord {
    std::string image_file;
    Camera camera;
    LandmarkSet landmarks;
    AudioFeatureFrame audio;
    BlinkState blink;
    Image image;
};

struct DatasetManifest {
    std::string root;
    int frame_count = 0;
    float fps = 25.0f;
    std::array<float, 3> background{0, 0, 0};
    std::array<float, 3> bounds_min{0, 0, 0};
    std::array<float, 3> bounds_max{1, 1, 1};
    SceneMap map;            // world -> unit cube, identity before normalization
    bool normalized = false;
    std::vector<FrameRecord> frames;

    // pixel rects (x, y, w, h); zero-sized when the dataset does not
    // provide them
    std::array<int, 4> mouth_rect{0, 0, 0, 0};
    std::array<int, 4> eye_rect{0, 0, 0, 0};
};

// Loads and validates manifest.json, frames/, cameras.json, landmarks.csv,
// audio_features.csv and au.csv. All-or-nothing; every violation names the
// file, frame and rule.
DatasetManifest load_dataset(const std::string& root);

// Standalone audio feature CSV (header f0..f{D-1}), one row per frame.
std::vector<AudioFeatureFrame> load_audio_csv(const std::string& path);

// Affine map taking the scene bounds to [0.05, 0.95]^3, applied to camera
// translations and landmarks; the map is stored for inverse transforms.
void normalize_scene(DatasetManifest& manifest);

struct SyntheticSceneSpec {
    std::uint32_t seed = 1;
    int frame_count = 60;
    int image_size = 64;
    float fps = 25.0f;
    float sphere_radius = 0.3f;        // world units, head centered at origin
    float mouth_amplitude = 0.03f;     // bulge radius gain per unit drive
    float blink_amplitude = 1.0f;      // 0 disables blinking entirely
    int audio_width = 29;
};

// Audio-drive scalar and eye openness for frame t; shared with tests.
float synthetic_drive_signal(const SyntheticSceneSpec& spec, int t);
float synthetic_openness(const SyntheticSceneSpec& spec, int t);

// Writes a complete dataset (analytic ray-traced deforming sphere) under
// out_root. Deterministic per seed; shares no code with the NeRF renderer.
void generate_synthetic(const SyntheticSceneSpec& spec, const std::string& out_root);

}  // namespace portrait
