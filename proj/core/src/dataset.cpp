#include "portrait/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "portrait/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace portrait {

namespace {

std::vector<std::vector<float>> read_csv(const std::string& path, const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw DatasetError(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw DatasetError(path + ": empty file");
    if (line != expected_header)
        throw DatasetError(path + ": header mismatch, expected '" + expected_header + "'");
    std::vector<std::vector<float>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<float> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stof(cell));
            } catch (const std::exception&) {
                throw DatasetError(path + ": line " + std::to_string(lineno) + ": bad number '" +
                                   cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string csv_header(const std::string& stem, int width) {
    std::string h;
    for (int i = 0; i < width; ++i) {
        if (i) h += ",";
        h += stem + std::to_string(i);
    }
    return h;
}

std::string landmark_header() {
    std::string h;
    for (int i = 0; i < kLandmarkCount; ++i) {
        if (i) h += ",";
        h += "x" + std::to_string(i) + ",y" + std::to_string(i) + ",z" + std::to_string(i);
    }
    return h;
}

std::string frame_file_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", t);
    return buf;
}

}  // namespace

std::vector<AudioFeatureFrame> load_audio_csv(const std::string& path) {
    std::ifstream head(path);
    if (!head) throw DatasetError(path + ": cannot open");
    std::string header_line;
    std::getline(head, header_line);
    head.close();
    const int width = 1 + static_cast<int>(std::count(header_line.begin(), header_line.end(), ','));
    const auto rows = read_csv(path, csv_header("f", width));
    std::vector<AudioFeatureFrame> out;
    out.reserve(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (static_cast<int>(rows[t].size()) != width)
            throw DatasetError(path + ": frame " + std::to_string(t) + ": inconsistent feature width");
        for (float v : rows[t])
            if (!std::isfinite(v))
                throw DatasetError(path + ": frame " + std::to_string(t) + ": non-finite feature");
        out.push_back({rows[t], static_cast<int>(t)});
    }
    return out;
}

DatasetManifest load_dataset(const std::string& root) {
    const fs::path rootp(root);
    const fs::path manifest_path = rootp / "manifest.json";
    std::ifstream min(manifest_path);
    if (!min) throw DatasetError(manifest_path.string() + ": cannot open");
    json m;
    try {
        min >> m;
    } catch (const std::exception& e) {
        throw DatasetError(manifest_path.string() + ": parse failure: " + e.what());
    }

    DatasetManifest out;
    out.root = root;
    try {
        out.frame_count = m.at("frame_count").get<int>();
        out.fps = m.at("fps").get<float>();
        for (int i = 0; i < 3; ++i) {
            out.background[static_cast<std::size_t>(i)] = m.at("background").at(static_cast<std::size_t>(i)).get<float>();
            out.bounds_min[static_cast<std::size_t>(i)] = m.at("bounds_min").at(static_cast<std::size_t>(i)).get<float>();
            out.bounds_max[static_cast<std::size_t>(i)] = m.at("bounds_max").at(static_cast<std::size_t>(i)).get<float>();
        }
    } catch (const json::exception& e) {
        throw DatasetError(manifest_path.string() + ": missing or malformed key: " + e.what());
    }
    if (m.count("mouth_rect"))
        for (int i = 0; i < 4; ++i) out.mouth_rect[static_cast<std::size_t>(i)] = m["mouth_rect"][static_cast<std::size_t>(i)].get<int>();
    if (m.count("eye_rect"))
        for (int i = 0; i < 4; ++i) out.eye_rect[static_cast<std::size_t>(i)] = m["eye_rect"][static_cast<std::size_t>(i)].get<int>();
    if (out.frame_count <= 0) throw DatasetError(manifest_path.string() + ": frame_count must be positive");

    // cameras
    const fs::path campath = rootp / "cameras.json";
    std::ifstream cin(campath);
    if (!cin) throw DatasetError(campath.string() + ": cannot open");
    json cams;
    try {
        cin >> cams;
    } catch (const std::exception& e) {
        throw DatasetError(campath.string() + ": parse failure: " + e.what());
    }
    if (static_cast<int>(cams.size()) != out.frame_count)
        throw DatasetError(campath.string() + ": camera count " + std::to_string(cams.size()) +
                           " != frame_count " + std::to_string(out.frame_count));

    const auto lms = read_csv((rootp / "landmarks.csv").string(), landmark_header());
    if (static_cast<int>(lms.size()) != out.frame_count)
        throw DatasetError((rootp / "landmarks.csv").string() + ": row count " +
                           std::to_string(lms.size()) + " != frame_count");

    std::ifstream ain((rootp / "audio_features.csv").string());
    if (!ain) throw DatasetError((rootp / "audio_features.csv").string() + ": cannot open");
    std::string audio_header_line;
    std::getline(ain, audio_header_line);
    int audio_width = 1 + static_cast<int>(std::count(audio_header_line.begin(), audio_header_line.end(), ','));
    ain.close();
    const auto audio = read_csv((rootp / "audio_features.csv").string(), csv_header("f", audio_width));
    if (static_cast<int>(audio.size()) != out.frame_count)
        throw DatasetError((rootp / "audio_features.csv").string() + ": row count " +
                           std::to_string(audio.size()) + " != frame_count");

    const auto au = read_csv((rootp / "au.csv").string(), "frame,au45_intensity");
    if (static_cast<int>(au.size()) != out.frame_count)
        throw DatasetError((rootp / "au.csv").string() + ": row count " + std::to_string(au.size()) +
                           " != frame_count");

    out.frames.resize(static_cast<std::size_t>(out.frame_count));
    for (int t = 0; t < out.frame_count; ++t) {
        FrameRecord& fr = out.frames[static_cast<std::size_t>(t)];
        // camera
        const json& c = cams[static_cast<std::size_t>(t)];
        try {
            fr.camera.fx = c.at("fx").get<float>();
            fr.camera.fy = c.at("fy").get<float>();
            fr.camera.cx = c.at("cx").get<float>();
            fr.camera.cy = c.at("cy").get<float>();
            for (int i = 0; i < 9; ++i) fr.camera.rotation[static_cast<std::size_t>(i)] = c.at("rotation").at(static_cast<std::size_t>(i)).get<float>();
            for (int i = 0; i < 3; ++i) fr.camera.translation[static_cast<std::size_t>(i)] = c.at("translation").at(static_cast<std::size_t>(i)).get<float>();
        } catch (const json::exception& e) {
            throw DatasetError(campath.string() + ": frame " + std::to_string(t) +
                               ": malformed camera: " + e.what());
        }

        // image
        fr.image_file = (rootp / "frames" / frame_file_name(t)).string();
        if (!fs::exists(fr.image_file))
            throw DatasetError(fr.image_file + ": referenced frame image does not exist");
        fr.image = read_png(fr.image_file);
        fr.camera.width = fr.image.width;
        fr.camera.height = fr.image.height;
        try {
            fr.camera.validate();
        } catch (const std::exception& e) {
            throw DatasetError(campath.string() + ": frame " + std::to_string(t) + ": " + e.what());
        }

        // landmarks, with bounds rule
        const auto& row = lms[static_cast<std::size_t>(t)];
        if (row.size() != static_cast<std::size_t>(3 * kLandmarkCount))
            throw DatasetError((rootp / "landmarks.csv").string() + ": frame " + std::to_string(t) +
                               ": expected 204 columns, got " + std::to_string(row.size()));
        fr.landmarks.frame_index = t;
        for (int k = 0; k < kLandmarkCount; ++k) {
            for (int a = 0; a < 3; ++a) {
                const float v = row[static_cast<std::size_t>(3 * k + a)];
                if (!std::isfinite(v))
                    throw DatasetError((rootp / "landmarks.csv").string() + ": frame " +
                                       std::to_string(t) + ": non-finite landmark " + std::to_string(k));
                if (v < out.bounds_min[static_cast<std::size_t>(a)] - 1e-6f ||
                    v > out.bounds_max[static_cast<std::size_t>(a)] + 1e-6f)
                    throw DatasetError((rootp / "landmarks.csv").string() + ": frame " +
                                       std::to_string(t) + ": landmark " + std::to_string(k) +
                                       " outside scene bounds");
                fr.landmarks.points[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)] = v;
            }
        }

        // audio
        fr.audio.frame_index = t;
        fr.audio.features = audio[static_cast<std::size_t>(t)];
        if (static_cast<int>(fr.audio.features.size()) != audio_width)
            throw DatasetError((rootp / "audio_features.csv").string() + ": frame " +
                               std::to_string(t) + ": inconsistent feature width");
        for (float v : fr.audio.features)
            if (!std::isfinite(v))
                throw DatasetError((rootp / "audio_features.csv").string() + ": frame " +
                                   std::to_string(t) + ": non-finite feature");

        // AU
        const auto& aurow = au[static_cast<std::size_t>(t)];
        if (aurow.size() != 2)
            throw DatasetError((rootp / "au.csv").string() + ": frame " + std::to_string(t) +
                               ": expected 2 columns");
        const float intensity = aurow[1];
        if (!(intensity >= 0.0f && intensity <= 5.0f))
            throw DatasetError((rootp / "au.csv").string() + ": frame " + std::to_string(t) +
                               ": au45_intensity " + std::to_string(intensity) + " outside [0,5]");
        fr.blink.au_intensity = intensity;
        fr.blink.frame_index = t;
    }

    // derived eye openness from the landmark EAR, normalized by the dataset's
    // 95th-percentile EAR
    std::vector<float> ears(static_cast<std::size_t>(out.frame_count));
    for (int t = 0; t < out.frame_count; ++t) {
        const EyeLandmarks eyes = extract_eye_landmarks(out.frames[static_cast<std::size_t>(t)].landmarks);
        ears[static_cast<std::size_t>(t)] =
            0.5f * (eye_aspect_ratio(eyes.left) + eye_aspect_ratio(eyes.right));
    }
    const float ear_open = ear_open_reference(ears);
    for (int t = 0; t < out.frame_count; ++t)
        out.frames[static_cast<std::size_t>(t)].blink.eye_openness =
            openness_from_ear(ears[static_cast<std::size_t>(t)], ear_open);

    return out;
}

void normalize_scene(DatasetManifest& manifest) {
    SceneMap map;
    for (int a = 0; a < 3; ++a) {
        const float extent = manifest.bounds_max[static_cast<std::size_t>(a)] -
                             manifest.bounds_min[static_cast<std::size_t>(a)];
        if (!(extent > 1e-9f))
            throw DatasetError("degenerate scene bounds on axis " + std::to_string(a));
        map.scale[static_cast<std::size_t>(a)] = 0.9f / extent;
        map.offset[static_cast<std::size_t>(a)] =
            0.05f - manifest.bounds_min[static_cast<std::size_t>(a)] * map.scale[static_cast<std::size_t>(a)];
    }
    for (FrameRecord& fr : manifest.frames) {
        fr.camera.translation = map.to_unit(fr.camera.translation);
        for (auto& p : fr.landmarks.points) p = map.to_unit(p);
    }
    manifest.bounds_min = {0.05f, 0.05f, 0.05f};
    manifest.bounds_max = {0.95f, 0.95f, 0.95f};
    // compose with any existing map so to_world still reaches original units
    SceneMap composed;
    for (int a = 0; a < 3; ++a) {
        composed.scale[static_cast<std::size_t>(a)] =
            map.scale[static_cast<std::size_t>(a)] * manifest.map.scale[static_cast<std::size_t>(a)];
        composed.offset[static_cast<std::size_t>(a)] =
            map.scale[static_cast<std::size_t>(a)] * manifest.map.offset[static_cast<std::size_t>(a)] +
            map.offset[static_cast<std::size_t>(a)];
    }
    manifest.map = composed;
    manifest.normalized = true;
}

float synthetic_drive_signal(const SyntheticSceneSpec& spec, int t) {
    (void)spec;
    return 0.5f + 0.5f * std::sin(2.0f * 3.14159265358979f * static_cast<float>(t) / 17.0f);
}

float synthetic_openness(const SyntheticSceneSpec& spec, int t) {
    const int p = t % 23;
    float depth = 0.0f;
    if (p < 5) depth = 1.0f - std::abs(static_cast<float>(p) - 2.0f) / 2.5f;
    return std::clamp(1.0f - spec.blink_amplitude * depth, 0.0f, 1.0f);
}

namespace {

struct Vec3 {
    float x, y, z;
};
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(float s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
float dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalize(Vec3 a) {
    const float n = std::sqrt(dot(a, a));
    return {a.x / n, a.y / n, a.z / n};
}

// nearest positive intersection of |o + t d - c| = r, or -1
float sphere_hit(Vec3 o, Vec3 d, Vec3 c, float r) {
    const Vec3 oc = o - c;
    const float b = dot(oc, d);
    const float q = dot(oc, oc) - r * r;
    const float disc = b * b - q;
    if (disc < 0.0f) return -1.0f;
    const float s = std::sqrt(disc);
    const float t0 = -b - s;
    if (t0 > 1e-4f) return t0;
    const float t1 = -b + s;
    return t1 > 1e-4f ? t1 : -1.0f;
}

}  // namespace

void generate_synthetic(const SyntheticSceneSpec& spec, const std::string& out_root) {
    const fs::path rootp(out_root);
    fs::create_directories(rootp / "frames");

    const float r = spec.sphere_radius;
    const int S = spec.image_size;
    const float fx = 1.25f * static_cast<float>(S);
    const float cx = 0.5f * static_cast<float>(S);
    const Vec3 cam_pos{0.0f, 0.0f, 1.1f};
    const Vec3 light = normalize({0.3f, 0.5f, 0.8f});

    const Vec3 mouth_center{0.0f, -0.45f * r, 0.82f * r};
    const float bulge_base = 0.3f * r;

    const std::array<float, 3> background{0.10f, 0.10f, 0.12f};

    std::mt19937 noise_rng(spec.seed);
    std::uniform_real_distribution<float> noise(-0.05f, 0.05f);

    std::ofstream lm_csv(rootp / "landmarks.csv");
    std::ofstream audio_csv(rootp / "audio_features.csv");
    std::ofstream au_csv(rootp / "au.csv");
    lm_csv << landmark_header() << "\n";
    audio_csv << csv_header("f", spec.audio_width) << "\n";
    au_csv << "frame,au45_intensity\n";

    int mouth_min_x = S, mouth_min_y = S, mouth_max_x = -1, mouth_max_y = -1;
    int eye_min_x = S, eye_min_y = S, eye_max_x = -1, eye_max_y = -1;

    json cameras = json::array();

    for (int t = 0; t < spec.frame_count; ++t) {
        const float drive = synthetic_drive_signal(spec, t);
        const float open = synthetic_openness(spec, t);
        const float bulge_r = bulge_base + spec.mouth_amplitude * drive;

        Image img(S, S);
        for (int py = 0; py < S; ++py) {
            for (int px = 0; px < S; ++px) {
                const Vec3 dir = normalize({(static_cast<float>(px) + 0.5f - cx) / fx,
                                            -((static_cast<float>(py) + 0.5f - cx) / fx), -1.0f});
                const float t_head = sphere_hit(cam_pos, dir, {0, 0, 0}, r);
                const float t_mouth = sphere_hit(cam_pos, dir, mouth_center, bulge_r);

                std::array<float, 3> color = background;
                bool is_mouth = false, is_eye = false;
                float t_hit = -1.0f;
                Vec3 center{0, 0, 0};
                float radius = r;
                if (t_mouth > 0.0f && (t_head < 0.0f || t_mouth < t_head)) {
                    t_hit = t_mouth;
                    center = mouth_center;
                    radius = bulge_r;
                    is_mouth = true;
                } else if (t_head > 0.0f) {
                    t_hit = t_head;
                }
                if (t_hit > 0.0f) {
                    const Vec3 p = cam_pos + t_hit * dir;
                    const Vec3 n = normalize(p - center);
                    const float lambert = 0.35f + 0.65f * std::max(0.0f, dot(n, light));
                    std::array<float, 3> albedo{0.80f, 0.62f, 0.50f};  // skin
                    if (is_mouth) {
                        albedo = {0.72f, 0.20f, 0.20f};
                    } else if (p.y > 0.25f * r && p.y < 0.60f * r && p.z > 0.0f) {
                        is_eye = true;
                        const float f = 0.25f + 0.75f * open;
                        albedo = {0.85f * f, 0.85f * f, 0.90f * f};
                    }
                    for (int c = 0; c < 3; ++c) color[static_cast<std::size_t>(c)] = albedo[static_cast<std::size_t>(c)] * lambert;
                }
                float* dst = img.at(px, py);
                for (int c = 0; c < 3; ++c) dst[c] = color[static_cast<std::size_t>(c)];
                if (is_mouth) {
                    mouth_min_x = std::min(mouth_min_x, px);
                    mouth_max_x = std::max(mouth_max_x, px);
                    mouth_min_y = std::min(mouth_min_y, py);
                    mouth_max_y = std::max(mouth_max_y, py);
                }
                if (is_eye) {
                    eye_min_x = std::min(eye_min_x, px);
                    eye_max_x = std::max(eye_max_x, px);
                    eye_min_y = std::min(eye_min_y, py);
                    eye_max_y = std::max(eye_max_y, py);
                }
            }
        }
        write_png(img, (rootp / "frames" / frame_file_name(t)).string());

        // landmarks
        std::array<std::array<float, 3>, kLandmarkCount> lm{};
        for (int k = 0; k <= 16; ++k) {  // jaw
            const float ang = 3.14159265f * (static_cast<float>(k) / 16.0f - 0.5f);
            lm[static_cast<std::size_t>(k)] = {0.9f * r * std::sin(ang), -0.75f * r * std::cos(ang), 0.3f * r};
        }
        for (int k = 0; k < 5; ++k) {  // brows
            const float x = -0.45f * r + 0.075f * r * static_cast<float>(k);
            lm[static_cast<std::size_t>(17 + k)] = {x, 0.55f * r, 0.75f * r};
            lm[static_cast<std::size_t>(22 + k)] = {-x, 0.55f * r, 0.75f * r};
        }
        for (int k = 0; k < 4; ++k)  // nose bridge
            lm[static_cast<std::size_t>(27 + k)] = {0.0f, 0.3f * r - 0.1f * r * static_cast<float>(k), 0.95f * r};
        for (int k = 0; k < 5; ++k)  // under nose
            lm[static_cast<std::size_t>(31 + k)] = {-0.2f * r + 0.1f * r * static_cast<float>(k), -0.1f * r, 0.9f * r};
        // eyes: conventional 6-point hexagons whose vertical gap follows openness
        const float eye_w = 0.15f * r;
        const float gap = 0.1f * r * open;
        for (int side = 0; side < 2; ++side) {
            const float ex = (side == 0 ? -0.33f : 0.33f) * r;
            const Vec3 c{ex, 0.42f * r, 0.8f * r};
            const int base = side == 0 ? 36 : 42;
            lm[static_cast<std::size_t>(base + 0)] = {c.x - eye_w, c.y, c.z};
            lm[static_cast<std::size_t>(base + 1)] = {c.x - 0.5f * eye_w, c.y + gap, c.z};
            lm[static_cast<std::size_t>(base + 2)] = {c.x + 0.5f * eye_w, c.y + gap, c.z};
            lm[static_cast<std::size_t>(base + 3)] = {c.x + eye_w, c.y, c.z};
            lm[static_cast<std::size_t>(base + 4)] = {c.x + 0.5f * eye_w, c.y - gap, c.z};
            lm[static_cast<std::size_t>(base + 5)] = {c.x - 0.5f * eye_w, c.y - gap, c.z};
        }
        for (int k = 0; k < 20; ++k) {  // mouth ring on the bulge surface
            const float ang = 2.0f * 3.14159265f * static_cast<float>(k - 1) / 20.0f - 0.5f * 3.14159265f;
            lm[static_cast<std::size_t>(48 + k)] = {mouth_center.x + bulge_r * std::cos(ang),
                                                    mouth_center.y + bulge_r * std::sin(ang),
                                                    mouth_center.z};
        }
        for (int k = 0; k < kLandmarkCount; ++k) {
            if (k) lm_csv << ",";
            lm_csv << lm[static_cast<std::size_t>(k)][0] << "," << lm[static_cast<std::size_t>(k)][1]
                   << "," << lm[static_cast<std::size_t>(k)][2];
        }
        lm_csv << "\n";

        // audio features: drive scalar up front, harmonics, then seeded noise
        for (int i = 0; i < spec.audio_width; ++i) {
            if (i) audio_csv << ",";
            float v;
            if (i == 0) v = drive;
            else if (i == 1) v = std::sin(2.0f * 3.14159265f * static_cast<float>(t) / 8.0f) * 0.3f;
            else if (i == 2) v = std::cos(2.0f * 3.14159265f * static_cast<float>(t) / 11.0f) * 0.3f;
            else v = noise(noise_rng);
            audio_csv << v;
        }
        audio_csv << "\n";

        au_csv << t << "," << 5.0f * (1.0f - open) << "\n";

        cameras.push_back({{"fx", fx},
                           {"fy", fx},
                           {"cx", cx},
                           {"cy", cx},
                           {"rotation", {1, 0, 0, 0, 1, 0, 0, 0, 1}},
                           {"translation", {cam_pos.x, cam_pos.y, cam_pos.z}}});
    }

    if (mouth_max_x < 0) {  // bulge never visible; fall back to image center
        mouth_min_x = mouth_min_y = S / 4;
        mouth_max_x = mouth_max_y = 3 * S / 4;
    }
    if (eye_max_x < 0) {
        eye_min_x = eye_min_y = S / 4;
        eye_max_x = eye_max_y = 3 * S / 4;
    }

    json manifest = {
        {"frame_count", spec.frame_count},
        {"fps", spec.fps},
        {"background", {background[0], background[1], background[2]}},
        {"bounds_min", {-0.55, -0.55, -0.55}},
        {"bounds_max", {0.55, 0.55, 0.55}},
        {"mouth_rect", {mouth_min_x, mouth_min_y, mouth_max_x - mouth_min_x + 1, mouth_max_y - mouth_min_y + 1}},
        {"eye_rect", {eye_min_x, eye_min_y, eye_max_x - eye_min_x + 1, eye_max_y - eye_min_y + 1}},
        {"synthetic",
         {{"seed", spec.seed},
          {"mouth_amplitude", spec.mouth_amplitude},
          {"blink_amplitude", spec.blink_amplitude},
          {"sphere_radius", spec.sphere_radius}}},
    };

    std::ofstream mout(rootp / "manifest.json");
    mout << manifest.dump(2) << "\n";
    std::ofstream cout_(rootp / "cameras.json");
    cout_ << cameras.dump(2) << "\n";
    if (!lm_csv || !audio_csv || !au_csv || !mout || !cout_)
        throw IoError("write failure while generating synthetic dataset in " + out_root);
}

}  // namespace portrait
