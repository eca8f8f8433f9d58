#include "portrait/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "portrait/errors.hpp"

namespace portrait {

float psnr(const Image& a, const Image& b, const std::array<int, 4>* rect) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("psnr on images of different sizes");
    int x0 = 0, y0 = 0, x1 = a.width, y1 = a.height;
    if (rect) {
        x0 = std::max(0, (*rect)[0]);
        y0 = std::max(0, (*rect)[1]);
        x1 = std::min(a.width, (*rect)[0] + (*rect)[2]);
        y1 = std::min(a.height, (*rect)[1] + (*rect)[3]);
        if (x0 >= x1 || y0 >= y1) throw DomainError("psnr: empty comparison rect");
    }
    double acc = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const float* pa = a.at(x, y);
            const float* pb = b.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double d = static_cast<double>(pa[c]) - static_cast<double>(pb[c]);
                acc += d * d;
            }
        }
    }
    const double mse = acc / (3.0 * (x1 - x0) * (y1 - y0));
    if (mse == 0.0) return std::numeric_limits<float>::infinity();
    return static_cast<float>(-10.0 * std::log10(mse));
}

float lmd(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& target) {
    if (pred.size() != target.size()) throw ShapeError("lmd: sequence length mismatch");
    if (pred.empty()) throw ShapeError("lmd: empty sequences");
    double acc = 0.0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        for (int k = 0; k < kLandmarkCount; ++k) {
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double d = static_cast<double>(pred[f].points[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)]) -
                                 static_cast<double>(target[f].points[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)]);
                d2 += d * d;
            }
            acc += std::sqrt(d2);
        }
    }
    return static_cast<float>(acc / (static_cast<double>(pred.size()) * kLandmarkCount));
}

namespace {

// JSON has no infinity; identical frames report the "+inf" sentinel string.
nlohmann::json psnr_json(float v) {
    if (std::isinf(v)) return "+inf";
    return v;
}

std::string psnr_csv(float v) {
    if (std::isinf(v)) return "+inf";
    return std::to_string(v);
}

}  // namespace

void write_report(const EvalReport& report, const std::string& json_path) {
    nlohmann::json j = {
        {"psnr_mean", psnr_json(report.psnr_mean)},
        {"psnr_mouth", psnr_json(report.psnr_mouth)},
        {"lmd", report.lmd_value},
        {"perceptual_mean", report.perceptual_mean},
        {"frame_count", report.frame_count},
        {"checkpoint", report.checkpoint},
        {"sync_confidence", nullptr},
        {"fid", nullptr},
    };
    j["per_frame_psnr"] = nlohmann::json::array();
    for (float v : report.per_frame_psnr) j["per_frame_psnr"].push_back(psnr_json(v));
    j["per_frame_lmd"] = report.per_frame_lmd;
    if (report.sync_confidence) j["sync_confidence"] = *report.sync_confidence;
    if (report.fid) j["fid"] = *report.fid;
    std::ofstream out(json_path);
    if (!out) throw IoError(json_path + ": cannot open for writing");
    out << j.dump(2) << "\n";

    std::filesystem::path csv_path(json_path);
    csv_path.replace_extension(".csv");
    std::ofstream csv(csv_path);
    csv << "psnr_mean,psnr_mouth,lmd,perceptual_mean,frame_count,checkpoint\n";
    csv << psnr_csv(report.psnr_mean) << "," << psnr_csv(report.psnr_mouth) << ","
        << report.lmd_value << "," << report.perceptual_mean << "," << report.frame_count << ","
        << report.checkpoint << "\n";
    if (!out || !csv) throw IoError(json_path + ": write failure");
}

}  // namespace portrait
