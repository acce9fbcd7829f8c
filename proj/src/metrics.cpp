#include "ngc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace ngc::metrics {

Polarity polarity(const std::string& metric_name) {
    static const std::map<std::string, Polarity> kRegistry = {
        {"l1", Polarity::LowerBetter},
        {"angular_l1_deg", Polarity::LowerBetter},
        {"l2", Polarity::LowerBetter},
        {"error_rate", Polarity::LowerBetter},
        {"dispersion", Polarity::LowerBetter},
        {"accuracy", Polarity::HigherBetter},
        {"miou", Polarity::HigherBetter},
        {"pixels_improved_pct", Polarity::HigherBetter},
    };
    auto it = kRegistry.find(metric_name);
    if (it == kRegistry.end()) throw std::out_of_range("unregistered metric: " + metric_name);
    return it->second;
}

bool better(const std::string& metric_name, double a, double b) {
    return polarity(metric_name) == Polarity::LowerBetter ? a < b : a > b;
}

namespace {

void check_same_f32(const Tensor& a, const Tensor& b) {
    if (a.dtype != DType::F32 || b.dtype != DType::F32)
        throw TensorError("metric expects f32 tensors");
    if (a.shape != b.shape) throw TensorError("metric shape mismatch");
}

void check_same_u16(const Tensor& a, const Tensor& b) {
    if (a.dtype != DType::U16 || b.dtype != DType::U16)
        throw TensorError("metric expects label tensors");
    if (a.shape != b.shape) throw TensorError("metric shape mismatch");
}

// (nx, ny) -> unit 3-vector, clipping in-plane magnitude to <= 1.
void lift_unit3(double nx, double ny, double out[3]) {
    double s2 = nx * nx + ny * ny;
    if (s2 > 1.0) {
        double s = std::sqrt(s2);
        nx /= s;
        ny /= s;
        s2 = 1.0;
    }
    out[0] = nx;
    out[1] = ny;
    out[2] = std::sqrt(std::max(0.0, 1.0 - s2));
}

}  // namespace

double l1(const Tensor& pred, const Tensor& gt) {
    check_same_f32(pred, gt);
    double sum = 0.0;
    for (size_t i = 0; i < pred.f.size(); ++i)
        sum += std::abs(static_cast<double>(pred.f[i]) - static_cast<double>(gt.f[i]));
    return sum / static_cast<double>(pred.f.size());
}

double angular_l1_deg(const Tensor& pred, const Tensor& gt) {
    check_same_f32(pred, gt);
    if (pred.rank() < 1 || pred.shape.back() != 2)
        throw TensorError("angular metric expects 2-channel direction maps");
    const size_t n = pred.f.size() / 2;
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double a[3], b[3];
        lift_unit3(pred.f[i * 2], pred.f[i * 2 + 1], a);
        lift_unit3(gt.f[i * 2], gt.f[i * 2 + 1], b);
        double dot = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
        sum += std::acos(dot) * 180.0 / std::numbers::pi;
    }
    return sum / static_cast<double>(n);
}

double l2(const Tensor& pred, const Tensor& gt) {
    check_same_f32(pred, gt);
    double sum = 0.0;
    for (size_t i = 0; i < pred.f.size(); ++i) {
        double d = static_cast<double>(pred.f[i]) - static_cast<double>(gt.f[i]);
        sum += d * d;
    }
    return std::sqrt(sum);
}

double accuracy(const Tensor& pred, const Tensor& gt) {
    check_same_u16(pred, gt);
    size_t hits = 0;
    for (size_t i = 0; i < pred.u.size(); ++i) hits += pred.u[i] == gt.u[i];
    return static_cast<double>(hits) / static_cast<double>(pred.u.size());
}

double miou(const Tensor& pred, const Tensor& gt, int classes) {
    check_same_u16(pred, gt);
    if (classes < 2) throw std::invalid_argument("miou needs >= 2 classes");
    std::vector<size_t> inter(classes, 0), pred_n(classes, 0), gt_n(classes, 0);
    for (size_t i = 0; i < pred.u.size(); ++i) {
        int p = std::min<int>(pred.u[i], classes - 1);
        int g = std::min<int>(gt.u[i], classes - 1);
        ++pred_n[p];
        ++gt_n[g];
        if (p == g) ++inter[p];
    }
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        if (gt_n[c] == 0) continue;  // averaged over classes present in ground truth
        size_t uni = pred_n[c] + gt_n[c] - inter[c];
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni);
        ++present;
    }
    return present > 0 ? sum / present : 0.0;
}

double pixels_improved_pct(const NodeSpec& spec, const Tensor& new_pred, const Tensor& baseline,
                           const Tensor& gt) {
    size_t improved = 0, total = 0;
    if (spec.categorical) {
        check_same_u16(new_pred, gt);
        check_same_u16(baseline, gt);
        total = gt.u.size();
        for (size_t i = 0; i < total; ++i)
            improved += new_pred.u[i] == gt.u[i] && baseline.u[i] != gt.u[i];
    } else {
        check_same_f32(new_pred, gt);
        check_same_f32(baseline, gt);
        total = gt.f.size();
        for (size_t i = 0; i < total; ++i) {
            double en = std::abs(static_cast<double>(new_pred.f[i]) - gt.f[i]);
            double eb = std::abs(static_cast<double>(baseline.f[i]) - gt.f[i]);
            improved += en < eb;
        }
    }
    return 100.0 * static_cast<double>(improved) / static_cast<double>(total);
}

std::string selection_metric_name(const NodeSpec& spec) {
    if (spec.categorical) return "error_rate";
    if (spec.direction) return "angular_l1_deg";
    if (!spec.is_map) return "l2";
    return "l1";
}

double selection_metric(const NodeSpec& spec, const Tensor& pred, const Tensor& gt) {
    if (spec.categorical) return 1.0 - accuracy(pred, gt);
    if (spec.direction) return angular_l1_deg(pred, gt);
    if (!spec.is_map) return l2(pred, gt);
    return l1(pred, gt);
}

}  // namespace ngc::metrics
