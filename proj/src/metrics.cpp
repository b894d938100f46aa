#include "dfip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dfip/error.hpp"

namespace dfip {
namespace {

void check_inputs(const Volume& pred, const Volume& gt, const Volume& mask) {
    if (pred.dims() != gt.dims() || pred.dims() != mask.dims())
        throw ShapeError("metric inputs differ in dims: pred " + dims_str(pred.dims()) + ", gt " + dims_str(gt.dims()) +
                         ", mask " + dims_str(mask.dims()));
    if (!any_nonzero(mask.voxels())) throw DomainError("metric mask is empty");
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

// Truncated, renormalized separable Gaussian filtering of an H x W plane.
class PlaneFilter {
public:
    PlaneFilter(int window, double sigma) : half_(window / 2), taps_(static_cast<std::size_t>(window)) {
        for (int i = -half_; i <= half_; ++i)
            taps_[static_cast<std::size_t>(i + half_)] = std::exp(-0.5 * i * i / (sigma * sigma));
    }

    std::vector<double> apply(const std::vector<double>& src, std::int64_t h, std::int64_t w) const {
        std::vector<double> tmp(src.size()), out(src.size());
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) tmp[static_cast<std::size_t>(y * w + x)] = pass(src, y * w, x, w, 1);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) out[static_cast<std::size_t>(y * w + x)] = pass(tmp, x, y, h, w);
        return out;
    }

private:
    double pass(const std::vector<double>& src, std::int64_t base, std::int64_t i, std::int64_t len,
                std::int64_t stride) const {
        double acc = 0.0, mass = 0.0;
        for (std::int64_t j = std::max<std::int64_t>(0, i - half_); j <= std::min<std::int64_t>(len - 1, i + half_); ++j) {
            const double wgt = taps_[static_cast<std::size_t>(j - i + half_)];
            acc += wgt * src[static_cast<std::size_t>(base + j * stride)];
            mass += wgt;
        }
        return acc / mass;
    }

    int half_;
    std::vector<double> taps_;
};

struct Box {
    std::int64_t z0, z1, y0, y1, x0, x1; // inclusive
};

Box mask_bounds(const Volume& mask) {
    const Dims d = mask.dims();
    Box b{d.depth, -1, d.height, -1, d.width, -1};
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t y = 0; y < d.height; ++y)
            for (std::int64_t x = 0; x < d.width; ++x)
                if (mask.at(z, y, x) != 0.0f) {
                    b.z0 = std::min(b.z0, z);
                    b.z1 = std::max(b.z1, z);
                    b.y0 = std::min(b.y0, y);
                    b.y1 = std::max(b.y1, y);
                    b.x0 = std::min(b.x0, x);
                    b.x1 = std::max(b.x1, x);
                }
    return b;
}

Volume crop(const Volume& v, const Box& b) {
    Volume out(Dims{b.z1 - b.z0 + 1, b.y1 - b.y0 + 1, b.x1 - b.x0 + 1});
    for (std::int64_t z = b.z0; z <= b.z1; ++z)
        for (std::int64_t y = b.y0; y <= b.y1; ++y)
            for (std::int64_t x = b.x0; x <= b.x1; ++x) out.at(z - b.z0, y - b.y0, x - b.x0) = v.at(z, y, x);
    return out;
}

} // namespace

double masked_mse(const Volume& pred, const Volume& gt, const Volume& mask) {
    check_inputs(pred, gt, mask);
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        const double dlt = static_cast<double>(pred[i]) - gt[i];
        acc += dlt * dlt;
        ++count;
    }
    return acc / static_cast<double>(count);
}

double masked_psnr(const Volume& pred, const Volume& gt, const Volume& mask, double data_range) {
    if (!(data_range > 0.0)) throw DomainError("PSNR data range must be positive");
    const double mse = masked_mse(pred, gt, mask);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double masked_ssim(const Volume& pred, const Volume& gt, const Volume& mask, const SsimOptions& o) {
    check_inputs(pred, gt, mask);
    if (o.window < 1 || o.window % 2 == 0) throw ConfigError("SSIM window must be a positive odd number");
    if (!(o.sigma > 0.0) || !(o.data_range > 0.0)) throw ConfigError("SSIM sigma and data range must be positive");
    if (o.bounding_box) {
        const Box b = mask_bounds(mask);
        SsimOptions inner = o;
        inner.bounding_box = false;
        return masked_ssim(crop(pred, b), crop(gt, b), Volume(Dims{b.z1 - b.z0 + 1, b.y1 - b.y0 + 1, b.x1 - b.x0 + 1}, 1.0f),
                           inner);
    }

    const double c1 = std::pow(0.01 * o.data_range, 2), c2 = std::pow(0.03 * o.data_range, 2);
    const PlaneFilter filter(o.window, o.sigma);
    const Dims d = pred.dims();
    const auto plane = static_cast<std::size_t>(d.slice_size());
    double total = 0.0;
    std::size_t count = 0;
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::int64_t z = 0; z < d.depth; ++z) {
        const auto m = mask.slice(z);
        if (!any_nonzero(m)) continue;
        const auto a = pred.slice(z), b = gt.slice(z);
        for (std::size_t i = 0; i < plane; ++i) {
            x[i] = a[i];
            y[i] = b[i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter.apply(x, d.height, d.width), my = filter.apply(y, d.height, d.width);
        const auto sxx = filter.apply(xx, d.height, d.width), syy = filter.apply(yy, d.height, d.width),
                   sxy = filter.apply(xy, d.height, d.width);
        for (std::size_t i = 0; i < plane; ++i) {
            if (m[i] == 0.0f) continue;
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
            total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

CaseMetrics evaluate_case(const std::string& case_id, const Volume& pred, const Volume& gt, const Volume& mask,
                          double data_range) {
    SsimOptions o;
    o.data_range = data_range;
    return CaseMetrics{case_id, masked_ssim(pred, gt, mask, o), masked_psnr(pred, gt, mask, data_range),
                       masked_mse(pred, gt, mask)};
}

MetricsReport make_report(std::vector<CaseMetrics> cases) {
    if (cases.empty()) throw DomainError("a report needs at least one case");
    MetricsReport r;
    r.cases = std::move(cases);
    auto stat = [&](double CaseMetrics::*field) {
        double s = 0.0;
        for (const auto& c : r.cases) s += c.*field;
        const double mean = s / static_cast<double>(r.cases.size());
        double v = 0.0;
        for (const auto& c : r.cases) v += (c.*field - mean) * (c.*field - mean);
        return MeanStd{mean, std::sqrt(v / static_cast<double>(r.cases.size()))};
    };
    r.ssim = stat(&CaseMetrics::ssim);
    r.psnr = stat(&CaseMetrics::psnr);
    r.mse = stat(&CaseMetrics::mse);
    return r;
}

std::string format_mean_std(const MeanStd& v, int decimals) {
    return fixed(v.mean, decimals) + " [±" + fixed(v.std, decimals) + "]";
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "case_id,ssim,psnr,mse\n";
    for (const auto& c : cases)
        os << c.case_id << ',' << fixed(c.ssim, 6) << ',' << fixed(c.psnr, 6) << ',' << fixed(c.mse, 6) << '\n';
    os << "mean," << fixed(ssim.mean, 6) << ',' << fixed(psnr.mean, 6) << ',' << fixed(mse.mean, 6) << '\n';
    os << "std," << fixed(ssim.std, 6) << ',' << fixed(psnr.std, 6) << ',' << fixed(mse.std, 6) << '\n';
    return os.str();
}

std::string MetricsReport::to_table() const {
    std::size_t id_width = 7;
    for (const auto& c : cases) id_width = std::max(id_width, c.case_id.size());
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    std::ostringstream os;
    os << pad("case", id_width) << " | " << pad("SSIM", 18) << " | " << pad("PSNR", 18) << " | MSE\n";
    for (const auto& c : cases)
        os << pad(c.case_id, id_width) << " | " << pad(fixed(c.ssim, 4), 18) << " | " << pad(fixed(c.psnr, 4), 18)
           << " | " << fixed(c.mse, 4) << '\n';
    os << pad("Average", id_width) << " | " << format_mean_std(ssim) << " | " << format_mean_std(psnr) << " | "
       << format_mean_std(mse) << '\n';
    return os.str();
}

} // namespace dfip
