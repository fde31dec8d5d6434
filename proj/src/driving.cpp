#include "omcavity/driving.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace omcav {

using json = nlohmann::json;

std::vector<std::string> validate_params(const ProtocolParams& p) {
    if (p.k < 0.0)
        throw ConfigError("coupling k must be non-negative, got " + std::to_string(p.k));
    if (p.eta < 0.0)
        throw ConfigError("drive strength eta must be non-negative, got " +
                          std::to_string(p.eta));
    if (p.N < 1)
        throw ConfigError("period count N must be at least 1, got " + std::to_string(p.N));

    std::vector<std::string> warnings;
    if (p.k > 0.05)
        warnings.push_back("k = " + std::to_string(p.k) +
                           " strains the perturbative regime (expected k <~ 0.05)");
    if (p.k == 0.0)
        warnings.push_back("k = 0: optomechanical coupling is off, evolution is drive-only");
    if (p.eta == 0.0) warnings.push_back("eta = 0: drive is off, dynamics are coupling-only");
    if (p.detuning == Detuning::Two && p.k * p.eta > 1.0 / 3.0 + 1e-12)
        warnings.push_back("k*eta = " + std::to_string(p.k * p.eta) +
                           " exceeds 1/3; higher-order terms may dominate the cubic protocol");
    return warnings;
}

double PhaseSchedule::phase_at(double t) const {
    if (kind == ScheduleKind::Step) {
        int s = static_cast<int>(std::floor(t / kPeriod));
        s = std::max(0, std::min(s, N - 1));
        return phases[static_cast<size_t>(s)];
    }
    double ramp = (2.0 * kPi / N + correction) * (t / kPeriod);
    /* amplitudes were solved for the bare 2π/N ramp; rescale so the sine
     * series keeps matching the corrected staircase slope */
    double scale = 1.0 + N * correction / (2.0 * kPi);
    double wiggle = 0.0;
    for (size_t l = 0; l < amplitudes.size(); ++l)
        wiggle += amplitudes[l] * std::sin((static_cast<double>(l) + 1.0) * t);
    return ramp + scale * wiggle;
}

double PhaseSchedule::base_phase_at(double t) const {
    if (kind == ScheduleKind::Step) {
        int s = static_cast<int>(std::floor(t / kPeriod));
        s = std::max(0, std::min(s, N - 1));
        return phases[static_cast<size_t>(s)] - correction * s;
    }
    double ramp = (2.0 * kPi / N) * (t / kPeriod);
    double wiggle = 0.0;
    for (size_t l = 0; l < amplitudes.size(); ++l)
        wiggle += amplitudes[l] * std::sin((static_cast<double>(l) + 1.0) * t);
    return ramp + wiggle;
}

namespace {

void require_cancellable(int N) {
    if (N < 3)
        throw ConfigError("schedule needs N >= 3 (with N = " + std::to_string(N) +
                          " the phase sums that cancel unwanted terms cannot all vanish)");
}

}  // namespace

PhaseSchedule schedule_squeeze(int N) {
    require_cancellable(N);
    PhaseSchedule s;
    s.kind = ScheduleKind::Step;
    s.N = N;
    s.correction = 0.0;
    s.phases.resize(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j) s.phases[static_cast<size_t>(j)] = 2.0 * kPi * j / N;
    return s;
}

PhaseSchedule schedule_cubic(int N, double k, double eta) {
    require_cancellable(N);
    if (!(k > 0.0)) throw ConfigError("schedule_cubic requires k > 0");
    if (eta < 0.0) throw ConfigError("schedule_cubic requires eta >= 0");
    PhaseSchedule s;
    s.kind = ScheduleKind::Step;
    s.N = N;
    s.correction = (4.0 * kPi / 3.0) * (k * eta) * (k * eta);
    s.phases.resize(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j)
        s.phases[static_cast<size_t>(j)] = (2.0 * kPi / N + s.correction) * j;
    return s;
}

PhaseSchedule schedule_continuous(int N, int d) {
    require_cancellable(N);
    if (d < 0) throw ConfigError("smoothing order d must be non-negative");
    if (d > 6) throw ConfigError("smoothing order d > 6 is not supported");
    PhaseSchedule s;
    s.kind = ScheduleKind::Continuous;
    s.N = N;
    s.correction = 0.0;
    if (d > 0) {
        /* Tangency at the step centres t_j = (2j+1)π: the ramp+series must
         * have vanishing odd derivatives there up to order 2d−1.  With
         * sin(l t_j) ≡ 0 and cos(l t_j) = (−1)^l this gives, for
         * m = 1..d:  Σ_l (−1)^l l^{2m−1} A_l = −(2π/N)/(2π) δ_{m,1}. */
        Eigen::MatrixXd M(d, d);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
        rhs(0) = -1.0 / N;
        for (int m = 1; m <= d; ++m)
            for (int l = 1; l <= d; ++l)
                M(m - 1, l - 1) = ((l % 2 == 0) ? 1.0 : -1.0) *
                                  std::pow(static_cast<double>(l), 2 * m - 1);
        Eigen::VectorXd A = M.fullPivLu().solve(rhs);
        s.amplitudes.assign(A.data(), A.data() + d);
    }
    return s;
}

PhaseSchedule with_correction(PhaseSchedule schedule, double k, double eta) {
    if (schedule.kind != ScheduleKind::Continuous)
        throw ConfigError("with_correction applies to continuous schedules; cubic step "
                          "schedules already carry their correction");
    schedule.correction = (4.0 * kPi / 3.0) * (k * eta) * (k * eta);
    return schedule;
}

std::string schedule_to_json(const PhaseSchedule& s) {
    json j;
    j["kind"] = s.kind == ScheduleKind::Step ? "step" : "continuous";
    j["N"] = s.N;
    j["correction"] = s.correction;
    if (s.kind == ScheduleKind::Step)
        j["phases"] = s.phases;
    else
        j["amplitudes"] = s.amplitudes;
    return j.dump(2);
}

PhaseSchedule schedule_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("schedule JSON parse error: ") + e.what());
    }
    PhaseSchedule s;
    try {
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "step")
            s.kind = ScheduleKind::Step;
        else if (kind == "continuous")
            s.kind = ScheduleKind::Continuous;
        else
            throw ConfigError("unknown schedule kind '" + kind + "'");
        s.N = j.at("N").get<int>();
        s.correction = j.value("correction", 0.0);
        if (s.kind == ScheduleKind::Step) {
            s.phases = j.at("phases").get<std::vector<double>>();
            if (static_cast<int>(s.phases.size()) != s.N)
                throw ConfigError("schedule phases length does not match N");
        } else {
            s.amplitudes = j.value("amplitudes", std::vector<double>{});
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("schedule JSON structure error: ") + e.what());
    }
    return s;
}

DriveEnvelope::DriveEnvelope(const ProtocolParams& params, const PhaseSchedule& schedule)
    : params_(params), schedule_(schedule) {
    if (params_.N != schedule_.N)
        throw ConfigError("params.N and schedule.N disagree (" + std::to_string(params_.N) +
                          " vs " + std::to_string(schedule_.N) + ")");
    if (schedule_.kind == ScheduleKind::Continuous) build_table();
}

cd DriveEnvelope::u(double t) const {
    double m = params_.detuning == Detuning::One ? 1.0 : 2.0;
    double phi = schedule_.phase_at(t);
    return 2.0 * params_.eta * std::cos(m * t) * std::exp(cd(0.0, phi));
}

cd DriveEnvelope::f(double t) const {
    double t_total = params_.total_time();
    if (t < -1e-9 || t > t_total + 1e-9)
        throw ConfigError("envelope time t=" + std::to_string(t) +
                          " outside protocol window [0, " + std::to_string(t_total) + "]");
    t = std::min(std::max(t, 0.0), t_total);
    if (schedule_.kind == ScheduleKind::Step) {
        double phi = schedule_.phase_at(t);
        cd phase = std::exp(cd(0.0, phi));
        if (params_.detuning == Detuning::One) return 2.0 * params_.eta * std::sin(t) * phase;
        return params_.eta * std::sin(2.0 * t) * phase;
    }
    if (t <= 0.0) return cd(0.0, 0.0);
    double t_max = anchor_dt_ * static_cast<double>(anchors_.size() - 1);
    if (t > t_max + 1e-9)
        throw NumericalError("envelope queried beyond tabulated range");
    double pos = std::min(t, t_max) / anchor_dt_;
    auto i = static_cast<size_t>(std::floor(pos));
    if (i >= anchors_.size() - 1) i = anchors_.size() - 2;
    double theta = pos - static_cast<double>(i);
    /* cubic Hermite between anchors, slopes are the exact integrand u */
    double t0 = anchor_dt_ * static_cast<double>(i);
    double t1 = t0 + anchor_dt_;
    cd p0 = anchors_[i], p1 = anchors_[i + 1];
    cd m0 = u(t0) * anchor_dt_, m1 = u(t1) * anchor_dt_;
    double h00 = (1.0 + 2.0 * theta) * (1.0 - theta) * (1.0 - theta);
    double h10 = theta * (1.0 - theta) * (1.0 - theta);
    double h01 = theta * theta * (3.0 - 2.0 * theta);
    double h11 = theta * theta * (theta - 1.0);
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1;
}

void DriveEnvelope::build_table() {
    const int per_period = 2048;
    anchor_dt_ = kPeriod / per_period;
    size_t count = static_cast<size_t>(per_period) * static_cast<size_t>(params_.N) + 1;
    anchors_.resize(count);
    anchors_[0] = cd(0.0, 0.0);
    /* composite Simpson over each anchor interval (4 panels) */
    for (size_t i = 1; i < count; ++i) {
        double a = anchor_dt_ * static_cast<double>(i - 1);
        cd acc(0.0, 0.0);
        const int panels = 4;
        double h = anchor_dt_ / panels;
        for (int p = 0; p < panels; ++p) {
            double x0 = a + p * h;
            acc += (h / 6.0) * (u(x0) + 4.0 * u(x0 + 0.5 * h) + u(x0 + h));
        }
        anchors_[i] = anchors_[i - 1] + acc;
    }
}

cd envelope_f(double t, const ProtocolParams& params, const PhaseSchedule& schedule) {
    return DriveEnvelope(params, schedule).f(t);
}

namespace {

cd simpson(const std::function<cd(double)>& fn, double a, double b, cd fa, cd fm, cd fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

cd adaptive_step(const std::function<cd(double)>& fn, double a, double b, cd fa, cd fm,
                 cd fb, cd whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    cd flm = fn(0.5 * (a + m));
    cd frm = fn(0.5 * (m + b));
    cd left = simpson(fn, a, m, fa, flm, fm);
    cd right = simpson(fn, m, b, fm, frm, fb);
    cd delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_step(fn, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_step(fn, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

cd integrate_adaptive(const std::function<cd(double)>& fn, double a, double b, double tol,
                      int max_depth) {
    if (a == b) return cd(0.0, 0.0);
    cd fa = fn(a), fb = fn(b), fm = fn(0.5 * (a + b));
    cd whole = simpson(fn, a, b, fa, fm, fb);
    return adaptive_step(fn, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace omcav
