#include "omcavity/fock.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/KroneckerProduct>

namespace omcav {

double max_abs(const SpMat& m) {
    double best = 0.0;
    for (int k = 0; k < m.outerSize(); ++k)
        for (SpMat::InnerIterator it(m, k); it; ++it)
            best = std::max(best, std::abs(it.value()));
    return best;
}

double max_abs(const MatrixXcd& m) { return m.cwiseAbs().maxCoeff(); }

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Cavity: return "cavity";
        case Mode::Mirror: return "mirror";
        case Mode::Composite: return "composite";
    }
    return "?";
}

MatrixXcd QuantumState::density() const {
    if (kind == StateKind::Density) return rho;
    return vec * vec.adjoint();
}

static void require_dim(int dim) {
    if (dim < 2) throw ConfigError("operator dimension must be >= 2, got " + std::to_string(dim));
}

static void require_single_mode(Mode mode, const char* what) {
    if (mode == Mode::Composite)
        throw ConfigError(std::string(what) + ": use tensor()/lift() to build composite operators");
}

ModeOperator annihilation(int dim, Mode mode) {
    require_dim(dim);
    require_single_mode(mode, "annihilation");
    ModeOperator op;
    op.mode = mode;
    (mode == Mode::Cavity ? op.dim_cavity : op.dim_mirror) = dim;
    op.mat.resize(dim, dim);
    std::vector<Triplet> trip;
    trip.reserve(dim);
    for (int n = 1; n < dim; ++n) trip.emplace_back(n - 1, n, std::sqrt(double(n)));
    op.mat.setFromTriplets(trip.begin(), trip.end());
    return op;
}

ModeOperator creation(int dim, Mode mode) {
    ModeOperator op = annihilation(dim, mode);
    op.mat = SpMat(op.mat.adjoint());
    return op;
}

ModeOperator number_op(int dim, Mode mode) {
    require_dim(dim);
    require_single_mode(mode, "number_op");
    ModeOperator op;
    op.mode = mode;
    (mode == Mode::Cavity ? op.dim_cavity : op.dim_mirror) = dim;
    op.mat.resize(dim, dim);
    std::vector<Triplet> trip;
    trip.reserve(dim);
    for (int n = 1; n < dim; ++n) trip.emplace_back(n, n, double(n));
    op.mat.setFromTriplets(trip.begin(), trip.end());
    return op;
}

ModeOperator identity_op(int dim, Mode mode) {
    require_dim(dim);
    ModeOperator op;
    op.mode = mode;
    if (mode == Mode::Cavity) op.dim_cavity = dim;
    else op.dim_mirror = dim;
    op.mat.resize(dim, dim);
    op.mat.setIdentity();
    return op;
}

std::pair<ModeOperator, ModeOperator> quadratures(int dim, Mode mode, QuadratureConvention conv) {
    ModeOperator a = annihilation(dim, mode);
    ModeOperator adag = creation(dim, mode);
    const double scale = (conv == QuadratureConvention::Paper) ? 1.0 : 1.0 / std::sqrt(2.0);
    ModeOperator X = a;
    X.mat = scale * (a.mat + adag.mat);
    ModeOperator P = a;
    P.mat = scale * (cd(0, 1) * (adag.mat - a.mat));
    return {X, P};
}

QuantumState fock_ket(int n, int dim, Mode mode) {
    require_dim(dim);
    if (n < 0 || n >= dim)
        throw ConfigError("fock_ket: level " + std::to_string(n) + " outside dimension " +
                          std::to_string(dim));
    QuantumState s;
    s.kind = StateKind::Ket;
    s.mode = mode;
    if (mode == Mode::Cavity) s.dim_cavity = dim;
    else if (mode == Mode::Mirror) s.dim_mirror = dim;
    else throw ConfigError("fock_ket: build composite kets with tensor_ket()");
    s.vec = VectorXcd::Zero(dim);
    s.vec[n] = 1.0;
    return s;
}

QuantumState vacuum_ket(int dim, Mode mode) { return fock_ket(0, dim, mode); }

QuantumState thermal_state(double nbar, int dim, Mode mode) {
    require_dim(dim);
    require_single_mode(mode, "thermal_state");
    if (nbar < 0) throw ConfigError("thermal_state: nbar must be >= 0");
    QuantumState s;
    s.kind = StateKind::Density;
    s.mode = mode;
    if (mode == Mode::Cavity) s.dim_cavity = dim;
    else s.dim_mirror = dim;
    s.rho = MatrixXcd::Zero(dim, dim);
    if (nbar == 0.0) {
        s.rho(0, 0) = 1.0;
        return s;
    }
    const double q = nbar / (nbar + 1.0);
    double mass = 0.0;
    for (int n = 0; n < dim; ++n) {
        const double p = std::pow(q, n) / (nbar + 1.0);
        s.rho(n, n) = p;
        mass += p;
    }
    const double tail = 1.0 - mass;  // exact geometric remainder
    if (tail > 1e-8)
        throw NumericalError("thermal_state: neglected tail mass " + std::to_string(tail) +
                             " exceeds 1e-8 at dim " + std::to_string(dim) +
                             "; increase the truncation");
    s.rho /= mass;
    return s;
}

QuantumState tensor_ket(const QuantumState& cavity, const QuantumState& mirror) {
    if (cavity.kind != StateKind::Ket || mirror.kind != StateKind::Ket)
        throw ConfigError("tensor_ket: both factors must be kets");
    if (cavity.mode != Mode::Cavity || mirror.mode != Mode::Mirror)
        throw ConfigError("tensor_ket: expected (cavity, mirror) order");
    QuantumState s;
    s.kind = StateKind::Ket;
    s.mode = Mode::Composite;
    s.dim_cavity = cavity.dim();
    s.dim_mirror = mirror.dim();
    s.vec = VectorXcd::Zero(s.dim_cavity * s.dim_mirror);
    for (int ic = 0; ic < s.dim_cavity; ++ic)
        for (int im = 0; im < s.dim_mirror; ++im)
            s.vec[ic * s.dim_mirror + im] = cavity.vec[ic] * mirror.vec[im];
    return s;
}

ModeOperator tensor(const ModeOperator& cavity_op, const ModeOperator& mirror_op) {
    if (cavity_op.mode != Mode::Cavity || mirror_op.mode != Mode::Mirror)
        throw ConfigError("tensor: expected (cavity, mirror) operands, got (" +
                          mode_name(cavity_op.mode) + ", " + mode_name(mirror_op.mode) + ")");
    ModeOperator out;
    out.mode = Mode::Composite;
    out.dim_cavity = cavity_op.dim();
    out.dim_mirror = mirror_op.dim();
    out.mat = Eigen::kroneckerProduct(cavity_op.mat, mirror_op.mat);
    return out;
}

ModeOperator lift(const ModeOperator& op, int dim_cavity, int dim_mirror) {
    if (op.mode == Mode::Cavity) {
        if (op.dim() != dim_cavity) throw ConfigError("lift: cavity dimension mismatch");
        return tensor(op, identity_op(dim_mirror, Mode::Mirror));
    }
    if (op.mode == Mode::Mirror) {
        if (op.dim() != dim_mirror) throw ConfigError("lift: mirror dimension mismatch");
        return tensor(identity_op(dim_cavity, Mode::Cavity), op);
    }
    throw ConfigError("lift: operator is already composite");
}

static void check_compatible(const QuantumState& state, const ModeOperator& op) {
    if (state.dim() != op.dim())
        throw ConfigError("state/operator dimension mismatch: " + std::to_string(state.dim()) +
                          " vs " + std::to_string(op.dim()));
    if (state.mode != op.mode)
        throw ConfigError("state/operator mode mismatch: " + mode_name(state.mode) + " vs " +
                          mode_name(op.mode));
}

cd expectation(const QuantumState& state, const ModeOperator& op) {
    check_compatible(state, op);
    if (state.kind == StateKind::Ket) {
        const double n2 = state.vec.squaredNorm();
        return state.vec.dot(op.mat * state.vec) / n2;
    }
    const double tr = state.rho.trace().real();
    return (op.mat * state.rho).eval().trace() / tr;
}

double variance(const QuantumState& state, const ModeOperator& op) {
    check_compatible(state, op);
    SpMat diff = SpMat(op.mat.adjoint()) - op.mat;
    if (max_abs(diff) > 1e-10 * std::max(1.0, max_abs(op.mat)))
        throw ConfigError("variance: operator is not Hermitian");
    ModeOperator sq = op;
    sq.mat = op.mat * op.mat;
    const double m1 = expectation(state, op).real();
    const double m2 = expectation(state, sq).real();
    return m2 - m1 * m1;
}

QuantumState partial_trace(const QuantumState& state, Mode keep) {
    if (state.mode != Mode::Composite)
        throw ConfigError("partial_trace: state is not composite");
    if (keep == Mode::Composite) throw ConfigError("partial_trace: keep must be a single mode");
    const int dc = state.dim_cavity, dm = state.dim_mirror;
    const MatrixXcd rho = state.density();
    QuantumState out;
    out.kind = StateKind::Density;
    out.mode = keep;
    if (keep == Mode::Mirror) {
        out.dim_mirror = dm;
        out.rho = MatrixXcd::Zero(dm, dm);
        for (int ic = 0; ic < dc; ++ic)
            out.rho += rho.block(ic * dm, ic * dm, dm, dm);
    } else {
        out.dim_cavity = dc;
        out.rho = MatrixXcd::Zero(dc, dc);
        for (int ic = 0; ic < dc; ++ic)
            for (int jc = 0; jc < dc; ++jc)
                out.rho(ic, jc) = rho.block(ic * dm, jc * dm, dm, dm).trace();
    }
    return out;
}

double tail_population(const QuantumState& state, int count) {
    const int d = state.dim();
    auto level_pop = [&](int idx) {
        if (state.kind == StateKind::Ket) return std::norm(state.vec[idx]);
        return state.rho(idx, idx).real();
    };
    if (state.mode != Mode::Composite) {
        double p = 0.0;
        for (int i = std::max(0, d - count); i < d; ++i) p += level_pop(i);
        return p;
    }
    const int dc = state.dim_cavity, dm = state.dim_mirror;
    double pc = 0.0, pm = 0.0;
    for (int ic = 0; ic < dc; ++ic)
        for (int im = 0; im < dm; ++im) {
            const double p = level_pop(ic * dm + im);
            if (ic >= dc - count) pc += p;
            if (im >= dm - count) pm += p;
        }
    return std::max(pc, pm);
}

// ---- serialization --------------------------------------------------------

std::string state_to_json(const QuantumState& state) {
    nlohmann::json j;
    j["kind"] = (state.kind == StateKind::Ket) ? "ket" : "density";
    j["mode"] = mode_name(state.mode);
    std::vector<int> dims;
    if (state.dim_cavity > 0) dims.push_back(state.dim_cavity);
    if (state.dim_mirror > 0) dims.push_back(state.dim_mirror);
    j["dims"] = dims;
    std::vector<double> re, im;
    if (state.kind == StateKind::Ket) {
        for (int i = 0; i < state.vec.size(); ++i) {
            re.push_back(state.vec[i].real());
            im.push_back(state.vec[i].imag());
        }
    } else {
        for (int r = 0; r < state.rho.rows(); ++r)
            for (int c = 0; c < state.rho.cols(); ++c) {
                re.push_back(state.rho(r, c).real());
                im.push_back(state.rho(r, c).imag());
            }
    }
    j["real"] = re;
    j["imag"] = im;
    j["metadata"] = state.metadata;
    return j.dump();
}

QuantumState state_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("state_from_json: malformed JSON: ") + e.what());
    }
    QuantumState s;
    try {
        const std::string kind = j.at("kind");
        if (kind == "ket") s.kind = StateKind::Ket;
        else if (kind == "density") s.kind = StateKind::Density;
        else throw ConfigError("state_from_json: unknown kind '" + kind + "'");
        const std::string mode = j.at("mode");
        if (mode == "cavity") s.mode = Mode::Cavity;
        else if (mode == "mirror") s.mode = Mode::Mirror;
        else if (mode == "composite") s.mode = Mode::Composite;
        else throw ConfigError("state_from_json: unknown mode '" + mode + "'");
        const std::vector<int> dims = j.at("dims");
        if (s.mode == Mode::Composite) {
            if (dims.size() != 2) throw ConfigError("state_from_json: composite needs 2 dims");
            s.dim_cavity = dims[0];
            s.dim_mirror = dims[1];
        } else if (dims.size() == 1) {
            (s.mode == Mode::Cavity ? s.dim_cavity : s.dim_mirror) = dims[0];
        } else {
            throw ConfigError("state_from_json: single mode needs 1 dim");
        }
        const std::vector<double> re = j.at("real");
        const std::vector<double> im = j.at("imag");
        if (re.size() != im.size()) throw ConfigError("state_from_json: real/imag length mismatch");
        const int d = (s.mode == Mode::Composite) ? s.dim_cavity * s.dim_mirror
                      : (s.mode == Mode::Cavity ? s.dim_cavity : s.dim_mirror);
        if (s.kind == StateKind::Ket) {
            if (static_cast<int>(re.size()) != d)
                throw ConfigError("state_from_json: ket length does not match dims");
            s.vec.resize(d);
            for (int i = 0; i < d; ++i) s.vec[i] = cd(re[i], im[i]);
        } else {
            if (static_cast<int>(re.size()) != d * d)
                throw ConfigError("state_from_json: density size does not match dims");
            s.rho.resize(d, d);
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c) s.rho(r, c) = cd(re[r * d + c], im[r * d + c]);
        }
        if (j.contains("metadata"))
            s.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("state_from_json: missing or mistyped field: ") + e.what());
    }
    return s;
}

TruncationScanResult truncation_scan(const std::function<std::vector<double>(int)>& eval,
                                     const std::vector<std::string>& names,
                                     const std::vector<int>& dims, double rel_tol) {
    if (dims.size() < 3)
        throw ConfigError("truncation_scan: need at least 3 dimensions, got " +
                          std::to_string(dims.size()));
    for (size_t i = 1; i < dims.size(); ++i)
        if (dims[i] <= dims[i - 1])
            throw ConfigError("truncation_scan: dimensions must be strictly increasing");
    TruncationScanResult res;
    res.dims = dims;
    res.names = names;
    for (int d : dims) {
        std::vector<double> vals = eval(d);
        if (vals.size() != names.size())
            throw ConfigError("truncation_scan: evaluator returned " +
                              std::to_string(vals.size()) + " values for " +
                              std::to_string(names.size()) + " observables");
        res.values.push_back(std::move(vals));
    }
    const auto& last = res.values.back();
    const auto& prev = res.values[res.values.size() - 2];
    res.all_converged = true;
    for (size_t k = 0; k < names.size(); ++k) {
        const double denom = std::max(std::abs(last[k]), 1e-300);
        const double rel = std::abs(last[k] - prev[k]) / denom;
        res.last_rel_change.push_back(rel);
        res.converged.push_back(rel < rel_tol);
        res.all_converged = res.all_converged && rel < rel_tol;
    }
    return res;
}

}  // namespace omcav
