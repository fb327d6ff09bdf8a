#include "mmc/metrics.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace mmc {

void FeatureSet::validate() const {
    if (vectors.empty()) throw std::invalid_argument("FeatureSet: needs >= 1 vector");
    const std::size_t d = vectors[0].size();
    if (d == 0) throw std::invalid_argument("FeatureSet: zero-dimensional vectors");
    for (const auto& v : vectors) {
        if (v.size() != d) throw std::invalid_argument("FeatureSet: ragged dimensionality");
        for (double x : v)
            if (!std::isfinite(x)) throw std::invalid_argument("FeatureSet: non-finite entry");
    }
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dim mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) throw std::invalid_argument("cosine: zero-norm vector");
    // identical vectors hit dot == na == nb bitwise; return exactly +/-1
    if (dot * dot == na * nb) return dot > 0.0 ? 1.0 : -1.0;
    return dot / std::sqrt(na * nb);
}

double identity_similarity(const std::vector<double>& ref, const FeatureSet& frames) {
    frames.validate();
    if (ref.size() != frames.dim())
        throw std::invalid_argument("identity_similarity: dim mismatch");
    double acc = 0.0;
    for (const auto& f : frames.vectors) acc += cosine_similarity(ref, f);
    return acc / static_cast<double>(frames.count());
}

double temporal_consistency(const FeatureSet& frames) {
    frames.validate();
    const std::size_t n = frames.count();
    if (n < 2) throw std::invalid_argument("temporal_consistency: needs >= 2 frames");
    double acc = 0.0;
    std::size_t terms = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        acc += cosine_similarity(frames.vectors[i], frames.vectors[i + 1]);
        ++terms;
    }
    for (std::size_t i = 1; i < n; ++i) {
        acc += cosine_similarity(frames.vectors[0], frames.vectors[i]);
        ++terms;
    }
    return acc / static_cast<double>(terms);
}

namespace {

struct Gaussian {
    std::vector<double> mu;
    std::vector<double> cov;  // d x d row-major, unbiased
};

Gaussian fit_gaussian(const FeatureSet& s) {
    const std::size_t n = s.count(), d = s.dim();
    if (n < 2) throw std::invalid_argument("frechet_distance: needs >= 2 vectors per set");
    Gaussian g;
    g.mu.assign(d, 0.0);
    for (const auto& v : s.vectors)
        for (std::size_t j = 0; j < d; ++j) g.mu[j] += v[j];
    for (double& m : g.mu) m /= static_cast<double>(n);
    g.cov.assign(d * d, 0.0);
    for (const auto& v : s.vectors)
        for (std::size_t i = 0; i < d; ++i) {
            const double ci = v[i] - g.mu[i];
            for (std::size_t j = 0; j < d; ++j) g.cov[i * d + j] += ci * (v[j] - g.mu[j]);
        }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (double& c : g.cov) c *= inv;
    return g;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. A is overwritten
// with the diagonalized matrix; V accumulates the rotations (columns are
// eigenvectors).
void jacobi_eig(std::vector<double>& a, std::vector<double>& v, std::size_t d) {
    v.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-26) return;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (apq == 0.0) continue;
                const double app = a[p * d + p], aqq = a[q * d + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    const double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double vkp = v[k * d + p], vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
    }
}

std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                            std::size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            const double av = a[i * d + k];
            for (std::size_t j = 0; j < d; ++j) c[i * d + j] += av * b[k * d + j];
        }
    return c;
}

// Symmetric PSD square root via eigendecomposition, clamping tiny negative
// eigenvalues; warns above the tolerance.
std::vector<double> sym_sqrt(std::vector<double> m, std::size_t d, const char* what) {
    std::vector<double> v;
    jacobi_eig(m, v, d);
    std::vector<double> sq(d * d, 0.0);
    for (std::size_t e = 0; e < d; ++e) {
        double lam = m[e * d + e];
        if (lam < 0.0) {
            if (lam < -1e-8)
                std::cerr << "warning: " << what << " eigenvalue " << lam
                          << " clamped to 0 in matrix square root\n";
            lam = 0.0;
        }
        const double r = std::sqrt(lam);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) sq[i * d + j] += v[i * d + e] * r * v[j * d + e];
    }
    return sq;
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
    a.validate();
    b.validate();
    if (a.dim() != b.dim()) throw std::invalid_argument("frechet_distance: dim mismatch");
    const std::size_t d = a.dim();
    Gaussian ga = fit_gaussian(a), gb = fit_gaussian(b);

    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = ga.mu[i] - gb.mu[i];
        mean_term += diff * diff;
    }

    // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})
    std::vector<double> sa_half = sym_sqrt(ga.cov, d, "covariance A");
    std::vector<double> inner = mat_mul(mat_mul(sa_half, gb.cov, d), sa_half, d);
    for (std::size_t i = 0; i < d; ++i)  // symmetrize against roundoff
        for (std::size_t j = i + 1; j < d; ++j) {
            const double s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = inner[j * d + i] = s;
        }
    std::vector<double> cross_sqrt = sym_sqrt(std::move(inner), d, "cross term");

    double trace_term = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        trace_term += ga.cov[i * d + i] + gb.cov[i * d + i] - 2.0 * cross_sqrt[i * d + i];

    return mean_term + trace_term;
}

}  // namespace mmc
