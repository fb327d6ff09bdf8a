#pragma once

#include <string>
#include <vector>

namespace mmc {

// Equal-length feature vectors (one per frame / sample).
struct FeatureSet {
    std::vector<std::vector<double>> vectors;
    std::string label;

    std::size_t count() const { return vectors.size(); }
    std::size_t dim() const { return vectors.empty() ? 0 : vectors[0].size(); }
    void validate() const;
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Mean cosine similarity between the reference vector and each frame.
double identity_similarity(const std::vector<double>& ref, const FeatureSet& frames);

// Mean over all adjacent-pair similarities cos(f_i, f_{i+1}) together with
// all first-frame similarities cos(f_1, f_i), i >= 2, pooled equally.
double temporal_consistency(const FeatureSet& frames);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), unbiased covariance,
// square root via symmetric eigendecomposition of S_a^{1/2} S_b S_a^{1/2};
// eigenvalues below -1e-8 trigger a warning on stderr before clamping at 0.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

}  // namespace mmc
