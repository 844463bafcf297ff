#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "animator/tensor.hpp"

namespace animator {

// Ground-truth factors behind one synthetic face. Expression entries are
// (mouth_open, smile, eye_open, brow_raise); identity entries are (head width,
// head height, skin tone, eye spacing / hair colour). All lie in [0, 1].
struct ExpressionFactors {
    std::vector<double> expression;
    std::vector<double> identity;
};

struct FaceGenConfig {
    std::size_t expression_dims = 4;
    std::size_t identity_dims = 4;
    std::size_t size = 224;
};

void validate_factors(const ExpressionFactors& f, const FaceGenConfig& cfg = {});

// Independent uniform expression and identity factors.
ExpressionFactors sample_face_factors(std::mt19937_64& rng, const FaceGenConfig& cfg = {});
std::vector<double> sample_expression(std::mt19937_64& rng, const FaceGenConfig& cfg = {});

// Cartoon face as 3 x size x size in [0, 1].
Tensor render_face(const ExpressionFactors& f, const FaceGenConfig& cfg = {});

// Stack of rendered faces as t x 3 x size x size.
Tensor render_faces(const std::vector<ExpressionFactors>& faces, const FaceGenConfig& cfg = {});

}  // namespace animator
