#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpop/mat.hpp"

namespace rpop {

// ---------------------------------------------------------------------------
// Fixed-codebook quantization. Tokens are 0-indexed throughout the API; logs
// that mirror the usual 1-indexed vocabulary rendering add 1 at the printing
// site only. Ties in the nearest-neighbor search break to the lowest index.
// ---------------------------------------------------------------------------

struct Codebook {
    Mat<double> vectors;  // N x d_embed

    int size() const { return vectors.rows; }
    int dim() const { return vectors.cols; }
};

// Rows must be pairwise distinct so quantize(decode(z)) = z is well posed.
inline Codebook make_codebook(Mat<double> vectors) {
    if (vectors.rows < 2) throw std::invalid_argument("Codebook: need at least 2 vectors");
    for (int i = 0; i < vectors.rows; ++i)
        for (int j = i + 1; j < vectors.rows; ++j) {
            bool equal = true;
            for (int c = 0; c < vectors.cols && equal; ++c) equal = vectors(i, c) == vectors(j, c);
            if (equal)
                throw std::invalid_argument("Codebook: rows " + std::to_string(i) + " and " + std::to_string(j) +
                                            " coincide");
        }
    return Codebook{std::move(vectors)};
}

// K latent vectors arranged on a sqrt(K) x sqrt(K) grid.
struct LatentGrid {
    int side = 0;
    Mat<double> latents;  // K x d_embed, row-major spatial order
};

inline LatentGrid make_latent_grid(Mat<double> latents) {
    const int k = latents.rows;
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k))));
    if (side * side != k) throw std::invalid_argument("LatentGrid: token count must be a perfect square");
    return LatentGrid{side, std::move(latents)};
}

// token_k = argmin_i ||latent_k - e_i||, lowest index on ties.
inline std::vector<int> quantize(const LatentGrid& grid, const Codebook& cb) {
    if (grid.latents.cols != cb.dim()) throw std::invalid_argument("quantize: latent width mismatch");
    std::vector<int> tokens(grid.latents.rows);
    for (int k = 0; k < grid.latents.rows; ++k) {
        const double* x = grid.latents.row(k);
        int best = 0;
        double best_d = 0.0;
        for (int i = 0; i < cb.size(); ++i) {
            const double* e = cb.vectors.row(i);
            double d = 0.0;
            for (int c = 0; c < cb.dim(); ++c) d += (x[c] - e[c]) * (x[c] - e[c]);
            if (i == 0 || d < best_d) {
                best = i;
                best_d = d;
            }
        }
        tokens[k] = best;
    }
    return tokens;
}

struct Image {
    int height = 0, width = 0;
    std::vector<double> rgb;  // row-major, 3 channels interleaved

    double& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

inline Image make_image(int h, int w) {
    Image img;
    img.height = h;
    img.width = w;
    img.rgb.assign(static_cast<size_t>(h) * w * 3, 0.0);
    return img;
}

struct EncodedObservation {
    std::vector<int> tokens;
    LatentGrid grid;
};

// Deterministic stand-in encoder: split the image into a sqrt(K) x sqrt(K)
// patch grid, mean-pool each patch per color channel, and tile the 3 channel
// means across d_embed (channel c of the latent reads image channel c mod 3).
inline EncodedObservation encode_observation(const Image& img, const Codebook& cb, int tokens_per_obs) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens_per_obs))));
    if (side * side != tokens_per_obs) throw std::invalid_argument("encode_observation: K must be a perfect square");
    if (img.height % side != 0 || img.width % side != 0)
        throw std::invalid_argument("encode_observation: image dimensions not divisible by the patch grid");
    const int ph = img.height / side, pw = img.width / side;
    Mat<double> latents(tokens_per_obs, cb.dim());
    for (int gy = 0; gy < side; ++gy)
        for (int gx = 0; gx < side; ++gx) {
            double mean[3] = {0.0, 0.0, 0.0};
            for (int y = gy * ph; y < (gy + 1) * ph; ++y)
                for (int x = gx * pw; x < (gx + 1) * pw; ++x)
                    for (int c = 0; c < 3; ++c) mean[c] += img.at(y, x, c);
            const double inv = 1.0 / (static_cast<double>(ph) * pw);
            double* row = latents.row(gy * side + gx);
            for (int c = 0; c < cb.dim(); ++c) row[c] = mean[c % 3] * inv;
        }
    EncodedObservation enc{{}, make_latent_grid(std::move(latents))};
    enc.tokens = quantize(enc.grid, cb);
    return enc;
}

inline LatentGrid decode_tokens(const std::vector<int>& tokens, const Codebook& cb) {
    Mat<double> latents(static_cast<int>(tokens.size()), cb.dim());
    for (size_t k = 0; k < tokens.size(); ++k) {
        if (tokens[k] < 0 || tokens[k] >= cb.size())
            throw std::invalid_argument("decode_tokens: token " + std::to_string(tokens[k]) + " at slot " +
                                        std::to_string(k) + " outside vocabulary [0," + std::to_string(cb.size()) +
                                        ")");
        const double* e = cb.vectors.row(tokens[k]);
        std::copy(e, e + cb.dim(), latents.row(static_cast<int>(k)));
    }
    return make_latent_grid(std::move(latents));
}

// Paints each patch with its code vector's leading channels (tiled mod 3);
// the inverse of encode_observation's pooling for codebooks that live in the
// tiled-channel subspace.
inline Image render_tokens(const std::vector<int>& tokens, const Codebook& cb, int height, int width) {
    const auto grid = decode_tokens(tokens, cb);
    if (height % grid.side != 0 || width % grid.side != 0)
        throw std::invalid_argument("render_tokens: image dimensions not divisible by the patch grid");
    const int ph = height / grid.side, pw = width / grid.side;
    Image img = make_image(height, width);
    for (int gy = 0; gy < grid.side; ++gy)
        for (int gx = 0; gx < grid.side; ++gx) {
            const double* row = grid.latents.row(gy * grid.side + gx);
            for (int y = gy * ph; y < (gy + 1) * ph; ++y)
                for (int x = gx * pw; x < (gx + 1) * pw; ++x)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[c % cb.dim()];
        }
    return img;
}

struct TokenizerLoss {
    double l1_term = 0.0;
    double commit_term_a = 0.0;  // || sg(encoder latents) - quantized ||^2
    double commit_term_b = 0.0;  // || sg(quantized) - encoder latents ||^2
};

// Value-only evaluation of the tokenizer objective's computable terms; the
// stop-gradient operator is the identity here, so the two commitment terms
// coincide numerically. Reductions are means. The perceptual term of the full
// objective needs a pretrained network and is not part of this artifact.
inline TokenizerLoss tokenizer_loss_value(const Image& x, const Image& x_hat, const Mat<double>& encoder_latents,
                                          const Mat<double>& quantized_latents) {
    if (x.height != x_hat.height || x.width != x_hat.width)
        throw std::invalid_argument("tokenizer_loss_value: image shape mismatch");
    if (!encoder_latents.same_shape(quantized_latents))
        throw std::invalid_argument("tokenizer_loss_value: latent shape mismatch");
    TokenizerLoss loss;
    for (size_t i = 0; i < x.rgb.size(); ++i) loss.l1_term += std::abs(x.rgb[i] - x_hat.rgb[i]);
    loss.l1_term /= static_cast<double>(x.rgb.size());
    for (size_t i = 0; i < encoder_latents.data.size(); ++i) {
        const double d = encoder_latents.data[i] - quantized_latents.data[i];
        loss.commit_term_a += d * d;
        loss.commit_term_b += d * d;
    }
    loss.commit_term_a /= static_cast<double>(encoder_latents.data.size());
    loss.commit_term_b /= static_cast<double>(encoder_latents.data.size());
    return loss;
}

}  // namespace rpop
