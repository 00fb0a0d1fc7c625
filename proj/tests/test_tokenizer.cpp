#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rpop/rng.hpp"
#include "rpop/tokenizer.hpp"

using namespace rpop;

namespace {

Codebook tiny_codebook() {
    Mat<double> e(2, 2);
    e(0, 0) = 0.0;
    e(0, 1) = 0.0;
    e(1, 0) = 1.0;
    e(1, 1) = 1.0;
    return make_codebook(std::move(e));
}

// Exhaustive scan with an independent distance/tie rule, kept apart from the
// library implementation.
std::vector<int> brute_force_tokens(const LatentGrid& grid, const Codebook& cb) {
    std::vector<int> out(grid.latents.rows);
    for (int k = 0; k < grid.latents.rows; ++k) {
        long double best = -1.0L;
        int arg = -1;
        for (int i = cb.size() - 1; i >= 0; --i) {
            long double d = 0.0L;
            for (int c = 0; c < cb.dim(); ++c) {
                const long double diff = grid.latents(k, c) - cb.vectors(i, c);
                d += diff * diff;
            }
            if (arg < 0 || d <= best) {  // backwards scan, <= keeps the lowest index
                best = d;
                arg = i;
            }
        }
        out[k] = arg;
    }
    return out;
}

}  // namespace

TEST_CASE("quantize picks the nearest code vector") {
    auto cb = tiny_codebook();
    Mat<double> latent(1, 2);
    latent(0, 0) = 0.9;
    latent(0, 1) = 0.8;
    auto tokens = quantize(make_latent_grid(std::move(latent)), cb);
    CHECK(tokens == std::vector<int>{1});
}

TEST_CASE("quantize breaks ties toward the lowest index") {
    auto cb = tiny_codebook();
    Mat<double> latent(1, 2);
    latent(0, 0) = 0.5;
    latent(0, 1) = 0.5;
    auto tokens = quantize(make_latent_grid(std::move(latent)), cb);
    CHECK(tokens == std::vector<int>{0});
}

TEST_CASE("quantize matches the exhaustive scan on random latents") {
    SplitMix64 rng(11);
    auto cb = make_codebook(gaussian_mat(64, 6, rng.next(), 1.0));
    Mat<double> latents(900, 6);  // 30x30 grid
    SplitMix64 r2(rng.next());
    for (auto& v : latents.data) v = r2.next_gaussian();
    auto grid = make_latent_grid(std::move(latents));
    CHECK(quantize(grid, cb) == brute_force_tokens(grid, cb));
}

TEST_CASE("quantize validates widths") {
    auto cb = tiny_codebook();
    Mat<double> latent(1, 4);
    CHECK_THROWS_AS(quantize(make_latent_grid(std::move(latent)), cb), std::invalid_argument);
}

TEST_CASE("decode retrieves code vectors in spatial order") {
    auto cb = tiny_codebook();
    auto grid = decode_tokens({1, 1, 1, 1}, cb);
    CHECK(grid.side == 2);
    for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 2; ++c) CHECK(grid.latents(k, c) == cb.vectors(1, c));

    CHECK_THROWS_AS(decode_tokens({0, 2, 0, 0}, cb), std::invalid_argument);
    CHECK_THROWS_AS(decode_tokens({0, -1, 0, 0}, cb), std::invalid_argument);
}

TEST_CASE("decode then quantize is the identity on tokens") {
    SplitMix64 rng(13);
    auto cb = make_codebook(gaussian_mat(32, 4, rng.next(), 1.0));
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> tokens(9);
        for (auto& t : tokens) t = static_cast<int>(rng.next_below(32));
        CHECK(quantize(decode_tokens(tokens, cb), cb) == tokens);
    }
}

TEST_CASE("quantization is idempotent through decode") {
    SplitMix64 rng(17);
    auto cb = make_codebook(gaussian_mat(16, 4, rng.next(), 1.0));
    for (int trial = 0; trial < 20; ++trial) {
        Mat<double> latents(4, 4);
        SplitMix64 r2(rng.next());
        for (auto& v : latents.data) v = r2.next_gaussian();
        auto grid = make_latent_grid(std::move(latents));
        auto z = quantize(grid, cb);
        CHECK(quantize(decode_tokens(z, cb), cb) == z);
    }
}

TEST_CASE("codebook construction rejects duplicates and tiny sizes") {
    Mat<double> dup(2, 2);
    dup(0, 0) = 1.0;
    dup(1, 0) = 1.0;
    CHECK_THROWS_AS(make_codebook(std::move(dup)), std::invalid_argument);
    Mat<double> one(1, 2);
    CHECK_THROWS_AS(make_codebook(std::move(one)), std::invalid_argument);
}

TEST_CASE("encode pools patch means deterministically") {
    auto cb = tiny_codebook();
    Image img = make_image(8, 8);
    for (auto& v : img.rgb) v = 0.9;  // constant color
    auto enc = encode_observation(img, cb, 4);
    CHECK(enc.tokens.size() == 4);
    for (int t : enc.tokens) CHECK(t == 1);

    auto enc2 = encode_observation(img, cb, 4);
    CHECK(enc.tokens == enc2.tokens);
    CHECK(max_abs_diff(enc.grid.latents, enc2.grid.latents) == 0.0);

    Image bad = make_image(9, 8);
    CHECK_THROWS_AS(encode_observation(bad, cb, 4), std::invalid_argument);
    CHECK_THROWS_AS(encode_observation(img, cb, 3), std::invalid_argument);
}

TEST_CASE("render then encode reproduces tokens for a separated codebook") {
    // Codebook rows live in the tiled-channel subspace the pooling encoder
    // can represent; margins are far larger than the pooling error.
    SplitMix64 rng(19);
    auto cb = make_codebook(gaussian_mat(12, 3, rng.next(), 2.0));
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<int> tokens(16);
        for (auto& t : tokens) t = static_cast<int>(rng.next_below(12));
        Image img = render_tokens(tokens, cb, 16, 16);
        auto enc = encode_observation(img, cb, 16);
        CHECK(enc.tokens == tokens);
    }
}

TEST_CASE("tokenizer loss values") {
    Image x = make_image(4, 4);
    for (auto& v : x.rgb) v = 0.25;
    Image same = x;
    Mat<double> enc = gaussian_mat(4, 3, 7, 1.0);
    auto loss0 = tokenizer_loss_value(x, same, enc, enc);
    CHECK(loss0.l1_term == 0.0);
    CHECK(loss0.commit_term_a == 0.0);
    CHECK(loss0.commit_term_b == 0.0);

    Image shifted = x;
    for (auto& v : shifted.rgb) v += 0.5;
    auto loss1 = tokenizer_loss_value(x, shifted, enc, enc);
    CHECK(loss1.l1_term == doctest::Approx(0.5).epsilon(1e-12));

    // Both commitment terms coincide when stop-gradient is the identity.
    Mat<double> quant = gaussian_mat(4, 3, 8, 1.0);
    auto loss2 = tokenizer_loss_value(x, shifted, enc, quant);
    CHECK(loss2.commit_term_a == loss2.commit_term_b);
    CHECK(loss2.commit_term_a > 0.0);

    Mat<double> wrong(5, 3);
    CHECK_THROWS_AS(tokenizer_loss_value(x, shifted, enc, wrong), std::invalid_argument);
}
