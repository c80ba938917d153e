#include "doctest.h"

#include <cmath>

#include "stylealign/discriminator.hpp"
#include "stylealign/generator.hpp"
#include "stylealign/latent.hpp"

using namespace stylealign;

namespace {

ArchManifest desk_manifest() { return ArchManifest{}; }

bool bitwise_equal(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

} // namespace

TEST_CASE("sample_z determinism shape and moments") {
    auto m = desk_manifest();
    auto a = sample_z(m, 1, 0);
    auto b = sample_z(m, 1, 0);
    CHECK(bitwise_equal(a.values, b.values));

    auto c = sample_z(m, 3, 0);
    CHECK(c.values.shape() == Shape{3, 64});

    auto big = sample_z(m, 10000, 7);
    for (int d = 0; d < 4; ++d) {  // spot-check a few coordinates
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < 10000; ++i) {
            const double v = big.values[i * 64 + d];
            s += v;
            s2 += v * v;
        }
        const double mean = s / 10000.0;
        const double var = s2 / 10000.0 - mean * mean;
        CHECK(std::abs(mean) < 0.05);
        CHECK(std::abs(var - 1.0) < 0.1);
    }
}

TEST_CASE("mapping is deterministic and isolated to mapping tensors") {
    auto m = desk_manifest();
    Generator<Real> g(m, 11);
    auto z = sample_z(m, 4, 3);
    auto w1 = g.map_z_values(z.values);
    auto w2 = g.map_z_values(z.values);
    CHECK(bitwise_equal(w1, w2));

    // Mutating a feat_conv tensor must not change the mapping output.
    auto weights = g.weights_snapshot();
    auto& conv = weights.tensors.at("synth.r8.conv0.weight");
    conv[0] += 1.0f;
    Generator<Real> g2(m, 11);
    g2.load(weights);
    CHECK(bitwise_equal(w1, g2.map_z_values(z.values)));

    // Mutating a mapping tensor must change it.
    auto weights2 = g.weights_snapshot();
    weights2.tensors.at("mapping.fc0.weight")[0] += 0.5f;
    g2.load(weights2);
    CHECK(!bitwise_equal(w1, g2.map_z_values(z.values)));
}

TEST_CASE("truncation identities") {
    auto m = desk_manifest();
    Rng rng(5);
    LatentW w{Tensor<Real>({2, 64})};
    rng.fill_normal(w.values);
    Tensor<Real> wm({64});
    rng.fill_normal(wm);

    auto t1 = truncate_w(w, 1.0, wm);
    CHECK(bitwise_equal(t1.values, w.values));

    auto t0 = truncate_w(w, 0.0, wm);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t d = 0; d < 64; ++d) CHECK(t0.values[b * 64 + d] == wm[d]);

    LatentW ones{Tensor<Real>::full({1, 64}, 1.0f)};
    Tensor<Real> zero = Tensor<Real>::zeros({64});
    auto t = truncate_w(ones, 0.7, zero);
    for (int64_t d = 0; d < 64; ++d) CHECK(t.values[d] == doctest::Approx(0.7));
}

TEST_CASE("affine styles: zero weights give bias, broadcast consistency, locality") {
    auto m = desk_manifest();
    Generator<Real> g(m, 21);
    auto z = sample_z(m, 2, 9);
    LatentW w{g.map_z_values(z.values)};
    const int L = m.num_style_layers();

    // Broadcast W vs explicit W+ stack gives identical styles.
    auto wp = broadcast_w(w, L);
    auto s1 = g.affine_styles_values(wp);
    auto s2 = g.affine_styles_values(broadcast_w(w, L));
    for (int l = 0; l < L; ++l)
        CHECK(bitwise_equal(s1.per_layer[static_cast<size_t>(l)],
                            s2.per_layer[static_cast<size_t>(l)]));

    // Zeroed affine weight matrix leaves only the bias.
    auto weights = g.weights_snapshot();
    auto& aw = weights.tensors.at("affine.r4.conv0.weight");
    for (int64_t i = 0; i < aw.numel(); ++i) aw[i] = 0;
    auto& ab = weights.tensors.at("affine.r4.conv0.bias");
    for (int64_t i = 0; i < ab.numel(); ++i) ab[i] = static_cast<float>(0.25 + 0.01 * i);
    Generator<Real> g2(m, 21);
    g2.load(weights);
    auto s3 = g2.affine_styles_values(wp);
    for (int64_t c = 0; c < 64; ++c)
        CHECK(s3.per_layer[0][c] == doctest::Approx(0.25 + 0.01 * c));

    // Perturbing W+ at layer 2 only changes layer-2 styles.
    auto wp2 = broadcast_w(w, L);
    wp2.per_layer[2][0] += 1.0f;
    auto s4 = g.affine_styles_values(wp2);
    for (int l = 0; l < L; ++l) {
        const bool same = bitwise_equal(s1.per_layer[static_cast<size_t>(l)],
                                        s4.per_layer[static_cast<size_t>(l)]);
        CHECK(same == (l != 2));
    }
}

TEST_CASE("synthesis determinism, shape, range, component isolation") {
    auto m = desk_manifest();
    Generator<Real> g(m, 31);
    auto z = sample_z(m, 2, 13);
    LatentW w{g.map_z_values(z.values)};
    auto wp = broadcast_w(w, m.num_style_layers());
    auto styles = g.affine_styles_values(wp);

    auto img1 = g.synthesize_values(styles);
    auto img2 = g.synthesize_values(styles);
    CHECK(bitwise_equal(img1, img2));
    CHECK(img1.shape() == Shape{2, 3, 32, 32});
    for (int64_t i = 0; i < img1.numel(); ++i) {
        CHECK(img1[i] <= 1.0f);
        CHECK(img1[i] >= -1.0f);
    }

    // Synthesis ignores mapping and affine tensors.
    auto weights = g.weights_snapshot();
    weights.tensors.at("mapping.fc1.weight")[3] += 2.0f;
    weights.tensors.at("affine.r16.conv1.weight")[5] += 2.0f;
    Generator<Real> g2(m, 31);
    g2.load(weights);
    CHECK(bitwise_equal(img1, g2.synthesize_values(styles)));

    // feat_conv and trgb changes do reach the image.
    auto weights3 = g.weights_snapshot();
    weights3.tensors.at("synth.r16.conv1.weight")[0] += 0.5f;
    g2.load(weights3);
    CHECK(!bitwise_equal(img1, g2.synthesize_values(styles)));
}

TEST_CASE("generate composes map, truncate, affine, synthesize") {
    auto m = desk_manifest();
    Generator<Real> g(m, 41);
    auto wm = g.estimate_w_mean(2000);
    auto z = sample_z(m, 3, 17);

    auto both = g.generate(z, 1.0, wm);
    LatentW w{g.map_z_values(z.values)};
    auto manual = g.synthesize_values(
        g.affine_styles_values(broadcast_w(w, m.num_style_layers())));
    CHECK(bitwise_equal(both, manual));

    // Full truncation collapses every z to the mean image.
    auto z2 = sample_z(m, 3, 18);
    auto img_a = g.generate(z, 0.0, wm);
    auto img_b = g.generate(z2, 0.0, wm);
    CHECK(max_abs_diff(img_a, img_b) < 1e-6);
}

TEST_CASE("style_mix boundary semantics") {
    auto m = desk_manifest();
    const int L = m.num_style_layers();
    Rng rng(2);
    LatentWPlus src, ref;
    for (int l = 0; l < L; ++l) {
        Tensor<Real> a({1, 64}), b({1, 64});
        rng.fill_normal(a);
        rng.fill_normal(b);
        src.per_layer.push_back(a);
        ref.per_layer.push_back(b);
    }

    auto all_src = style_mix(m, src, ref, 2 * m.max_res());
    auto all_ref = style_mix(m, src, ref, 4);
    for (int l = 0; l < L; ++l) {
        CHECK(bitwise_equal(all_src.per_layer[static_cast<size_t>(l)],
                            src.per_layer[static_cast<size_t>(l)]));
        CHECK(bitwise_equal(all_ref.per_layer[static_cast<size_t>(l)],
                            ref.per_layer[static_cast<size_t>(l)]));
    }

    // Boundary at 16: levels 4 and 8 from source, 16 and 32 from reference.
    auto mixed = style_mix(m, src, ref, 16);
    const auto table = m.style_layers();
    for (int l = 0; l < L; ++l) {
        const bool from_src = table[static_cast<size_t>(l)].level < 16;
        CHECK(bitwise_equal(mixed.per_layer[static_cast<size_t>(l)],
                            (from_src ? src : ref).per_layer[static_cast<size_t>(l)]));
    }

    // Identity when source == reference.
    auto same = style_mix(m, src, src, 16);
    for (int l = 0; l < L; ++l)
        CHECK(bitwise_equal(same.per_layer[static_cast<size_t>(l)],
                            src.per_layer[static_cast<size_t>(l)]));

    CHECK_THROWS(style_mix(m, src, ref, 3));
}

// The differentiability contract: analytic d(loss)/dz against central
// differences, double precision, 10 random probes, rel. error < 1e-3.
TEST_CASE("generator gradient wrt z matches finite differences") {
    auto m = desk_manifest();
    Generator<Real> gf(m, 51);
    Generator<double> g(m, 0);
    // Share the exact same weights through the float snapshot.
    {
        auto snap = gf.weights_snapshot();
        PartitionedWeights<float> w = snap;
        Generator<double> tmp(m, 0);
        // load() casts float -> double
        g.load(w);
    }
    Tensor<double> target({1, 3, 32, 32});
    Rng trng(99);
    trng.fill_uniform(target, -0.5, 0.5);

    Rng zr(123);
    double worst = 0;
    for (int probe = 0; probe < 10; ++probe) {
        Tensor<double> z({1, 64});
        zr.fill_normal(z);
        auto zv = make_leaf(z.clone(), true);
        auto loss_fn = [&](const Var<double>& zz) {
            std::vector<Var<double>> wp(static_cast<size_t>(m.num_style_layers()), g.map_z(zz));
            auto img = g.synthesize(g.affine_styles(wp));
            return mean_all(square(sub(img, make_const(target))));
        };
        auto loss = loss_fn(zv);
        auto grads = backward(loss);
        const auto& ga = grad_of(grads, zv);

        // FD over the full z vector, compared in L2.
        double num = 0, den = 0;
        const double h = 1e-4;
        for (int64_t d = 0; d < 64; ++d) {
            const double z0 = zv->value[d];
            zv->value[d] = z0 + h;
            const double fp = loss_fn(zv)->value[0];
            zv->value[d] = z0 - h;
            const double fm = loss_fn(zv)->value[0];
            zv->value[d] = z0;
            const double fd = (fp - fm) / (2 * h);
            num += (fd - ga[d]) * (fd - ga[d]);
            den += fd * fd;
        }
        worst = std::max(worst, std::sqrt(num / std::max(den, 1e-30)));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("discriminator forward shape and R1 penalty finiteness") {
    auto m = desk_manifest();
    Discriminator<Real> d(m, 61);
    Rng rng(7);
    Tensor<Real> img({4, 3, 32, 32});
    rng.fill_uniform(img, -1.0, 1.0);
    auto x = make_leaf(img, true);
    auto logits = d.forward(x);
    CHECK(logits->value.shape() == Shape{4, 1});

    auto score = sum_all(logits);
    auto grads = backward(score, true);
    auto gx = grad_var(grads, x);
    auto penalty = sum_all(square(gx));
    auto pg = backward(penalty);
    int n_with_grad = 0;
    for (const auto& p : d.params())
        if (has_grad(pg, p.var)) ++n_with_grad;
    CHECK(n_with_grad > 0);
}
