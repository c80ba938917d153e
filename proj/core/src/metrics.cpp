#include "stylealign/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "stylealign/checkpoint.hpp"
#include "stylealign/ops.hpp"
#include "stylealign/thread_pool.hpp"

#include <nlohmann/json.hpp>

namespace stylealign {

using nlohmann::json;

// ------------------------------------------------------------- perceptual

namespace {

constexpr double kFeatEps = 1e-6;

// Per-channel RMS normalization: f[c] / sqrt(mean_hw(f[c]^2) + eps).
Var<Real> rms_normalize(const Var<Real>& f) {
    const auto& s = f->value.shape();
    const double inv_hw = 1.0 / static_cast<double>(s[2] * s[3]);
    auto ms = scale(sum_hw(square(f)), inv_hw);         // [B,C]
    return mul_channelwise(f, rsqrt_eps(ms, kFeatEps)); // broadcast multiply
}

} // namespace

PerceptualProxy::PerceptualProxy() {
    Rng rng = Rng::keyed(0x9c0ffeeULL, {rng_tag::perceptual});
    const int chans[4] = {3, 16, 32, 64};
    for (int i = 0; i < 3; ++i) {
        Tensor<Real> w({chans[i + 1], chans[i], 3, 3});
        rng.fill_normal(w, std::sqrt(2.0 / (chans[i] * 9)));
        conv_.push_back(make_const(std::move(w)));
    }
}

const PerceptualProxy& PerceptualProxy::instance() {
    static PerceptualProxy p;
    return p;
}

std::vector<Var<Real>> PerceptualProxy::normalized_features(const Var<Real>& x) const {
    std::vector<Var<Real>> feats;
    Var<Real> h = x;
    for (size_t i = 0; i < conv_.size(); ++i) {
        if (i > 0) h = avgpool2(h);
        h = leaky_relu(conv2d(h, conv_[i], 1, 1), 0.2);
        feats.push_back(rms_normalize(h));
    }
    return feats;
}

Var<Real> PerceptualProxy::distance_sum(const Var<Real>& a, const Var<Real>& b) const {
    if (a->value.shape() != b->value.shape())
        throw std::invalid_argument("perceptual distance: resolution mismatch " +
                                    shape_str(a->value.shape()) + " vs " +
                                    shape_str(b->value.shape()));
    auto fa = normalized_features(a);
    auto fb = normalized_features(b);
    Var<Real> total;
    for (size_t s = 0; s < fa.size(); ++s) {
        const auto& sh = fa[s]->value.shape();
        const double inv = 1.0 / static_cast<double>(sh[1] * sh[2] * sh[3]);
        auto term = scale(sum_all(square(sub(fa[s], fb[s]))), inv);
        total = total ? add(total, term) : term;
    }
    return total;
}

std::vector<double> PerceptualProxy::batch_distance(const ImageBatch& a,
                                                    const ImageBatch& b) const {
    NoGradGuard ng(false);
    if (a.shape() != b.shape())
        throw std::invalid_argument("perceptual distance: resolution mismatch");
    auto fa = normalized_features(make_const(a));
    auto fb = normalized_features(make_const(b));
    const int64_t B = a.dim(0);
    std::vector<double> out(static_cast<size_t>(B), 0.0);
    for (size_t s = 0; s < fa.size(); ++s) {
        const auto& sh = fa[s]->value.shape();
        const int64_t per = sh[1] * sh[2] * sh[3];
        const Real* pa = fa[s]->value.data();
        const Real* pb = fb[s]->value.data();
        for (int64_t bi = 0; bi < B; ++bi) {
            double acc = 0;
            const Real* xa = pa + bi * per;
            const Real* xb = pb + bi * per;
            for (int64_t i = 0; i < per; ++i) {
                const double d = static_cast<double>(xa[i]) - xb[i];
                acc += d * d;
            }
            out[static_cast<size_t>(bi)] += acc / static_cast<double>(per);
        }
    }
    return out;
}

double PerceptualProxy::distance(const Image& a, const Image& b) const {
    return batch_distance(stack_images({a}), stack_images({b}))[0];
}

double mean_perceptual(const ImageBatch& a, const ImageBatch& b) {
    const int64_t n = std::min(a.dim(0), b.dim(0));
    auto da = PerceptualProxy::instance().batch_distance(a, b);
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += da[static_cast<size_t>(i)];
    return acc / static_cast<double>(n);
}

// --------------------------------------------------------------- embedder

struct Embedder::Heads {
    Var<Real> features;  // [B, 64]
    Var<Real> domain, rot, hue, scales, texture, family;
};

void Embedder::build(Rng& rng) {
    convs_.push_back(Conv<Real>::create(params_, "emb.c0", 3, 16, 3, rng));
    convs_.push_back(Conv<Real>::create(params_, "emb.c1", 16, 32, 3, rng));
    convs_.push_back(Conv<Real>::create(params_, "emb.c2", 32, 64, 3, rng));
    trunk_fc_ = Linear<Real>::create(params_, "emb.fc", 64 * 16, 64, rng);
    head_domain_ = Linear<Real>::create(params_, "emb.h_domain", 64,
                                        static_cast<int64_t>(domain_names_.size()), rng, 1.0);
    head_rot_ = Linear<Real>::create(params_, "emb.h_rot", 64, 1, rng, 1.0);
    head_hue_ = Linear<Real>::create(params_, "emb.h_hue", 64, 2, rng, 1.0);
    head_scale_ = Linear<Real>::create(params_, "emb.h_scale", 64, 3, rng, 1.0);
    head_texture_ = Linear<Real>::create(params_, "emb.h_texture", 64, 4, rng, 1.0);
    head_family_ = Linear<Real>::create(params_, "emb.h_family", 64, 2, rng, 1.0);
}

Embedder::Heads Embedder::forward(const Var<Real>& img) const {
    Var<Real> h = img;
    for (size_t i = 0; i < convs_.size(); ++i) {
        h = leaky_relu(convs_[i](h), 0.2);
        h = avgpool2(h);
    }
    const auto& s = h->value.shape();
    auto flat = reshape(h, {s[0], s[1] * s[2] * s[3]});
    auto feat = leaky_relu(trunk_fc_(flat), 0.2);
    Heads out;
    out.features = feat;
    out.domain = head_domain_(feat);
    out.rot = head_rot_(feat);
    out.hue = head_hue_(feat);
    out.scales = head_scale_(feat);
    out.texture = head_texture_(feat);
    out.family = head_family_(feat);
    return out;
}

ImageBatch Embedder::prepare(const ImageBatch& batch) const {
    if (batch.dim(2) == res_) return batch;
    return resize_nearest(batch, res_);
}

Embedder Embedder::train(const std::vector<const FactorDataset*>& domains, const Config& cfg0,
                         uint64_t seed) {
    if (domains.size() < 2) throw std::invalid_argument("embedder: need at least 2 domains");
    Config cfg = cfg0;
    const int64_t epochs = cfg.get_int("emb_epochs", 6);
    const int64_t batch = cfg.get_int("emb_batch", 32);
    const double lr = cfg.get_double("emb_lr", 1e-3);
    const int64_t per_domain = cfg.get_int("emb_per_domain", 1000);

    Embedder emb;
    emb.res_ = domains[0]->resolution;
    for (const auto* d : domains) emb.domain_names_.push_back(d->domain_id);
    Rng rng = Rng::keyed(seed, {rng_tag::embedder});
    emb.build(rng);

    // Flatten the meta-dataset.
    struct Item {
        const FactorDataset* ds;
        int64_t index;
        int domain;
    };
    std::vector<Item> items;
    for (size_t d = 0; d < domains.size(); ++d) {
        const int64_t n = std::min<int64_t>(per_domain, domains[d]->size());
        for (int64_t i = 0; i < n; ++i)
            items.push_back({domains[d], i, static_cast<int>(d)});
    }

    Adam<Real> opt(lr, 0.9, 0.999);
    opt.attach(emb.params_);
    const int64_t steps_per_epoch = static_cast<int64_t>(items.size()) / batch;
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        Rng shuffle_rng = Rng::keyed(seed, {rng_tag::embedder, 100, static_cast<uint64_t>(epoch)});
        auto perm = shuffle_rng.permutation(static_cast<int64_t>(items.size()));
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            ImageBatch x({batch, 3, emb.res_, emb.res_});
            std::vector<int> domain_lbl, texture_lbl, family_lbl;
            Tensor<Real> rot({batch, 1}), hue({batch, 2}), scales({batch, 3});
            for (int64_t b = 0; b < batch; ++b) {
                const Item& it = items[static_cast<size_t>(perm[step * batch + b])];
                const Image& img = it.ds->images[static_cast<size_t>(it.index)];
                std::copy(img.pixels.data(), img.pixels.data() + img.pixels.numel(),
                          x.data() + b * img.pixels.numel());
                const FactorVector& f = it.ds->factors[static_cast<size_t>(it.index)];
                domain_lbl.push_back(it.domain);
                texture_lbl.push_back(f.texture_id);
                family_lbl.push_back(f.shape_family);
                rot[b] = static_cast<Real>(f.rotation / 40.0);
                hue[b * 2 + 0] = static_cast<Real>(std::cos(2 * M_PI * f.hue));
                hue[b * 2 + 1] = static_cast<Real>(std::sin(2 * M_PI * f.hue));
                for (int k = 0; k < 3; ++k)
                    scales[b * 3 + k] = static_cast<Real>(f.part_scale[static_cast<size_t>(k)] - 1.0);
            }
            auto heads = emb.forward(make_const(x));
            auto loss = softmax_cross_entropy(heads.domain, domain_lbl);
            loss = add(loss, softmax_cross_entropy(heads.texture, texture_lbl));
            loss = add(loss, softmax_cross_entropy(heads.family, family_lbl));
            loss = add(loss, scale(mse(heads.rot, make_const(rot)), 4.0));
            loss = add(loss, scale(mse(heads.hue, make_const(hue)), 4.0));
            loss = add(loss, scale(mse(heads.scales, make_const(scales)), 2.0));
            if (!all_finite(loss->value))
                throw std::runtime_error("embedder training diverged (non-finite loss)");
            auto grads = backward(loss);
            opt.step(grads);
        }
    }
    return emb;
}

Tensor<double> Embedder::features(const ImageBatch& batch) const {
    NoGradGuard ng(false);
    auto heads = forward(make_const(prepare(batch)));
    return heads.features->value.cast<double>();
}

std::vector<int> Embedder::domain_classify_batch(const ImageBatch& batch) const {
    NoGradGuard ng(false);
    auto heads = forward(make_const(prepare(batch)));
    const auto& v = heads.domain->value;
    const int64_t B = v.dim(0), K = v.dim(1);
    std::vector<int> out;
    for (int64_t b = 0; b < B; ++b) {
        int best = 0;
        for (int64_t k = 1; k < K; ++k)
            if (v[b * K + k] > v[b * K + best]) best = static_cast<int>(k);
        out.push_back(best);
    }
    return out;
}

std::string Embedder::domain_classify(const Image& img) const {
    return domain_names_[static_cast<size_t>(domain_classify_batch(stack_images({img}))[0])];
}

int Embedder::domain_index(const std::string& name) const {
    for (size_t i = 0; i < domain_names_.size(); ++i)
        if (domain_names_[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("embedder does not know domain " + name);
}

std::vector<FactorVector> Embedder::factor_probe_batch(const ImageBatch& batch) const {
    NoGradGuard ng(false);
    auto heads = forward(make_const(prepare(batch)));
    const int64_t B = batch.dim(0);
    std::vector<FactorVector> out(static_cast<size_t>(B));
    const auto& rot = heads.rot->value;
    const auto& hue = heads.hue->value;
    const auto& sc = heads.scales->value;
    const auto& tex = heads.texture->value;
    const auto& fam = heads.family->value;
    for (int64_t b = 0; b < B; ++b) {
        FactorVector f;
        f.rotation = std::clamp(static_cast<double>(rot[b]) * 40.0, -40.0, 40.0);
        double a = std::atan2(static_cast<double>(hue[b * 2 + 1]),
                              static_cast<double>(hue[b * 2 + 0])) / (2 * M_PI);
        if (a < 0) a += 1.0;
        f.hue = a;
        for (int k = 0; k < 3; ++k)
            f.part_scale[static_cast<size_t>(k)] =
                std::clamp(static_cast<double>(sc[b * 3 + k]) + 1.0, 0.5, 1.5);
        int tbest = 0;
        for (int k = 1; k < 4; ++k)
            if (tex[b * 4 + k] > tex[b * 4 + tbest]) tbest = k;
        f.texture_id = tbest;
        f.shape_family = fam[b * 2 + 1] > fam[b * 2 + 0] ? 1 : 0;
        out[static_cast<size_t>(b)] = f;
    }
    return out;
}

FactorVector Embedder::factor_probe(const Image& img) const {
    return factor_probe_batch(stack_images({img}))[0];
}

void Embedder::save(const std::string& path) const {
    NamedTensors<float> named;
    for (const auto& p : params_) named.put(p.name, p.var->value);
    json meta{{"kind", "embedder"},
              {"resolution", res_},
              {"feature_dim", feature_dim()},
              {"domains", domain_names_}};
    save_named_tensors(path, named, meta.dump());
}

Embedder Embedder::load(const std::string& path) {
    auto [named, meta_s] = load_named_tensors(path);
    json meta = json::parse(meta_s);
    if (meta.at("kind").get<std::string>() != "embedder")
        throw std::runtime_error("not an embedder file: " + path);
    Embedder emb;
    emb.res_ = meta.at("resolution").get<int>();
    emb.domain_names_ = meta.at("domains").get<std::vector<std::string>>();
    Rng rng = Rng::keyed(0, {rng_tag::embedder});
    emb.build(rng);
    for (auto& p : emb.params_) p.var->value = named.get(p.name).clone();
    return emb;
}

// ------------------------------------------------------------ FID and KID

namespace {

void moments(const Tensor<double>& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov,
             double shrinkage) {
    const int64_t n = f.dim(0), d = f.dim(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        f.data(), n, d);
    mu = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
    cov.diagonal().array() += shrinkage;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double fid_from_features(const Tensor<double>& fa, const Tensor<double>& fb, double shrinkage) {
    const int64_t d = fa.dim(1);
    if (fa.dim(0) < d + 1 || fb.dim(0) < d + 1)
        throw std::invalid_argument("fid: need at least feature_dim + 1 samples per set");
    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd c1, c2;
    moments(fa, mu1, c1, shrinkage);
    moments(fb, mu2, c2, shrinkage);
    Eigen::MatrixXd s1 = psd_sqrt(c1);
    Eigen::MatrixXd mid = psd_sqrt(s1 * c2 * s1);
    const double mean_term = (mu1 - mu2).squaredNorm();
    const double trace_term = (c1 + c2 - 2.0 * mid).trace();
    return mean_term + trace_term;
}

double kid_from_features(const Tensor<double>& fa, const Tensor<double>& fb, int64_t block) {
    const int64_t na = fa.dim(0), nb = fb.dim(0), d = fa.dim(1);
    if (na < 20 || nb < 20) throw std::invalid_argument("kid: need at least 20 samples per set");
    const int64_t m = std::min({block, na, nb});
    const int64_t blocks = std::min(na, nb) / m;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
        fa.data(), na, d);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
        fb.data(), nb, d);
    auto kernel = [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
        Eigen::MatrixXd k = (X * Y.transpose() / static_cast<double>(d)).array() + 1.0;
        return k.array().cube().matrix().eval();
    };
    double acc = 0;
    for (int64_t bl = 0; bl < blocks; ++bl) {
        Eigen::MatrixXd X = A.middleRows(bl * m, m);
        Eigen::MatrixXd Y = B.middleRows(bl * m, m);
        Eigen::MatrixXd kxx = kernel(X, X);
        Eigen::MatrixXd kyy = kernel(Y, Y);
        Eigen::MatrixXd kxy = kernel(X, Y);
        const double mm = static_cast<double>(m);
        const double exx = (kxx.sum() - kxx.trace()) / (mm * (mm - 1));
        const double eyy = (kyy.sum() - kyy.trace()) / (mm * (mm - 1));
        const double exy = kxy.sum() / (mm * mm);
        acc += exx + eyy - 2 * exy;
    }
    return acc / static_cast<double>(blocks);
}

double fid(const ImageBatch& a, const ImageBatch& b, const Embedder& emb) {
    return fid_from_features(emb.features(a), emb.features(b));
}

double kid(const ImageBatch& a, const ImageBatch& b, const Embedder& emb) {
    return kid_from_features(emb.features(a), emb.features(b));
}

ImageBatch resize_nearest(const ImageBatch& batch, int res) {
    const int64_t B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    ImageBatch out({B, C, res, res});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < res; ++y)
                for (int64_t x = 0; x < res; ++x) {
                    const int64_t sy = y * H / res;
                    const int64_t sx = x * W / res;
                    out[((b * C + c) * res + y) * res + x] =
                        batch[((b * C + c) * H + sy) * W + sx];
                }
    return out;
}

} // namespace stylealign
