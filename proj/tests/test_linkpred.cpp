#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rrgcn/linkpred.hpp"
#include "test_util.hpp"

using namespace rrgcn;

namespace {

MatF random_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
    SplitMix64 rng(seed);
    MatF x(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = float(rng.uniform() * 2 - 1);
    return x;
}

}  // namespace

TEST_CASE("fit_pca: rank-1 data reconstructs with k=1") {
    SplitMix64 rng(1);
    MatF x(50, 3);
    Eigen::RowVector3f dir(1.0f, -2.0f, 0.5f);
    for (Eigen::Index i = 0; i < 50; ++i) x.row(i) = float(rng.uniform() * 4 - 2) * dir;
    auto pca = fit_pca(x, 1);
    MatD proj = pca_transform(pca, x);
    // Reconstruct in normalised space and compare.
    MatD xs = x.cast<double>();
    xs.rowwise() -= pca.mean.transpose();
    xs.array().rowwise() /= pca.scale.transpose().array();
    MatD recon = proj * pca.components.transpose();
    double rel = (recon - xs).norm() / xs.norm();
    CHECK(rel < 1e-6);
}

TEST_CASE("fit_pca: isotropic data spreads explained variance evenly") {
    // Box-Muller standard normals in every dimension.
    SplitMix64 rng(2);
    const Eigen::Index n = 20000, d = 4;
    MatF x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
            x(i, j) = float(std::sqrt(-2 * std::log(u1)) * std::cos(6.283185307 * u2));
        }
    }
    auto pca = fit_pca(x, d);
    double total = pca.explained_variance.sum();
    for (Eigen::Index c = 0; c < d; ++c) {
        double share = pca.explained_variance(c) / total;
        CHECK(share == doctest::Approx(1.0 / double(d)).epsilon(0.10));
    }
}

TEST_CASE("fit_pca: matches dense eigendecomposition oracle up to sign") {
    MatF x = random_matrix(3, 50, 8);
    auto pca = fit_pca(x, 4);

    // Oracle: full eigendecomposition of the normalised covariance.
    MatD xs = x.cast<double>();
    VecD mean = xs.colwise().mean();
    xs.rowwise() -= mean.transpose();
    VecD scale = (xs.array().square().colwise().mean() + 1e-12).sqrt();
    xs.array().rowwise() /= scale.transpose().array();
    MatD cov = xs.transpose() * xs / 49.0;
    Eigen::SelfAdjointEigenSolver<MatD> eig(cov);
    MatD proj_fast = pca_transform(pca, x);
    for (int c = 0; c < 4; ++c) {
        VecD oracle_dir = eig.eigenvectors().col(7 - c);
        VecD fast_dir = pca.components.col(c);
        double dot = std::abs(oracle_dir.dot(fast_dir));
        CHECK(dot == doctest::Approx(1.0).epsilon(1e-4));
        // Projection columns agree up to sign.
        VecD oracle_proj = xs * oracle_dir;
        double diff = std::min((proj_fast.col(c) - oracle_proj).cwiseAbs().maxCoeff(),
                               (proj_fast.col(c) + oracle_proj).cwiseAbs().maxCoeff());
        CHECK(diff < 1e-4);
    }

    // Orthonormal columns.
    MatD gram = pca.components.transpose() * pca.components;
    CHECK((gram - MatD::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-4);

    CHECK_THROWS_AS(fit_pca(x, 9), DataError);
}

TEST_CASE("fit_pca: projection preserves inner products up to discarded variance") {
    MatF x = random_matrix(5, 40, 6);
    auto pca = fit_pca(x, 6);  // full rank: inner products preserved exactly
    MatD xs = x.cast<double>();
    xs.rowwise() -= pca.mean.transpose();
    xs.array().rowwise() /= pca.scale.transpose().array();
    MatD proj = pca_transform(pca, x);
    MatD g_full = xs * xs.transpose();
    MatD g_proj = proj * proj.transpose();
    CHECK((g_full - g_proj).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("score: zero relation vector, symmetry, identity debug mode") {
    Decoder dec = init_decoder(4, 4, 2, 7);
    VecD zh(4), zt(4);
    zh << 0.3, -0.2, 0.5, 0.1;
    zt << -0.4, 0.8, 0.2, -0.1;

    dec.relation_weights.row(0).setZero();
    CHECK(score(dec, zh, zt, 0) == 0.0);

    // DistMult symmetry in head/tail for any relation.
    CHECK(score(dec, zh, zt, 1) == doctest::Approx(score(dec, zt, zh, 1)).epsilon(1e-12));

    CHECK_THROWS_AS(score(dec, zh, zt, 5), DataError);

    // f = identity: unit relation vector and equal unit inputs score 1.
    Decoder ident;
    ident.w1 = MatD::Identity(4, 4);
    ident.w2 = MatD::Identity(4, 4);
    ident.w3 = MatD::Identity(4, 4);
    ident.b1 = ident.b2 = ident.b3 = VecD::Zero(4);
    ident.relation_weights = MatD::Ones(1, 4);
    VecD unit(4);
    unit << 1, 0, 0, 0;
    CHECK(score(ident, unit, unit, 0) == doctest::Approx(1.0));
}

TEST_CASE("decoder gradient matches central finite differences") {
    const std::uint32_t entities = 12, relations = 3, dim = 6, width = 5;
    MatD z = random_matrix(11, entities, dim).cast<double>();
    Decoder dec = init_decoder(dim, width, relations, 13);
    SplitMix64 rng(17);
    std::vector<LabeledTriple> batch;
    for (int i = 0; i < 16; ++i) {
        Triple t{NodeId(rng.next() % entities), RelationId(rng.next() % relations),
                 NodeId(rng.next() % entities)};
        batch.push_back({t, double(rng.next() & 1)});
    }
    Decoder grad = decoder_gradient(dec, batch, z);

    auto check_param = [&](auto& param, const auto& g) {
        for (int trial = 0; trial < 3; ++trial) {
            Eigen::Index i = Eigen::Index(rng.next() % std::uint64_t(param.rows()));
            Eigen::Index j = Eigen::Index(rng.next() % std::uint64_t(param.cols()));
            const double step = 1e-6;
            double saved = param(i, j);
            param(i, j) = saved + step;
            double lp = decoder_loss(dec, batch, z);
            param(i, j) = saved - step;
            double lm = decoder_loss(dec, batch, z);
            param(i, j) = saved;
            double numeric = (lp - lm) / (2 * step);
            double denom = std::max({std::abs(numeric), std::abs(g(i, j)), 1e-10});
            CHECK(std::abs(numeric - g(i, j)) / denom < 1e-3);
        }
    };
    check_param(dec.w1, grad.w1);
    check_param(dec.w2, grad.w2);
    check_param(dec.w3, grad.w3);
    check_param(dec.relation_weights, grad.relation_weights);
    check_param(dec.b3, grad.b3);
}

TEST_CASE("rank_filtered: scorer with the true entity strictly highest gives FMRR 1") {
    // Identity MLP and z_i = (i+1) * ones: score(h, r, t) = m (h+1)(t+1).
    // Every test triple points at entity m-1, so the true tail strictly
    // dominates; in the head direction the higher-scored corruptions are all
    // known-true and get filtered.
    const std::uint32_t m = 6;
    Decoder ident;
    ident.w1 = MatD::Identity(m, m);
    ident.w2 = MatD::Identity(m, m);
    ident.w3 = MatD::Identity(m, m);
    ident.b1 = ident.b2 = ident.b3 = VecD::Zero(m);
    ident.relation_weights = MatD::Ones(1, m);

    MatD z(m, m);
    for (std::uint32_t i = 0; i < m; ++i)
        z.row(i) = VecD::Constant(m, double(i + 1)).transpose();

    std::vector<Triple> test_triples, known;
    for (std::uint32_t i = 0; i + 1 < m; ++i) {
        test_triples.push_back({i, 0, m - 1});
        known.push_back({i, 0, m - 1});
    }
    known.push_back({m - 1, 0, m - 1});
    auto rep = rank_filtered(ident, test_triples, known, z, 1);
    CHECK(rep.fmrr == doctest::Approx(1.0));
    CHECK(rep.hits1 == doctest::Approx(1.0));
    CHECK(rep.hits3 == doctest::Approx(1.0));
    CHECK(rep.hits10 == doctest::Approx(1.0));
}

TEST_CASE("rank_filtered: constant scorer ranks pessimistically last") {
    const std::uint32_t m = 8;
    Decoder zero;
    zero.w1 = MatD::Zero(m, m);
    zero.w2 = MatD::Zero(m, m);
    zero.w3 = MatD::Zero(m, m);
    zero.b1 = zero.b2 = zero.b3 = VecD::Zero(m);
    zero.relation_weights = MatD::Zero(1, m);
    MatD z = MatD::Identity(m, m);
    std::vector<Triple> test_triples{{0, 0, 1}};
    auto rep = rank_filtered(zero, test_triples, test_triples, z, 1);
    // All m entities score equally; nothing filtered except the true triple
    // itself, so the pessimistic rank is m in both directions.
    CHECK(rep.fmrr == doctest::Approx(1.0 / double(m)));
    CHECK(rep.hits10 == (m <= 10 ? 1.0 : 0.0));
}

TEST_CASE("rank_filtered: hand-computed 5-entity KG with a filtered competitor") {
    // Identity decoder, 1 relation. Entities on distinct axes with varied
    // magnitudes give a strict score ordering we can enumerate by hand.
    const std::uint32_t m = 5;
    Decoder ident;
    ident.w1 = MatD::Identity(m, m);
    ident.w2 = MatD::Identity(m, m);
    ident.w3 = MatD::Identity(m, m);
    ident.b1 = ident.b2 = ident.b3 = VecD::Zero(m);
    ident.relation_weights = MatD::Ones(1, m);

    // z_i = v_i * ones: score(h, t) = m * v_h * v_t, ordered by v.
    VecD v(m);
    v << 0.1, 0.5, 0.2, 0.9, 0.4;
    MatD z(m, m);
    for (std::uint32_t i = 0; i < m; ++i) z.row(i) = VecD::Constant(m, v(i)).transpose();

    // Test triple (0, r, 2). Tail candidates by score: 3 (0.9), 1 (0.5),
    // 4 (0.4), 2 (0.2), 0 (0.1). Known triple (0, r, 3) filters candidate 3,
    // and (0, r, 2) itself is the truth; remaining better-scored: 1, 4 ->
    // rank 3. Unfiltered the rank would be 4.
    std::vector<Triple> test_triples{{0, 0, 2}};
    std::vector<Triple> known{{0, 0, 2}, {0, 0, 3}};
    auto rep = rank_filtered(ident, test_triples, known, z, 1);
    // Head direction for (0, r, 2): candidates ranked by v, truth v=0.1 is
    // the worst; filtered set removes nothing else -> rank 5.
    double expected = 0.5 * (1.0 / 3.0 + 1.0 / 5.0);
    CHECK(rep.fmrr == doctest::Approx(expected).epsilon(1e-12));

    // Filtering monotonicity: filtered rank <= raw rank.
    auto raw = rank_filtered(ident, test_triples, test_triples, z, 1);
    CHECK(rep.fmrr >= raw.fmrr);
}

TEST_CASE("rank_filtered: metric ordering invariant on random decoders") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::uint32_t entities = 20, relations = 3;
        Decoder dec = init_decoder(6, 8, relations, seed);
        MatD z = random_matrix(seed + 30, entities, 6).cast<double>();
        SplitMix64 rng(seed + 60);
        std::vector<Triple> test_triples, known;
        for (int i = 0; i < 15; ++i) {
            Triple t{NodeId(rng.next() % entities), RelationId(rng.next() % relations),
                     NodeId(rng.next() % entities)};
            test_triples.push_back(t);
            known.push_back(t);
        }
        auto rep = rank_filtered(dec, test_triples, known, z, relations);
        CHECK(rep.hits1 <= rep.hits3);
        CHECK(rep.hits3 <= rep.hits10);
        CHECK(rep.hits10 <= 1.0);
        CHECK(rep.hits1 <= rep.fmrr);
        CHECK(rep.fmrr <= 1.0);
    }
}

TEST_CASE("train_decoder: planted cycle pattern reaches FMRR > 0.9") {
    // Relation r is the adjacency of a 20-cycle, stored in both directions so
    // the filter removes the reverse edge (the kernel is symmetric in h and t,
    // so the reverse of a positive always scores as high as the positive).
    const std::uint32_t m = 20, dim = 20, width = 16;
    MatD z = MatD::Identity(m, dim);
    z.array() += 0.01;  // break exact zeros

    TripleSplit split;
    for (std::uint32_t i = 0; i < m; ++i) {
        split.train.push_back({i, 0, (i + 1) % m});
        split.train.push_back({(i + 1) % m, 0, i});
        split.val.push_back({i, 0, (i + 1) % m});
    }
    Decoder dec = init_decoder(dim, width, 1, 42);

    // Untrained baseline.
    std::vector<Triple> filter = split.train;
    auto before = rank_filtered(dec, split.val, filter, z, 1);

    DecoderTrainOptions opts;
    opts.learning_rate = 0.5;
    opts.max_epochs = 1200;
    opts.patience = 100;
    opts.batch_size = 40;
    opts.neg_per_pos = 4;
    opts.clip_norm = 5.0;
    opts.seed = 3;
    Decoder trained = train_decoder(dec, split, z, opts);
    auto after = rank_filtered(trained, split.val, filter, z, 1);
    CHECK(after.fmrr > 0.9);
    CHECK(after.fmrr > before.fmrr);
}

TEST_CASE("train_decoder: strict negatives never emit training triples") {
    // With a tiny entity set and strict mode, every sampled negative must
    // fall outside the train set; verified indirectly by constructing a KG
    // where only one corruption per direction is legal and training succeeds.
    const std::uint32_t m = 4, dim = 4;
    MatD z = MatD::Identity(m, dim);
    TripleSplit split;
    split.train = {{0, 0, 1}, {1, 0, 2}, {2, 0, 3}};
    split.val = split.train;
    Decoder dec = init_decoder(dim, 4, 1, 1);
    DecoderTrainOptions opts;
    opts.strict_negatives = true;
    opts.max_epochs = 5;
    opts.seed = 9;
    CHECK_NOTHROW(train_decoder(dec, split, z, opts));
}

TEST_CASE("train_decoder: deterministic for a fixed seed") {
    const std::uint32_t m = 10, dim = 8;
    MatD z = random_matrix(70, m, dim).cast<double>();
    TripleSplit split;
    SplitMix64 rng(71);
    for (int i = 0; i < 30; ++i)
        split.train.push_back(
            {NodeId(rng.next() % m), 0, NodeId(rng.next() % m)});
    split.val = {split.train[0], split.train[1]};
    Decoder dec = init_decoder(dim, 6, 1, 5);
    DecoderTrainOptions opts;
    opts.max_epochs = 3;
    opts.seed = 11;
    Decoder a = train_decoder(dec, split, z, opts);
    Decoder b = train_decoder(dec, split, z, opts);
    CHECK(a.w1.cwiseEqual(b.w1).all());
    CHECK(a.relation_weights.cwiseEqual(b.relation_weights).all());
}

TEST_CASE("decoder checkpoint round trip") {
    Decoder dec = init_decoder(6, 5, 3, 21);
    std::ostringstream buf(std::ios::binary);
    write_decoder(buf, dec);
    std::istringstream in(buf.str());
    Decoder dec2 = read_decoder(in);
    CHECK(dec2.w1.cwiseEqual(dec.w1).all());
    CHECK(dec2.w3.cwiseEqual(dec.w3).all());
    CHECK(dec2.relation_weights.cwiseEqual(dec.relation_weights).all());
    CHECK(dec2.b2.cwiseEqual(dec.b2).all());
}
