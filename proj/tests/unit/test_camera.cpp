// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "c3gs/c3gs.hpp"
#include "oracles.hpp"

using namespace c3gs;

namespace {

PinholeCamera simple_camera(std::size_t W = 8, std::size_t H = 6) {
    PinholeCamera c;
    c.width = W;
    c.height = H;
    c.K << 10, 0, W / 2.0, 0, 10, H / 2.0, 0, 0, 1;
    c.depth_min = 1;
    c.depth_max = 10;
    return c;
}

}  // namespace

TEST(CameraText, RoundTripIsExact) {
    auto rng = SeededRng(1).stream("t");
    for (int i = 0; i < 20; ++i) {
        const PinholeCamera c = oracle::random_camera(rng);
        const PinholeCamera back = parse_camera_text(format_camera_text(c), c.width, c.height);
        EXPECT_EQ(back.K, c.K);
        EXPECT_EQ(back.R, c.R);
        EXPECT_EQ(back.t, c.t);
        EXPECT_EQ(back.depth_min, c.depth_min);
        EXPECT_EQ(back.depth_max, c.depth_max);
    }
}

TEST(CameraText, MalformedNamesField) {
    try {
        parse_camera_text("extrinsic\n1 0 0\n", 4, 4, "cam.txt");
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("cam.txt"), std::string::npos);
    }
}

TEST(Camera, ValidateRejectsBadRotation) {
    PinholeCamera c = simple_camera();
    c.R(0, 0) = 2;
    EXPECT_THROW(c.validate(), Error);
    c = simple_camera();
    c.depth_min = 5;
    c.depth_max = 4;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Hypotheses, CoarseEndpointsAndStep) {
    PinholeCamera c = simple_camera();
    c.depth_min = 2.5;
    c.depth_max = 10;
    const auto h = sample_depth_hypotheses(c, 64, HypothesisSpacing::UniformDepth, 2, 3);
    EXPECT_FLOAT_EQ(h.values.at(0, 1, 2), 2.5f);
    EXPECT_FLOAT_EQ(h.values.at(63, 0, 0), 10.0f);
    EXPECT_NEAR(h.values.at(1, 0, 0) - h.values.at(0, 0, 0), 7.5 / 63, 1e-6);
}

TEST(Hypotheses, InverseDepthLadder) {
    const auto d = depth_ladder(1, 3, 3, HypothesisSpacing::UniformInverseDepth);
    EXPECT_NEAR(d[0], 1.0, 1e-12);
    EXPECT_NEAR(d[1], 1.5, 1e-12);
    EXPECT_NEAR(d[2], 3.0, 1e-12);
}

TEST(Hypotheses, FineRangeAroundCenter) {
    const PinholeCamera c = simple_camera();
    DepthMap center{Tensor({2, 2}, 5.0f), Mask(2, 2, true)};
    const auto h = sample_depth_hypotheses(c, 8, HypothesisSpacing::UniformDepth, center, Tensor({2, 2}, 0.5f));
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_GE(h.values.at(k, 1, 1), 4.5f);
        EXPECT_LE(h.values.at(k, 1, 1), 5.5f);
        if (k) {
            EXPECT_GT(h.values.at(k, 0, 0), h.values.at(k - 1, 0, 0));
        }
    }
    EXPECT_THROW(sample_depth_hypotheses(c, 1, HypothesisSpacing::UniformDepth, 2, 2), Error);
    EXPECT_THROW(sample_depth_hypotheses(c, 8, HypothesisSpacing::UniformDepth, std::nullopt, Tensor({2, 2})), Error);
}

TEST(Hypotheses, StrictlyIncreasingProperty) {
    auto rng = SeededRng(2).stream("t");
    for (int i = 0; i < 50; ++i) {
        PinholeCamera c = simple_camera(4, 3);
        c.depth_min = rng.uniform(0.5, 5);
        c.depth_max = c.depth_min + rng.uniform(0.1, 50);
        DepthMap center{oracle::random_tensor(rng, {3, 4}, 0, 60), Mask(3, 4, true)};
        const auto spacing = i % 2 ? HypothesisSpacing::UniformDepth : HypothesisSpacing::UniformInverseDepth;
        const auto h = sample_depth_hypotheses(c, 8, spacing, center, oracle::random_tensor(rng, {3, 4}, 0, 3));
        for (std::size_t p = 0; p < 12; ++p)
            for (std::size_t k = 0; k < 8; ++k) {
                const float v = h.values[k * 12 + p];
                EXPECT_GE(v, static_cast<float>(c.depth_min) * (1 - 1e-6f));
                EXPECT_LE(v, static_cast<float>(c.depth_max) * (1 + 1e-6f));
                if (k) {
                    EXPECT_GE(v, h.values[(k - 1) * 12 + p]);
                }
            }
    }
}

TEST(Homography, IdentityForSameCamera) {
    const PinholeCamera c = simple_camera();
    const Eigen::Matrix3d H = homography_for_plane(c, c, 3.0);
    EXPECT_LE((H / H(2, 2) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Homography, AxialTranslationMatchesProjection) {
    const PinholeCamera tgt = simple_camera(64, 48);
    PinholeCamera src = tgt;
    const double delta = 0.7, d = 4.0;
    src.t = Eigen::Vector3d(0, 0, -delta);  // center at (0, 0, delta)
    const Eigen::Matrix3d H = homography_for_plane(src, tgt, d);
    double sx, sy;
    ASSERT_TRUE(warp_coordinate(H, 31, 23, sx, sy));  // pixel center (31.5, 23.5) is off the principal point (32, 24)
    const double scale = d / (d - delta);
    EXPECT_NEAR(sx + 0.5, 32 + (31.5 - 32) * scale, 1e-9);
    EXPECT_NEAR(sy + 0.5, 24 + (23.5 - 24) * scale, 1e-9);
    const Eigen::Vector3d c = H * Eigen::Vector3d(32, 24, 1);
    EXPECT_NEAR(c.x() / c.z(), 32, 1e-9);
    EXPECT_NEAR(c.y() / c.z(), 24, 1e-9);
}

TEST(Homography, MatchesTransferOracleOnRandomRigs) {
    auto rng = SeededRng(3).stream("t");
    for (int i = 0; i < 100; ++i) {
        const PinholeCamera a = oracle::random_camera(rng), b = oracle::random_camera(rng);
        const double z = rng.uniform(2, 10);
        const std::size_t x = oracle::random_size(rng, 0, 63), y = oracle::random_size(rng, 0, 47);
        double sx, sy;
        if (!warp_coordinate(homography_for_plane(a, b, z), x, y, sx, sy)) continue;
        const Eigen::Vector2d ref = oracle::transfer_pixel(a, b, x + 0.5, y + 0.5, z);
        EXPECT_NEAR(sx + 0.5, ref.x(), 1e-6 * (1 + std::abs(ref.x())));
        EXPECT_NEAR(sy + 0.5, ref.y(), 1e-6 * (1 + std::abs(ref.y())));
    }
}

TEST(Homography, SyntheticRigAlignsAtTrueDepth) {
    SyntheticSpec spec;
    spec.width = 80;
    spec.height = 64;
    const SyntheticScene s = generate_synthetic_scene(spec);
    const PinholeCamera& tgt = s.cameras[0];
    for (std::size_t v = 1; v < s.cameras.size(); ++v) {
        const Eigen::Matrix3d H = homography_for_plane(s.cameras[v], tgt, spec.plane_depth);
        double worst = 0;
        for (std::size_t y = 0; y < spec.height; y += 3)
            for (std::size_t x = 0; x < spec.width; x += 3) {
                double sx, sy;
                ASSERT_TRUE(warp_coordinate(H, x, y, sx, sy));
                const Eigen::Vector3d p = s.cameras[v].project(tgt.unproject(x + 0.5, y + 0.5, spec.plane_depth));
                worst = std::max(worst, std::hypot(sx + 0.5 - p.x(), sy + 0.5 - p.y()));
            }
        EXPECT_LT(worst, 0.5);
    }
}

TEST(WarpFeature, IdentityAndShift) {
    auto rng = SeededRng(4).stream("t");
    const Tensor f = oracle::random_tensor(rng, {2, 5, 6});
    const Sampled same = warp_feature(f, Eigen::Matrix3d::Identity(), 5, 6);
    EXPECT_EQ(same.values, f);
    EXPECT_EQ(same.valid.count(), 30u);
    Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
    shift(0, 2) = 1;
    const Sampled moved = warp_feature(f, shift, 5, 6);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 5; ++y) {
            for (std::size_t x = 0; x + 1 < 6; ++x) EXPECT_EQ(moved.values.at(c, y, x), f.at(c, y, x + 1));
            EXPECT_FALSE(moved.valid(y, 5));
            EXPECT_EQ(moved.values.at(c, y, 5), 0.0f);
        }
}

TEST(WarpFeature, RandomHomographyMatchesScalarOracle) {
    auto rng = SeededRng(5).stream("t");
    const Tensor f = oracle::random_tensor(rng, {3, 9, 11});
    for (int i = 0; i < 10; ++i) {
        Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) H(r, c) += rng.uniform(-0.2, 0.2) * (c == 2 ? 10 : 1);
        H(2, 0) = rng.uniform(-0.01, 0.01);
        H(2, 1) = rng.uniform(-0.01, 0.01);
        const Sampled s = warp_feature(f, H, 9, 11);
        for (std::size_t y = 0; y < 9; ++y)
            for (std::size_t x = 0; x < 11; ++x) {
                const Eigen::Vector3d q = H * Eigen::Vector3d(x + 0.5, y + 0.5, 1);
                for (std::size_t c = 0; c < 3; ++c) {
                    double ref = 0;
                    const bool ok = oracle::bilinear(f, c, q.x() / q.z() - 0.5, q.y() / q.z() - 0.5, ref);
                    ASSERT_EQ(ok, s.valid(y, x));
                    EXPECT_NEAR(s.values.at(c, y, x), ok ? ref : 0.0, 1e-6);
                }
            }
    }
}

TEST(Backproject, PrincipalPointAndRoundTrip) {
    PinholeCamera c = simple_camera(8, 6);
    c.K(0, 2) = 3.5;
    c.K(1, 2) = 2.5;
    DepthMap d{Tensor({6, 8}, 4.0f), Mask(6, 8, true)};
    const PointGrid g = backproject_depth(d, c);
    EXPECT_LE((g(2, 3) - Eigen::Vector3d(0, 0, 4)).norm(), 1e-12);

    auto rng = SeededRng(6).stream("t");
    for (int i = 0; i < 100; ++i) {
        const PinholeCamera cam = oracle::random_camera(rng);
        DepthMap dm{oracle::random_tensor(rng, {cam.height, cam.width}, 2, 10), Mask(cam.height, cam.width, true)};
        const PointGrid pts = backproject_depth(dm, cam);
        const std::size_t x = oracle::random_size(rng, 0, cam.width - 1), y = oracle::random_size(rng, 0, cam.height - 1);
        const Eigen::Vector3d p = cam.project(pts(y, x));
        EXPECT_LT(std::hypot(p.x() - (x + 0.5), p.y() - (y + 0.5)), 1e-4);
        EXPECT_NEAR(p.z(), dm.values.at(y, x), 1e-5);
    }
}

TEST(Backproject, SyntheticPlaneResidual) {
    SyntheticSpec spec;
    spec.width = 40;
    spec.height = 32;
    const SyntheticScene s = generate_synthetic_scene(spec);
    const PointGrid g = backproject_depth(s.depths[0], s.cameras[0]);
    for (const auto& p : g.points) EXPECT_LT(std::abs(p.z() - spec.plane_depth), 1e-4);
}

TEST(RayFeatures, SameCameraAndAntipodal) {
    const PinholeCamera c = simple_camera(4, 4);
    DepthMap d{Tensor({4, 4}, 3.0f), Mask(4, 4, true)};
    const PointGrid pts = backproject_depth(d, c);
    const Tensor same = ray_direction_features(c, c, pts);
    for (std::size_t p = 0; p < 16; ++p) {
        EXPECT_EQ(same[p], 0.0f);
        EXPECT_EQ(same[16 + p], 0.0f);
        EXPECT_EQ(same[32 + p], 0.0f);
        EXPECT_NEAR(same[48 + p], 1.0f, 1e-6);
    }
    PinholeCamera opposite = c;
    look_at(opposite, Eigen::Vector3d(0, 0, 6), Eigen::Vector3d(0, 0, 0));
    PinholeCamera centered = c;
    centered.K(0, 2) = 2.5;
    centered.K(1, 2) = 2.5;
    const PointGrid p2 = backproject_depth(d, centered);
    const Tensor anti = ray_direction_features(centered, opposite, p2);
    EXPECT_NEAR(anti.at(3, 2, 2), -1.0, 1e-9);
}

TEST(RayFeatures, MatchesVectorOracle) {
    auto rng = SeededRng(7).stream("t");
    for (int i = 0; i < 10; ++i) {
        const PinholeCamera a = oracle::random_camera(rng), b = oracle::random_camera(rng);
        DepthMap dm{oracle::random_tensor(rng, {a.height, a.width}, 2, 10), Mask(a.height, a.width, true)};
        const PointGrid pts = backproject_depth(dm, a);
        const Tensor f = ray_direction_features(a, b, pts);
        const std::size_t x = oracle::random_size(rng, 0, a.width - 1), y = oracle::random_size(rng, 0, a.height - 1);
        const Eigen::Vector3d p = a.unproject(x + 0.5, y + 0.5, dm.values.at(y, x));
        const Eigen::Vector3d ra = (p - a.center()).normalized(), rb = (p - b.center()).normalized();
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(f.at(k, y, x), ra(k) - rb(k), 1e-6);
        EXPECT_NEAR(f.at(3, y, x), ra.dot(rb), 1e-6);
    }
}
