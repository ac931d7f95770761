// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/errors.hpp"
#include "mapprior/random.hpp"
#include "mapprior/voxel_grid.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <set>

using namespace mapprior;

namespace {

    GridConfig grid(double voxel) {
        GridConfig g;
        g.voxel_size = voxel;
        return g;
    }

    std::vector<Vec3> random_positions(Rng& rng, int n, double half) {
        std::vector<Vec3> out;
        for (int i = 0; i < n; ++i) {
            out.emplace_back(rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(0, 3));
        }
        return out;
    }

    // Scalar reference for segment_reduce.
    Matrix loop_reduce(const Matrix& f, const std::vector<int>& seg, std::size_t n, ReduceMode mode) {
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), f.cols());
        std::vector<int> count(n, 0);
        for (std::size_t i = 0; i < seg.size(); ++i) {
            const auto s = static_cast<std::size_t>(seg[i]);
            for (Eigen::Index c = 0; c < f.cols(); ++c) {
                const double v = f(static_cast<Eigen::Index>(i), c);
                double& o = out(static_cast<Eigen::Index>(s), c);
                if (mode == ReduceMode::Max) {
                    o = count[s] == 0 ? v : std::max(o, v);
                } else {
                    o += v;
                }
            }
            ++count[s];
        }
        if (mode == ReduceMode::Mean) {
            for (std::size_t s = 0; s < n; ++s) {
                for (Eigen::Index c = 0; c < f.cols() && count[s] > 0; ++c) {
                    out(static_cast<Eigen::Index>(s), c) /= count[s];
                }
            }
        }
        return out;
    }

} // namespace

TEST(DynamicVoxelize, FloorArithmetic) {
    const std::vector<Vec3> pts{Vec3(0.05, 0.05, 3.0), Vec3(-0.05, 0.05, 0.0)};
    const auto r = dynamic_voxelize(pts, grid(0.2));
    ASSERT_EQ(r.keys.size(), 2U);
    EXPECT_EQ(r.keys[0], (BevKey{0, 0}));
    EXPECT_EQ(r.keys[1], (BevKey{-1, 0}));
    ASSERT_EQ(r.unique_keys.size(), 2U);
    EXPECT_EQ(r.unique_keys[0], (BevKey{-1, 0}));
    EXPECT_EQ(r.unique_keys[1], (BevKey{0, 0}));
}

TEST(DynamicVoxelize, MatchesHashSetOracle) {
    Rng rng(11);
    const auto pts = random_positions(rng, 1000, 5.0);
    const auto r = dynamic_voxelize(pts, grid(0.2));
    std::set<std::pair<long, long>> oracle;
    for (const auto& p : pts) {
        oracle.insert({static_cast<long>(std::floor(p.x() / 0.2)), static_cast<long>(std::floor(p.y() / 0.2))});
    }
    ASSERT_EQ(r.unique_keys.size(), oracle.size());
    std::size_t i = 0;
    for (const auto& [x, y] : oracle) {
        EXPECT_EQ(r.unique_keys[i].ix, x);
        EXPECT_EQ(r.unique_keys[i].iy, y);
        ++i;
    }
    for (std::size_t k = 0; k < r.keys.size(); ++k) {
        EXPECT_EQ(r.unique_keys[static_cast<std::size_t>(r.segment_ids[k])], r.keys[k]);
    }
}

TEST(DynamicVoxelize, DropsOutOfRangeAndRejectsBadVoxel) {
    GridConfig g = grid(0.5);
    g.range = 10.0;
    const std::vector<Vec3> pts{Vec3(1, 1, 0), Vec3(11, 0, 0), Vec3(0, -10.5, 0)};
    const auto r = dynamic_voxelize(pts, g);
    EXPECT_EQ(r.keys.size(), 1U);
    EXPECT_EQ(r.dropped_out_of_range, 2U);
    EXPECT_EQ(r.point_index, (std::vector<std::size_t>{0}));
    g.voxel_size = 0.0;
    EXPECT_THROW(dynamic_voxelize(pts, g), ConfigError);
    g.voxel_size = -1.0;
    EXPECT_THROW(dynamic_voxelize(pts, g), ConfigError);
}

TEST(DynamicVoxelize, OverflowKeepsDensestKeys) {
    GridConfig g = grid(1.0);
    g.max_voxels = 2;
    // Three points in (2,0), two in (0,0), two in (1,0), one in (5,5).
    const std::vector<Vec3> pts{Vec3(2.5, 0.5, 0), Vec3(2.1, 0.2, 0), Vec3(2.9, 0.9, 0), Vec3(0.5, 0.5, 0),
                                Vec3(0.2, 0.3, 0), Vec3(1.5, 0.5, 0), Vec3(1.4, 0.1, 0), Vec3(5.5, 5.5, 0)};
    const auto r = dynamic_voxelize(pts, g);
    // (0,0) and (1,0) tie on count; the lexicographically smaller key wins.
    ASSERT_EQ(r.unique_keys.size(), 2U);
    EXPECT_EQ(r.unique_keys[0], (BevKey{0, 0}));
    EXPECT_EQ(r.unique_keys[1], (BevKey{2, 0}));
    EXPECT_EQ(r.dropped_overflow, 3U);
    EXPECT_EQ(r.keys.size(), 5U);
}

TEST(DynamicVoxelize, DeterministicAndPermutationInvariant) {
    Rng rng(12);
    auto pts = random_positions(rng, 700, 4.0);
    const auto a = dynamic_voxelize(pts, grid(0.3));
    const auto b = dynamic_voxelize(pts, grid(0.3));
    EXPECT_EQ(a.unique_keys, b.unique_keys);
    EXPECT_EQ(a.segment_ids, b.segment_ids);
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
        std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    }
    std::vector<Vec3> shuffled;
    Matrix f(static_cast<Eigen::Index>(pts.size()), 3);
    Matrix fs(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        shuffled.push_back(pts[perm[i]]);
        f.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
        fs.row(static_cast<Eigen::Index>(i)) = pts[perm[i]].transpose();
    }
    const auto c = dynamic_voxelize(shuffled, grid(0.3));
    EXPECT_EQ(a.unique_keys, c.unique_keys);
    const Matrix ma = segment_reduce(f, a.segment_ids, a.unique_keys.size(), ReduceMode::Mean);
    const Matrix mc = segment_reduce(fs, c.segment_ids, c.unique_keys.size(), ReduceMode::Mean);
    EXPECT_LE((ma - mc).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DynamicVoxelize, IntegerTranslationShiftsKeys) {
    Rng rng(13);
    const double v = 0.25;
    auto pts = random_positions(rng, 300, 3.0);
    // Keep points off cell boundaries so the shifted floor is unambiguous in floating point.
    for (auto& p : pts) {
        p.x() = (std::floor(p.x() / v) + 0.5) * v;
        p.y() = (std::floor(p.y() / v) + 0.5) * v;
    }
    const auto a = dynamic_voxelize(pts, grid(v));
    std::vector<Vec3> moved;
    for (const auto& p : pts) {
        moved.push_back(p + Vec3(3 * v, -2 * v, 0));
    }
    const auto b = dynamic_voxelize(moved, grid(v));
    ASSERT_EQ(a.keys.size(), b.keys.size());
    for (std::size_t i = 0; i < a.keys.size(); ++i) {
        EXPECT_EQ(b.keys[i].ix, a.keys[i].ix + 3);
        EXPECT_EQ(b.keys[i].iy, a.keys[i].iy - 2);
    }
}

TEST(SegmentReduce, SmallCases) {
    Matrix f(2, 2);
    f << 1, 2, 3, 4;
    const std::vector<int> seg{0, 0};
    const Matrix m = segment_reduce(f, seg, 2, ReduceMode::Mean);
    EXPECT_EQ(m(0, 0), 2.0);
    EXPECT_EQ(m(0, 1), 3.0);
    EXPECT_EQ(m(1, 0), 0.0);
    EXPECT_EQ(m(1, 1), 0.0);
    const std::vector<int> bad{0, 2};
    EXPECT_THROW(segment_reduce(f, bad, 2, ReduceMode::Sum), IndexError);
}

TEST(SegmentReduce, MatchesLoopOracle) {
    Rng rng(14);
    Matrix f(500, 4);
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        f.data()[i] = rng.normal();
    }
    std::vector<int> seg(500);
    for (auto& s : seg) {
        s = static_cast<int>(rng.uniform_index(20));
    }
    for (auto mode : {ReduceMode::Mean, ReduceMode::Sum, ReduceMode::Max}) {
        const Matrix a = segment_reduce(f, seg, 22, mode);
        const Matrix b = loop_reduce(f, seg, 22, mode);
        EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(SegmentReduce, SumOfOnesCountsPoints) {
    Rng rng(15);
    const auto pts = random_positions(rng, 400, 2.0);
    const auto r = dynamic_voxelize(pts, grid(0.4));
    const Matrix ones = Matrix::Ones(static_cast<Eigen::Index>(r.keys.size()), 1);
    const Matrix s = segment_reduce(ones, r.segment_ids, r.unique_keys.size(), ReduceMode::Sum);
    const auto counts = segment_counts(r.segment_ids, r.unique_keys.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
        EXPECT_EQ(s(static_cast<Eigen::Index>(k), 0), counts[k]);
        const auto brute = std::count(r.keys.begin(), r.keys.end(), r.unique_keys[k]);
        EXPECT_EQ(counts[k], brute);
    }
}

TEST(SegmentReduce, RowShuffleIsBitwiseInvariant) {
    Rng rng(16);
    const Eigen::Index n = 3000;
    Matrix f(n, 3);
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        f.data()[i] = rng.normal() * std::pow(10.0, rng.uniform(-6.0, 6.0));
    }
    std::vector<int> seg(static_cast<std::size_t>(n));
    for (auto& s : seg) {
        s = static_cast<int>(rng.uniform_index(7));
    }
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    Matrix fp(n, 3);
    std::vector<int> sp(seg.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        fp.row(i) = f.row(perm[static_cast<std::size_t>(i)]);
        sp[static_cast<std::size_t>(i)] = seg[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    for (auto mode : {ReduceMode::Mean, ReduceMode::Sum, ReduceMode::Max}) {
        const Matrix a = segment_reduce(f, seg, 7, mode);
        const Matrix b = segment_reduce(fp, sp, 7, mode);
        EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
    }
}

TEST(AlignGrids, UnionWithZeroFill) {
    BevFeatureGrid a{{BevKey{0, 0}}, Matrix::Constant(1, 2, 1.0)};
    BevFeatureGrid b{{BevKey{1, 0}}, Matrix::Constant(1, 2, 2.0)};
    const std::vector<BevFeatureGrid> in{a, b};
    const auto out = align_grids(in);
    ASSERT_EQ(out.size(), 2U);
    EXPECT_EQ(out[0].keys, (std::vector<BevKey>{{0, 0}, {1, 0}}));
    EXPECT_EQ(out[0].features(0, 0), 1.0);
    EXPECT_EQ(out[0].features.row(1).cwiseAbs().sum(), 0.0);
    EXPECT_EQ(out[1].features.row(0).cwiseAbs().sum(), 0.0);
    EXPECT_EQ(out[1].features(1, 1), 2.0);

    const std::vector<BevFeatureGrid> same{a, a};
    const auto unchanged = align_grids(same);
    EXPECT_EQ(unchanged[0].keys, a.keys);
    EXPECT_EQ(unchanged[0].features, a.features);

    BevFeatureGrid wide{{BevKey{0, 0}}, Matrix::Zero(1, 3)};
    const std::vector<BevFeatureGrid> mismatched{a, wide};
    EXPECT_THROW(align_grids(mismatched), ShapeError);
}

TEST(AlignGrids, RandomUnionMatchesSetOracle) {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<BevFeatureGrid> grids;
        std::set<BevKey> oracle;
        for (int g = 0; g < 3; ++g) {
            std::set<BevKey> keys;
            for (int i = 0; i < 30; ++i) {
                keys.insert(BevKey{static_cast<int>(rng.uniform_index(12)) - 6, static_cast<int>(rng.uniform_index(12)) - 6});
            }
            BevFeatureGrid grid{{keys.begin(), keys.end()}, Matrix::Zero(static_cast<Eigen::Index>(keys.size()), 2)};
            for (Eigen::Index r = 0; r < grid.features.rows(); ++r) {
                grid.features(r, 0) = rng.normal();
            }
            oracle.insert(keys.begin(), keys.end());
            grids.push_back(grid);
        }
        const auto out = align_grids(grids);
        for (std::size_t g = 0; g < grids.size(); ++g) {
            EXPECT_EQ(out[g].keys, std::vector<BevKey>(oracle.begin(), oracle.end()));
            for (std::size_t r = 0; r < grids[g].keys.size(); ++r) {
                const auto row = out[g].find(grids[g].keys[r]);
                ASSERT_GE(row, 0);
                EXPECT_EQ(out[g].features(row, 0), grids[g].features(static_cast<Eigen::Index>(r), 0));
            }
        }
    }
}
