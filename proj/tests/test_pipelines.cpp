#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "afldm/dataset.hpp"
#include "afldm/error.hpp"
#include "afldm/flow.hpp"
#include "afldm/pipelines.hpp"
#include "support/test_support.hpp"

namespace afldm {
namespace {

using testing::Gen;
using testing::max_abs;
using testing::max_abs_diff;

class PipelineTest : public ::testing::Test {
 protected:
  DTypeGuard guard_{DType::kF64};
};

// ---------------------------------------------------------------------------
// Toy data

TEST_F(PipelineTest, ImagesAreDeterministicAndBounded) {
  const Tensor a = data::generate_images(3, 4);
  const Tensor b = data::generate_images(3, 4);
  const Tensor c = data::generate_images(4, 4);
  EXPECT_EQ(a.shape(), (Shape{4, 3, 32, 32}));
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  EXPECT_GT(max_abs_diff(a, c), 0.1);
  EXPECT_LE(max_abs(a), 1.0 + 1e-12);
  EXPECT_THROW(data::generate_images(1, 0), ConfigError);
}

TEST_F(PipelineTest, ImagesAreBandlimited) {
  data::ImageOptions o;
  o.cutoff = 6.0;
  const Tensor x = data::generate_images(5, 8, o);
  EXPECT_LT(metrics::out_of_band_ratio(x, 6.0), 1e-4);
}

TEST_F(PipelineTest, VideoFlowsPredictNextFrame) {
  const auto videos = data::generate_videos(6, 3);
  ASSERT_EQ(videos.size(), 3u);
  for (const auto& v : videos) {
    ASSERT_EQ(v.frames.size(), 4u);
    ASSERT_EQ(v.flow_bwd.size(), 3u);
    ASSERT_EQ(v.flow_fwd.size(), 3u);
    for (std::size_t i = 0; i + 1 < v.frames.size(); ++i) {
      const auto bwd = flow::warp(v.frames[i], v.flow_bwd[i]);
      EXPECT_GE(metrics::masked_psnr(bwd.value, v.frames[i + 1], bwd.mask, metrics::kImagePeak), 30.0);
      const auto fwd = flow::warp(v.frames[i + 1], v.flow_fwd[i]);
      EXPECT_GE(metrics::masked_psnr(fwd.value, v.frames[i], fwd.mask, metrics::kImagePeak), 30.0);
    }
  }
  const auto again = data::generate_video(videos[1].seed);
  EXPECT_EQ(max_abs_diff(again.frames[2], videos[1].frames[2]), 0.0);
}

TEST_F(PipelineTest, BatchRows) {
  const Tensor x = data::generate_images(7, 3);
  const Tensor rows = data::batch_rows(x, {2, 0});
  EXPECT_EQ(max_abs_diff(slice(rows, 0, 0, 1), slice(x, 0, 2, 3)), 0.0);
  EXPECT_EQ(max_abs_diff(slice(rows, 0, 1, 2), slice(x, 0, 0, 1)), 0.0);
  EXPECT_THROW(data::batch_rows(x, {3}), ShapeError);
}

// ---------------------------------------------------------------------------
// Flow

TEST_F(PipelineTest, WarpZeroFlowIsIdentity) {
  Gen gen(1);
  const Tensor x = gen.normal_tensor({3, 8, 10});
  const auto r = flow::warp(x, Tensor::zeros({2, 8, 10}));
  EXPECT_EQ(max_abs_diff(r.value, x), 0.0);
  EXPECT_TRUE(r.mask.all());
}

TEST_F(PipelineTest, WarpIntegerFlowMatchesRoll) {
  Gen gen(2);
  const Tensor x = gen.normal_tensor({2, 8, 8});
  // Sampling at q + (2, -1) moves content by (-2, +1).
  const auto r = flow::warp(x, flow::constant_flow(8, 8, 2.0, -1.0));
  const Tensor rolled = testing::roll_oracle(x, -2, 1);
  for (std::int64_t y = 0; y < 8; ++y)
    for (std::int64_t c = 0; c < 8; ++c) {
      const bool inside = c + 2 <= 7 && y - 1 >= 0;
      EXPECT_EQ(r.mask.at(y, c), inside);
      if (!inside) continue;
      for (std::int64_t p = 0; p < 2; ++p) EXPECT_EQ(r.value.at({p, y, c}), rolled.at({p, y, c}));
    }
}

TEST_F(PipelineTest, WarpIsExactOnRamps) {
  Gen gen(3);
  std::vector<double> ramp(64);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp[static_cast<std::size_t>(y * 8 + x)] = 0.3 * x - 0.7 * y + 0.1;
  const Tensor x = Tensor::from_vector({1, 8, 8}, ramp);
  const Tensor f = gen.uniform_tensor({2, 8, 8}, -1.5, 1.5);
  const auto r = flow::warp(x, f);
  for (std::int64_t y = 0; y < 8; ++y)
    for (std::int64_t c = 0; c < 8; ++c) {
      if (!r.mask.at(y, c)) continue;
      const double sx = static_cast<double>(c) + f.at({0, y, c}), sy = static_cast<double>(y) + f.at({1, y, c});
      EXPECT_NEAR(r.value.at({0, y, c}), 0.3 * sx - 0.7 * sy + 0.1, 1e-5);
    }
  EXPECT_LT(r.mask.count(), 64);
}

TEST_F(PipelineTest, WarpRejectsBadFlow) {
  const Tensor x = Tensor::zeros({1, 4, 4});
  EXPECT_THROW(flow::warp(x, Tensor::zeros({2, 4, 5})), ShapeError);
  Tensor f = Tensor::zeros({2, 4, 4});
  f.mutable_data()[3] = std::nan("");
  EXPECT_THROW(flow::warp(x, f), NumericalError);
}

TEST_F(PipelineTest, SplatConservesMass) {
  Gen gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = gen.uniform_tensor({2, 12, 12}, 0.0, 1.0);
    auto v = x.mutable_data();
    // Nothing near the far edges, so no mass leaves the frame.
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto q = static_cast<std::int64_t>(i) % 144;
      if (q / 12 >= 9 || q % 12 >= 9) v[i] = 0.0;
    }
    const Tensor f = gen.uniform_tensor({2, 12, 12}, 0.0, 2.0);
    const Tensor s = flow::splat_sum(x, f);
    double before = 0.0, after = 0.0;
    for (double e : x.data()) before += e;
    for (double e : s.data()) after += e;
    EXPECT_NEAR(after / before, 1.0, 1e-4);
  }
}

TEST_F(PipelineTest, SplatIntegerFlowLeavesHoles) {
  Gen gen(5);
  const Tensor x = gen.normal_tensor({1, 6, 6});
  const auto id = flow::splat(x, Tensor::zeros({2, 6, 6}));
  EXPECT_LT(max_abs_diff(id.value, x), 1e-12);
  EXPECT_TRUE(id.mask.all());
  const auto s = flow::splat(x, flow::constant_flow(6, 6, 2.0, 0.0));
  for (std::int64_t y = 0; y < 6; ++y)
    for (std::int64_t c = 0; c < 6; ++c) {
      EXPECT_EQ(s.mask.at(y, c), c >= 2);
      if (c >= 2) {
        EXPECT_NEAR(s.value.at({0, y, c}), x.at({0, y, c - 2}), 1e-12);
      } else {
        EXPECT_EQ(s.value.at({0, y, c}), 0.0);
      }
    }
}

TEST_F(PipelineTest, FlowRescaling) {
  const Tensor f = flow::constant_flow(16, 16, 4.0, -8.0);
  const Tensor d = flow::downscale_flow(f, 4);
  EXPECT_EQ(d.shape(), (Shape{2, 4, 4}));
  EXPECT_LT(max_abs_diff(d, flow::constant_flow(4, 4, 1.0, -2.0)), 1e-15);
  EXPECT_LT(max_abs_diff(flow::scale_flow(f, 0.25), flow::constant_flow(16, 16, 1.0, -2.0)), 1e-15);
  EXPECT_THROW(flow::downscale_flow(f, 3), ShapeError);
}

// ---------------------------------------------------------------------------
// Slerp

TEST_F(PipelineTest, SlerpEndpointsAndOrthogonal) {
  Gen gen(6);
  const Tensor a = gen.normal_tensor({2, 3, 4});
  const Tensor b = gen.normal_tensor({2, 3, 4});
  EXPECT_LT(max_abs_diff(pipelines::slerp(a, b, 0.0), a), 1e-12);
  EXPECT_LT(max_abs_diff(pipelines::slerp(a, b, 1.0), b), 1e-12);
  const Tensor e1 = Tensor::from_vector({2}, {1.0, 0.0});
  const Tensor e2 = Tensor::from_vector({2}, {0.0, 1.0});
  const Tensor mid = pipelines::slerp(e1, e2, 0.5);
  EXPECT_NEAR(mid.data()[0], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(mid.data()[1], std::sqrt(0.5), 1e-12);
  const Tensor third = pipelines::slerp(e1, e2, 1.0 / 3.0);
  EXPECT_NEAR(third.data()[0], std::cos(std::numbers::pi / 6.0), 1e-12);
  EXPECT_NEAR(third.data()[1], std::sin(std::numbers::pi / 6.0), 1e-12);
}

TEST_F(PipelineTest, SlerpFallsBackToLerp) {
  const Tensor a = Tensor::from_vector({2}, {1.0, 0.0});
  const Tensor b = Tensor::from_vector({2}, {2.0, 1e-6});
  const Tensor m = pipelines::slerp(a, b, 0.25);
  EXPECT_NEAR(m.data()[0], 1.25, 1e-12);
  EXPECT_NEAR(m.data()[1], 0.25e-6, 1e-15);
  EXPECT_LT(max_abs_diff(pipelines::slerp(Tensor::zeros({2}), b, 0.5), b * 0.5), 1e-15);
  EXPECT_THROW(pipelines::slerp(a, Tensor::zeros({3}), 0.5), ShapeError);
}

// ---------------------------------------------------------------------------
// Sweeps

TEST_F(PipelineTest, IdentitySweep) {
  Gen gen(7);
  const Tensor x = gen.normal_tensor({2, 1, 8, 8});
  const auto p = pipelines::identity_pipeline();
  EXPECT_TRUE(pipelines::shift_sweep("id", p, x, {0.25, 0}).empty());
  const auto rs = pipelines::shift_sweep("id", p, x, {0.25, 3});
  ASSERT_EQ(rs.size(), 3u);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(rs[i].metric, "id");
    EXPECT_DOUBLE_EQ(rs[i].offset.dx, 0.25 * static_cast<double>(i + 1));
    EXPECT_EQ(rs[i].offset.dy, 0.0);
    EXPECT_EQ(rs[i].value, metrics::kPsnrCap);
  }
  EXPECT_THROW(pipelines::shift_sweep("id", p, x, {0.25, -1}), ConfigError);
  EXPECT_THROW(pipelines::shift_sweep("id", p, x, {0.0, 2}), ConfigError);
}

TEST_F(PipelineTest, RandomOffsets) {
  const auto a = pipelines::random_offsets(3, 50, 32, 4.0);
  const auto b = pipelines::random_offsets(3, 50, 32, 4.0);
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].dx, b[i].dx);
    EXPECT_EQ(a[i].dx * 4.0, std::round(a[i].dx * 4.0));
    EXPECT_LE(std::abs(a[i].dx), 3.0);
    EXPECT_LE(std::abs(a[i].dy), 3.0);
  }
}

// ---------------------------------------------------------------------------
// Latent diffusion

class LdmTest : public PipelineTest {
 protected:
  static ModelConfig vae_config() {
    ModelConfig c;
    c.kind = ModelKind::kVae;
    c.image_size = 32;
    c.downsample_factor = 4;
    c.widths = {8, 8};
    c.seed = 1;
    return c;
  }
  static ModelConfig unet_config() {
    ModelConfig c;
    c.kind = ModelKind::kUNet;
    c.image_size = 32;
    c.downsample_factor = 4;
    c.widths = {8, 16};
    c.seed = 2;
    c.latent_scale = 0.5;
    return c;
  }

  Vae vae_{vae_config()};
  UNet unet_{unet_config()};
  NoiseSchedule schedule_;
  pipelines::LatentDiffusion ldm_{vae_, unet_, schedule_, 3};
};

TEST_F(LdmTest, EncodeAppliesLatentScale) {
  const Tensor x = data::generate_images(8, 2);
  const Tensor z = ldm_.encode(x);
  EXPECT_LT(max_abs_diff(z, vae_.encode_mean(x) * 0.5), 1e-12);
  EXPECT_LT(max_abs_diff(ldm_.decode(z), vae_.decode(vae_.encode_mean(x))), 1e-12);
}

TEST_F(LdmTest, DenoiseCurveStartsAtCap) {
  Gen gen(9);
  const Tensor noise = gen.normal_tensor({2, 4, 8, 8});
  const auto curve = pipelines::denoise_spsnr_curve("c", ldm_, noise, 2.0, 3);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_EQ(curve[0].step, 0);
  EXPECT_EQ(curve[0].value, metrics::kPsnrCap);
  EXPECT_EQ(curve[3].step, 3);
  // Even latent shifts stay integer on the coarse level, so the circular U-Net is exact.
  for (const auto& r : curve) EXPECT_GE(r.value, 60.0) << r.step;
}

TEST_F(LdmTest, InterpolatedCachesHitEndpoints) {
  Gen gen(10);
  TrajectoryCache a, b;
  ddim_sample(schedule_, unet_eps(unet_, CacheUse::kRecord, &a), gen.normal_tensor({1, 4, 8, 8}), 3);
  ddim_sample(schedule_, unet_eps(unet_, CacheUse::kRecord, &b), gen.normal_tensor({1, 4, 8, 8}), 3);
  const Tensor z = gen.normal_tensor({1, 4, 8, 8});
  for (int i = 1; i <= 3; ++i) {
    const int t = schedule_.subsequence(3)[static_cast<std::size_t>(i)];
    const Tensor at0 = unet_eps_interpolated(unet_, a, b, 0.0)(z, t, i);
    const Tensor at1 = unet_eps_interpolated(unet_, a, b, 1.0)(z, t, i);
    EXPECT_LT(max_abs_diff(at0, unet_eps(unet_, CacheUse::kReuse, &a)(z, t, i)), 1e-12);
    EXPECT_LT(max_abs_diff(at1, unet_eps(unet_, CacheUse::kReuse, &b)(z, t, i)), 1e-12);
    const Tensor half = unet_eps_interpolated(unet_, a, b, 0.5)(z, t, i);
    EXPECT_GT(max_abs_diff(half, at0), 0.0);
  }
}

TEST_F(LdmTest, EditIdenticalFramesAgree) {
  const Tensor frame = reshape(data::generate_images(11, 1), {3, 32, 32});
  const auto out = pipelines::edit_video(ldm_, {frame, frame}, {0.67, 4, 1.0});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].shape(), frame.shape());
  EXPECT_LT(max_abs_diff(out[0], out[1]), 1e-9);
}

TEST_F(LdmTest, EditZeroStrengthReconstructs) {
  const Tensor frames = data::generate_images(12, 2);
  const Tensor f0 = reshape(slice(frames, 0, 0, 1), {3, 32, 32});
  const Tensor f1 = reshape(slice(frames, 0, 1, 2), {3, 32, 32});
  const auto out = pipelines::edit_video(ldm_, {f0, f1}, {0.0, 4, 1.0});
  EXPECT_LT(max_abs_diff(out[1], reshape(vae_.decode(vae_.encode_mean(slice(frames, 0, 1, 2))), {3, 32, 32})),
            1e-12);
}

TEST_F(LdmTest, EditErrors) {
  const Tensor frame = reshape(data::generate_images(13, 1), {3, 32, 32});
  EXPECT_THROW(pipelines::edit_video(ldm_, {frame}, {}), ConfigError);
  EXPECT_THROW(pipelines::edit_video(ldm_, {frame, frame}, {1.5, 0, 1.0}), ConfigError);
}

TEST_F(LdmTest, InterpolateIdenticalEndpoints) {
  const Tensor x = reshape(data::generate_images(14, 1), {3, 32, 32});
  const Tensor zero = Tensor::zeros({2, 32, 32});
  const auto r = pipelines::interpolate_images(ldm_, x, x, zero, zero, 1);
  ASSERT_EQ(r.frames.size(), 1u);
  EXPECT_EQ(r.hole_fraction[0], 0.0);

  TrajectoryCache inv, gen;
  const Tensor zt = ldm_.invert(ldm_.encode(reshape(x, {1, 3, 32, 32})), CacheUse::kRecord, &inv);
  ldm_.sample(zt, CacheUse::kRecord, &gen);
  const Tensor want = ldm_.decode(ldm_.sample(zt, CacheUse::kReuse, &gen));
  EXPECT_LT(max_abs_diff(r.frames[0], reshape(want, {3, 32, 32})), 1e-9);
  EXPECT_THROW(pipelines::interpolate_images(ldm_, x, x, zero, zero, 0), ConfigError);
}

TEST_F(LdmTest, InterpolateReportsHoles) {
  const Tensor x = reshape(data::generate_images(15, 1), {3, 32, 32});
  const auto r = pipelines::interpolate_images(ldm_, x, x, flow::constant_flow(32, 32, 8.0, 0.0),
                                               flow::constant_flow(32, 32, -8.0, 0.0), 1);
  // Half of the 2-pixel latent motion each way: one latent column uncovered
  // on each side.
  EXPECT_NEAR(r.hole_fraction[0], 2.0 / 8.0, 1e-12);
}

TEST_F(LdmTest, WarpingErrorZeroFlow) {
  const Tensor frames = data::generate_images(16, 2);
  std::vector<pipelines::WarpPair> pairs;
  for (std::int64_t i = 0; i < 2; ++i) {
    const Tensor f = reshape(slice(frames, 0, i, i + 1), {3, 32, 32});
    pairs.push_back({f, f, Tensor::zeros({2, 32, 32})});
  }
  const auto s = pipelines::warping_error(ldm_, pairs);
  EXPECT_EQ(s.input, metrics::kPsnrCap);
  EXPECT_GE(s.inversion, 99.0);
  EXPECT_GE(s.generation, 99.0);
  EXPECT_THROW(pipelines::warping_error(ldm_, {}), ConfigError);
}

TEST_F(LdmTest, VideoPairs) {
  const auto videos = data::generate_videos(17, 2);
  EXPECT_EQ(pipelines::video_pairs(videos).size(), 6u);
  const auto pairs = pipelines::video_pairs(videos, 4);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(max_abs_diff(pairs[3].frame1, videos[1].frames[0]), 0.0);
  EXPECT_EQ(max_abs_diff(pairs[3].flow, videos[1].flow_bwd[0]), 0.0);
}

TEST_F(LdmTest, NeighborWarpingMse) {
  const auto v = data::generate_video(18);
  const std::vector<Tensor> still{v.frames[0], v.frames[0], v.frames[0]};
  const std::vector<Tensor> zero{Tensor::zeros({2, 32, 32}), Tensor::zeros({2, 32, 32})};
  EXPECT_EQ(pipelines::neighbor_warping_mse(still, zero), 0.0);
  EXPECT_LT(pipelines::neighbor_warping_mse(v.frames, v.flow_bwd), 4e-3);
  EXPECT_THROW(pipelines::neighbor_warping_mse({v.frames[0]}, {}), ConfigError);
}

}  // namespace
}  // namespace afldm
