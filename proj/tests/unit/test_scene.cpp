#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "offsetlab/rng.hpp"
#include "offsetlab/scene.hpp"

using namespace offsetlab;

TEST_CASE("static scene frames are identical") {
    SceneSpec spec = make_scene(12, 12, 6, 3, 0.0, 0.0, 3, 2.0);
    ImageGrid f0 = synthetic_scene(spec, 0);
    for (int f = 1; f < spec.frames; ++f) {
        ImageGrid ff = synthetic_scene(spec, f);
        CHECK(ff.pixels == f0.pixels);
    }
    for (double p : f0.pixels) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("reflection period reproduces frames exactly") {
    // extent = 2*(9-1) = 16; with one pixel per frame along rows the motion
    // repeats after 16 frames. Dyadic centers keep every frame position
    // exactly representable, so the images match bit for bit.
    SceneSpec spec;
    spec.height = 9;
    spec.width = 9;
    spec.frames = 20;
    spec.velocity_row = 1.0;
    spec.velocity_col = 0.0;
    spec.blobs.push_back(Blob{2.25, 4.5, 1.5});
    spec.blobs.push_back(Blob{6.5, 3.0, 1.0});
    ImageGrid f0 = synthetic_scene(spec, 0);
    ImageGrid f16 = synthetic_scene(spec, 16);
    CHECK(f0.pixels == f16.pixels);
    ImageGrid f3 = synthetic_scene(spec, 3);
    ImageGrid f19 = synthetic_scene(spec, 19);
    CHECK(f3.pixels == f19.pixels);
}

TEST_CASE("blob centers dominate far pixels") {
    SceneSpec spec;
    spec.height = 17;
    spec.width = 17;
    spec.frames = 2;
    spec.blobs.push_back(Blob{4.0, 4.0, 1.0});
    ImageGrid img = synthetic_scene(spec, 0);
    double at_center = img.at(4, 4);
    for (int r = 0; r < 17; ++r) {
        for (int c = 0; c < 17; ++c) {
            double dist = std::hypot(r - 4.0, c - 4.0);
            if (dist > 3.0) CHECK(at_center >= img.at(r, c));
        }
    }
}

TEST_CASE("bad frame is rejected") {
    SceneSpec spec = make_scene(8, 8, 4, 3, 0.5, 0.5, 1, 2.0);
    CHECK_THROWS_AS(synthetic_scene(spec, 4), Error);
    CHECK_THROWS_AS(synthetic_scene(spec, -1), Error);
    try {
        synthetic_scene(spec, 4);
    } catch (const Error& e) {
        CHECK(e.code() == "BadFrame");
    }
}

TEST_CASE("make_scene is deterministic and respects bounds") {
    SceneSpec a = make_scene(16, 16, 8, 11, 0.3, 0.4, 5, 2.0);
    SceneSpec b = make_scene(16, 16, 8, 11, 0.3, 0.4, 5, 2.0);
    CHECK(a == b);
    for (const Blob& blob : a.blobs) {
        CHECK(blob.center_row >= 0.0);
        CHECK(blob.center_row <= 15.0);
        CHECK(blob.center_col >= 0.0);
        CHECK(blob.center_col <= 15.0);
    }
}

TEST_CASE("patchify and unpatchify round trip") {
    SplitMix64 rng(9);
    ImageGrid img(12, 8);
    for (double& p : img.pixels) p = rng.next_double();
    Tensor3 t = patchify(img, 4);
    CHECK(t.batch == 1);
    CHECK(t.patches == 6);
    CHECK(t.channels == 16);
    ImageGrid back = unpatchify(t, 0, 2, 4);
    CHECK(back.height == 12);
    CHECK(back.width == 8);
    CHECK(back.pixels == img.pixels);

    CHECK_THROWS_AS(patchify(img, 5), Error);
}
