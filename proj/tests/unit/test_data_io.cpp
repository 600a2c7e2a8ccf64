#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dilie/data_io.hpp"
#include "dilie/errors.hpp"
#include "../support/fixtures.hpp"
#include "../support/synthetic.hpp"

using namespace dilie;
namespace fs = std::filesystem;

TEST_CASE("png save/load roundtrip stays within one quantization step") {
    const std::string dir = testsupport::scratch_dir("io_roundtrip");
    const Image img = testsupport::synthetic_scene(40, 56, 100);
    save_image(dir + "/x.png", img);
    const Image back = load_image(dir + "/x.png", 0);
    REQUIRE(back.px.same_shape(img.px));
    double max_err = 0.0;
    for (std::size_t i = 0; i < img.px.numel(); ++i)
        max_err = std::max(max_err, std::fabs(back.px[i] - img.px[i]));
    CHECK(max_err <= 1.0 / 255.0 + 1e-12);

    // an already 8-bit-quantized image round-trips with even tighter error
    Image quantized = img;
    for (double& v : quantized.px.vec()) v = std::floor(v * 255.0 + 0.5) / 255.0;
    save_image(dir + "/q.png", quantized);
    const Image qback = load_image(dir + "/q.png", 0);
    for (std::size_t i = 0; i < quantized.px.numel(); ++i)
        CHECK(std::fabs(qback.px[i] - quantized.px[i]) < 1e-9);
}

TEST_CASE("jpeg write/read works (lossy, sane error bound)") {
    const std::string dir = testsupport::scratch_dir("io_jpeg");
    const Image img = testsupport::synthetic_gray(48, 48, 101);
    save_image(dir + "/x.jpg", img);
    const Image back = load_image(dir + "/x.jpg", 0);
    REQUIRE(back.px.same_shape(img.px));
    CHECK(image_delta(back, img, Norm::L1) < 0.05);
}

TEST_CASE("resize cap preserves aspect; small images pass through") {
    const std::string dir = testsupport::scratch_dir("io_resize");
    const Image big = testsupport::synthetic_scene(1024, 2048, 102);
    save_image(dir + "/big.png", big);
    const Image capped = load_image(dir + "/big.png", 512);
    CHECK(capped.width() == 512);
    CHECK(capped.height() == 256);

    const Image same = load_image(dir + "/big.png", 4096);
    CHECK(same.width() == 2048);
    CHECK(same.height() == 1024);
}

TEST_CASE("decode failure raises an io error naming the path") {
    const std::string dir = testsupport::scratch_dir("io_bad");
    {
        std::ofstream os(dir + "/fake.png", std::ios::binary);
        os << "this is not a png";
    }
    try {
        load_image(dir + "/fake.png", 0);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("fake.png") != std::string::npos);
    }
    CHECK_THROWS_AS(load_image(dir + "/absent.png", 0), IoError);
}

namespace {

void touch_image(const std::string& path) {
    dilie::save_image(path, dilie::testsupport::synthetic_gray(36, 36, 7));
}

}  // namespace

TEST_CASE("scan_paired: generic convention, warnings, determinism") {
    const std::string root = testsupport::scratch_dir("ds_generic");
    for (const char* stem : {"a", "b", "c"}) {
        touch_image(root + "/" + stem + "_hazy.png");
        touch_image(root + "/" + stem + "_gt.png");
    }
    touch_image(root + "/orphan_hazy.png");
    touch_image(root + "/readme_banner.png");

    const PairedDataset ds = scan_paired(root, PairConvention::generic_suffix);
    CHECK(ds.pairs.size() == 3);
    CHECK(ds.warnings.size() == 2);
    for (std::size_t i = 1; i < ds.pairs.size(); ++i)
        CHECK(ds.pairs[i - 1].first < ds.pairs[i].first);

    const PairedDataset again = scan_paired(root, PairConvention::generic_suffix);
    CHECK(ds.pairs == again.pairs);
}

TEST_CASE("scan_paired: benchmark conventions use the GT role token") {
    const std::string root = testsupport::scratch_dir("ds_ihaze");
    touch_image(root + "/01_indoor_hazy.png");
    touch_image(root + "/01_indoor_GT.png");
    touch_image(root + "/02_indoor_hazy.png");
    touch_image(root + "/02_indoor_GT.png");
    const PairedDataset ds = scan_paired(root, PairConvention::ihaze);
    CHECK(ds.pairs.size() == 2);
    CHECK(ds.pairs[0].first.find("01_indoor_hazy") != std::string::npos);
    CHECK(ds.pairs[0].second.find("01_indoor_GT") != std::string::npos);
}

TEST_CASE("scan_paired: empty result is a dataset error") {
    const std::string root = testsupport::scratch_dir("ds_empty");
    touch_image(root + "/loose.png");
    CHECK_THROWS_AS(scan_paired(root, PairConvention::generic_suffix), DatasetError);
    CHECK_THROWS_AS(scan_paired("missing-root", PairConvention::generic_suffix),
                    DatasetError);
}

TEST_CASE("atomic text write leaves no temp file and is readable back") {
    const std::string dir = testsupport::scratch_dir("io_atomic");
    write_text_atomic(dir + "/m.json", "{\"a\":1}\n");
    CHECK(read_text(dir + "/m.json") == "{\"a\":1}\n");
    CHECK(!fs::exists(dir + "/m.json.tmp"));
}
