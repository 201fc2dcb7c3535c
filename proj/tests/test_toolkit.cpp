#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "resetedit/checkpoint.hpp"
#include "resetedit/config.hpp"
#include "resetedit/dataset.hpp"
#include "resetedit/tensor_io.hpp"
#include "support.hpp"

using namespace resetedit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("resetedit_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("tensor file: byte layout of a small tensor") {
    Tensor t({2}, std::vector<float>{1.0f, -2.0f});
    const auto blob = io::encode_tensor(t);
    const std::vector<std::uint8_t> want{'R', 'S', 'T', 'E', 1, 0, 1, 2, 0, 0, 0,
                                         0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    CHECK(blob == want);
}

TEST_CASE("tensor file: bit-exact round trip for ranks 0-4 and both dtypes") {
    std::mt19937_64 rng(1);
    const auto dir = scratch("rste");
    for (std::size_t rank = 0; rank <= 4; ++rank) {
        Shape shape;
        for (std::size_t i = 0; i < rank; ++i) shape.push_back(std::uniform_int_distribution<std::int64_t>(1, 5)(rng));
        Tensor t = Tensor::randn(shape, rng);
        if (t.numel() > 0) t.values()[0] = -0.0f;
        const auto path = dir / ("f" + std::to_string(rank) + ".rste");
        io::save_tensor(path, t);
        const auto back = io::load_tensor(path);
        CHECK(back.shape() == shape);
        CHECK(std::memcmp(back.data(), t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float)) == 0);

        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(t.numel()));
        for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
        const auto bpath = dir / ("b" + std::to_string(rank) + ".rste");
        io::save_bytes(bpath, shape, bytes);
        const auto rec = io::load_record(bpath);
        CHECK(rec.dtype == io::DType::uint8);
        CHECK(rec.shape == shape);
        CHECK(rec.bytes == bytes);
        CHECK_THROWS_AS(io::load_tensor(bpath), FormatError);
    }
    fs::remove_all(dir);
}

TEST_CASE("tensor file: malformed input is a format error") {
    auto blob = io::encode_tensor(testing::random_tensor({4, 16, 16}, 2));
    auto bad_magic = blob;
    std::memcpy(bad_magic.data(), "XXXX", 4);
    CHECK_THROWS_AS(io::decode_tensor(bad_magic), FormatError);
    auto bad_version = blob;
    bad_version[4] = 9;
    CHECK_THROWS_AS(io::decode_tensor(bad_version), FormatError);
    auto bad_dtype = blob;
    bad_dtype[5] = 7;
    CHECK_THROWS_AS(io::decode_tensor(bad_dtype), FormatError);
    CHECK_THROWS_AS(io::decode_tensor(std::span(blob).first(blob.size() - 1)), FormatError);
    CHECK_THROWS_AS(io::decode_tensor(std::span(blob).first(9)), FormatError);
    auto longer = blob;
    longer.push_back(0);
    CHECK_THROWS_AS(io::decode_tensor(longer), FormatError);
    CHECK_THROWS_AS(io::read_file("/nonexistent/resetedit.rste"), FormatError);
}

TEST_CASE("atomic writes leave no temp file and create parents") {
    const auto dir = scratch("atomic");
    const auto path = dir / "a" / "b" / "c.txt";
    io::write_text_atomic(path, "hello");
    CHECK(io::read_text(path) == "hello");
    io::write_text_atomic(path, "again");
    CHECK(io::read_text(path) == "again");
    CHECK_FALSE(fs::exists(path.string() + ".tmp"));
    fs::remove_all(dir);
}

TEST_CASE("sha256 known answers") {
    CHECK(io::sha256_hex(std::string()) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(io::sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("ppm round trip at 8-bit precision") {
    const auto dir = scratch("ppm");
    Tensor img = testing::random_tensor({3, 5, 7}, 3, 0.3f);
    for (auto& v : img.values()) v += 0.5f;
    io::save_ppm(dir / "x.ppm", img);
    const auto back = io::load_ppm(dir / "x.ppm");
    CHECK(back.shape() == img.shape());
    for (std::int64_t i = 0; i < img.numel(); ++i)
        CHECK(std::abs(back[i] - std::clamp(img[i], 0.0f, 1.0f)) <= 0.5f / 255.0f + 1e-6f);
    fs::remove_all(dir);
}

TEST_CASE("config: defaults match the reference hyperparameters") {
    const Config c;
    CHECK(c.codec.codebook_size == 16);
    CHECK(c.codec.beta == 1.0f);
    CHECK(c.injector.lambda == doctest::Approx(0.1f));
    CHECK(c.injector.noise.gaussian_sigma == doctest::Approx(0.05f));
    CHECK(c.injector.noise.filter_kernel == 7);
    CHECK(c.codec.learning_rate == doctest::Approx(3e-4f));
    CHECK(c.codec.amsgrad);
    CHECK(c.injector.learning_rate == doctest::Approx(1e-3f));
    CHECK(c.injector.message_bits == 64);
    CHECK(c.latent_opt.steps == 20);
    CHECK(c.guidance.scale == 7.5f);
    CHECK_NOTHROW(c.validate());
    CHECK(c.index_grid() == 4);
}

TEST_CASE("config: JSON round trip, hash stability, strict keys") {
    Config c;
    c.seed = 17;
    c.codec.steps = 5;
    c.guidance.edit_scale = 3.0f;
    const auto text = c.to_json();
    const auto back = Config::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.hash() == c.hash());
    CHECK(Config().hash() != c.hash());

    CHECK(Config::from_json("{}").to_json() == Config().to_json());
    CHECK(Config::from_json(R"({"codec": {"steps": 9}})").codec.steps == 9);
    CHECK_THROWS_AS(Config::from_json(R"({"codec": {"stepz": 9}})"), ConfigError);
    CHECK_THROWS_AS(Config::from_json(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(Config::from_json(R"({"codec": {"steps": "many"}})"), ConfigError);
    CHECK_THROWS_AS(Config::from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(Config::load("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config: validation") {
    Config c;
    c.codec.codebook_size = 12;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = Config();
    c.geometry.image_size = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = Config();
    c.injector.message_bits = 32;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = Config();
    c.codec.codebook_size = 4;
    c.injector.message_bits = 32;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("dataset: deterministic, balanced, ranged") {
    const auto a = make_dataset(60, 8, 5);
    const auto b = make_dataset(60, 8, 5);
    REQUIRE(a.size() == 60);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].cond == b[i].cond);
    }
    CHECK(make_dataset(60, 8, 6)[0].image != a[0].image);
    for (float v : a[0].image.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    std::map<std::int64_t, int> hist;
    for (const auto& s : make_dataset(1000, 8, 7, 16)) ++hist[s.cond.id()];
    CHECK(hist.size() == 8);
    for (const auto& [cls, count] : hist) {
        CHECK(cls >= 0);
        CHECK(cls < 8);
        CHECK(count >= 113);
        CHECK(count <= 137);
    }

    CHECK_THROWS_AS(make_dataset(10, 0, 1), ConfigError);
    CHECK_THROWS_AS(make_dataset(10, 1, 1), ConfigError);
    CHECK_THROWS_AS(make_dataset(10, 13, 1), ConfigError);
    CHECK_THROWS_AS(make_dataset(0, 8, 1), ConfigError);
}

TEST_CASE("dataset: class names and colors inside the shape") {
    CHECK(class_name(0) == "red square");
    CHECK(class_name(2) == "blue square");
    CHECK(class_name(5) == "green circle");
    CHECK(class_name(11) == "yellow triangle");
    CHECK_THROWS_AS(class_name(12), ContractError);

    const std::int64_t n = 80, classes = 8;
    const auto data = make_dataset(n, classes, 9);
    int red_squares = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto id = data[static_cast<std::size_t>(i)].cond.id();
        const auto mask = dataset_shape_mask(i, n, classes, 9);
        const auto& img = data[static_cast<std::size_t>(i)].image;
        double sum[3] = {0, 0, 0};
        int inside = 0;
        for (std::int64_t p = 0; p < 32 * 32; ++p) {
            if (!mask[static_cast<std::size_t>(p)]) continue;
            ++inside;
            for (int ch = 0; ch < 3; ++ch) sum[ch] += img[ch * 32 * 32 + p];
        }
        REQUIRE(inside > 0);
        switch (class_color(id)) {
            case 0: CHECK(sum[0] > sum[2]); CHECK(sum[0] > sum[1]); break;
            case 1: CHECK(sum[1] > sum[0]); CHECK(sum[1] > sum[2]); break;
            case 2: CHECK(sum[2] > sum[0]); CHECK(sum[2] > sum[1]); break;
            default: CHECK(sum[0] > sum[2]); CHECK(sum[1] > sum[2]); break;  // yellow
        }
        red_squares += id == 0;
    }
    CHECK(red_squares > 0);
}

TEST_CASE("checkpoint: save/load reproduces outputs and detects tampering") {
    const auto dir = scratch("ckpt");
    Config c;
    c.injector.hidden = 8;
    c.validate();
    const Injector inj(c.injector_arch(), 3, c.injector.lambda);
    const auto hash = save_model(dir, inj, c);
    CHECK(hash == checkpoint_hash(dir));
    CHECK(save_model(scratch("ckpt2"), inj, c) == hash);

    CheckpointInfo info;
    const auto back = load_injector(dir, &info);
    CHECK(info.kind == "injector");
    CHECK(info.hash == hash);
    CHECK(info.config.hash() == c.hash());
    std::mt19937_64 rng(4);
    const Latent z(Tensor::randn({4, 16, 16}, rng));
    const auto m = BitMessage::random(64, rng);
    CHECK(back->inject(z, m) == inj.inject(z, m));
    CHECK(back->scores(z) == inj.scores(z));

    CHECK_THROWS_AS(load_denoiser(dir), FormatError);

    // Flip one payload byte of the first blob.
    const auto blob = dir / "params" / "0.rste";
    auto bytes = io::read_file(blob);
    bytes.back() ^= 1;
    io::write_file_atomic(blob, bytes);
    CHECK_THROWS_AS(load_injector(dir), FormatError);
    fs::remove_all(dir);
    fs::remove_all(fs::temp_directory_path() / "resetedit_test_ckpt2");
}
