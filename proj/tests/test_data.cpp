#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "forgeloc/data.hpp"

using namespace forgeloc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("forgeloc_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Raster noise_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Raster r(c, h, w);
    for (float& v : r.data) v = u(rng);
    return r;
}

Raster checkerboard(std::size_t size) {
    Raster r(1, size, size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) r.at(0, y, x) = float((x + y) % 2);
    return r;
}

double fraction(const Raster& mask) {
    double s = 0.0;
    for (float v : mask.data) s += v;
    return s / double(mask.data.size());
}

bool binary(const Raster& mask) {
    return std::all_of(mask.data.begin(), mask.data.end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

// Exact overlap of output cell i with input cell k along one axis, divided by the cell width.
double overlap_weight(std::size_t i, std::size_t k, std::size_t in, std::size_t out) {
    const double scale = double(in) / double(out);
    const double lo = std::max(double(i) * scale, double(k));
    const double hi = std::min(double(i + 1) * scale, double(k + 1));
    return std::max(0.0, hi - lo) / scale;
}

void write_png16(const fs::path& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, 2, 2, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_byte row[4] = {0x12, 0x34, 0xff, 0x00};
    png_write_row(png, row);
    png_write_row(png, row);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

}  // namespace

// ============================================================================
// PNG
// ============================================================================

TEST(PngTest, RgbRoundTripWithinQuantum) {
    fs::path dir = temp_dir("png_rgb");
    Raster img = noise_image(3, 7, 9, 1);
    write_png(img, dir / "a.png");
    Raster back = read_png(dir / "a.png");
    ASSERT_EQ(back.channels, 3u);
    ASSERT_EQ(back.height, 7u);
    ASSERT_EQ(back.width, 9u);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_LE(std::abs(back.data[i] - img.data[i]), 1.0f / 255.0f);
    // a quantized raster survives exactly
    Raster q = img;
    quantize8(q);
    write_png(q, dir / "b.png");
    EXPECT_EQ(read_png(dir / "b.png"), q);
    fs::remove_all(dir);
}

TEST(PngTest, MaskRoundTripsExactly) {
    fs::path dir = temp_dir("png_mask");
    Raster mask = checkerboard(6);
    write_png(mask, dir / "m.png");
    Raster back = read_png(dir / "m.png");
    EXPECT_EQ(back.channels, 1u);
    EXPECT_EQ(back, mask);
    fs::remove_all(dir);
}

TEST(PngTest, ErrorsAreExplicit) {
    fs::path dir = temp_dir("png_err");
    EXPECT_THROW(read_png(dir / "missing.png"), IoError);

    write_png16(dir / "deep.png");
    try {
        read_png(dir / "deep.png");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("bit depth"), std::string::npos) << e.what();
    }

    write_png(noise_image(3, 16, 16, 2), dir / "full.png");
    std::ifstream in(dir / "full.png", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "cut.png", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(read_png(dir / "cut.png"), IoError);
    std::ofstream(dir / "junk.png", std::ios::binary) << "not a png at all";
    EXPECT_THROW(read_png(dir / "junk.png"), IoError);

    EXPECT_THROW(write_png(Raster(2, 4, 4), dir / "two.png"), IoError);
    fs::remove_all(dir);
}

// ============================================================================
// Resizing
// ============================================================================

TEST(ResizeTest, ConstantStaysConstant) {
    Raster img(3, 8, 8, 0.3f);
    Raster half = resize_image(img, 4, 4);
    for (float v : half.data) EXPECT_NEAR(v, 0.3f, 1e-6f);
    Raster odd = resize_image(img, 5, 3);
    for (float v : odd.data) EXPECT_NEAR(v, 0.3f, 1e-6f);
}

TEST(ResizeTest, CheckerboardHalvesToHalfGray) {
    Raster half = resize_image(checkerboard(4), 2, 2);
    ASSERT_EQ(half.data.size(), 4u);
    for (float v : half.data) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(ResizeTest, MatchesOverlapOracle) {
    Raster img = noise_image(2, 7, 5, 3);
    for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{3, 2}, {4, 4}, {11, 8}, {7, 5}}) {
        Raster out = resize_image(img, oh, ow);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double expect = 0.0;
                    for (std::size_t y = 0; y < 7; ++y)
                        for (std::size_t x = 0; x < 5; ++x)
                            expect += overlap_weight(i, y, 7, oh) * overlap_weight(j, x, 5, ow) * img.at(c, y, x);
                    EXPECT_NEAR(out.at(c, i, j), expect, 1e-5) << oh << "x" << ow;
                }
    }
}

TEST(ResizeTest, MaskStaysBinary) {
    Raster mask = checkerboard(9);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 4}, {13, 7}, {1, 1}, {30, 2}}) {
        Raster r = resize_mask(mask, h, w);
        EXPECT_EQ(r.height, h);
        EXPECT_EQ(r.width, w);
        EXPECT_TRUE(binary(r));
    }
    Raster up = resize_mask(checkerboard(2), 4, 4);
    EXPECT_EQ(up.at(0, 0, 0), 0.0f);
    EXPECT_EQ(up.at(0, 1, 1), 0.0f);
    EXPECT_EQ(up.at(0, 0, 2), 1.0f);
}

TEST(ResizeTest, ZeroTargetRejected) {
    EXPECT_THROW(resize_image(Raster(3, 4, 4), 0, 4), std::invalid_argument);
    EXPECT_THROW(resize_mask(Raster(1, 4, 4), 4, 0), std::invalid_argument);
}

// ============================================================================
// Generators
// ============================================================================

TEST(RegionTest, TamperedFractionInRangeOver1000Seeds) {
    double lo = 1.0, hi = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        Raster m = sample_region(64, 64, rng);
        ASSERT_TRUE(binary(m));
        const double f = fraction(m);
        ASSERT_GT(f, kMinTamperedFraction) << seed;
        ASSERT_LT(f, kMaxTamperedFraction) << seed;
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    // the sampler spans a real range, not one size
    EXPECT_LT(lo, 0.05);
    EXPECT_GT(hi, 0.15);
}

TEST(GeneratorTest, SplicePastesDonorInsideMaskOnly) {
    Rng base_rng(1);
    Raster base = generate_base(48, 48, NoiseModel{}, base_rng);
    Raster donor = generate_base(48, 48, NoiseModel{0.03, 0.0}, base_rng);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        ForgerySample s = generate_splice(base, donor, rng);
        EXPECT_EQ(s.kind, ForgeryKind::splice);
        ASSERT_TRUE(binary(s.mask));
        for (std::size_t y = 0; y < 48; ++y)
            for (std::size_t x = 0; x < 48; ++x) {
                const bool tampered = s.mask.at(0, y, x) == 1.0f;
                for (std::size_t c = 0; c < 3; ++c) {
                    ASSERT_EQ(s.image.at(c, y, x), tampered ? donor.at(c, y, x) : base.at(c, y, x));
                }
            }
    }
    EXPECT_THROW(generate_splice(base, Raster(3, 40, 48), base_rng), std::invalid_argument);
}

TEST(GeneratorTest, FeatheringBlendsOnlyTheBorder) {
    Raster base(3, 32, 32, 0.0f), donor(3, 32, 32, 1.0f);
    Rng rng(4);
    ForgerySample s = generate_splice(base, donor, rng, SpliceOptions{true});
    std::size_t half = 0;
    for (std::size_t i = 0; i < s.mask.data.size(); ++i) {
        const float v = s.image.data[i];
        if (s.mask.data[i] == 0.0f) {
            EXPECT_EQ(v, 0.0f);
        } else {
            EXPECT_TRUE(v == 1.0f || v == 0.5f);
            half += v == 0.5f;
        }
    }
    EXPECT_GT(half, 0u);
}

TEST(GeneratorTest, CopyMoveDuplicatesRegionAtNonzeroShift) {
    Rng base_rng(2);
    Raster base = generate_base(32, 32, NoiseModel{}, base_rng);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        ForgerySample s = generate_copy_move(base, rng);
        ASSERT_TRUE(binary(s.mask));
        std::vector<std::pair<std::size_t, std::size_t>> marked;
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) {
                if (s.mask.at(0, y, x) == 1.0f) {
                    marked.emplace_back(y, x);
                } else {
                    for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(s.image.at(c, y, x), base.at(c, y, x));
                }
            }
        ASSERT_FALSE(marked.empty());
        // some nonzero shift maps every marked pixel to an unmarked source with the same values
        bool found = false;
        for (int dy = -31; dy <= 31 && !found; ++dy)
            for (int dx = -31; dx <= 31 && !found; ++dx) {
                if (dy == 0 && dx == 0) continue;
                bool ok = true;
                for (auto [y, x] : marked) {
                    const int sy = int(y) - dy, sx = int(x) - dx;
                    if (sy < 0 || sx < 0 || sy >= 32 || sx >= 32 || s.mask.at(0, sy, sx) == 1.0f) {
                        ok = false;
                        break;
                    }
                    for (std::size_t c = 0; c < 3 && ok; ++c) ok = s.image.at(c, y, x) == base.at(c, sy, sx);
                    if (!ok) break;
                }
                found = ok;
            }
        EXPECT_TRUE(found) << seed;
    }
}

TEST(GeneratorTest, RemovalStaysInsideBorderRange) {
    Rng base_rng(3);
    Raster base = generate_base(40, 40, NoiseModel{}, base_rng);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        ForgerySample s = generate_removal(base, rng);
        const std::size_t n = base.plane();
        for (std::size_t c = 0; c < 3; ++c) {
            float lo = 2.0f, hi = -1.0f;
            for (std::size_t y = 0; y < 40; ++y)
                for (std::size_t x = 0; x < 40; ++x) {
                    if (s.mask.at(0, y, x) != 0.0f) continue;
                    const bool ring = (y > 0 && s.mask.at(0, y - 1, x) == 1.0f) || (y < 39 && s.mask.at(0, y + 1, x) == 1.0f) ||
                                      (x > 0 && s.mask.at(0, y, x - 1) == 1.0f) || (x < 39 && s.mask.at(0, y, x + 1) == 1.0f);
                    if (ring) {
                        lo = std::min(lo, base.at(c, y, x));
                        hi = std::max(hi, base.at(c, y, x));
                    }
                }
            for (std::size_t p = 0; p < n; ++p) {
                const float v = s.image.data[c * n + p];
                if (s.mask.data[p] == 1.0f) {
                    EXPECT_GE(v, lo);
                    EXPECT_LE(v, hi);
                } else {
                    EXPECT_EQ(v, base.data[c * n + p]);
                }
            }
        }
    }
}

TEST(GeneratorTest, RemovalOnConstantBaseIsNoOp) {
    Raster base(3, 32, 32, 0.42f);
    Rng rng(8);
    ForgerySample s = generate_removal(base, rng);
    EXPECT_EQ(s.image, base);
    EXPECT_GT(fraction(s.mask), kMinTamperedFraction);
}

TEST(FillTest, ConvergesOnLargeRegionAndMatchesLaplaceOracle) {
    const std::size_t size = 96, lo = 16, hi = 80;  // 64 x 64 hole
    Raster image(1, size, size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            image.at(0, y, x) = 0.5f + 0.4f * float(std::sin(0.11 * double(x)) * std::cos(0.07 * double(y)));
    Raster region(1, size, size);
    for (std::size_t y = lo; y < hi; ++y)
        for (std::size_t x = lo; x < hi; ++x) region.at(0, y, x) = 1.0f;

    FillReport report;
    Raster filled = diffusion_fill(image, region, &report);
    EXPECT_LT(report.last_change, 1e-4);
    EXPECT_LE(report.sweeps, 200);

    // independent solve of the discrete Laplace equation with fixed border values
    std::vector<double> u(size * size);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = region.data[i] == 1.0f ? 0.5 : image.data[i];
    const double omega = 2.0 / (1.0 + std::sin(M_PI / double(hi - lo + 1)));
    for (int sweep = 0; sweep < 4000; ++sweep)
        for (std::size_t y = lo; y < hi; ++y)
            for (std::size_t x = lo; x < hi; ++x) {
                double& v = u[y * size + x];
                const double avg = 0.25 * (u[(y - 1) * size + x] + u[(y + 1) * size + x] + u[y * size + x - 1] +
                                           u[y * size + x + 1]);
                v += omega * (avg - v);
            }
    double worst = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) worst = std::max(worst, std::abs(u[i] - double(filled.data[i])));
    EXPECT_LT(worst, 5e-3);
}

TEST(FillTest, RejectsBadRegions) {
    Raster image(3, 8, 8, 0.5f);
    EXPECT_THROW(diffusion_fill(image, Raster(1, 8, 8, 1.0f)), std::invalid_argument);
    EXPECT_THROW(diffusion_fill(image, Raster(1, 8, 7)), std::invalid_argument);
}

TEST(SampleTest, ReproducibleAndValid) {
    for (ForgeryKind kind : {ForgeryKind::splice, ForgeryKind::copy_move, ForgeryKind::removal}) {
        for (std::uint64_t seed = 0; seed < 30; ++seed) {
            ForgerySample a = generate_sample(kind, 48, 40, seed);
            ForgerySample b = generate_sample(kind, 48, 40, seed);
            ASSERT_EQ(a.image, b.image);
            ASSERT_EQ(a.mask, b.mask);
            EXPECT_EQ(a.kind, kind);
            EXPECT_EQ(a.image.channels, 3u);
            EXPECT_EQ(a.image.height, 48u);
            EXPECT_EQ(a.image.width, 40u);
            EXPECT_TRUE(a.mask.same_size(a.image));
            EXPECT_TRUE(binary(a.mask));
            const double f = fraction(a.mask);
            EXPECT_GT(f, kMinTamperedFraction);
            EXPECT_LT(f, kMaxTamperedFraction);
            for (float v : a.image.data) {
                ASSERT_GE(v, 0.0f);
                ASSERT_LE(v, 1.0f);
                ASSERT_EQ(v, std::round(v * 255.0f) / 255.0f);
            }
        }
    }
    EXPECT_NE(generate_sample(ForgeryKind::splice, 16, 16, 1).image, generate_sample(ForgeryKind::splice, 16, 16, 2).image);
}

TEST(SampleTest, TensorConversionRoundTrips) {
    ForgerySample s = generate_sample(ForgeryKind::splice, 8, 12, 5);
    Example ex = to_example(s);
    EXPECT_EQ(ex.image.shape(), (Shape{1, 3, 8, 12}));
    EXPECT_EQ(ex.mask.shape(), (Shape{1, 1, 8, 12}));
    EXPECT_EQ(tensor_to_raster(ex.image), s.image);
    EXPECT_EQ(tensor_to_raster(ex.mask), s.mask);
    EXPECT_THROW(tensor_to_raster(ex.image, 1), std::out_of_range);
}

TEST(KindTest, NamesRoundTrip) {
    for (ForgeryKind k : {ForgeryKind::splice, ForgeryKind::copy_move, ForgeryKind::removal})
        EXPECT_EQ(forgery_kind_from_string(to_string(k)), k);
    EXPECT_THROW(forgery_kind_from_string("inpaint"), std::invalid_argument);
}

// ============================================================================
// Manifest and datasets
// ============================================================================

TEST(ManifestTest, RoundTrip) {
    fs::path dir = temp_dir("manifest");
    Manifest m;
    m.entries = {{"images/a.png", "masks/a.png", ForgeryKind::splice, 11, Split::train},
                 {"images/b.png", "masks/b.png", ForgeryKind::removal, 18446744073709551615ull, Split::test}};
    write_manifest(m, dir / "manifest.tsv");
    std::ifstream in(dir / "manifest.tsv");
    std::string first;
    std::getline(in, first);
    EXPECT_EQ(first, "images/a.png\tmasks/a.png\tsplice\t11\ttrain");
    Manifest back = read_manifest(dir / "manifest.tsv");
    EXPECT_EQ(back.root, dir);
    ASSERT_EQ(back.entries.size(), 2u);
    EXPECT_EQ(back.entries[1].seed, 18446744073709551615ull);
    EXPECT_EQ(back.entries[1].kind, ForgeryKind::removal);
    EXPECT_EQ(back.select(Split::test).size(), 1u);
    EXPECT_EQ(back.resolve("images/a.png"), dir / "images/a.png");
    EXPECT_EQ(back.resolve("/abs/x.png"), fs::path("/abs/x.png"));
    fs::remove_all(dir);
}

TEST(ManifestTest, OverlappingSplitsRejected) {
    Manifest same_path;
    same_path.entries = {{"images/a.png", "masks/a.png", ForgeryKind::splice, 1, Split::train},
                         {"images/a.png", "masks/a.png", ForgeryKind::splice, 2, Split::test}};
    EXPECT_THROW(check_disjoint(same_path), std::runtime_error);
    Manifest same_seed;
    same_seed.entries = {{"images/a.png", "masks/a.png", ForgeryKind::splice, 7, Split::train},
                         {"images/b.png", "masks/b.png", ForgeryKind::splice, 7, Split::test}};
    EXPECT_THROW(check_disjoint(same_seed), std::runtime_error);

    fs::path dir = temp_dir("manifest_bad");
    std::ofstream(dir / "overlap.tsv") << "a.png\tma.png\tsplice\t1\ttrain\na.png\tma.png\tsplice\t2\ttest\n";
    EXPECT_THROW(read_manifest(dir / "overlap.tsv"), std::runtime_error);
    std::ofstream(dir / "fields.tsv") << "a.png\tma.png\tsplice\t1\n";
    EXPECT_THROW(read_manifest(dir / "fields.tsv"), IoError);
    std::ofstream(dir / "split.tsv") << "a.png\tma.png\tsplice\t1\tval\n";
    EXPECT_THROW(read_manifest(dir / "split.tsv"), IoError);
    std::ofstream(dir / "kind.tsv") << "a.png\tma.png\tblur\t1\ttrain\n";
    EXPECT_THROW(read_manifest(dir / "kind.tsv"), IoError);
    EXPECT_THROW(read_manifest(dir / "none.tsv"), IoError);
    fs::remove_all(dir);
}

TEST(DatasetTest, WritesPairsAndLoadsBack) {
    fs::path dir = temp_dir("dataset");
    DatasetOptions opt;
    opt.train_count = 4;
    opt.test_count = 2;
    opt.height = 24;
    opt.width = 24;
    opt.seed = 9;
    Manifest m = generate_dataset(opt, dir);
    ASSERT_EQ(m.entries.size(), 6u);
    std::set<std::uint64_t> seeds;
    for (const auto& e : m.entries) {
        EXPECT_TRUE(fs::exists(m.resolve(e.image_path)));
        EXPECT_TRUE(fs::exists(m.resolve(e.mask_path)));
        seeds.insert(e.seed);
    }
    EXPECT_EQ(seeds.size(), 6u);
    Manifest read = read_manifest(dir / "manifest.tsv");
    EXPECT_EQ(read.select(Split::train).size(), 4u);

    // images on disk are the in-memory samples
    auto samples = generate_samples(opt);
    EXPECT_EQ(read_png(dir / samples[5].first.image_path), samples[5].second.image);
    EXPECT_EQ(read_png(dir / samples[5].first.mask_path), samples[5].second.mask);

    std::vector<std::string> warnings;
    auto test = load_examples(read, Split::test, 24, 24, &warnings);
    ASSERT_EQ(test.size(), 2u);
    EXPECT_TRUE(warnings.empty());
    auto resized = load_examples(read, Split::test, 16, 20, &warnings);
    EXPECT_EQ(resized[0].image.shape(), (Shape{1, 3, 16, 20}));
    EXPECT_EQ(warnings.size(), 2u);
    for (float v : resized[1].mask.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
    fs::remove_all(dir);
}

TEST(DatasetTest, ExternalBaseFolder) {
    fs::path dir = temp_dir("bases");
    write_png(noise_image(3, 20, 30, 1), dir / "b1.png");
    write_png(noise_image(3, 10, 10, 2), dir / "a0.png");
    std::vector<Raster> bases = load_base_folder(dir, 16, 16);
    ASSERT_EQ(bases.size(), 2u);
    EXPECT_EQ(bases[0].height, 16u);
    ForgerySample s = generate_sample(ForgeryKind::splice, 16, 16, 3, &bases);
    EXPECT_EQ(s.image.height, 16u);
    EXPECT_THROW(load_base_folder(dir / "nothing", 16, 16), IoError);
    fs::remove_all(dir);
}
