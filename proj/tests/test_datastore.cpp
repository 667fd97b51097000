#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <random>

#include "knnue/datastore.hpp"
#include "oracles.hpp"

using namespace knnue;

namespace {

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected knnue::Error";
    return ErrorKind::io;
}

std::vector<DatastoreRecord> small_records() {
    return {{{1, 2, 3, 4}, 0, {}}, {{5, 6, 7, 8}, 1, {}}, {{9, 10, 11, 12}, 2, {}}};
}

Datastore random_datastore(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> n_dist(1, 50), d_dist(1, 12), l_dist(0, 3);
    std::uniform_int_distribution<std::uint32_t> j_dist(1, 6);
    std::normal_distribution<float> g(0.0f, 10.0f);
    const auto n = n_dist(rng), d = d_dist(rng);
    const auto j = j_dist(rng);
    Matrix keys(n, d);
    for (auto& v : keys.values) v = g(rng);
    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng() % j);
    std::vector<Matrix> layers;
    for (std::size_t l = 0, count = l_dist(rng); l < count; ++l) {
        Matrix m(n, d_dist(rng));
        for (auto& v : m.values) v = g(rng);
        layers.push_back(std::move(m));
    }
    return Datastore(std::move(keys), std::move(labels), j, std::move(layers), rng(), "prop");
}

bool bit_identical(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) return false;
    return std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

// Byte-level little-endian helpers, independent of io::Writer.
void put_bytes(std::string& buf, const void* src, std::size_t n) {
    unsigned char tmp[8];
    std::memcpy(tmp, src, n);
    if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + n);
    buf.append(reinterpret_cast<const char*>(tmp), n);
}
template <typename T>
void put(std::string& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(BuildDatastore, KeepsInputOrder) {
    const auto recs = small_records();
    const auto ds = build_datastore(recs, 3);
    EXPECT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.dim(), 4u);
    EXPECT_EQ(ds.meta().n, 3u);
    EXPECT_EQ(ds.meta().dim, 4u);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(ds.keys()(i, j), static_cast<float>(4 * i + j + 1));
        EXPECT_EQ(ds.labels()[i], static_cast<std::int32_t>(i));
    }
}

TEST(BuildDatastore, LabelEqualToJIsOutOfRange) {
    auto recs = small_records();
    recs[1].label = 3;
    EXPECT_EQ(kind_of([&] { build_datastore(recs, 3); }), ErrorKind::label_out_of_range);
    recs[1].label = -1;
    EXPECT_EQ(kind_of([&] { build_datastore(recs, 3); }), ErrorKind::label_out_of_range);
}

TEST(BuildDatastore, RejectsEmptyAndRaggedInput) {
    EXPECT_EQ(kind_of([] { build_datastore(std::span<const DatastoreRecord>{}, 3); }), ErrorKind::empty_input);
    auto recs = small_records();
    recs[2].embedding.push_back(0.0f);
    EXPECT_EQ(kind_of([&] { build_datastore(recs, 3); }), ErrorKind::dimension_mismatch);
}

TEST(BuildDatastore, LayerGroupsWithMismatchedRowsAreRejected) {
    Matrix keys(3, 2);
    std::vector<Matrix> layers{Matrix(3, 4), Matrix(2, 4)};
    EXPECT_EQ(kind_of([&] { Datastore(keys, {0, 1, 2}, 3, layers); }), ErrorKind::dimension_mismatch);
}

TEST(BuildDatastore, RejectsNonFiniteKeys) {
    Matrix keys(2, 2);
    keys(1, 1) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_EQ(kind_of([&] { Datastore(keys, {0, 0}, 1); }), ErrorKind::non_finite);
    keys(1, 1) = std::numeric_limits<float>::infinity();
    EXPECT_EQ(kind_of([&] { Datastore(keys, {0, 0}, 1); }), ErrorKind::non_finite);
}

TEST(BuildDatastore, LabelsLengthMustMatchRows) {
    EXPECT_EQ(kind_of([] { Datastore(Matrix(3, 2), {0, 1}, 2); }), ErrorKind::dimension_mismatch);
}

TEST(DatastoreFile, RoundTripIsBitIdenticalProperty) {
    oracle::TempDir tmp("ds");
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const auto ds = random_datastore(rng);
        const auto path = tmp.file("ds" + std::to_string(trial) + ".kue");
        write_datastore(ds, path);
        const auto back = read_datastore(path);
        ASSERT_TRUE(bit_identical(ds.keys(), back.keys()));
        ASSERT_EQ(ds.labels(), back.labels());
        ASSERT_EQ(ds.layers().size(), back.layers().size());
        for (std::size_t l = 0; l < ds.layers().size(); ++l) ASSERT_TRUE(bit_identical(ds.layers()[l], back.layers()[l]));
        ASSERT_EQ(ds.meta().seed, back.meta().seed);
        ASSERT_EQ(ds.meta().source, back.meta().source);
        ASSERT_EQ(ds.num_classes(), back.num_classes());
    }
}

TEST(DatastoreFile, PreservesNegativeZeroAndDenormals) {
    oracle::TempDir tmp("ds");
    Matrix keys(1, 3);
    keys(0, 0) = -0.0f;
    keys(0, 1) = std::numeric_limits<float>::denorm_min();
    keys(0, 2) = std::numeric_limits<float>::max();
    const Datastore ds(keys, {0}, 1);
    write_datastore(ds, tmp.file("z.kue"));
    EXPECT_TRUE(bit_identical(read_datastore(tmp.file("z.kue")).keys(), keys));
}

TEST(DatastoreFile, MatchesDocumentedByteLayout) {
    oracle::TempDir tmp("ds");
    Matrix keys(2, 3);
    for (std::size_t i = 0; i < 6; ++i) keys.values[i] = 0.5f * static_cast<float>(i) - 1.0f;
    Matrix layer(2, 1);
    layer.values = {7.0f, -7.0f};
    const Datastore ds(keys, {1, 0}, 2, {layer});
    write_datastore(ds, tmp.file("a.kue"));

    std::string want = "KUE1";
    put<std::uint32_t>(want, 1);
    put<std::uint64_t>(want, 2);
    put<std::uint32_t>(want, 3);
    put<std::uint32_t>(want, 2);
    put<std::uint32_t>(want, 1);
    put<std::uint32_t>(want, 1);
    for (float v : keys.values) put(want, v);
    for (float v : layer.values) put(want, v);
    put<std::int32_t>(want, 1);
    put<std::int32_t>(want, 0);
    EXPECT_EQ(read_file(tmp.file("a.kue")), want);
}

TEST(DatastoreFile, ReadsExternallyAssembledFile) {
    oracle::TempDir tmp("ds");
    std::string bytes = "KUE1";
    put<std::uint32_t>(bytes, 1);
    put<std::uint64_t>(bytes, 2);
    put<std::uint32_t>(bytes, 2);
    put<std::uint32_t>(bytes, 4);
    put<std::uint32_t>(bytes, 0);
    for (float v : {1.0f, 2.0f, 3.0f, 4.0f}) put(bytes, v);
    put<std::int32_t>(bytes, 3);
    put<std::int32_t>(bytes, 2);
    write_file(tmp.file("ext.kue"), bytes);
    const auto ds = read_datastore(tmp.file("ext.kue"));
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.num_classes(), 4u);
    EXPECT_EQ(ds.keys()(1, 0), 3.0f);
    EXPECT_EQ(ds.labels(), (std::vector<std::int32_t>{3, 2}));
    EXPECT_EQ(ds.meta().source, "file");
}

TEST(DatastoreFile, WritesMetaSidecar) {
    oracle::TempDir tmp("ds");
    const auto ds = build_datastore(small_records(), 3, 42, "unit");
    write_datastore(ds, tmp.file("m.kue"));
    std::ifstream in(tmp.file("m.meta.json"));
    ASSERT_TRUE(in.good());
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("N"), 3);
    EXPECT_EQ(j.at("D"), 4);
    EXPECT_EQ(j.at("J"), 3);
    EXPECT_EQ(j.at("layer_count"), 0);
    EXPECT_EQ(j.at("seed"), 42);
    EXPECT_EQ(j.at("source"), "unit");
}

TEST(DatastoreFile, WrongMagicIsBadMagic) {
    oracle::TempDir tmp("ds");
    write_datastore(build_datastore(small_records(), 3), tmp.file("x.kue"));
    auto bytes = read_file(tmp.file("x.kue"));
    bytes[3] = '2';
    write_file(tmp.file("x.kue"), bytes);
    EXPECT_EQ(kind_of([&] { read_datastore(tmp.file("x.kue")); }), ErrorKind::bad_magic);
}

TEST(DatastoreFile, OtherVersionIsVersionMismatch) {
    oracle::TempDir tmp("ds");
    write_datastore(build_datastore(small_records(), 3), tmp.file("x.kue"));
    auto bytes = read_file(tmp.file("x.kue"));
    bytes[4] = 2;
    write_file(tmp.file("x.kue"), bytes);
    EXPECT_EQ(kind_of([&] { read_datastore(tmp.file("x.kue")); }), ErrorKind::version_mismatch);
}

TEST(DatastoreFile, TruncatedAnywhereIsTruncated) {
    oracle::TempDir tmp("ds");
    write_datastore(build_datastore(small_records(), 3), tmp.file("x.kue"));
    const auto bytes = read_file(tmp.file("x.kue"));
    for (std::size_t cut : {bytes.size() - 1, bytes.size() - 13, std::size_t{40}, std::size_t{30}, std::size_t{6}}) {
        write_file(tmp.file("t.kue"), bytes.substr(0, cut));
        EXPECT_EQ(kind_of([&] { read_datastore(tmp.file("t.kue")); }), ErrorKind::truncated) << "cut at " << cut;
    }
}

TEST(DatastoreFile, HugeHeaderFailsWithoutAllocating) {
    oracle::TempDir tmp("ds");
    std::string bytes = "KUE1";
    put<std::uint32_t>(bytes, 1);
    put<std::uint64_t>(bytes, std::uint64_t{1} << 62);
    put<std::uint32_t>(bytes, 1u << 30);
    put<std::uint32_t>(bytes, 2);
    put<std::uint32_t>(bytes, 0);
    write_file(tmp.file("h.kue"), bytes);
    EXPECT_EQ(kind_of([&] { read_datastore(tmp.file("h.kue")); }), ErrorKind::truncated);
}

TEST(DatastoreFile, LoadRechecksLabelInvariant) {
    oracle::TempDir tmp("ds");
    std::string bytes = "KUE1";
    put<std::uint32_t>(bytes, 1);
    put<std::uint64_t>(bytes, 1);
    put<std::uint32_t>(bytes, 1);
    put<std::uint32_t>(bytes, 2);
    put<std::uint32_t>(bytes, 0);
    put(bytes, 1.0f);
    put<std::int32_t>(bytes, 2);
    write_file(tmp.file("l.kue"), bytes);
    EXPECT_EQ(kind_of([&] { read_datastore(tmp.file("l.kue")); }), ErrorKind::label_out_of_range);
}

TEST(DatastoreFile, MissingFileIsIoError) {
    EXPECT_EQ(kind_of([] { read_datastore("/nonexistent/dir/none.kue"); }), ErrorKind::io);
}

TEST(RecordsFile, RoundTripWithLayersAndSpans) {
    oracle::TempDir tmp("rec");
    std::mt19937_64 rng(3);
    std::normal_distribution<float> g;
    EvalSet set;
    set.num_classes = 4;
    set.dim = 5;
    set.layer_dims = {2, 3};
    for (int i = 0; i < 17; ++i) {
        EvalRecord r;
        for (int c = 0; c < 4; ++c) r.logits.push_back(g(rng));
        for (int d = 0; d < 5; ++d) r.embedding.push_back(g(rng));
        r.layer_embeddings = {{g(rng), g(rng)}, {g(rng), g(rng), g(rng)}};
        r.gold = i % 4;
        r.span_id = i / 3;
        set.records.push_back(r);
    }
    write_records(set, tmp.file("r.kur"));
    EXPECT_EQ(read_records(tmp.file("r.kur")), set);
    EXPECT_TRUE(set.has_spans());
}

TEST(RecordsFile, MatchesDocumentedByteLayout) {
    oracle::TempDir tmp("rec");
    EvalSet set;
    set.num_classes = 2;
    set.dim = 1;
    set.records = {{{0.25f, -0.25f}, {3.0f}, {}, 1, -1}, {{1.0f, 2.0f}, {4.0f}, {}, 0, 5}};
    write_records(set, tmp.file("r.kur"));
    std::string want = "KUR1";
    put<std::uint32_t>(want, 1);
    put<std::uint64_t>(want, 2);
    put<std::uint32_t>(want, 2);
    put<std::uint32_t>(want, 1);
    put<std::uint32_t>(want, 0);
    for (float v : {0.25f, -0.25f, 1.0f, 2.0f, 3.0f, 4.0f}) put(want, v);
    for (std::int32_t v : {1, 0, -1, 5}) put(want, v);
    EXPECT_EQ(read_file(tmp.file("r.kur")), want);
}

TEST(RecordsFile, RejectsBadMagicAndTruncation) {
    oracle::TempDir tmp("rec");
    EvalSet set;
    set.num_classes = 2;
    set.dim = 1;
    set.records = {{{0.0f, 1.0f}, {3.0f}, {}, 1, -1}};
    write_records(set, tmp.file("r.kur"));
    const auto bytes = read_file(tmp.file("r.kur"));
    write_file(tmp.file("t.kur"), bytes.substr(0, bytes.size() - 2));
    EXPECT_EQ(kind_of([&] { read_records(tmp.file("t.kur")); }), ErrorKind::truncated);
    write_file(tmp.file("m.kur"), "KUE1" + bytes.substr(4));
    EXPECT_EQ(kind_of([&] { read_records(tmp.file("m.kur")); }), ErrorKind::bad_magic);
}

TEST(RecordsFile, ValidatesRecordsBeforeWriting) {
    oracle::TempDir tmp("rec");
    EvalSet set;
    set.num_classes = 2;
    set.dim = 1;
    set.records = {{{0.0f, std::numeric_limits<float>::infinity()}, {3.0f}, {}, 1, -1}};
    EXPECT_EQ(kind_of([&] { write_records(set, tmp.file("r.kur")); }), ErrorKind::non_finite);
    set.records[0].logits = {0.0f, 1.0f};
    set.records[0].gold = 2;
    EXPECT_EQ(kind_of([&] { write_records(set, tmp.file("r.kur")); }), ErrorKind::label_out_of_range);
    set.records[0].gold = 0;
    set.records[0].embedding = {1.0f, 2.0f};
    EXPECT_EQ(kind_of([&] { write_records(set, tmp.file("r.kur")); }), ErrorKind::dimension_mismatch);
}

TEST(Core, SeedDerivationIsStableAndSpreadsStreams) {
    EXPECT_EQ(derive_seed(0, 1), derive_seed(0, 1));
    EXPECT_NE(derive_seed(0, 1), derive_seed(0, 2));
    EXPECT_NE(derive_seed(0, 1), derive_seed(1, 1));
    // Reference value of splitmix64 for input 0.
    EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Core, ParallelForVisitsEveryIndexOnce) {
    for (std::size_t threads : {1u, 2u, 5u}) {
        std::vector<int> hits(103, 0);
        parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
        for (int h : hits) ASSERT_EQ(h, 1);
    }
}
