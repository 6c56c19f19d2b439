#include "milrp/trialio.hpp"
#include "milrp/random.hpp"
#include "support/tempdir.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace milrp;
using namespace milrp::trialio;
namespace mt = milrp::testing;

namespace {

TrialSet random_set(Rng& rng, std::size_t channels, std::size_t trials)
{
    TrialSet s;
    s.subject = "A07";
    s.session = "E";
    s.sample_rate = 250.0;
    for (std::size_t c = 0; c < channels; ++c) s.channels.push_back("ch" + std::to_string(c));
    for (std::size_t i = 0; i < trials; ++i) {
        Trial t;
        t.n_samples = 10 + i;
        t.cue_sample = i;
        t.label = i % 3 == 0 ? Label::right : Label::left;
        t.rejected = i % 4 == 1;
        for (std::size_t k = 0; k < channels * t.n_samples; ++k) t.samples.push_back(static_cast<float>(rng.normal()));
        s.trials.push_back(std::move(t));
    }
    return s;
}

io::FormatErrc code_of(std::string_view bytes, const ReadOptions& opt = {})
{
    try {
        decode_trialset(bytes, opt);
    } catch (const io::FormatError& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode succeeded";
    return io::FormatErrc::bad_value;
}

std::string message_of(std::string_view bytes, const ReadOptions& opt = {})
{
    try {
        decode_trialset(bytes, opt);
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

// Overwrites four little-endian bytes at `pos`.
void poke_u32(std::string& bytes, std::size_t pos, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) bytes[pos + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

// Byte offset of the version field and of the channel count for set.
constexpr std::size_t kVersionAt = 4;
std::size_t channel_count_at(const TrialSet& s) { return 8 + 4 + s.subject.size() + 4 + s.session.size() + 8; }

const ReadOptions kAnyChannels{std::nullopt, {}};

} // namespace

TEST(TrialFlags, RejectedBitAndLabel)
{
    EXPECT_EQ(encode_flags(Label::left, false), 0x00);
    EXPECT_EQ(encode_flags(Label::right, false), 0x01);
    EXPECT_EQ(encode_flags(Label::right, true), 0x81);
    for (std::uint8_t f : {0x00, 0x01, 0x80, 0x81}) {
        const auto [l, r] = decode_flags(f);
        EXPECT_EQ(encode_flags(l, r), f);
    }
    EXPECT_THROW(decode_flags(0x02), io::FormatError);
    EXPECT_THROW(decode_flags(0x40), io::FormatError);
}

TEST(TrialContainer, RoundTripIsBitExact)
{
    Rng rng(1);
    for (std::size_t ch : {1u, 3u, 22u}) {
        const auto s = random_set(rng, ch, 5);
        const auto bytes = encode_trialset(s);
        EXPECT_EQ(decode_trialset(bytes, kAnyChannels), s);
        EXPECT_EQ(encode_trialset(decode_trialset(bytes, kAnyChannels)), bytes);
    }
}

TEST(TrialContainer, EmptySetRoundTrips)
{
    Rng rng(2);
    const auto s = random_set(rng, 22, 0);
    EXPECT_EQ(decode_trialset(encode_trialset(s)), s);
}

TEST(TrialContainer, EveryTruncationIsDetected)
{
    Rng rng(3);
    const auto bytes = encode_trialset(random_set(rng, 2, 3));
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        const auto c = code_of(bytes.substr(0, n), kAnyChannels);
        EXPECT_TRUE(c == io::FormatErrc::truncated || (n < 4 && c == io::FormatErrc::bad_magic)) << n;
    }
    const auto msg = message_of(bytes.substr(0, bytes.size() - 3), kAnyChannels);
    EXPECT_NE(msg.find("trial 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("file has " + std::to_string(bytes.size() - 3)), std::string::npos) << msg;
}

TEST(TrialContainer, DistinctErrorCodes)
{
    Rng rng(4);
    const auto s = random_set(rng, 21, 2);
    const auto bytes = encode_trialset(s);

    EXPECT_EQ(code_of("XXXX" + bytes.substr(4), kAnyChannels), io::FormatErrc::bad_magic);

    auto v99 = bytes;
    poke_u32(v99, kVersionAt, 99);
    EXPECT_EQ(code_of(v99, kAnyChannels), io::FormatErrc::unsupported_version);
    EXPECT_NE(message_of(v99, kAnyChannels).find("99"), std::string::npos);

    EXPECT_EQ(code_of(bytes), io::FormatErrc::channel_mismatch);
    EXPECT_NE(message_of(bytes).find("21"), std::string::npos);

    EXPECT_EQ(code_of(bytes + "x", kAnyChannels), io::FormatErrc::trailing_bytes);

    auto huge = bytes;
    poke_u32(huge, channel_count_at(s), 0xffffffffu);
    EXPECT_EQ(code_of(huge, kAnyChannels), io::FormatErrc::limit_exceeded);

    ReadOptions tight = kAnyChannels;
    tight.limits.max_samples = 5;
    EXPECT_EQ(code_of(bytes, tight), io::FormatErrc::limit_exceeded);
}

TEST(TrialContainer, FileErrorsNameThePath)
{
    mt::TempDir dir;
    Rng rng(5);
    auto s = random_set(rng, 22, 2);
    write_trialset(s, dir / "a.mits");
    EXPECT_EQ(read_trialset(dir / "a.mits"), s);

    dir.write("bad.mits", "MITS");
    try {
        read_trialset(dir / "bad.mits");
        FAIL();
    } catch (const io::FormatError& e) {
        EXPECT_EQ(e.code(), io::FormatErrc::truncated);
        EXPECT_NE(std::string(e.what()).find("bad.mits"), std::string::npos);
    }
    EXPECT_THROW(read_trialset(dir / "missing.mits"), InputError);
}

TEST(TrialContainer, EncodeValidates)
{
    Rng rng(6);
    auto s = random_set(rng, 3, 1);
    s.trials[0].samples.pop_back();
    EXPECT_THROW(encode_trialset(s), InputError);
    s = random_set(rng, 3, 1);
    s.session = "X";
    EXPECT_THROW(encode_trialset(s), InputError);
}

// --- text import ---------------------------------------------------------

namespace {

void write_toy(const mt::TempDir& dir)
{
    dir.write("manifest.txt",
              "# toy set\n"
              "subject = A01\n"
              "session = T\n"
              "sample_rate = 250\n"
              "channels = C3, Cz, C4\n"
              "trial = t0.txt\n"
              "trial = t1.txt\n");
    dir.write("t0.txt", "# cue = 2\n# label = left\n1 2 3 4\n5,6,7,8\n-1\t0.5\t0\t2e1\n");
    dir.write("t1.txt", "# cue = 0\n# label = right\n# rejected = 1\n0 0\n0 1\n1 0\n");
}

std::string import_error(const mt::TempDir& dir)
{
    try {
        import_text(dir.path());
    } catch (const InputError& e) {
        return e.what();
    }
    ADD_FAILURE() << "import succeeded";
    return {};
}

} // namespace

TEST(TextImport, ToySet)
{
    mt::TempDir dir;
    write_toy(dir);
    const auto s = import_text(dir.path());
    EXPECT_EQ(s.id(), "A01T");
    EXPECT_EQ(s.sample_rate, 250.0);
    EXPECT_EQ(s.channels, (std::vector<std::string>{"C3", "Cz", "C4"}));
    ASSERT_EQ(s.trials.size(), 2u);
    const auto& t0 = s.trials[0];
    EXPECT_EQ(t0.n_samples, 4u);
    EXPECT_EQ(t0.cue_sample, 2u);
    EXPECT_EQ(t0.label, Label::left);
    EXPECT_FALSE(t0.rejected);
    EXPECT_EQ(t0.samples, (std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, -1, 0.5f, 0, 20}));
    EXPECT_EQ(s.trials[1].label, Label::right);
    EXPECT_TRUE(s.trials[1].rejected);
    EXPECT_EQ(s.trials[1].to_matrix(3)(1, 1), 1.0);

    // Imported sets survive the binary container unchanged.
    EXPECT_EQ(decode_trialset(encode_trialset(s), kAnyChannels), s);
}

TEST(TextImport, RowCountMismatch)
{
    mt::TempDir dir;
    std::ostringstream manifest, trial;
    manifest << "subject = A02\nsession = E\nsample_rate = 250\nchannels =";
    for (int c = 0; c < 22; ++c) manifest << " c" << c;
    manifest << "\ntrial = t.txt\n";
    trial << "# cue = 0\n# label = left\n";
    for (int r = 0; r < 23; ++r) trial << "0 1 2\n";
    dir.write("manifest.txt", manifest.str());
    dir.write("t.txt", trial.str());
    const auto msg = import_error(dir);
    EXPECT_NE(msg.find("23 rows but 22 channels"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("transposed"), std::string::npos);
}

TEST(TextImport, TransposedFileGetsHint)
{
    mt::TempDir dir;
    write_toy(dir);
    dir.write("t1.txt", "# cue = 0\n# label = right\n1 2 3\n4 5 6\n7 8 9\n10 11 12\n");
    const auto msg = import_error(dir);
    EXPECT_NE(msg.find("t1.txt"), std::string::npos);
    EXPECT_NE(msg.find("transposed"), std::string::npos) << msg;
}

TEST(TextImport, UnknownLabelNamesFileAndLine)
{
    mt::TempDir dir;
    write_toy(dir);
    dir.write("t0.txt", "# cue = 2\n# label = foot\n1 2\n3 4\n5 6\n");
    const auto msg = import_error(dir);
    EXPECT_NE(msg.find("t0.txt:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("foot"), std::string::npos);
}

TEST(TextImport, MalformedInputs)
{
    mt::TempDir dir;
    EXPECT_NE(import_error(dir).find("missing manifest"), std::string::npos);

    write_toy(dir);
    dir.write("t0.txt", "# cue = 2\n# label = left\n1 2 x\n3 4 5\n5 6 7\n");
    auto msg = import_error(dir);
    EXPECT_NE(msg.find("t0.txt:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'x'"), std::string::npos);

    dir.write("t0.txt", "# cue = 2\n# label = left\n1 2 3\n3 4\n5 6 7\n");
    EXPECT_NE(import_error(dir).find("t0.txt:4"), std::string::npos);

    dir.write("t0.txt", "# label = left\n1 2\n3 4\n5 6\n");
    EXPECT_NE(import_error(dir).find("cue"), std::string::npos);

    write_toy(dir);
    dir.write("manifest.txt", "subject = A01\nsession = T\nsample_rate = 250\nchannels = a\ncolour = red\n");
    EXPECT_NE(import_error(dir).find("manifest.txt:5"), std::string::npos);

    dir.write("manifest.txt", "subject = A01\nsession = Q\nsample_rate = 250\nchannels = a\n");
    EXPECT_NE(import_error(dir).find("session"), std::string::npos);

    dir.write("manifest.txt", "subject = A01\nsession = T\nchannels = a\n");
    EXPECT_NE(import_error(dir).find("sample_rate"), std::string::npos);

    dir.write("manifest.txt", "subject = A01\nsession = T\nsample_rate = 250\nchannels = a\ntrial = nope.txt\n");
    EXPECT_NE(import_error(dir).find("nope.txt"), std::string::npos);
}

// --- tensor cache ----------------------------------------------------------

namespace {

TensorCache random_cache(Rng& rng, std::size_t n)
{
    TensorCache c;
    c.grid_hash = 0x1234;
    c.config_digest = 0xfeedbeef;
    c.subject = "A03";
    c.session = "T";
    for (std::size_t i = 0; i < n; ++i) {
        CachedTensor e;
        for (double& v : e.tensor.planes.values()) v = rng.normal();
        e.tensor.label = i % 2 ? Label::right : Label::left;
        e.trial_index = static_cast<std::uint32_t>(3 * i);
        e.rejected = i == 1;
        c.entries.push_back(std::move(e));
    }
    return c;
}

} // namespace

TEST(TensorCacheFile, RoundTrip)
{
    Rng rng(7);
    for (std::size_t n : {0u, 1u, 9u}) {
        const auto c = random_cache(rng, n);
        EXPECT_EQ(decode_cache(encode_cache(c)), c);
    }
}

TEST(TensorCacheFile, StaleGridWarns)
{
    mt::TempDir dir;
    Rng rng(8);
    const auto c = random_cache(rng, 2);
    cache_tensors(c, dir / "c.mitc");

    const auto fresh = load_tensors(dir / "c.mitc", 0x1234);
    EXPECT_FALSE(fresh.stale);
    EXPECT_TRUE(fresh.warning.empty());
    EXPECT_EQ(fresh.cache, c);

    const auto stale = load_tensors(dir / "c.mitc", 0x9999);
    EXPECT_TRUE(stale.stale);
    EXPECT_NE(stale.warning.find("stale"), std::string::npos);
    EXPECT_NE(stale.warning.find("c.mitc"), std::string::npos);
    EXPECT_EQ(stale.cache, c);
}

TEST(TensorCacheFile, Errors)
{
    Rng rng(9);
    const auto bytes = encode_cache(random_cache(rng, 2));
    for (std::size_t cut : {std::size_t{2}, std::size_t{20}, bytes.size() - 1}) {
        try {
            decode_cache(bytes.substr(0, cut));
            FAIL() << cut;
        } catch (const io::FormatError& e) {
            EXPECT_TRUE(e.code() == io::FormatErrc::truncated || e.code() == io::FormatErrc::bad_magic);
        }
    }
    auto bad = random_cache(rng, 1);
    bad.entries[0].tensor.planes = Tensor3({2, 2, 2});
    EXPECT_THROW(encode_cache(bad), InputError);
    EXPECT_THROW(decode_trialset(bytes), io::FormatError);
}

TEST(TextExport, ImportInvertsExport)
{
    mt::TempDir dir;
    Rng rng(10);
    auto s = random_set(rng, 4, 3);
    s.trials[2].samples[0] = 1.0e-38f;
    s.trials[2].samples[1] = -3.4028235e38f;
    export_text(s, dir / "A07E");
    EXPECT_EQ(import_text(dir / "A07E"), s);
}
