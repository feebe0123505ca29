#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "slu/data.hpp"

using namespace slu;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Correlation against the clean motif renderings; the nearest motif wins.
int classify_by_correlation(const SkeletonSequence& seq, const std::vector<GlossMotif>& motifs) {
    int best = -1;
    double best_score = -1e300;
    for (std::size_t g = 0; g < motifs.size(); ++g) {
        const SkeletonSequence clean = render_motif(motifs[g]);
        const int frames = std::min(seq.length(), clean.length());
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int t = 0; t < frames; ++t)
            for (int i = 0; i < kKeypoints * 2; ++i) {
                const double a =
                    seq.frames.vec()[static_cast<std::size_t>(t) * kKeypoints * 2 + i] - 0.5;
                const double b =
                    clean.frames.vec()[static_cast<std::size_t>(t) * kKeypoints * 2 + i] - 0.5;
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
        const double score = dot / std::sqrt(na * nb + 1e-12);
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(g);
        }
    }
    return best;
}

}  // namespace

TEST_CASE("skl files: exact size, round trip within float32, corruption rejected") {
    TempDir dir("slu_skl_test");
    Rng rng(3);
    SkeletonSequence seq{Tensor::uniform({7, kKeypoints, kCoords}, rng, 0.0, 1.0)};
    const std::string path = (dir.path / "a.skl").string();
    write_skl(path, seq);
    CHECK(fs::file_size(path) == 16 + 7u * kKeypoints * kCoords * 4);

    SkeletonSequence back = read_skl(path);
    REQUIRE(back.length() == 7);
    for (std::size_t i = 0; i < seq.frames.vec().size(); ++i) {
        const float f = static_cast<float>(seq.frames.vec()[i]);
        CHECK(back.frames.vec()[i] == static_cast<double>(f));
    }

    // Corrupt the magic.
    std::string bytes = file_bytes(path);
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(read_skl(path), doctest::Contains("magic"), std::runtime_error);

    // Truncate.
    std::ofstream(path, std::ios::binary).write(file_bytes(path).data(), 40);
    CHECK_THROWS(read_skl(path));
    CHECK_THROWS(read_skl((dir.path / "missing.skl").string()));
}

TEST_CASE("corpus generation is byte-identical under a fixed seed") {
    TempDir a("slu_gen_a"), b("slu_gen_b");
    GenConfig cfg;
    cfg.seed = 99;
    cfg.num_glosses = 4;
    cfg.num_sentences = 6;
    cfg.noise_std = 0.03;
    cfg.out_dir = a.path.string();
    CorpusManifest ma = generate_corpus(cfg);
    cfg.out_dir = b.path.string();
    CorpusManifest mb = generate_corpus(cfg);
    REQUIRE(ma.samples.size() == mb.samples.size());
    for (std::size_t i = 0; i < ma.samples.size(); ++i) {
        CHECK(ma.samples[i].text == mb.samples[i].text);
        CHECK(file_bytes(ma.samples[i].resolved_path) == file_bytes(mb.samples[i].resolved_path));
    }
    CHECK(file_bytes((a.path / "manifest.tsv").string()) ==
          file_bytes((b.path / "manifest.tsv").string()));
}

TEST_CASE("sentence frame count follows durations plus transitions") {
    TempDir dir("slu_gen_len");
    GenConfig cfg;
    cfg.seed = 7;
    cfg.num_glosses = 5;
    cfg.num_sentences = 8;
    cfg.noise_std = 0.0;
    cfg.out_dir = dir.path.string();
    CorpusManifest manifest = generate_corpus(cfg);
    std::vector<GlossMotif> motifs;
    for (int g = 0; g < cfg.num_glosses; ++g) motifs.push_back(derive_motif(cfg.seed, g));
    for (const Sample& s : manifest.samples) {
        int expect = (static_cast<int>(s.glosses.size()) - 1) * kTransitionFrames;
        for (const std::string& gloss : s.glosses) {
            for (const GlossMotif& m : motifs) {
                if (m.gloss == gloss) expect += m.duration;
            }
        }
        CHECK(read_skl(s.resolved_path).length() == expect);
    }
}

TEST_CASE("noise-free isolated clips classify perfectly by correlation") {
    TempDir dir("slu_gen_cls");
    GenConfig cfg;
    cfg.seed = 21;
    cfg.num_glosses = 10;
    cfg.num_sentences = 30;
    cfg.noise_std = 0.0;
    cfg.min_glosses_per_sentence = 1;
    cfg.max_glosses_per_sentence = 1;
    cfg.out_dir = dir.path.string();
    CorpusManifest manifest = generate_corpus(cfg);
    std::vector<GlossMotif> motifs;
    for (int g = 0; g < cfg.num_glosses; ++g) motifs.push_back(derive_motif(cfg.seed, g));
    int correct = 0;
    for (const Sample& s : manifest.samples) {
        const int pred = classify_by_correlation(read_skl(s.resolved_path), motifs);
        correct += motifs[static_cast<std::size_t>(pred)].gloss == s.glosses[0] ? 1 : 0;
    }
    CHECK(correct == static_cast<int>(manifest.samples.size()));
}

TEST_CASE("classification degrades monotonically with noise") {
    auto accuracy_at = [](double noise) {
        TempDir dir("slu_gen_noise");
        GenConfig cfg;
        cfg.seed = 33;
        cfg.num_glosses = 10;
        cfg.num_sentences = 40;
        cfg.noise_std = noise;
        cfg.min_glosses_per_sentence = 1;
        cfg.max_glosses_per_sentence = 1;
        cfg.out_dir = dir.path.string();
        CorpusManifest manifest = generate_corpus(cfg);
        std::vector<GlossMotif> motifs;
        for (int g = 0; g < cfg.num_glosses; ++g) motifs.push_back(derive_motif(cfg.seed, g));
        int correct = 0;
        for (const Sample& s : manifest.samples) {
            const int pred = classify_by_correlation(read_skl(s.resolved_path), motifs);
            correct += motifs[static_cast<std::size_t>(pred)].gloss == s.glosses[0] ? 1 : 0;
        }
        return static_cast<double>(correct) / static_cast<double>(manifest.samples.size());
    };
    CHECK(accuracy_at(0.0) >= accuracy_at(0.2));
}

TEST_CASE("motif parameters do not depend on the sentence draw") {
    const GlossMotif a = derive_motif(5, 3);
    const GlossMotif b = derive_motif(5, 3);
    CHECK(a.gloss == b.gloss);
    CHECK(a.duration == b.duration);
    CHECK(a.amplitude == b.amplitude);
    CHECK(a.phase == b.phase);
    // A different gloss index gives a different fingerprint.
    const GlossMotif c = derive_motif(5, 4);
    CHECK(a.amplitude != c.amplitude);
}

TEST_CASE("generated coordinates stay inside the unit square") {
    TempDir dir("slu_gen_range");
    GenConfig cfg;
    cfg.seed = 11;
    cfg.num_glosses = 3;
    cfg.num_sentences = 5;
    cfg.noise_std = 0.3;  // heavy jitter still clamps
    cfg.out_dir = dir.path.string();
    CorpusManifest manifest = generate_corpus(cfg);
    for (const Sample& s : manifest.samples) {
        const SkeletonSequence seq = read_skl(s.resolved_path);
        for (double v : seq.frames.vec()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("manifest parsing: empty file, fixture, malformed lines, duplicates") {
    TempDir dir("slu_manifest");
    {
        std::ofstream((dir.path / "empty.tsv").string());
        CorpusManifest m = load_manifest((dir.path / "empty.tsv").string());
        CHECK(m.samples.empty());
    }
    // A 3-line fixture referencing real files.
    Rng rng(1);
    for (const char* name : {"x.skl", "y.skl", "z.skl"}) {
        write_skl((dir.path / name).string(),
                  SkeletonSequence{Tensor::uniform({2, kKeypoints, kCoords}, rng, 0.0, 1.0)});
    }
    {
        std::ofstream out((dir.path / "ok.tsv").string());
        out << "x.skl\tbapa cepe\tbapa cepe\ttrain\n";
        out << "y.skl\tdida\tdida\tdev\n";
        out << "z.skl\tbapa\tbapa\ttest\n";
    }
    CorpusManifest m = load_manifest((dir.path / "ok.tsv").string());
    REQUIRE(m.samples.size() == 3);
    CHECK(m.samples[0].text == "bapa cepe");
    CHECK(m.samples[0].glosses == std::vector<std::string>{"bapa", "cepe"});
    CHECK(m.samples[1].split == "dev");
    CHECK(m.of_split("train").size() == 1);

    {
        std::ofstream out((dir.path / "bad.tsv").string());
        out << "x.skl\tonly three fields\ttrain\n";
    }
    CHECK_THROWS_WITH_AS(load_manifest((dir.path / "bad.tsv").string()), doctest::Contains(":1"),
                         std::runtime_error);
    {
        std::ofstream out((dir.path / "dup.tsv").string());
        out << "x.skl\ta\ta\ttrain\n";
        out << "x.skl\tb\tb\tdev\n";
    }
    CHECK_THROWS_WITH_AS(load_manifest((dir.path / "dup.tsv").string()), doctest::Contains("duplicate"),
                         std::runtime_error);
    {
        std::ofstream out((dir.path / "missing.tsv").string());
        out << "nope.skl\ta\ta\ttrain\n";
    }
    CHECK_THROWS(load_manifest((dir.path / "missing.tsv").string()));
    {
        std::ofstream out((dir.path / "split.tsv").string());
        out << "x.skl\ta\ta\tvalidation\n";
    }
    CHECK_THROWS(load_manifest((dir.path / "split.tsv").string()));
}

TEST_CASE("gloss names are distinct and pronounceable-ish") {
    std::set<std::string> seen;
    for (int i = 0; i < 60; ++i) CHECK(seen.insert(gloss_name(i)).second);
}
