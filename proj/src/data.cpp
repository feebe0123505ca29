#include "slu/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace slu {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

const std::vector<double>& base_pose() {
    static const std::vector<double> pose = [] {
        std::vector<double> p(static_cast<std::size_t>(kKeypoints) * 2, 0.0);
        auto set = [&p](int kp, double x, double y) {
            p[static_cast<std::size_t>(kp) * 2] = x;
            p[static_cast<std::size_t>(kp) * 2 + 1] = y;
        };
        // Hands: wrist plus five spread fingers, left at x~0.3, right at x~0.7.
        for (int hand = 0; hand < 2; ++hand) {
            const int off = hand == 0 ? 0 : 21;
            const double cx = hand == 0 ? 0.30 : 0.70;
            set(off, cx, 0.62);
            for (int f = 0; f < 5; ++f) {
                const double fx = cx + (f - 2) * 0.02;
                for (int j = 0; j < 4; ++j) set(off + 1 + f * 4 + j, fx, 0.58 - j * 0.025);
            }
        }
        // Body: neck, shoulders, elbows, wrists, hips.
        set(42, 0.50, 0.42);
        set(43, 0.40, 0.44);
        set(44, 0.60, 0.44);
        set(45, 0.35, 0.55);
        set(46, 0.65, 0.55);
        set(47, 0.32, 0.64);
        set(48, 0.68, 0.64);
        set(49, 0.44, 0.78);
        set(50, 0.56, 0.78);
        // Face: contour ring, eye ring, mouth ring around (0.5, 0.28).
        for (int i = 0; i < 8; ++i) {
            const double a = 2.0 * M_PI * i / 8.0;
            set(51 + i, 0.5 + 0.08 * std::cos(a), 0.28 + 0.10 * std::sin(a));
        }
        for (int i = 0; i < 4; ++i) {
            const double a = 2.0 * M_PI * i / 4.0;
            set(59 + i, 0.47 + 0.015 * std::cos(a), 0.25 + 0.015 * std::sin(a));
        }
        for (int i = 0; i < 6; ++i) {
            const double a = 2.0 * M_PI * i / 6.0;
            set(63 + i, 0.5 + 0.02 * std::cos(a), 0.33 + 0.012 * std::sin(a));
        }
        return p;
    }();
    return pose;
}

std::string gloss_name(int index) {
    static const char* cons = "bcdfghjklmnprstvwz";
    static const char* vow = "aeiou";
    std::string name;
    name += cons[index % 18];
    name += vow[(index / 18) % 5];
    name += cons[(index / 90) % 18];
    name += vow[(index / 1620) % 5];
    return name;
}

GlossMotif derive_motif(std::uint64_t seed, int gloss_index) {
    Rng rng(mix_seed(seed, 0x6106u + static_cast<std::uint64_t>(gloss_index)));
    GlossMotif m;
    m.gloss = gloss_name(gloss_index);
    std::uniform_int_distribution<int> dur(8, 14);
    m.duration = dur(rng);
    std::uniform_int_distribution<int> part(0, 3);
    m.dominant = static_cast<Part>(part(rng));
    const std::size_t n = static_cast<std::size_t>(kKeypoints) * 2;
    m.amplitude.resize(n);
    m.cycles.resize(n);
    m.phase.resize(n);
    std::uniform_real_distribution<double> big(0.08, 0.16);
    std::uniform_real_distribution<double> small(0.015, 0.035);
    std::uniform_int_distribution<int> cyc(1, 3);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * M_PI);
    const int dom = static_cast<int>(m.dominant);
    const int dom_lo = kPartOffsets[static_cast<std::size_t>(dom)];
    const int dom_hi = dom_lo + kPartSizes[static_cast<std::size_t>(dom)];
    for (int kp = 0; kp < kKeypoints; ++kp) {
        const bool dominant = kp >= dom_lo && kp < dom_hi;
        for (int c = 0; c < 2; ++c) {
            const std::size_t i = static_cast<std::size_t>(kp) * 2 + static_cast<std::size_t>(c);
            m.amplitude[i] = dominant ? big(rng) : small(rng);
            m.cycles[i] = cyc(rng);
            m.phase[i] = ph(rng);
        }
    }
    return m;
}

SkeletonSequence render_motif(const GlossMotif& motif) {
    const std::vector<double>& pose = base_pose();
    Tensor frames = Tensor::zeros({motif.duration, kKeypoints, 2});
    for (int t = 0; t < motif.duration; ++t) {
        for (std::size_t i = 0; i < pose.size(); ++i) {
            const double wave =
                motif.amplitude[i] *
                std::sin(2.0 * M_PI * motif.cycles[i] * t / motif.duration + motif.phase[i]);
            frames.vec()[static_cast<std::size_t>(t) * pose.size() + i] = pose[i] + wave;
        }
    }
    return SkeletonSequence{frames};
}

std::vector<Sample> CorpusManifest::of_split(const std::string& split) const {
    std::vector<Sample> out;
    for (const Sample& s : samples) {
        if (s.split == split) out.push_back(s);
    }
    return out;
}

CorpusManifest generate_corpus(const GenConfig& config) {
    if (config.num_glosses < 2) throw std::invalid_argument("gen: need at least 2 glosses");
    if (config.noise_std < 0.0) throw std::invalid_argument("gen: negative noise_std");
    if (config.min_glosses_per_sentence < 1 ||
        config.max_glosses_per_sentence < config.min_glosses_per_sentence) {
        throw std::invalid_argument("gen: bad sentence length bounds");
    }
    if (config.out_dir.empty()) throw std::invalid_argument("gen: out_dir required");
    fs::create_directories(config.out_dir);

    std::vector<GlossMotif> motifs;
    motifs.reserve(static_cast<std::size_t>(config.num_glosses));
    for (int g = 0; g < config.num_glosses; ++g) motifs.push_back(derive_motif(config.seed, g));

    CorpusManifest manifest;
    for (int s = 0; s < config.num_sentences; ++s) {
        Rng rng(mix_seed(config.seed, 0x5a3fu + static_cast<std::uint64_t>(s)));
        std::uniform_int_distribution<int> count(config.min_glosses_per_sentence,
                                                 config.max_glosses_per_sentence);
        std::uniform_int_distribution<int> pick(0, config.num_glosses - 1);
        const int n = count(rng);
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int& v : idx) v = pick(rng);

        int total = (n - 1) * kTransitionFrames;
        for (int v : idx) total += motifs[static_cast<std::size_t>(v)].duration;
        Tensor frames = Tensor::zeros({total, kKeypoints, 2});
        const std::size_t stride = static_cast<std::size_t>(kKeypoints) * 2;
        int at = 0;
        for (int k = 0; k < n; ++k) {
            const SkeletonSequence seg = render_motif(motifs[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])]);
            std::copy(seg.frames.vec().begin(), seg.frames.vec().end(),
                      frames.vec().begin() + static_cast<std::size_t>(at) * stride);
            at += seg.length();
            if (k + 1 < n) {
                // Linear interpolation from this motif's last frame to the
                // next motif's first frame.
                const SkeletonSequence next =
                    render_motif(motifs[static_cast<std::size_t>(idx[static_cast<std::size_t>(k + 1)])]);
                const double* a = seg.frames.vec().data() + (static_cast<std::size_t>(seg.length()) - 1) * stride;
                const double* b = next.frames.vec().data();
                for (int t = 0; t < kTransitionFrames; ++t) {
                    const double w = static_cast<double>(t + 1) / (kTransitionFrames + 1);
                    for (std::size_t i = 0; i < stride; ++i) {
                        frames.vec()[static_cast<std::size_t>(at + t) * stride + i] =
                            (1.0 - w) * a[i] + w * b[i];
                    }
                }
                at += kTransitionFrames;
            }
        }
        if (config.noise_std > 0.0) {
            std::normal_distribution<double> jitter(0.0, config.noise_std);
            for (double& v : frames.vec()) v = std::min(1.0, std::max(0.0, v + jitter(rng)));
        }

        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d.skl", s);
        const std::string rel = name;
        write_skl((fs::path(config.out_dir) / rel).string(), SkeletonSequence{frames});

        Sample sample;
        sample.skl_path = rel;
        sample.resolved_path = (fs::path(config.out_dir) / rel).string();
        for (int v : idx) sample.glosses.push_back(motifs[static_cast<std::size_t>(v)].gloss);
        std::ostringstream text;
        for (std::size_t k = 0; k < sample.glosses.size(); ++k) {
            if (k) text << ' ';
            text << sample.glosses[k];
        }
        sample.text = text.str();
        sample.split = s % 10 == 8 ? "dev" : (s % 10 == 9 ? "test" : "train");
        manifest.samples.push_back(std::move(sample));
    }
    save_manifest(manifest, (fs::path(config.out_dir) / "manifest.tsv").string());
    return manifest;
}

void write_skl(const std::string& path, const SkeletonSequence& seq) {
    seq.validate();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("write_skl: cannot open " + tmp);
        out.write("SKL1", 4);
        const std::uint32_t l = static_cast<std::uint32_t>(seq.length());
        const std::uint32_t k = kKeypoints, c = kCoords;
        out.write(reinterpret_cast<const char*>(&l), 4);
        out.write(reinterpret_cast<const char*>(&k), 4);
        out.write(reinterpret_cast<const char*>(&c), 4);
        for (double v : seq.frames.vec()) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
        if (!out) throw std::runtime_error("write_skl: write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

SkeletonSequence read_skl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_skl: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SKL1", 4) != 0) {
        throw std::runtime_error("read_skl: bad magic in " + path);
    }
    std::uint32_t l = 0, k = 0, c = 0;
    if (!in.read(reinterpret_cast<char*>(&l), 4) || !in.read(reinterpret_cast<char*>(&k), 4) ||
        !in.read(reinterpret_cast<char*>(&c), 4)) {
        throw std::runtime_error("read_skl: truncated header in " + path);
    }
    if (k != kKeypoints || c != kCoords || l == 0) {
        throw std::runtime_error("read_skl: unexpected layout in " + path);
    }
    Tensor frames = Tensor::zeros({static_cast<int>(l), kKeypoints, kCoords});
    for (double& v : frames.vec()) {
        float f = 0.0f;
        if (!in.read(reinterpret_cast<char*>(&f), 4)) {
            throw std::runtime_error("read_skl: truncated data in " + path);
        }
        v = static_cast<double>(f);
    }
    char extra;
    if (in.read(&extra, 1)) throw std::runtime_error("read_skl: trailing bytes in " + path);
    return SkeletonSequence{frames};
}

void save_manifest(const CorpusManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
    for (const Sample& s : manifest.samples) {
        std::ostringstream glosses;
        for (std::size_t i = 0; i < s.glosses.size(); ++i) {
            if (i) glosses << ' ';
            glosses << s.glosses[i];
        }
        out << s.skl_path << '\t' << s.text << '\t' << glosses.str() << '\t' << s.split << '\n';
    }
}

CorpusManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
    const fs::path dir = fs::path(path).parent_path();
    CorpusManifest manifest;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        const std::string where = path + ":" + std::to_string(lineno);
        if (fields.size() != 4) throw std::runtime_error("load_manifest: malformed line " + where);
        Sample s;
        s.skl_path = fields[0];
        s.text = fields[1];
        std::istringstream gl(fields[2]);
        std::string g;
        while (gl >> g) s.glosses.push_back(g);
        s.split = fields[3];
        if (s.skl_path.empty() || s.text.empty() || s.glosses.empty()) {
            throw std::runtime_error("load_manifest: empty field at " + where);
        }
        if (s.split != "train" && s.split != "dev" && s.split != "test") {
            throw std::runtime_error("load_manifest: bad split at " + where);
        }
        if (!seen.insert(s.skl_path).second) {
            throw std::runtime_error("load_manifest: duplicate path at " + where);
        }
        s.resolved_path = fs::path(s.skl_path).is_absolute()
                              ? s.skl_path
                              : (dir / s.skl_path).string();
        if (!fs::exists(s.resolved_path)) {
            throw std::runtime_error("load_manifest: missing file " + s.resolved_path + " at " + where);
        }
        manifest.samples.push_back(std::move(s));
    }
    return manifest;
}

}  // namespace slu
