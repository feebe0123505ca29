#pragma once

// Synthetic sign corpus: per-gloss sinusoidal motion motifs over a canonical
// pose, concatenated into sentences with interpolated transitions and
// Gaussian jitter. Sequences are stored in the binary SKL1 format and indexed
// by a tab-separated manifest.

#include <cstdint>
#include <string>
#include <vector>

#include "slu/skeleton.hpp"

namespace slu {

inline constexpr int kTransitionFrames = 4;

struct GlossMotif {
    std::string gloss;
    int duration = 0;      // frames
    Part dominant = Part::RightHand;
    // Per keypoint coordinate: amplitude, whole cycles over the duration, phase.
    std::vector<double> amplitude;  // 69*2
    std::vector<double> cycles;     // 69*2
    std::vector<double> phase;      // 69*2
};

// Canonical rest pose, coordinates well inside [0,1].
const std::vector<double>& base_pose();

// Deterministic short pronounceable gloss name for an index.
std::string gloss_name(int index);

// Motif parameters depend only on (seed, gloss index), not on how many
// sentences are drawn, so corpora generated from one seed share motifs.
GlossMotif derive_motif(std::uint64_t seed, int gloss_index);

// Noise-free rendering, [duration, 69, 2].
SkeletonSequence render_motif(const GlossMotif& motif);

struct Sample {
    std::string skl_path;  // as written in the manifest
    std::string resolved_path;
    std::string text;
    std::vector<std::string> glosses;
    std::string split;  // train | dev | test
};

struct CorpusManifest {
    std::vector<Sample> samples;
    std::vector<Sample> of_split(const std::string& split) const;
};

struct GenConfig {
    std::uint64_t seed = 1;
    int num_glosses = 10;
    int num_sentences = 20;
    double noise_std = 0.05;
    int min_glosses_per_sentence = 1;
    int max_glosses_per_sentence = 5;
    std::string out_dir;
};

// Writes sample_%04d.skl files plus manifest.tsv under out_dir and returns
// the manifest. Deterministic per (seed, config); per-sample noise streams
// are derived from (seed, sample index).
CorpusManifest generate_corpus(const GenConfig& config);

// SKL1: magic "SKL1", u32 L, u32 K=69, u32 C=2 (little-endian), then
// L*69*2 float32 row-major. Writes are atomic (temp file + rename).
void write_skl(const std::string& path, const SkeletonSequence& seq);
SkeletonSequence read_skl(const std::string& path);

// One sample per line: "<skl-path>\t<text>\t<gloss gloss ...>\t<split>".
// Relative paths resolve against the manifest's directory.
void save_manifest(const CorpusManifest& manifest, const std::string& path);
CorpusManifest load_manifest(const std::string& path);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace slu
