#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slu/data.hpp"
#include "slu/grounded.hpp"
#include "slu/train.hpp"

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

TrainConfig tiny_train_config(const std::string& manifest, const std::string& out_dir) {
    TrainConfig c;
    c.manifest = manifest;
    c.out_dir = out_dir;
    c.d_model = 16;
    c.heads = 2;
    c.enc_depth = 2;
    c.dec_match_blocks = 1;
    c.dec_lm_blocks = 1;
    c.ffn_mult = 2;
    c.stgcn_hidden = 6;
    c.part_dim = 6;
    c.d_proj = 8;
    c.max_frames = 128;
    c.fusion_layers = 1;
    c.batch_size = 4;
    c.steps = 3;
    c.eval_max_len = 8;
    return c;
}

std::string make_corpus(const TempDir& dir, std::uint64_t seed, int glosses, int sentences,
                        double noise, int min_g = 1, int max_g = 3) {
    GenConfig g;
    g.seed = seed;
    g.num_glosses = glosses;
    g.num_sentences = sentences;
    g.noise_std = noise;
    g.min_glosses_per_sentence = min_g;
    g.max_glosses_per_sentence = max_g;
    g.out_dir = dir.path.string();
    generate_corpus(g);
    return (dir.path / "manifest.tsv").string();
}

}  // namespace

TEST_CASE("adamw: zero grads and zero decay leave parameters unchanged") {
    ModelBundle b;
    b.add("w", Tensor::from_data({3}, {1.0, -2.0, 0.5}, true));
    AdamState st;
    adamw_step(b, st, 0.1, 0.0, 0.9, 0.999, 1e-8, transfer_all());
    CHECK(b.at("w").vec() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adamw descends on a quadratic") {
    ModelBundle b;
    b.add("x", Tensor::from_data({1}, {1.0}, true));
    AdamState st;
    Tensor& x = b.at("x");
    tape().reset();
    x.zero_grad();
    Tensor loss = mul(x, x);
    backward(loss);
    tape().reset();
    adamw_step(b, st, 0.1, 0.0, 0.9, 0.999, 1e-8, transfer_all());
    CHECK(x.vec()[0] < 1.0);
}

TEST_CASE("adamw three-step trace matches a scalar oracle") {
    // Hand-rolled AdamW on f(x) = 0.5 x^2, so grad = x.
    double x = 1.3, m = 0.0, v = 0.0;
    const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> expect;
    for (int t = 1; t <= 3; ++t) {
        const double g = x;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        x -= lr * (mh / (std::sqrt(vh) + eps) + wd * x);
        expect.push_back(x);
    }

    ModelBundle bundle;
    bundle.add("x", Tensor::from_data({1}, {1.3}, true));
    AdamState st;
    for (int t = 0; t < 3; ++t) {
        tape().reset();
        Tensor& p = bundle.at("x");
        p.zero_grad();
        Tensor loss = scale(mul(p, p), 0.5);
        backward(loss);
        tape().reset();
        adamw_step(bundle, st, lr, wd, b1, b2, eps, transfer_all());
        CHECK(bundle.at("x").vec()[0] == doctest::Approx(expect[static_cast<std::size_t>(t)]).epsilon(1e-12));
    }
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 100, 3e-4) == doctest::Approx(3e-4));
    CHECK(cosine_lr(100, 100, 3e-4) == doctest::Approx(0.0));
    CHECK(cosine_lr(50, 100, 3e-4) == doctest::Approx(1.5e-4));
    CHECK_THROWS(cosine_lr(0, 0, 1.0));
    CHECK_THROWS(cosine_lr(5, 4, 1.0));
}

TEST_CASE("config parsing: defaults, unknown keys, malformed values") {
    TrainConfig c = parse_config_text("alpha=0.4\nbetas=0.8,0.99\nsteps=7\n# comment\n");
    CHECK(c.alpha == 0.4);
    CHECK(c.beta1 == 0.8);
    CHECK(c.beta2 == 0.99);
    CHECK(c.steps == 7);
    CHECK_THROWS_WITH_AS(parse_config_text("mystery=1\n"), doctest::Contains("unknown key"),
                         std::invalid_argument);
    CHECK_THROWS(parse_config_text("alpha=not_a_number\n"));
    CHECK_THROWS(parse_config_text("alpha 0.4\n"));
    CHECK_THROWS(parse_config_text("alpha=1.5\n"));  // validation

    // Round trip through text keeps every field.
    TrainConfig d = parse_config_text(config_to_text(c));
    CHECK(config_to_text(d) == config_to_text(c));
}

TEST_CASE("pretrain: lr=0 leaves parameters unchanged; trace rows match steps") {
    TempDir corpus("slu_train_corpus1");
    TempDir out("slu_train_out1");
    const std::string manifest = make_corpus(corpus, 5, 4, 10, 0.05);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.steps = 2;
    c.base_lr = 1e-300;  // effectively zero while passing validation
    c.weight_decay = 0.0;
    PretrainResult r = pretrain_loop(c);

    // Parameters equal a freshly initialised model.
    Checkpoint ckpt = load_checkpoint(r.checkpoint_path);
    Vocabulary vocab = vocab_from_checkpoint(ckpt);
    Model fresh(c.model_config(), vocab.size(), c.seed);
    for (const auto& [name, t] : fresh.bundle().map()) {
        const auto& saved = ckpt.params.at(name);
        for (std::size_t i = 0; i < saved.size(); ++i)
            CHECK(saved[i] == doctest::Approx(t.vec()[i]).epsilon(1e-12));
    }

    // Trace has one row per step plus header.
    std::istringstream trace(file_bytes(r.trace_path));
    std::string line;
    int rows = 0;
    while (std::getline(trace, line)) {
        if (!line.empty() && line[0] != '#') ++rows;
    }
    CHECK(rows == 2);
}

TEST_CASE("pretrain twice with one seed and config: byte-identical checkpoints and traces") {
    TempDir corpus("slu_train_corpus2");
    TempDir out("slu_train_out2");
    const std::string manifest = make_corpus(corpus, 6, 4, 8, 0.05);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.steps = 3;
    PretrainResult r1 = pretrain_loop(c);
    const std::string ckpt1 = file_bytes(r1.checkpoint_path);
    const std::string trace1 = file_bytes(r1.trace_path);
    PretrainResult r2 = pretrain_loop(c);
    CHECK(ckpt1 == file_bytes(r2.checkpoint_path));
    CHECK(trace1 == file_bytes(r2.trace_path));
}

TEST_CASE("checkpoint save/load/save is byte-idempotent") {
    TempDir corpus("slu_train_corpus3");
    TempDir out("slu_train_out3");
    const std::string manifest = make_corpus(corpus, 4, 4, 6, 0.05);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.steps = 2;
    PretrainResult r = pretrain_loop(c);
    Checkpoint ckpt = load_checkpoint(r.checkpoint_path);
    const std::string copy = (out.path / "copy.ckpt").string();
    save_checkpoint(ckpt, copy);
    CHECK(file_bytes(r.checkpoint_path) == file_bytes(copy));
}

TEST_CASE("gradient accumulation matches one full batch") {
    TempDir corpus("slu_train_corpus4");
    TempDir out1("slu_train_out4a"), out2("slu_train_out4b");
    const std::string manifest = make_corpus(corpus, 4, 4, 8, 0.05, 1, 2);
    TrainConfig c = tiny_train_config(manifest, out1.path.string());
    c.stage = "finetune";
    c.task = "islr";
    c.transfer_mode = "none";
    c.batch_size = 4;
    c.steps = 2;
    c.grad_accum = 1;
    FinetuneResult full = finetune_loop(c, "");
    c.out_dir = out2.path.string();
    c.grad_accum = 2;
    FinetuneResult micro = finetune_loop(c, "");

    Checkpoint a = load_checkpoint(full.checkpoint_path);
    Checkpoint b = load_checkpoint(micro.checkpoint_path);
    double max_diff = 0.0;
    for (const auto& [name, values] : a.params) {
        const auto& other = b.params.at(name);
        for (std::size_t i = 0; i < values.size(); ++i)
            max_diff = std::max(max_diff, std::abs(values[i] - other[i]));
    }
    CHECK(max_diff < 1e-9);
}

TEST_CASE("finetune requires a checkpoint unless transfer_mode is none") {
    TempDir corpus("slu_train_corpus5");
    TempDir out("slu_train_out5");
    const std::string manifest = make_corpus(corpus, 4, 4, 6, 0.05);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.stage = "finetune";
    c.task = "islr";
    c.transfer_mode = "full";
    CHECK_THROWS_WITH_AS(finetune_loop(c, ""), doctest::Contains("checkpoint"), std::runtime_error);
}

TEST_CASE("finetune report keys match the task") {
    TempDir corpus("slu_train_corpus6");
    TempDir out("slu_train_out6");
    const std::string manifest = make_corpus(corpus, 3, 4, 10, 0.05, 1, 2);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.stage = "finetune";
    c.transfer_mode = "none";
    c.steps = 1;
    c.task = "islr";
    FinetuneResult islr = finetune_loop(c, "");
    REQUIRE(islr.train_report.values.size() == 2);
    CHECK(islr.train_report.values[0].first == "P-I");
    CHECK(islr.train_report.values[1].first == "P-C");
    c.task = "cslr";
    FinetuneResult cslr = finetune_loop(c, "");
    REQUIRE(cslr.train_report.values.size() == 1);
    CHECK(cslr.train_report.values[0].first == "WER");
    c.task = "slt";
    FinetuneResult slt = finetune_loop(c, "");
    REQUIRE(slt.train_report.values.size() == 5);
    CHECK(slt.train_report.values[0].first == "B@1");
    CHECK(slt.train_report.values[4].first == "R@L");
}

TEST_CASE("checkpoint architecture fingerprint guards finetune") {
    TempDir corpus("slu_train_corpus7");
    TempDir out("slu_train_out7");
    const std::string manifest = make_corpus(corpus, 7, 4, 6, 0.05);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.steps = 1;
    PretrainResult pre = pretrain_loop(c);
    TrainConfig f = c;
    f.stage = "finetune";
    f.task = "islr";
    f.transfer_mode = "full";
    f.d_model = 32;  // architecture mismatch
    CHECK_THROWS_WITH_AS(finetune_loop(f, pre.checkpoint_path), doctest::Contains("architecture"),
                         std::runtime_error);
}

TEST_CASE("export_embeddings: two rows per sample, paired ids, re-export identical") {
    TempDir corpus("slu_train_corpus8");
    TempDir out("slu_train_out8");
    const std::string manifest = make_corpus(corpus, 8, 4, 8, 0.05);
    TrainConfig c = tiny_train_config(manifest, out.path.string());
    c.steps = 1;
    PretrainResult pre = pretrain_loop(c);
    const std::string path1 = (out.path / "emb1.tsv").string();
    const std::string path2 = (out.path / "emb2.tsv").string();
    export_embeddings(pre.checkpoint_path, "train", manifest, path1);
    export_embeddings(pre.checkpoint_path, "train", manifest, path2);
    CHECK(file_bytes(path1) == file_bytes(path2));

    std::istringstream in(file_bytes(path1));
    std::string line;
    int rows = 0, sign_rows = 0, text_rows = 0;
    std::map<std::string, int> per_id;
    while (std::getline(in, line)) {
        ++rows;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = line.find('\t', t1 + 1);
        const std::string id = line.substr(0, t1);
        const std::string modality = line.substr(t1 + 1, t2 - t1 - 1);
        ++per_id[id];
        if (modality == "sign") ++sign_rows;
        if (modality == "text") ++text_rows;
    }
    const Dataset data = load_dataset(manifest);
    CHECK(rows == 2 * static_cast<int>(data.train.size()));
    CHECK(sign_rows == text_rows);
    for (const auto& [id, count] : per_id) CHECK(count == 2);

    CHECK_THROWS(export_embeddings(pre.checkpoint_path, "bogus", manifest,
                                   (out.path / "emb3.tsv").string()));
}
