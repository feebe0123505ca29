#include "slu/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "slu/cluster.hpp"
#include "slu/grounded.hpp"

namespace fs = std::filesystem;

namespace slu {

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.d_model = d_model;
    m.heads = heads;
    m.enc_depth = enc_depth;
    m.dec_match_blocks = dec_match_blocks;
    m.dec_lm_blocks = dec_lm_blocks;
    m.ffn_mult = ffn_mult;
    m.stgcn_hidden = stgcn_hidden;
    m.part_dim = part_dim;
    m.d_proj = d_proj;
    m.max_text_len = max_text_len;
    m.max_frames = max_frames;
    m.fusion_layers = fusion_layers;
    m.share_fusion = share_fusion;
    m.center_frames = center_frames;
    return m;
}

AlignConfig TrainConfig::align_config() const {
    AlignConfig a;
    a.alpha = alpha;
    a.row_op = row_op_from_string(row_op);
    a.scoring = scoring_from_string(scoring);
    a.project_local = project_local;
    return a;
}

void TrainConfig::validate() const {
    if (stage != "pretrain" && stage != "finetune") throw std::invalid_argument("config: bad stage");
    task_from_string(task);
    transfer_mode_from_string(transfer_mode);
    row_op_from_string(row_op);
    scoring_from_string(scoring);
    if (cond_source != "sign" && cond_source != "text") {
        throw std::invalid_argument("config: cond_source must be sign or text");
    }
    if (cluster_mode != "word" && cluster_mode != "chunk") {
        throw std::invalid_argument("config: cluster_mode must be word or chunk");
    }
    if (epochs <= 0 || batch_size <= 0 || grad_accum <= 0 || chunk_size <= 0) {
        throw std::invalid_argument("config: counts must be positive");
    }
    if (base_lr <= 0.0 || weight_decay < 0.0) throw std::invalid_argument("config: bad lr/decay");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("config: betas must lie in (0,1)");
    }
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0) {
        throw std::invalid_argument("config: alpha/beta out of [0,1]");
    }
    if (fusion_layers < 0 || fusion_layers > enc_depth) {
        throw std::invalid_argument("config: fusion_layers out of range");
    }
    if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
}

namespace {

using Setter = std::function<void(TrainConfig&, const std::string&)>;

int parse_int(const std::string& v) {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
    return out;
}

double parse_double(const std::string& v) {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

const std::map<std::string, Setter>& config_setters() {
    static const std::map<std::string, Setter> setters = {
        {"stage", [](TrainConfig& c, const std::string& v) { c.stage = v; }},
        {"task", [](TrainConfig& c, const std::string& v) { c.task = v; }},
        {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = parse_int(v); }},
        {"steps", [](TrainConfig& c, const std::string& v) { c.steps = parse_int(v); }},
        {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = parse_int(v); }},
        {"base_lr", [](TrainConfig& c, const std::string& v) { c.base_lr = parse_double(v); }},
        {"weight_decay", [](TrainConfig& c, const std::string& v) { c.weight_decay = parse_double(v); }},
        {"betas",
         [](TrainConfig& c, const std::string& v) {
             const std::size_t comma = v.find(',');
             if (comma == std::string::npos) throw std::invalid_argument("betas needs two values");
             c.beta1 = parse_double(v.substr(0, comma));
             c.beta2 = parse_double(v.substr(comma + 1));
         }},
        {"seed",
         [](TrainConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(std::stoull(v)); }},
        {"alpha", [](TrainConfig& c, const std::string& v) { c.alpha = parse_double(v); }},
        {"beta", [](TrainConfig& c, const std::string& v) { c.beta = parse_double(v); }},
        {"fusion_layers", [](TrainConfig& c, const std::string& v) { c.fusion_layers = parse_int(v); }},
        {"row_op", [](TrainConfig& c, const std::string& v) { c.row_op = v; }},
        {"scoring", [](TrainConfig& c, const std::string& v) { c.scoring = v; }},
        {"freeze_text_encoder",
         [](TrainConfig& c, const std::string& v) { c.freeze_text_encoder = parse_bool(v); }},
        {"cond_source", [](TrainConfig& c, const std::string& v) { c.cond_source = v; }},
        {"transfer_mode", [](TrainConfig& c, const std::string& v) { c.transfer_mode = v; }},
        {"manifest", [](TrainConfig& c, const std::string& v) { c.manifest = v; }},
        {"out_dir", [](TrainConfig& c, const std::string& v) { c.out_dir = v; }},
        {"vocab_max", [](TrainConfig& c, const std::string& v) { c.vocab_max = parse_int(v); }},
        {"grad_accum", [](TrainConfig& c, const std::string& v) { c.grad_accum = parse_int(v); }},
        {"checked", [](TrainConfig& c, const std::string& v) { c.checked = parse_bool(v); }},
        {"eval_max_len", [](TrainConfig& c, const std::string& v) { c.eval_max_len = parse_int(v); }},
        {"cluster_mode", [](TrainConfig& c, const std::string& v) { c.cluster_mode = v; }},
        {"chunk_size", [](TrainConfig& c, const std::string& v) { c.chunk_size = parse_int(v); }},
        {"project_local", [](TrainConfig& c, const std::string& v) { c.project_local = parse_bool(v); }},
        {"d_model", [](TrainConfig& c, const std::string& v) { c.d_model = parse_int(v); }},
        {"heads", [](TrainConfig& c, const std::string& v) { c.heads = parse_int(v); }},
        {"enc_depth", [](TrainConfig& c, const std::string& v) { c.enc_depth = parse_int(v); }},
        {"dec_match_blocks",
         [](TrainConfig& c, const std::string& v) { c.dec_match_blocks = parse_int(v); }},
        {"dec_lm_blocks", [](TrainConfig& c, const std::string& v) { c.dec_lm_blocks = parse_int(v); }},
        {"ffn_mult", [](TrainConfig& c, const std::string& v) { c.ffn_mult = parse_int(v); }},
        {"stgcn_hidden", [](TrainConfig& c, const std::string& v) { c.stgcn_hidden = parse_int(v); }},
        {"part_dim", [](TrainConfig& c, const std::string& v) { c.part_dim = parse_int(v); }},
        {"d_proj", [](TrainConfig& c, const std::string& v) { c.d_proj = parse_int(v); }},
        {"max_text_len", [](TrainConfig& c, const std::string& v) { c.max_text_len = parse_int(v); }},
        {"max_frames", [](TrainConfig& c, const std::string& v) { c.max_frames = parse_int(v); }},
        {"share_fusion", [](TrainConfig& c, const std::string& v) { c.share_fusion = parse_bool(v); }},
        {"center_frames", [](TrainConfig& c, const std::string& v) { c.center_frames = parse_bool(v); }},
    };
    return setters;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void apply_config_kv(TrainConfig& config, const std::string& key, const std::string& value) {
    auto it = config_setters().find(key);
    if (it == config_setters().end()) {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    it->second(config, value);
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig config;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
        }
        apply_config_kv(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    config.validate();
    return config;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "stage=" << c.stage << '\n';
    o << "task=" << c.task << '\n';
    o << "epochs=" << c.epochs << '\n';
    o << "steps=" << c.steps << '\n';
    o << "batch_size=" << c.batch_size << '\n';
    o << "base_lr=" << c.base_lr << '\n';
    o << "weight_decay=" << c.weight_decay << '\n';
    o << "betas=" << c.beta1 << ',' << c.beta2 << '\n';
    o << "seed=" << c.seed << '\n';
    o << "alpha=" << c.alpha << '\n';
    o << "beta=" << c.beta << '\n';
    o << "fusion_layers=" << c.fusion_layers << '\n';
    o << "row_op=" << c.row_op << '\n';
    o << "scoring=" << c.scoring << '\n';
    o << "freeze_text_encoder=" << (c.freeze_text_encoder ? "true" : "false") << '\n';
    o << "cond_source=" << c.cond_source << '\n';
    o << "transfer_mode=" << c.transfer_mode << '\n';
    o << "manifest=" << c.manifest << '\n';
    o << "out_dir=" << c.out_dir << '\n';
    o << "vocab_max=" << c.vocab_max << '\n';
    o << "grad_accum=" << c.grad_accum << '\n';
    o << "checked=" << (c.checked ? "true" : "false") << '\n';
    o << "eval_max_len=" << c.eval_max_len << '\n';
    o << "cluster_mode=" << c.cluster_mode << '\n';
    o << "chunk_size=" << c.chunk_size << '\n';
    o << "project_local=" << (c.project_local ? "true" : "false") << '\n';
    o << "d_model=" << c.d_model << '\n';
    o << "heads=" << c.heads << '\n';
    o << "enc_depth=" << c.enc_depth << '\n';
    o << "dec_match_blocks=" << c.dec_match_blocks << '\n';
    o << "dec_lm_blocks=" << c.dec_lm_blocks << '\n';
    o << "ffn_mult=" << c.ffn_mult << '\n';
    o << "stgcn_hidden=" << c.stgcn_hidden << '\n';
    o << "part_dim=" << c.part_dim << '\n';
    o << "d_proj=" << c.d_proj << '\n';
    o << "max_text_len=" << c.max_text_len << '\n';
    o << "max_frames=" << c.max_frames << '\n';
    o << "share_fusion=" << (c.share_fusion ? "true" : "false") << '\n';
    o << "center_frames=" << (c.center_frames ? "true" : "false") << '\n';
    return o.str();
}

std::uint64_t arch_fingerprint(const TrainConfig& config, int vocab_size) {
    const std::string desc = config.model_config().describe() + ";vocab=" + std::to_string(vocab_size);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : desc) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Optimizer

void adamw_step(ModelBundle& params, AdamState& state, double lr, double weight_decay, double beta1,
                double beta2, double eps, const TransferFilter& trainable) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params.map()) {
        if (!trainable(name)) continue;
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p.vec().size(), 0.0);
        if (v.empty()) v.assign(p.vec().size(), 0.0);
        const bool has = p.has_grad();
        for (std::size_t i = 0; i < p.vec().size(); ++i) {
            const double g = has ? p.gradvec()[i] : 0.0;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.vec()[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.vec()[i]);
        }
    }
}

double cosine_lr(int step, int total_steps, double base_lr) {
    if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void put_i64(std::ostream& o, std::int64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }

void put_string(std::ostream& o, const std::string& s) {
    put_u32(o, static_cast<std::uint32_t>(s.size()));
    o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& o, const std::vector<double>& d) {
    put_u64(o, d.size());
    o.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * 8));
}

std::uint32_t get_u32(std::istream& i) {
    std::uint32_t v = 0;
    if (!i.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

std::uint64_t get_u64(std::istream& i) {
    std::uint64_t v = 0;
    if (!i.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

std::int64_t get_i64(std::istream& i) {
    std::int64_t v = 0;
    if (!i.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

std::string get_string(std::istream& i) {
    const std::uint32_t n = get_u32(i);
    std::string s(n, '\0');
    if (n && !i.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated");
    return s;
}

std::vector<double> get_doubles(std::istream& i) {
    const std::uint64_t n = get_u64(i);
    std::vector<double> d(n);
    if (n && !i.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(n * 8))) {
        throw std::runtime_error("checkpoint: truncated");
    }
    return d;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
        out.write("SLCK", 4);
        put_u32(out, ckpt.version);
        put_u64(out, ckpt.arch);
        put_i64(out, ckpt.step);
        put_string(out, ckpt.config_text);
        put_u32(out, static_cast<std::uint32_t>(ckpt.vocab_tokens.size()));
        for (const std::string& t : ckpt.vocab_tokens) put_string(out, t);
        put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
        for (const auto& [name, values] : ckpt.params) {
            put_string(out, name);
            const auto& shape = ckpt.shapes.at(name);
            put_u32(out, static_cast<std::uint32_t>(shape.size()));
            for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
            put_doubles(out, values);
        }
        put_u32(out, static_cast<std::uint32_t>(ckpt.adam_m.size()));
        for (const auto& [name, values] : ckpt.adam_m) {
            put_string(out, name);
            put_doubles(out, values);
        }
        put_u32(out, static_cast<std::uint32_t>(ckpt.adam_v.size()));
        for (const auto& [name, values] : ckpt.adam_v) {
            put_string(out, name);
            put_doubles(out, values);
        }
        put_i64(out, ckpt.adam_t);
        if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "SLCK") {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    Checkpoint c;
    c.version = get_u32(in);
    if (c.version != 1) throw std::runtime_error("checkpoint: unsupported version");
    c.arch = get_u64(in);
    c.step = get_i64(in);
    c.config_text = get_string(in);
    const std::uint32_t nvocab = get_u32(in);
    for (std::uint32_t i = 0; i < nvocab; ++i) c.vocab_tokens.push_back(get_string(in));
    const std::uint32_t nparams = get_u32(in);
    for (std::uint32_t i = 0; i < nparams; ++i) {
        const std::string name = get_string(in);
        const std::uint32_t ndim = get_u32(in);
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(get_u32(in)));
        c.shapes[name] = shape;
        c.params[name] = get_doubles(in);
    }
    const std::uint32_t nm = get_u32(in);
    for (std::uint32_t i = 0; i < nm; ++i) {
        const std::string name = get_string(in);
        c.adam_m[name] = get_doubles(in);
    }
    const std::uint32_t nv = get_u32(in);
    for (std::uint32_t i = 0; i < nv; ++i) {
        const std::string name = get_string(in);
        c.adam_v[name] = get_doubles(in);
    }
    c.adam_t = get_i64(in);
    return c;
}

Checkpoint snapshot(const Model& model, const Vocabulary& vocab, const TrainConfig& config,
                    const AdamState& opt, std::int64_t step) {
    Checkpoint c;
    c.arch = arch_fingerprint(config, vocab.size());
    c.step = step;
    c.config_text = config_to_text(config);
    c.vocab_tokens = vocab.tokens();
    for (const auto& [name, t] : model.bundle().map()) {
        c.params[name] = t.vec();
        c.shapes[name] = t.shape;
    }
    c.adam_m = opt.m;
    c.adam_v = opt.v;
    c.adam_t = opt.t;
    return c;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt) {
    Vocabulary v;
    for (std::size_t i = 0; i < ckpt.vocab_tokens.size(); ++i) {
        if (static_cast<int>(i) < kNumReserved) {
            if (ckpt.vocab_tokens[i] != v.token(static_cast<int>(i))) {
                throw std::runtime_error("checkpoint: reserved vocabulary mismatch");
            }
            continue;
        }
        v.add(ckpt.vocab_tokens[i]);
    }
    return v;
}

void restore_model(const Checkpoint& ckpt, Model& model) {
    for (auto& [name, t] : model.bundle().map()) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) {
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        }
        if (it->second.size() != t.vec().size()) {
            throw std::runtime_error("checkpoint: size mismatch for '" + name + "'");
        }
        t.vec() = it->second;
    }
}

void restore_adam(const Checkpoint& ckpt, AdamState& state) {
    state.m = ckpt.adam_m;
    state.v = ckpt.adam_v;
    state.t = ckpt.adam_t;
}

TransferManifest transfer_from_checkpoint(const Checkpoint& ckpt, ModelBundle& target,
                                          const TransferFilter& filter) {
    TransferManifest manifest;
    for (auto& [name, t] : target.map()) {
        if (!filter(name)) {
            manifest.fresh.push_back(name);
            continue;
        }
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) {
            throw std::invalid_argument("transfer: missing pretrained parameter '" + name + "'");
        }
        if (it->second.size() != t.vec().size()) {
            throw std::invalid_argument("transfer: shape mismatch for '" + name + "'");
        }
        t.vec() = it->second;
        manifest.copied.push_back(name);
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// Data plumbing

const std::vector<LoadedSample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

Dataset load_dataset(const std::string& manifest_path) {
    const CorpusManifest manifest = load_manifest(manifest_path);
    Dataset d;
    for (const Sample& s : manifest.samples) {
        LoadedSample ls;
        ls.seq = read_skl(s.resolved_path);
        ls.text = s.text;
        ls.glosses = s.glosses;
        ls.id = fs::path(s.skl_path).stem().string();
        if (s.split == "train") d.train.push_back(std::move(ls));
        else if (s.split == "dev") d.dev.push_back(std::move(ls));
        else d.test.push_back(std::move(ls));
    }
    return d;
}

std::string task_target_text(const LoadedSample& sample, TaskType task) {
    switch (task) {
        case TaskType::ISLR:
            // Isolated recognition: the clip's single gloss label.
            return sample.glosses.front();
        case TaskType::CSLR: {
            std::ostringstream o;
            for (std::size_t i = 0; i < sample.glosses.size(); ++i) {
                if (i) o << ' ';
                o << sample.glosses[i];
            }
            return o.str();
        }
        case TaskType::SLT:
            return sample.text;
    }
    throw std::logic_error("task_target_text: bad task");
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

void zero_all_grads(ModelBundle& bundle) {
    for (auto& [name, t] : bundle.map()) t.zero_grad();
}

Tensor mean_scalars(const std::vector<Tensor>& xs) {
    Tensor acc = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return scale(acc, 1.0 / static_cast<double>(xs.size()));
}

std::vector<int> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

struct TokenizedSample {
    TokenizedText tokens;
    ClusterAssignment clusters;
};

struct PretrainStepValues {
    double global = 0.0, local = 0.0, match = 0.0, lm = 0.0, total = 0.0;
};

// Builds the full pre-training objective for one batch on a fresh tape.
Tensor pretrain_batch_loss(const Model& model, const std::vector<const LoadedSample*>& batch,
                           const std::vector<const TokenizedSample*>& texts, const TrainConfig& cfg,
                           std::uint64_t step_seed, PretrainStepValues& values) {
    const int b = static_cast<int>(batch.size());
    const AlignConfig align_cfg = cfg.align_config();

    std::vector<CoEncodeOutput> encoded;
    encoded.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        encoded.push_back(
            model.encode_pair(batch[static_cast<std::size_t>(i)]->seq,
                              texts[static_cast<std::size_t>(i)]->tokens, cfg.fusion_layers));
    }

    AlignBatch ab;
    std::vector<Tensor> s_rows, t_rows;
    for (int i = 0; i < b; ++i) {
        const CoEncodeOutput& e = encoded[static_cast<std::size_t>(i)];
        s_rows.push_back(slice_rows(e.sign_tokens, 0, 1));
        t_rows.push_back(slice_rows(e.text_tokens, 0, 1));
        ab.sign_tokens.push_back(slice_rows(e.sign_tokens, 1, e.sign_tokens.rows() - 1));
        ab.text_clusters.push_back(
            aggregate(e.text_tokens, texts[static_cast<std::size_t>(i)]->clusters));
    }
    ab.s_cls = concat_rows(s_rows);
    ab.t_cls = concat_rows(t_rows);

    Tensor global = global_alignment_loss(ab, model.heads, model.temp);
    values.global = global.value();
    Tensor align = global;
    if (cfg.alpha > 0.0) {
        Tensor local = local_alignment_loss(ab, model.heads, align_cfg);
        values.local = local.value();
        align = cfg.alpha == 1.0 ? local
                                 : add(scale(global, 1.0 - cfg.alpha), scale(local, cfg.alpha));
    }

    // Matching: positives plus seeded in-batch negatives.
    std::vector<MatchExample> pairing = sample_negatives(b, step_seed);
    std::vector<Tensor> logits;
    std::vector<double> labels;
    for (const MatchExample& ex : pairing) {
        const CoEncodeOutput& cond_src = encoded[static_cast<std::size_t>(ex.sign_index)];
        const Tensor& cond = cfg.cond_source == "sign" ? cond_src.sign_tokens : cond_src.text_tokens;
        std::vector<int> ids = {kTaskId};
        const auto& tids = texts[static_cast<std::size_t>(ex.text_index)]->tokens.ids;
        ids.insert(ids.end(), tids.begin(), tids.end());
        logits.push_back(model.match_logit(ids, cond));
        labels.push_back(ex.label);
    }
    Tensor match = bce_with_logits(
        reshape(stack_scalars(logits, static_cast<int>(logits.size()), 1),
                {static_cast<int>(logits.size())}),
        labels);
    values.match = match.value();

    std::vector<Tensor> lm_losses;
    for (int i = 0; i < b; ++i) {
        const TeacherForced tf = teacher_force(texts[static_cast<std::size_t>(i)]->tokens);
        Tensor lg = model.decode_logits(tf.input_ids, nullptr, LmMode::Pretrain);
        lm_losses.push_back(lm_loss(lg, tf.target_ids));
    }
    Tensor lm = mean_scalars(lm_losses);
    values.lm = lm.value();

    Tensor grounded = grounded_loss(match, lm, cfg.beta);
    Tensor total = add(align, grounded);
    values.total = total.value();
    return total;
}

}  // namespace

PretrainResult pretrain_loop(const TrainConfig& config) {
    config.validate();
    checked_mode() = config.checked;
    const Dataset data = load_dataset(config.manifest);
    if (data.train.empty()) throw std::runtime_error("pretrain: empty training split");

    std::vector<std::string> corpus;
    for (const LoadedSample& s : data.train) corpus.push_back(s.text);
    Vocabulary vocab = build_vocab(corpus, config.vocab_max);
    // Tokenise the whole training split in training mode first so lazily
    // added characters land before the embedding table is sized.
    std::vector<TokenizedSample> texts;
    texts.reserve(data.train.size());
    for (const LoadedSample& s : data.train) {
        TokenizedSample t;
        t.tokens = tokenize(s.text, vocab, true);
        t.clusters = config.cluster_mode == "word"
                         ? compute_offsets(t.tokens.word_ids)
                         : chunk_offsets(t.tokens.word_ids, config.chunk_size);
        texts.push_back(std::move(t));
    }
    Model model(config.model_config(), vocab.size(), config.seed);

    const int n = static_cast<int>(data.train.size());
    const int batch = std::min(config.batch_size, n);
    const int batches_per_epoch = std::max(1, n / batch);
    const int total_steps = config.steps > 0 ? config.steps : config.epochs * batches_per_epoch;

    fs::create_directories(config.out_dir);
    const std::string trace_path = (fs::path(config.out_dir) / "pretrain_trace.tsv").string();
    std::ofstream trace(trace_path, std::ios::binary);
    if (!trace) throw std::runtime_error("pretrain: cannot open " + trace_path);
    trace << "# step\tglobal\tlocal\tmatch\tlm\ttotal\tlr\n";

    AdamState opt;
    const TransferFilter trainable =
        config.freeze_text_encoder
            ? TransferFilter([](const std::string& name) { return name.rfind("text_enc.", 0) != 0; })
            : transfer_all();

    PretrainResult result;
    std::vector<int> order;
    for (int step = 0; step < total_steps; ++step) {
        const int epoch = step / batches_per_epoch;
        const int pos = step % batches_per_epoch;
        if (pos == 0) order = shuffled_indices(static_cast<std::size_t>(n), mix_seed(config.seed, 1000u + static_cast<std::uint64_t>(epoch)));

        std::vector<const LoadedSample*> bs;
        std::vector<const TokenizedSample*> bt;
        for (int k = 0; k < batch; ++k) {
            const int idx = order[static_cast<std::size_t>((pos * batch + k) % n)];
            bs.push_back(&data.train[static_cast<std::size_t>(idx)]);
            bt.push_back(&texts[static_cast<std::size_t>(idx)]);
        }

        const double lr = cosine_lr(step, total_steps, config.base_lr);
        tape().reset();
        zero_all_grads(model.bundle());
        PretrainStepValues v;
        Tensor total = pretrain_batch_loss(model, bs, bt, config,
                                           mix_seed(config.seed, 7000u + static_cast<std::uint64_t>(step)), v);
        backward(total);
        tape().reset();
        adamw_step(model.bundle(), opt, lr, config.weight_decay, config.beta1, config.beta2, 1e-8,
                   trainable);
        model.temp.clamp_after_update();

        char row[256];
        std::snprintf(row, sizeof(row), "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", step, v.global,
                      v.local, v.match, v.lm, v.total, lr);
        trace << row;
        result.total_by_step.push_back(v.total);
        if (step == std::min(9, total_steps - 1)) result.first_traced_total = v.total;
        if (step + 1 == total_steps) {
            result.final_total = v.total;
            result.final_global = v.global;
            result.final_local = v.local;
            result.final_match = v.match;
            result.final_lm = v.lm;
        }
    }
    trace.close();

    // Sign-to-text retrieval on one training batch via the global similarity.
    {
        NoGradGuard ng;
        const int rb = std::min(16, n);
        std::vector<Tensor> s_rows, t_rows;
        for (int i = 0; i < rb; ++i) {
            CoEncodeOutput e = model.encode_pair(data.train[static_cast<std::size_t>(i)].seq,
                                                 texts[static_cast<std::size_t>(i)].tokens,
                                                 config.fusion_layers);
            s_rows.push_back(slice_rows(e.sign_tokens, 0, 1));
            t_rows.push_back(slice_rows(e.text_tokens, 0, 1));
        }
        Tensor sim = global_similarity(concat_rows(s_rows), concat_rows(t_rows), model.heads);
        int hits = 0;
        for (int i = 0; i < rb; ++i) {
            int best = 0;
            double bv = sim.at({i, 0});
            for (int j = 1; j < rb; ++j) {
                if (sim.at({i, j}) > bv) {
                    bv = sim.at({i, j});
                    best = j;
                }
            }
            hits += best == i ? 1 : 0;
        }
        result.retrieval_top1 = 100.0 * hits / std::max(1, rb);
    }

    save_vocab(vocab, (fs::path(config.out_dir) / "vocab.tsv").string());
    const std::string ckpt_path = (fs::path(config.out_dir) / "pretrain.ckpt").string();
    save_checkpoint(snapshot(model, vocab, config, opt, total_steps), ckpt_path);
    result.checkpoint_path = ckpt_path;
    result.trace_path = trace_path;
    result.steps_run = total_steps;
    return result;
}

EvalReport evaluate(const Model& model, Vocabulary& vocab, const std::vector<LoadedSample>& samples,
                    TaskType task, int max_len) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
    NoGradGuard ng;
    std::vector<std::vector<std::string>> refs, hyps;
    std::vector<std::string> pred_labels, true_labels;
    for (const LoadedSample& s : samples) {
        Tensor cond = model.encode_sign(s.seq);
        const std::vector<int> out_ids = greedy_decode(model, cond, max_len);
        const std::vector<std::string> hyp = ids_to_tokens(out_ids, vocab);
        const std::string ref_text = task_target_text(s, task);
        const std::vector<std::string> ref = ids_to_tokens(tokenize(ref_text, vocab).ids, vocab);
        refs.push_back(ref);
        hyps.push_back(hyp);
        if (task == TaskType::ISLR) {
            // Label strings come from the same tokenizer on both sides so a
            // subword-split gloss still compares exactly.
            auto join = [](const std::vector<std::string>& tokens) {
                std::string out;
                for (std::size_t i = 0; i < tokens.size(); ++i) {
                    if (i) out += ' ';
                    out += tokens[i];
                }
                return out;
            };
            pred_labels.push_back(join(hyp));
            true_labels.push_back(join(ref));
        }
    }
    EvalReport report;
    report.task = to_string(task);
    report.sample_count = static_cast<int>(samples.size());
    switch (task) {
        case TaskType::ISLR:
            report.values.emplace_back("P-I", top1_accuracy(pred_labels, true_labels, false));
            report.values.emplace_back("P-C", top1_accuracy(pred_labels, true_labels, true));
            break;
        case TaskType::CSLR: {
            // Pooled corpus WER: total edits over total reference length.
            double edits = 0.0, reflen = 0.0;
            for (std::size_t i = 0; i < refs.size(); ++i) {
                edits += wer(refs[i], hyps[i]) * static_cast<double>(refs[i].size()) / 100.0;
                reflen += static_cast<double>(refs[i].size());
            }
            report.values.emplace_back("WER", 100.0 * edits / reflen);
            break;
        }
        case TaskType::SLT:
            report.values.emplace_back("B@1", bleu(refs, hyps, 1));
            report.values.emplace_back("B@2", bleu(refs, hyps, 2));
            report.values.emplace_back("B@3", bleu(refs, hyps, 3));
            report.values.emplace_back("B@4", bleu(refs, hyps, 4));
            report.values.emplace_back("R@L", rouge_l(refs, hyps));
            break;
    }
    return report;
}

FinetuneResult finetune_loop(const TrainConfig& config, const std::string& from_checkpoint,
                             bool force) {
    config.validate();
    checked_mode() = config.checked;
    const TransferMode mode = transfer_mode_from_string(config.transfer_mode);
    if (mode != TransferMode::None && from_checkpoint.empty()) {
        throw std::runtime_error("finetune: transfer_mode '" + config.transfer_mode +
                                 "' requires a pretrained checkpoint");
    }
    const Dataset data = load_dataset(config.manifest);
    if (data.train.empty()) throw std::runtime_error("finetune: empty training split");
    const TaskType task = task_from_string(config.task);

    Vocabulary vocab;
    Checkpoint ckpt;
    bool have_ckpt = false;
    if (!from_checkpoint.empty()) {
        ckpt = load_checkpoint(from_checkpoint);
        have_ckpt = true;
        if (ckpt.arch != arch_fingerprint(config, static_cast<int>(ckpt.vocab_tokens.size())) && !force) {
            throw std::runtime_error("finetune: checkpoint architecture mismatch (use force to override)");
        }
        vocab = vocab_from_checkpoint(ckpt);
    } else {
        std::vector<std::string> corpus;
        for (const LoadedSample& s : data.train) corpus.push_back(s.text);
        vocab = build_vocab(corpus, config.vocab_max);
    }

    Model model(config.model_config(), vocab.size(), mix_seed(config.seed, 0xF17Eu));
    FinetuneResult result;
    if (have_ckpt) {
        result.transfer = transfer_from_checkpoint(ckpt, model.bundle(), filter_for_mode(mode));
    } else {
        for (const auto& [name, t] : model.bundle().map()) result.transfer.fresh.push_back(name);
    }

    struct Prepared {
        TeacherForced tf;
    };
    std::vector<Prepared> prepared;
    prepared.reserve(data.train.size());
    for (const LoadedSample& s : data.train) {
        prepared.push_back({teacher_force(tokenize(task_target_text(s, task), vocab))});
    }

    const int n = static_cast<int>(data.train.size());
    const int batch = std::min(config.batch_size, n);
    const int batches_per_epoch = std::max(1, n / batch);
    const int total_updates =
        config.steps > 0 ? config.steps : config.epochs * batches_per_epoch;

    AdamState opt;
    int update = 0;
    for (int epoch = 0; update < total_updates; ++epoch) {
        const std::vector<int> order =
            shuffled_indices(static_cast<std::size_t>(n), mix_seed(config.seed, 2000u + static_cast<std::uint64_t>(epoch)));
        for (int pos = 0; pos < batches_per_epoch && update < total_updates; ++pos, ++update) {
            const double lr = cosine_lr(update, total_updates, config.base_lr);
            zero_all_grads(model.bundle());
            // Micro-batch accumulation; per-sample losses are scaled by the
            // full batch size so accumulation matches one big batch.
            const int micro = std::max(1, batch / config.grad_accum);
            for (int start = 0; start < batch; start += micro) {
                tape().reset();
                std::vector<Tensor> losses;
                for (int k = start; k < std::min(batch, start + micro); ++k) {
                    const int idx = order[static_cast<std::size_t>((pos * batch + k) % n)];
                    const LoadedSample& s = data.train[static_cast<std::size_t>(idx)];
                    Tensor cond = model.encode_sign(s.seq);
                    Tensor logits = model.decode_logits(prepared[static_cast<std::size_t>(idx)].tf.input_ids,
                                                        &cond, LmMode::Finetune);
                    losses.push_back(
                        scale(finetune_loss(logits, prepared[static_cast<std::size_t>(idx)].tf.target_ids),
                              1.0 / batch));
                }
                Tensor micro_loss = losses.size() == 1 ? losses[0] : [&] {
                    Tensor acc = losses[0];
                    for (std::size_t i = 1; i < losses.size(); ++i) acc = add(acc, losses[i]);
                    return acc;
                }();
                backward(micro_loss);
                tape().reset();
            }
            adamw_step(model.bundle(), opt, lr, config.weight_decay, config.beta1, config.beta2,
                       1e-8, transfer_all());
        }
        if (!data.dev.empty()) {
            result.dev_report = evaluate(model, vocab, data.dev, task, config.eval_max_len);
        }
    }

    result.train_report = evaluate(model, vocab, data.train, task, config.eval_max_len);
    if (result.dev_report.values.empty() && !data.dev.empty()) {
        result.dev_report = evaluate(model, vocab, data.dev, task, config.eval_max_len);
    }

    fs::create_directories(config.out_dir);
    const std::string ckpt_path =
        (fs::path(config.out_dir) / ("finetune_" + config.task + ".ckpt")).string();
    save_checkpoint(snapshot(model, vocab, config, opt, total_updates), ckpt_path);
    write_report_txt(result.train_report,
                     (fs::path(config.out_dir) / ("report_" + config.task + "_train.txt")).string());
    write_report_json(result.train_report,
                      (fs::path(config.out_dir) / ("report_" + config.task + "_train.json")).string());
    if (!result.dev_report.values.empty()) {
        write_report_txt(result.dev_report,
                         (fs::path(config.out_dir) / ("report_" + config.task + "_dev.txt")).string());
        write_report_json(result.dev_report,
                          (fs::path(config.out_dir) / ("report_" + config.task + "_dev.json")).string());
    }
    result.checkpoint_path = ckpt_path;
    return result;
}

void export_embeddings(const std::string& checkpoint_path, const std::string& split,
                       const std::string& manifest_path, const std::string& out_path) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    TrainConfig config = parse_config_text(ckpt.config_text);
    if (!manifest_path.empty()) config.manifest = manifest_path;
    Vocabulary vocab = vocab_from_checkpoint(ckpt);
    Model model(config.model_config(), vocab.size(), config.seed);
    restore_model(ckpt, model);
    const Dataset data = load_dataset(config.manifest);
    const std::vector<LoadedSample>& samples = data.split(split);
    if (samples.empty()) throw std::runtime_error("export: split '" + split + "' is empty");

    NoGradGuard ng;
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("export: cannot open " + out_path);
    auto write_row = [&out](const std::string& id, const char* modality, const Tensor& pooled) {
        out << id << '\t' << modality;
        char buf[32];
        for (double v : pooled.vec()) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << '\t' << buf;
        }
        out << '\n';
    };
    for (const LoadedSample& s : samples) {
        Tensor sign = model.encode_sign(s.seq);
        Tensor sign_pooled = reshape(matmul(Tensor::full({1, sign.rows()}, 1.0 / sign.rows()), sign),
                                     {sign.cols()});
        write_row(s.id, "sign", sign_pooled);
        TokenizedText tokens = tokenize(s.text, vocab);
        Tensor text = embed(tokens, model.text_embed, model.text_pos);
        Tensor text_pooled = reshape(matmul(Tensor::full({1, text.rows()}, 1.0 / text.rows()), text),
                                     {text.cols()});
        write_row(s.id, "text", text_pooled);
    }
}

std::vector<AblateRow> ablate_sweep(const TrainConfig& config, const std::string& sweep) {
    std::vector<std::pair<std::string, std::function<void(TrainConfig&)>>> settings;
    if (sweep == "alpha" || sweep == "beta") {
        for (double v : {0.2, 0.4, 0.5, 0.6, 0.8}) {
            char label[16];
            std::snprintf(label, sizeof(label), "%.1f", v);
            settings.emplace_back(label, [sweep, v](TrainConfig& c) {
                (sweep == "alpha" ? c.alpha : c.beta) = v;
            });
        }
    } else if (sweep == "fusion") {
        for (int f = 1; f <= 5; ++f) {
            settings.emplace_back(std::to_string(f), [f](TrainConfig& c) { c.fusion_layers = f; });
        }
    } else if (sweep == "rowop") {
        for (RowOp op : {RowOp::Max, RowOp::Average, RowOp::TopkAverage, RowOp::Softmax}) {
            settings.emplace_back(to_string(op), [op](TrainConfig& c) { c.row_op = to_string(op); });
        }
    } else if (sweep == "scoring") {
        for (Scoring sc : {Scoring::Sum, Scoring::Average, Scoring::LogSumExp, Scoring::Softmax,
                           Scoring::VarianceReducedSum}) {
            settings.emplace_back(to_string(sc), [sc](TrainConfig& c) { c.scoring = to_string(sc); });
        }
    } else {
        throw std::invalid_argument("ablate: unknown sweep '" + sweep + "'");
    }

    std::vector<AblateRow> rows;
    for (const auto& [label, apply] : settings) {
        TrainConfig c = config;
        apply(c);
        c.out_dir = (fs::path(config.out_dir) / ("ablate_" + sweep + "_" + label)).string();
        if (sweep == "fusion" && c.enc_depth < 5) {
            throw std::invalid_argument("ablate: fusion sweep needs enc_depth >= 5");
        }
        AblateRow row;
        row.sweep = sweep;
        row.value = label;
        row.result = pretrain_loop(c);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablate_table(const std::vector<AblateRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ablate: cannot open " + path);
    out << "sweep\tvalue\ttotal\tglobal\tlocal\tmatch\tlm\tretrieval_top1\n";
    char buf[256];
    for (const AblateRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s\t%s\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.2f\n",
                      r.sweep.c_str(), r.value.c_str(), r.result.final_total, r.result.final_global,
                      r.result.final_local, r.result.final_match, r.result.final_lm,
                      r.result.retrieval_top1);
        out << buf;
    }
}

}  // namespace slu
