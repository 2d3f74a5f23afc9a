#include "tha/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "tha/errors.hpp"

namespace tha {

namespace {

constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kSplitStream = 0x22;
constexpr std::uint64_t kStepStreamBase = 0x1000000;

std::string fingerprint_hex(const SynthCorpus& corpus) {
    std::ostringstream out;
    out << std::hex << fingerprint_corpus(corpus);
    return out.str();
}

Eigen::MatrixXd sequence_cols(const LandmarkSequence& seq) {
    Eigen::MatrixXd cols(kFrameDims, seq.frame_count());
    for (int t = 0; t < seq.frame_count(); ++t) cols.col(t) = seq.frames[t].flatten();
    return cols;
}

double matrix_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& ref,
                   const Eigen::MatrixXd& lap_flat, double lambda) {
    const Eigen::MatrixXd diff = pred - ref;
    return diff.squaredNorm() + lambda * (lap_flat * diff).squaredNorm();
}

// Sampled (clip, frame/window) pairs grouped by clip so each clip builds one
// batched subgraph per step.
std::map<int, std::vector<int>> sample_batch(Rng& rng, const std::vector<int>& clip_pool,
                                             const std::vector<TrainClip>& clips, int batch_size,
                                             int stride) {
    std::map<int, std::vector<int>> grouped;
    for (int b = 0; b < batch_size; ++b) {
        const int clip = clip_pool[static_cast<std::size_t>(rng.below(clip_pool.size()))];
        const int t_total = static_cast<int>(clips[static_cast<std::size_t>(clip)].a_cols.cols());
        if (stride <= 1) {
            grouped[clip].push_back(static_cast<int>(rng.below(t_total)));
        } else {
            const int n_windows = (t_total + stride - 1) / stride;
            grouped[clip].push_back(static_cast<int>(rng.below(n_windows)) * stride);
        }
    }
    return grouped;
}

void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* t : params) t->zero_grad();
}

void check_finite(double loss, const char* what, long step) {
    if (!std::isfinite(loss)) {
        throw TrainingError(std::string(what) + " loss diverged to a non-finite value at step " +
                            std::to_string(step));
    }
}

void check_fingerprint(const Checkpoint& resume, const std::string& fingerprint) {
    const std::string stored = resume.manifest.value("corpus_fingerprint", "");
    if (stored != fingerprint) {
        throw TrainingError("resume checkpoint was trained on corpus " + stored +
                            " but this corpus fingerprints as " + fingerprint);
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0 || weight_decay < 0.0) {
        throw ConfigError("learning rate must be positive and weight decay nonnegative");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
    }
    if (max_steps < 0) {
        throw ConfigError("max_steps must be >= 0, got " + std::to_string(max_steps));
    }
    if (eval_interval < 1) {
        throw ConfigError("eval_interval must be >= 1, got " + std::to_string(eval_interval));
    }
    if (lambda_c < 0.0 || lambda_s < 0.0 || mu_s < 0.0) {
        throw ConfigError("loss weights must be nonnegative");
    }
}

AdamConfig TrainConfig::adam() const {
    AdamConfig a;
    a.lr = learning_rate;
    a.weight_decay = weight_decay;
    return a;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay},
            {"batch_size", batch_size},       {"max_steps", max_steps},
            {"seed", seed},                   {"lambda_c", lambda_c},
            {"lambda_s", lambda_s},           {"mu_s", mu_s},
            {"eval_interval", eval_interval}};
}

nlohmann::json content_config_json(const ContentBranchConfig& cfg) {
    return {{"content_dim", cfg.content_dim}, {"lstm_hidden", cfg.lstm_hidden},
            {"lstm_layers", cfg.lstm_layers}, {"mlp_hidden", cfg.mlp_hidden},
            {"tau", cfg.window.tau},          {"tau_prime", cfg.window.tau_prime}};
}

ContentBranchConfig content_config_from_json(const nlohmann::json& j) {
    ContentBranchConfig cfg;
    cfg.content_dim = j.at("content_dim").get<int>();
    cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
    cfg.lstm_layers = j.at("lstm_layers").get<int>();
    cfg.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
    cfg.window.tau = j.at("tau").get<int>();
    cfg.window.tau_prime = j.at("tau_prime").get<int>();
    cfg.validate();
    return cfg;
}

nlohmann::json speaker_config_json(const SpeakerBranchConfig& cfg) {
    return {{"content_dim", cfg.content_dim},
            {"lstm_hidden", cfg.lstm_hidden},
            {"lstm_layers", cfg.lstm_layers},
            {"attn_d_model", cfg.attn_d_model},
            {"attn_heads", cfg.attn_heads},
            {"attn_layers", cfg.attn_layers},
            {"attn_position_encoding", cfg.attn_position_encoding},
            {"mlp_hidden", cfg.mlp_hidden},
            {"tau", cfg.window.tau},
            {"tau_prime", cfg.window.tau_prime}};
}

SpeakerBranchConfig speaker_config_from_json(const nlohmann::json& j) {
    SpeakerBranchConfig cfg;
    cfg.content_dim = j.at("content_dim").get<int>();
    cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
    cfg.lstm_layers = j.at("lstm_layers").get<int>();
    cfg.attn_d_model = j.at("attn_d_model").get<int>();
    cfg.attn_heads = j.at("attn_heads").get<int>();
    cfg.attn_layers = j.at("attn_layers").get<int>();
    cfg.attn_position_encoding = j.at("attn_position_encoding").get<bool>();
    cfg.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
    cfg.window.tau = j.at("tau").get<int>();
    cfg.window.tau_prime = j.at("tau_prime").get<int>();
    cfg.validate();
    return cfg;
}

nlohmann::json discriminator_config_json(const DiscriminatorConfig& cfg) {
    return {{"code_dim", cfg.code_dim},
            {"attn_d_model", cfg.attn_d_model},
            {"attn_heads", cfg.attn_heads},
            {"attn_layers", cfg.attn_layers},
            {"attn_position_encoding", cfg.attn_position_encoding},
            {"head_hidden", cfg.head_hidden}};
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
    DiscriminatorConfig cfg;
    cfg.code_dim = j.at("code_dim").get<int>();
    cfg.attn_d_model = j.at("attn_d_model").get<int>();
    cfg.attn_heads = j.at("attn_heads").get<int>();
    cfg.attn_layers = j.at("attn_layers").get<int>();
    cfg.attn_position_encoding = j.at("attn_position_encoding").get<bool>();
    cfg.head_hidden = j.at("head_hidden").get<std::vector<int>>();
    cfg.validate();
    return cfg;
}

SplitIndices split_corpus(int n_clips, std::uint64_t seed) {
    if (n_clips < 1) {
        throw ValidationError("cannot split an empty corpus");
    }
    std::vector<int> order(static_cast<std::size_t>(n_clips));
    for (int i = 0; i < n_clips; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.fork(kSplitStream).shuffle(order);

    const int n_train = std::max(1, static_cast<int>(std::lround(0.6 * n_clips)));
    const int remaining = n_clips - n_train;
    const int n_val = remaining / 2;

    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    if (s.val.empty()) s.val = s.train;
    if (s.test.empty()) s.test = s.val;
    return s;
}

std::vector<TrainClip> prepare_clips(const SynthCorpus& corpus) {
    if (corpus.clips.empty()) {
        throw ValidationError("corpus has no clips");
    }
    std::vector<TrainClip> out;
    out.reserve(corpus.clips.size());
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        const SynthClip& clip = corpus.clips[i];
        TrainClip tc;
        tc.index = static_cast<int>(i);
        tc.speaker = clip.speaker_index;
        tc.a_cols = clip.content.values.transpose();
        tc.posed = sequence_cols(clip.landmarks);
        tc.registered = sequence_cols(
            register_to_template(clip.landmarks, corpus.template_face).registered);
        tc.s_raw = clip.speaker.raw;
        if (tc.a_cols.cols() != tc.posed.cols()) {
            throw ValidationError("clip " + clip.clip_id + " has " +
                                  std::to_string(tc.a_cols.cols()) + " embedding frames but " +
                                  std::to_string(tc.posed.cols()) + " landmark frames");
        }
        out.push_back(std::move(tc));
    }
    return out;
}

void store_prefixed(Checkpoint& ckpt, const std::string& prefix,
                    const std::vector<Tensor*>& params) {
    for (const Tensor* t : params) ckpt.put(prefix + "/" + t->name, t->value);
}

void load_prefixed(const Checkpoint& ckpt, const std::string& prefix,
                   const std::vector<Tensor*>& params) {
    for (Tensor* t : params) {
        const Eigen::MatrixXd& stored = ckpt.get(prefix + "/" + t->name);
        if (stored.rows() != t->value.rows() || stored.cols() != t->value.cols()) {
            throw ParseError("checkpoint array '" + prefix + "/" + t->name +
                             "' does not match the configured architecture");
        }
        t->value = stored;
        t->grad.setZero();
    }
}

ContentTrainResult train_content(const SynthCorpus& corpus, const ContentBranchConfig& bcfg,
                                 const TrainConfig& cfg, const Checkpoint* resume) {
    bcfg.validate();
    cfg.validate();
    const std::vector<TrainClip> clips = prepare_clips(corpus);
    const SplitIndices splits = split_corpus(static_cast<int>(clips.size()), cfg.seed);
    const std::string fingerprint = fingerprint_hex(corpus);
    const Eigen::MatrixXd lap_flat = laplacian_flat_operator(default_topology());
    const Eigen::VectorXd q_flat = corpus.template_face.flatten();

    Rng base(cfg.seed);
    Rng init_rng = base.fork(kInitStream);
    ContentTrainResult result;
    ContentBranchParams params = ContentBranchParams::create(bcfg, init_rng);
    Adam opt(params.params(), cfg.adam());

    long start_step = 0;
    double best_val = std::numeric_limits<double>::infinity();
    if (resume != nullptr) {
        check_fingerprint(*resume, fingerprint);
        load_prefixed(*resume, "resume", params.params());
        restore_adam(*resume, opt, "adam");
        start_step = resume->manifest.at("step").get<long>();
        best_val = resume->manifest.at("best_val").get<double>();
    }

    auto val_loss = [&]() {
        double total = 0.0;
        for (int ci : splits.val) {
            const TrainClip& clip = clips[static_cast<std::size_t>(ci)];
            ContentEmbedding a;
            a.values = clip.a_cols.transpose();
            const ContentForwardResult fwd =
                content_forward(a, corpus.template_face, params);
            total += matrix_loss(sequence_cols(fwd.sequence), clip.registered, lap_flat,
                                 cfg.lambda_c) /
                     static_cast<double>(clip.a_cols.cols());
        }
        return total / static_cast<double>(splits.val.size());
    };

    ContentBranchParams best = params;
    if (resume != nullptr) {
        load_params(*resume, best.params());
    } else {
        best_val = val_loss();
        result.val_curve.push_back(best_val);
        result.val_steps.push_back(0);
    }

    for (long step = start_step; step < cfg.max_steps; ++step) {
        Rng srng = base.fork(kStepStreamBase + static_cast<std::uint64_t>(step));
        const auto batch = sample_batch(srng, splits.train, clips, cfg.batch_size, 1);

        zero_grads(params.params());
        Tape tape;
        int loss_node = -1;
        for (const auto& [ci, positions] : batch) {
            const TrainClip& clip = clips[static_cast<std::size_t>(ci)];
            const int pred = content_positions_node(tape, params, clip.a_cols, positions, q_flat);
            Eigen::MatrixXd ref(kFrameDims, positions.size());
            for (std::size_t k = 0; k < positions.size(); ++k) {
                ref.col(static_cast<Eigen::Index>(k)) =
                    clip.registered.col(positions[k]);
            }
            const int part = content_loss_node(tape, pred, ref, lap_flat, cfg.lambda_c);
            loss_node = loss_node < 0 ? part : tape.add(loss_node, part);
        }
        loss_node = tape.scale(loss_node, 1.0 / cfg.batch_size);
        const double loss = tape.value(loss_node)(0, 0);
        check_finite(loss, "content", step);
        tape.backward(loss_node);
        opt.step();
        result.train_curve.push_back(loss);

        if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.max_steps) {
            const double v = val_loss();
            check_finite(v, "content validation", step);
            result.val_curve.push_back(v);
            result.val_steps.push_back(step + 1);
            if (v < best_val) {
                best_val = v;
                best = params;
            }
        }
    }

    result.best = best;
    result.best_val = best_val;
    result.checkpoint.manifest = {{"kind", "content"},
                                  {"step", std::max(start_step, static_cast<long>(cfg.max_steps))},
                                  {"best_val", best_val},
                                  {"corpus_fingerprint", fingerprint},
                                  {"train_config", cfg.to_json()},
                                  {"content_config", content_config_json(bcfg)}};
    result.checkpoint.put("template", corpus.template_face.flatten());
    store_params(result.checkpoint, result.best.params());
    store_prefixed(result.checkpoint, "resume", params.params());
    store_adam(result.checkpoint, opt, "adam");
    return result;
}

SpeakerTrainResult train_speaker(const SynthCorpus& corpus, const SpeakerBranchConfig& bcfg,
                                 const DiscriminatorConfig& dcfg, const TrainConfig& cfg,
                                 const Checkpoint* resume) {
    bcfg.validate();
    dcfg.validate();
    cfg.validate();
    if (dcfg.code_dim != bcfg.lstm_hidden) {
        throw ConfigError("discriminator code_dim " + std::to_string(dcfg.code_dim) +
                          " must equal the generator LSTM hidden size " +
                          std::to_string(bcfg.lstm_hidden));
    }
    const std::vector<TrainClip> clips = prepare_clips(corpus);
    const SplitIndices splits = split_corpus(static_cast<int>(clips.size()), cfg.seed);
    const std::string fingerprint = fingerprint_hex(corpus);
    const Eigen::MatrixXd lap_flat = laplacian_flat_operator(default_topology());
    const Eigen::VectorXd q_flat = corpus.template_face.flatten();
    const int width = bcfg.window.tau_prime;

    Rng base(cfg.seed);
    Rng init_g = base.fork(kInitStream);
    Rng init_d = base.fork(kInitStream + 1);
    SpeakerTrainResult result;
    SpeakerBranchParams gen = SpeakerBranchParams::create(bcfg, init_g);
    DiscriminatorParams dis = DiscriminatorParams::create(dcfg, init_d);
    Adam opt_g(gen.params(), cfg.adam());
    Adam opt_d(dis.params(), cfg.adam());

    long start_step = 0;
    if (resume != nullptr) {
        check_fingerprint(*resume, fingerprint);
        load_prefixed(*resume, "resume", gen.params());
        load_prefixed(*resume, "resume", dis.params());
        restore_adam(*resume, opt_g, "adam_g");
        restore_adam(*resume, opt_d, "adam_d");
        start_step = resume->manifest.at("step").get<long>();
    }

    auto window_ref = [&](const TrainClip& clip, int win_start) {
        const int t_total = static_cast<int>(clip.posed.cols());
        Eigen::MatrixXd ref(kFrameDims, width);
        for (int b = 0; b < width; ++b) {
            ref.col(b) = clip.posed.col(std::min(win_start + b, t_total - 1));
        }
        return ref;
    };

    for (long step = start_step; step < cfg.max_steps; ++step) {
        Rng srng = base.fork(kStepStreamBase + static_cast<std::uint64_t>(step));

        // Generator step.
        {
            const auto batch = sample_batch(srng, splits.train, clips, cfg.batch_size, width);
            zero_grads(gen.params());
            Tape tape;
            int loss_node = -1;
            for (const auto& [ci, starts] : batch) {
                const TrainClip& clip = clips[static_cast<std::size_t>(ci)];
                const int s128 = speaker_projection_node(tape, gen, clip.s_raw);
                for (int win_start : starts) {
                    const SpeakerWindowNodes win = speaker_window_nodes(
                        tape, gen, clip.a_cols, win_start, s128, clip.registered, q_flat);
                    const int r_fake = discriminator_node(tape, dis, win.y, win.codes, s128);
                    const int part =
                        generator_loss_node(tape, win.y, window_ref(clip, win_start), lap_flat,
                                            r_fake, cfg.lambda_s, cfg.mu_s);
                    loss_node = loss_node < 0 ? part : tape.add(loss_node, part);
                }
            }
            loss_node = tape.scale(loss_node, 1.0 / cfg.batch_size);
            const double loss = tape.value(loss_node)(0, 0);
            check_finite(loss, "generator", step);
            tape.backward(loss_node);
            opt_g.step();
            zero_grads(dis.params());  // discard generator-step spill
            result.gen_curve.push_back(loss);
        }

        // Discriminator step.
        {
            const auto batch = sample_batch(srng, splits.train, clips, cfg.batch_size, width);
            zero_grads(dis.params());
            Tape tape;
            int loss_node = -1;
            for (const auto& [ci, starts] : batch) {
                const TrainClip& clip = clips[static_cast<std::size_t>(ci)];
                SpeakerEmbedding se;
                se.raw = clip.s_raw;
                const int s128 = tape.constant(gen.project(se));
                for (int win_start : starts) {
                    const SpeakerWindowNodes win = speaker_window_nodes(
                        tape, gen, clip.a_cols, win_start, s128, clip.registered, q_flat);
                    const int y_fake = tape.detach(win.y);
                    const int codes = tape.detach(win.codes);
                    const int r_fake = discriminator_node(tape, dis, y_fake, codes, s128);
                    const int r_real = discriminator_node(
                        tape, dis, tape.constant(window_ref(clip, win_start)), codes, s128);
                    const int part = lsgan_node(tape, r_real, r_fake);
                    loss_node = loss_node < 0 ? part : tape.add(loss_node, part);
                }
            }
            loss_node = tape.scale(loss_node, 1.0 / cfg.batch_size);
            const double loss = tape.value(loss_node)(0, 0);
            check_finite(loss, "discriminator", step);
            tape.backward(loss_node);
            opt_d.step();
            zero_grads(gen.params());
            result.dis_curve.push_back(loss);
        }
    }

    result.generator = gen;
    result.discriminator = dis;
    result.checkpoint.manifest = {
        {"kind", "speaker"},
        {"step", std::max(start_step, static_cast<long>(cfg.max_steps))},
        {"corpus_fingerprint", fingerprint},
        {"train_config", cfg.to_json()},
        {"speaker_config", speaker_config_json(bcfg)},
        {"discriminator_config", discriminator_config_json(dcfg)}};
    result.checkpoint.put("template", corpus.template_face.flatten());
    store_params(result.checkpoint, result.generator.params());
    store_params(result.checkpoint, result.discriminator.params());
    store_prefixed(result.checkpoint, "resume", result.generator.params());
    store_prefixed(result.checkpoint, "resume", result.discriminator.params());
    store_adam(result.checkpoint, opt_g, "adam_g");
    store_adam(result.checkpoint, opt_d, "adam_d");
    return result;
}

LandmarkSequence retrieval_baseline(const SynthClip& test_clip, const SynthCorpus& corpus,
                                    RetrievalMode mode, std::uint64_t seed) {
    std::vector<const SynthClip*> candidates;
    for (const SynthClip& clip : corpus.clips) {
        if (clip.clip_id == test_clip.clip_id) continue;
        if (mode == RetrievalMode::SameId && clip.speaker_index != test_clip.speaker_index) {
            continue;
        }
        candidates.push_back(&clip);
    }
    if (candidates.empty()) {
        throw BaselineError(std::string("no eligible clip for ") +
                            (mode == RetrievalMode::SameId ? "same" : "random") +
                            "-identity retrieval besides " + test_clip.clip_id);
    }
    Rng rng(seed);
    const SynthClip& source = *candidates[static_cast<std::size_t>(rng.below(candidates.size()))];

    const LandmarkSequence registered =
        register_to_template(test_clip.landmarks, corpus.template_face).registered;
    const int t_src = source.landmarks.frame_count();
    std::vector<HeadPose> poses;
    poses.reserve(registered.frames.size());
    for (int t = 0; t < registered.frame_count(); ++t) {
        poses.push_back(decompose_head_pose(source.landmarks.frames[static_cast<std::size_t>(
                                                std::min(t, t_src - 1))],
                                            corpus.template_face));
    }
    return apply_head_pose(registered, poses);
}

}  // namespace tha
