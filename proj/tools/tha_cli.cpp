#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tha/checkpoint.hpp"
#include "tha/errors.hpp"
#include "tha/image_translation.hpp"
#include "tha/landmark_io.hpp"
#include "tha/pipeline.hpp"
#include "tha/training.hpp"

namespace {

using namespace tha;
namespace fs = std::filesystem;

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed while writing " + path);
}

std::string fingerprint_hex(const SynthCorpus& corpus) {
    std::ostringstream out;
    out << std::hex << fingerprint_corpus(corpus);
    return out.str();
}

SynthCorpus load_corpus_checked(const std::string& dir) {
    const SynthCorpus corpus = load_corpus(dir);
    if (corpus.clips.empty()) throw ValidationError("corpus at " + dir + " holds no clips");
    return corpus;
}

std::uint64_t checkpoint_train_seed(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    try {
        return ckpt.manifest.at("train_config").at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + " has no training seed: " + e.what());
    }
}

void add_synth_corpus(CLI::App& app) {
    struct Args {
        std::string out;
        SynthSpec spec;
        std::uint64_t seed = 1;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("synth-corpus",
                                       "Generate a deterministic synthetic training corpus");
    cmd->add_option("--out", args->out, "Corpus output directory")->required();
    cmd->add_option("--speakers", args->spec.n_speakers, "Number of synthetic speakers");
    cmd->add_option("--clips-per-speaker", args->spec.clips_per_speaker, "Clips per speaker");
    cmd->add_option("--duration", args->spec.duration_s, "Clip length in seconds");
    cmd->add_option("--content-dim", args->spec.content_dim, "Content embedding width");
    cmd->add_option("--tau-prime", args->spec.tau_prime, "Minimum clip length in frames");
    cmd->add_option("--mouth-gain", args->spec.mouth_gain, "Lip motion gain");
    cmd->add_option("--sway-scale", args->spec.sway_scale, "Head sway gain");
    cmd->add_option("--expression-scale", args->spec.expression_scale, "Expression gain");
    cmd->add_option("--seed", args->seed, "Generation seed");
    cmd->callback([args] {
        args->spec.validate();
        const SynthCorpus corpus = synthesize_corpus(args->spec, args->seed);
        save_corpus(corpus, args->out);
        const std::string fingerprint = fingerprint_hex(corpus);
        write_json_file(
            (fs::path(args->out) / "run_manifest.json").string(),
            {{"command", "synth-corpus"},
             {"seed", args->seed},
             {"corpus_fingerprint", fingerprint},
             {"config",
              {{"speakers", args->spec.n_speakers},
               {"clips_per_speaker", args->spec.clips_per_speaker},
               {"duration_s", args->spec.duration_s},
               {"content_dim", args->spec.content_dim},
               {"tau_prime", args->spec.tau_prime},
               {"mouth_gain", args->spec.mouth_gain},
               {"sway_scale", args->spec.sway_scale},
               {"expression_scale", args->spec.expression_scale}}}});
        std::cout << "wrote " << corpus.clips.size() << " clips to " << args->out
                  << " (fingerprint " << fingerprint << ")\n";
    });
}

void add_train_flags(CLI::App* cmd, TrainConfig& tcfg) {
    cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
    cmd->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay");
    cmd->add_option("--batch-size", tcfg.batch_size, "Frames (or pairs) per step");
    cmd->add_option("--steps", tcfg.max_steps, "Optimization steps");
    cmd->add_option("--seed", tcfg.seed, "Training seed");
    cmd->add_option("--eval-interval", tcfg.eval_interval, "Steps between validation passes");
}

void add_train_content(CLI::App& app) {
    struct Args {
        std::string corpus, out, resume;
        ContentBranchConfig bcfg;
        TrainConfig tcfg;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("train-content", "Train the speech-content branch");
    cmd->add_option("--corpus", args->corpus, "Corpus directory")->required();
    cmd->add_option("--out", args->out, "Checkpoint output path")->required();
    cmd->add_option("--resume", args->resume, "Checkpoint to resume from");
    cmd->add_option("--lstm-hidden", args->bcfg.lstm_hidden, "LSTM hidden width");
    cmd->add_option("--lstm-layers", args->bcfg.lstm_layers, "LSTM layer count");
    cmd->add_option("--mlp-hidden", args->bcfg.mlp_hidden, "Decoder hidden widths")
        ->delimiter(',');
    cmd->add_option("--tau", args->bcfg.window.tau, "Content window length");
    cmd->add_option("--tau-prime", args->bcfg.window.tau_prime, "Speaker window length");
    add_train_flags(cmd, args->tcfg);
    cmd->add_option("--lambda-c", args->tcfg.lambda_c, "Laplacian term weight");
    cmd->callback([args] {
        const SynthCorpus corpus = load_corpus_checked(args->corpus);
        args->bcfg.content_dim = corpus.clips.front().content.dim();
        Checkpoint resume;
        if (!args->resume.empty()) resume = load_checkpoint(args->resume);
        const ContentTrainResult result = train_content(
            corpus, args->bcfg, args->tcfg, args->resume.empty() ? nullptr : &resume);
        save_checkpoint(args->out, result.checkpoint);
        write_json_file(args->out + ".run.json",
                        {{"command", "train-content"},
                         {"seed", args->tcfg.seed},
                         {"config",
                          {{"branch", content_config_json(args->bcfg)},
                           {"train", args->tcfg.to_json()}}},
                         {"corpus", args->corpus},
                         {"corpus_fingerprint", fingerprint_hex(corpus)},
                         {"checkpoint_hash", hash_file_hex(args->out)},
                         {"best_val", result.best_val}});
        std::cout << "trained " << args->tcfg.max_steps << " steps";
        if (!result.train_curve.empty()) std::cout << ", final loss " << result.train_curve.back();
        std::cout << ", best validation " << result.best_val << "\nsaved " << args->out << '\n';
    });
}

void add_train_speaker(CLI::App& app) {
    struct Args {
        std::string corpus, out, resume;
        SpeakerBranchConfig bcfg;
        TrainConfig tcfg;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("train-speaker",
                                       "Train the speaker-aware branch and its discriminator");
    cmd->add_option("--corpus", args->corpus, "Corpus directory")->required();
    cmd->add_option("--out", args->out, "Checkpoint output path")->required();
    cmd->add_option("--resume", args->resume, "Checkpoint to resume from");
    cmd->add_option("--lstm-hidden", args->bcfg.lstm_hidden, "LSTM hidden width");
    cmd->add_option("--lstm-layers", args->bcfg.lstm_layers, "LSTM layer count");
    cmd->add_option("--mlp-hidden", args->bcfg.mlp_hidden, "Decoder hidden widths")
        ->delimiter(',');
    cmd->add_option("--attn-d-model", args->bcfg.attn_d_model, "Attention model width");
    cmd->add_option("--attn-heads", args->bcfg.attn_heads, "Attention heads");
    cmd->add_option("--attn-layers", args->bcfg.attn_layers, "Attention encoder layers");
    cmd->add_flag_callback("--no-position-encoding",
                           [args] { args->bcfg.attn_position_encoding = false; },
                           "Disable the sinusoidal position encoding");
    cmd->add_option("--tau", args->bcfg.window.tau, "Content window length");
    cmd->add_option("--tau-prime", args->bcfg.window.tau_prime, "Speaker window length");
    add_train_flags(cmd, args->tcfg);
    cmd->add_option("--lambda-s", args->tcfg.lambda_s, "Laplacian term weight");
    cmd->add_option("--mu-s", args->tcfg.mu_s, "Adversarial term weight");
    cmd->callback([args] {
        const SynthCorpus corpus = load_corpus_checked(args->corpus);
        args->bcfg.content_dim = corpus.clips.front().content.dim();
        DiscriminatorConfig dcfg;
        dcfg.code_dim = args->bcfg.lstm_hidden;
        dcfg.attn_d_model = args->bcfg.attn_d_model;
        dcfg.attn_heads = args->bcfg.attn_heads;
        dcfg.attn_layers = args->bcfg.attn_layers;
        dcfg.attn_position_encoding = args->bcfg.attn_position_encoding;
        dcfg.head_hidden = args->bcfg.mlp_hidden;
        Checkpoint resume;
        if (!args->resume.empty()) resume = load_checkpoint(args->resume);
        const SpeakerTrainResult result = train_speaker(
            corpus, args->bcfg, dcfg, args->tcfg, args->resume.empty() ? nullptr : &resume);
        save_checkpoint(args->out, result.checkpoint);
        write_json_file(args->out + ".run.json",
                        {{"command", "train-speaker"},
                         {"seed", args->tcfg.seed},
                         {"config",
                          {{"branch", speaker_config_json(args->bcfg)},
                           {"discriminator", discriminator_config_json(dcfg)},
                           {"train", args->tcfg.to_json()}}},
                         {"corpus", args->corpus},
                         {"corpus_fingerprint", fingerprint_hex(corpus)},
                         {"checkpoint_hash", hash_file_hex(args->out)}});
        std::cout << "trained " << args->tcfg.max_steps << " steps";
        if (!result.gen_curve.empty()) {
            std::cout << ", final generator loss " << result.gen_curve.back();
        }
        std::cout << "\nsaved " << args->out << '\n';
    });
}

void add_train_i2i(CLI::App& app) {
    struct Args {
        std::string corpus, out;
        int clip = 0;
        int pairs = 8;
        int phi_width = 8;
        int phi_depth = 2;
        I2iConfig icfg;
        TrainConfig tcfg;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("train-i2i", "Train the landmark-to-image translator");
    cmd->add_option("--corpus", args->corpus, "Corpus directory")->required();
    cmd->add_option("--out", args->out, "Checkpoint output path")->required();
    cmd->add_option("--clip", args->clip, "Corpus clip the pairs are built from");
    cmd->add_option("--pairs", args->pairs, "Number of training pairs");
    cmd->add_option("--resolution", args->icfg.resolution, "Image resolution (multiple of 64)");
    cmd->add_option("--base-width", args->icfg.base_width, "First-stage channel width");
    cmd->add_option("--lambda-a", args->icfg.lambda_a, "Perceptual term weight");
    cmd->add_option("--phi-width", args->phi_width, "Perceptual extractor width");
    cmd->add_option("--phi-depth", args->phi_depth, "Perceptual extractor depth (0 = pixels)");
    add_train_flags(cmd, args->tcfg);
    cmd->callback([args] {
        const SynthCorpus corpus = load_corpus_checked(args->corpus);
        const std::vector<I2iPair> pairs = build_i2i_pairs(
            corpus, args->clip, args->pairs, args->icfg.resolution, args->tcfg.seed);
        PerceptualExtractor phi = PerceptualExtractor::identity();
        if (args->phi_depth > 0) {
            Rng phi_rng(args->tcfg.seed ^ 0x5bd1e995u);
            phi = PerceptualExtractor::create(args->phi_width, args->phi_depth, phi_rng);
        }
        const I2iTrainResult result = train_i2i(pairs, args->icfg, args->tcfg, phi);
        Checkpoint ckpt = result.checkpoint;
        ckpt.manifest["phi"] = {{"width", args->phi_width}, {"depth", args->phi_depth}};
        save_checkpoint(args->out, ckpt);
        write_json_file(args->out + ".run.json",
                        {{"command", "train-i2i"},
                         {"seed", args->tcfg.seed},
                         {"config",
                          {{"i2i", i2i_config_json(args->icfg)},
                           {"train", args->tcfg.to_json()},
                           {"clip", args->clip},
                           {"pairs", args->pairs},
                           {"phi_width", args->phi_width},
                           {"phi_depth", args->phi_depth}}},
                         {"corpus", args->corpus},
                         {"corpus_fingerprint", fingerprint_hex(corpus)},
                         {"checkpoint_hash", hash_file_hex(args->out)},
                         {"final_mae", result.final_mae}});
        std::cout << "trained " << args->tcfg.max_steps << " steps, pixel MAE "
                  << result.final_mae << "\nsaved " << args->out << '\n';
    });
}

void add_animate(CLI::App& app) {
    struct Args {
        PipelineConfig cfg;
        bool no_speaker = false;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("animate", "Animate a portrait from audio embeddings");
    cmd->add_option("--portrait", args->cfg.portrait_path, "Portrait PNG")->required();
    cmd->add_option("--portrait-landmarks", args->cfg.portrait_landmarks_path,
                    "Portrait landmarks in pixel coordinates")
        ->required();
    cmd->add_option("--content", args->cfg.content_path, "Content embedding file")->required();
    cmd->add_option("--speaker", args->cfg.speaker_path, "Speaker embedding file");
    cmd->add_option("--content-ckpt", args->cfg.content_checkpoint, "Content branch checkpoint")
        ->required();
    cmd->add_option("--speaker-ckpt", args->cfg.speaker_checkpoint, "Speaker branch checkpoint");
    cmd->add_option("--i2i-ckpt", args->cfg.i2i_checkpoint, "Image translation checkpoint");
    cmd->add_option("--out", args->cfg.output_dir, "Output frame directory")->required();
    cmd->add_option("--mode", args->cfg.mode, "Rendering mode")
        ->check(CLI::IsMember({"warp", "translate"}));
    cmd->add_option("--fps", args->cfg.fps, "Output frame rate");
    cmd->add_option("--seed", args->cfg.seed, "Run seed, recorded in the manifest");
    cmd->add_flag("--no-speaker", args->no_speaker,
                  "Content-only ablation: skip the speaker-aware branch");
    CLI::Option* yaw = cmd->add_option("--edit-yaw", args->cfg.pose_edit.delta.yaw,
                                       "Add to every output yaw (degrees)");
    CLI::Option* pitch = cmd->add_option("--edit-pitch", args->cfg.pose_edit.delta.pitch,
                                         "Add to every output pitch (degrees)");
    CLI::Option* roll = cmd->add_option("--edit-roll", args->cfg.pose_edit.delta.roll,
                                        "Add to every output roll (degrees)");
    CLI::Option* dx = cmd->add_option("--edit-dx", args->cfg.pose_edit.delta.translation.x(),
                                      "Add to every output x offset (face widths)");
    CLI::Option* dy = cmd->add_option("--edit-dy", args->cfg.pose_edit.delta.translation.y(),
                                      "Add to every output y offset (face widths)");
    CLI::Option* dz = cmd->add_option("--edit-dz", args->cfg.pose_edit.delta.translation.z(),
                                      "Add to every output z offset (face widths)");
    cmd->callback([args, yaw, pitch, roll, dx, dy, dz] {
        args->cfg.speaker_branch_enabled = !args->no_speaker;
        args->cfg.pose_edit.enabled = yaw->count() || pitch->count() || roll->count() ||
                                      dx->count() || dy->count() || dz->count();
        const AnimateResult result = animate(args->cfg);
        std::cout << "wrote " << result.frame_count << " frames to " << args->cfg.output_dir;
        if (args->cfg.mode == "warp") {
            std::cout << " (" << result.folded_triangles << " folded triangles)";
        }
        std::cout << '\n';
    });
}

void add_eval(CLI::App& app) {
    struct Args {
        std::string corpus, content_ckpt, speaker_ckpt, out;
        EvalOptions opt;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("eval",
                                       "Score the trained model and its ablations on the test split");
    cmd->add_option("--corpus", args->corpus, "Corpus directory")->required();
    cmd->add_option("--content-ckpt", args->content_ckpt, "Content branch checkpoint")
        ->required();
    cmd->add_option("--speaker-ckpt", args->speaker_ckpt, "Speaker branch checkpoint")
        ->required();
    cmd->add_option("--out", args->out, "Report output directory")->required();
    cmd->add_option("--split-seed", args->opt.split_seed,
                    "Clip split seed (0: reuse the content checkpoint's training seed)");
    cmd->add_option("--baseline-seed", args->opt.baseline_seed, "Retrieval baseline seed");
    cmd->callback([args] {
        const SynthCorpus corpus = load_corpus_checked(args->corpus);
        ContentModel content = load_content_model(args->content_ckpt);
        SpeakerModel speaker = load_speaker_model(args->speaker_ckpt);
        const std::uint64_t train_seed = checkpoint_train_seed(args->content_ckpt);
        const EvalResult result = run_eval(corpus, content, speaker, args->opt, train_seed);

        std::error_code ec;
        fs::create_directories(args->out, ec);
        if (ec || !fs::is_directory(args->out)) {
            throw IoError("cannot create output directory " + args->out);
        }
        std::ofstream report((fs::path(args->out) / "report.txt").string());
        if (!report) throw IoError("cannot write evaluation report in " + args->out);
        report << result.format();
        report.close();
        write_json_file((fs::path(args->out) / "metrics.json").string(), result.to_json());
        write_json_file((fs::path(args->out) / "run_manifest.json").string(),
                        {{"command", "eval"},
                         {"corpus", args->corpus},
                         {"corpus_fingerprint", fingerprint_hex(corpus)},
                         {"content_ckpt_hash", hash_file_hex(args->content_ckpt)},
                         {"speaker_ckpt_hash", hash_file_hex(args->speaker_ckpt)},
                         {"split_seed", args->opt.split_seed},
                         {"baseline_seed", args->opt.baseline_seed},
                         {"test_clips", result.test_clips}});
        for (const EvalVariant& v : result.variants) {
            const ClipMetrics& m = v.report.aggregate;
            std::cout << v.name << ": D-LL " << m.lip.d_ll << ", D-VL " << m.lip.d_vl << ", D-A "
                      << m.lip.d_a << ", D-Rot " << m.pose.d_rot << ", D-Pos " << m.pose.d_pos
                      << '\n';
        }
        std::cout << "wrote report to " << args->out << '\n';
    });
}

void add_pose_edit(CLI::App& app) {
    struct Args {
        std::string in, tmpl, out;
        HeadPose delta;
    };
    auto args = std::make_shared<Args>();
    CLI::App* cmd = app.add_subcommand("pose-edit",
                                       "Shift the head pose of a landmark sequence");
    cmd->add_option("--in", args->in, "Input landmark sequence")->required();
    cmd->add_option("--template", args->tmpl, "Rest-face template file")->required();
    cmd->add_option("--out", args->out, "Output landmark sequence")->required();
    cmd->add_option("--yaw", args->delta.yaw, "Yaw shift (degrees)");
    cmd->add_option("--pitch", args->delta.pitch, "Pitch shift (degrees)");
    cmd->add_option("--roll", args->delta.roll, "Roll shift (degrees)");
    cmd->add_option("--dx", args->delta.translation.x(), "X shift (face widths)");
    cmd->add_option("--dy", args->delta.translation.y(), "Y shift (face widths)");
    cmd->add_option("--dz", args->delta.translation.z(), "Z shift (face widths)");
    cmd->callback([args] {
        const LandmarkSequence seq = load_landmarks(args->in);
        const LandmarkFrame tmpl = load_template(args->tmpl);
        const LandmarkSequence edited = edit_head_pose(seq, tmpl, args->delta);
        save_landmarks(args->out, edited);
        write_json_file(args->out + ".run.json",
                        {{"command", "pose-edit"},
                         {"config",
                          {{"in", args->in},
                           {"template", args->tmpl},
                           {"yaw", args->delta.yaw},
                           {"pitch", args->delta.pitch},
                           {"roll", args->delta.roll},
                           {"dx", args->delta.translation.x()},
                           {"dy", args->delta.translation.y()},
                           {"dz", args->delta.translation.z()}}},
                         {"input_hash", hash_file_hex(args->in)},
                         {"output_hash", hash_file_hex(args->out)}});
        std::cout << "wrote " << edited.frame_count() << " frames to " << args->out << '\n';
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speaker-aware talking-head animation toolkit"};
    app.require_subcommand(1);
    app.fallthrough(true);
    app.set_config("--config", "",
                   "Read option defaults from a TOML file (one [subcommand] section per command)");
    add_synth_corpus(app);
    add_train_content(app);
    add_train_speaker(app);
    add_train_i2i(app);
    add_animate(app);
    add_eval(app);
    add_pose_edit(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const tha::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
