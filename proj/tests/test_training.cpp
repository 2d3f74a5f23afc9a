#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "tha/errors.hpp"
#include "tha/training.hpp"
#include "test_util.hpp"

using namespace tha;

namespace {

SynthSpec small_spec(int speakers, int clips_each) {
    SynthSpec spec;
    spec.n_speakers = speakers;
    spec.clips_per_speaker = clips_each;
    spec.duration_s = 0.8;
    spec.content_dim = 6;
    spec.tau_prime = 16;
    return spec;
}

ContentBranchConfig small_content_config() {
    ContentBranchConfig cfg;
    cfg.content_dim = 6;
    cfg.lstm_hidden = 10;
    cfg.lstm_layers = 1;
    cfg.mlp_hidden = {16};
    cfg.window.tau = 3;
    cfg.window.tau_prime = 16;
    return cfg;
}

SpeakerBranchConfig small_speaker_config() {
    SpeakerBranchConfig cfg;
    cfg.content_dim = 6;
    cfg.lstm_hidden = 8;
    cfg.lstm_layers = 1;
    cfg.attn_d_model = 8;
    cfg.attn_heads = 2;
    cfg.attn_layers = 1;
    cfg.mlp_hidden = {12};
    cfg.window.tau = 3;
    cfg.window.tau_prime = 16;
    return cfg;
}

DiscriminatorConfig small_discriminator_config() {
    DiscriminatorConfig cfg;
    cfg.code_dim = 8;
    cfg.attn_d_model = 8;
    cfg.attn_heads = 2;
    cfg.attn_layers = 1;
    cfg.head_hidden = {12};
    return cfg;
}

TrainConfig quick_train(int steps, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.learning_rate = 2e-3;
    cfg.batch_size = 4;
    cfg.max_steps = steps;
    cfg.seed = seed;
    cfg.eval_interval = 5;
    return cfg;
}

Eigen::VectorXd pose_track_yaw(const LandmarkSequence& seq, const LandmarkFrame& tmpl) {
    Eigen::VectorXd yaw(seq.frame_count());
    for (int t = 0; t < seq.frame_count(); ++t) {
        yaw(t) = decompose_head_pose(seq.frames[static_cast<std::size_t>(t)], tmpl).yaw;
    }
    return yaw;
}

}  // namespace

TEST_CASE("clip splits are deterministic, disjoint and never empty") {
    const SplitIndices s = split_corpus(10, 7);
    CHECK(s.train.size() == 6);
    CHECK(s.val.size() == 2);
    CHECK(s.test.size() == 2);
    std::set<int> all;
    for (int i : s.train) all.insert(i);
    for (int i : s.val) all.insert(i);
    for (int i : s.test) all.insert(i);
    CHECK(all.size() == 10);

    const SplitIndices again = split_corpus(10, 7);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);
    CHECK(again.test == s.test);

    const SplitIndices one = split_corpus(1, 7);
    CHECK(one.train == std::vector<int>{0});
    CHECK(one.val == one.train);
    CHECK(one.test == one.val);

    const SplitIndices five = split_corpus(5, 3);
    CHECK(five.train.size() == 3);
    CHECK(five.val.size() == 1);
    CHECK(five.test.size() == 1);

    CHECK_THROWS_AS(split_corpus(0, 1), ValidationError);
}

TEST_CASE("prepared clips are registered against the template") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(2, 1), 404);
    const std::vector<TrainClip> clips = prepare_clips(corpus);
    REQUIRE(clips.size() == 2);
    for (const TrainClip& clip : clips) {
        CHECK(clip.a_cols.rows() == 6);
        CHECK(clip.a_cols.cols() == clip.posed.cols());
        CHECK(clip.registered.cols() == clip.posed.cols());
        const LandmarkFrame f =
            LandmarkFrame::from_flat(clip.registered.col(clip.registered.cols() / 2));
        const HeadPose pose = decompose_head_pose(f, corpus.template_face);
        CHECK(std::abs(pose.yaw) < 1e-6);
        CHECK(std::abs(pose.pitch) < 1e-6);
        CHECK(std::abs(pose.roll) < 1e-6);
    }
}

TEST_CASE("content training lowers the loss and is reproducible") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(1, 2), 405);
    const ContentBranchConfig bcfg = small_content_config();

    const ContentTrainResult a = train_content(corpus, bcfg, quick_train(40, 9));
    REQUIRE(a.train_curve.size() == 40);
    CHECK(a.train_curve.back() < a.train_curve.front());
    CHECK(a.best_val <= a.val_curve.front());

    const ContentTrainResult b = train_content(corpus, bcfg, quick_train(40, 9));
    CHECK(a.train_curve == b.train_curve);
    CHECK(a.val_curve == b.val_curve);

    const ContentTrainResult c = train_content(corpus, bcfg, quick_train(40, 10));
    CHECK(a.train_curve != c.train_curve);
}

TEST_CASE("zero training steps keep the initialization") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(1, 1), 406);
    const ContentBranchConfig bcfg = small_content_config();
    const ContentTrainResult zero = train_content(corpus, bcfg, quick_train(0, 9));
    CHECK(zero.train_curve.empty());
    // Untrained: best, resume state and a fresh run's starting point all agree.
    for (const auto& entry : zero.checkpoint.arrays) {
        if (entry.first.rfind("resume/", 0) == 0) {
            const std::string canonical = entry.first.substr(7);
            CHECK((entry.second - zero.checkpoint.get(canonical)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("checkpoint resume continues bit-identically") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(1, 2), 407);
    const ContentBranchConfig bcfg = small_content_config();

    const ContentTrainResult full = train_content(corpus, bcfg, quick_train(30, 12));
    const ContentTrainResult half = train_content(corpus, bcfg, quick_train(15, 12));
    const ContentTrainResult resumed =
        train_content(corpus, bcfg, quick_train(30, 12), &half.checkpoint);

    REQUIRE(resumed.train_curve.size() == 15);
    for (int i = 0; i < 15; ++i) {
        CHECK(resumed.train_curve[static_cast<std::size_t>(i)] ==
              full.train_curve[static_cast<std::size_t>(15 + i)]);
    }
    for (const Tensor* t :
         const_cast<ContentTrainResult&>(full).best.params()) {
        CHECK((resumed.checkpoint.get("resume/" + t->name) -
               full.checkpoint.get("resume/" + t->name))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }

    const SynthCorpus other = synthesize_corpus(small_spec(1, 2), 408);
    CHECK_THROWS_AS(train_content(other, bcfg, quick_train(30, 12), &half.checkpoint),
                    TrainingError);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(1, 1), 409);
    TrainConfig cfg = quick_train(5, 9);
    cfg.learning_rate = 1e160;  // one update overflows the squared-error loss
    CHECK_THROWS_AS(train_content(corpus, small_content_config(), cfg), TrainingError);
}

TEST_CASE("adversarial training runs, alternates and is reproducible") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(2, 1), 410);
    const SpeakerBranchConfig bcfg = small_speaker_config();
    const DiscriminatorConfig dcfg = small_discriminator_config();

    const SpeakerTrainResult a = train_speaker(corpus, bcfg, dcfg, quick_train(6, 15));
    REQUIRE(a.gen_curve.size() == 6);
    REQUIRE(a.dis_curve.size() == 6);
    for (double v : a.gen_curve) CHECK(std::isfinite(v));
    for (double v : a.dis_curve) CHECK(std::isfinite(v));

    const SpeakerTrainResult b = train_speaker(corpus, bcfg, dcfg, quick_train(6, 15));
    CHECK(a.gen_curve == b.gen_curve);
    CHECK(a.dis_curve == b.dis_curve);

    DiscriminatorConfig bad = dcfg;
    bad.code_dim = 9;
    CHECK_THROWS_AS(train_speaker(corpus, bcfg, bad, quick_train(2, 15)), ConfigError);
}

TEST_CASE("adversarial resume continues bit-identically") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(2, 1), 411);
    const SpeakerBranchConfig bcfg = small_speaker_config();
    const DiscriminatorConfig dcfg = small_discriminator_config();

    const SpeakerTrainResult full = train_speaker(corpus, bcfg, dcfg, quick_train(8, 21));
    const SpeakerTrainResult half = train_speaker(corpus, bcfg, dcfg, quick_train(4, 21));
    const SpeakerTrainResult resumed =
        train_speaker(corpus, bcfg, dcfg, quick_train(8, 21), &half.checkpoint);

    REQUIRE(resumed.gen_curve.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(resumed.gen_curve[static_cast<std::size_t>(i)] ==
              full.gen_curve[static_cast<std::size_t>(4 + i)]);
        CHECK(resumed.dis_curve[static_cast<std::size_t>(i)] ==
              full.dis_curve[static_cast<std::size_t>(4 + i)]);
    }
}

TEST_CASE("retrieval baseline copies a pose track onto registered landmarks") {
    const SynthCorpus corpus = synthesize_corpus(small_spec(2, 2), 412);
    REQUIRE(corpus.clips.size() == 4);
    const SynthClip& test_clip = corpus.clips[0];

    SUBCASE("forced choice reproduces the only candidate's pose track") {
        SynthCorpus two;
        two.template_face = corpus.template_face;
        two.styles = corpus.styles;
        two.clips = {corpus.clips[0], corpus.clips[2]};
        REQUIRE(two.clips[0].speaker_index == two.clips[1].speaker_index);

        const LandmarkSequence out =
            retrieval_baseline(two.clips[0], two, RetrievalMode::SameId, 5);
        REQUIRE(out.frame_count() == two.clips[0].landmarks.frame_count());

        const Eigen::VectorXd got = pose_track_yaw(out, two.template_face);
        const Eigen::VectorXd want = pose_track_yaw(two.clips[1].landmarks, two.template_face);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-6);
    }

    SUBCASE("same-identity mode never samples the other speaker") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            const LandmarkSequence out =
                retrieval_baseline(test_clip, corpus, RetrievalMode::SameId, seed);
            const Eigen::VectorXd got = pose_track_yaw(out, corpus.template_face);
            double best_same = std::numeric_limits<double>::infinity();
            double best_other = std::numeric_limits<double>::infinity();
            for (const SynthClip& clip : corpus.clips) {
                if (clip.clip_id == test_clip.clip_id) continue;
                const Eigen::VectorXd cand = pose_track_yaw(clip.landmarks, corpus.template_face);
                const double d = (cand - got).cwiseAbs().maxCoeff();
                if (clip.speaker_index == test_clip.speaker_index) {
                    best_same = std::min(best_same, d);
                } else {
                    best_other = std::min(best_other, d);
                }
            }
            CHECK(best_same < 1e-6);
            CHECK(best_other > 1e-3);
        }
    }

    SUBCASE("without an eligible clip the baseline reports unavailability") {
        SynthCorpus lone;
        lone.template_face = corpus.template_face;
        lone.styles = corpus.styles;
        lone.clips = {corpus.clips[0]};
        CHECK_THROWS_AS(retrieval_baseline(lone.clips[0], lone, RetrievalMode::SameId, 1),
                        BaselineError);
        CHECK_THROWS_AS(retrieval_baseline(lone.clips[0], lone, RetrievalMode::RandomId, 1),
                        BaselineError);
    }

    SUBCASE("baseline output is deterministic for a fixed seed") {
        const LandmarkSequence x =
            retrieval_baseline(test_clip, corpus, RetrievalMode::RandomId, 77);
        const LandmarkSequence y =
            retrieval_baseline(test_clip, corpus, RetrievalMode::RandomId, 77);
        CHECK(test::max_abs_diff(x, y) == 0.0);
    }
}
