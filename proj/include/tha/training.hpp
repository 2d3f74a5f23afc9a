#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tha/checkpoint.hpp"
#include "tha/content_branch.hpp"
#include "tha/embeddings.hpp"
#include "tha/speaker_branch.hpp"

namespace tha {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-6;
    int batch_size = 16;
    int max_steps = 2000;
    std::uint64_t seed = 1;
    double lambda_c = 1.0;
    double lambda_s = 1.0;
    double mu_s = 1e-3;
    int eval_interval = 100;

    void validate() const;
    AdamConfig adam() const;
    nlohmann::json to_json() const;
};

struct SplitIndices {
    std::vector<int> train, val, test;
};

// Deterministic shuffled 60/20/20 clip split. Corpora too small to fill all
// three parts fall back to reusing the training clips, so none is empty.
SplitIndices split_corpus(int n_clips, std::uint64_t seed);

// Training view of one clip: embedding columns, pose-free landmarks against
// the corpus template, and the original posed landmarks.
struct TrainClip {
    int index = 0;
    int speaker = 0;
    Eigen::MatrixXd a_cols;      // D x T
    Eigen::MatrixXd registered;  // 204 x T
    Eigen::MatrixXd posed;       // 204 x T
    Eigen::VectorXd s_raw;       // 256
};
std::vector<TrainClip> prepare_clips(const SynthCorpus& corpus);

struct ContentTrainResult {
    ContentBranchParams best;           // lowest validation loss
    std::vector<double> train_curve;    // per-step mean batch loss
    std::vector<double> val_curve;
    std::vector<long> val_steps;
    double best_val = 0.0;
    Checkpoint checkpoint;
};

ContentTrainResult train_content(const SynthCorpus& corpus, const ContentBranchConfig& bcfg,
                                 const TrainConfig& cfg, const Checkpoint* resume = nullptr);

struct SpeakerTrainResult {
    SpeakerBranchParams generator;
    DiscriminatorParams discriminator;
    std::vector<double> gen_curve;
    std::vector<double> dis_curve;
    Checkpoint checkpoint;
};

// Alternates one generator step and one discriminator step per iteration.
// The generator is conditioned on pose-free ground-truth landmarks and learns
// the residual to the posed originals.
SpeakerTrainResult train_speaker(const SynthCorpus& corpus, const SpeakerBranchConfig& bcfg,
                                 const DiscriminatorConfig& dcfg, const TrainConfig& cfg,
                                 const Checkpoint* resume = nullptr);

enum class RetrievalMode { SameId, RandomId };

// Copies another clip's per-frame pose track onto the test clip's pose-free
// landmarks. SameId draws from the test speaker's other clips; RandomId from
// every other clip.
LandmarkSequence retrieval_baseline(const SynthClip& test_clip, const SynthCorpus& corpus,
                                    RetrievalMode mode, std::uint64_t seed);

// Checkpoint helpers shared by the branch trainers and the CLI.
void store_prefixed(Checkpoint& ckpt, const std::string& prefix,
                    const std::vector<Tensor*>& params);
void load_prefixed(const Checkpoint& ckpt, const std::string& prefix,
                   const std::vector<Tensor*>& params);

// Branch configs travel inside checkpoint manifests so inference can rebuild
// the exact architecture without external configuration.
nlohmann::json content_config_json(const ContentBranchConfig& cfg);
ContentBranchConfig content_config_from_json(const nlohmann::json& j);
nlohmann::json speaker_config_json(const SpeakerBranchConfig& cfg);
SpeakerBranchConfig speaker_config_from_json(const nlohmann::json& j);
nlohmann::json discriminator_config_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

}  // namespace tha
