#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bertlab/model.hpp"

namespace bertlab {

// ---------------------------------------------------------------------------
// Answer normalization and span metrics
// ---------------------------------------------------------------------------

/// Lowercase, strip punctuation and articles (a/an/the), collapse whitespace.
std::string normalize_answer(std::string_view text);
std::vector<std::string> normalize_answer_tokens(std::string_view text);

/// 1 iff the normalized prediction equals any normalized gold, or both sides
/// are impossible.
int exact_match(const std::string& pred_text, bool pred_impossible,
                std::span<const std::string> golds, bool gold_impossible);

/// Harmonic mean of token-bag precision and recall.
double f1_overlap(std::span<const std::string> pred_tokens,
                  std::span<const std::string> gold_tokens);

/// Max F1 over golds; both impossible -> 1, one-sided impossible -> 0.
double f1_score(const std::string& pred_text, bool pred_impossible,
                std::span<const std::string> golds, bool gold_impossible);

struct SpanPrediction {
    int64_t start = 0, end = 0;
    bool impossible = false;
    double score = 0.0;
};

/// Argmax of start+end logits over in-context pairs with start <= end; the
/// [CLS]-position score wins (impossible) when it exceeds the best span score
/// plus the threshold.
SpanPrediction decode_span(std::span<const double> start_logits,
                           std::span<const double> end_logits, int64_t context_begin,
                           int64_t context_end, double impossible_threshold = 0.0);

/// Predicted answer text for a decoded span ("" for impossible).
std::string span_to_text(const SpanPrediction& pred, const FinetuneExample& ex);

struct QaMetrics {
    double em = 0.0;
    double f1 = 0.0;
    int64_t count = 0;
};

/// Greedy decode + EM/F1 over a QA example set (eval mode, no dropout).
QaMetrics evaluate_qa(const FinetuneModel& model, std::span<const FinetuneExample> examples,
                      double impossible_threshold = 0.0);

/// Classification accuracy over an NLI example set.
double evaluate_nli(const FinetuneModel& model, std::span<const FinetuneExample> examples);

// ---------------------------------------------------------------------------
// Probing
// ---------------------------------------------------------------------------

struct ProbeConfig {
    int64_t hidden1 = 128;
    int64_t hidden2 = 128;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int64_t batch = 32;
    int64_t epochs = 20;
    double val_fraction = 0.2;
    uint64_t seed = 1;
};

struct ProbeDataset {
    std::string name;
    int64_t num_classes = 0;
    std::vector<std::vector<int64_t>> token_ids; // raw sentence token ids (no specials)
    std::vector<int64_t> labels;
};

struct ProbeOptions {
    int64_t length_classes = 3;
    int64_t word_content_classes = 4;
    int64_t min_per_class = 5;
    int64_t max_sentences = 4096;
};

/// Labeled datasets for sentence_length, word_content, and
/// bigram_shift_detection, generated from a tokenized corpus.
std::vector<ProbeDataset> synthetic_probe_datasets(const std::vector<Document>& corpus,
                                                   const Vocab& vocab, Rng& rng,
                                                   const ProbeOptions& opts = {});

struct ProbeResult {
    double best_val_accuracy = 0.0;
    int64_t train_count = 0;
    int64_t val_count = 0;
};

/// Trains a 2-hidden-layer MLP on frozen [CLS]-at-NSP-level embeddings and
/// reports best validation accuracy. Hard-fails if any encoder or head
/// parameter changes.
ProbeResult probe_run(const PretrainModel& model, const ProbeDataset& dataset,
                      const ProbeConfig& cfg);

} // namespace bertlab
