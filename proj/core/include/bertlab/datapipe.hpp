#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bertlab/error.hpp"
#include "bertlab/rng.hpp"

namespace bertlab {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct Vocab {
    static constexpr int64_t kPad = 0;
    static constexpr int64_t kUnk = 1;
    static constexpr int64_t kCls = 2;
    static constexpr int64_t kSep = 3;
    static constexpr int64_t kMask = 4;
    static constexpr int64_t kNumSpecial = 5;

    std::vector<std::string> tokens; // index == id; specials occupy [0,5)
    std::unordered_map<std::string, int64_t> index;

    int64_t size() const { return static_cast<int64_t>(tokens.size()); }
    int64_t regular_count() const { return size() - kNumSpecial; }
    int64_t id_of(const std::string& token) const; // kUnk when absent
    const std::string& token_of(int64_t id) const;
    bool contains(const std::string& token) const { return index.count(token) > 0; }
    uint64_t checksum() const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);
};

/// Offsets index into the original string (byte positions).
struct TokenSpan {
    std::string text;
    size_t begin = 0;
    size_t end = 0;
};

/// Lowercasing whitespace+punctuation tokenizer; punctuation marks become
/// their own tokens.
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

struct Document {
    std::vector<std::vector<std::string>> sentences; // tokenized
};

/// Blank-line-separated paragraphs, one sentence per line.
std::vector<Document> parse_corpus(std::string_view text);
std::vector<Document> read_corpus_file(const std::string& path);

/// Frequency-descending, then lexicographic; tokens below min_freq fall to
/// [UNK]. Errors on an empty corpus.
Vocab build_vocab(const std::vector<Document>& corpus, int64_t min_freq);

// ---------------------------------------------------------------------------
// NSP pair construction
// ---------------------------------------------------------------------------

struct NspPair {
    std::vector<std::string> sent_a, sent_b;
    bool is_next = false;
    // Source coordinates, so adjacency is verifiable.
    size_t doc_a = 0, sent_a_idx = 0;
};

struct NspPairSet {
    std::vector<NspPair> pairs;
    // Set when not_next pairs could not be drawn (single usable document).
    bool imbalance = false;
};

/// 50% consecutive pairs (is_next), 50% with sent_b drawn from a different
/// document. Documents with fewer than two sentences contribute only as
/// random-B sources.
NspPairSet make_nsp_pairs(const std::vector<Document>& docs, Rng& rng);

// ---------------------------------------------------------------------------
// Pre-training examples
// ---------------------------------------------------------------------------

struct PretrainExample {
    std::vector<int64_t> token_ids;
    std::vector<int64_t> segment_ids;     // 0 through the first [SEP], then 1, 0 on padding
    std::vector<uint8_t> attention_mask;  // 1 real, 0 pad
    std::vector<int64_t> mlm_labels;      // original id at masked positions, -1 elsewhere
    int64_t nsp_label = 0;                // 0 = is_next, 1 = not_next
    std::vector<int64_t> bigram_labels;   // 0 in place, 1 displaced, -1 not scored
    int64_t max_len = 0;
};

constexpr int64_t kIgnoreLabel = -1;
constexpr int64_t kNspIsNext = 0;
constexpr int64_t kNspNotNext = 1;
constexpr int64_t kBigramInPlace = 0;
constexpr int64_t kBigramDisplaced = 1;

/// [CLS] sentA [SEP] sentB [SEP], truncating from the longer sentence first,
/// padded to max_len. No masking or corruption yet.
PretrainExample assemble_example(const NspPair& pair, const Vocab& vocab, int64_t max_len);

/// Positions holding sentence content (attention_mask 1 and token not
/// [CLS]/[SEP]/[PAD]). Stable across masking since replacements never
/// introduce those ids.
std::vector<int64_t> content_positions(const PretrainExample& ex);

struct MaskingConfig {
    double select_prob = 0.15;
    double mask_frac = 0.80;   // -> [MASK]
    double random_frac = 0.10; // -> random regular token; remainder unchanged
};

/// BERT masking: Bernoulli(select_prob) per eligible token with a minimum of
/// one selection; selected tokens go to [MASK]/random/unchanged per the
/// 80/10/10 split. Labels store the original ids.
PretrainExample apply_masking(PretrainExample ex, const Vocab& vocab, Rng& rng,
                              const MaskingConfig& cfg = {});

/// Left-to-right scan over non-overlapping adjacent content pairs; each
/// candidate swaps with probability swap_prob and both members get the
/// displaced label. Pairs never straddle [SEP] because special positions are
/// not content.
PretrainExample apply_bigram_shift(PretrainExample ex, Rng& rng, double swap_prob = 0.15);

/// 128 for the first ceil(0.9 * total) steps, 384 for the rest.
int64_t length_schedule(int64_t step, int64_t total_steps);

// ---------------------------------------------------------------------------
// Fine-tuning examples
// ---------------------------------------------------------------------------

enum class FtTask { qa, nli };
const char* to_string(FtTask t);
FtTask ft_task_from_string(const std::string& s);

struct QaRecord {
    std::string question;
    std::string context;
    std::string answer_text; // empty when impossible
    int64_t answer_start = -1; // char offset into context
    bool impossible = false;
    std::vector<std::string> alt_answers; // extra gold strings for eval
};

struct NliRecord {
    std::string premise, hypothesis;
    std::string label; // entailment | contradiction | neutral
};

struct FinetuneExample {
    std::vector<int64_t> token_ids;
    std::vector<int64_t> segment_ids;
    std::vector<uint8_t> attention_mask;
    // QA
    int64_t span_start = 0, span_end = 0; // token indices; (0,0) = [CLS] = impossible
    bool impossible = false;
    int64_t context_begin = 0, context_end = 0; // [begin,end) token range of the context
    std::vector<std::string> gold_answers;      // raw strings for EM/F1
    std::vector<std::string> context_tokens;    // for decoding predicted span text
    // NLI
    int64_t label = -1;
};

constexpr int64_t kNliEntailment = 0;
constexpr int64_t kNliContradiction = 1;
constexpr int64_t kNliNeutral = 2;
int64_t nli_label_from_string(const std::string& s);

struct FinetuneBuildResult {
    std::vector<FinetuneExample> examples;
    int64_t skipped = 0; // answer span unrecoverable after tokenization
};

FinetuneBuildResult build_qa_examples(std::span<const QaRecord> records, const Vocab& vocab,
                                      int64_t max_len);
FinetuneBuildResult build_nli_examples(std::span<const NliRecord> records, const Vocab& vocab,
                                       int64_t max_len);

std::vector<QaRecord> read_qa_records(const std::string& path);
std::vector<NliRecord> read_nli_records(const std::string& path);

// ---------------------------------------------------------------------------
// Example file I/O (newline-delimited JSON + sidecar manifest)
// ---------------------------------------------------------------------------

struct DataManifest {
    int64_t format_version = 1;
    std::string config_hash;
    uint64_t seed = 0;
    uint64_t vocab_checksum = 0;
    int64_t short_count = 0;
    int64_t long_count = 0;
    int64_t short_len = 0;
    int64_t long_len = 0;
};

void write_pretrain_examples(const std::string& path, std::span<const PretrainExample> examples);
std::vector<PretrainExample> read_pretrain_examples(const std::string& path);
void write_data_manifest(const std::string& path, const DataManifest& m);
DataManifest read_data_manifest(const std::string& path);

} // namespace bertlab
