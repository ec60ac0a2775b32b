#include "bertlab/datapipe.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bertlab {

using ojson = nlohmann::ordered_json;

namespace {

const std::array<std::string, Vocab::kNumSpecial> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool is_word_char(unsigned char c) {
    // Bytes >= 0x80 (UTF-8 continuation/lead) are treated as letters.
    return std::isalnum(c) || c == '_' || c >= 0x80;
}

} // namespace

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

int64_t Vocab::id_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int64_t id) const {
    if (id < 0 || id >= size()) {
        throw DataError("vocab: id " + std::to_string(id) + " out of range [0," +
                        std::to_string(size()) + ")");
    }
    return tokens[static_cast<size_t>(id)];
}

uint64_t Vocab::checksum() const {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const std::string& t : tokens) {
        h = fnv1a64(t.data(), t.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return h;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file: " + path);
    for (const std::string& t : tokens) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocab file: " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) v.tokens.push_back(line);
    if (v.size() < kNumSpecial) {
        throw IoError("vocab file too short: " + path);
    }
    for (int64_t i = 0; i < kNumSpecial; ++i) {
        if (v.tokens[static_cast<size_t>(i)] != kSpecialTokens[static_cast<size_t>(i)]) {
            throw IoError("vocab file missing special token " +
                          kSpecialTokens[static_cast<size_t>(i)] + " at id " + std::to_string(i));
        }
    }
    for (int64_t i = 0; i < v.size(); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
    return v;
}

// ---------------------------------------------------------------------------
// Tokenization and corpus parsing
// ---------------------------------------------------------------------------

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
    std::vector<TokenSpan> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            size_t j = i;
            while (j < n && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            std::string tok(text.substr(i, j - i));
            for (char& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            out.push_back(TokenSpan{std::move(tok), i, j});
            i = j;
        } else {
            // Punctuation: one token per character.
            out.push_back(TokenSpan{std::string(1, text[i]), i, i + 1});
            ++i;
        }
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto& ts : tokenize_with_offsets(text)) out.push_back(std::move(ts.text));
    return out;
}

std::vector<Document> parse_corpus(std::string_view text) {
    std::vector<Document> docs;
    Document current;
    size_t start = 0;
    while (start <= text.size()) {
        size_t eol = text.find('\n', start);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(start, eol - start);
        bool blank = true;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                blank = false;
                break;
            }
        }
        if (blank) {
            if (!current.sentences.empty()) {
                docs.push_back(std::move(current));
                current = Document{};
            }
        } else {
            auto toks = tokenize(line);
            if (!toks.empty()) current.sentences.push_back(std::move(toks));
        }
        if (eol == text.size()) break;
        start = eol + 1;
    }
    if (!current.sentences.empty()) docs.push_back(std::move(current));
    return docs;
}

std::vector<Document> read_corpus_file(const std::string& path) {
    return parse_corpus(read_file(path));
}

Vocab build_vocab(const std::vector<Document>& corpus, int64_t min_freq) {
    std::map<std::string, int64_t> freq;
    for (const Document& d : corpus) {
        for (const auto& sent : d.sentences) {
            for (const std::string& t : sent) ++freq[t];
        }
    }
    if (freq.empty()) throw DataError("build_vocab: empty corpus");

    std::vector<std::pair<std::string, int64_t>> entries(freq.begin(), freq.end());
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v;
    for (const std::string& s : kSpecialTokens) v.tokens.push_back(s);
    for (const auto& [tok, count] : entries) {
        if (count < min_freq) continue;
        v.tokens.push_back(tok);
    }
    for (int64_t i = 0; i < v.size(); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
    return v;
}

// ---------------------------------------------------------------------------
// NSP pairs
// ---------------------------------------------------------------------------

NspPairSet make_nsp_pairs(const std::vector<Document>& docs, Rng& rng) {
    NspPairSet out;
    std::vector<size_t> usable; // docs with at least one sentence, as random-B sources
    for (size_t d = 0; d < docs.size(); ++d) {
        if (!docs[d].sentences.empty()) usable.push_back(d);
    }
    for (size_t d = 0; d < docs.size(); ++d) {
        const auto& sents = docs[d].sentences;
        if (sents.size() < 2) continue;
        for (size_t i = 0; i + 1 < sents.size(); ++i) {
            NspPair pair;
            pair.sent_a = sents[i];
            pair.doc_a = d;
            pair.sent_a_idx = i;
            const bool want_next = rng.next_bernoulli(0.5);
            bool other_exists = usable.size() > 1;
            if (want_next || !other_exists) {
                pair.sent_b = sents[i + 1];
                pair.is_next = true;
                if (!want_next && !other_exists) out.imbalance = true;
            } else {
                std::vector<size_t> others;
                others.reserve(usable.size() - 1);
                for (size_t u : usable) {
                    if (u != d) others.push_back(u);
                }
                const auto& other = docs[others[rng.next_below(others.size())]].sentences;
                pair.sent_b = other[rng.next_below(other.size())];
                pair.is_next = false;
            }
            out.pairs.push_back(std::move(pair));
        }
    }
    if (out.pairs.empty()) {
        throw DataError("make_nsp_pairs: no document has two or more sentences");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Example assembly, masking, bigram shift
// ---------------------------------------------------------------------------

PretrainExample assemble_example(const NspPair& pair, const Vocab& vocab, int64_t max_len) {
    if (max_len < 8) throw ConfigError("assemble_example: max_len must be at least 8");
    std::vector<std::string> a = pair.sent_a;
    std::vector<std::string> b = pair.sent_b;
    const size_t budget = static_cast<size_t>(max_len) - 3; // [CLS] + 2x[SEP]
    while (a.size() + b.size() > budget) {
        if (a.size() >= b.size()) {
            a.pop_back();
        } else {
            b.pop_back();
        }
    }
    if (a.empty() || b.empty()) {
        throw DataError("assemble_example: a sentence was truncated away entirely");
    }

    PretrainExample ex;
    ex.max_len = max_len;
    ex.nsp_label = pair.is_next ? kNspIsNext : kNspNotNext;
    ex.token_ids.reserve(static_cast<size_t>(max_len));

    ex.token_ids.push_back(Vocab::kCls);
    ex.segment_ids.push_back(0);
    for (const std::string& t : a) {
        ex.token_ids.push_back(vocab.id_of(t));
        ex.segment_ids.push_back(0);
    }
    ex.token_ids.push_back(Vocab::kSep);
    ex.segment_ids.push_back(0);
    for (const std::string& t : b) {
        ex.token_ids.push_back(vocab.id_of(t));
        ex.segment_ids.push_back(1);
    }
    ex.token_ids.push_back(Vocab::kSep);
    ex.segment_ids.push_back(1);

    const size_t real = ex.token_ids.size();
    ex.attention_mask.assign(real, 1);
    ex.token_ids.resize(static_cast<size_t>(max_len), Vocab::kPad);
    ex.segment_ids.resize(static_cast<size_t>(max_len), 0);
    ex.attention_mask.resize(static_cast<size_t>(max_len), 0);
    ex.mlm_labels.assign(static_cast<size_t>(max_len), kIgnoreLabel);
    ex.bigram_labels.assign(static_cast<size_t>(max_len), kIgnoreLabel);
    for (int64_t pos : content_positions(ex)) {
        ex.bigram_labels[static_cast<size_t>(pos)] = kBigramInPlace;
    }
    return ex;
}

std::vector<int64_t> content_positions(const PretrainExample& ex) {
    std::vector<int64_t> out;
    for (size_t i = 0; i < ex.token_ids.size(); ++i) {
        if (ex.attention_mask[i] == 0) continue;
        const int64_t id = ex.token_ids[i];
        if (id == Vocab::kPad || id == Vocab::kCls || id == Vocab::kSep) continue;
        out.push_back(static_cast<int64_t>(i));
    }
    return out;
}

PretrainExample apply_masking(PretrainExample ex, const Vocab& vocab, Rng& rng,
                              const MaskingConfig& cfg) {
    const std::vector<int64_t> eligible = content_positions(ex);
    if (eligible.empty()) return ex;

    std::vector<int64_t> selected;
    for (int64_t pos : eligible) {
        if (rng.next_bernoulli(cfg.select_prob)) selected.push_back(pos);
    }
    if (selected.empty()) {
        selected.push_back(eligible[rng.next_below(eligible.size())]);
    }
    for (int64_t pos : selected) {
        const size_t p = static_cast<size_t>(pos);
        ex.mlm_labels[p] = ex.token_ids[p];
        const double u = rng.next_double();
        if (u < cfg.mask_frac) {
            ex.token_ids[p] = Vocab::kMask;
        } else if (u < cfg.mask_frac + cfg.random_frac) {
            if (vocab.regular_count() > 0) {
                ex.token_ids[p] =
                    Vocab::kNumSpecial + static_cast<int64_t>(rng.next_below(
                                             static_cast<uint64_t>(vocab.regular_count())));
            }
        } // else: keep the original token
    }
    return ex;
}

PretrainExample apply_bigram_shift(PretrainExample ex, Rng& rng, double swap_prob) {
    const int64_t n = static_cast<int64_t>(ex.token_ids.size());
    auto is_content = [&](int64_t i) {
        if (i < 0 || i >= n) return false;
        if (ex.attention_mask[static_cast<size_t>(i)] == 0) return false;
        const int64_t id = ex.token_ids[static_cast<size_t>(i)];
        return id != Vocab::kPad && id != Vocab::kCls && id != Vocab::kSep;
    };
    int64_t i = 0;
    while (i + 1 < n) {
        if (is_content(i) && is_content(i + 1)) {
            if (rng.next_bernoulli(swap_prob)) {
                std::swap(ex.token_ids[static_cast<size_t>(i)],
                          ex.token_ids[static_cast<size_t>(i + 1)]);
                ex.bigram_labels[static_cast<size_t>(i)] = kBigramDisplaced;
                ex.bigram_labels[static_cast<size_t>(i + 1)] = kBigramDisplaced;
            }
            i += 2; // candidates are non-overlapping whether or not they swap
        } else {
            i += 1;
        }
    }
    return ex;
}

int64_t length_schedule(int64_t step, int64_t total_steps) {
    if (total_steps <= 0 || step < 0 || step >= total_steps) {
        throw ConfigError("length_schedule: step " + std::to_string(step) +
                          " outside [0," + std::to_string(total_steps) + ")");
    }
    const int64_t short_steps = (9 * total_steps + 9) / 10; // ceil(0.9 * total)
    return step < short_steps ? 128 : 384;
}

// ---------------------------------------------------------------------------
// Fine-tuning examples
// ---------------------------------------------------------------------------

const char* to_string(FtTask t) {
    return t == FtTask::qa ? "qa" : "nli";
}

FtTask ft_task_from_string(const std::string& s) {
    if (s == "qa") return FtTask::qa;
    if (s == "nli") return FtTask::nli;
    throw ConfigError("unknown fine-tune task '" + s + "' (expected qa|nli)");
}

int64_t nli_label_from_string(const std::string& s) {
    if (s == "entailment") return kNliEntailment;
    if (s == "contradiction") return kNliContradiction;
    if (s == "neutral") return kNliNeutral;
    throw DataError("unknown NLI label '" + s + "'");
}

namespace {

// Shared scaffold: [CLS] first [SEP] second [SEP], second segment truncated
// from the tail when over budget.
struct PairLayout {
    FinetuneExample ex;
    int64_t second_begin = 0, second_end = 0;
    int64_t second_kept = 0; // tokens of `second` that survived truncation
};

PairLayout layout_pair(const std::vector<std::string>& first,
                       const std::vector<std::string>& second, const Vocab& vocab,
                       int64_t max_len) {
    PairLayout out;
    std::vector<std::string> a = first;
    // The first segment may at most fill half the budget, so the second
    // segment always keeps some room.
    const size_t budget = static_cast<size_t>(max_len) - 3;
    if (a.size() > budget / 2) a.resize(budget / 2);
    size_t b_keep = std::min(second.size(), budget - a.size());

    FinetuneExample& ex = out.ex;
    ex.token_ids.push_back(Vocab::kCls);
    ex.segment_ids.push_back(0);
    for (const std::string& t : a) {
        ex.token_ids.push_back(vocab.id_of(t));
        ex.segment_ids.push_back(0);
    }
    ex.token_ids.push_back(Vocab::kSep);
    ex.segment_ids.push_back(0);
    out.second_begin = static_cast<int64_t>(ex.token_ids.size());
    for (size_t i = 0; i < b_keep; ++i) {
        ex.token_ids.push_back(vocab.id_of(second[i]));
        ex.segment_ids.push_back(1);
    }
    out.second_end = static_cast<int64_t>(ex.token_ids.size());
    out.second_kept = static_cast<int64_t>(b_keep);
    ex.token_ids.push_back(Vocab::kSep);
    ex.segment_ids.push_back(1);

    const size_t real = ex.token_ids.size();
    ex.attention_mask.assign(real, 1);
    ex.token_ids.resize(static_cast<size_t>(max_len), Vocab::kPad);
    ex.segment_ids.resize(static_cast<size_t>(max_len), 0);
    ex.attention_mask.resize(static_cast<size_t>(max_len), 0);
    return out;
}

} // namespace

FinetuneBuildResult build_qa_examples(std::span<const QaRecord> records, const Vocab& vocab,
                                      int64_t max_len) {
    if (max_len < 8) throw ConfigError("build_qa_examples: max_len must be at least 8");
    FinetuneBuildResult res;
    for (const QaRecord& rec : records) {
        auto q_tokens = tokenize(rec.question);
        auto c_spans = tokenize_with_offsets(rec.context);
        std::vector<std::string> c_tokens;
        c_tokens.reserve(c_spans.size());
        for (const auto& ts : c_spans) c_tokens.push_back(ts.text);

        PairLayout layout = layout_pair(q_tokens, c_tokens, vocab, max_len);
        FinetuneExample ex = std::move(layout.ex);
        ex.context_begin = layout.second_begin;
        ex.context_end = layout.second_end;
        ex.context_tokens.assign(c_tokens.begin(),
                                 c_tokens.begin() + layout.second_kept);
        ex.impossible = rec.impossible;
        ex.gold_answers.clear();
        if (!rec.impossible) {
            ex.gold_answers.push_back(rec.answer_text);
            for (const auto& alt : rec.alt_answers) ex.gold_answers.push_back(alt);
        }

        if (rec.impossible) {
            ex.span_start = 0;
            ex.span_end = 0;
            res.examples.push_back(std::move(ex));
            continue;
        }

        // Map the char span onto context tokens.
        const size_t ans_begin = static_cast<size_t>(rec.answer_start);
        const size_t ans_end = ans_begin + rec.answer_text.size();
        int64_t tok_start = -1, tok_end = -1;
        for (size_t t = 0; t < c_spans.size(); ++t) {
            if (tok_start < 0 && c_spans[t].end > ans_begin) tok_start = static_cast<int64_t>(t);
            if (c_spans[t].begin < ans_end) tok_end = static_cast<int64_t>(t);
        }
        if (tok_start < 0 || tok_end < tok_start || tok_end >= layout.second_kept) {
            ++res.skipped; // unrecoverable after tokenization/truncation
            continue;
        }
        ex.span_start = layout.second_begin + tok_start;
        ex.span_end = layout.second_begin + tok_end;
        res.examples.push_back(std::move(ex));
    }
    return res;
}

FinetuneBuildResult build_nli_examples(std::span<const NliRecord> records, const Vocab& vocab,
                                       int64_t max_len) {
    if (max_len < 8) throw ConfigError("build_nli_examples: max_len must be at least 8");
    FinetuneBuildResult res;
    for (const NliRecord& rec : records) {
        auto p_tokens = tokenize(rec.premise);
        auto h_tokens = tokenize(rec.hypothesis);
        PairLayout layout = layout_pair(p_tokens, h_tokens, vocab, max_len);
        FinetuneExample ex = std::move(layout.ex);
        ex.label = nli_label_from_string(rec.label);
        res.examples.push_back(std::move(ex));
    }
    return res;
}

std::vector<QaRecord> read_qa_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open QA records: " + path);
    std::vector<QaRecord> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        QaRecord rec;
        rec.question = j.at("question").get<std::string>();
        rec.context = j.at("context").get<std::string>();
        rec.impossible = j.value("impossible", false);
        if (!rec.impossible) {
            rec.answer_text = j.at("answer_text").get<std::string>();
            rec.answer_start = j.at("answer_start").get<int64_t>();
        }
        if (j.contains("alt_answers")) {
            for (const auto& a : j["alt_answers"]) rec.alt_answers.push_back(a.get<std::string>());
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<NliRecord> read_nli_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open NLI records: " + path);
    std::vector<NliRecord> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        NliRecord rec;
        rec.premise = j.at("premise").get<std::string>();
        rec.hypothesis = j.at("hypothesis").get<std::string>();
        rec.label = j.at("label").get<std::string>();
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Example file I/O
// ---------------------------------------------------------------------------

void write_pretrain_examples(const std::string& path,
                             std::span<const PretrainExample> examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write example file: " + path);
    for (const PretrainExample& ex : examples) {
        ojson j;
        j["token_ids"] = ex.token_ids;
        j["segment_ids"] = ex.segment_ids;
        j["attention_mask"] = ex.attention_mask;
        j["mlm_labels"] = ex.mlm_labels;
        j["nsp_label"] = ex.nsp_label;
        j["bigram_labels"] = ex.bigram_labels;
        j["max_len"] = ex.max_len;
        out << j.dump() << '\n';
    }
}

std::vector<PretrainExample> read_pretrain_examples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open example file: " + path);
    std::vector<PretrainExample> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        PretrainExample ex;
        ex.token_ids = j.at("token_ids").get<std::vector<int64_t>>();
        ex.segment_ids = j.at("segment_ids").get<std::vector<int64_t>>();
        ex.attention_mask = j.at("attention_mask").get<std::vector<uint8_t>>();
        ex.mlm_labels = j.at("mlm_labels").get<std::vector<int64_t>>();
        ex.nsp_label = j.at("nsp_label").get<int64_t>();
        ex.bigram_labels = j.at("bigram_labels").get<std::vector<int64_t>>();
        ex.max_len = j.at("max_len").get<int64_t>();
        out.push_back(std::move(ex));
    }
    return out;
}

void write_data_manifest(const std::string& path, const DataManifest& m) {
    ojson j;
    j["format_version"] = m.format_version;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["vocab_checksum"] = m.vocab_checksum;
    j["short_count"] = m.short_count;
    j["long_count"] = m.long_count;
    j["short_len"] = m.short_len;
    j["long_len"] = m.long_len;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

DataManifest read_data_manifest(const std::string& path) {
    ojson j = ojson::parse(read_file(path));
    DataManifest m;
    m.format_version = j.at("format_version").get<int64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.vocab_checksum = j.at("vocab_checksum").get<uint64_t>();
    m.short_count = j.at("short_count").get<int64_t>();
    m.long_count = j.at("long_count").get<int64_t>();
    m.short_len = j.at("short_len").get<int64_t>();
    m.long_len = j.at("long_len").get<int64_t>();
    return m;
}

} // namespace bertlab
