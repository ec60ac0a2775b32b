#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bertlab/datapipe.hpp"
#include "support/test_util.hpp"

using namespace bertlab;
namespace fs = std::filesystem;

TEST_CASE("tokenizer lowercases and splits punctuation") {
    auto toks = tokenize("The cat, the DOG.");
    REQUIRE(toks.size() == 6);
    CHECK(toks[0] == "the");
    CHECK(toks[1] == "cat");
    CHECK(toks[2] == ",");
    CHECK(toks[3] == "the");
    CHECK(toks[4] == "dog");
    CHECK(toks[5] == ".");
}

TEST_CASE("build_vocab honors min_freq and is deterministic") {
    auto docs = parse_corpus("a a b\n");
    Vocab v = build_vocab(docs, 2);
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("b"));
    CHECK(v.id_of("b") == Vocab::kUnk);

    Vocab v2 = build_vocab(docs, 2);
    CHECK(v.tokens == v2.tokens);
    CHECK(v.checksum() == v2.checksum());

    CHECK_THROWS_AS(build_vocab({}, 1), DataError);
}

TEST_CASE("vocab ordering is frequency-descending then lexicographic") {
    auto docs = parse_corpus("b b c a a\n");
    Vocab v = build_vocab(docs, 1);
    // a and b tie at 2 -> a first; then c.
    CHECK(v.id_of("a") == Vocab::kNumSpecial + 0);
    CHECK(v.id_of("b") == Vocab::kNumSpecial + 1);
    CHECK(v.id_of("c") == Vocab::kNumSpecial + 2);
}

TEST_CASE("vocab token coverage on held-out toy split is at least 90% with min_freq=1") {
    // One corpus, split by document, so both halves share the same grammar.
    auto docs = testutil::toy_corpus(100, 10, 10);
    std::vector<Document> train_docs(docs.begin(), docs.begin() + 8);
    std::vector<Document> held_out(docs.begin() + 8, docs.end());
    Vocab v = build_vocab(train_docs, 1);
    int64_t covered = 0, total = 0;
    for (const auto& d : held_out) {
        for (const auto& s : d.sentences) {
            for (const auto& t : s) {
                ++total;
                if (v.contains(t)) ++covered;
            }
        }
    }
    CHECK(static_cast<double>(covered) / static_cast<double>(total) >= 0.9);
}

TEST_CASE("nsp pairs: is_next fraction within 3 sigma of 0.5 and adjacency holds") {
    auto docs = testutil::toy_corpus(7, 40, 30); // ~40*29 pairs
    Rng rng(123);
    NspPairSet set = make_nsp_pairs(docs, rng);
    CHECK_FALSE(set.imbalance);
    const double n = static_cast<double>(set.pairs.size());
    REQUIRE(n > 1000);
    int64_t next_count = 0;
    for (const NspPair& p : set.pairs) {
        if (p.is_next) {
            ++next_count;
            // Verifiably adjacent in the source document.
            CHECK(docs[p.doc_a].sentences[p.sent_a_idx] == p.sent_a);
            CHECK(docs[p.doc_a].sentences[p.sent_a_idx + 1] == p.sent_b);
        }
    }
    const double sigma = std::sqrt(0.25 / n);
    CHECK(std::abs(static_cast<double>(next_count) / n - 0.5) < 3 * sigma);
}

TEST_CASE("single-document corpus yields only is_next pairs and raises the imbalance flag") {
    auto docs = parse_corpus("a b c\nd e f\ng h i\n");
    REQUIRE(docs.size() == 1);
    Rng rng(5);
    NspPairSet set = make_nsp_pairs(docs, rng);
    CHECK(set.imbalance);
    for (const NspPair& p : set.pairs) CHECK(p.is_next);
}

TEST_CASE("documents with fewer than two sentences contribute only as random-B sources") {
    auto docs = parse_corpus("only sentence here\n\nfirst one\nsecond one\n");
    Rng rng(5);
    NspPairSet set = make_nsp_pairs(docs, rng);
    for (const NspPair& p : set.pairs) CHECK(p.doc_a == 1);
}

TEST_CASE("assembled example structure and segment invariant") {
    auto docs = testutil::toy_corpus(9, 3, 5);
    Vocab v = build_vocab(docs, 1);
    Rng rng(1);
    NspPairSet set = make_nsp_pairs(docs, rng);
    PretrainExample ex = assemble_example(set.pairs.front(), v, 32);

    CHECK(ex.token_ids.size() == 32);
    CHECK(ex.token_ids[0] == Vocab::kCls);
    // Segments: 0 up to and including the first [SEP], then 1, 0 on padding.
    int64_t first_sep = -1;
    for (size_t i = 0; i < ex.token_ids.size(); ++i) {
        if (ex.token_ids[i] == Vocab::kSep) {
            first_sep = static_cast<int64_t>(i);
            break;
        }
    }
    REQUIRE(first_sep > 0);
    int sep_count = 0;
    for (size_t i = 0; i < ex.token_ids.size(); ++i) {
        if (ex.attention_mask[i] == 0) {
            CHECK(ex.segment_ids[i] == 0);
            CHECK(ex.token_ids[i] == Vocab::kPad);
        } else if (static_cast<int64_t>(i) <= first_sep) {
            CHECK(ex.segment_ids[i] == 0);
        } else {
            CHECK(ex.segment_ids[i] == 1);
        }
        if (ex.token_ids[i] == Vocab::kSep) ++sep_count;
    }
    CHECK(sep_count == 2);
}

TEST_CASE("truncation removes from the longer sentence first") {
    NspPair pair;
    for (int i = 0; i < 20; ++i) pair.sent_a.push_back("long" + std::to_string(i));
    for (int i = 0; i < 4; ++i) pair.sent_b.push_back("short" + std::to_string(i));
    pair.is_next = true;
    auto docs = parse_corpus("x\n"); // vocab content irrelevant; everything maps to UNK
    Vocab v = build_vocab(docs, 1);
    PretrainExample ex = assemble_example(pair, v, 16);
    // Budget 13: b keeps all 4, a truncated to 9.
    int64_t seg1_real = 0, seg0_real = 0;
    for (size_t i = 1; i < ex.token_ids.size(); ++i) {
        if (ex.attention_mask[i] == 0 || ex.token_ids[i] == Vocab::kSep) continue;
        if (ex.segment_ids[i] == 0) ++seg0_real;
        if (ex.segment_ids[i] == 1) ++seg1_real;
    }
    CHECK(seg0_real == 9);
    CHECK(seg1_real == 4);
}

TEST_CASE("masking: statistics within 3 sigma bands; specials never selected; min one") {
    auto docs = testutil::toy_corpus(31, 80, 30, 20, 28);
    Vocab v = build_vocab(docs, 1);
    Rng pair_rng(2);
    NspPairSet set = make_nsp_pairs(docs, pair_rng);

    int64_t eligible = 0, selected = 0, masked = 0, randomized = 0, kept = 0;
    for (size_t i = 0; i < set.pairs.size(); ++i) {
        PretrainExample raw = assemble_example(set.pairs[i], v, 56);
        const auto content = content_positions(raw);
        Rng rng = stream_rng(77, "mask", i);
        PretrainExample ex = apply_masking(raw, v, rng);
        eligible += static_cast<int64_t>(content.size());
        int64_t this_selected = 0;
        for (size_t pos = 0; pos < ex.mlm_labels.size(); ++pos) {
            if (ex.mlm_labels[pos] == kIgnoreLabel) continue;
            ++this_selected;
            CHECK(raw.token_ids[pos] != Vocab::kCls);
            CHECK(raw.token_ids[pos] != Vocab::kSep);
            CHECK(raw.token_ids[pos] != Vocab::kPad);
            CHECK(ex.mlm_labels[pos] == raw.token_ids[pos]);
            if (ex.token_ids[pos] == Vocab::kMask) {
                ++masked;
            } else if (ex.token_ids[pos] == raw.token_ids[pos]) {
                ++kept;
            } else {
                ++randomized;
            }
        }
        CHECK(this_selected >= 1); // minimum rule
        selected += this_selected;
    }
    REQUIRE(eligible > 100000);
    const double n = static_cast<double>(eligible);
    const double rate = static_cast<double>(selected) / n;
    const double sigma015 = std::sqrt(0.15 * 0.85 / n);
    CHECK(std::abs(rate - 0.15) < 3 * sigma015 + 1e-3); // +min-rule slack

    const double s = static_cast<double>(selected);
    CHECK(std::abs(masked / s - 0.8) < 3 * std::sqrt(0.8 * 0.2 / s));
    CHECK(std::abs(randomized / s - 0.1) < 3 * std::sqrt(0.1 * 0.9 / s));
    CHECK(std::abs(kept / s - 0.1) < 3 * std::sqrt(0.1 * 0.9 / s));
}

TEST_CASE("tiny example still masks at least one token") {
    NspPair pair;
    pair.sent_a = {"aa"};
    pair.sent_b = {"bb"};
    auto docs = parse_corpus("aa bb\n");
    Vocab v = build_vocab(docs, 1);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        PretrainExample ex = apply_masking(assemble_example(pair, v, 8), v, rng);
        int64_t labels = 0;
        for (int64_t l : ex.mlm_labels) {
            if (l != kIgnoreLabel) ++labels;
        }
        CHECK(labels >= 1);
    }
}

TEST_CASE("bigram shift: forced swap labels exactly the swapped pair") {
    NspPair pair;
    pair.sent_a = {"a", "b", "c", "d"};
    pair.sent_b = {"e"};
    auto docs = parse_corpus("a b c d e\n");
    Vocab v = build_vocab(docs, 1);
    PretrainExample ex = assemble_example(pair, v, 12);
    // Always-swap probability: the scan pairs (a,b) then (c,d).
    Rng rng(3);
    PretrainExample swapped = apply_bigram_shift(ex, rng, 1.0 - 1e-12);
    CHECK(swapped.token_ids[1] == v.id_of("b"));
    CHECK(swapped.token_ids[2] == v.id_of("a"));
    CHECK(swapped.token_ids[3] == v.id_of("d"));
    CHECK(swapped.token_ids[4] == v.id_of("c"));
    CHECK(swapped.bigram_labels[1] == kBigramDisplaced);
    CHECK(swapped.bigram_labels[2] == kBigramDisplaced);
    CHECK(swapped.bigram_labels[3] == kBigramDisplaced);
    CHECK(swapped.bigram_labels[4] == kBigramDisplaced);
    // e sits alone after the [SEP]; never paired.
    CHECK(swapped.bigram_labels[6] == kBigramInPlace);
}

TEST_CASE("bigram shift: displaced labels come in adjacent pairs and re-swapping restores") {
    auto docs = testutil::toy_corpus(55, 10, 8);
    Vocab v = build_vocab(docs, 1);
    Rng pair_rng(8);
    NspPairSet set = make_nsp_pairs(docs, pair_rng);
    for (size_t i = 0; i < std::min<size_t>(64, set.pairs.size()); ++i) {
        PretrainExample base = assemble_example(set.pairs[i], v, 24);
        Rng rng = stream_rng(9, "bs", i);
        PretrainExample ex = apply_bigram_shift(base, rng, 0.4);

        std::vector<int64_t> restored = ex.token_ids;
        size_t p = 0;
        while (p < ex.bigram_labels.size()) {
            if (ex.bigram_labels[p] == kBigramDisplaced) {
                REQUIRE(p + 1 < ex.bigram_labels.size());
                REQUIRE(ex.bigram_labels[p + 1] == kBigramDisplaced);
                std::swap(restored[p], restored[p + 1]);
                p += 2;
            } else {
                ++p;
            }
        }
        CHECK(restored == base.token_ids);
    }
}

TEST_CASE("bigram shift: swap rate over candidate pairs within 3 sigma of 0.15") {
    auto docs = testutil::toy_corpus(77, 160, 30, 20, 28);
    Vocab v = build_vocab(docs, 1);
    Rng pair_rng(4);
    NspPairSet set = make_nsp_pairs(docs, pair_rng);
    int64_t candidates = 0, swaps = 0;
    for (size_t i = 0; i < set.pairs.size(); ++i) {
        PretrainExample base = assemble_example(set.pairs[i], v, 56);
        // Candidate pairs: the same non-overlapping left-to-right scan.
        const auto content = content_positions(base);
        std::set<int64_t> content_set(content.begin(), content.end());
        int64_t p = 0;
        const int64_t n = static_cast<int64_t>(base.token_ids.size());
        while (p + 1 < n) {
            if (content_set.count(p) && content_set.count(p + 1)) {
                ++candidates;
                p += 2;
            } else {
                ++p;
            }
        }
        Rng rng = stream_rng(10, "bs", i);
        PretrainExample ex = apply_bigram_shift(base, rng, 0.15);
        int64_t displaced = 0;
        for (int64_t l : ex.bigram_labels) {
            if (l == kBigramDisplaced) ++displaced;
        }
        CHECK(displaced % 2 == 0);
        swaps += displaced / 2;
    }
    REQUIRE(candidates > 100000);
    const double n = static_cast<double>(candidates);
    const double sigma = std::sqrt(0.15 * 0.85 / n);
    CHECK(std::abs(static_cast<double>(swaps) / n - 0.15) < 3 * sigma);
}

TEST_CASE("length schedule: 90% at 128, then 384") {
    CHECK(length_schedule(0, 100) == 128);
    CHECK(length_schedule(89, 100) == 128);
    CHECK(length_schedule(90, 100) == 384);
    CHECK(length_schedule(95, 100) == 384);
    CHECK(length_schedule(99, 100) == 384);
    for (int64_t total : {1, 3, 7, 10, 33, 100, 1001}) {
        int64_t short_steps = 0;
        for (int64_t s = 0; s < total; ++s) {
            if (length_schedule(s, total) == 128) ++short_steps;
        }
        CHECK(short_steps == (9 * total + 9) / 10); // ceil(0.9 * total)
    }
    CHECK_THROWS_AS(length_schedule(100, 100), ConfigError);
    CHECK_THROWS_AS(length_schedule(-1, 100), ConfigError);
}

TEST_CASE("determinism: identical corpus/config/seed give byte-identical example files") {
    auto docs = testutil::toy_corpus(12, 6, 6);
    Vocab v = build_vocab(docs, 1);
    auto make_file = [&](const std::string& path) {
        auto examples = testutil::make_examples(docs, v, 2024, 24, true);
        write_pretrain_examples(path, examples);
        std::ifstream in(path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const auto tmp = fs::temp_directory_path() / "bertlab_datapipe_test";
    fs::create_directories(tmp);
    const std::string a = make_file((tmp / "a.jsonl").string());
    const std::string b = make_file((tmp / "b.jsonl").string());
    CHECK(a == b);
    CHECK(!a.empty());
}

TEST_CASE("pretrain example files round-trip") {
    auto docs = testutil::toy_corpus(13, 4, 5);
    Vocab v = build_vocab(docs, 1);
    auto examples = testutil::make_examples(docs, v, 3, 16, false, 6);
    const auto tmp = fs::temp_directory_path() / "bertlab_datapipe_test";
    fs::create_directories(tmp);
    const std::string path = (tmp / "roundtrip.jsonl").string();
    write_pretrain_examples(path, examples);
    auto loaded = read_pretrain_examples(path);
    REQUIRE(loaded.size() == examples.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].token_ids == examples[i].token_ids);
        CHECK(loaded[i].segment_ids == examples[i].segment_ids);
        CHECK(loaded[i].mlm_labels == examples[i].mlm_labels);
        CHECK(loaded[i].bigram_labels == examples[i].bigram_labels);
        CHECK(loaded[i].nsp_label == examples[i].nsp_label);
    }
}

TEST_CASE("QA examples: impossible convention and whole-context answers") {
    auto docs = testutil::toy_corpus(14, 4, 5);
    Vocab v = build_vocab(docs, 1);

    QaRecord imp;
    imp.question = "w1 w2";
    imp.context = "w3 w4 w5";
    imp.impossible = true;
    auto built = build_qa_examples(std::span(&imp, 1), v, 24);
    REQUIRE(built.examples.size() == 1);
    CHECK(built.examples[0].impossible);
    CHECK(built.examples[0].span_start == 0);
    CHECK(built.examples[0].span_end == 0);

    QaRecord whole;
    whole.question = "w9";
    whole.context = "w3 w4 w5";
    whole.answer_text = "w3 w4 w5";
    whole.answer_start = 0;
    auto built2 = build_qa_examples(std::span(&whole, 1), v, 24);
    REQUIRE(built2.examples.size() == 1);
    const auto& ex = built2.examples[0];
    CHECK(ex.span_start == ex.context_begin);
    CHECK(ex.span_end == ex.context_end - 1);
}

TEST_CASE("QA span round-trip recovers the answer string on a synthetic set") {
    auto docs = testutil::toy_corpus(15, 10, 8, 8, 14);
    Vocab v = build_vocab(docs, 1);
    // Build QA records whose answers are whitespace-joined token spans.
    std::vector<QaRecord> records;
    Rng rng(44);
    for (const auto& d : docs) {
        for (const auto& sent : d.sentences) {
            if (sent.size() < 4) continue;
            std::string context;
            std::vector<size_t> starts;
            for (size_t i = 0; i < sent.size(); ++i) {
                starts.push_back(context.size());
                context += sent[i];
                if (i + 1 < sent.size()) context += " ";
            }
            const size_t a = rng.next_below(sent.size() - 2);
            const size_t b = a + rng.next_below(2);
            QaRecord rec;
            rec.question = "w0 w1";
            rec.context = context;
            rec.answer_start = static_cast<int64_t>(starts[a]);
            std::string ans;
            for (size_t i = a; i <= b; ++i) {
                ans += sent[i];
                if (i < b) ans += " ";
            }
            rec.answer_text = ans;
            records.push_back(std::move(rec));
        }
    }
    REQUIRE(records.size() >= 50);
    auto built = build_qa_examples(records, v, 48);
    REQUIRE(built.skipped == 0);
    int64_t exact = 0;
    for (size_t i = 0; i < built.examples.size(); ++i) {
        const auto& ex = built.examples[i];
        std::string decoded;
        for (int64_t p = ex.span_start; p <= ex.span_end; ++p) {
            if (!decoded.empty()) decoded += " ";
            decoded += ex.context_tokens[static_cast<size_t>(p - ex.context_begin)];
        }
        if (decoded == records[i].answer_text) ++exact;
    }
    CHECK(static_cast<double>(exact) / static_cast<double>(built.examples.size()) >= 0.99);
}

TEST_CASE("QA records with unrecoverable spans are skipped with a counter") {
    auto docs = testutil::toy_corpus(16, 3, 4);
    Vocab v = build_vocab(docs, 1);
    QaRecord rec;
    rec.question = "w0";
    rec.context = "w1 w2 w3 w4 w5 w6 w7";
    rec.answer_text = "w7";
    rec.answer_start = 18;
    // max_len too small to keep the full context: the answer token is
    // truncated away, so the record is dropped and counted.
    auto built = build_qa_examples(std::span(&rec, 1), v, 8);
    CHECK(built.examples.empty());
    CHECK(built.skipped == 1);
}

TEST_CASE("NLI examples carry labels and reject unknown strings") {
    auto docs = testutil::toy_corpus(17, 3, 4);
    Vocab v = build_vocab(docs, 1);
    NliRecord rec{"w1 w2", "w3", "entailment"};
    auto built = build_nli_examples(std::span(&rec, 1), v, 16);
    REQUIRE(built.examples.size() == 1);
    CHECK(built.examples[0].label == kNliEntailment);
    NliRecord bad{"w1", "w2", "maybe"};
    CHECK_THROWS_AS(build_nli_examples(std::span(&bad, 1), v, 16), DataError);
}
