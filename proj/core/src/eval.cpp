#include "bertlab/eval.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "bertlab/train.hpp"

namespace bertlab {

// ---------------------------------------------------------------------------
// Normalization and metrics
// ---------------------------------------------------------------------------

std::vector<std::string> normalize_answer_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            if (cur != "a" && cur != "an" && cur != "the") out.push_back(cur);
            cur.clear();
        }
    };
    for (char raw : text) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (std::isspace(c) || std::ispunct(c)) {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

std::string normalize_answer(std::string_view text) {
    std::string out;
    for (const std::string& t : normalize_answer_tokens(text)) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

int exact_match(const std::string& pred_text, bool pred_impossible,
                std::span<const std::string> golds, bool gold_impossible) {
    if (pred_impossible || gold_impossible) {
        return pred_impossible == gold_impossible ? 1 : 0;
    }
    const std::string pred = normalize_answer(pred_text);
    for (const std::string& g : golds) {
        if (pred == normalize_answer(g)) return 1;
    }
    return 0;
}

double f1_overlap(std::span<const std::string> pred_tokens,
                  std::span<const std::string> gold_tokens) {
    if (pred_tokens.empty() && gold_tokens.empty()) return 1.0;
    if (pred_tokens.empty() || gold_tokens.empty()) return 0.0;
    std::map<std::string, int64_t> gold_bag;
    for (const std::string& t : gold_tokens) ++gold_bag[t];
    int64_t overlap = 0;
    for (const std::string& t : pred_tokens) {
        auto it = gold_bag.find(t);
        if (it != gold_bag.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred_tokens.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(gold_tokens.size());
    return 2.0 * precision * recall / (precision + recall);
}

double f1_score(const std::string& pred_text, bool pred_impossible,
                std::span<const std::string> golds, bool gold_impossible) {
    if (pred_impossible || gold_impossible) {
        return pred_impossible == gold_impossible ? 1.0 : 0.0;
    }
    const auto pred_tokens = normalize_answer_tokens(pred_text);
    double best = 0.0;
    for (const std::string& g : golds) {
        best = std::max(best, f1_overlap(pred_tokens, normalize_answer_tokens(g)));
    }
    return best;
}

SpanPrediction decode_span(std::span<const double> start_logits,
                           std::span<const double> end_logits, int64_t context_begin,
                           int64_t context_end, double impossible_threshold) {
    if (start_logits.size() != end_logits.size()) {
        throw ShapeError("decode_span: start/end logit lengths differ");
    }
    SpanPrediction best;
    best.impossible = true;
    best.score = start_logits[0] + end_logits[0]; // [CLS] position
    double best_span = -1e300;
    int64_t bs = -1, be = -1;
    for (int64_t s = context_begin; s < context_end; ++s) {
        for (int64_t e = s; e < context_end; ++e) {
            const double sc = start_logits[static_cast<size_t>(s)] +
                              end_logits[static_cast<size_t>(e)];
            if (sc > best_span) {
                best_span = sc;
                bs = s;
                be = e;
            }
        }
    }
    if (bs >= 0 && best_span >= best.score + impossible_threshold) {
        best.impossible = false;
        best.start = bs;
        best.end = be;
        best.score = best_span;
    }
    return best;
}

std::string span_to_text(const SpanPrediction& pred, const FinetuneExample& ex) {
    if (pred.impossible) return "";
    std::string out;
    for (int64_t p = pred.start; p <= pred.end; ++p) {
        const int64_t rel = p - ex.context_begin;
        if (rel < 0 || rel >= static_cast<int64_t>(ex.context_tokens.size())) continue;
        if (!out.empty()) out.push_back(' ');
        out += ex.context_tokens[static_cast<size_t>(rel)];
    }
    return out;
}

QaMetrics evaluate_qa(const FinetuneModel& model, std::span<const FinetuneExample> examples,
                      double impossible_threshold) {
    QaMetrics m;
    for (const FinetuneExample& ex : examples) {
        QaLogits logits = qa_forward(model, ex, false, nullptr);
        SpanPrediction pred =
            decode_span(logits.start.data(), logits.end.data(), ex.context_begin,
                        ex.context_end, impossible_threshold);
        const std::string text = span_to_text(pred, ex);
        m.em += exact_match(text, pred.impossible, ex.gold_answers, ex.impossible);
        m.f1 += f1_score(text, pred.impossible, ex.gold_answers, ex.impossible);
        ++m.count;
    }
    if (m.count > 0) {
        m.em = 100.0 * m.em / static_cast<double>(m.count);
        m.f1 = 100.0 * m.f1 / static_cast<double>(m.count);
    }
    return m;
}

double evaluate_nli(const FinetuneModel& model, std::span<const FinetuneExample> examples) {
    if (examples.empty()) return 0.0;
    int64_t correct = 0;
    for (const FinetuneExample& ex : examples) {
        Tensor logits = nli_forward(model, ex, false, nullptr);
        auto d = logits.data();
        int64_t arg = 0;
        for (int64_t c = 1; c < logits.dim(1); ++c) {
            if (d[static_cast<size_t>(c)] > d[static_cast<size_t>(arg)]) arg = c;
        }
        if (arg == ex.label) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Synthetic probing datasets
// ---------------------------------------------------------------------------

namespace {

uint64_t sentence_hash(const std::vector<int64_t>& ids) {
    return fnv1a64(ids.data(), ids.size() * sizeof(int64_t));
}

std::vector<std::vector<int64_t>> collect_sentences(const std::vector<Document>& corpus,
                                                    const Vocab& vocab, int64_t max_sentences) {
    std::vector<std::vector<int64_t>> out;
    for (const Document& d : corpus) {
        for (const auto& sent : d.sentences) {
            if (sent.size() < 2) continue;
            std::vector<int64_t> ids;
            ids.reserve(sent.size());
            for (const std::string& t : sent) ids.push_back(vocab.id_of(t));
            out.push_back(std::move(ids));
            if (static_cast<int64_t>(out.size()) >= max_sentences) return out;
        }
    }
    return out;
}

ProbeDataset make_sentence_length(const std::vector<std::vector<int64_t>>& sentences,
                                  int64_t classes) {
    // Quantile bucketing: sort by (length, content hash) and split into k
    // equal chunks, so class sizes differ by at most one.
    std::vector<size_t> order(sentences.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (sentences[a].size() != sentences[b].size())
            return sentences[a].size() < sentences[b].size();
        return sentence_hash(sentences[a]) < sentence_hash(sentences[b]);
    });
    ProbeDataset ds;
    ds.name = "sentence_length";
    ds.num_classes = classes;
    const int64_t n = static_cast<int64_t>(order.size());
    for (int64_t rank = 0; rank < n; ++rank) {
        const int64_t label = std::min(classes - 1, rank * classes / n);
        ds.token_ids.push_back(sentences[order[static_cast<size_t>(rank)]]);
        ds.labels.push_back(label);
    }
    return ds;
}

ProbeDataset make_word_content(const std::vector<std::vector<int64_t>>& sentences,
                               const Vocab& vocab, int64_t classes, int64_t min_per_class) {
    // Designated words come from the middle half of the frequency ranking;
    // a sentence is usable for class w when it contains w and no other
    // designated word. Words are picked greedily to keep the class pools
    // large after each exclusion.
    std::map<int64_t, int64_t> freq;
    for (const auto& s : sentences) {
        for (int64_t id : s) {
            if (id >= Vocab::kNumSpecial) ++freq[id];
        }
    }
    std::vector<std::pair<int64_t, int64_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int64_t>(ranked.size()) < classes) {
        throw DataError("word_content probe: vocabulary too small: " +
                        std::to_string(ranked.size()) + " regular tokens for " +
                        std::to_string(classes) + " classes");
    }
    // Mid-frequency band: skip the stopword-like top decile, drop singletons.
    const int64_t band_lo = static_cast<int64_t>(ranked.size()) / 10;
    std::vector<int64_t> band;
    for (int64_t i = band_lo; i < static_cast<int64_t>(ranked.size()); ++i) {
        if (ranked[static_cast<size_t>(i)].second >= 2) {
            band.push_back(ranked[static_cast<size_t>(i)].first);
        }
    }
    if (static_cast<int64_t>(band.size()) < classes) {
        throw DataError("word_content probe: only " + std::to_string(band.size()) +
                        " repeated mid-frequency words for " + std::to_string(classes) +
                        " classes");
    }

    std::map<int64_t, std::vector<size_t>> containing; // word -> sentence indices
    for (size_t si = 0; si < sentences.size(); ++si) {
        std::set<int64_t> seen(sentences[si].begin(), sentences[si].end());
        for (int64_t w : band) {
            if (seen.count(w)) containing[w].push_back(si);
        }
    }

    std::vector<int64_t> words;
    std::set<size_t> claimed; // sentences holding any picked word
    for (int64_t round = 0; round < classes; ++round) {
        int64_t best = -1;
        int64_t best_support = -1;
        for (int64_t w : band) {
            if (std::find(words.begin(), words.end(), w) != words.end()) continue;
            int64_t support = 0;
            for (size_t si : containing[w]) {
                if (!claimed.count(si)) ++support;
            }
            if (support > best_support) {
                best_support = support;
                best = w;
            }
        }
        if (best < 0) break;
        words.push_back(best);
        for (size_t si : containing[best]) claimed.insert(si);
    }
    if (static_cast<int64_t>(words.size()) < classes) {
        throw DataError("word_content probe: could not designate " + std::to_string(classes) +
                        " words from the mid-frequency band");
    }

    std::vector<std::vector<size_t>> per_class(static_cast<size_t>(classes));
    for (size_t si = 0; si < sentences.size(); ++si) {
        int64_t found = -1;
        bool multiple = false;
        for (int64_t id : sentences[si]) {
            for (int64_t w = 0; w < classes; ++w) {
                if (id == words[static_cast<size_t>(w)]) {
                    if (found >= 0 && found != w) multiple = true;
                    found = w;
                }
            }
        }
        if (found >= 0 && !multiple) per_class[static_cast<size_t>(found)].push_back(si);
    }
    int64_t per = static_cast<int64_t>(per_class[0].size());
    for (const auto& v : per_class) per = std::min(per, static_cast<int64_t>(v.size()));
    if (per < min_per_class) {
        std::string counts;
        for (int64_t w = 0; w < classes; ++w) {
            counts += (w ? ", " : "") + vocab.token_of(words[static_cast<size_t>(w)]) + ":" +
                      std::to_string(per_class[static_cast<size_t>(w)].size());
        }
        throw DataError("word_content probe: corpus too small for balanced classes (need " +
                        std::to_string(min_per_class) + " per class, have " + counts + ")");
    }
    ProbeDataset ds;
    ds.name = "word_content";
    ds.num_classes = classes;
    for (int64_t w = 0; w < classes; ++w) {
        for (int64_t i = 0; i < per; ++i) {
            ds.token_ids.push_back(sentences[per_class[static_cast<size_t>(w)][static_cast<size_t>(i)]]);
            ds.labels.push_back(w);
        }
    }
    return ds;
}

ProbeDataset make_bigram_shift_detection(const std::vector<std::vector<int64_t>>& sentences,
                                         Rng& rng) {
    // Each eligible sentence contributes its clean form (label 0) and a copy
    // with one forced adjacent swap (label 1): exactly balanced, and content
    // alone carries no signal — only order does.
    ProbeDataset ds;
    ds.name = "bigram_shift_detection";
    ds.num_classes = 2;
    for (const auto& sent : sentences) {
        std::vector<size_t> swappable;
        for (size_t i = 0; i + 1 < sent.size(); ++i) {
            if (sent[i] != sent[i + 1]) swappable.push_back(i);
        }
        if (swappable.empty()) continue;
        std::vector<int64_t> corrupted = sent;
        const size_t at = swappable[rng.next_below(swappable.size())];
        std::swap(corrupted[at], corrupted[at + 1]);
        ds.token_ids.push_back(sent);
        ds.labels.push_back(0);
        ds.token_ids.push_back(std::move(corrupted));
        ds.labels.push_back(1);
    }
    if (ds.token_ids.empty()) {
        throw DataError("bigram_shift_detection probe: no sentence has two distinct adjacent "
                        "tokens");
    }
    return ds;
}

} // namespace

std::vector<ProbeDataset> synthetic_probe_datasets(const std::vector<Document>& corpus,
                                                   const Vocab& vocab, Rng& rng,
                                                   const ProbeOptions& opts) {
    auto sentences = collect_sentences(corpus, vocab, opts.max_sentences);
    if (static_cast<int64_t>(sentences.size()) <
        opts.length_classes * opts.min_per_class) {
        throw DataError("probe datasets: corpus has only " + std::to_string(sentences.size()) +
                        " usable sentences; need at least " +
                        std::to_string(opts.length_classes * opts.min_per_class));
    }
    std::vector<ProbeDataset> out;
    out.push_back(make_sentence_length(sentences, opts.length_classes));
    out.push_back(make_word_content(sentences, vocab, opts.word_content_classes,
                                    opts.min_per_class));
    out.push_back(make_bigram_shift_detection(sentences, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Probe training
// ---------------------------------------------------------------------------

namespace {

/// [CLS] sentence [SEP], truncated to the encoder's position budget.
Tensor embed_probe_sentence(const PretrainModel& model, const std::vector<int64_t>& sent) {
    std::vector<int64_t> ids;
    const size_t cap = static_cast<size_t>(model.config.max_position) - 2;
    ids.push_back(Vocab::kCls);
    for (size_t i = 0; i < sent.size() && i < cap; ++i) ids.push_back(sent[i]);
    ids.push_back(Vocab::kSep);
    std::vector<int64_t> segs(ids.size(), 0);
    std::vector<uint8_t> mask(ids.size(), 1);

    Tensor emb = embed(model.config, model.encoder, ids, segs, false, nullptr);
    EncoderOutput out = encode(model.config, model.encoder, emb, mask, false, nullptr);
    const int64_t cls_pos[] = {0};
    return gather_rows(out.per_layer[static_cast<size_t>(model.placement.nsp_layer - 1)],
                       cls_pos);
}

} // namespace

ProbeResult probe_run(const PretrainModel& model, const ProbeDataset& dataset,
                      const ProbeConfig& cfg) {
    if (dataset.token_ids.empty()) throw DataError("probe_run: empty dataset");
    const uint64_t encoder_sum_before = parameters_checksum(model.named_parameters());

    // The encoder is frozen, so embed every sentence once up front.
    const int64_t n = static_cast<int64_t>(dataset.token_ids.size());
    const int64_t h = model.config.hidden_size;
    std::vector<double> cls_data;
    cls_data.reserve(static_cast<size_t>(n * h));
    for (const auto& sent : dataset.token_ids) {
        Tensor cls = embed_probe_sentence(model, sent);
        cls_data.insert(cls_data.end(), cls.data().begin(), cls.data().end());
    }
    Tensor features = Tensor::from_data({n, h}, std::move(cls_data));

    // Deterministic split.
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng split_rng = stream_rng(cfg.seed, "probe.split");
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(split_rng.next_below(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    const int64_t val_n = std::max<int64_t>(1, static_cast<int64_t>(
                                                   static_cast<double>(n) * cfg.val_fraction));
    std::vector<int64_t> val_idx(order.begin(), order.begin() + val_n);
    std::vector<int64_t> train_idx(order.begin() + val_n, order.end());
    if (train_idx.empty()) throw DataError("probe_run: dataset too small to split");

    // Two-hidden-layer MLP.
    Rng init = stream_rng(cfg.seed, "probe.init");
    Tensor w1 = Tensor::randn({h, cfg.hidden1}, init, 0.05, true);
    Tensor b1 = Tensor::zeros({cfg.hidden1}, true);
    Tensor w2 = Tensor::randn({cfg.hidden1, cfg.hidden2}, init, 0.05, true);
    Tensor b2 = Tensor::zeros({cfg.hidden2}, true);
    Tensor w3 = Tensor::randn({cfg.hidden2, dataset.num_classes}, init, 0.05, true);
    Tensor b3 = Tensor::zeros({dataset.num_classes}, true);

    auto mlp_logits = [&](const Tensor& x) {
        Tensor z = gelu(add_bias(matmul(x, w1), b1));
        z = gelu(add_bias(matmul(z, w2), b2));
        return add_bias(matmul(z, w3), b3);
    };

    AdamAmsgrad opt({{"probe.w1", w1},
                     {"probe.b1", b1},
                     {"probe.w2", w2},
                     {"probe.b2", b2},
                     {"probe.w3", w3},
                     {"probe.b3", b3}},
                    AdamAmsgrad::Config{cfg.lr, cfg.weight_decay});

    auto accuracy_on = [&](const std::vector<int64_t>& idx) {
        Tensor x = gather_rows(features, idx);
        Tensor logits = mlp_logits(x);
        auto d = logits.data();
        const int64_t classes = dataset.num_classes;
        int64_t correct = 0;
        for (size_t row = 0; row < idx.size(); ++row) {
            int64_t arg = 0;
            for (int64_t c = 1; c < classes; ++c) {
                if (d[row * classes + static_cast<size_t>(c)] >
                    d[row * classes + static_cast<size_t>(arg)]) {
                    arg = c;
                }
            }
            if (arg == dataset.labels[static_cast<size_t>(idx[row])]) ++correct;
        }
        return 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
    };

    ProbeResult result;
    result.train_count = static_cast<int64_t>(train_idx.size());
    result.val_count = static_cast<int64_t>(val_idx.size());

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> shuffled = train_idx;
        Rng shuffle = stream_rng(cfg.seed, "probe.shuffle", static_cast<uint64_t>(epoch));
        for (int64_t i = static_cast<int64_t>(shuffled.size()) - 1; i > 0; --i) {
            const int64_t j =
                static_cast<int64_t>(shuffle.next_below(static_cast<uint64_t>(i + 1)));
            std::swap(shuffled[static_cast<size_t>(i)], shuffled[static_cast<size_t>(j)]);
        }
        for (size_t off = 0; off < shuffled.size(); off += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(shuffled.size(), off + static_cast<size_t>(cfg.batch));
            std::vector<int64_t> batch_idx(shuffled.begin() + static_cast<int64_t>(off),
                                           shuffled.begin() + static_cast<int64_t>(end));
            std::vector<int64_t> batch_labels;
            batch_labels.reserve(batch_idx.size());
            for (int64_t i : batch_idx) batch_labels.push_back(dataset.labels[static_cast<size_t>(i)]);
            GradTape tape;
            Tensor x = gather_rows(features, batch_idx);
            Tensor loss = cross_entropy(mlp_logits(x), batch_labels);
            tape.backward(loss);
            opt.step();
            opt.zero_grad();
        }
        result.best_val_accuracy = std::max(result.best_val_accuracy, accuracy_on(val_idx));
    }

    const uint64_t encoder_sum_after = parameters_checksum(model.named_parameters());
    if (encoder_sum_before != encoder_sum_after) {
        throw StateError("probe_run: encoder parameters changed during probe training");
    }
    return result;
}

} // namespace bertlab
