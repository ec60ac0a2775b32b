#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bertlab/model.hpp"
#include "support/test_util.hpp"

using namespace bertlab;

namespace {

struct ModelFixture {
    std::vector<Document> docs;
    Vocab vocab;
    std::vector<PretrainExample> batch;

    ModelFixture() {
        docs = testutil::toy_corpus(303, 3, 5, 4, 8, 20);
        vocab = build_vocab(docs, 1);
        batch = testutil::make_examples(docs, vocab, 303, 16, true, 2);
    }
};

} // namespace

TEST_CASE("full transformer microstep gradients match finite differences (2 layers, d=8)") {
    ModelFixture f;
    HeadPlacement placement{2, 1, true, true};
    PretrainModel model = PretrainModel::init(testutil::tiny_encoder_config(f.vocab.size(), 2),
                                              placement, ConcatMode::cls_embedding, 11);
    {
        GradTape tape;
        auto breakdown = pretrain_loss(model, f.batch, false, nullptr);
        tape.backward(breakdown.total);
    }
    auto loss_fn = [&] {
        return pretrain_loss(model, f.batch, false, nullptr).total.item();
    };
    auto res = testutil::finite_difference_check(model.named_parameters(), loss_fn);
    INFO("worst: ", res.worst_param, "[", res.worst_index, "] analytic ", res.worst_analytic,
         " numeric ", res.worst_numeric);
    CHECK(res.max_err < 1e-4);
    CHECK(res.elements_checked > 1000);
}

TEST_CASE("finetune QA loss gradients match finite differences") {
    ModelFixture f;
    PretrainModel base = PretrainModel::init(testutil::tiny_encoder_config(f.vocab.size(), 2),
                                             HeadPlacement{2, 2, true, false},
                                             ConcatMode::none, 4);
    FinetuneModel model =
        FinetuneModel::from_pretrained(base, FtTask::qa, ConcatMode::nsp_output, 4);

    QaRecord rec;
    rec.question = "w1 w2";
    rec.context = "w3 w4 w5 w6";
    rec.answer_text = "w4 w5";
    rec.answer_start = 3;
    auto built = build_qa_examples(std::span(&rec, 1), f.vocab, 16);
    REQUIRE(built.examples.size() == 1);
    const FinetuneExample& ex = built.examples[0];

    {
        GradTape tape;
        tape.backward(qa_loss(model, ex, false, nullptr));
    }
    auto loss_fn = [&] { return qa_loss(model, ex, false, nullptr).item(); };
    auto res = testutil::finite_difference_check(model.trainable_parameters(), loss_fn);
    INFO("worst: ", res.worst_param, "[", res.worst_index, "]");
    CHECK(res.max_err < 1e-4);
}

TEST_CASE("finetune NLI loss gradients match finite differences") {
    ModelFixture f;
    PretrainModel base = PretrainModel::init(testutil::tiny_encoder_config(f.vocab.size(), 2),
                                             HeadPlacement{2, 1, true, false},
                                             ConcatMode::none, 6);
    FinetuneModel model = FinetuneModel::from_pretrained(base, FtTask::nli, ConcatMode::none, 6);

    NliRecord rec{"w1 w2 w3", "w4 w5", "neutral"};
    auto built = build_nli_examples(std::span(&rec, 1), f.vocab, 16);
    const FinetuneExample& ex = built.examples[0];
    {
        GradTape tape;
        tape.backward(nli_loss(model, ex, false, nullptr));
    }
    auto loss_fn = [&] { return nli_loss(model, ex, false, nullptr).item(); };
    auto res = testutil::finite_difference_check(model.trainable_parameters(), loss_fn);
    CHECK(res.max_err < 1e-4);
}

TEST_CASE("dropout gradients propagate the exact forward mask") {
    // With a fixed stream, training-mode dropout is a deterministic linear
    // map, so its gradient must match finite differences re-run on the same
    // stream.
    Rng rng(123);
    Tensor x = Tensor::randn({6, 6}, rng, 1.0, true);
    auto forward = [&] {
        Rng stream = stream_rng(9, "drop", 0);
        return sum(gelu(dropout(x, 0.3, true, stream)));
    };
    {
        GradTape tape;
        tape.backward(forward());
    }
    auto res = testutil::finite_difference_check(x, [&] { return forward().item(); });
    CHECK(res.max_err < 1e-5);
}
