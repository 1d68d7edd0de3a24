#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fastbci/evaluation.hpp"
#include "fastbci/synthetic.hpp"

using namespace fastbci;

namespace {

ClassifierSpec tiny_spec(NormKind norm) {
    ClassifierSpec s;
    s.channels = 8;
    s.time_points = 33;
    s.norm = norm;
    return s;
}

ActivityData tiny_data(std::uint64_t seed = 4) {
    SyntheticConfig c;
    c.train_subjects = {};
    c.test_subjects = {99, 100, 101};
    c.time_points = 33;
    c.trials_per_class = 22;
    c.seed = seed;
    return synthetic_cohort(c).activity(1);
}

Tensor logits(std::vector<double> v) {
    const std::size_t rows = v.size() / 2;
    return Tensor({rows, 2}, std::move(v));
}

}  // namespace

TEST(Accuracy, Examples) {
    const std::vector<int> labels{0, 1, 1};
    EXPECT_EQ(accuracy(logits({2, 1, 0, 3, -1, 0}), labels), 1.0);
    std::vector<int> q(22);
    std::vector<double> v;
    for (int i = 0; i < 22; ++i) {
        q[static_cast<std::size_t>(i)] = i < 11 ? 0 : 1;
        const bool right = i != 5;
        const bool predict_one = (q[static_cast<std::size_t>(i)] == 1) == right;
        v.push_back(predict_one ? 0.0 : 1.0);
        v.push_back(predict_one ? 1.0 : 0.0);
    }
    EXPECT_DOUBLE_EQ(accuracy(logits(v), q), 21.0 / 22.0);
    // Ties resolve to class 0.
    const std::vector<int> mixed{0, 0, 1, 1, 1};
    EXPECT_DOUBLE_EQ(accuracy(logits(std::vector<double>(10, 0.5)), mixed), 0.4);
    EXPECT_THROW(accuracy(logits({1, 2}), labels), ShapeError);
}

TEST(Finetune, CurveLengthAndZeroSteps) {
    const auto spec = tiny_spec(NormKind::batch);
    const auto data = tiny_data();
    Rng rng(1);
    const ParamSet p = build_classifier(spec, rng);
    const Episode ep = sample_episode(data.subject(99), 10, 11, rng, spec.channels, spec.time_points);
    FinetuneSpec ft;
    const Curve c = finetune_and_track(spec, p, ep, ft, rng);
    EXPECT_EQ(c.test_acc.size(), 11u);
    EXPECT_EQ(c.train_acc.size(), 11u);
    ft.steps = 0;
    const Curve zero = finetune_and_track(spec, p, ep, ft, rng);
    ASSERT_EQ(zero.test_acc.size(), 1u);
    EXPECT_EQ(zero.test_acc[0], c.test_acc[0]);
    EXPECT_EQ(zero.train_acc[0], c.train_acc[0]);
}

TEST(Finetune, VanishingRateGivesFlatCurve) {
    const auto spec = tiny_spec(NormKind::layer);
    const auto data = tiny_data();
    Rng rng(2);
    const ParamSet p = build_classifier(spec, rng);
    const Episode ep = sample_episode(data.subject(100), 10, 11, rng, spec.channels, spec.time_points);
    FinetuneSpec ft;
    ft.lr = 1e-300;
    const Curve c = finetune_and_track(spec, p, ep, ft, rng);
    for (std::size_t i = 1; i < c.test_acc.size(); ++i) {
        EXPECT_EQ(c.test_acc[i], c.test_acc[0]);
        EXPECT_EQ(c.train_acc[i], c.train_acc[0]);
    }
    ft.lr = 0.0;
    EXPECT_THROW(finetune_and_track(spec, p, ep, ft, rng), std::invalid_argument);
}

TEST(Finetune, ResumingEqualsOneLongRun) {
    const auto data = tiny_data();
    for (NormKind norm : {NormKind::batch, NormKind::layer}) {
        for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::gradient_descent}) {
            const auto spec = tiny_spec(norm);
            Rng rng(3);
            const ParamSet p = build_classifier(spec, rng);
            const Episode ep = sample_episode(data.subject(101), 10, 11, rng, spec.channels, spec.time_points);
            FinetuneSpec ft;
            ft.optimizer = kind;
            Finetuner split(spec, p, ft, Rng(5)), whole(spec, p, ft, Rng(5));
            split.step(ep.support, 3);
            split.step(ep.support, 4);
            whole.step(ep.support, 7);
            EXPECT_TRUE(split.params().identical_to(whole.params()));
        }
    }
}

TEST(Protocol, SingleRunSingleSubjectIsThatCurve) {
    const auto spec = tiny_spec(NormKind::batch);
    const auto data = tiny_data();
    Rng init(4);
    const ParamSet p = build_classifier(spec, init);
    const std::vector<int> subjects{100};
    FinetuneSpec ft;
    const auto rep = evaluate_fast_adaptability(spec, p, data, subjects, ft, {1, 77, 1});

    Rng rng(derive_seed(77, 0, 100));
    const Episode ep = sample_episode(data.subject(100), 10, 11, rng, spec.channels, spec.time_points);
    const Curve c = finetune_and_track(spec, p, ep, ft, rng);
    EXPECT_EQ(rep.mean_test, c.test_acc);
    EXPECT_EQ(rep.mean_train, c.train_acc);
    for (std::size_t i = 0; i < rep.points(); ++i) {
        EXPECT_EQ(rep.std_test[i], 0.0);
        EXPECT_EQ(rep.std_train[i], 0.0);
    }
}

TEST(Protocol, DeterministicAndThreadIndependent) {
    const auto spec = tiny_spec(NormKind::batch);
    const auto data = tiny_data();
    Rng init(5);
    const ParamSet p = build_classifier(spec, init);
    const ParamSet before = p.clone();
    const std::vector<int> subjects{99, 100, 101};
    FinetuneSpec ft;
    const auto a = evaluate_fast_adaptability(spec, p, data, subjects, ft, {4, 9, 1});
    const auto b = evaluate_fast_adaptability(spec, p, data, subjects, ft, {4, 9, 1});
    const auto c = evaluate_fast_adaptability(spec, p, data, subjects, ft, {4, 9, 3});
    EXPECT_EQ(report_csv(a), report_csv(b));
    EXPECT_EQ(report_csv(a), report_csv(c));
    EXPECT_EQ(report_metadata(a).dump(), report_metadata(c).dump());
    EXPECT_TRUE(p.identical_to(before));
    for (std::size_t i = 0; i < a.points(); ++i) {
        EXPECT_GE(a.mean_test[i], 0.0);
        EXPECT_LE(a.mean_test[i], 1.0);
        EXPECT_GE(a.std_test[i], 0.0);
    }
}

TEST(Protocol, SkipsSubjectsWithoutEnoughTrials) {
    const auto spec = tiny_spec(NormKind::layer);
    ActivityData data = tiny_data();
    data.subjects.at(101).trials.resize(30);  // 15 per class
    Rng init(6);
    const ParamSet p = build_classifier(spec, init);
    const std::vector<int> subjects{99, 101, 105};
    const auto rep = evaluate_fast_adaptability(spec, p, data, subjects, FinetuneSpec{}, {2, 1, 1});
    EXPECT_EQ(rep.subjects, std::vector<int>{99});
    EXPECT_EQ(rep.skipped, (std::vector<int>{101, 105}));
    const std::vector<int> none{105};
    EXPECT_THROW(evaluate_fast_adaptability(spec, p, data, none, FinetuneSpec{}, {2, 1, 1}), InsufficientTrialsError);
}

// Every trial of a class is the same pattern, so the model emits one logit
// pair per class; the dense bias is then placed between the two margins.
TEST(Protocol, SeparableFixtureScoresPerfectlyBeforeAdaptation) {
    const auto spec = tiny_spec(NormKind::layer);
    Rng rng(7);
    ParamSet p = build_classifier(spec, rng);
    std::vector<double> pattern[2];
    for (auto& pat : pattern) {
        pat.resize(spec.channels * spec.time_points);
        for (double& v : pat) {
            v = rng.normal();
        }
    }
    ActivityData data;
    data.activity = 2;
    data.channels = spec.channels;
    data.time_points = spec.time_points;
    for (int s : {99, 100}) {
        SubjectDataset ds;
        ds.subject = s;
        ds.activity = 2;
        for (int i = 0; i < 44; ++i) {
            ds.trials.push_back({pattern[i % 2], i % 2, s, 2});
        }
        data.subjects.emplace(s, ds);
    }
    std::vector<double> both(pattern[0]);
    both.insert(both.end(), pattern[1].begin(), pattern[1].end());
    const Tensor out = forward_logits(spec, p, Tensor({2, spec.channels, spec.time_points}, both), false, rng);
    const double d0 = out.data()[0] - out.data()[1];
    const double d1 = out.data()[2] - out.data()[3];
    ASSERT_NE(d0, d1);
    if (d0 < d1) {
        // Swap the class meaning of the patterns so that class 0 has the larger margin.
        for (auto& [id, ds] : data.subjects) {
            for (auto& t : ds.trials) {
                t.label = 1 - t.label;
            }
        }
    }
    auto bias = p.at("classifier.bias").mutable_data();
    bias[0] -= 0.5 * (d0 + d1);
    const std::vector<int> subjects{99, 100};
    const auto rep = evaluate_fast_adaptability(spec, p, data, subjects, FinetuneSpec{}, {5, 3, 1});
    EXPECT_EQ(rep.mean_test[0], 1.0);
    EXPECT_EQ(rep.std_test[0], 0.0);
}

TEST(Protocol, UntrainedModelIsNearChance) {
    const auto spec = tiny_spec(NormKind::layer);
    const auto data = tiny_data(11);
    Rng init(8);
    const ParamSet p = build_classifier(spec, init);
    const std::vector<int> subjects{99, 100, 101};
    FinetuneSpec ft;
    ft.steps = 0;
    const auto rep = evaluate_fast_adaptability(spec, p, data, subjects, ft, {30, 2, 1});
    EXPECT_NEAR(rep.mean_test[0], 0.5, 0.1);
}

TEST(CrossActivity, RequiresDifferentActivitiesAndRecordsBoth) {
    const auto spec = tiny_spec(NormKind::layer);
    const auto data = tiny_data();  // activity 1
    Rng init(9);
    const ParamSet p = build_classifier(spec, init);
    const std::vector<int> subjects{99};
    EXPECT_THROW(cross_activity_adapt(spec, p, 1, data, subjects, FinetuneSpec{}, {1, 0, 1}), std::invalid_argument);
    const auto rep = cross_activity_adapt(spec, p, 4, data, subjects, FinetuneSpec{}, {2, 0, 1});
    EXPECT_EQ(rep.source_activity, 4);
    EXPECT_EQ(rep.target_activity, 1);
    EXPECT_EQ(rep.points(), 11u);
}

TEST(FinetuneChoice, FollowsPretrainingStrategy) {
    const FinetuneSpec t = finetune_spec_for(PretrainStrategy::transfer, 2, 2);
    EXPECT_EQ(t.optimizer, OptimizerKind::adam);
    EXPECT_EQ(t.lr, 0.001);
    EXPECT_EQ(t.steps, 10u);
    const FinetuneSpec within = finetune_spec_for(PretrainStrategy::maml, 4, 4);
    EXPECT_EQ(within.optimizer, OptimizerKind::gradient_descent);
    EXPECT_EQ(within.lr, 0.001);
    EXPECT_EQ(finetune_spec_for(PretrainStrategy::maml, 1, 1).lr, 0.01);
    const FinetuneSpec across = finetune_spec_for(PretrainStrategy::maml, 1, 3);
    EXPECT_EQ(across.optimizer, OptimizerKind::gradient_descent);
    EXPECT_EQ(across.lr, 0.001);
}

TEST(ReportFile, CsvLayoutAndSidecar) {
    const auto spec = tiny_spec(NormKind::layer);
    const auto data = tiny_data();
    Rng init(10);
    const ParamSet p = build_classifier(spec, init);
    const std::vector<int> subjects{99, 100, 101};
    auto rep = evaluate_fast_adaptability(spec, p, data, subjects, FinetuneSpec{}, {2, 42, 1});
    rep.strategy = "transfer";
    rep.source_activity = 1;
    rep.config_hash = "abc123";
    const auto path = std::filesystem::temp_directory_path() / "fastbci_report.csv";
    write_report(rep, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line,
              "source_activity,target_activity,strategy,norm,iteration,mean_test_acc,std_test_acc,mean_train_acc,"
              "std_train_acc,runs,subjects,seed");
    std::vector<std::string> rows;
    while (std::getline(in, line)) {
        rows.push_back(line);
    }
    ASSERT_EQ(rows.size(), 11u);
    EXPECT_EQ(rows[0].rfind("1,1,transfer,layer,0,", 0), 0u);
    EXPECT_NE(rows[10].find(",2,99-101,42"), std::string::npos);
    std::ifstream meta(report_meta_path(path));
    const auto j = nlohmann::json::parse(meta);
    EXPECT_EQ(j["config_hash"], "abc123");
    EXPECT_EQ(j["finetune"]["optimizer"], "adam");
    EXPECT_EQ(j["per_subject_curves"].size(), 6u);
    std::filesystem::remove(path);
    std::filesystem::remove(report_meta_path(path));
}
