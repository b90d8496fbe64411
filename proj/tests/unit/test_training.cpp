#include "testing.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <filesystem>
#include <fstream>

#include "pasta/conditioning.hpp"
#include "pasta/dataset.hpp"
#include "pasta/errors.hpp"
#include "pasta/log.hpp"
#include "pasta/training.hpp"

using namespace pasta;
using namespace pasta::train;
namespace fs = std::filesystem;

namespace {

net::NetConfig tiny_net() {
    net::NetConfig c;
    c.base_channels = 4;
    c.depth = 2;
    c.channel_multipliers = {1, 2};
    c.attention_resolutions = {};
    c.in_slices = 3;
    c.image_h = 8;
    c.image_w = 8;
    c.group_norm_groups = 2;
    c.res_blocks = 1;
    c.time_embed_dim = 8;
    c.clinical_embed_dim = 8;
    return c;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.batch_size = 4;
    t.lr = 2e-3;
    t.ema_decay = 0.9;
    t.log_every = 1000;
    return t;
}

struct Toy {
    data::Dataset ds;
    StackedData stacked;
};

const Toy& toy_data() {
    static const Toy toy = [] {
        log::set_level(log::Level::error);
        data::CohortOptions o;
        o.count = 12;
        o.seed = 3;
        o.spec.size = {8, 8, 8};
        Toy t;
        t.ds = data::generate_cohort(o);
        auto stats = conditioning::compute_stats(t.ds.records(data::Split::train));
        t.stacked = stack_split(t.ds, data::Split::train, stats, tiny_train(), 3);
        log::set_level(log::Level::info);
        return t;
    }();
    return toy;
}

Batch make_batch(std::uint64_t seed, torch::Dtype dtype, int T) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    Batch b;
    b.mri = torch::rand({2, 3, 8, 8}, gen).to(dtype);
    b.pet = torch::rand({2, 3, 8, 8}, gen).to(dtype);
    b.clinical = torch::randn({2, 15}, gen).to(dtype);
    b.roi = (torch::rand({2, 3, 8, 8}, gen) * 2 + 0.5).to(dtype);
    draw_noise(b, T, gen);
    return b;
}

bool same_weights(torch::nn::Module& a, torch::nn::Module& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!torch::equal(pa[i], pb[i])) return false;
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("task and diffusion losses on hand examples") {
    auto out = torch::tensor({{0.0, 1.0}, {1.0, 0.0}}, torch::kFloat64);
    auto tgt = torch::tensor({{0.0, 0.0}, {1.0, 1.0}}, torch::kFloat64);
    CHECK(loss_task(out, tgt, Distance::l1).item<double>() == doctest::Approx(0.5));
    CHECK(loss_task(out, tgt, Distance::l2).item<double>() == doctest::Approx(0.5));
    CHECK(loss_task(tgt, tgt).item<double>() == 0.0);
    CHECK_THROWS_AS(loss_task(out, torch::zeros({3}, torch::kFloat64)), ContractViolation);

    // |diff| = (1, 0, 0.5, 0.5), weights (1, 1, 2, 2): (1 + 0 + 1 + 1) / 4.
    auto x = torch::tensor({1.0, 0.0, 0.5, 0.5}, torch::kFloat64);
    auto p = torch::tensor({0.0, 0.0, 0.0, 1.0}, torch::kFloat64);
    auto w = torch::tensor({1.0, 1.0, 2.0, 2.0}, torch::kFloat64);
    CHECK(loss_diff(x, p, w).item<double>() == doctest::Approx(0.75));
    CHECK(loss_diff(x, p, {}).item<double>() == doctest::Approx(0.5));
    CHECK_THROWS_AS(loss_diff(x, p, -w), ContractViolation);

    LossWeights lw;
    lw.lambda_cycle = -1;
    CHECK_THROWS_AS(lw.validate(), ConfigError);
}

TEST_CASE("pairing is checked") {
    auto b = make_batch(1, torch::kFloat32, 10);
    b.mri_ids = {"a#0", "b#1"};
    b.pet_ids = {"a#0", "b#2"};
    CHECK_THROWS_AS(b.check_paired(), ContractViolation);
}

TEST_CASE("noise draw ranges") {
    auto b = make_batch(2, torch::kFloat32, 7);
    CHECK(b.t.min().item<std::int64_t>() >= 1);
    CHECK(b.t.max().item<std::int64_t>() <= 7);
    CHECK(b.eps_pet.sizes() == b.pet.sizes());
    CHECK(b.eps_mri.sizes() == b.mri.sizes());
}

TEST_CASE("lambda_cycle zero reproduces the non-cycle objective") {
    auto net = net::build_dual_arm(tiny_net(), 11);
    auto sched = diffusion::build_cosine_schedule(50);
    auto b = make_batch(5, torch::kFloat32, 50);
    ObjectiveOptions with;
    with.weights.lambda_cycle = 0.0;
    ObjectiveOptions without = with;
    without.cycle = false;
    auto a = cyclex_round(net, b, sched, with);
    auto c = cyclex_round(net, b, sched, without);
    CHECK(torch::equal(a.task, c.task));
    CHECK(torch::equal(a.diff, c.diff));
    CHECK(a.total.item<float>() == c.total.item<float>());
    CHECK(a.cycle_fwd.item<double>() >= 0.0);
    CHECK(a.cycle_bwd.item<double>() >= 0.0);

    ObjectiveOptions full;
    auto f = cyclex_round(net, b, sched, full);
    const double expect = 0.1 * f.task.item<double>() + f.diff.item<double>() + f.cycle_fwd.item<double>() +
                          f.cycle_bwd.item<double>();
    CHECK(f.total.item<double>() == doctest::Approx(expect).epsilon(1e-6));

    // The exchange cycle adds no parameters.
    TrainConfig tc = tiny_train();
    tc.objective.cycle = false;
    Trainer t1(tiny_net(), tc, 50, 1);
    tc.objective.cycle = true;
    Trainer t2(tiny_net(), tc, 50, 1);
    CHECK(net::parameter_count(*t1.model()) == net::parameter_count(*t2.model()));
}

TEST_CASE("objective gradient matches finite differences") {
    auto cfg = tiny_net();
    cfg.base_channels = 2;
    cfg.time_embed_dim = 4;
    cfg.clinical_embed_dim = 4;
    auto net = net::build_dual_arm(cfg, 17);
    net->to(torch::kFloat64);
    MESSAGE("toy parameters: " << net::parameter_count(*net));
    CHECK(net::parameter_count(*net) <= 10000);
    auto sched = diffusion::build_cosine_schedule(20);
    auto b = make_batch(9, torch::kFloat64, 20);
    ObjectiveOptions opts;
    opts.task_distance = Distance::l2;
    opts.diff_distance = Distance::l2;

    for (auto& p : net->parameters()) p.mutable_grad() = torch::Tensor();
    cyclex_round(net, b, sched, opts).total.backward();

    auto params = net->named_parameters();
    std::mt19937_64 rng(4);
    int checked = 0;
    double worst = 0.0;
    for (const auto& item : params) {
        auto p = item.value();
        if (!p.grad().defined()) continue;
        const auto flat = p.view({-1});
        const auto g = p.grad().view({-1});
        for (int k = 0; k < 2; ++k) {
            const auto idx = static_cast<std::int64_t>(rng() % flat.numel());
            const double h = 1e-5;
            double lp, lm;
            {
                torch::NoGradGuard ng;
                const double orig = flat[idx].item<double>();
                flat[idx].fill_(orig + h);
                lp = cyclex_round(net, b, sched, opts).total.item<double>();
                flat[idx].fill_(orig - h);
                lm = cyclex_round(net, b, sched, opts).total.item<double>();
                flat[idx].fill_(orig);
            }
            const double fd = (lp - lm) / (2 * h);
            const double an = g[idx].item<double>();
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
            ++checked;
        }
    }
    MESSAGE("checked " << checked << " coordinates, worst relative error " << worst);
    CHECK(checked > 20);
    CHECK(worst < 1e-4);
}

TEST_CASE("zero learning rate freezes weights and the ema tracks a fixed point") {
    auto tc = tiny_train();
    tc.lr = 0.0;
    Trainer tr(tiny_net(), tc, 50, 2);
    auto before = net::build_dual_arm(tiny_net(), 0);
    copy_weights(*before, *tr.model());
    for (int i = 0; i < 3; ++i) tr.step(toy_data().stacked);
    CHECK(same_weights(*before, *tr.model()));
    CHECK(same_weights(*tr.ema(), *tr.model()));
}

TEST_CASE("ema update is a lerp toward the live weights") {
    auto tc = tiny_train();
    tc.ema_decay = 0.75;
    Trainer tr(tiny_net(), tc, 50, 2);
    {
        torch::NoGradGuard ng;
        for (auto& p : tr.model()->parameters()) p.add_(1.0);
    }
    auto ema0 = tr.ema()->parameters()[0].clone();
    auto live = tr.model()->parameters()[0].clone();
    tr.ema_update();
    auto expect = 0.75 * ema0 + 0.25 * live;
    CHECK(torch::allclose(tr.ema()->parameters()[0], expect, 1e-6, 1e-6));
}

TEST_CASE("checkpoints: byte determinism, resume, mismatch refusal") {
    log::set_level(log::Level::error);
    const auto dir = fs::temp_directory_path() / "pasta_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto& data = toy_data().stacked;

    Trainer straight(tiny_net(), tiny_train(), 50, 8);
    for (int i = 0; i < 6; ++i) straight.step(data);

    Trainer first(tiny_net(), tiny_train(), 50, 8);
    for (int i = 0; i < 3; ++i) first.step(data);
    first.set_metadata({{"note", 1}});
    first.save(dir / "a.pt");
    first.save(dir / "b.pt");
    CHECK(slurp(dir / "a.pt") == slurp(dir / "b.pt"));

    Trainer twin(tiny_net(), tiny_train(), 50, 8);
    for (int i = 0; i < 3; ++i) twin.step(data);
    twin.set_metadata({{"note", 1}});
    twin.save(dir / "c.pt");
    CHECK(slurp(dir / "a.pt") == slurp(dir / "c.pt"));

    auto resumed = trainer_from_checkpoint(dir / "a.pt");
    CHECK(resumed->step_count() == 3);
    CHECK(resumed->metadata()["note"] == 1);
    for (int i = 0; i < 3; ++i) resumed->step(data);
    CHECK(same_weights(*resumed->model(), *straight.model()));
    CHECK(same_weights(*resumed->ema(), *straight.ema()));

    auto other = tiny_train();
    other.lr = 1e-3;
    Trainer mismatched(tiny_net(), other, 50, 8);
    try {
        mismatched.load(dir / "a.pt");
        FAIL("load accepted a different config");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.lr") != std::string::npos);
    }
    CHECK_THROWS_AS(read_checkpoint_config(dir / "missing.pt"), DataError);
    fs::remove_all(dir);
    log::set_level(log::Level::info);
}

TEST_CASE("toy training reduces the objective") {
    auto tc = tiny_train();
    tc.lr = 3e-3;
    Trainer tr(tiny_net(), tc, 50, 21);
    const auto& data = toy_data().stacked;
    double early = 0, late = 0;
    for (int i = 0; i < 200; ++i) {
        auto log = tr.step(data);
        CHECK(std::isfinite(log.total));
        if (i < 20) early += log.total;
        if (i >= 180) late += log.total;
    }
    MESSAGE("mean loss first 20: " << early / 20 << ", last 20: " << late / 20);
    CHECK(late < 0.7 * early);
}

TEST_CASE("train config json is strict") {
    nlohmann::json j = tiny_train();
    auto back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);
    j["learning_rate"] = 1;
    CHECK_THROWS_AS(j.get<TrainConfig>(), ConfigError);
}

TEST_CASE("exchange cycle vanishes for exact inverse translators") {
    // PET = g(MRI) - drop * roi with the phantom transfer g; MRI recovered through g^-1.
    const double k = 3.0, scale = 0.95 / (1.0 - std::exp(-3.0));
    auto gen = at::make_generator<at::CPUGeneratorImpl>(6);
    auto roi = (torch::rand({3, 8, 8}, gen, torch::kFloat64) > 0.7).to(torch::kFloat64) * 0.15;
    auto g = [&](const torch::Tensor& m) { return (1.0 - torch::exp(-k * m)) * scale; };
    auto g_inv = [&](const torch::Tensor& p) { return -torch::log(1.0 - p / scale) / k; };
    Translator to_pet = [&](const torch::Tensor& m) { return g(m) - roi; };
    Translator to_mri = [&](const torch::Tensor& p) { return g_inv(p + roi); };
    auto mri = torch::rand({4, 3, 8, 8}, gen, torch::kFloat64) * 0.8 + 0.1;
    auto pet = to_pet(mri);
    auto cyc = exchange_cycle(to_mri, to_pet, mri, pet, pet.clone());
    CHECK(cyc.fwd.item<double>() <= 1e-12);
    CHECK(cyc.bwd.item<double>() <= 1e-12);

    Translator off = [&](const torch::Tensor& x) { return x + 0.25; };
    auto bad = exchange_cycle(off, to_pet, mri, pet, pet);
    CHECK(bad.fwd.item<double>() > 0.01);
}
