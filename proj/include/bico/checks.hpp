#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bico/coreset.hpp"
#include "bico/dataset.hpp"
#include "bico/expdesign.hpp"
#include "bico/hypergrad.hpp"
#include "bico/inner.hpp"
#include "bico/io.hpp"
#include "bico/kernels.hpp"
#include "bico/streaming.hpp"

namespace bico {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace checks {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

/// KRR proxy problem on `data` with basis = support = `support`.
inline InnerProblem proxy_problem(const Dataset &data, const std::vector<Index> &support, const Vector &weights,
                                  const KernelSpec &kernel, double lambda, Loss loss = Loss::squared) {
    InnerProblem p;
    p.cross_block = cross_gram(kernel, data.subset(support).features, data.features);
    p.gram_block.resize(static_cast<Index>(support.size()), static_cast<Index>(support.size()));
    for (size_t j = 0; j < support.size(); ++j) { p.gram_block.col(static_cast<Index>(j)) = p.cross_block.col(support[j]); }
    p.gram_block = 0.5 * (p.gram_block + p.gram_block.transpose()).eval();
    p.labels = data.targets;
    p.support = support;
    p.weights = weights;
    p.lambda = lambda;
    p.loss = loss;
    return p;
}

inline double pipeline_value(const InnerProblem &base, Index k, double wk) {
    InnerProblem p = base;
    const auto it = std::find(p.support.begin(), p.support.end(), k);
    p.weights[it - p.support.begin()] = wk;
    return outer_value(p, solve_inner(p).alpha, OuterObjective::total());
}

inline Vector uniform(Index n, double lo, double hi, Rng &rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (Index i = 0; i < n; ++i) { v[i] = u(rng); }
    return v;
}

inline DesignInstance design_from(const Matrix &x, Index max_rows, double sigma2, double lambda) {
    DesignInstance inst;
    inst.x = x.topRows(std::min(max_rows, x.rows()));
    inst.sigma2 = sigma2;
    inst.lambda = lambda;
    return inst;
}

inline double brute_force_best(const DesignInstance &inst, Index m) {
    const Index n = inst.n();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<Index> set;
    std::function<void(Index)> rec = [&](Index start) {
        if (static_cast<Index>(set.size()) == m) {
            best = std::max(best, design_reward(inst, set));
            return;
        }
        for (Index i = start; i < n; ++i) {
            set.push_back(i);
            rec(i + 1);
            set.pop_back();
        }
    };
    rec(0);
    return best;
}

}  // namespace checks

/// Invariant and property suite over a small dataset (features standardized
/// by the caller if needed). Each check catches its own exceptions and
/// reports them as failures.
inline std::vector<CheckResult> run_checks(const Dataset &data, std::uint64_t seed) {
    using namespace checks;
    std::vector<CheckResult> out;
    auto run = [&](const std::string &name, const std::function<std::string(bool &)> &body) {
        CheckResult r{name, false, ""};
        try {
            r.detail = body(r.passed);
        } catch (const std::exception &e) {
            r.passed = false;
            r.detail = e.what();
        }
        out.push_back(std::move(r));
    };
    Rng rng(seed);
    const Index n = data.size();
    const KernelSpec kernel = KernelSpec::rbf(1.0 / static_cast<double>(std::max<Index>(1, data.dim())));
    const Index s = std::min<Index>(n, 4);
    const std::vector<Index> support = sample_without_replacement(iota_indices(n), static_cast<size_t>(s), rng);
    const Vector w = uniform(s, 0.5, 2.0, rng);

    run("implicit gradient matches finite differences", [&](bool &ok) {
        const InnerProblem p = proxy_problem(data, support, w, kernel, 0.1);
        const auto sol = solve_inner(p);
        const auto hg = implicit_grad(p, sol, OuterObjective::total(), support);
        double worst = 0.0;
        for (size_t j = 0; j < support.size(); ++j) {
            const double h = 1e-5;
            const double fd = (pipeline_value(p, support[j], w[static_cast<Index>(j)] + h) -
                               pipeline_value(p, support[j], w[static_cast<Index>(j)] - h)) /
                              (2 * h);
            const double err = std::abs(fd - hg.values[static_cast<Index>(j)]);
            worst = std::max(worst, err / std::max(1e-3 * std::abs(fd), 1e-5));
        }
        ok = worst <= 1.0;
        return "max error / tolerance " + fmt(worst);
    });

    run("selection rules agree", [&](bool &ok) {
        Index mismatches = 0, evaluated = 0;
        for (int t = 0; t < 10; ++t) {
            const auto sup = sample_without_replacement(iota_indices(n), static_cast<size_t>(std::max<Index>(1, s - 1)), rng);
            const Vector ws = uniform(static_cast<Index>(sup.size()), 0.5, 2.0, rng);
            const InnerProblem p = proxy_problem(data, sup, ws, kernel, 0.1);
            const auto sol = solve_inner(p);
            std::vector<Index> cands;
            for (Index i = 0; i < n; ++i) {
                if (std::find(sup.begin(), sup.end(), i) == sup.end()) { cands.push_back(i); }
            }
            if (cands.empty()) { continue; }
            const auto hg = implicit_grad(p, sol, OuterObjective::total(), cands);
            const Vector bl = bilinear_scores(p, sol, OuterObjective::total(), cands);
            const Vector inf = influence_scores(p, sol, OuterObjective::total(), cands);
            Index a = 0, b = 0, c = 0;
            for (Index i = 1; i < hg.values.size(); ++i) {
                if (hg.values[i] < hg.values[a]) { a = i; }
                if (bl[i] > bl[b]) { b = i; }
                if (inf[i] > inf[c]) { c = i; }
            }
            mismatches += (a != b) + (a != c);
            ++evaluated;
        }
        ok = evaluated > 0 && mismatches == 0;
        return std::to_string(mismatches) + " mismatches over " + std::to_string(evaluated) + " instances";
    });

    run("rescaling (c w, c lambda) leaves the inner solution unchanged", [&](bool &ok) {
        const InnerProblem p = proxy_problem(data, support, w, kernel, 0.1);
        const Matrix base = solve_inner(p).alpha;
        double worst = 0.0;
        for (double c : {0.1, 10.0}) {
            InnerProblem q = p;
            q.weights *= c;
            q.lambda *= c;
            worst = std::max(worst, (solve_inner(q).alpha - base).cwiseAbs().maxCoeff());
        }
        ok = worst <= 1e-8;
        return "max deviation " + fmt(worst);
    });

    run("coreset selection is deterministic", [&](bool &ok) {
        SelectionConfig cfg;
        cfg.size = std::min<Index>(n, 3);
        cfg.kernel = kernel;
        cfg.lambda = 0.1;
        cfg.seed = seed;
        const Coreset a = build_coreset(data, cfg);
        const Coreset b = build_coreset(data, cfg);
        ok = a == b && static_cast<Index>(a.size()) == cfg.size;
        return "size " + std::to_string(a.size());
    });

    const Matrix xd = data.features;
    const DesignInstance inst = design_from(xd, 10, 1.0, 1.0);

    run("Bayes-V closed form matches dense inverse", [&](bool &ok) {
        const Vector wd = uniform(inst.n(), 0.0, 2.0, rng);
        Matrix f = inst.x.transpose() * wd.asDiagonal() * inst.x;
        f.diagonal().array() += inst.lambda * inst.sigma2;
        const double direct = inst.sigma2 / (2.0 * static_cast<double>(inst.n())) *
                              (inst.x * f.inverse() * inst.x.transpose()).trace();
        const double err = std::abs(obj_bayes_v(inst, wd) - direct) / std::abs(direct);
        ok = err <= 1e-10;
        return "relative error " + fmt(err);
    });

    run("Bayes-V Hessian is PSD and below the smoothness bound", [&](bool &ok) {
        const Vector wd = uniform(inst.n(), 0.0, 2.0, rng);
        const Matrix h = hessian_bayes_v(inst, wd);
        const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(h, Eigen::EigenvaluesOnly).eigenvalues();
        const double bound = bayes_v_smoothness_bound(inst);
        ok = ev.minCoeff() >= -1e-8 * h.trace() / static_cast<double>(inst.n()) && ev.maxCoeff() <= bound;
        return "eigenvalues [" + fmt(ev.minCoeff()) + ", " + fmt(ev.maxCoeff()) + "], bound " + fmt(bound);
    });

    run("greedy design meets the weak-submodular guarantee", [&](bool &ok) {
        const Index m = std::min<Index>(3, inst.n());
        const double gamma = weak_submodularity_gamma(inst);
        const double probe = submodularity_ratio_probe(inst, 200, seed);
        const double greedy = design_reward(inst, greedy_design(inst, m));
        const double opt = brute_force_best(inst, m);
        ok = probe >= gamma - 1e-8 && greedy >= (1.0 - std::exp(-gamma)) * opt - 1e-12;
        return "gamma " + fmt(gamma) + ", probe " + fmt(probe) + ", greedy/OPT " + fmt(greedy / opt);
    });

    run("merge-reduce conserves beta and respects the slot bound", [&](bool &ok) {
        const Index slots = 3;
        MergeReduceBuffer buffer(slots * 2, slots,
                                 [](const Dataset &pts, Index k, std::uint64_t) {
                                     Coreset c;
                                     for (Index i = 0; i < std::min(k, pts.size()); ++i) {
                                         c.indices.push_back(i);
                                         c.weights.push_back(1.0);
                                     }
                                     return c;
                                 },
                                 1.0, seed);
        bool fine = true;
        const Index batch = std::max<Index>(1, std::min<Index>(n, 4));
        for (Index b = 1; b <= 7; ++b) {
            std::vector<Index> rows;
            for (Index i = 0; i < batch; ++i) { rows.push_back((b * batch + i) % n); }
            buffer.consume(data.subset(rows), rows);
            double sum = 0.0;
            for (double v : buffer.betas()) { sum += v; }
            fine = fine && std::abs(sum - static_cast<double>(b)) < 1e-12 &&
                   static_cast<Index>(buffer.slots().size()) <= slots;
        }
        const std::vector<double> expected{4.0, 2.0, 1.0};
        ok = fine && buffer.betas() == expected;
        std::string profile;
        for (double v : buffer.betas()) { profile += (profile.empty() ? "" : ",") + fmt(v); }
        return "profile after 7 batches (" + profile + ")";
    });

    run("f32bin round trip is bit-identical", [&](bool &ok) {
        const std::string path = (std::filesystem::temp_directory_path() /
                                  ("bico_check_" + std::to_string(seed) + "_" + std::to_string(n) + ".bin")).string();
        Matrix x = data.features.cast<float>().cast<double>();
        write_f32bin(path, x);
        const Matrix back = read_f32bin(path);
        std::filesystem::remove(path);
        ok = back.rows() == x.rows() && back.cols() == x.cols() && back == x;
        return std::to_string(back.rows()) + "x" + std::to_string(back.cols());
    });

    return out;
}

}  // namespace bico
