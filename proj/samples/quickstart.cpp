// Selects a 20-point coreset from a synthetic two-task dataset, trains the
// kernel learner on it, and compares against a uniform subset of the same size.
#include <iostream>

#include "bico/coreset.hpp"
#include "bico/harness.hpp"

int main() {
    using namespace bico;

    SplitTaskSpec spec;
    spec.num_tasks = 2;
    spec.dim = 5;
    spec.seed = 1;
    const SplitData split = make_split_tasks(spec);
    const Dataset train = concat_train(split.tasks);
    const Dataset test = split.tasks[0].test.concat(split.tasks[1].test);

    SelectionConfig sel;
    sel.size = 20;
    sel.kernel = KernelSpec::rbf(0.01);
    sel.lambda = 0.01;
    sel.seed = 7;
    const Coreset coreset = build_coreset(train, sel);
    const Coreset uniform = baseline_select(train, 20, Selector::uniform, 7);

    auto accuracy = [&](const Coreset &c) {
        KernelModel model(LearnerConfig{});
        model.fit(train.subset(c.indices), Vector::Constant(static_cast<Index>(c.size()), 1.0 / static_cast<double>(c.size())));
        return model.accuracy(test);
    };

    std::cout << "selected rows:";
    for (Index i : coreset.indices) { std::cout << ' ' << i; }
    std::cout << "\ncoreset accuracy " << accuracy(coreset) << ", uniform accuracy " << accuracy(uniform) << "\n";
}
