"""
Bayesian optimization over architectures
========================================

First a cheap objective with a known optimum shows how the Matern GP and
expected improvement close in faster than random sampling. Then a short
search tunes the wide-deep classifier itself.
"""
import numpy as np

from naswd import evaluation, nasbo, synth

space = nasbo.SearchSpace()

# negative squared distance to a hidden target in the unit-cube encoding
target = space.snap(np.random.default_rng([0, 99]).random(6))[0]
objective = lambda s: -float(np.sum((space.encode(s) - target) ** 2))  # noqa: E731
print("hidden target:", space.decode(target))

best, trials = nasbo.bo_search(objective, space, budget=30, n_init=8, seed=0)
running = np.maximum.accumulate([t.objective for t in trials])
rand_best, rand_trials = nasbo.random_search(objective, space, budget=30, seed=0)
rand_running = np.maximum.accumulate([t.objective for t in rand_trials])
for i in (7, 14, 21, 29):
    print(f"after {i + 1:2d} trials: BO {running[i]:8.4f}   random {rand_running[i]:8.4f}")
print("BO found", best.spec)

# a real objective: 3-fold accuracy on a small synthetic set
table = synth.synth_table(synth.SyntheticSpec(n_per_class=(20, 20, 20), seed=4), regions=False)
cv = evaluation.cv_objective("naswd", "classify3", table, k=3, seed=0,
                             train_kw=dict(max_epochs=200, patience=20))
best, trials = nasbo.bo_search(cv, space, budget=6, n_init=4, seed=0,
                               callback=lambda t: print(f"  trial {t.index} [{t.phase}] "
                                                        f"{t.objective:.3f} {t.spec}"))
nasbo.write_trial_log(trials, "demo_out/search/trials.jsonl", "demo_out/search/seconds.jsonl")
print("best:", best.spec, "accuracy %.3f" % best.objective)
