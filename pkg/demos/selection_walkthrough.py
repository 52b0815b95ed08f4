"""
Selecting confident samples by hand
===================================

One selection step, done piece by piece on a single source domain: train a
small model, read class centers off its decision layer, assign target
samples, derive radii and thresholds, and count what survives.
"""

import numpy as np

from autos import data, nn, selection

spec = data.SyntheticSpec(K=2, C=4, d=16, per_class=100, separation=6.0, domain_shift=4.0)
sources, target = data.generate_synthetic(spec, seed=0)
scaler = data.Standardizer.fit(sources)
source = data.LabeledDomain("source0", scaler(sources[0].features), sources[0].labels, spec.C)
x_t = scaler(target.features)

###############################################################################
# A few epochs of label-smoothed cross-entropy on the first source.

hp = nn.Hyperparams(eta0=0.05)
rng = np.random.default_rng(0)
model = nn.init_model(spec.d, 32, spec.C, rng)
state = nn.TrainState.for_params(model.params())
for epoch in range(10):
    for idx in nn.iterate_minibatches(len(source), hp.batch_size, rng):
        loss, grads = nn.smoothed_ce_loss(model, source.features[idx], source.labels[idx], hp.mu)
        model = nn.train_step(model, grads, state, hp.eta0, hp.momentum)
print(f"last batch loss {loss:.3f}")

###############################################################################
# Centers are the normalized classifier rows. Each target sample goes to the
# nearest one in cosine distance.

centers = selection.cluster_centers(model.decision_w)
f_s, _ = nn.forward(model, source.features)
f_t, _ = nn.forward(model, x_t)
src_dist = selection.cosine_distances(f_s, centers)
tgt_dist = selection.cosine_distances(f_t, centers)
assigned = selection.assign_targets(f_t, centers)
print("target cluster sizes", np.bincount(assigned, minlength=spec.C))
print("agreement with hidden labels", np.mean(assigned == target.hidden_labels).round(3))

###############################################################################
# Per class: the source radius, the median-based source threshold and the
# tighter target threshold.

for c in range(spec.C):
    own = src_dist[source.labels == c, c]
    r = selection.cluster_radius(own, "mean")
    s_adj, t_adj = selection.compute_adjustments(own, r)
    d_s, d_t = selection.thresholds(r, hp.radius_alpha, s_adj, t_adj)
    print(f"class {c}: radius {r:.3f}  d_s {d_s:.3f}  d_t {d_t:.3f}")

###############################################################################
# The library does the same in one call, and also computes the density
# weights that feed the keep rule.

stats = selection.domain_statistics(model, source, x_t, hp)
print("confident source", stats.confident_src.size, "of", len(source))
print("confident target", stats.confident_tgt.size, "of", len(x_t))
print("pseudo-label accuracy",
      np.mean(stats.pseudo_labels == target.hidden_labels[stats.confident_tgt]).round(3))
print("densities", stats.density.round(2))
