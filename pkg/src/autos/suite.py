"""The desk-scale synthetic suite: K=3 sources, C=4 classes, d=16, source 2 irrelevant.

Training runs at a larger step size and with more local passes than the
library defaults so that thirty epochs separate the domains; the target is
displaced along one direction so the teacher and the adaptation losses have
a gap to close.
"""

SUITE = {
    "data.synthetic.K": 3,
    "data.synthetic.C": 4,
    "data.synthetic.d": 16,
    "data.synthetic.per_class": 100,
    "data.synthetic.separation": 6.0,
    "data.synthetic.irrelevant_domains": [2],
    "data.synthetic.domain_shift": 8.0,
    "data.teacher_per_class": 1,
    "train.epochs": 30,
    "train.eta0": 0.05,
    "train.hidden": 48,
    "train.local_epochs": 10,
    "adapt.joint_dim": 16,
}

IRRELEVANT = 2
SEEDS = range(5)
