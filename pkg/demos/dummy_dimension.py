"""Why the pipeline appends dummy coordinates.

A continuous one-dimensional diffeomorphism is monotone, so no flow on
the line can separate class 0 = {|x| < 1} from class 1 = {|x| >= 1}: the
class-1 points sit on both sides.  The time-discretized flow can still
reach zero training error by jumping points past each other between
steps, but that shortcut reorders the line and costs a lot of kinetic
energy.  Appending a zero coordinate frees the flow to lift one class
out of the line instead, e.g. (x, u) -> (x, u + x^2 - 1): the learned
transformation preserves the ordering of the original coordinate and
stays much closer to the identity.

Run:  python demos/dummy_dimension.py
"""

import numpy as np

from diffeoflow import baselines as bl
from diffeoflow import pipeline as pl
from diffeoflow.objective import LabeledSet


def interval_data(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, 1))
    labels = (np.abs(x[:, 0]) >= 1.0).astype(np.int64)
    return LabeledSet(x, labels)


train = interval_data(80, seed=0)
test = interval_data(400, seed=1)

for extra in (0, 1):
    artifact, _ = pl.train(train, pl.TrainConfig(
        extra_dims=extra, dataset_id=f"interval-{extra}"))
    err = bl.evaluate(artifact, test).error
    order0 = np.argsort(artifact.z[0][:, 0])
    orderT = np.argsort(artifact.z[-1][:, 0])
    moved = int((order0 != orderT).sum())
    print(f"extra_dims={extra}: training error {artifact.train_error:.3f}, "
          f"test error {err:.3f}, kinetic energy {artifact.parts.kinetic:.2f}, "
          f"reordered points {moved}/{len(train)}")
