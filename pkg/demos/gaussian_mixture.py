"""Three overlapping Gaussians in 20 dimensions, three classes.

The mixture components share their means up to one unit, with wildly
different covariances, so the raw clouds overlap heavily.  The flow
pulls the three classes apart; the flow-view export projects the whole
trajectory onto the discriminant frame for plotting.

Run:  python demos/gaussian_mixture.py
"""

import numpy as np

from diffeoflow import baselines as bl
from diffeoflow import datasets as ds
from diffeoflow import pipeline as pl
from diffeoflow.objective import LabeledSet

train, test = ds.make_split(ds.DatasetSpec("mog", 100, seed=0),
                            n_test_per_class=500)

artifact, trace = pl.train(train, pl.TrainConfig(dataset_id="mog"))
print(f"{trace[-1].iteration} iterations, "
      f"training error {artifact.train_error:.3f}")

raw = LabeledSet(artifact.training_inputs(), artifact.labels)
print(f"raw logistic test error:         "
      f"{bl.evaluate(bl.logistic_fit(raw), test).error:.3f}")
print(f"transformed logistic test error: "
      f"{bl.evaluate(artifact, test).error:.3f}")

rows, frame = pl.export_flow_view(artifact)
np.savetxt("mog_flow.csv", rows, delimiter=",", fmt="%.8g",
           header="time,point,label,u,v,w", comments="")
print("wrote mog_flow.csv; the frame spans the first discriminant "
      "direction plus two principal axes")
