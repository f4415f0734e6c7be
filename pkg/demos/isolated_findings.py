"""
Counting isolated rejections
============================

S1 counts rejected voxels that are the only rejection in their 3x3x3
block; S2 counts those sharing the block with exactly one other rejection.
Scattered findings like these are usually noise in a smooth anatomy.
"""

from localdti import localtest as lt
from localdti.acquisition import default_scheme
from localdti.eigen import scalar_maps
from localdti.evaluation import confusion, isolated_counts
from localdti.fdr import FdrConfig, decide
from localdti.phantom import default_phantom, simulate
from localdti.pipeline import baseline_fa_threshold
from localdti.tensor import fit_volume
from localdti.volume import GridShape

spec = default_phantom(GridShape(128, 128, 16), snr=10.0)
tensors = fit_volume(simulate(spec, default_scheme(), seed=1))
maps = scalar_maps(tensors)
res = lt.test_volume(tensors, maps.lambdas)

rules = {m: decide(res.p, FdrConfig(mode=m)) for m in ("fdr", "fdr_l")}
rules["FA>0.35"] = baseline_fa_threshold(maps.fa, 0.35, domain=res.testable)

for name, d in rules.items():
    s1, s2 = isolated_counts(d.reject)
    cm = confusion(d, spec.labels)
    print(f"{name:8s} rejected {d.n_rejected:6d}  S1 {s1:4d}  S2 {s2:4d}  sp {cm.specificity:.3f}")
