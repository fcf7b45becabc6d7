"""Two building blocks on toy inputs: downstream weights and reply-time medians.

    python3 demos/04_networks_and_survival.py
"""
from techadopt.networks import DependencyGraph, dependency_proximity, downstream_layers, package_weights
from techadopt.survival import km_fit, median_survival

# a small registry: 'both' sits one layer below data.table and two below tidyr
registry = DependencyGraph.from_records([
    {"package": "data.table", "deps": []}, {"package": "tidyr", "deps": []},
    {"package": "fastcsv", "deps": ["data.table"]},
    {"package": "tidyhelpers", "deps": ["tidyr"]},
    {"package": "both", "deps": ["data.table", "tidyhelpers"]},
])
w = package_weights(downstream_layers(registry, "data.table"), downstream_layers(registry, "tidyr"))
for pkg, pw in w.items():
    print(f"{pkg:<12} D_ad={pw.d_ad} D_at={pw.d_at} W_ad={pw.w_ad} W_at={pw.w_at}")
p_d, p_t = dependency_proximity(["fastcsv", "both", "ggplot2"], w)
print(f"project using fastcsv, both, ggplot2: Prx2DT={p_d}, Prx2TD={p_t}\n")

# issue reply times in days; False marks an issue nobody had answered yet
durations = [(0.5, True), (1.0, False), (1.2, True), (2.0, True), (3.5, False), (4.0, True)]
curve = km_fit(durations)
for t, s in zip(curve.times, curve.survival):
    print(f"S({t:g}) = {s:.3f}")
print(f"median time to first reply: {median_survival(curve)} days")
