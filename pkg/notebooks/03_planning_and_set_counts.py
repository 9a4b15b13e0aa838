# %% [markdown]
# # Planning through modalities, and how coarse weak sets should be
#
# A target modality with a weak direct classifier can instead route through
# an aligned source modality and a related task.

# %%
from crossmodal import analysis as an

g = an.ModalityTaskGraph()
g.add_edge("align", "audio", "image", 0.1)
g.add_edge("classify", "image", "image_labels", 0.0)
g.add_edge("taskrel", "image_labels", "audio_labels", 0.05)
g.add_edge("classify", "audio", "audio_labels", 0.5)
plan = an.plan_path(g, "audio", "audio_labels")
print(" -> ".join(plan.vertices), f"total {plan.total_error:.2f} vs direct {plan.direct_error:.2f}")

# %% [markdown]
# Weak alignment by clustering: few sets are coarse, many sets are noisy.
# The best set count grows roughly as the square root of the sample count.

# %%
cfg = an.SetCountConfig(n_seeds=4)
fits = an.fit_setcount_sweep(an.sweep_setcount(cfg))
for f in fits:
    print(f"N={f.N:5d}  fitted S*={f.s_star:6.2f}  best grid S={f.s_best}")
print("log-log slope", round(an.scaling_slope([f.N for f in fits], [f.s_star for f in fits]), 3))
