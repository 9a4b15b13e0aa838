"""Cross-modal meta-alignment on synthetic worlds.

Modules
-------
numkernel   dense MLPs with hand-derived gradients, SGD and Adam
synthworld  linear teacher world and clustered-concept world generators
alignment   strong and weak contrastive alignment losses
metalearn   meta-alignment, Reptile meta-classification and baselines
analysis    closed-form risks, Monte-Carlo risk, set counts, path planning
metrics     accuracy aggregation and retrieval metrics
cli         batch experiment runner
"""
__version__ = "0.1.0"
