"""Pipeline for building non-instructional fine-tuning datasets.

Stages: corpus sampling -> document halving -> teacher completion ->
content filtering -> dataset export / ablation subsets, plus LoRA weight
merging, trainer config emission, and judge-score aggregation.
"""

__version__ = "0.1.0"
