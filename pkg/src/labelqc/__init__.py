"""Label-quality engine for crowdsourced geo annotations.

Weak supervision over heuristic labeling functions produces probabilistic
training labels; a small tabular transformer pretrained on them and
fine-tuned on a handful of expert verdicts flags likely mistakes in real
time through an HTTP service.
"""

__version__ = "0.1.0"
