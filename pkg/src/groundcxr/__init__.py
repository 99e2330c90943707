"""Tooling for grounded chest X-ray vision-language experiments.

Bounding-box geometry, the grounded-finding text codec, DICOM preprocessing,
a numpy reference of the dual-encoder projection head and the evaluation
metrics (Accuracy@IoU, multilabel reports, BLEU/ROUGE/METEOR/CIDEr).
"""

__version__ = "0.1.0"
