from .classification import AVERAGES, ClassReport, ClassScores, classification_report
from .evaluate import evaluate_pairs, evaluate_run
from .localization import accuracy_at_iou, greedy_match, match_study
from .text import bleu, cider, meteor, meteor_score, rouge, text_scores, tokenize

__all__ = [
    "AVERAGES",
    "ClassReport",
    "ClassScores",
    "accuracy_at_iou",
    "bleu",
    "cider",
    "classification_report",
    "evaluate_pairs",
    "evaluate_run",
    "greedy_match",
    "match_study",
    "meteor",
    "meteor_score",
    "rouge",
    "text_scores",
    "tokenize",
]
