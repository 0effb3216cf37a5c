from .base import STRATEGIES, AttackConfig, AttackResult
from .boundary import boundary_attack
from .deepfool import deepfool_l2
from .fgsm import fgsm
from .jsma import jsma, saliency_map, select_features
from .suite import (ATTACKS, load_results, read_results_jsonl, run_attack_suite, save_adversarial,
                    write_results_jsonl)

__all__ = [
    "STRATEGIES", "AttackConfig", "AttackResult", "ATTACKS",
    "fgsm", "deepfool_l2", "jsma", "boundary_attack", "saliency_map", "select_features",
    "run_attack_suite", "write_results_jsonl", "read_results_jsonl", "save_adversarial", "load_results",
]
