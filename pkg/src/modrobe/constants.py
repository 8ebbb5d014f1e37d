from __future__ import annotations

DEFAULT_MODALITIES = ("m0", "m1", "m2")

CHECKPOINT_MAGIC = b"MMRL"
CHECKPOINT_VERSION = 1
FEATURE_MAGIC = b"MMFD"
FEATURE_VERSION = 1

RUNS_DIR_ENV = "MODROBE_RUNS_DIR"
DEFAULT_RUNS_DIR = "runs"
CHECKPOINT_FILENAME = "model.mmrl"
MANIFEST_FILENAME = "manifest.json"

SPLIT_NAMES = ("pretrain", "train", "eval", "self_distill")

TASK_SINGLE_LABEL = "single-label"
TASK_MULTI_LABEL = "multi-label"
TASK_KINDS = (TASK_SINGLE_LABEL, TASK_MULTI_LABEL)

SCORE_MAP = "map"
SCORE_ACCURACY = "accuracy"
SCORE_KINDS = (SCORE_MAP, SCORE_ACCURACY)

PRETRAIN_METHODS = ("contrastive", "mae")
DOWNSTREAM_METHODS = ("probe", "finetune", "masd", "wiseft", "wiseft-ft")

# wiseft = MASD + probe, wiseft-ft = fine-tune + probe
METHOD_PREREQUISITES = {
    "probe": (),
    "finetune": ("probe",),
    "masd": ("probe",),
    "wiseft": ("probe", "masd"),
    "wiseft-ft": ("probe", "finetune"),
}


class Defaults:
    """데스크 스케일 기본값"""
    LATENT_DIM = 8
    TOKEN_COUNT = 8
    TOKEN_DIM = 16
    NOISE = (0.1, 0.3, 0.5)
    NUM_CLASSES = 8
    PRETRAIN_SIZE = 8000
    TRAIN_SIZE = 1000
    EVAL_SIZE = 2000
    SELF_DISTILL_FRACTION = 0.1

    HIDDEN = 64
    EMBED_DIM = 32
    DECODER_HIDDEN = 64

    TEMPERATURE = 0.07
    MASD_WEIGHT = 0.5
    DISTILL_TEMPERATURE = 1.0
    WISEFT_ALPHA = 0.75
    MASK_RATIOS = (0.8, 0.9, 0.5)

    PRETRAIN_EPOCHS = 30
    DOWNSTREAM_EPOCHS = 20
    BATCH_SIZE = 64


class AdamWDefaults:
    """AdamW 하이퍼파라미터 기본값"""
    LR = 8e-4
    BETAS = (0.9, 0.999)
    EPS = 1e-8
    WEIGHT_DECAY = 0.01


class NumericThresholds:
    """수치 안정성 관련 상수"""
    NORM_EPS = 1e-12
    BATCHNORM_EPS = 1e-5
    STANDARDIZE_EPS = 1e-5
    FINITE_DIFF_STEP = 1e-6
    # 이보다 작은 gradient 원소는 절대 오차로 비교
    RELATIVE_ERROR_FLOOR = 1e-2


class TrendThresholds:
    """손실 추세 검사 기준"""
    SMOOTHING_WINDOW = 3


WARNING_CODE_MAP = {
    "job_failed": "SWP-JOB-001",
    "job_skipped": "SWP-JOB-002",
    "loss_not_decreasing": "TRN-CHK-001",
    "masd_degenerate": "TRN-CFG-001",
    "matrix_incomplete": "MET-MISS-001",
    "empty_stratum": "MET-MISS-002",
    "classes_without_positives": "ING-CHK-001",
    "run_dir_reused": "CLI-RUN-001",
}
