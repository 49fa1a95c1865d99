"""Toolkit for curating, training, evaluating and serving disaster-response
image classifiers: dataset consolidation with duplicate handling, transfer
learning with augmentation and self-training, masked multi-task learning,
significance testing, Grad-CAM explanations and a streaming pipeline.
"""

__version__ = "0.1.0"

from .schemas import (  # noqa: F401
    DAMAGE_SEVERITY,
    DISASTER_TYPES,
    HUMANITARIAN,
    INFORMATIVENESS,
    MISSING,
    ImageRecord,
    LabelVector,
    Manifest,
    TASK_ORDER,
    TASKS,
    TaskSchema,
    encode_label,
    get_task,
    label_vector,
    load_manifest,
    save_manifest,
)
