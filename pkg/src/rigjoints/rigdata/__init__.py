"""Rigged-model data: skeleton template, dataset IO, conditioning and fixtures."""

from .conditioning import (
    PoseResult,
    RotationLimits,
    augment,
    baseline_bone_hits,
    bone_rays,
    condition_cloud,
    correct_leaf_bones,
    exterior_joints,
    forward_kinematics,
    make_sample,
    posed_skeleton,
    quantize_f32,
    randomize_pose,
)
from .dataset import (
    SPLITS,
    DatasetManifest,
    Sample,
    SkinWeights,
    canonical_json,
    config_hash,
    load_joints_record,
    load_manifest,
    load_rigged_model,
    load_sample,
    save_manifest,
    save_rigged_model,
    save_sample,
)
from .skeleton import CATEGORIES, FINGERS, DataError, Skeleton, template_layout, template_skeleton

__all__ = [name for name in dir() if not name.startswith("_")]
