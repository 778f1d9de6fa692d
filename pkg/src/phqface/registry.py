"""OpenFace feature-set registry: 709 trainable columns in seven named groups."""
from __future__ import annotations

from collections import OrderedDict

AU_INTENSITY = ["01", "02", "04", "05", "06", "07", "09", "10", "12", "14", "15",
                "17", "20", "23", "25", "26", "45"]
AU_PRESENCE = AU_INTENSITY[:-1] + ["28", "45"]


def _fau():
    return [f"AU{n}_r" for n in AU_INTENSITY] + [f"AU{n}_c" for n in AU_PRESENCE]


def _gaze():
    cols = [f"gaze_{eye}_{ax}" for eye in (0, 1) for ax in ("x", "y", "z")]
    return cols + ["gaze_angle_x", "gaze_angle_y"]


def _eye():
    return [f"eye_lmk_{ax}_{i}" for ax in ("x", "y", "X", "Y", "Z") for i in range(56)]


def _pose():
    return [f"pose_{k}" for k in ("Tx", "Ty", "Tz", "Rx", "Ry", "Rz")]


def _rigidity():
    return ["p_scale", "p_rx", "p_ry", "p_rz", "p_tx", "p_ty"] + [f"p_{i}" for i in range(34)]


def _lmk2d():
    return [f"{ax}_{i}" for ax in ("x", "y") for i in range(68)]


def _lmk3d():
    return [f"{ax}_{i}" for ax in ("X", "Y", "Z") for i in range(68)]


GROUPS: "OrderedDict[str, list[str]]" = OrderedDict(
    [
        ("FAU", _fau()),
        ("Gaze", _gaze()),
        ("EyeLandmarks", _eye()),
        ("HeadPose", _pose()),
        ("Rigidity", _rigidity()),
        ("Landmarks2D", _lmk2d()),
        ("Landmarks3D", _lmk3d()),
    ]
)

# Published per-set counts; checked at import.
EXPECTED_SIZES = {
    "FAU": 35,
    "Gaze": 8,
    "EyeLandmarks": 280,
    "HeadPose": 6,
    "Rigidity": 40,
    "Landmarks2D": 136,
    "Landmarks3D": 204,
}

GROUP_LABELS = {
    "FAU": "Facial Action Units",
    "Gaze": "Gaze",
    "EyeLandmarks": "Eye Landmarks",
    "HeadPose": "Head Pose",
    "Rigidity": "Rigidity Parameters",
    "Landmarks2D": "2D Landmarks",
    "Landmarks3D": "3D Landmarks",
}

FEATURE_NAMES: tuple[str, ...] = tuple(name for cols in GROUPS.values() for name in cols)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
FEATURE_GROUP = {name: g for g, cols in GROUPS.items() for name in cols}
N_FEATURES = 709

# Parsed from feature files but never trained on.
METADATA_COLUMNS = ("confidence", "success")
ID_COLUMNS = ("participant_id", "session_id", "image_id")


def check_registry() -> None:
    for group, cols in GROUPS.items():
        if len(cols) != EXPECTED_SIZES[group]:
            raise AssertionError(f"group {group} has {len(cols)} columns, expected {EXPECTED_SIZES[group]}")
    if len(FEATURE_NAMES) != N_FEATURES or len(set(FEATURE_NAMES)) != N_FEATURES:
        raise AssertionError("registry must hold 709 distinct names")


def group_columns(group: str) -> list[str]:
    if group not in GROUPS:
        raise KeyError(f"unknown feature set {group!r}; choose from {', '.join(GROUPS)}")
    return list(GROUPS[group])


def registry_rows() -> list[dict]:
    """Rows for the reference CSV (name, group, index)."""
    return [{"name": n, "group": FEATURE_GROUP[n], "index": i} for i, n in enumerate(FEATURE_NAMES)]


check_registry()
