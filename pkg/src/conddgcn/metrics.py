"""Pose evaluation: MPJPE, Procrustes-aligned MPJPE, PCK and AUC.

All functions take arrays shaped (..., J, 3) in millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AUC_THRESHOLDS = np.arange(5.0, 151.0, 5.0)


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return pred, gt


def joint_errors(pred, gt) -> np.ndarray:
    pred, gt = _check(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def root_relative(poses, root: int = 0) -> np.ndarray:
    poses = np.asarray(poses, dtype=np.float64)
    return poses - poses[..., root:root + 1, :]


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance over all frames and joints."""
    return float(joint_errors(pred, gt).mean())


def procrustes_transform(pred, gt) -> tuple[float, np.ndarray, np.ndarray, bool]:
    """Least-squares similarity (scale, rotation, translation) taking ``pred`` onto ``gt``.

    Both are (J, 3). Returns ``(scale, R, t, degenerate)`` so that the aligned
    pose is ``scale * pred @ R + t``. When all predicted joints coincide only
    the translation is solved and ``degenerate`` is True.
    """
    pred, gt = _check(pred, gt)
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    P, G = pred - mu_p, gt - mu_g
    norm_p = float((P * P).sum())
    if norm_p <= 1e-24 * max(1.0, float((G * G).sum())):
        return 1.0, np.eye(3), mu_g - mu_p, True
    U, s, Vt = np.linalg.svd(P.T @ G)
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    scale = float((s * np.diag(D)).sum() / norm_p)
    t = mu_g - scale * mu_p @ R
    return scale, R, t, False


def procrustes_align(pred, gt) -> np.ndarray:
    """Align each frame of ``pred`` onto ``gt``; arrays are (J, 3) or (..., J, 3)."""
    pred, gt = _check(pred, gt)
    flat_p = pred.reshape(-1, *pred.shape[-2:])
    flat_g = gt.reshape(-1, *gt.shape[-2:])
    out = np.empty_like(flat_p)
    for i, (p, g) in enumerate(zip(flat_p, flat_g)):
        s, R, t, _ = procrustes_transform(p, g)
        out[i] = s * p @ R + t
    return out.reshape(pred.shape)


def p_mpjpe(pred, gt) -> float:
    return mpjpe(procrustes_align(pred, gt), gt)


def pck(pred, gt, threshold: float = 150.0) -> float:
    """Percentage of (frame, joint) errors strictly below ``threshold``."""
    return float((joint_errors(pred, gt) < threshold).mean() * 100.0)


def pck_curve(pred, gt, thresholds=AUC_THRESHOLDS) -> np.ndarray:
    err = joint_errors(pred, gt)
    return np.array([(err < th).mean() * 100.0 for th in thresholds])


def auc(pred, gt, thresholds=AUC_THRESHOLDS) -> float:
    """Mean PCK over the threshold grid (5..150 mm by default)."""
    return float(pck_curve(pred, gt, thresholds).mean())


@dataclass
class EvalReport:
    mpjpe_mm: float
    pmpjpe_mm: float
    pck_percent: float
    auc_percent: float
    per_action: dict[str, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {"mpjpe_mm": self.mpjpe_mm, "pmpjpe_mm": self.pmpjpe_mm,
                "pck_percent": self.pck_percent, "auc_percent": self.auc_percent}

    def to_kv(self) -> str:
        lines = [f"{k}={v!r}" for k, v in self.as_dict().items()]
        for action, vals in sorted(self.per_action.items()):
            lines += [f"{action}.{k}={v!r}" for k, v in vals.items()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [
            f"MPJPE   (protocol 1): {self.mpjpe_mm:9.3f} mm",
            f"P-MPJPE (protocol 2): {self.pmpjpe_mm:9.3f} mm",
            f"PCK@150mm           : {self.pck_percent:9.3f} %",
            f"AUC (5..150mm)      : {self.auc_percent:9.3f} %",
        ]
        for action, vals in sorted(self.per_action.items()):
            lines.append(f"  {action}: MPJPE {vals['mpjpe_mm']:.3f} mm, P-MPJPE {vals['pmpjpe_mm']:.3f} mm")
        return "\n".join(lines) + "\n"


def evaluate(pred, gt, root: int | None = 0, actions=None) -> EvalReport:
    """Full report. With ``root`` set, both sides are made root-relative first.

    ``actions`` optionally labels the leading (sequence) axis for a per-action
    breakdown.
    """
    pred, gt = _check(pred, gt)
    if root is not None:
        pred, gt = root_relative(pred, root), root_relative(gt, root)
    report = EvalReport(mpjpe(pred, gt), p_mpjpe(pred, gt), pck(pred, gt), auc(pred, gt))
    if actions is not None:
        actions = list(actions)
        for name in sorted(set(actions)):
            idx = [i for i, a in enumerate(actions) if a == name]
            report.per_action[name] = {"mpjpe_mm": mpjpe(pred[idx], gt[idx]),
                                       "pmpjpe_mm": p_mpjpe(pred[idx], gt[idx])}
    return report
