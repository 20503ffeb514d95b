"""Layer-wise L1 unstructured pruning with persistent masks."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .errors import ConfigError, ContractError


@dataclass
class PruneState:
    """0/1 masks keyed by parameter name (1 = kept) and the ratio they were cut to."""

    masks: dict = field(default_factory=dict)
    target_ratio: float = 0.0

    def zero_sets(self) -> dict:
        return {n: m == 0 for n, m in self.masks.items()}

    def save(self, path):
        checkpoint.save(path, {n: m.astype(np.float64) for n, m in self.masks.items()})

    @classmethod
    def load(cls, path, target_ratio=0.0) -> "PruneState":
        return cls({n: a.astype(np.float64) for n, a in checkpoint.load(path).items()}, target_ratio)


def pruning_ratio(state: PruneState) -> float:
    """``1 - Card/Num`` jointly over every masked tensor."""
    total = sum(m.size for m in state.masks.values())
    if total == 0:
        return 0.0
    kept = sum(int(np.count_nonzero(m)) for m in state.masks.values())
    return 1.0 - kept / total


def _tensor_mask(w: np.ndarray, p: float, prior: np.ndarray | None) -> np.ndarray:
    flat = w.ravel()
    n = flat.size
    quota = int(np.floor(p * n))
    live = np.ones(n) if prior is None else prior.ravel().astype(np.float64)
    # already-masked entries first, then smallest |w|, then lowest flat index
    order = np.lexsort((np.arange(n), np.abs(flat), live))
    mask = np.ones(n)
    mask[order[:quota]] = 0.0
    if prior is not None and np.any(mask > live):
        raise ContractError("prior mask removes more entries than the new quota allows")
    return mask.reshape(w.shape)


def l1_prune(model, p: float, prior: PruneState | None = None) -> PruneState:
    """Zero the ``floor(p * size)`` smallest-magnitude entries of every prunable tensor.

    Masks are cumulative over ``prior`` and applied to the model's weights
    immediately.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"pruning ratio must be in [0, 1), got {p}")
    if prior is not None and p < prior.target_ratio:
        raise ContractError(f"pruning ratio cannot decrease ({prior.target_ratio} -> {p})")
    masks = {}
    for name in model.prunable_names():
        t = model.params[name]
        old = None if prior is None else prior.masks.get(name)
        m = _tensor_mask(t.data, p, old)
        t.data = np.where(m.astype(bool), t.data, 0.0)
        masks[name] = m
    return PruneState(masks, float(p))


def apply_mask(model, state: PruneState) -> None:
    for name, m in state.masks.items():
        t = model.params[name]
        t.data = np.where(m.astype(bool), t.data, 0.0)


def masked_checksum(model, state: PruneState) -> str:
    """Checksum of ``w * mask`` over the masked tensors (plus unmasked params verbatim)."""
    h = hashlib.sha256()
    for n in sorted(model.params):
        w = model.params[n].data
        m = state.masks.get(n)
        if m is not None:
            w = np.where(m.astype(bool), w, 0.0)
        h.update(n.encode())
        h.update(np.ascontiguousarray(w).tobytes())
    return h.hexdigest()


def check_ascending(ratios) -> list[float]:
    ratios = [float(r) for r in ratios]
    if any(not 0 <= r < 1 for r in ratios):
        raise ConfigError(f"pruning ratios must lie in [0, 1): {ratios}")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ConfigError(f"pruning ratios must be strictly ascending: {ratios}")
    return ratios


def iterative_prune(model, ratios, per_stage, data, *, run_name="iterative_prune"):
    """Prune to each ratio in turn (masks accumulate), fine-tuning after every cut.

    ``per_stage[i]`` is the TrainSpec for stage i, which carries that stage's
    augmentation magnitude. Returns ``[(snapshot, mask, RunRecord), ...]``.
    """
    from .training import RunRecord, train_stage

    ratios = check_ascending(ratios)
    if len(per_stage) != len(ratios):
        raise ConfigError(f"{len(ratios)} ratios but {len(per_stage)} stage specs")
    state = None
    out = []
    for i, (p, spec) in enumerate(zip(ratios, per_stage)):
        state = l1_prune(model, p, state)
        rec = RunRecord(run_name)
        train_stage(model, data, spec, mask=state, stage=i, record=rec)
        out.append((model.copy(), PruneState({n: m.copy() for n, m in state.masks.items()}, p), rec))
    return out
