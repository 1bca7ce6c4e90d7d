"""Sliding-window selection of what to merge, and the layer-drop baseline.

Candidate windows are enumerated over layer starts, each candidate is merged
(or dropped) on a private model copy and scored on held-out data, and the
best-scoring candidate wins with ties broken toward the smallest start. The
activation set is captured once by the caller and reused across every
candidate. Recovery fine-tuning of the winning model is out of scope; it
would slot in immediately after the best candidate is returned.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import ParameterStore
from .config import ModelConfig, expected_shapes, ff_tensor_names, model_tensor_names
from .engine import ActivationSet, EvalMetric, TransformerModel, evaluate
from .merging import MergeSpec, merge_window


def enumerate_windows(n_layers: int, k: int,
                      include_final_window: bool = False) -> list[int]:
    """Start indices of the k-wide candidate windows.

    The default bound stops one short of the last window that would still
    fit; include_final_window extends the sweep to start n_layers - k.
    """
    if not 2 <= k <= n_layers:
        raise ValueError(f"k must be in [2, n_layers], got k={k}, n_layers={n_layers}")
    last = n_layers - k if include_final_window else n_layers - k - 1
    return list(range(last + 1))


@dataclass(frozen=True)
class WindowCandidate:
    """One scored candidate: the window start and its evaluation score."""

    start: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"candidate score must be finite, got {self.score}")


@dataclass(frozen=True)
class SelectionReport:
    """All candidate scores plus the winner; ``baseline`` optionally carries
    the layer-drop candidates scored at a comparable parameter budget."""

    k: int
    anchor_position: str | None
    use_permutation: bool
    candidates: tuple[WindowCandidate, ...]
    best: WindowCandidate
    baseline: tuple[WindowCandidate, ...] | None = None

    def __post_init__(self):
        if self.best not in self.candidates:
            raise ValueError("best candidate is not in the candidate list")

    def to_json_dict(self) -> dict:
        doc = {
            "k": self.k,
            "anchor": self.anchor_position,
            "use_permutation": self.use_permutation,
            "candidates": [{"start": c.start, "score": c.score}
                           for c in self.candidates],
            "best": {"start": self.best.start, "score": self.best.score},
        }
        if self.baseline is not None:
            doc["baseline"] = [{"start": c.start, "score": c.score}
                               for c in self.baseline]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SelectionReport":
        doc = json.loads(text)
        candidates = tuple(WindowCandidate(int(c["start"]), float(c["score"]))
                           for c in doc["candidates"])
        best = WindowCandidate(int(doc["best"]["start"]), float(doc["best"]["score"]))
        baseline = None
        if doc.get("baseline") is not None:
            baseline = tuple(WindowCandidate(int(c["start"]), float(c["score"]))
                             for c in doc["baseline"])
        return cls(k=int(doc["k"]), anchor_position=doc["anchor"],
                   use_permutation=bool(doc["use_permutation"]),
                   candidates=candidates, best=best, baseline=baseline)


def _pick_best(candidates: list[WindowCandidate],
               metric: EvalMetric) -> WindowCandidate:
    # strict comparison keeps the smallest start on ties
    best = candidates[0]
    for cand in candidates[1:]:
        if metric.higher_is_better:
            if cand.score > best.score:
                best = cand
        elif cand.score < best.score:
            best = cand
    return best


def _score_candidates(transform, starts: list[int], eval_data,
                      metric: EvalMetric, jobs: int) -> list[WindowCandidate]:
    def one(start: int) -> WindowCandidate:
        candidate = transform(start)
        return WindowCandidate(start=start,
                               score=evaluate(candidate, eval_data, metric))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, starts))
    return [one(s) for s in starts]


def select_best_window(model: TransformerModel, acts: ActivationSet, k: int,
                       eval_data, metric: EvalMetric, *,
                       anchor_position: str = "first",
                       use_permutation: bool = True,
                       include_final_window: bool = False,
                       jobs: int = 1) -> tuple[SelectionReport, TransformerModel]:
    """Merge every candidate window, score each, and return the winner.

    ``acts`` is a single ff_pre_act capture of the unmerged model; no
    activations are recaptured per candidate. Each candidate works on a
    private copy, so candidates may be scored in parallel via ``jobs``.
    """
    starts = enumerate_windows(model.config.n_layers, k, include_final_window)
    if not starts:
        raise ValueError(
            "no candidate windows under the default bound; "
            "set include_final_window for the single full-width window"
        )
    merged: dict[int, TransformerModel] = {}

    def transform(start: int) -> TransformerModel:
        spec = MergeSpec(start=start, k=k, anchor_position=anchor_position,
                         use_permutation=use_permutation)
        out, _ = merge_window(model, acts, spec)
        merged[start] = out
        return out

    candidates = _score_candidates(transform, starts, eval_data, metric, jobs)
    best = _pick_best(candidates, metric)
    report = SelectionReport(k=k, anchor_position=anchor_position,
                             use_permutation=use_permutation,
                             candidates=tuple(candidates), best=best)
    return report, merged[best.start]


# -- layer-drop baseline -------------------------------------------------------


def enumerate_drop_starts(n_layers: int, count: int) -> list[int]:
    """Start indices for dropping ``count`` contiguous layers (all fits kept)."""
    if not 1 <= count < n_layers:
        raise ValueError(
            f"count must be in [1, n_layers-1], got count={count}, "
            f"n_layers={n_layers}"
        )
    return list(range(n_layers - count + 1))


def drop_layers(model: TransformerModel, start: int, count: int) -> TransformerModel:
    """Remove whole transformer layers [start, start+count) and reindex.

    Tied groups survive: if a kept tensor aliased into a dropped layer, the
    first kept member becomes the owner and the rest re-point at it.
    """
    cfg = model.config
    if count < 0 or start < 0 or start + count > cfg.n_layers:
        raise ValueError(
            f"cannot drop layers [{start}, {start + count}) from "
            f"{cfg.n_layers} layers"
        )
    if count == 0:
        return model.copy()
    if count == cfg.n_layers:
        raise ValueError("cannot drop every layer")
    kept = [i for i in range(cfg.n_layers) if not start <= i < start + count]
    new_cfg = replace(cfg, n_layers=len(kept))

    def rename(old_name: str) -> str | None:
        if not old_name.startswith("layer"):
            return old_name
        head, rest = old_name.split(".", 1)
        old_layer = int(head[len("layer"):])
        if old_layer not in kept:
            return None
        return f"layer{kept.index(old_layer)}.{rest}"

    def resolve(name: str) -> str:
        target = model.store.alias_target(name)
        return target if target is not None else name

    new_names = model_tensor_names(new_cfg)
    # pick one surviving owner per tied group, in new canonical order
    group_owner: dict[str, str] = {}
    for new_name, old_name in zip(new_names,
                                  [n for n in model_tensor_names(cfg)
                                   if rename(n) is not None]):
        owner = resolve(old_name)
        group_owner.setdefault(owner, new_name)
    store = ParameterStore()
    aliases = []
    for new_name, old_name in zip(new_names,
                                  [n for n in model_tensor_names(cfg)
                                   if rename(n) is not None]):
        rep = group_owner[resolve(old_name)]
        if rep == new_name:
            store.add(new_name, model.store.get(old_name).copy())
        else:
            aliases.append((new_name, rep))
    for new_name, rep in aliases:
        store.add_alias(new_name, rep)
    store._order = list(new_names)
    return TransformerModel(new_cfg, store)


def select_best_drop(model: TransformerModel, count: int, eval_data,
                     metric: EvalMetric, *,
                     jobs: int = 1) -> tuple[SelectionReport, TransformerModel]:
    """Score every contiguous ``count``-layer drop and return the winner."""
    starts = enumerate_drop_starts(model.config.n_layers, count)
    pruned: dict[int, TransformerModel] = {}

    def transform(start: int) -> TransformerModel:
        out = drop_layers(model, start, count)
        pruned[start] = out
        return out

    candidates = _score_candidates(transform, starts, eval_data, metric, jobs)
    best = _pick_best(candidates, metric)
    report = SelectionReport(k=count, anchor_position=None, use_permutation=False,
                             candidates=tuple(candidates), best=best)
    return report, pruned[best.start]


def _layer_parameter_counts(cfg: ModelConfig) -> tuple[int, int]:
    """(feed-forward params per layer, total params per layer)."""
    shapes = expected_shapes(cfg)
    ff = sum(int(np.prod(shapes[n])) for n in ff_tensor_names(cfg, 0))
    total = sum(int(np.prod(shapes[n])) for n in shapes if n.startswith("layer0."))
    return ff, total


def matched_drop_count(cfg: ModelConfig, k: int) -> int:
    """Whole-layer drop count closest to the parameter saving of a k-merge.

    Merging a k-window frees k-1 feed-forwards; dropping removes full layers,
    so the match is approximate. At least one layer, at most n_layers - 1.
    """
    ff, total = _layer_parameter_counts(cfg)
    count = round((k - 1) * ff / total)
    return max(1, min(cfg.n_layers - 1, count))


def compare_merge_and_drop(model: TransformerModel, acts: ActivationSet, k: int,
                           eval_data, metric: EvalMetric, *,
                           anchor_position: str = "first",
                           use_permutation: bool = True,
                           include_final_window: bool = False,
                           jobs: int = 1,
                           drop_count: int | None = None,
                           ) -> tuple[SelectionReport, TransformerModel]:
    """Window-merge selection with the layer-drop sweep attached as baseline.

    The drop sweep runs at ``drop_count`` layers (default: the whole-layer
    budget closest to the merge's parameter saving) and lands in the
    report's ``baseline`` field; the returned model is the merge winner.
    """
    report, best_model = select_best_window(
        model, acts, k, eval_data, metric, anchor_position=anchor_position,
        use_permutation=use_permutation,
        include_final_window=include_final_window, jobs=jobs)
    if drop_count is None:
        drop_count = matched_drop_count(model.config, k)
    drop_report, _ = select_best_drop(model, drop_count, eval_data, metric,
                                      jobs=jobs)
    merged_report = SelectionReport(
        k=report.k, anchor_position=report.anchor_position,
        use_permutation=report.use_permutation, candidates=report.candidates,
        best=report.best, baseline=drop_report.candidates)
    return merged_report, best_model
