"""Tracking evaluation: detection matching, PR/AP, graph recall, division F1,
an AOGM-style TRA score, and mask SEG."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .geometry import Mask, iou_mask, mask_intersection_area
from .io import TrackRow, validate_tracks
from .proposals import Proposal

if TYPE_CHECKING:
    from .graph import TrackingGraph
    from .solve import Lineage


@dataclass
class GroundTruth:
    """Reference lineage: track table, per-frame markers, optional label grids.

    ``markers[t]`` lists (track_id, x, y); ``label_grids``, when present, are
    per-frame integer grids whose positive values are track labels.
    """

    tracks: list[TrackRow]
    markers: dict[int, list[tuple[int, float, float]]]
    label_grids: list[np.ndarray] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        validate_tracks(self.tracks)
        spans = {row.label: row for row in self.tracks}
        for t, rows in self.markers.items():
            for track_id, _x, _y in rows:
                row = spans.get(track_id)
                if row is None:
                    raise ValueError(f"marker references unknown track {track_id}")
                if not row.birth <= t <= row.end:
                    raise ValueError(
                        f"marker for track {track_id} at frame {t} outside span [{row.birth}, {row.end}]"
                    )

    @property
    def n_frames(self) -> int:
        if self.label_grids is not None:
            return len(self.label_grids)
        return max(self.markers, default=-1) + 1

    def markers_at(self, t: int) -> list[tuple[int, float, float]]:
        return self.markers.get(t, [])

    def n_markers(self) -> int:
        return sum(len(rows) for rows in self.markers.values())

    def move_edges(self) -> list[tuple[int, int]]:
        """(track_id, t) pairs meaning the cell persists from frame t to t+1."""
        out = []
        for row in self.tracks:
            for t in range(row.birth, row.end):
                out.append((row.label, t))
        return out

    def divisions(self) -> list[tuple[int, int, int, int]]:
        """(parent_label, d1_label, d2_label, t_parent_end) for two-child parents."""
        children: dict[int, list[TrackRow]] = {}
        for row in self.tracks:
            if row.parent:
                children.setdefault(row.parent, []).append(row)
        spans = {row.label: row for row in self.tracks}
        out = []
        for parent_label in sorted(children):
            kids = sorted(children[parent_label], key=lambda r: r.label)
            if len(kids) == 2:
                out.append((parent_label, kids[0].label, kids[1].label, spans[parent_label].end))
        return out

    def displacements(self) -> np.ndarray:
        """Frame-to-frame centroid displacements of all persisting cells."""
        pos: dict[tuple[int, int], tuple[float, float]] = {}
        for t, rows in self.markers.items():
            for track_id, x, y in rows:
                pos[(track_id, t)] = (x, y)
        dists = []
        for track_id, t in self.move_edges():
            a = pos.get((track_id, t))
            b = pos.get((track_id, t + 1))
            if a is not None and b is not None:
                dists.append(float(np.hypot(b[0] - a[0], b[1] - a[1])))
        return np.asarray(dists, dtype=np.float64)


# ---------------------------------------------------------------------------
# Marker containment


def markers_inside(p: Proposal, markers: list[tuple[int, float, float]]) -> list[int]:
    """Track ids of reference markers whose pixel falls inside the mask."""
    return [tid for tid, x, y in markers if p.mask.contains_point(x, y)]


def captured_marker(p: Proposal, markers: list[tuple[int, float, float]]) -> int | None:
    """The single marker a proposal captures, or None if it holds zero or several."""
    inside = markers_inside(p, markers)
    return inside[0] if len(inside) == 1 else None


def gt_cell_masks(gt: GroundTruth) -> dict[int, dict[int, Mask]]:
    """Per frame, track label -> tight mask cut from the reference label grids."""
    if gt.label_grids is None:
        raise ValueError("ground truth has no label grids")
    out: dict[int, dict[int, Mask]] = {}
    for t, grid in enumerate(gt.label_grids):
        cells: dict[int, Mask] = {}
        for label in np.unique(grid):
            if label > 0:
                cells[int(label)] = Mask(0, 0, grid == label).tighten()
        out[t] = cells
    return out


# ---------------------------------------------------------------------------
# Detection matching and precision/recall


def _rank_order(props: list[Proposal], scores: np.ndarray) -> list[int]:
    if len(scores) != len(props):
        raise ValueError("scores length must match proposals")
    return sorted(range(len(props)), key=lambda i: (-float(scores[i]), props[i].id, i))


def match_marker(props: list[Proposal], scores: np.ndarray, gt: GroundTruth) -> np.ndarray:
    """Greedy marker matching in descending score order.

    A proposal counts as correct when it captures exactly one marker and that
    marker was not claimed by a higher-scoring proposal.  Returns a boolean
    array aligned with the input order.
    """
    flags = np.zeros(len(props), dtype=bool)
    used: set[tuple[int, int]] = set()
    for i in _rank_order(props, scores):
        p = props[i]
        inside = markers_inside(p, gt.markers_at(p.t))
        if len(inside) == 1 and (p.t, inside[0]) not in used:
            used.add((p.t, inside[0]))
            flags[i] = True
    return flags


def match_iou(
    props: list[Proposal], scores: np.ndarray, gt: GroundTruth, *, min_iou: float = 0.5
) -> np.ndarray:
    """Greedy overlap matching in descending score order.

    Each proposal claims the still-unclaimed reference region with the highest
    overlap, provided that overlap exceeds ``min_iou``; equal overlaps go to
    the lower label.
    """
    cells = gt_cell_masks(gt)
    flags = np.zeros(len(props), dtype=bool)
    used: set[tuple[int, int]] = set()
    for i in _rank_order(props, scores):
        p = props[i]
        best_label = 0
        best_iou = 0.0
        for label in sorted(cells.get(p.t, {})):
            if (p.t, label) in used:
                continue
            j = iou_mask(p.mask, cells[p.t][label])
            if j > best_iou:
                best_iou, best_label = j, label
        if best_iou > min_iou:
            used.add((p.t, best_label))
            flags[i] = True
    return flags


@dataclass
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float


def pr_curve_and_ap(flags: np.ndarray, n_gt: int) -> PRCurve:
    """Precision/recall sweep over match flags already in rank order.

    The curve starts at (recall 0, precision 1) and adds one point per
    proposal; AP is the trapezoidal area under that polyline.
    """
    flags = np.asarray(flags, dtype=bool)
    if n_gt <= 0:
        raise ValueError("n_gt must be positive")
    tp = np.cumsum(flags)
    k = np.arange(1, flags.size + 1, dtype=np.float64)
    recalls = np.concatenate(([0.0], tp / float(n_gt)))
    precisions = np.concatenate(([1.0], tp / k))
    dr = np.diff(recalls)
    ap = float(np.sum(dr * (precisions[1:] + precisions[:-1]) / 2.0))
    return PRCurve(recalls, precisions, ap)


def detection_pr(
    props: list[Proposal],
    scores: np.ndarray,
    gt: GroundTruth,
    *,
    criterion: str = "marker",
    min_iou: float = 0.5,
) -> PRCurve:
    """PR curve and AP for scored proposals against the reference cells."""
    if criterion == "marker":
        flags = match_marker(props, scores, gt)
    elif criterion == "iou":
        flags = match_iou(props, scores, gt, min_iou=min_iou)
    else:
        raise ValueError(f"unknown matching criterion {criterion!r}")
    order = _rank_order(props, scores)
    return pr_curve_and_ap(flags[order], gt.n_markers())


# ---------------------------------------------------------------------------
# Graph coverage: can the candidate graph represent the reference lineage at all?


def graph_recall(graph: TrackingGraph, gt: GroundTruth) -> dict[str, float]:
    """Upper bounds the tracker: fractions of reference cells, links and
    divisions that exist as nodes/edges in the candidate graph.

    ``R`` counts cells captured alone by some proposal, ``R_NS`` cells inside
    any proposal at all.  A link or division is covered when single-capturing
    proposals for all its endpoints are connected by a candidate edge or
    division set.  Vacuous denominators give 1.0.
    """
    single: dict[tuple[int, int], set[int]] = {}
    any_hit: set[tuple[int, int]] = set()
    for p in graph.proposals:
        inside = markers_inside(p, gt.markers_at(p.t))
        for tid in inside:
            any_hit.add((p.t, tid))
        if len(inside) == 1:
            single.setdefault((p.t, inside[0]), set()).add(p.id)

    marker_keys = [(t, tid) for t, rows in sorted(gt.markers.items()) for tid, _, _ in rows]
    n = len(marker_keys)
    r = sum(1 for key in marker_keys if single.get(key)) / n if n else 1.0
    r_ns = sum(1 for key in marker_keys if key in any_hit) / n if n else 1.0

    move_pairs = {(e.src, e.dst) for e in graph.edges if e.kind == "move"}
    moves = gt.move_edges()
    found = 0
    for tid, t in moves:
        a = single.get((t, tid), set())
        b = single.get((t + 1, tid), set())
        if any((u, v) in move_pairs for u in a for v in b):
            found += 1
    move_recall = found / len(moves) if moves else 1.0

    spans = {row.label: row for row in gt.tracks}
    divs = gt.divisions()
    hit = 0
    for parent, d1, d2, tend in divs:
        ps = single.get((tend, parent), set())
        a = single.get((spans[d1].birth, d1), set())
        b = single.get((spans[d2].birth, d2), set())
        if any(
            s.parent in ps
            and ((s.d1 in a and s.d2 in b) or (s.d1 in b and s.d2 in a))
            for s in graph.mitosis_sets
        ):
            hit += 1
    mitosis_recall = hit / len(divs) if divs else 1.0

    return {"R": r, "R_NS": r_ns, "move_recall": move_recall, "mitosis_recall": mitosis_recall}


# ---------------------------------------------------------------------------
# Division detection quality of a finished result


def mitosis_f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def lineage_divisions(lineage: Lineage) -> list[tuple[int, int, int]]:
    """(parent last proposal, daughter first proposals) per division, in parent
    track order; daughters ordered by track label."""
    children: dict[int, list[int]] = {}
    for row in lineage.tracks:
        if row.parent:
            children.setdefault(row.parent, []).append(row.label)
    out = []
    for parent_label in sorted(children):
        kids = sorted(children[parent_label])
        if len(kids) != 2:
            continue
        if not all(lineage.members.get(lab) for lab in (parent_label, *kids)):
            continue
        out.append(
            (
                lineage.members[parent_label][-1],
                lineage.members[kids[0]][0],
                lineage.members[kids[1]][0],
            )
        )
    return out


def division_metrics(
    props: list[Proposal], lineage: Lineage, gt: GroundTruth
) -> tuple[float, float, float]:
    """Precision, recall and F1 of the divisions reported by a tracking result.

    A reported division is correct when its parent proposal captures exactly
    the reference parent marker and the two daughter proposals capture exactly
    the two daughter markers; each reference division can be claimed once.
    Empty denominators count as precision or recall 1.0.
    """
    by_id = {p.id: p for p in props}
    gt_divs: dict[tuple[int, int], tuple[int, int]] = {}
    for parent, d1, d2, tend in gt.divisions():
        gt_divs[(parent, tend)] = (d1, d2)
    used: set[tuple[int, int]] = set()
    reported = lineage_divisions(lineage)
    tp = 0
    for parent_pid, a_pid, b_pid in reported:
        pp, pa, pb = by_id[parent_pid], by_id[a_pid], by_id[b_pid]
        pm = captured_marker(pp, gt.markers_at(pp.t))
        am = captured_marker(pa, gt.markers_at(pa.t))
        bm = captured_marker(pb, gt.markers_at(pb.t))
        if pm is None or am is None or bm is None:
            continue
        key = (pm, pp.t)
        if key in used or key not in gt_divs:
            continue
        if {am, bm} == set(gt_divs[key]):
            used.add(key)
            tp += 1
    precision = tp / len(reported) if reported else 1.0
    recall = tp / len(gt_divs) if gt_divs else 1.0
    return precision, recall, mitosis_f1(precision, recall)


# ---------------------------------------------------------------------------
# TRA: weighted cost of editing the result lineage graph into the reference one


TRA_WEIGHTS = {"ns": 5.0, "fn": 10.0, "fp": 1.0, "ed2": 1.0, "ea": 1.5, "ec": 1.0}


@dataclass
class TraResult:
    fn: int
    fp: int
    ns: int
    ea: int
    ed2: int
    ec: int
    aogm: float
    aogm0: float
    tra: float


def tra_score(
    props: list[Proposal],
    lineage: Lineage,
    gt: GroundTruth,
    *,
    weights: dict[str, float] | None = None,
) -> TraResult:
    """Acyclic-graph edit cost between the result lineage and the reference.

    Result nodes are matched to reference cells in (frame, proposal id) order:
    with label grids a proposal claims every still-unclaimed cell whose region
    it majority-covers, otherwise every unclaimed marker inside its mask.
    Zero claims make the node spurious (fp), two or more a merger needing
    m - 1 splits (ns); leftover reference cells are missing (fn).  Edges map
    through uniquely matched endpoints; reference edges without a counterpart
    cost ea, result edges without one ed2, class mismatches ec.  The score
    normalises the weighted sum by the cost of building the reference from
    nothing, so 1.0 is perfect and an empty result scores 0.0.
    """
    by_id = {p.id: p for p in props}
    selected = sorted(
        {pid for members in lineage.members.values() for pid in members},
        key=lambda pid: (by_id[pid].t, pid),
    )

    gt_nodes = [
        (t, tid)
        for t, rows in sorted(gt.markers.items())
        for tid in sorted(tid for tid, _, _ in rows)
    ]
    node_set = set(gt_nodes)
    cells = gt_cell_masks(gt) if gt.label_grids is not None else None

    unmatched = set(gt_nodes)
    node_match: dict[int, tuple[int, int] | None] = {}
    fp = ns = 0
    for pid in selected:
        p = by_id[pid]
        if cells is not None:
            hits = []
            for _, tid in sorted(key for key in unmatched if key[0] == p.t):
                cell = cells.get(p.t, {}).get(tid)
                if cell is not None and 2 * mask_intersection_area(p.mask, cell) > cell.area:
                    hits.append((p.t, tid))
        else:
            hits = [
                (p.t, tid)
                for tid in markers_inside(p, gt.markers_at(p.t))
                if (p.t, tid) in unmatched
            ]
        if not hits:
            fp += 1
            node_match[pid] = None
        elif len(hits) == 1:
            unmatched.discard(hits[0])
            node_match[pid] = hits[0]
        else:
            ns += len(hits) - 1
            unmatched -= set(hits)
            node_match[pid] = None
    fn = len(unmatched)

    spans = {row.label: row for row in gt.tracks}
    gt_edges: dict[tuple[tuple[int, int], tuple[int, int]], str] = {}
    for tid, t in gt.move_edges():
        key = ((t, tid), (t + 1, tid))
        if key[0] in node_set and key[1] in node_set:
            gt_edges[key] = "track"
    for parent, d1, d2, tend in gt.divisions():
        for d in (d1, d2):
            key = ((tend, parent), (spans[d].birth, d))
            if key[0] in node_set and key[1] in node_set:
                gt_edges[key] = "parent"

    res_edges: list[tuple[int, int, str]] = []
    for track_id in sorted(lineage.members):
        ms = lineage.members[track_id]
        for u, v in zip(ms, ms[1:]):
            res_edges.append((u, v, "track"))
    for parent_pid, a_pid, b_pid in lineage_divisions(lineage):
        res_edges.append((parent_pid, a_pid, "parent"))
        res_edges.append((parent_pid, b_pid, "parent"))

    covered: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    ed2 = ec = 0
    for u, v, cls in res_edges:
        a = node_match.get(u)
        b = node_match.get(v)
        if a is None or b is None or (a, b) not in gt_edges or (a, b) in covered:
            ed2 += 1
            continue
        covered.add((a, b))
        if gt_edges[(a, b)] != cls:
            ec += 1
    ea = len(gt_edges) - len(covered)

    w = dict(TRA_WEIGHTS)
    if weights:
        w.update(weights)
    aogm = w["ns"] * ns + w["fn"] * fn + w["fp"] * fp + w["ed2"] * ed2 + w["ea"] * ea + w["ec"] * ec
    aogm0 = w["fn"] * len(gt_nodes) + w["ea"] * len(gt_edges)
    if aogm0 == 0:
        tra = 1.0 if aogm == 0 else 0.0
    else:
        tra = 1.0 - min(aogm, aogm0) / aogm0
    return TraResult(fn=fn, fp=fp, ns=ns, ea=ea, ed2=ed2, ec=ec, aogm=aogm, aogm0=aogm0, tra=tra)


# ---------------------------------------------------------------------------
# SEG: mask agreement of matched cells


def seg_score(props: list[Proposal], lineage: Lineage, gt: GroundTruth) -> float:
    """Mean overlap between each reference region and the selected proposal that
    majority-covers it (zero when none does).  Needs label grids."""
    cells = gt_cell_masks(gt)
    by_id = {p.id: p for p in props}
    selected_by_frame: dict[int, list[int]] = {}
    for members in lineage.members.values():
        for pid in members:
            selected_by_frame.setdefault(by_id[pid].t, []).append(pid)
    scores = []
    for t in sorted(cells):
        for label in sorted(cells[t]):
            cell = cells[t][label]
            best_cov = 0.0
            best_pid = None
            for pid in sorted(selected_by_frame.get(t, [])):
                inter = mask_intersection_area(by_id[pid].mask, cell)
                if 2 * inter > cell.area:
                    cov = inter / cell.area
                    if cov > best_cov:
                        best_cov, best_pid = cov, pid
            scores.append(iou_mask(by_id[best_pid].mask, cell) if best_pid is not None else 0.0)
    return float(np.mean(scores)) if scores else 1.0


# ---------------------------------------------------------------------------
# Report


@dataclass
class EvalReport:
    tra: TraResult
    seg: float | None
    division_precision: float
    division_recall: float
    division_f1: float
    n_tracks: int
    n_gt_tracks: int
    recalls: dict[str, float] | None = None


def evaluate_tracking(
    props: list[Proposal],
    lineage: Lineage,
    gt: GroundTruth,
    *,
    graph: TrackingGraph | None = None,
    weights: dict[str, float] | None = None,
    with_seg: bool = True,
) -> EvalReport:
    """Score a tracking result against the reference lineage.

    SEG is only computed when the reference carries label grids (and can be
    switched off); graph coverage fractions are included when the candidate
    graph is supplied.
    """
    tra = tra_score(props, lineage, gt, weights=weights)
    seg = seg_score(props, lineage, gt) if with_seg and gt.label_grids is not None else None
    dp, dr, df1 = division_metrics(props, lineage, gt)
    recalls = graph_recall(graph, gt) if graph is not None else None
    return EvalReport(
        tra=tra,
        seg=seg,
        division_precision=dp,
        division_recall=dr,
        division_f1=df1,
        n_tracks=len(lineage.tracks),
        n_gt_tracks=len(gt.tracks),
        recalls=recalls,
    )


def report_text(report: EvalReport) -> str:
    seg = "-" if report.seg is None else f"{report.seg:.4f}"
    t = report.tra
    lines = [
        "TRA SEG FN FP NS EA EC ED2",
        f"{t.tra:.4f} {seg} {t.fn} {t.fp} {t.ns} {t.ea} {t.ec} {t.ed2}",
        f"divisions P={report.division_precision:.2f} R={report.division_recall:.2f}"
        f" F1={report.division_f1:.2f}",
        f"tracks {report.n_tracks} (reference {report.n_gt_tracks})",
    ]
    if report.recalls is not None:
        lines.append(
            "R={R:.4f} R-NS={R_NS:.4f} moves={move_recall:.4f}"
            " divisions={mitosis_recall:.4f}".format(**report.recalls)
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport) -> dict:
    t = report.tra
    out: dict = {
        "schema_version": 1,
        "kind": "eval_report",
        "tra": {
            "score": t.tra,
            "aogm": t.aogm,
            "aogm0": t.aogm0,
            "fn": t.fn,
            "fp": t.fp,
            "ns": t.ns,
            "ea": t.ea,
            "ed2": t.ed2,
            "ec": t.ec,
        },
        "seg": report.seg,
        "divisions": {
            "precision": report.division_precision,
            "recall": report.division_recall,
            "f1": report.division_f1,
        },
        "n_tracks": report.n_tracks,
        "n_gt_tracks": report.n_gt_tracks,
    }
    if report.recalls is not None:
        out["recalls"] = dict(sorted(report.recalls.items()))
    return out
