"""
Response transition flows between consecutive grid points (Sankey data).

Input sequences hold the categories at t1..t6 of each lesion; matrix k counts
lesions moving from their category at t_k to their category at t_{k+1}.
"""

from collections import Counter
from typing import Dict, List, Sequence

import numpy as np

from trajcore.errors import ShapeError
from trajcore.types import CATEGORY_ORDER, ResponseCategory, TransitionFlow

CLASSIFIED_POINTS = 6  # t1..t6


def compute_flows(classified: Sequence[Sequence[ResponseCategory]],
                  n_points: int = CLASSIFIED_POINTS) -> List[TransitionFlow]:
    """
    Count category transitions for every consecutive pair of classified points.

    Args:
        classified: Per-lesion category sequences, all of length n_points
        n_points: Expected sequence length (6 for t1..t6)

    Returns:
        n_points - 1 TransitionFlow matrices, interval_index 1..n_points-1
    """
    for i, seq in enumerate(classified):
        if len(seq) != n_points:
            raise ShapeError(f"category sequences must have length {n_points}",
                             f"sequence {i} has length {len(seq)}")

    flows = []
    for k in range(n_points - 1):
        counts = np.zeros((len(CATEGORY_ORDER), len(CATEGORY_ORDER)), dtype=np.int64)
        for seq in classified:
            counts[seq[k].index, seq[k + 1].index] += 1
        flows.append(TransitionFlow(interval_index=k + 1, counts=counts))
    return flows


def flow_links(flows: Sequence[TransitionFlow]) -> List[Dict[str, object]]:
    """Flatten flow matrices into plot-ready link rows (non-zero counts only)."""
    links = []
    for flow in flows:
        for i, src in enumerate(CATEGORY_ORDER):
            for j, dst in enumerate(CATEGORY_ORDER):
                count = int(flow.counts[i, j])
                if count:
                    links.append({
                        "interval": flow.interval_index,
                        "source": f"t{flow.interval_index}:{src.value}",
                        "target": f"t{flow.interval_index + 1}:{dst.value}",
                        "count": count,
                    })
    return links


def category_histogram(categories: Sequence[ResponseCategory]) -> Dict[str, int]:
    """Counts per category, always listing all four in CR, PR, SD, PD order."""
    counts = Counter(categories)
    return {c.value: int(counts.get(c, 0)) for c in CATEGORY_ORDER}
