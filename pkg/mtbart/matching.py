"""
Vector matching (VM) for ATT estimation with three treatments: units outside
the rectangular common support are dropped, the remaining units are clustered
with k-means on a logit GPS coordinate, and every reference unit is matched
with replacement to the closest comparison unit of its cluster within a caliper.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import pandas as pd
from scipy.special import logit
from sklearn.cluster import KMeans

from mtbart.core import Dataset, GpsMatrix
from mtbart.errors import NoCommonSupportError
from mtbart.gps import rectangular_support
from mtbart.utils.seeding import substream_seed

LOGIT_CLIP = 1e-12
NO_MATCH = -1
CLUSTER_ON_REMAINING = "remaining"
CLUSTER_ON_COMPARISON = "comparison"


def kmeans(points, k, seed=0, max_iter=300) -> np.ndarray:
    """
    Lloyd's algorithm from a k-means++ start. Empty clusters are reseeded
    from the points farthest from their centroid.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) < k:
        raise ValueError(f"k-means needs at least k={k} points, got {len(points)}")
    model = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter,
                   random_state=seed, algorithm="lloyd")
    return model.fit_predict(points)


def logit_gps(gps: GpsMatrix, w) -> np.ndarray:
    return logit(np.clip(gps.column(w), LOGIT_CLIP, 1.0 - LOGIT_CLIP))


@dataclass(frozen=True)
class MatchedSet:
    """
    Matches of the retained reference units. matches[w'] holds one comparison
    unit index per entry of reference_indices, or NO_MATCH.
    """
    reference: int
    reference_indices: np.ndarray
    matches: Dict[int, np.ndarray]
    distances: Dict[int, np.ndarray]
    clusters: Dict[int, np.ndarray]
    caliper_width: float
    n_eligible: int
    discarded_by_support: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def complete(self) -> np.ndarray:
        """
        Mask over reference_indices of units matched in every comparison group.
        """
        mask = np.ones(len(self.reference_indices), dtype=bool)
        for matches in self.matches.values():
            mask &= matches != NO_MATCH
        return mask

    @property
    def triplet_indices(self) -> np.ndarray:
        return self.reference_indices[self.complete]

    @property
    def discarded_reference(self) -> np.ndarray:
        unmatched = self.reference_indices[~self.complete]
        return np.sort(np.concatenate([self.discarded_by_support, unmatched]))

    @property
    def n_used(self) -> int:
        return int(self.complete.sum())

    @property
    def n_discarded(self) -> int:
        return self.n_eligible - self.n_used

    def pairs(self) -> pd.DataFrame:
        """
        One row per (reference unit, comparison treatment), for audit.
        """
        complete = self.complete
        frames = []
        for w_other, matches in self.matches.items():
            frames.append(pd.DataFrame({
                "reference_unit": self.reference_indices,
                "comparison_treatment": w_other,
                "matched_unit": matches,
                "distance": self.distances[w_other],
                "cluster": self.clusters[w_other],
                "complete": complete,
            }))
        if not frames:
            return pd.DataFrame(columns=["reference_unit", "comparison_treatment", "matched_unit",
                                         "distance", "cluster", "complete"])
        return pd.concat(frames, ignore_index=True)


def _nearest(reference_scores, candidate_scores, chunk=1024):
    """
    For every reference score, the position of the closest candidate and the
    distance; ties go to the first candidate.
    """
    positions = np.empty(len(reference_scores), dtype=np.int64)
    distances = np.empty(len(reference_scores))
    for start in range(0, len(reference_scores), chunk):
        block = np.abs(reference_scores[start:start + chunk, None] - candidate_scores[None, :])
        positions[start:start + chunk] = block.argmin(axis=1)
        distances[start:start + chunk] = block[np.arange(len(block)),
                                               positions[start:start + chunk]]
    return positions, distances


def vm_match(dataset: Dataset, gps: GpsMatrix, reference, k=5, caliper=0.25, seed=0,
             cluster_on=CLUSTER_ON_REMAINING) -> MatchedSet:
    """
    Match every reference unit inside the common support to one unit of each
    comparison treatment.
    """
    if dataset.n_treatments != 3 or gps.n_treatments != 3:
        raise ValueError("Vector matching is implemented for exactly three treatments")
    if reference not in (1, 2, 3):
        raise ValueError(f"Reference treatment must be 1, 2 or 3, got {reference}")
    if cluster_on not in (CLUSTER_ON_REMAINING, CLUSTER_ON_COMPARISON):
        raise ValueError(f"Unknown clustering coordinate: {cluster_on}")
    if caliper <= 0:
        raise ValueError("Caliper must be positive")

    treatment = dataset.treatment
    support = rectangular_support(gps, treatment)
    retained = np.zeros(len(treatment), dtype=bool)
    retained[support.retained] = True

    all_reference = np.flatnonzero(treatment == reference)
    reference_indices = np.flatnonzero(retained & (treatment == reference))
    discarded_by_support = np.flatnonzero(~retained & (treatment == reference))
    comparisons = [w for w in (1, 2, 3) if w != reference]
    for w_other in comparisons:
        if not np.any(retained & (treatment == w_other)):
            raise NoCommonSupportError(f"no common support: treatment {w_other} has no units "
                                       f"left after support filtering")
    if len(reference_indices) == 0:
        raise NoCommonSupportError(f"no common support: treatment {reference} has no units "
                                   f"left after support filtering")

    reference_scores = logit_gps(gps, reference)
    caliper_width = caliper * float(np.std(reference_scores[retained], ddof=1))
    retained_indices = np.flatnonzero(retained)

    matches, distances, clusters = {}, {}, {}
    for w_other in comparisons:
        remaining = next(w for w in (1, 2, 3) if w not in (reference, w_other))
        coordinate = logit_gps(gps, remaining if cluster_on == CLUSTER_ON_REMAINING else w_other)
        labels = np.full(len(treatment), NO_MATCH)
        labels[retained_indices] = kmeans(coordinate[retained_indices],
                                          min(k, len(retained_indices)),
                                          seed=substream_seed(seed, reference, w_other))

        matched = np.full(len(reference_indices), NO_MATCH)
        matched_distance = np.full(len(reference_indices), np.nan)
        for cluster in np.unique(labels[retained_indices]):
            in_cluster = labels == cluster
            candidates = np.flatnonzero(in_cluster & (treatment == w_other))
            members = np.flatnonzero(in_cluster[reference_indices])
            if len(candidates) == 0 or len(members) == 0:
                continue
            positions, gaps = _nearest(reference_scores[reference_indices[members]],
                                       reference_scores[candidates])
            accepted = gaps <= caliper_width
            matched[members[accepted]] = candidates[positions[accepted]]
            matched_distance[members[accepted]] = gaps[accepted]
        matches[w_other] = matched
        distances[w_other] = matched_distance
        clusters[w_other] = labels[reference_indices]
        logging.debug("VM %s vs %s: %s of %s reference units matched", reference, w_other,
                      int(np.sum(matched != NO_MATCH)), len(reference_indices))

    matched_set = MatchedSet(reference=reference, reference_indices=reference_indices,
                             matches=matches, distances=distances, clusters=clusters,
                             caliper_width=caliper_width, n_eligible=len(all_reference),
                             discarded_by_support=discarded_by_support)
    logging.info("VM with reference %s: %s triplets, %s reference units discarded",
                 reference, matched_set.n_used, matched_set.n_discarded)
    return matched_set


def vm_att_estimate(matched: MatchedSet, outcome) -> Dict[int, float]:
    """
    For each comparison treatment w', the mean outcome of the triplet-complete
    reference units minus the mean outcome of their matches in w'.
    """
    if outcome is None:
        raise ValueError("vm_att_estimate needs an outcome")
    outcome = np.asarray(outcome, dtype=float)
    complete = matched.complete
    if not np.any(complete):
        raise NoCommonSupportError("no reference unit was matched in every comparison group")
    reference_mean = outcome[matched.reference_indices[complete]].mean()
    effects = {}
    for w_other, matches in matched.matches.items():
        effects[w_other] = float(reference_mean - outcome[matches[complete]].mean())
    return effects
