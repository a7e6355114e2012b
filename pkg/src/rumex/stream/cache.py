"""Online k-medians over rumour embeddings with one explanation per median.

Every median keeps a one-pass selection state whose query is the median's
representative rumour. A rumour is assigned to its nearest median by cosine
distance and the median is re-estimated as the medoid of the reservoir
members assigned to it. Each time the number of observed rumours doubles the
medians are re-clustered from the reservoir (farthest-first seeding plus
alternating medoid updates), which lets badly seeded medians escape.

When a median's representative changes, its state no longer answers the
right query; it is flagged stale and rebuilt by the engine on next use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..selection import Candidate, OnePassState, SelectionConfig, onepass_update
from .index import normalize

_TIE = 1e-12


def cos_sim01(a: np.ndarray, b: np.ndarray) -> float:
    return min(1.0, max(0.0, (float(a @ b) + 1.0) / 2.0))


@dataclass
class MedianSlot:
    rep_id: str
    vector: np.ndarray
    count: int
    state: OnePassState

    @property
    def stale(self) -> bool:
        return self.state.stale


class MedianCache:
    def __init__(
        self,
        n_medians: int = 4,
        cfg: SelectionConfig | None = None,
        reservoir: int = 256,
        eps_cache: float | None = 0.02,
        rng_seed: int = 0,
    ):
        if n_medians < 1:
            raise ValueError("n_medians must be >= 1")
        self.n_medians = n_medians
        self.cfg = cfg or SelectionConfig(strategy="onepass")
        self.capacity = reservoir
        self.eps_cache = eps_cache
        self.rng = np.random.default_rng(rng_seed)
        self.slots: list[MedianSlot] = []
        self.res_ids: list[str] = []
        self.res_vecs: list[np.ndarray] = []
        self.seen = 0
        self.next_recluster = 2 * n_medians
        self.member_vecs: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.slots)

    def medians(self) -> np.ndarray:
        return np.stack([s.vector for s in self.slots]) if self.slots else np.zeros((0, 0))

    def nearest(self, z: np.ndarray) -> tuple[int, float]:
        """Index of the nearest median and its cosine distance (first wins ties)."""
        d = 1.0 - self.medians() @ normalize(z)
        i = int(np.argmin(d))
        return i, float(d[i])

    def lookup(self, z: np.ndarray) -> MedianSlot | None:
        if not self.slots or self.eps_cache is None:
            return None
        i, d = self.nearest(z)
        return self.slots[i] if d <= self.eps_cache else None

    # -- observation ----------------------------------------------------------------

    def observe(
        self,
        rumour_id: str,
        seq: int,
        z: np.ndarray,
        cov: float = 0.0,
        vec_of: Callable[[str], np.ndarray] | None = None,
    ) -> None:
        """Absorb one rumour and offer it to every non-stale median state.

        ``vec_of`` returns the unit embedding of an earlier rumour; it is used
        for the similarity between the newcomer and the current members.
        """
        u = normalize(z)
        self.seen += 1
        if len(self.res_ids) < self.capacity:
            self.res_ids.append(rumour_id)
            self.res_vecs.append(u)
        else:
            j = int(self.rng.integers(self.seen))
            if j < self.capacity:
                self.res_ids[j], self.res_vecs[j] = rumour_id, u
        if len(self.slots) < self.n_medians:
            self.slots.append(MedianSlot(rumour_id, u, 1, OnePassState(rumour_id, self.cfg)))
        else:
            i, _ = self.nearest(u)
            self.slots[i].count += 1
            self._update_medoid(i)
        if self.seen >= self.next_recluster:
            self.next_recluster *= 2
            self.recluster()
        lookup = vec_of or self.member_vecs.__getitem__
        for slot in self.slots:
            if slot.stale:
                continue
            cand = Candidate(rumour_id, seq, cos_sim01(u, slot.vector), cov)
            row = [cos_sim01(u, normalize(lookup(m.rumour_id))) for m in slot.state.members]
            onepass_update(slot.state, cand, row, slot.rep_id)
        self.member_vecs[rumour_id] = u
        self._prune_member_vecs()

    def _prune_member_vecs(self) -> None:
        live = {m.rumour_id for slot in self.slots for m in slot.state.members}
        self.member_vecs = {k: v for k, v in self.member_vecs.items() if k in live}

    def _assignments(self) -> np.ndarray:
        if not self.res_vecs:
            return np.zeros(0, dtype=np.int64)
        return np.argmin(1.0 - np.stack(self.res_vecs) @ self.medians().T, axis=1)

    def _medoid(self, pts: np.ndarray, ids: list[str], current: tuple[str, np.ndarray]):
        """Member minimising summed cosine distance; the current one wins ties."""
        cand_ids = [current[0]] + ids
        cand = np.vstack([current[1][None, :], pts]) if len(pts) else current[1][None, :]
        cost = (1.0 - cand @ pts.T).sum(axis=1) if len(pts) else np.zeros(1)
        best = int(np.argmin(cost))
        if cost[0] <= cost[best] + _TIE:
            best = 0
        return cand_ids[best], cand[best]

    def _update_medoid(self, i: int) -> None:
        slot = self.slots[i]
        mask = self._assignments() == i
        ids = [r for r, m in zip(self.res_ids, mask) if m]
        pts = np.stack(self.res_vecs)[mask] if ids else np.zeros((0, slot.vector.size))
        self._set_rep(i, *self._medoid(pts, ids, (slot.rep_id, slot.vector)))

    def _set_rep(self, i: int, rep_id: str, vec: np.ndarray) -> None:
        slot = self.slots[i]
        if rep_id != slot.rep_id:
            slot.rep_id, slot.vector = rep_id, vec
            slot.state = OnePassState(rep_id, self.cfg, stale=True)

    def recluster(self, iters: int = 10) -> None:
        if len(self.slots) < self.n_medians or not self.res_vecs:
            return
        ids = [s.rep_id for s in self.slots] + self.res_ids
        pts = np.vstack([self.medians(), np.stack(self.res_vecs)])
        # farthest-first seeding; current representatives come first so they win ties
        centers = [0]
        d = 1.0 - pts @ pts[0]
        while len(centers) < self.n_medians:
            d[centers] = -np.inf
            nxt = int(np.argmax(d))
            centers.append(nxt)
            d = np.minimum(d, 1.0 - pts @ pts[nxt])
        for _ in range(iters):
            assign = np.argmin(1.0 - pts @ pts[centers].T, axis=1)
            new = []
            for c, ci in enumerate(centers):
                members = np.flatnonzero(assign == c)
                if members.size == 0:
                    new.append(ci)
                    continue
                cost = (1.0 - pts[members] @ pts[members].T).sum(axis=1)
                j = int(members[np.argmin(cost)])
                own = np.flatnonzero(members == ci)
                if own.size and cost[own[0]] <= cost.min() + _TIE:
                    j = ci
                new.append(j)
            if new == centers:
                break
            centers = new
        # keep each slot's state where possible: match new centres to old slots
        free = list(range(self.n_medians))
        order = sorted(
            ((1.0 - float(self.slots[s].vector @ pts[c]), s, k) for k, c in enumerate(centers) for s in free)
        )
        taken_s, taken_c = set(), set()
        for _, s, k in order:
            if s in taken_s or k in taken_c:
                continue
            taken_s.add(s)
            taken_c.add(k)
            c = centers[k]
            self._set_rep(s, ids[c], pts[c])
        counts = np.bincount(self._assignments(), minlength=self.n_medians)
        for s, slot in enumerate(self.slots):
            slot.count = max(int(counts[s]), 1)

    def reseed(
        self, i: int, members: list[Candidate], pair_sim: np.ndarray,
        vecs: Callable[[str], np.ndarray] | None = None,
    ) -> None:
        """Replace a stale state with a freshly selected member set."""
        slot = self.slots[i]
        slot.state = OnePassState(slot.rep_id, self.cfg, list(members), np.asarray(pair_sim, dtype=np.float64))
        if vecs is not None:
            self.member_vecs.update({m.rumour_id: normalize(vecs(m.rumour_id)) for m in members})

    def reset_states(self) -> None:
        for slot in self.slots:
            slot.state = OnePassState(slot.rep_id, self.cfg, stale=True)

    def reembed(self, vec_of: Callable[[str], np.ndarray]) -> None:
        """Swap in new embeddings for representatives and reservoir members."""
        for slot in self.slots:
            slot.vector = normalize(vec_of(slot.rep_id))
        self.res_vecs = [normalize(vec_of(r)) for r in self.res_ids]
        self.member_vecs = {}
        self.reset_states()

    # -- persistence ------------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_medians": self.n_medians,
            "capacity": self.capacity,
            "eps_cache": self.eps_cache,
            "seen": self.seen,
            "next_recluster": self.next_recluster,
            "rng": self.rng.bit_generator.state,
            "reservoir": {"ids": self.res_ids, "vectors": [v.tolist() for v in self.res_vecs]},
            "member_vecs": {k: v.tolist() for k, v in sorted(self.member_vecs.items())},
            "slots": [
                {"rep_id": s.rep_id, "vector": s.vector.tolist(), "count": s.count, "state": s.state.to_dict()}
                for s in self.slots
            ],
        }

    @classmethod
    def from_dict(cls, d: dict, cfg: SelectionConfig) -> "MedianCache":
        c = cls(d["n_medians"], cfg, d["capacity"], d["eps_cache"])
        c.seen = d["seen"]
        c.next_recluster = d["next_recluster"]
        c.rng.bit_generator.state = d["rng"]
        c.res_ids = list(d["reservoir"]["ids"])
        c.res_vecs = [np.asarray(v, dtype=np.float64) for v in d["reservoir"]["vectors"]]
        c.member_vecs = {k: np.asarray(v, dtype=np.float64) for k, v in d["member_vecs"].items()}
        c.slots = [
            MedianSlot(s["rep_id"], np.asarray(s["vector"], dtype=np.float64), s["count"],
                       OnePassState.from_dict(s["state"], cfg))
            for s in d["slots"]
        ]
        return c
