"""Per-tap angle-support recovery: OMP, block OMP and A-BOMP.

Flat beamspace indices follow column-major ``vec``: atom ``(n_rx, n_tx)`` sits at
``n_tx * G_r + n_rx``, so ``psi(l) = kron(pbar_t(l), conj(pbar_r(l)))`` with
``pbar = D^H p``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import SystemConfig, build_dictionary, steering_vector
from .probing import RxTrace


@dataclass
class TapMeasurement:
    """Samples of one tap stacked over subframes, with the probes that produced them."""

    tap: int
    y: np.ndarray  # (L,)
    tx: np.ndarray  # (L, n_tx) probing vectors
    rx: np.ndarray  # (L, n_rx)
    cfg: SystemConfig
    _psi: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_sub(self) -> int:
        return self.y.size

    @property
    def tx_factor(self) -> np.ndarray:
        """``pbar_t(l) = D_t^H p_t(l)`` for every subframe, ``(L, G_t)``."""
        d_t = build_dictionary(self.cfg.n_tx, self.cfg.g_tx).columns
        return self.tx @ d_t.conj()

    @property
    def rx_factor(self) -> np.ndarray:
        """``conj(pbar_r(l))`` i.e. ``p_r(l)^H D_r``, ``(L, G_r)``."""
        d_r = build_dictionary(self.cfg.n_rx, self.cfg.g_rx).columns
        return self.rx.conj() @ d_r

    @property
    def psi_rows(self) -> np.ndarray:
        """Dense ``L x G_t G_r`` sensing rows."""
        if self._psi is None:
            ft, fr = self.tx_factor, self.rx_factor
            self._psi = (ft[:, :, None] * fr[:, None, :]).reshape(self.n_sub, -1)
        return self._psi


def stack_tap_samples(traces: list[RxTrace], tap: int, cfg: SystemConfig) -> TapMeasurement:
    """Collect ``y(l N_c + d)`` and the matching probes across proposed-pattern traces."""
    if not 0 <= tap < cfg.n_taps:
        raise IndexError(f"tap {tap} outside [0, {cfg.n_taps})")
    ys, txs, rxs = [], [], []
    for tr in traces:
        if tr.schedule is None:
            raise ValueError("trace carries no probe schedule")
        sub = tr.samples.size // cfg.n_taps
        ys.append(tr.samples.reshape(sub, cfg.n_taps)[:, tap])
        txs.append(tr.schedule.tx[:sub])
        rxs.append(tr.schedule.rx[:sub])
    return TapMeasurement(tap=tap, y=np.concatenate(ys), tx=np.concatenate(txs),
                          rx=np.concatenate(rxs), cfg=cfg)


def lemma_probability(k_beams: int, k: int, n_taps: int) -> float:
    """Probability that ``k`` of ``k_beams`` beams fall into one tap."""
    if k > k_beams:
        return 0.0
    return math.comb(k_beams, k) * (1 / n_taps) ** k * ((n_taps - 1) / n_taps) ** (k_beams - k)


def iteration_bound(d_count: int, n_taps: int, p_threshold: float = 1e-3) -> int:
    """``k - 1`` for the smallest ``k`` from which ``P(D, k') < P_T`` for every ``k' >= k``.

    Whenever ``P(D, .)`` decreases in ``k`` (``D < 2 N_c - 1``, always true with a tap
    cap below ``N_c``) this is the first ``k`` with ``P(D, k) < P_T``. Floored at one.
    """
    if d_count < 1:
        raise ValueError("need at least one effective tap")
    if not 0 < p_threshold < 1:
        raise ValueError("probability threshold must lie in (0, 1)")
    k = d_count + 1  # P(D, D + 1) = 0
    while k > 1 and lemma_probability(d_count, k - 1, n_taps) < p_threshold:
        k -= 1
    return max(k - 1, 1)


def group_size(omega_max: float, n_taps: int, tau: float, n_sub: int) -> int:
    """Largest coherent group: ``cos(w N_c S) >= tau`` and ``w N_c S <= pi/2``, clamped to ``[1, L]``."""
    if not 0 < tau < 1:
        raise ValueError("correlation threshold must lie in (0, 1)")
    rate = abs(omega_max) * n_taps
    if rate == 0:
        return n_sub
    limit = min(math.acos(tau), math.pi / 2) / rate
    s = math.floor(limit)
    # guard the floor against representation error right at the boundary
    while s + 1 <= limit + 1e-12 and math.cos(rate * (s + 1)) >= tau:
        s += 1
    while s > 1 and math.cos(rate * s) < tau:
        s -= 1
    return int(min(max(s, 1), n_sub))


def lstsq_flagged(a: np.ndarray, b: np.ndarray):
    """Least squares, flagged when ``a`` lacks full column rank.

    The rank-deficient case returns the minimum-norm solution, i.e. the vanishing-ridge
    limit of the Tikhonov solve, which keeps the residual optimal.
    """
    if a.shape[1] == 0:
        return np.zeros(0, dtype=complex), False
    x, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    return x, bool(rank < a.shape[1])


@dataclass
class OMPResult:
    support: list[int]
    coef: np.ndarray
    residual_norms: list[float]
    flagged: bool = False


def omp(y: np.ndarray, sensing: np.ndarray, k: int, eps: float = 0.0) -> OMPResult:
    """Orthogonal matching pursuit with norm-weighted column matching.

    Stops after ``k`` atoms or once ``||r|| < eps ||y||``.
    """
    if k < 1:
        raise ValueError("need at least one iteration")
    y = np.asarray(y, dtype=complex)
    norms = np.linalg.norm(sensing, axis=0)
    norms = np.where(norms > 0, norms, np.inf)
    y_norm = np.linalg.norm(y)
    r = y.copy()
    support: list[int] = []
    coef = np.zeros(0, dtype=complex)
    history = [float(y_norm)]
    flagged = False
    if y_norm == 0:
        return OMPResult(support, coef, history)
    while len(support) < k and np.linalg.norm(r) >= eps * y_norm:
        score = np.abs(sensing.conj().T @ r) / norms
        score[support] = -np.inf
        support.append(int(np.argmax(score)))
        coef, bad = lstsq_flagged(sensing[:, support], y)
        flagged |= bad
        r = y - sensing[:, support] @ coef
        history.append(float(np.linalg.norm(r)))
    return OMPResult(support, coef, history, flagged)


class BlockSparseView:
    """Block layout of the time-varying sparse model.

    Atom ``i`` owns one block of ``L`` entries (its coefficient at every subframe).
    Grouping ``S`` consecutive subframes ties the entries inside each group together,
    so a block has ``G = ceil(L / S)`` free coefficients; ``S = 1`` is the fully
    time-varying model and ``S = L`` the static one. The permutation between the
    time-major stack and the atom-major block vector is an index map, never a matrix.
    """

    def __init__(self, atoms: np.ndarray, group_size: int):
        self.atoms = np.asarray(atoms)
        n_sub = self.atoms.shape[0]
        if not 1 <= group_size <= n_sub:
            raise ValueError(f"group size must lie in [1, {n_sub}], got {group_size}")
        self.group_size = int(group_size)
        # the last group may be short
        self.starts = np.arange(0, n_sub, self.group_size)
        self.col_norms = np.linalg.norm(self.atoms, axis=0)

    @property
    def n_sub(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def group_count(self) -> int:
        return self.starts.size

    def group_slices(self) -> list[slice]:
        ends = list(self.starts[1:]) + [self.n_sub]
        return [slice(int(a), int(b)) for a, b in zip(self.starts, ends)]

    def to_blocks(self, hbar: np.ndarray) -> np.ndarray:
        """Time-major stack ``(L, N)`` -> atom-major block vector of length ``N L``."""
        return np.asarray(hbar).T.reshape(-1)

    def from_blocks(self, htilde: np.ndarray) -> np.ndarray:
        return np.asarray(htilde).reshape(self.n_atoms, self.n_sub).T

    def block_index(self, atom: int, sub: int) -> int:
        return atom * self.n_sub + sub

    def apply_stacked(self, hbar: np.ndarray) -> np.ndarray:
        """Block-diagonal product: ``y_l = psi(l) . hbar(n_l)``."""
        return np.einsum("ln,ln->l", self.atoms, hbar)

    def apply_blocks(self, htilde: np.ndarray) -> np.ndarray:
        """``sum_i diag(psi_i) htilde_i`` over the atom-major block vector."""
        blocks = np.asarray(htilde).reshape(self.n_atoms, self.n_sub)
        return np.sum(self.atoms.T * blocks, axis=0)

    def group_correlation(self, r: np.ndarray) -> np.ndarray:
        """``C[j, i] = sum_{l in group j} conj(psi_i(l)) r(l)``, shape ``(G, N)``."""
        return np.add.reduceat(self.atoms.conj() * r[:, None], self.starts, axis=0)

    def score(self, r: np.ndarray) -> np.ndarray:
        """Grouped L1 correlation normalized by the block Frobenius norm."""
        norms = np.where(self.col_norms > 0, self.col_norms, np.inf)
        return np.sum(np.abs(self.group_correlation(r)), axis=0) / norms


@dataclass
class GroupFit:
    coef: list[np.ndarray]  # per group, one entry per selected column
    residual: np.ndarray
    projection_norm: float
    flagged: bool


def group_refit(columns: np.ndarray, y: np.ndarray, slices: list[slice]) -> GroupFit:
    """LS on every group slice separately; the residual is updated per group only."""
    r = np.empty_like(y)
    coefs = []
    total = 0.0
    flagged = False
    for sl in slices:
        c, bad = lstsq_flagged(columns[sl], y[sl])
        flagged |= bad
        coefs.append(c)
        total += float(np.linalg.norm(c))
        r[sl] = y[sl] - columns[sl] @ c
    return GroupFit(coefs, r, total, flagged)


@dataclass
class BOMPResult:
    support: list[int]
    coef: list[np.ndarray]
    residual_norms: list[float]
    flagged: bool = False


def bomp(y: np.ndarray, view: BlockSparseView, k: int, eps: float = 0.0) -> BOMPResult:
    """Block OMP over the grouped layout: block matching, per-group LS, residual update."""
    if k < 1:
        raise ValueError("need at least one iteration")
    y = np.asarray(y, dtype=complex)
    y_norm = np.linalg.norm(y)
    slices = view.group_slices()
    r = y.copy()
    support: list[int] = []
    coef: list[np.ndarray] = []
    history = [float(y_norm)]
    flagged = False
    if y_norm == 0:
        return BOMPResult(support, coef, history)
    while len(support) < k and np.linalg.norm(r) >= eps * y_norm:
        score = view.score(r)
        score[support] = -np.inf
        support.append(int(np.argmax(score)))
        fit = group_refit(view.atoms[:, support], y, slices)
        flagged |= fit.flagged
        coef, r = fit.coef, fit.residual
        history.append(float(np.linalg.norm(r)))
    return BOMPResult(support, coef, history, flagged)


@dataclass
class SupportEstimate:
    """Angle support of one tap.

    ``coarse_pairs`` hold dictionary indices ``(n_rx, n_tx)``; ``refined_idx`` hold the
    matching fine-grid indices on the ``G^2`` grid, wrapped into ``[0, G^2)``.
    """

    tap: int
    coarse_pairs: list[tuple[int, int]]
    refined_idx: list[tuple[int, int]]
    g_rx: int
    g_tx: int
    iterations_used: int = 0
    final_beta: float = math.inf
    beta_trace: list[float] = field(default_factory=list)
    flagged: bool = False

    @property
    def refined_freqs(self) -> list[tuple[float, float]]:
        return [(kr / self.g_rx ** 2, kt / self.g_tx ** 2) for kr, kt in self.refined_idx]

    def __len__(self):
        return len(self.coarse_pairs)

    def to_dict(self) -> dict:
        return {
            "tap": self.tap,
            "coarse_pairs": [list(p) for p in self.coarse_pairs],
            "refined_idx": [list(p) for p in self.refined_idx],
            "refined_freqs": [list(p) for p in self.refined_freqs],
            "g_rx": self.g_rx, "g_tx": self.g_tx,
            "iterations": self.iterations_used,
            "final_beta": None if math.isinf(self.final_beta) else self.final_beta,
            "beta_trace": self.beta_trace,
            "flagged": self.flagged,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "SupportEstimate":
        beta = doc.get("final_beta")
        return cls(tap=int(doc["tap"]),
                   coarse_pairs=[tuple(p) for p in doc["coarse_pairs"]],
                   refined_idx=[tuple(p) for p in doc["refined_idx"]],
                   g_rx=int(doc["g_rx"]), g_tx=int(doc["g_tx"]),
                   iterations_used=int(doc.get("iterations", 0)),
                   final_beta=math.inf if beta is None else float(beta),
                   beta_trace=list(doc.get("beta_trace", [])),
                   flagged=bool(doc.get("flagged", False)))

    @classmethod
    def from_json(cls, text: str) -> "SupportEstimate":
        return cls.from_dict(json.loads(text))


def cyclic_distance(a: int, b: int, g: int) -> int:
    d = abs(a - b) % g
    return min(d, g - d)


def overlaps(pair: tuple[int, int], chosen, g_rx: int, g_tx: int) -> bool:
    """True when both the Rx and the Tx index sit within one cell of a chosen pair."""
    return any(cyclic_distance(pair[0], q[0], g_rx) <= 1 and cyclic_distance(pair[1], q[1], g_tx) <= 1
               for q in chosen)


def fine_offsets(g: int) -> np.ndarray:
    return np.arange(-(g // 2), g - g // 2)


def _refine(meas: TapMeasurement, r: np.ndarray, slices, n_r: int, n_t: int):
    """Best fine-grid atom inside the coarse cell ``(n_r, n_t)``; returns offsets and its column."""
    cfg = meas.cfg
    off_t, off_r = fine_offsets(cfg.g_tx), fine_offsets(cfg.g_rx)
    a_t = steering_vector(cfg.n_tx, n_t / cfg.g_tx + off_t / cfg.g_tx ** 2)
    a_r = steering_vector(cfg.n_rx, n_r / cfg.g_rx + off_r / cfg.g_rx ** 2)
    ft = meas.tx @ a_t.conj()  # a_t^H p_t, (L, G_t)
    fr = meas.rx.conj() @ a_r  # p_r^H a_r, (L, G_r)
    corr = np.zeros((off_t.size, off_r.size))
    for sl in slices:
        corr += np.abs(ft[sl].conj().T @ (r[sl, None] * fr[sl].conj()))
    norms = np.sqrt((np.abs(ft) ** 2).T @ (np.abs(fr) ** 2))
    corr /= np.where(norms > 0, norms, np.inf)
    jt, jr = np.unravel_index(int(np.argmax(corr)), corr.shape)
    return int(off_r[jr]), int(off_t[jt]), ft[:, jt] * fr[:, jr]


def abomp(meas: TapMeasurement, kmax: int, s: int, eps: float = 0.01, already=(), *,
          refine: bool = True, guard: bool = True, revisit: bool = True,
          view: BlockSparseView | None = None) -> SupportEstimate:
    """Adaptive block OMP for one tap.

    Each outer iteration matches a coarse atom by its grouped correlation (skipping
    candidates that overlap earlier picks or ``already``), refines it on the ``G^2``
    fine grid inside its cell, appends the refined column, and re-fits every group by
    LS. Iteration stops at ``kmax`` or when the relative change of the summed per-group
    coefficient norms drops to ``eps``.

    With ``revisit`` (and ``refine``) every earlier atom is refined once more after a
    new one joins, against the residual with its own contribution added back; this
    removes the bias a not-yet-modelled path puts on the first fine-grid match.
    """
    cfg = meas.cfg
    if kmax < 1:
        raise ValueError("need at least one iteration")
    view = view or BlockSparseView(meas.psi_rows, s)
    if view.group_size != s:
        raise ValueError("view was built for a different group size")
    slices = view.group_slices()
    y = np.asarray(meas.y, dtype=complex)
    r = y.copy()
    est = SupportEstimate(tap=meas.tap, coarse_pairs=[], refined_idx=[], g_rx=cfg.g_rx, g_tx=cfg.g_tx)
    picked_flat: list[int] = []
    columns = np.zeros((y.size, 0), dtype=complex)
    beta, x0 = math.inf, 0.0
    blocked = list(already)
    while len(est.coarse_pairs) < kmax and beta > eps:
        score = view.score(r)
        score[picked_flat] = -np.inf
        flat = None
        for cand in np.argsort(-score, kind="stable"):
            if not np.isfinite(score[cand]):
                break
            n_t, n_r = divmod(int(cand), cfg.g_rx)
            if guard and overlaps((n_r, n_t), est.coarse_pairs + blocked, cfg.g_rx, cfg.g_tx):
                continue
            flat = int(cand)
            break
        if flat is None:
            break
        n_t, n_r = divmod(flat, cfg.g_rx)
        picked_flat.append(flat)
        if refine:
            j_r, j_t, col = _refine(meas, r, slices, n_r, n_t)
        else:
            j_r, j_t, col = 0, 0, view.atoms[:, flat]
        columns = np.column_stack([columns, col])
        fit = group_refit(columns, y, slices)
        est.flagged |= fit.flagged
        if refine and revisit and columns.shape[1] > 1:
            for i in range(columns.shape[1] - 1):
                partial = fit.residual.copy()
                for sl, c in zip(slices, fit.coef):
                    partial[sl] += columns[sl, i] * c[i]
                p_r, p_t = est.coarse_pairs[i]
                jr, jt, columns[:, i] = _refine(meas, partial, slices, p_r, p_t)
                est.refined_idx[i] = ((p_r * cfg.g_rx + jr) % cfg.g_rx ** 2,
                                      (p_t * cfg.g_tx + jt) % cfg.g_tx ** 2)
                fit = group_refit(columns, y, slices)
                est.flagged |= fit.flagged
        r = fit.residual
        x = fit.projection_norm
        beta = abs(x - x0) / x if x > 0 else 0.0
        x0 = x
        est.coarse_pairs.append((n_r, n_t))
        est.refined_idx.append(((n_r * cfg.g_rx + j_r) % cfg.g_rx ** 2,
                                (n_t * cfg.g_tx + j_t) % cfg.g_tx ** 2))
        est.beta_trace.append(beta)
    est.iterations_used = len(est.coarse_pairs)
    est.final_beta = beta
    return est
