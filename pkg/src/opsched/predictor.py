"""Per-operator threshold prediction.

Ground truth comes from sweeping the cost model: for every (kind, size, batch) cell
the sparsity at which the faster device flips, and for every (kind, sparsity, batch)
cell the intensity at which it flips. A Transformer-encoder + BiLSTM regressor maps
operator feature sequences to both thresholds.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .cost import HardwareProfile, op_latency
from .graph import FeatureScaler, ModelGraph, OperatorKind, OperatorNode, make_node, raw_features
from .nn import tensor as T
from .nn.checkpoint import load_params, save_params
from .nn.layers import BiLSTM, ConfigError, Dense, EncoderLayer, Module
from .nn.optim import Adam
from .nn.tensor import Tensor

log = logging.getLogger(__name__)

K = OperatorKind
DEFAULT_KINDS = (K.CONV2D, K.LINEAR, K.ATTENTION, K.BATCHNORM, K.RELU)
DEFAULT_SPARSITY = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
S_FLOOR = 0.05


# --- ground truth ---------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthGrid:
    sparsity_levels: tuple = DEFAULT_SPARSITY
    size_levels: int = 8
    kinds: tuple = DEFAULT_KINDS
    batches: tuple = (1, 8)

    def __post_init__(self):
        if len(self.sparsity_levels) < 2 or self.size_levels < 2:
            raise ValueError("grid needs at least two levels per axis")
        if list(self.sparsity_levels) != sorted(self.sparsity_levels):
            raise ValueError("sparsity levels must be increasing")


@dataclass(frozen=True)
class ThresholdSample:
    x: np.ndarray           # raw 6-feature vector
    s: float                # sparsity threshold in [0, 1]
    c: float                # intensity threshold (FLOPs)
    kind: str
    size: int
    batch: int
    profile: str

    @property
    def group(self) -> tuple:
        return (self.profile, self.kind, self.batch, self.size)


def grid_operator(kind: OperatorKind, level: int, rho: float, batch: int = 1) -> OperatorNode:
    """A representative operator of ``kind``; work grows geometrically with ``level``."""
    ch = 8 * 2 ** ((level + 1) // 2)
    hw = 7 * 2 ** (level // 2)
    if kind is K.CONV2D:
        return make_node(0, kind, (batch, ch, hw, hw), (batch, ch, hw, hw), rho, kernel=(3, 3, ch, ch))
    if kind is K.LINEAR:
        return make_node(0, kind, (batch, ch * 4, hw, 1), (batch, ch * 4, hw, 1), rho)
    if kind is K.ATTENTION:
        side = max(1, hw // 4)
        return make_node(0, kind, (batch, ch, side, side), (batch, ch, side, side), rho)
    return make_node(0, kind, (batch, ch, hw, hw), (batch, ch, hw, hw), rho)


def _advantage(node: OperatorNode, profile: HardwareProfile, scale: float = 1.0) -> float:
    """GPU latency minus CPU latency; positive means the CPU is faster."""
    return op_latency(node, profile.gpu, scale).latency - op_latency(node, profile.cpu, scale).latency


def _flip(xs: Sequence[float], d: Sequence[float], rising: bool) -> Optional[float]:
    """Interpolated first crossing of ``d`` through zero (CPU strictly better is d > 0)."""
    for i in range(len(xs) - 1):
        a, b = d[i], d[i + 1]
        if (a <= 0 < b) if rising else (a > 0 >= b):
            t = a / (a - b)
            return xs[i] + t * (xs[i + 1] - xs[i])
    return None


def sparsity_threshold(rhos: Sequence[float], adv: Sequence[float]) -> float:
    """rho above which the CPU wins; 1 if it never wins, 0 if it always does."""
    adv = np.asarray(adv)
    if np.all(adv <= 0):
        return 1.0
    if np.all(adv > 0):
        return 0.0
    s = _flip(rhos, adv, rising=True)
    return float(np.clip(s if s is not None else rhos[int(np.argmax(adv > 0))], 0.0, 1.0))


def intensity_threshold(log_sizes: Sequence[float], adv: Sequence[float]) -> float:
    """log10 intensity above which the GPU wins, clipped to the grid."""
    adv = np.asarray(adv)
    lo, hi = log_sizes[0], log_sizes[-1]
    if np.all(adv <= 0):
        return lo
    if np.all(adv > 0):
        return hi
    c = _flip(log_sizes, adv, rising=False)
    return float(np.clip(c if c is not None else hi, lo, hi))


def generate_ground_truth(profile: HardwareProfile, grid: Optional[GroundTruthGrid] = None) -> list[ThresholdSample]:
    grid = grid or GroundTruthGrid()
    rhos = list(grid.sparsity_levels)
    out: list[ThresholdSample] = []
    flips = 0
    for kind in grid.kinds:
        for b in grid.batches:
            nodes = [[grid_operator(kind, lv, r, b) for r in rhos] for lv in range(grid.size_levels)]
            adv = np.array([[_advantage(n, profile) for n in row] for row in nodes])   # [size, rho]
            logi = [math.log10(max(row[0].intensity, 1)) for row in nodes]
            if np.any(np.diff(logi) <= 0):
                raise ValueError(f"{kind.value}: size levels do not increase intensity")
            s_cell = [sparsity_threshold(rhos, adv[lv]) for lv in range(grid.size_levels)]
            c_cell = [intensity_threshold(logi, adv[:, j]) for j in range(len(rhos))]
            flips += sum(0.0 < s < 1.0 for s in s_cell)
            for lv in range(grid.size_levels):
                for j, r in enumerate(rhos):
                    node = nodes[lv][j]
                    out.append(ThresholdSample(raw_features(node), s_cell[lv], 10.0 ** c_cell[j],
                                               kind.value, lv, b, profile.name))
    if flips == 0:
        log.warning("profile %s: one device dominates every cell; thresholds sit at the boundary", profile.name)
    return out


def oracle_thresholds(node: OperatorNode, profile: HardwareProfile, scale: float = 1.0,
                      resolution: int = 101) -> tuple[float, float]:
    """Exact per-operator (s, c) from the cost model, used when no trained predictor is at hand."""
    rhos = np.linspace(0.0, 1.0, resolution)
    adv = [_advantage(_with_sparsity(node, r), profile, scale) for r in rhos]
    s = sparsity_threshold(rhos, adv)
    factors = np.logspace(-6, 6, 121)
    base = max(node.intensity * scale, 1.0)
    adv_c = [_advantage(node, profile, scale * f) for f in factors]
    logc = intensity_threshold(list(np.log10(base * factors)), adv_c)
    return s, 10.0 ** logc


def _with_sparsity(node: OperatorNode, rho: float) -> OperatorNode:
    from dataclasses import replace
    return replace(node, sparsity=float(rho))


def closed_form_sparsity_threshold(ratio: float) -> float:
    """Crossover for CPU kappa=1, GPU kappa=0, GPU throughput ``ratio`` times the CPU's."""
    return max(0.0, 1.0 - 1.0 / ratio)


# --- model ----------------------------------------------------------------------

@dataclass
class PredictorConfig:
    hidden: int = 128
    heads: int = 4
    encoder_layers: int = 2
    lstm_hidden: int = 64
    epochs: int = 100
    lr: float = 1e-4
    train_fraction: float = 0.8
    seed: int = 0
    batch_size: int = 16
    grad_clip: Optional[float] = 1.0
    lr_final_fraction: float = 1.0    # cosine decay target; 1.0 keeps lr constant

    def __post_init__(self):
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if min(self.epochs, self.batch_size, self.encoder_layers, self.lstm_hidden) < 1:
            raise ConfigError("epochs, batch_size, encoder_layers and lstm_hidden must be >= 1")
        if not self.lr > 0 or not 0.0 < self.lr_final_fraction <= 1.0:
            raise ConfigError("need lr > 0 and lr_final_fraction in (0, 1]")


@dataclass(frozen=True)
class ThresholdPrediction:
    s: float
    c: float


class ThresholdModel(Module):
    """embedding -> encoder layers -> BiLSTM -> per-step sigmoid head (s, scaled log c)."""

    def __init__(self, config: PredictorConfig, n_features: int = 6):
        super().__init__()
        rng = np.random.default_rng([config.seed, 0x7E])
        self.config = config
        self.embed = self.module("embed", Dense(n_features, config.hidden, rng))
        self.encoders = [self.module(f"enc{i}", EncoderLayer(config.hidden, config.heads, rng))
                         for i in range(config.encoder_layers)]
        self.lstm = self.module("lstm", BiLSTM(config.hidden, config.lstm_hidden, rng))
        self.head = self.module("head", Dense(2 * config.lstm_hidden, 2, rng))
        self.scaler = FeatureScaler.identity()
        self.log_c_range = (0.0, 12.0)

    def __call__(self, x) -> Tensor:
        """(batch, seq, 6) scaled features -> (batch, seq, 2) in [0, 1]."""
        h = self.embed(x)
        for enc in self.encoders:
            h = enc(h)
        return T.sigmoid(self.head(self.lstm(h)))

    def encode_c(self, c) -> np.ndarray:
        lo, hi = self.log_c_range
        return (np.log10(np.maximum(c, 1.0)) - lo) / (hi - lo)

    def decode_c(self, u) -> np.ndarray:
        lo, hi = self.log_c_range
        return 10.0 ** (lo + np.asarray(u) * (hi - lo))

    def predict_raw(self, raw_seq) -> np.ndarray:
        raw = np.asarray(raw_seq, dtype=np.float64)
        if raw.size == 0:
            raise ValueError("empty operator sequence")
        x = self.scaler.transform(raw)
        squeeze = x.ndim == 2
        out = self(Tensor(x[None] if squeeze else x)).data
        return out[0] if squeeze else out

    def predict(self, sequence) -> list[ThresholdPrediction]:
        """Thresholds for each element of a sequence of raw feature vectors or a graph."""
        if isinstance(sequence, ModelGraph):
            sequence = [raw_features(n) for n in sequence.nodes]
        out = self.predict_raw(sequence)
        c = self.decode_c(out[:, 1])
        return [ThresholdPrediction(float(s), float(ci)) for s, ci in zip(out[:, 0], c)]

    def save(self, path) -> None:
        save_params(path, self.state_dict(), extra={"config": asdict(self.config),
                                                    "scaler": self.scaler.to_dict(),
                                                    "log_c_range": list(self.log_c_range)})

    @classmethod
    def load(cls, path) -> "ThresholdModel":
        state, extra = load_params(path)
        model = cls(PredictorConfig(**extra["config"]))
        model.load_state_dict(state)
        model.scaler = FeatureScaler.from_dict(extra["scaler"])
        model.log_c_range = tuple(extra["log_c_range"])
        return model


def predict(model: ThresholdModel, sequence) -> list[ThresholdPrediction]:
    return model.predict(sequence)


# --- data shaping ---------------------------------------------------------------

def group_sequences(samples: Sequence[ThresholdSample]) -> list[list[ThresholdSample]]:
    """One sequence per (profile, kind, batch, size) cell, ordered by sparsity."""
    groups: dict[tuple, list] = {}
    for smp in samples:
        groups.setdefault(smp.group, []).append(smp)
    return [sorted(g, key=lambda s: s.x[0]) for _, g in sorted(groups.items(), key=lambda kv: str(kv[0]))]


def split_sequences(seqs: list, train_fraction: float, seed: int):
    """Hold out about ``1 - train_fraction`` of the cells within each (profile, kind, batch) stratum."""
    rng = np.random.default_rng([seed, 0x5B])
    strata: dict = {}
    for i, seq in enumerate(seqs):
        key = seq[0].group[:3] if isinstance(seq[0], ThresholdSample) else 0
        strata.setdefault(key, []).append(i)
    train_idx, test_idx = [], []
    for key in sorted(strata, key=str):
        members = strata[key]
        order = rng.permutation(len(members))
        n_test = int(round((1.0 - train_fraction) * len(members)))
        test_idx += [members[j] for j in order[:n_test]]
        train_idx += [members[j] for j in order[n_test:]]
    if not test_idx:
        test_idx.append(train_idx.pop())
    if not train_idx:
        train_idx.append(test_idx.pop())
    return [seqs[i] for i in sorted(train_idx)], [seqs[i] for i in sorted(test_idx)]


def _arrays(seqs: Sequence[Sequence[ThresholdSample]]):
    """Pad to a common length; returns raw X, s, c and a validity mask."""
    n = len(seqs)
    L = max(len(s) for s in seqs)
    X = np.zeros((n, L, 6))
    S = np.zeros((n, L))
    C = np.ones((n, L))
    M = np.zeros((n, L))
    for i, seq in enumerate(seqs):
        for j, smp in enumerate(seq):
            X[i, j], S[i, j], C[i, j], M[i, j] = smp.x, smp.s, smp.c, 1.0
    return X, S, C, M


# --- metrics ----------------------------------------------------------------------

def accuracy_pm10(pred_s, pred_c, true_s, true_c, floor_s: float = S_FLOOR) -> tuple[float, float]:
    """Percent of predictions within 10%: relative on s (with a floor), on log10 for c."""
    ps, pc, ts, tc = (np.asarray(a, dtype=np.float64).ravel() for a in (pred_s, pred_c, true_s, true_c))
    if not len(ps) == len(pc) == len(ts) == len(tc):
        raise ValueError("prediction and label lengths differ")
    if len(ps) == 0:
        return 0.0, 0.0
    ok_s = np.abs(ps - ts) <= 0.1 * np.maximum(ts, floor_s) + 1e-12
    lt = np.log10(np.maximum(tc, 1e-300))
    lp = np.log10(np.maximum(pc, 1e-300))
    ok_c = np.abs(lp - lt) <= 0.1 * np.abs(lt) + 1e-12
    return 100.0 * float(ok_s.mean()), 100.0 * float(ok_c.mean())


def threshold_loss(pred: Tensor, s, c_scaled, mask) -> Tensor:
    """Masked mean of squared errors on both heads."""
    m = np.asarray(mask, dtype=np.float64)
    n = max(m.sum(), 1.0)
    ds = pred[..., 0] - s
    dc = pred[..., 1] - c_scaled
    return T.tsum((T.square(ds) + T.square(dc)) * m) * (1.0 / n)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_loss: float
    acc_s: float
    acc_c: float


@dataclass
class TrainReport:
    model: ThresholdModel
    history: list[EpochMetrics]
    test_acc: tuple[float, float]
    baseline_acc: tuple[float, float]
    seconds: float
    n_train: int
    n_test: int

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_loss", "acc_s", "acc_c"])
        for m in self.history:
            w.writerow([m.epoch, repr(m.train_loss), repr(m.test_loss), repr(m.acc_s), repr(m.acc_c)])
        return buf.getvalue()


# --- linear baseline --------------------------------------------------------------

@dataclass
class LinearBaseline:
    coef: np.ndarray     # (7, 2): bias row + six features -> (s, log10 c)

    @classmethod
    def fit(cls, X: np.ndarray, s: np.ndarray, c: np.ndarray) -> "LinearBaseline":
        A = np.hstack([np.ones((len(X), 1)), X])
        Y = np.column_stack([s, np.log10(c)])
        coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
        return cls(coef)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Y = np.hstack([np.ones((len(X), 1)), X]) @ self.coef
        return np.clip(Y[:, 0], 0.0, 1.0), 10.0 ** Y[:, 1]


# --- training -----------------------------------------------------------------------

def _evaluate(model: ThresholdModel, X, S, C, M):
    out = model(Tensor(model.scaler.transform(X)))
    loss = threshold_loss(out, S, model.encode_c(C), M).item()
    sel = M > 0
    acc = accuracy_pm10(out.data[..., 0][sel], model.decode_c(out.data[..., 1][sel]), S[sel], C[sel])
    return loss, acc


def train(samples: Sequence[ThresholdSample], config: Optional[PredictorConfig] = None,
          log_every: int = 0) -> TrainReport:
    config = config or PredictorConfig()
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    t0 = time.perf_counter()
    seqs = group_sequences(samples)
    if len(seqs) < 2:
        # a single cell: split its rows instead
        seqs = [[s] for s in seqs[0]]
    train_seqs, test_seqs = split_sequences(seqs, config.train_fraction, config.seed)
    Xtr, Str, Ctr, Mtr = _arrays(train_seqs)
    Xte, Ste, Cte, Mte = _arrays(test_seqs)

    model = ThresholdModel(config)
    sel = Mtr > 0
    model.scaler = FeatureScaler.fit(Xtr[sel])
    lc = np.log10(np.maximum(Ctr[sel], 1.0))
    model.log_c_range = (float(lc.min()) - 0.5, float(lc.max()) + 0.5)
    opt = Adam(model.parameters(), lr=config.lr, grad_clip=config.grad_clip)
    rng = np.random.default_rng([config.seed, 0xB7])
    Xtr_s = model.scaler.transform(Xtr)
    Ctr_s = model.encode_c(Ctr)
    history: list[EpochMetrics] = []
    n = len(train_seqs)
    for epoch in range(1, config.epochs + 1):
        frac = (epoch - 1) / max(1, config.epochs - 1)
        opt.state.lr = config.lr * (config.lr_final_fraction
                                    + (1.0 - config.lr_final_fraction) * 0.5 * (1.0 + math.cos(math.pi * frac)))
        order = rng.permutation(n)
        total, weight = 0.0, 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            loss = threshold_loss(model(Tensor(Xtr_s[idx])), Str[idx], Ctr_s[idx], Mtr[idx])
            if not math.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite predictor loss at epoch {epoch}")
            loss.backward()
            opt.step()
            w = Mtr[idx].sum()
            total += loss.item() * w
            weight += w
        test_loss, acc = _evaluate(model, Xte, Ste, Cte, Mte)
        history.append(EpochMetrics(epoch, total / weight, test_loss, acc[0], acc[1]))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.5f test %.5f acc %.1f/%.1f", epoch, total / weight, test_loss, *acc)

    base = LinearBaseline.fit(Xtr[sel], Str[sel], Ctr[sel])
    tsel = Mte > 0
    bs, bc = base.predict(Xte[tsel])
    base_acc = accuracy_pm10(bs, bc, Ste[tsel], Cte[tsel])
    test_acc = (history[-1].acc_s, history[-1].acc_c)
    return TrainReport(model, history, test_acc, base_acc, time.perf_counter() - t0,
                       int(sel.sum()), int(tsel.sum()))
