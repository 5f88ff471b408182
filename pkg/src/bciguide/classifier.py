"""Workload classification pipeline.

Training: band-pass the two calibration streams, slide 1 s windows,
estimate shrunk class covariances per band, solve the two-class spatial
filter eigenproblem, build a log-variance feature per (band, filter)
couple, select six couples by greedy relevance-minus-redundancy on
mutual information, and fit a shrinkage linear discriminant.

Runtime: the same filters and windows produce a +/-1 label every 0.1 s;
the 1 Hz workload index is the median of the last ten labels.
"""

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._util import sha256_of
from .dsp import FilterBank, SlidingWindower, WindowSpec
from .eeg import DEFAULT_LAYOUT, ChannelLayout, EegBlock
from .errors import CalibrationError, TrainingError

MODEL_VERSION = 1
FEATURE_EPS = 1e-12


@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    n_windows: int
    shrinkage: float


def estimate_covariance(windows, shrinkage: float = 0.05) -> CovarianceEstimate:
    """Average per-window sample covariance, shrunk toward a scaled identity.

    shrinkage=1 collapses to (trace/d) * I; any shrinkage > 0 guarantees
    positive definiteness even with degenerate channels.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must be in [0, 1]")
    stack = np.asarray(windows, dtype=float)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("need at least one channels x samples window")
    n_w, d, n_t = stack.shape
    centered = stack - stack.mean(axis=2, keepdims=True)
    cov = np.einsum("wct,wdt->cd", centered, centered) / (n_w * max(n_t - 1, 1))
    cov = 0.5 * (cov + cov.T)
    shrunk = (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / d) * np.eye(d)
    return CovarianceEstimate(matrix=shrunk, n_windows=n_w, shrinkage=shrinkage)


@dataclass
class CspModel:
    """Spatial filters for one band: rows of `filters` are the filters.

    Eigenvalues are the high-class variance fractions w' S_high w with the
    normalization w' (S_high + S_low) w = 1, sorted descending over the
    retained extremes.
    """

    filters: np.ndarray      # (2*n_pairs, n_channels)
    eigenvalues: np.ndarray  # (2*n_pairs,)


def _as_cov_matrix(cov) -> np.ndarray:
    m = cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    try:
        linalg.cholesky(m, lower=True)
    except linalg.LinAlgError as exc:
        eigmin = float(np.min(linalg.eigvalsh(m)))
        raise np.linalg.LinAlgError(
            f"covariance not positive definite (min eigenvalue {eigmin:.3e})") from exc
    return m


def train_csp(cov_low, cov_high, n_pairs: int = 3) -> CspModel:
    """Solve S_high w = lambda (S_high + S_low) w; keep n_pairs per extreme."""
    s_low = _as_cov_matrix(cov_low)
    s_high = _as_cov_matrix(cov_high)
    if s_low.shape != s_high.shape:
        raise ValueError("class covariances must have the same dimension")
    evals, evecs = linalg.eigh(s_high, s_high + s_low)  # ascending, B-orthonormal
    n = len(evals)
    if 2 * n_pairs > n:
        raise ValueError(f"cannot retain {n_pairs} pairs from {n} channels")
    keep = list(range(n - 1, n - 1 - n_pairs, -1)) + list(range(n_pairs - 1, -1, -1))
    return CspModel(filters=evecs[:, keep].T.copy(), eigenvalues=evals[keep].copy())


def csp_feature(window: np.ndarray, w: np.ndarray, eps: float = FEATURE_EPS) -> float:
    """log variance of the spatially filtered window."""
    y = np.asarray(w, dtype=float) @ np.asarray(window, dtype=float)
    return float(np.log(np.var(y) + eps))


@dataclass(frozen=True, order=True)
class FeatureCouple:
    """One (frequency band, spatial filter) pair in the 48-column table."""

    band: int
    filt: int
    n_filters: int = 6

    @property
    def couple_id(self) -> int:
        return self.band * self.n_filters + self.filt

    @classmethod
    def from_column(cls, column: int, n_filters: int = 6) -> "FeatureCouple":
        return cls(band=column // n_filters, filt=column % n_filters, n_filters=n_filters)


def mutual_information(x, y) -> float:
    """Plug-in mutual information (bits) from the joint histogram."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D arrays")
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    nx, ny = xi.max() + 1, yi.max() + 1
    joint = np.bincount(xi * ny + yi, minlength=nx * ny).reshape(nx, ny) / len(x)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(px, py)
    return float(np.sum(joint[nz] * np.log2(joint[nz] / outer[nz])))


def discretize_features(table: np.ndarray, n_bins: int = 8) -> np.ndarray:
    """Equal-frequency binning per column; returns integer bin labels."""
    table = np.asarray(table, dtype=float)
    bins = np.empty(table.shape, dtype=np.int64)
    qs = np.arange(1, n_bins) / n_bins
    for j in range(table.shape[1]):
        edges = np.quantile(table[:, j], qs)
        bins[:, j] = np.searchsorted(edges, table[:, j], side="right")
    return bins


def mrmr_select(table: np.ndarray, labels, k: int = 6, n_bins: int = 8,
                n_filters: int = 6) -> list:
    """Greedy forward selection maximizing MI relevance minus mean redundancy.

    Ties break toward the lowest couple id (column index).  Features are
    discretized into equal-frequency bins before any MI is computed.
    """
    table = np.asarray(table, dtype=float)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(table)):
        raise ValueError("feature table must be finite")
    n_feat = table.shape[1]
    if k > n_feat:
        raise ValueError(f"cannot select {k} of {n_feat} features")
    binned = discretize_features(table, n_bins)
    relevance = np.array([mutual_information(binned[:, j], labels) for j in range(n_feat)])

    selected: list[int] = []
    red_cache: dict[tuple, float] = {}

    def redundancy(j):
        total = 0.0
        for s in selected:
            key = (min(j, s), max(j, s))
            if key not in red_cache:
                red_cache[key] = mutual_information(binned[:, key[0]], binned[:, key[1]])
            total += red_cache[key]
        return total / len(selected)

    while len(selected) < k:
        best, best_score = None, -np.inf
        for j in range(n_feat):
            if j in selected:
                continue
            score = relevance[j] if not selected else relevance[j] - redundancy(j)
            if score > best_score:
                best, best_score = j, score
        selected.append(best)
    return [FeatureCouple.from_column(j, n_filters) for j in selected]


@dataclass
class LdaModel:
    weights: np.ndarray
    bias: float
    gamma: float

    def decision(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.weights + self.bias

    def classify(self, features) -> np.ndarray:
        """Hard labels in {-1, +1}; a decision value of exactly 0 maps to +1."""
        g = self.decision(features)
        return np.where(g >= 0, 1, -1).astype(int)


def train_lda(features, labels, gamma: float = 0.1) -> LdaModel:
    """Shrinkage LDA: weights = inv((1-g) S_pooled + g (tr/d) I) (mu1 - mu0)."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if x.ndim == 1:
        x = x[:, None]
    hi, lo = x[y > 0], x[y < 0]
    if len(hi) == 0 or len(lo) == 0:
        raise TrainingError("both classes must be present")
    if len(x) < 12:
        raise TrainingError(f"need at least 12 samples, got {len(x)}")
    d = x.shape[1]
    mu_hi, mu_lo = hi.mean(axis=0), lo.mean(axis=0)
    pooled = np.zeros((d, d))
    for cls in (hi, lo):
        c = cls - cls.mean(axis=0)
        pooled += c.T @ c
    pooled /= len(hi) + len(lo) - 2
    shrunk = (1.0 - gamma) * pooled + gamma * (np.trace(pooled) / d) * np.eye(d)
    weights = linalg.solve(shrunk, mu_hi - mu_lo, assume_a="pos")
    bias = -float(weights @ (mu_hi + mu_lo) / 2.0)
    return LdaModel(weights=weights, bias=bias, gamma=gamma)


@dataclass
class PipelineModel:
    """Frozen calibration artifacts; immutable and shareable once trained."""

    layout: ChannelLayout
    band_centers: tuple
    bandwidth: float
    filter_order: int
    window: WindowSpec
    csp: list            # CspModel per band
    couples: list        # 6 FeatureCouple, in selection order
    lda: LdaModel
    cov_shrinkage: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_filters_per_band(self) -> int:
        return self.csp[0].filters.shape[0]

    def make_bank(self) -> FilterBank:
        return FilterBank(fs=self.layout.sample_rate, centers=self.band_centers,
                          bandwidth=self.bandwidth, order=self.filter_order,
                          n_channels=len(self.layout.names))

    def window_features(self, window_bands) -> np.ndarray:
        """Feature vector for one multi-band window, in couple order."""
        feats = np.empty(len(self.couples))
        for i, c in enumerate(self.couples):
            feats[i] = csp_feature(window_bands[c.band], self.csp[c.band].filters[c.filt])
        return feats

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "layout": {"names": list(self.layout.names),
                       "sample_rate": self.layout.sample_rate},
            "band_centers": list(self.band_centers),
            "bandwidth": self.bandwidth,
            "filter_order": self.filter_order,
            "window": {"length": self.window.length, "overlap": self.window.overlap},
            "csp": [{"filters": {"rows": m.filters.shape[0], "cols": m.filters.shape[1],
                                 "data": m.filters.ravel().tolist()},
                     "eigenvalues": m.eigenvalues.tolist()} for m in self.csp],
            "couples": [{"band": c.band, "filt": c.filt} for c in self.couples],
            "lda": {"weights": self.lda.weights.tolist(), "bias": self.lda.bias,
                    "gamma": self.lda.gamma},
            "cov_shrinkage": self.cov_shrinkage,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        layout = ChannelLayout(names=tuple(d["layout"]["names"]),
                               sample_rate=d["layout"]["sample_rate"])
        csp = []
        for m in d["csp"]:
            f = m["filters"]
            csp.append(CspModel(
                filters=np.asarray(f["data"], dtype=float).reshape(f["rows"], f["cols"]),
                eigenvalues=np.asarray(m["eigenvalues"], dtype=float)))
        n_filters = csp[0].filters.shape[0]
        return cls(
            layout=layout,
            band_centers=tuple(d["band_centers"]),
            bandwidth=d["bandwidth"],
            filter_order=d["filter_order"],
            window=WindowSpec(**d["window"]),
            csp=csp,
            couples=[FeatureCouple(c["band"], c["filt"], n_filters) for c in d["couples"]],
            lda=LdaModel(weights=np.asarray(d["lda"]["weights"], dtype=float),
                         bias=d["lda"]["bias"], gamma=d["lda"]["gamma"]),
            cov_shrinkage=d["cov_shrinkage"],
            diagnostics=d.get("diagnostics", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PipelineModel":
        return cls.from_dict(json.loads(text))

    def content_hash(self) -> str:
        d = self.to_dict()
        d.pop("diagnostics", None)
        return sha256_of(d)


def _as_single_block(eeg, layout) -> EegBlock:
    if isinstance(eeg, EegBlock):
        return eeg
    blocks = list(eeg)
    samples = np.concatenate([b.samples for b in blocks], axis=1)
    return EegBlock(blocks[0].start_time, samples, layout)


def calibrate_pipeline(low_eeg, high_eeg, *, layout: ChannelLayout = DEFAULT_LAYOUT,
                       band_centers=tuple(range(5, 13)), bandwidth: float = 4.0,
                       filter_order: int = 4, window: WindowSpec = WindowSpec(),
                       n_pairs: int = 3, n_selected: int = 6,
                       cov_shrinkage: float = 0.05, lda_gamma: float = 0.1,
                       train_seconds: float = 60.0) -> PipelineModel:
    """Train the full pipeline from one low- and one high-workload stream.

    Exactly the first `train_seconds` of each stream are used; shorter
    input raises CalibrationError naming the shortfall.
    """
    fs = layout.sample_rate
    need = int(round(train_seconds * fs))
    streams = {}
    for name, eeg in (("low", low_eeg), ("high", high_eeg)):
        block = _as_single_block(eeg, layout)
        if block.n_samples < need:
            raise CalibrationError(
                f"{name} stream has {block.n_samples} samples; "
                f"{need} required ({train_seconds:.0f}s at {fs:.0f} Hz)")
        streams[name] = block.samples[:, :need]

    n_bands = len(band_centers)
    windower = SlidingWindower(window, fs, n_bands)
    starts = np.array([windower.start_of(k)
                       for k in range(windower.count_for_length(need))])
    idx = starts[:, None] + np.arange(windower.win)[None, :]
    n_win = len(starts)

    # Filter once per band per class, then gather the window slices.
    csp_models = []
    feature_cols = {"low": [], "high": []}
    for b_i in range(n_bands):
        bank = FilterBank(fs=fs, centers=(band_centers[b_i],), bandwidth=bandwidth,
                          order=filter_order, n_channels=len(layout.names))
        per_class_windows = {}
        for name in ("low", "high"):
            filtered = bank.apply(streams[name])[0]
            bank.reset()
            per_class_windows[name] = filtered[:, idx].transpose(1, 0, 2)
        cov_low = estimate_covariance(per_class_windows["low"], cov_shrinkage)
        cov_high = estimate_covariance(per_class_windows["high"], cov_shrinkage)
        model = train_csp(cov_low, cov_high, n_pairs)
        csp_models.append(model)
        for name in ("low", "high"):
            proj = np.einsum("fc,wct->wft", model.filters, per_class_windows[name])
            feature_cols[name].append(np.log(proj.var(axis=2) + FEATURE_EPS))

    table = np.concatenate(
        [np.concatenate(feature_cols["low"], axis=1),
         np.concatenate(feature_cols["high"], axis=1)], axis=0)
    labels = np.r_[-np.ones(n_win, dtype=int), np.ones(n_win, dtype=int)]

    n_filters = 2 * n_pairs
    couples = mrmr_select(table, labels, k=n_selected, n_filters=n_filters)
    cols = [c.couple_id for c in couples]
    lda = train_lda(table[:, cols], labels, gamma=lda_gamma)
    accuracy = float(np.mean(lda.classify(table[:, cols]) == labels))

    return PipelineModel(
        layout=layout, band_centers=tuple(band_centers), bandwidth=bandwidth,
        filter_order=filter_order, window=window, csp=csp_models, couples=couples,
        lda=lda, cov_shrinkage=cov_shrinkage,
        diagnostics={"n_windows_low": n_win, "n_windows_high": n_win,
                     "training_accuracy": accuracy},
    )


@dataclass
class RawLabel:
    time: float
    label: int
    score: float


class StreamingClassifier:
    """Online path: push EEG chunks, get a +/-1 label every 0.1 s after 1 s."""

    def __init__(self, model: PipelineModel):
        self.model = model
        self._bank = model.make_bank()
        self._windower = SlidingWindower(model.window, model.layout.sample_rate,
                                         n_bands=len(model.band_centers))

    def push(self, block) -> list:
        if isinstance(block, EegBlock):
            if block.layout.sample_rate != self.model.layout.sample_rate:
                raise ValueError(
                    f"stream at {block.layout.sample_rate} Hz does not match the "
                    f"model's {self.model.layout.sample_rate} Hz")
            if block.layout.names != self.model.layout.names:
                raise ValueError("channel layout does not match the model")
        out = []
        for win in self._windower.push(self._bank.apply(block)):
            feats = self.model.window_features(win.bands)
            score = float(self.model.lda.decision(feats))
            out.append(RawLabel(time=win.end_time, label=1 if score >= 0 else -1,
                                score=score))
        return out


def classify_stream(model: PipelineModel, eeg) -> list:
    """Run a whole stream through a fresh StreamingClassifier."""
    clf = StreamingClassifier(model)
    blocks = [eeg] if isinstance(eeg, EegBlock) else list(eeg)
    labels = []
    for b in blocks:
        labels.extend(clf.push(b))
    return labels


@dataclass
class WorkloadIndex:
    """1 Hz smoothed index: median of the last ten raw labels."""

    time: float
    value: int
    raw_history: tuple

    def __post_init__(self):
        assert self.value in (-1, 0, 1)


def _median_of_ten(history) -> int:
    ordered = sorted(history)
    mid = (ordered[4] + ordered[5]) / 2.0
    return int(round(mid))


class MedianSmoother:
    """Keeps the last ten raw labels; current() is None until ten exist."""

    def __init__(self, depth: int = 10):
        self._hist = deque(maxlen=depth)

    def push(self, label: int) -> None:
        if label not in (-1, 1):
            raise ValueError(f"raw labels are +/-1, got {label}")
        self._hist.append(int(label))

    def current(self):
        if len(self._hist) < self._hist.maxlen:
            return None
        return _median_of_ten(self._hist)

    def history(self) -> tuple:
        return tuple(self._hist)


def smooth_index(labels, start_time: float = 1.0, rate: float = 10.0) -> list:
    """Offline smoothing of a finite raw-label stream.

    Labels are assumed to arrive at `rate` Hz starting at `start_time`;
    indexes are emitted at whole seconds, each the median of the ten most
    recent labels at that instant.
    """
    labels = [int(v) for v in labels]
    times = [start_time + i / rate for i in range(len(labels))]
    if len(labels) < 10:
        return []
    smoother = MedianSmoother()
    out = []
    first = int(np.ceil(times[9]))
    last = int(np.ceil(times[-1]))
    i = 0
    for t in range(first, last + 1):
        while i < len(labels) and times[i] <= t + 1e-9:
            smoother.push(labels[i])
            i += 1
        value = smoother.current()
        if value is not None:
            out.append(WorkloadIndex(time=float(t), value=value,
                                     raw_history=smoother.history()))
    return out
