"""Image-to-text embedding alignment: a LoRA-parameterized linear projection
with contrastive (InfoNCE) and least-squares training, plus cross-attention
pooling for compressing large patch-feature grids.

Convention used throughout: row vectors, y = x @ W. A vector in image space
(length d_img) maps to text space (length d_txt) through the effective matrix
W = W0 + (alpha / r) * B @ A, where W0 is frozen and only B, A train in
contrastive mode.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptFile,
    DimMismatch,
    NonFiniteLoss,
    NotDivisible,
    ZeroProjection,
)

ZERO_NORM_THRESHOLD = 1e-12

MODEL_MAGIC = b"FRWP"
MODEL_VERSION = 1


@dataclass
class ProjectionModel:
    """Frozen base matrix W0 plus trainable low-rank factors B (d_img x r)
    and A (r x d_txt), scaled by alpha / r."""

    d_img: int
    d_txt: int
    W0: np.ndarray
    B: np.ndarray
    A: np.ndarray
    r: int
    alpha: float

    def __post_init__(self):
        self.W0 = np.asarray(self.W0, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.r < 1:
            raise ValueError("rank must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.W0.shape != (self.d_img, self.d_txt):
            raise DimMismatch(f"W0 shape {self.W0.shape} != ({self.d_img}, {self.d_txt})")
        if self.B.shape != (self.d_img, self.r):
            raise DimMismatch(f"B shape {self.B.shape} != ({self.d_img}, {self.r})")
        if self.A.shape != (self.r, self.d_txt):
            raise DimMismatch(f"A shape {self.A.shape} != ({self.r}, {self.d_txt})")

    @property
    def trainable_parameter_count(self) -> int:
        return self.r * (self.d_img + self.d_txt)

    def effective_weights(self) -> np.ndarray:
        return self.W0 + lora_delta(self)

    @classmethod
    def initialize(
        cls,
        d_img: int,
        d_txt: int,
        r: int = 8,
        alpha: float | None = None,
        seed: int = 0,
        W0: np.ndarray | None = None,
    ) -> "ProjectionModel":
        """Fresh model: B small uniform, A zeros, so the low-rank delta starts
        at exactly zero. alpha defaults to 2 * r.
        """
        rng = np.random.default_rng(seed)
        if W0 is None:
            W0 = np.eye(d_img, d_txt) if d_img == d_txt else rng.standard_normal((d_img, d_txt)) / np.sqrt(d_img)
        bound = 1.0 / np.sqrt(d_img)
        B = rng.uniform(-bound, bound, size=(d_img, r))
        A = np.zeros((r, d_txt))
        return cls(d_img=d_img, d_txt=d_txt, W0=np.asarray(W0, dtype=np.float64), B=B, A=A,
                   r=r, alpha=float(alpha) if alpha is not None else 2.0 * r)


@dataclass
class PatchFeatures:
    """Grid features from a high-resolution encoder: n patches of dim d_p."""

    n: int
    d_p: int
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.n < 1:
            raise ValueError("patch count must be >= 1")
        if self.rows.shape != (self.n, self.d_p):
            raise DimMismatch(f"rows shape {self.rows.shape} != ({self.n}, {self.d_p})")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("patch features must be finite")


@dataclass
class CrossAttentionParams:
    """Key/value projections from patch space. Queries are used directly
    (no query projection), so the query dim must equal d_k."""

    d_q: int
    d_p: int
    d_k: int
    Wk: np.ndarray
    Wv: np.ndarray

    def __post_init__(self):
        self.Wk = np.asarray(self.Wk, dtype=np.float64)
        self.Wv = np.asarray(self.Wv, dtype=np.float64)
        if self.d_k < 1:
            raise ValueError("d_k must be >= 1")
        if self.Wk.shape != (self.d_p, self.d_k):
            raise DimMismatch(f"Wk shape {self.Wk.shape} != ({self.d_p}, {self.d_k})")
        if self.Wv.shape != (self.d_p, self.d_q):
            raise DimMismatch(f"Wv shape {self.Wv.shape} != ({self.d_p}, {self.d_q})")
        if not (np.all(np.isfinite(self.Wk)) and np.all(np.isfinite(self.Wv))):
            raise ValueError("attention parameters must be finite")


class TrainMode(str, enum.Enum):
    LEAST_SQUARES = "least_squares"
    INFONCE = "infonce"


@dataclass
class TrainConfig:
    mode: TrainMode = TrainMode.INFONCE
    lr: float = 0.05
    epochs: int = 25
    batch_size: int = 0  # 0 = full batch
    tau: float = 0.07
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class TrainLogRow:
    epoch: int
    split: str  # "train" or "val"
    loss: float
    retrieval_accuracy: float


@dataclass
class TrainLog:
    rows: list[TrainLogRow] = field(default_factory=list)

    def splits(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row.split not in seen:
                seen.append(row.split)
        return seen


def lora_delta(m: ProjectionModel) -> np.ndarray:
    """The low-rank update (alpha / r) * B @ A, shape d_img x d_txt."""
    return (m.alpha / m.r) * (m.B @ m.A)


def lora_merge(m: ProjectionModel) -> np.ndarray:
    return m.W0 + lora_delta(m)


def project(x: np.ndarray, m: ProjectionModel) -> np.ndarray:
    """Map an image-space vector to a unit text-space vector via x @ W."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.d_img,):
        raise DimMismatch(f"input shape {x.shape}, expected ({m.d_img},)")
    y = x @ m.effective_weights()
    norm = float(np.linalg.norm(y))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroProjection(f"projection norm {norm} below {ZERO_NORM_THRESHOLD}")
    return y / norm


def _log_softmax(L: np.ndarray, axis: int) -> np.ndarray:
    shifted = L - np.max(L, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def infonce_loss(P: np.ndarray, T: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over matched rows of P (projected image vectors) and
    T (text vectors), both k x d and unit-norm.

    logits[i, j] = P[i] . T[j] / tau; the loss is the mean of row-wise and
    column-wise cross-entropy with targets on the diagonal. Returns the loss
    and its exact gradient with respect to P.
    """
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if P.shape != T.shape:
        raise DimMismatch(f"P shape {P.shape} != T shape {T.shape}")
    k = P.shape[0]
    L = (P @ T.T) / tau
    log_sr = _log_softmax(L, axis=1)
    log_sc = _log_softmax(L, axis=0)
    diag = np.arange(k)
    loss = -0.5 * (np.mean(log_sr[diag, diag]) + np.mean(log_sc[diag, diag]))
    eye = np.eye(k)
    G = (np.exp(log_sr) - eye) / (2 * k) + (np.exp(log_sc) - eye) / (2 * k)
    dP = (G @ T) / tau
    return float(loss), dP


def infonce_grads(
    X: np.ndarray, T: np.ndarray, m: ProjectionModel, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """InfoNCE loss over raw image vectors X and unit text vectors T, with
    analytic gradients w.r.t. the LoRA factors B and A.

    Chains through the projection y = x @ W and its normalization:
    dY_i = (dP_i - (dP_i . P_i) P_i) / ||Y_i||.
    """
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if X.shape[1] != m.d_img or T.shape[1] != m.d_txt:
        raise DimMismatch(f"pairs ({X.shape[1]}, {T.shape[1]}) vs model ({m.d_img}, {m.d_txt})")
    W = m.effective_weights()
    Y = X @ W
    norms = np.linalg.norm(Y, axis=1)
    if np.any(norms < ZERO_NORM_THRESHOLD):
        raise ZeroProjection("a projected vector has near-zero norm")
    P = Y / norms[:, None]
    loss, dP = infonce_loss(P, T, tau)
    dY = (dP - np.sum(dP * P, axis=1, keepdims=True) * P) / norms[:, None]
    dW = X.T @ dY
    scale = m.alpha / m.r
    grad_B = scale * (dW @ m.A.T)
    grad_A = scale * (m.B.T @ dW)
    return loss, grad_B, grad_A


def least_squares_loss_grad(
    X: np.ndarray, T: np.ndarray, W: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared residual (1/k) * ||X W - T||_F^2 and its gradient in W."""
    R = X @ W - T
    k = X.shape[0]
    loss = float(np.sum(R * R) / k)
    grad = (2.0 / k) * (X.T @ R)
    return loss, grad


def _pairs_to_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray([p[0] for p in pairs], dtype=np.float64)
    T = np.asarray([p[1] for p in pairs], dtype=np.float64)
    return X, T


def retrieval_accuracy(X: np.ndarray, T: np.ndarray, W: np.ndarray) -> float:
    """Fraction of image vectors whose projection ranks its own text vector
    first among all text vectors in the set (cosine similarity)."""
    Y = X @ W
    norms = np.linalg.norm(Y, axis=1)
    norms[norms < ZERO_NORM_THRESHOLD] = 1.0
    P = Y / norms[:, None]
    S = P @ T.T
    return float(np.mean(np.argmax(S, axis=1) == np.arange(X.shape[0])))


def train_projection(
    pairs,
    cfg: TrainConfig,
    m0: ProjectionModel,
    val_pairs=None,
) -> tuple[ProjectionModel, TrainLog]:
    """Train the projection on (image vec, text vec) pairs.

    LeastSquares mode runs gradient descent on the full dense W (starting from
    m0's merged weights) and returns a model whose low-rank delta is zero.
    InfoNCE mode updates only B and A; W0 is untouched. Deterministic given
    cfg.seed. Per-epoch loss and retrieval accuracy are evaluated on the full
    split after that epoch's updates.
    """
    if not pairs:
        raise ValueError("at least one training pair is required")
    X, T = _pairs_to_arrays(pairs)
    if X.shape[1] != m0.d_img or T.shape[1] != m0.d_txt:
        raise DimMismatch(f"pairs ({X.shape[1]}, {T.shape[1]}) vs model ({m0.d_img}, {m0.d_txt})")
    has_val = val_pairs is not None and len(val_pairs) > 0
    if has_val:
        Xv, Tv = _pairs_to_arrays(val_pairs)

    rng = np.random.default_rng(cfg.seed)
    k = X.shape[0]
    batch = cfg.batch_size if 0 < cfg.batch_size < k else k
    log = TrainLog()

    if cfg.mode == TrainMode.LEAST_SQUARES:
        W = lora_merge(m0)
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(k) if batch < k else np.arange(k)
            for start in range(0, k, batch):
                idx = order[start:start + batch]
                _, grad = least_squares_loss_grad(X[idx], T[idx], W)
                W -= cfg.lr * grad
            loss, _ = least_squares_loss_grad(X, T, W)
            _append_epoch(log, epoch, "train", loss, retrieval_accuracy(X, T, W))
            if has_val:
                vloss, _ = least_squares_loss_grad(Xv, Tv, W)
                _append_epoch(log, epoch, "val", vloss, retrieval_accuracy(Xv, Tv, W))
        model = ProjectionModel(
            d_img=m0.d_img, d_txt=m0.d_txt, W0=W,
            B=np.zeros((m0.d_img, m0.r)), A=np.zeros((m0.r, m0.d_txt)),
            r=m0.r, alpha=m0.alpha,
        )
        return model, log

    # InfoNCE: W0 frozen, only the r*(d_img + d_txt) low-rank parameters move.
    model = ProjectionModel(
        d_img=m0.d_img, d_txt=m0.d_txt, W0=m0.W0,
        B=m0.B.copy(), A=m0.A.copy(), r=m0.r, alpha=m0.alpha,
    )
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(k) if batch < k else np.arange(k)
        for start in range(0, k, batch):
            idx = order[start:start + batch]
            _, grad_B, grad_A = infonce_grads(X[idx], T[idx], model, cfg.tau)
            model.B -= cfg.lr * grad_B
            model.A -= cfg.lr * grad_A
        W = model.effective_weights()
        loss, _, _ = infonce_grads(X, T, model, cfg.tau)
        _append_epoch(log, epoch, "train", loss, retrieval_accuracy(X, T, W))
        if has_val:
            vloss, _, _ = infonce_grads(Xv, Tv, model, cfg.tau)
            _append_epoch(log, epoch, "val", vloss, retrieval_accuracy(Xv, Tv, W))
    return model, log


def _append_epoch(log: TrainLog, epoch: int, split: str, loss: float, acc: float) -> None:
    if not np.isfinite(loss):
        raise NonFiniteLoss(epoch)
    log.rows.append(TrainLogRow(epoch=epoch, split=split, loss=loss, retrieval_accuracy=acc))


def _attention_scores(Q: np.ndarray, patches: PatchFeatures, params: CrossAttentionParams) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2:
        raise DimMismatch(f"queries must be 2-D, got shape {Q.shape}")
    if patches.d_p != params.d_p:
        raise DimMismatch(f"patch dim {patches.d_p} != params d_p {params.d_p}")
    if Q.shape[1] != params.d_k:
        raise DimMismatch(f"query dim {Q.shape[1]} != key dim {params.d_k} (queries are used directly)")
    K = patches.rows @ params.Wk
    return (Q @ K.T) / np.sqrt(params.d_k)


def cross_attention_weights(
    Q: np.ndarray, patches: PatchFeatures, params: CrossAttentionParams
) -> np.ndarray:
    """Row-stochastic m x n attention matrix of queries over patches."""
    S = _attention_scores(Q, patches, params)
    shifted = np.exp(S - np.max(S, axis=1, keepdims=True))
    return shifted / np.sum(shifted, axis=1, keepdims=True)


def cross_attention_pool(
    Q: np.ndarray, patches: PatchFeatures, params: CrossAttentionParams
) -> np.ndarray:
    """Compress n patch features into one output row per query: softmax
    attention from each query over keys K = P @ Wk, averaging values
    V = P @ Wv. Output shape is m x d_q however large n is.
    """
    attn = cross_attention_weights(Q, patches, params)
    V = patches.rows @ params.Wv
    return attn @ V


def patch_count(resolution: int, patch_size: int) -> int:
    """Number of patches a square image yields at the given patch size."""
    if patch_size < 1 or resolution < 1:
        raise NotDivisible("resolution and patch_size must be positive")
    if resolution % patch_size != 0:
        raise NotDivisible(f"{patch_size} does not divide {resolution}")
    return (resolution // patch_size) ** 2


def save_model(m: ProjectionModel, path: str) -> None:
    """Write a ProjectionModel: magic, version u16, dims u32, alpha f64, then
    W0, B, A as row-major little-endian f32."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<H", MODEL_VERSION))
        fh.write(struct.pack("<III", m.d_img, m.d_txt, m.r))
        fh.write(struct.pack("<d", m.alpha))
        for mat in (m.W0, m.B, m.A):
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load_model(path: str) -> ProjectionModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MODEL_MAGIC:
        raise CorruptFile(0, "bad magic")
    if len(data) < 26:
        raise CorruptFile(len(data), "truncated header")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != MODEL_VERSION:
        raise CorruptFile(4, f"unsupported version {version}")
    d_img, d_txt, r = struct.unpack_from("<III", data, 6)
    (alpha,) = struct.unpack_from("<d", data, 18)
    offset = 26
    expected = offset + 4 * (d_img * d_txt + d_img * r + r * d_txt)
    if len(data) != expected:
        raise CorruptFile(len(data), f"expected {expected} bytes, got {len(data)}")

    def take(rows: int, cols: int) -> np.ndarray:
        nonlocal offset
        count = rows * cols
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64)
        offset += 4 * count
        return arr.reshape(rows, cols)

    W0 = take(d_img, d_txt)
    B = take(d_img, r)
    A = take(r, d_txt)
    return ProjectionModel(d_img=d_img, d_txt=d_txt, W0=W0, B=B, A=A, r=r, alpha=alpha)
