"""Amplitude tokenization: z-score, clip to +-k, map to [0, 1], floor to L levels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eeg_io import FormatError, Recording

TOK_MAGIC = "EEGTOK1"

# Round-off allowance in level units: keeps level -> amplitude -> level a fixed point.
_LEVEL_EPS = 1e-9


@dataclass(frozen=True)
class TokenizerState:
    mu: float
    sigma: float
    k: float = 5.0
    L: int = 512

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.L < 2:
            raise ValueError(f"L must be >= 2, got {self.L}")
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")

    @property
    def bin_width(self) -> float:
        """Amplitude spacing between adjacent levels."""
        return self.sigma * 2.0 * self.k / (self.L - 1)


def fit(rec: Recording | np.ndarray, k: float = 5.0, L: int = 512) -> TokenizerState:
    """Global mean / population std over every sample of every channel."""
    x = rec.samples if isinstance(rec, Recording) else np.asarray(rec, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 samples to fit")
    mu = float(np.mean(x))
    sigma = float(np.std(x))
    # mean rounding leaves a tiny nonzero std on constant input
    if sigma == 0.0 or np.ptp(x) == 0.0:
        raise ValueError("constant signal: sigma = 0")
    return TokenizerState(mu, sigma, k, L)


def normalize(x, state: TokenizerState) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - state.mu) / state.sigma


def quantize(x, state: TokenizerState):
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot quantize NaN")
    xc = np.clip(normalize(x, state), -state.k, state.k)
    x01 = (xc + state.k) / (2.0 * state.k)
    tok = np.floor(x01 * (state.L - 1) + _LEVEL_EPS).astype(np.int64)
    tok = np.minimum(tok, state.L - 1)
    return int(tok) if tok.ndim == 0 else tok


def dequantize(level, state: TokenizerState):
    """Inverse map; accepts fractional levels (expected level under a softmax)."""
    lv = np.asarray(level, dtype=np.float64)
    if np.any(lv < 0) or np.any(lv > state.L - 1):
        raise ValueError(f"level outside [0, {state.L - 1}]")
    x = (lv / (state.L - 1) * 2.0 * state.k - state.k) * state.sigma + state.mu
    return float(x) if x.ndim == 0 else x


@dataclass
class TokenStream:
    tokens: np.ndarray          # uint16, sample-major channel-interleaved
    n_channels: int
    n_samples: int
    state: TokenizerState

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize_recording(rec: Recording, state: TokenizerState) -> TokenStream:
    # samples.T is (T, C): row t holds channels 1..C of time step t
    toks = quantize(rec.samples.T.reshape(-1), state).astype(np.uint16)
    return TokenStream(toks, rec.n_channels, rec.n_samples, state)


def write_tok(stream: TokenStream) -> bytes:
    s = stream.state
    header = f"{TOK_MAGIC} {s.L} {stream.n_channels} {stream.n_samples} {s.mu!r} {s.sigma!r} {s.k!r}\n"
    return header.encode("ascii") + stream.tokens.astype("<u2").tobytes()


def read_tok(raw: bytes) -> TokenStream:
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing EEGTOK1 header line")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 7 or parts[0] != TOK_MAGIC:
        raise FormatError(f"bad token file header: {raw[:nl]!r}")
    try:
        L, C, T = int(parts[1]), int(parts[2]), int(parts[3])
        state = TokenizerState(float(parts[4]), float(parts[5]), float(parts[6]), L)
    except ValueError as exc:
        raise FormatError(f"bad token file header: {exc}") from None
    body = raw[nl + 1:]
    if len(body) != 2 * C * T:
        raise FormatError(f"token body holds {len(body) // 2} tokens, header says {C * T}")
    tokens = np.frombuffer(body, dtype="<u2").astype(np.uint16)
    if tokens.size and tokens.max() >= L:
        raise FormatError("token outside vocabulary")
    return TokenStream(tokens, C, T, state)
