"""Sample-quality metrics: pixel-space FID and reconstruction SSIM.

FID here is the Frechet distance between Gaussians fit to area-pooled pixel
features (default 8x8 per channel), not Inception activations; values are
comparable across runs of this package but not to Inception-FID numbers.
SSIM follows the usual 11x11 Gaussian-window form on [0, 1]-ranged images.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffusion import NoiseSchedule, denoise_from, diffuse, sample_chain
from .errors import NumericError, NumericWarning
from .unet import NoisePredictor, chain_predictor

POOLED_PIXELS = "pixel-pool-8"


def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-to-bin area weights; each column sums to n_out/n_in."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for r in range(int(np.floor(lo)), int(np.ceil(hi))):
            w[i, r] = min(hi, r + 1) - max(lo, r)
    return w / (n_in / n_out)


def pool_features(images: np.ndarray, out_size: int = 8) -> np.ndarray:
    """Area-average each channel down to out_size^2 cells; flatten per image.

    Fractional bin edges make this exact for any input size, and the feature
    mean equals the image mean. Returns float64 (N, C * out_size^2).
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) images, got shape {x.shape}")
    n, c, h, w = x.shape
    if h < out_size or w < out_size:
        raise ValueError(f"images are {h}x{w}, smaller than the {out_size}x{out_size} pool")
    rows = _overlap_matrix(h, out_size)
    cols = _overlap_matrix(w, out_size)
    pooled = np.einsum("ih,nchw,jw->ncij", rows, x, cols, optimize=True)
    return pooled.reshape(n, -1)


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance of row-vector features."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need at least two feature rows")
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite feature values")
    mean = f.mean(axis=0)
    cov = np.cov(f, rowvar=False, ddof=1)
    return GaussianStats(mean, np.atleast_2d(cov), f.shape[0])


def _psd_sqrt(mat: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    clipped = np.clip(vals, 0.0, None)
    lost = -vals[vals < 0].sum()
    trace = clipped.sum()
    if trace > 0 and lost > 1e-6 * trace:
        warnings.warn(
            f"{what}: clamped negative eigenvalue mass {lost:.3g} "
            f"({lost / trace:.2e} of trace)",
            NumericWarning,
        )
    return (vecs * np.sqrt(clipped)) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance^2 between two Gaussians, eigenvalue-clamped to >= 0."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("feature dimensions differ")
    diff = a.mean - b.mean
    sa_half = _psd_sqrt(a.cov, "first covariance")
    inner = sa_half @ b.cov @ sa_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    lost = -vals[vals < 0].sum()
    kept = np.clip(vals, 0.0, None)
    if kept.sum() > 0 and lost > 1e-6 * kept.sum():
        warnings.warn(
            f"cross term: clamped negative eigenvalue mass {lost:.3g}",
            NumericWarning,
        )
    d2 = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(kept).sum())
    return max(d2, 0.0)


def fid(generated: np.ndarray, reference: np.ndarray, features=pool_features) -> float:
    """Frechet distance between feature Gaussians of two image sets."""
    return frechet_distance(fit_gaussian(features(generated)), fit_gaussian(features(reference)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity between paired image sets in [-1, 1].

    Images are mapped to [0, 1] so the standard stabilizers C1 = 0.01^2,
    C2 = 0.03^2 apply; windows are valid-mode (no padding), channels are
    averaged. Images smaller than the window fall back to one global window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) images, got shape {a.shape}")
    a = (a + 1.0) / 2.0
    b = (b + 1.0) / 2.0
    c1, c2 = 0.01**2, 0.03**2
    h, w = a.shape[2], a.shape[3]
    if h < window_size or w < window_size:
        win = np.full((h, w), 1.0 / (h * w))
        windows_a = a[:, :, None, None, :, :]
        windows_b = b[:, :, None, None, :, :]
    else:
        win = _gaussian_window(window_size, sigma)
        windows_a = sliding_window_view(a, (window_size, window_size), axis=(2, 3))
        windows_b = sliding_window_view(b, (window_size, window_size), axis=(2, 3))
    mu_a = np.einsum("...hw,hw->...", windows_a, win)
    mu_b = np.einsum("...hw,hw->...", windows_b, win)
    e_aa = np.einsum("...hw,hw->...", windows_a * windows_a, win)
    e_bb = np.einsum("...hw,hw->...", windows_b * windows_b, win)
    e_ab = np.einsum("...hw,hw->...", windows_a * windows_b, win)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(s.mean())


def generate_samples(
    model: NoisePredictor,
    schedule: NoiseSchedule,
    task,
    n: int,
    seed: int,
    batch_size: int = 64,
) -> np.ndarray:
    """Draw n ancestral samples for one task (task None = unconditional)."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    predictor = chain_predictor(model, task)
    out = []
    done = 0
    while done < n:
        b = min(batch_size, n - done)
        shape = (b, cfg.image_channels, cfg.image_size, cfg.image_size)
        out.append(sample_chain(predictor, schedule, rng, shape))
        done += b
    return np.concatenate(out)


def reconstruct(
    model: NoisePredictor,
    schedule: NoiseSchedule,
    images: np.ndarray,
    task,
    t_start: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Noise images to t_start, then denoise back: the SSIM probe."""
    eps = rng.standard_normal(size=images.shape, dtype=np.float32)
    t = np.full(images.shape[0], t_start)
    x_t = diffuse(images, t, eps, schedule)
    return denoise_from(chain_predictor(model, task), schedule, x_t, t_start, rng)


@dataclass
class ReportRow:
    dataset: str
    method: str
    fid: float
    ssim: float
    n_gen: int
    n_ref: int
    feature_space: str = POOLED_PIXELS


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["dataset,method,fid,ssim,n_gen,n_ref,feature_space"]
        for r in self.rows:
            lines.append(
                f"{r.dataset},{r.method},{r.fid:.6g},{r.ssim:.6g},"
                f"{r.n_gen},{r.n_ref},{r.feature_space}"
            )
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = ("dataset", "method", "FID", "SSIM", "n_gen", "n_ref")
        body = [
            (r.dataset, r.method, f"{r.fid:.3f}", f"{r.ssim:.3f}", str(r.n_gen), str(r.n_ref))
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return "\n".join(fmt.format(*row) for row in [head] + body)


def evaluate(
    model: NoisePredictor,
    schedule: NoiseSchedule,
    reference_tasks,
    n_per_task: int = 500,
    seed: int = 0,
    dataset_name: str = "",
    batch_size: int = 64,
    ssim_per_task: int | None = 64,
    features=pool_features,
) -> ReportRow:
    """Score a model: pooled-FID over generated vs reference images, plus
    mean SSIM of half-chain reconstructions of reference images.

    Generation for task i uses seed + i so per-task sample sets are
    reproducible independently; conditioning follows the model kind (the
    unconditional baseline samples task-blind but is scored on the same
    pooled reference set).
    """
    reference_tasks = list(reference_tasks)
    if not reference_tasks:
        raise ValueError("no reference tasks")
    conditioned = model.config.conditioning != "unconditional"
    t_mid = max(1, schedule.T // 2)

    gen, ref, scores = [], [], []
    for td in reference_tasks:
        task = td.task_id if conditioned else None
        gen.append(generate_samples(model, schedule, task, n_per_task, seed + td.task_id, batch_size))
        ref.append(td.images)
        k = len(td.images) if ssim_per_task is None else min(ssim_per_task, len(td.images))
        probe = td.images[:k]
        rng = np.random.default_rng(seed + td.task_id)
        recon = reconstruct(model, schedule, probe, task, t_mid, rng)
        scores.append(ssim(probe, recon))
    generated = np.concatenate(gen)
    reference = np.concatenate(ref)
    return ReportRow(
        dataset=dataset_name,
        method=model.config.method_name,
        fid=fid(generated, reference, features),
        ssim=float(np.mean(scores)),
        n_gen=len(generated),
        n_ref=len(reference),
    )
