"""Hot numeric kernels.

Each kernel has two interchangeable implementations: a numba ``@njit`` loop
and a vectorized pure-numpy fallback. The active backend is chosen once at
import time from the ``MMGC_NUMBA`` environment variable ("0"/"off"/"numpy"
forces the fallback; anything else uses numba when it is importable).

Both backends accumulate in the same element order, so results are
bitwise-identical across backends.
"""

import os

import numpy as np

_FALSEY = ("0", "false", "off", "numpy")


def _numba_requested() -> bool:
    return os.environ.get("MMGC_NUMBA", "1").strip().lower() not in _FALSEY


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# loop implementations (compiled by numba when enabled)
# ---------------------------------------------------------------------------


def _csr_spmm_loop(indptr, indices, weights, dense):
    n = indptr.shape[0] - 1
    d = dense.shape[1]
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = weights[p]
            for c in range(d):
                out[i, c] += w * dense[j, c]
    return out


def _csr_dirichlet_loop(indptr, indices, weights, field):
    # tr(G^T L G) with L = Deg - W, self-loop entries excluded from W.
    n = indptr.shape[0] - 1
    d = field.shape[1]
    diag_term = 0.0
    cross_term = 0.0
    for i in range(n):
        deg = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                continue
            w = weights[p]
            deg += w
            dot = 0.0
            for c in range(d):
                dot += field[i, c] * field[j, c]
            cross_term += w * dot
        sq = 0.0
        for c in range(d):
            sq += field[i, c] * field[i, c]
        diag_term += deg * sq
    return diag_term - cross_term


def _modality_mix_loop(field, d_text, mask, coeff_text, coeff_image):
    # Rows with mask False are copied verbatim. For masked rows (equal-width
    # modality slices):
    #   out_text  = g_text  - coeff_text  * g_image
    #   out_image = g_image - coeff_image * g_text
    n = field.shape[0]
    out = field.copy()
    for i in range(n):
        if not mask[i]:
            continue
        ct = coeff_text[i]
        ci = coeff_image[i]
        for c in range(d_text):
            out[i, c] = field[i, c] - ct * field[i, d_text + c]
            out[i, d_text + c] = field[i, d_text + c] - ci * field[i, c]
    return out


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------


def _csr_spmm_numpy(indptr, indices, weights, dense):
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, weights[:, None] * dense[indices])
    return out


def _csr_dirichlet_numpy(indptr, indices, weights, field):
    n = indptr.shape[0] - 1
    if indices.shape[0] == 0:
        return 0.0
    rows = np.repeat(np.arange(n), np.diff(indptr))
    offdiag = rows != indices
    r, j, w = rows[offdiag], indices[offdiag], weights[offdiag]
    deg = np.zeros(n, dtype=np.float64)
    np.add.at(deg, r, w)
    diag_term = float(deg @ np.einsum("ij,ij->i", field, field))
    cross_term = float(w @ np.einsum("ij,ij->i", field[r], field[j]))
    return diag_term - cross_term


def _modality_mix_numpy(field, d_text, mask, coeff_text, coeff_image):
    out = field.copy()
    if mask.any():
        text = field[mask, :d_text]
        image = field[mask, d_text:]
        out[mask, :d_text] = text - coeff_text[mask, None] * image
        out[mask, d_text:] = image - coeff_image[mask, None] * text
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    csr_spmm = njit(cache=True)(_csr_spmm_loop)
    csr_dirichlet = njit(cache=True)(_csr_dirichlet_loop)
    modality_mix = njit(cache=True)(_modality_mix_loop)
    BACKEND = "numba"
else:
    csr_spmm = _csr_spmm_numpy
    csr_dirichlet = _csr_dirichlet_numpy
    modality_mix = _modality_mix_numpy
    BACKEND = "numpy"
