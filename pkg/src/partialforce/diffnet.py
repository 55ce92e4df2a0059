"""A small multilayer perceptron with hand-written reverse mode.

Besides the usual parameter gradients, the network exposes its input
Jacobian as an explicit product of weight matrices and diagonal
activation-derivative factors::

    J = W_L D_{L-1} W_{L-1} ... D_1 W_1,   D_k = diag(act'(a_k))

Losses that depend on J (the condition-number penalty) are differentiated by
running reverse mode through that product and feeding the resulting
pre-activation adjoints (through act'') into the ordinary backward pass.  No
second-order tape is needed.

Inputs are batched: ``x`` has shape (B, n_in); a 1-d input is treated as a
batch of one and squeezed on the way out.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .io_utils import atomic_write_bytes, atomic_write_text
from .tensor_math import RankDeficientError, sym_eig

ACTIVATIONS = ("tanh", "softplus")
DEGENERACY_TOL = 1e-9


def _activate(name, a):
    """Return act(a), act'(a), act''(a)."""
    if name == "tanh":
        h = np.tanh(a)
        d1 = 1.0 - h * h
        return h, d1, -2.0 * h * d1
    if name == "softplus":
        h = np.logaddexp(0.0, a)
        s = 0.5 * (1.0 + np.tanh(0.5 * a))  # numerically safe sigmoid
        return h, s, s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (input, hidden..., output); hidden layers use ``activation``,
    the last layer is affine."""

    layer_sizes: tuple
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(s[k + 1] * s[k] + s[k + 1] for k in range(self.n_layers))

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation}


class MlpParams:
    """Flat parameter vector with per-layer (W, b) views into it.

    Layout per layer: W (out x in) row-major, then b.  In-place updates of
    ``flat`` are visible through the views.
    """

    def __init__(self, spec, flat=None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.n_params)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got {flat.shape}")
        self.flat = flat
        self.offsets = []
        self.layers = []
        off = 0
        s = spec.layer_sizes
        for k in range(spec.n_layers):
            n_w = s[k + 1] * s[k]
            w = flat[off : off + n_w].reshape(s[k + 1], s[k])
            b = flat[off + n_w : off + n_w + s[k + 1]]
            self.offsets.append((off, off + n_w, off + n_w + s[k + 1]))
            self.layers.append((w, b))
            off += n_w + s[k + 1]

    @classmethod
    def init(cls, spec, rng):
        """Glorot-uniform weights drawn from ``rng`` (a Xoshiro256), zero biases."""
        params = cls(spec)
        for w, _ in params.layers:
            fan_out, fan_in = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniforms(w.size, -limit, limit).reshape(w.shape)
        return params

    def copy(self):
        return MlpParams(self.spec, self.flat.copy())

    def grad_views(self, grad):
        """Split a flat gradient into per-layer (gW, gb) views."""
        return MlpParams(self.spec, grad).layers


@dataclass
class ForwardTape:
    inputs: list
    dact: list
    d2act: list
    squeeze: bool
    # filled by input_jacobian
    jac_s: list = field(default_factory=list)
    jac_t: list = field(default_factory=list)

    @property
    def n_layers(self):
        return len(self.inputs)


def _check_tape(spec, tape):
    if tape.n_layers != spec.n_layers:
        raise ValueError(f"tape has {tape.n_layers} layers, spec has {spec.n_layers}")


def forward(spec, params, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != spec.n_in:
        raise ValueError(f"input size {h.shape[-1]} != {spec.n_in}")
    inputs, dact, d2act = [], [], []
    last = spec.n_layers - 1
    for k, (w, b) in enumerate(params.layers):
        inputs.append(h)
        a = h @ w.T + b
        if k < last:
            h, d1, d2 = _activate(spec.activation, a)
            dact.append(d1)
            d2act.append(d2)
        else:
            h = a
    tape = ForwardTape(inputs, dact, d2act, squeeze)
    return (h[0] if squeeze else h), tape


def input_jacobian(spec, params, tape):
    """Jacobian dy/dx for every batch member, shape (B, n_out, n_in).

    Accumulated right-to-left, so the cost scales with n_out rather than n_in.
    """
    _check_tape(spec, tape)
    ws = [w for w, _ in params.layers]
    bsz = tape.inputs[0].shape[0]
    s_next = np.broadcast_to(ws[-1], (bsz,) + ws[-1].shape)
    jac_s = [None] * spec.n_layers
    jac_t = [None] * (spec.n_layers - 1)
    jac_s[-1] = s_next
    for k in range(spec.n_layers - 2, -1, -1):
        t = s_next * tape.dact[k][:, None, :]
        s_next = t @ ws[k]
        jac_t[k] = t
        jac_s[k] = s_next
    tape.jac_s = jac_s
    tape.jac_t = jac_t
    j = jac_s[0]
    return j[0] if tape.squeeze else j


def backward(spec, params, tape, dloss_dy, jac_bar=None):
    """Reverse-mode pass.

    ``dloss_dy`` is the adjoint of the output (B, n_out); ``jac_bar`` is an
    optional adjoint of the input Jacobian (B, n_out, n_in) and requires a
    prior ``input_jacobian`` call on the same tape.  Returns the flat
    parameter gradient summed over the batch, and dLoss/dx.
    """
    _check_tape(spec, tape)
    ws = [w for w, _ in params.layers]
    n = spec.n_layers
    grad = np.zeros(spec.n_params)
    gviews = params.grad_views(grad)
    dy = np.asarray(dloss_dy, dtype=np.float64)
    if tape.squeeze and dy.ndim == 1:
        dy = dy[None, :]
    inject = [None] * (n - 1)

    if jac_bar is not None:
        if not tape.jac_s:
            raise ValueError("input_jacobian must run before backward with jac_bar")
        sbar = np.asarray(jac_bar, dtype=np.float64)
        if tape.squeeze and sbar.ndim == 2:
            sbar = sbar[None]
        for k in range(n - 1):
            t = tape.jac_t[k]
            gviews[k][0][...] += np.einsum("boi,boj->ij", t, sbar)
            tbar = sbar @ ws[k].T
            inject[k] = np.einsum("boi,boi->bi", tbar, tape.jac_s[k + 1]) * tape.d2act[k]
            sbar = tbar * tape.dact[k][:, None, :]
        gviews[n - 1][0][...] += sbar.sum(axis=0)

    abar, hbar = dy, None
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            abar = hbar * tape.dact[k]
            if inject[k] is not None:
                abar = abar + inject[k]
        gw, gb = gviews[k]
        gw += abar.T @ tape.inputs[k]
        gb += abar.sum(axis=0)
        hbar = abar @ ws[k]
    dx = hbar[0] if tape.squeeze else hbar
    return grad, dx


def _extreme_projector(eigvals, eigvecs, which):
    """Projector used for d(lambda_extreme) = tr(P dG).

    Near-degenerate extreme eigenvalues (relative gap < DEGENERACY_TOL) are
    handled by averaging over the cluster's eigenspace.
    """
    lmax = eigvals[:, :1]
    if which == "max":
        member = eigvals >= eigvals[:, :1] - DEGENERACY_TOL * lmax
    else:
        member = eigvals <= eigvals[:, -1:] + DEGENERACY_TOL * lmax
    weight = member / member.sum(axis=1, keepdims=True)
    return np.einsum("bik,bk,bjk->bij", eigvecs, weight, eigvecs)


def kappa_penalty(phi_prime, with_grad=True):
    """Per-sample (kappa(G) - 1)^2 with G = phi' phi'^T, and its gradient w.r.t. phi'.

    Returns ``(penalty, kappa, dpen_dphi)`` with shapes (B,), (B,), (B, d, N).
    """
    gram = phi_prime @ np.swapaxes(phi_prime, -1, -2)
    eig = sym_eig(gram)
    lam = eig.eigenvalues
    lmax, lmin = lam[:, 0], lam[:, -1]
    if np.any(lmin <= 1e-12 * lmax) or np.any(lmax <= 0.0):
        raise RankDeficientError("encoder Jacobian lost full row rank", np.inf)
    kappa = lmax / lmin
    penalty = (kappa - 1.0) ** 2
    if not with_grad:
        return penalty, kappa, None
    p_max = _extreme_projector(lam, eig.eigenvectors, "max")
    p_min = _extreme_projector(lam, eig.eigenvectors, "min")
    # dkappa/dG = (P_max - kappa P_min) / lmin ;  d tr(A G)/d phi' = 2 A phi'
    dk_dg = (p_max - kappa[:, None, None] * p_min) / lmin[:, None, None]
    dpen = (2.0 * (kappa - 1.0))[:, None, None] * 2.0 * (dk_dg @ phi_prime)
    return penalty, kappa, dpen


def cond_penalty_and_grad(spec, params, x, phi_star_jac):
    """Mean condition-number penalty of the stacked Jacobian [phi_star_jac; dMLP/dx].

    ``phi_star_jac`` holds the fixed rows, shape (B, d_star, n_in) (or
    (d_star, n_in) for a single x).  Returns ``(penalty, grad_flat)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    fixed = np.asarray(phi_star_jac, dtype=np.float64)
    if fixed.ndim == 2:
        fixed = np.broadcast_to(fixed, (xb.shape[0],) + fixed.shape)
    _, tape = forward(spec, params, xb)
    jac = input_jacobian(spec, params, tape)
    d_star = fixed.shape[1]
    phi_prime = np.concatenate([fixed, jac], axis=1)
    penalty, _, dpen = kappa_penalty(phi_prime)
    bsz = xb.shape[0]
    grad, _ = backward(spec, params, tape, np.zeros((bsz, spec.n_out)), dpen[:, d_star:, :] / bsz)
    return float(penalty.mean()), grad


def save_checkpoint(prefix, spec, params, seed=0, extra=None):
    """Write ``prefix.json`` (metadata) and ``prefix.bin`` (little-endian f64)."""
    meta = {
        "format": "partialforce-mlp",
        "version": 1,
        "spec": spec.to_dict(),
        "activation": spec.activation,
        "layer_sizes": list(spec.layer_sizes),
        "n_params": spec.n_params,
        "seed": int(seed),
    }
    if extra:
        meta.update(extra)
    atomic_write_bytes(f"{prefix}.bin", params.flat.astype("<f8").tobytes())
    atomic_write_text(f"{prefix}.json", json.dumps(meta, indent=2, sort_keys=True))


def load_checkpoint(prefix):
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    spec = MlpSpec(tuple(meta["layer_sizes"]), meta["activation"])
    with open(f"{prefix}.bin", "rb") as fh:
        raw = fh.read()
    if len(raw) != 8 * spec.n_params:
        raise ValueError(f"{prefix}.bin holds {len(raw)} bytes, expected {8 * spec.n_params}")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return spec, MlpParams(spec, flat), meta
