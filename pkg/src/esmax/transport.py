"""First-order transport reconstruction of the mobility from two internal data.

Pairing two measurements turns the curl-curl system into a transport equation
beta . grad(L) + gamma L = 0 for the (real, positive) mobility L. The fields
beta, gamma are assembled from derivative brackets of the pair; tracing the
flow of Re(beta) to the boundary and integrating Re(gamma) along the way gives
L explicitly from its boundary values.

Two assembly conventions are provided:

* "derived-identity" (default): the bracket combination obtained by expanding
  curl curl (u D1) . D2 - curl curl (u D2) . D1 with u = 1/L, every bracket
  weighted by the pair weight chi. An overall factor -i normalizes the
  limiting direction of beta to +L^2 zeta0 for the canonical measurement
  family (the combination is only determined up to a nonzero constant, which
  cancels in the transport equation).
* "as-printed": chi on the first bracket only and an unsymmetric transpose in
  the third, kept for comparison; the identity-residual oracle selects between
  the two at run time.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from . import TraceError
from .calculus import Derivative, Interpolator, discrete_cm_norm
from .cgo import CGOParams
from .fields import Grid, ModulatedField, ScalarField, VectorField
from .forward import MeasurementSet
from .geometry import Domain

CONVENTIONS = ("derived-identity", "as-printed")
DEFAULT_ASSEMBLY_ORDER = 6
DEFAULT_STEP_FACTOR = 6.0  # RK step = spacing / (factor * max |V|)


@dataclass
class ChiWeight:
    """Pair weight chi(x) = amplitude * exp(i phase_vector . x).

    For the canonical pair the phase vector is minus the (real) sum of the two
    data wavevectors, so chi times the pair's joint oscillation is the
    constant `amplitude`; |chi| is constant either way.
    """

    amplitude: complex
    phase_vector: np.ndarray
    grid: Grid

    def evaluate(self) -> ScalarField:
        x = self.grid.coords()
        ph = np.exp(1j * np.einsum("i,i...->...", self.phase_vector, x))
        return ScalarField(self.grid, self.amplitude * ph)

    def joint_factor(self, q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
        """chi(x) * exp(i (q1 + q2) . x) evaluated on the grid (bounded)."""
        total = self.phase_vector + q1 + q2
        if np.max(np.abs(np.imag(total))) > 1e-9:
            raise ValueError("pair weight does not cancel the joint phase growth")
        x = self.grid.coords()
        ph = np.exp(1j * np.einsum("i,i...->...", np.real(total), x))
        return self.amplitude * ph


def chi_weight(params1: CGOParams, params2: CGOParams, grid: Grid) -> ChiWeight:
    """chi = -exp(-i (zeta1 + zeta2) . x) h / (4 sqrt(2)) for a measurement pair."""
    same_family = (params1.h == params2.h and params1.a == params2.a
                   and params1.k == params2.k
                   and np.allclose(params1.frame, params2.frame)
                   and {params1.index, params2.index} == {1, 2})
    if not same_family:
        raise ValueError("pair weight needs indices 1 and 2 of one (h, a, k, frame) family")
    total = params1.zeta + params2.zeta
    if np.max(np.abs(np.imag(total))) > 1e-9 * params1.zeta_mag:
        raise ValueError("pair phases do not cancel")
    amplitude = -params1.h / (4.0 * np.sqrt(2.0))
    return ChiWeight(amplitude=complex(amplitude), phase_vector=-np.real(total), grid=grid)


@dataclass
class TransportField:
    beta: VectorField
    gamma: ScalarField
    chi: ChiWeight | ScalarField
    direction_ref: np.ndarray
    convention: str
    stencil_order: int


def _brackets(d1: ModulatedField, d2: ModulatedField, deriv: Derivative):
    """Derivative brackets of a data pair, computed on the envelopes.

    Returns (jac_bracket, div_bracket, jacT_bracket, lap_bracket, graddiv_bracket)
    where each bracket is antisymmetric under swapping the pair.
    """
    w1, w2 = d1.envelope.values, d2.envelope.values
    q1, q2 = d1.wavevector, d2.wavevector
    tj1 = deriv.tjacobian(w1, q1)
    tj2 = deriv.tjacobian(w2, q2)
    div1 = deriv.tdiv(w1, q1)
    div2 = deriv.tdiv(w2, q2)

    jac_b = (np.einsum("ij...,j...->i...", tj1, w2)
             - np.einsum("ij...,j...->i...", tj2, w1))
    div_b = div1 * w2 - div2 * w1
    jacT_b = (np.einsum("ji...,j...->i...", tj1, w2)
              - np.einsum("ji...,j...->i...", tj2, w1))
    # unsymmetric variant used by the as-printed convention
    jac_mixed = (np.einsum("ji...,j...->i...", tj1, w2)
                 - np.einsum("ij...,j...->i...", tj2, w1))

    tlap1 = np.stack([deriv.tlaplacian(w1[c], q1) for c in range(3)])
    tlap2 = np.stack([deriv.tlaplacian(w2[c], q2) for c in range(3)])
    lap_b = (np.einsum("i...,i...->...", tlap1, w2)
             - np.einsum("i...,i...->...", tlap2, w1))
    gd1 = deriv.tgrad(div1, q1)
    gd2 = deriv.tgrad(div2, q2)
    graddiv_b = (np.einsum("i...,i...->...", gd1, w2)
                 - np.einsum("i...,i...->...", gd2, w1))
    return jac_b, div_b, jacT_b, jac_mixed, lap_b, graddiv_b


def assemble_vector_field(d1: ModulatedField, d2: ModulatedField,
                          chi: ChiWeight | ScalarField,
                          convention: str = "derived-identity",
                          stencil_order: int = DEFAULT_ASSEMBLY_ORDER,
                          backend: str = "fd",
                          direction_ref: np.ndarray | None = None) -> TransportField:
    """Assemble the transport pair (beta, gamma) from two internal data."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    grid = d1.grid
    deriv = Derivative(grid, backend=backend, order=stencil_order)
    jac_b, div_b, jacT_b, jac_mixed, lap_b, graddiv_b = _brackets(d1, d2, deriv)

    if isinstance(chi, ChiWeight):
        weight = chi.joint_factor(d1.wavevector, d2.wavevector)
    else:
        growth = np.linalg.norm(np.imag(d1.wavevector + d2.wavevector))
        if growth > 1e-9:
            raise ValueError("plain chi field requires a phase-cancelling pair")
        x = grid.coords()
        ph = np.exp(1j * np.einsum("i,i...->...",
                                   np.real(d1.wavevector + d2.wavevector), x))
        weight = chi.values * ph

    if convention == "derived-identity":
        # -i fixes the limiting direction of beta at +L^2 zeta0 for the
        # canonical family; the transport equation is insensitive to it
        beta = -1j * weight * (jac_b + div_b - 2.0 * jacT_b)
        gamma = -1j * weight * (lap_b - graddiv_b)
    else:
        beta = weight * jac_b + div_b - 2.0 * jac_mixed
        gamma = weight * graddiv_b + lap_b

    if direction_ref is None:
        direction_ref = np.zeros(3, dtype=complex)
    return TransportField(beta=VectorField(grid, beta), gamma=ScalarField(grid, gamma),
                          chi=chi, direction_ref=np.asarray(direction_ref, dtype=complex),
                          convention=convention, stencil_order=stencil_order)


def transport_identity_residual(tf: TransportField, L_true: ScalarField,
                                mask: np.ndarray, stencil_order: int | None = None) -> float:
    """Relative sup-norm of beta . grad(L) + gamma L over the mask.

    Vanishes to truncation error when (beta, gamma) follow the convention that
    actually encodes the pair identity; this is the convention oracle.
    """
    grid = tf.beta.grid
    order = stencil_order or tf.stencil_order
    d = Derivative(grid, backend="fd", order=order)
    gradL = d.grad(L_true.values)
    resid = (np.einsum("i...,i...->...", tf.beta.values, gradL)
             + tf.gamma.values * L_true.values)
    b = float(np.abs(tf.beta.values).max(axis=0)[mask].max())
    g = float(np.abs(tf.gamma.values)[mask].max())
    gl = float(np.abs(gradL).max(axis=0)[mask].max())
    lv = float(np.abs(L_true.values)[mask].max())
    scale = b * gl + g * lv
    if scale == 0.0:
        return 0.0
    return float(np.abs(resid)[mask].max()) / scale


def direction_diagnostic(tf: TransportField, L_ref: ScalarField, zeta0: np.ndarray,
                         mask: np.ndarray, orders=(0, 1)) -> dict:
    """C^m gaps between beta and L_ref^2 zeta0 (ground-truth diagnostic)."""
    grid = tf.beta.grid
    target = L_ref.values[None] ** 2 * np.asarray(zeta0, dtype=complex)[:, None, None, None]
    diff = VectorField(grid, tf.beta.values - target)
    return {m: discrete_cm_norm(diff, m, mask).value for m in orders}


# ---------------------------------------------------------------------------
# characteristics
# ---------------------------------------------------------------------------

@dataclass
class Characteristic:
    seed: np.ndarray
    path: np.ndarray          # (m, 3) polyline including seed and exit
    exit_time: float
    exit_point: np.ndarray
    direction_sign: int
    line_integral: float      # integral of the carried scalar along the path


@dataclass
class BatchTraceResult:
    exit_points: np.ndarray
    exit_times: np.ndarray
    integrals: np.ndarray     # of the carried scalar, along the traced direction
    failed: np.ndarray        # bool per seed


def _trace_batch(seeds: np.ndarray, vel_interp, scalar_interp, domain: Domain,
                 dt: float, sign: float, max_steps: int,
                 keep_paths: bool = False):
    """Lockstep RK4 advance of many seeds until each crosses the boundary.

    Boundary crossings are refined by bisection on the last RK segment until
    the level-set value is below 1e-10. The carried scalar is accumulated with
    the trapezoid rule, including the fractional final step.
    """
    m = len(seeds)
    pos = np.array(seeds, dtype=float)
    alive = np.ones(m, dtype=bool)
    t_acc = np.zeros(m)
    s_acc = np.zeros(m)
    exit_pts = np.full((m, 3), np.nan)
    exit_t = np.full(m, np.nan)
    s_exit = np.full(m, np.nan)
    sval = scalar_interp(pos) if scalar_interp is not None else np.zeros(m)
    paths = [[p.copy()] for p in seeds] if keep_paths else None

    def vel(p):
        return sign * vel_interp(p)

    level = domain.shape.level
    for _ in range(max_steps):
        if not alive.any():
            break
        idx = np.where(alive)[0]
        p = pos[idx]
        k1 = vel(p)
        k2 = vel(p + 0.5 * dt * k1)
        k3 = vel(p + 0.5 * dt * k2)
        k4 = vel(p + dt * k3)
        pnew = p + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        crossed = level(pnew) >= 0.0
        snew = scalar_interp(pnew) if scalar_interp is not None else np.zeros(len(p))
        sold = sval[idx]

        if crossed.any():
            a = p[crossed]
            b = pnew[crossed]
            lo = np.zeros(len(a))
            hi = np.ones(len(a))
            fhi = level(b)
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                fm = level(a + mid[:, None] * (b - a))
                takehi = fm >= 0.0
                hi = np.where(takehi, mid, hi)
                lo = np.where(takehi, lo, mid)
                if np.max(np.abs(fm)) < 1e-10:
                    break
            frac = hi  # first parameter with nonnegative level
            pexit = a + frac[:, None] * (b - a)
            sx = scalar_interp(pexit) if scalar_interp is not None else np.zeros(len(a))
            gidx = idx[crossed]
            exit_pts[gidx] = pexit
            exit_t[gidx] = t_acc[gidx] + frac * dt
            s_exit[gidx] = s_acc[gidx] + 0.5 * frac * dt * (sold[crossed] + sx)
            if keep_paths:
                for gi, pe in zip(gidx, pexit):
                    paths[gi].append(pe.copy())
            alive[gidx] = False

        keep = ~crossed
        kidx = idx[keep]
        s_acc[kidx] += 0.5 * dt * (sold[keep] + snew[keep])
        t_acc[kidx] += dt
        pos[kidx] = pnew[keep]
        sval[kidx] = snew[keep]
        if keep_paths:
            for gi, pn in zip(kidx, pnew[keep]):
                paths[gi].append(pn.copy())

    failed = alive.copy()
    return BatchTraceResult(exit_points=exit_pts, exit_times=exit_t,
                            integrals=s_exit, failed=failed), paths


def trace_characteristic(seed, V: VectorField, domain: Domain,
                         step: float | None = None, direction_sign: int = 1,
                         carried: ScalarField | None = None,
                         interp_order: int = 3,
                         max_time_factor: float = 8.0) -> Characteristic:
    """Integral curve of V from one seed to the boundary (RK4 + bisection)."""
    seed = np.asarray(seed, dtype=float).reshape(1, 3)
    if domain.shape.level(seed)[0] >= 0:
        raise TraceError("seed lies outside the region")
    vmax = float(np.abs(V.values).max())
    if vmax == 0:
        raise TraceError("velocity field vanishes")
    dt = step if step is not None else V.grid.spacing / (DEFAULT_STEP_FACTOR * vmax)
    vel = Interpolator(V.grid, V.values, order=interp_order)
    sint = Interpolator(V.grid, carried.values, order=interp_order) if carried is not None else None
    vmin_probe = max(vmax * 1e-3, 1e-12)
    max_steps = int(max_time_factor * domain.diameter / (vmin_probe * dt)) + 10
    max_steps = min(max_steps, 2_000_000)
    res, paths = _trace_batch(seed, lambda p: np.real(vel(p)),
                              (lambda p: np.real(sint(p))) if sint else None,
                              domain, dt, float(direction_sign), max_steps,
                              keep_paths=True)
    if res.failed[0]:
        raise TraceError("characteristic did not reach the boundary "
                         f"within {max_steps} steps")
    return Characteristic(seed=seed[0], path=np.array(paths[0]),
                          exit_time=float(res.exit_times[0]),
                          exit_point=res.exit_points[0],
                          direction_sign=direction_sign,
                          line_integral=float(res.integrals[0]))


# ---------------------------------------------------------------------------
# boundary mobility and the transport solve
# ---------------------------------------------------------------------------

def mobility_at_points(mset: MeasurementSet, points: np.ndarray,
                       normals: np.ndarray | None = None,
                       interp_order: int = 3,
                       floor: float = 1e-14):
    """Least-squares boundary mobility Re[sum_j tD_j . conj(G_j) / sum_j |G_j|^2].

    G_j is the prescribed illumination trace, evaluated at the requested
    boundary points; tD_j is the trace of the internal datum. Points where
    every |G_j| falls below the floor (relative to the largest seen) are
    flagged unusable. Returns (values, usable_mask).
    """
    from .forward import tangential_trace

    pts = np.asarray(points, dtype=float)
    if normals is None:
        normals = mset.domain.shape.normal(pts)
    num = np.zeros(len(pts), dtype=complex)
    den = np.zeros(len(pts))
    for D, E in zip(mset.data, mset.illuminations):
        tD = tangential_trace(D, mset.domain, pts, normals, interp_order).values
        G = tangential_trace(E, mset.domain, pts, normals, interp_order).values
        num += np.einsum("ki,ki->k", tD, G.conj())
        den += np.einsum("ki,ki->k", np.abs(G), np.abs(G))
    usable = den > floor * max(float(den.max()), 1e-300)
    vals = np.zeros(len(pts))
    vals[usable] = np.real(num[usable] / den[usable])
    return vals, usable


def boundary_mobility(mset: MeasurementSet, interp_order: int = 3):
    """Boundary mobility at the domain's boundary samples."""
    return mobility_at_points(mset, mset.domain.boundary_points,
                              mset.domain.boundary_normals, interp_order)


@dataclass
class TransportDiagnostics:
    trace_failures: int
    seeds: int
    exit_times_plus: np.ndarray
    exit_times_minus: np.ndarray
    plus_fraction: float
    step: float
    imag_residual: float | None = None


def solve_transport(tf: TransportField, mset: MeasurementSet, domain: Domain,
                    step: float | None = None, mask: np.ndarray | None = None,
                    interp_order: int = 3, max_failure_fraction: float = 0.01,
                    max_time_factor: float = 8.0):
    """Reconstruct the mobility on masked grid nodes by tracing Re(beta).

    Both trace directions are computed for every node and the one with the
    shorter exit time is used; along a +V trace L(x) = L0(x_exit) *
    exp(+int gamma_eff) and along a -V trace the exponent flips sign,
    gamma_eff = Re(gamma). Boundary values come from the measurement traces.

    Returns (L_rec ScalarField with ones off the mask, valid_mask, diagnostics).
    """
    grid = tf.beta.grid
    if mask is None:
        mask = domain.inside_mask
    V = np.real(tf.beta.values)
    geff = np.real(tf.gamma.values)
    vmax = float(np.linalg.norm(V, axis=0)[domain.inside_mask].max())
    if vmax == 0:
        raise TraceError("transport field vanishes on the region")
    dt = step if step is not None else grid.spacing / (DEFAULT_STEP_FACTOR * vmax)
    seeds = np.stack(grid.mesh(), axis=-1)[mask]
    vel = Interpolator(grid, V, order=interp_order)
    sint = Interpolator(grid, geff, order=interp_order)
    max_steps = int(max_time_factor * domain.diameter / (0.05 * vmax * dt)) + 10

    plus, _ = _trace_batch(seeds, lambda p: vel(p), lambda p: sint(p),
                           domain, dt, +1.0, max_steps)
    minus, _ = _trace_batch(seeds, lambda p: vel(p), lambda p: sint(p),
                            domain, dt, -1.0, max_steps)

    both_failed = plus.failed & minus.failed
    n_fail = int(both_failed.sum())
    if n_fail > max_failure_fraction * len(seeds):
        raise TraceError(f"{n_fail} of {len(seeds)} transport traces failed "
                         f"(> {max_failure_fraction:.1%})")

    t_plus = np.where(plus.failed, np.inf, plus.exit_times)
    t_minus = np.where(minus.failed, np.inf, minus.exit_times)
    use_plus = t_plus <= t_minus
    exits = np.where(use_plus[:, None], plus.exit_points, minus.exit_points)
    signs = np.where(use_plus, 1.0, -1.0)
    integrals = np.where(use_plus, plus.integrals, minus.integrals)

    ok = ~both_failed
    L0 = np.zeros(len(seeds))
    usable = np.zeros(len(seeds), dtype=bool)
    if ok.any():
        L0_ok, usable_ok = mobility_at_points(mset, exits[ok], interp_order=interp_order)
        L0[ok] = L0_ok
        usable[ok] = usable_ok
    good = ok & usable

    vals = np.ones(len(seeds))
    vals[good] = L0[good] * np.exp(signs[good] * integrals[good])

    L_rec = np.ones((grid.n,) * 3)
    valid = np.zeros((grid.n,) * 3, dtype=bool)
    L_rec[mask] = vals
    flat = np.zeros(len(seeds), dtype=bool)
    flat[good] = True
    valid[mask] = flat

    diag = TransportDiagnostics(trace_failures=n_fail, seeds=len(seeds),
                                exit_times_plus=plus.exit_times,
                                exit_times_minus=minus.exit_times,
                                plus_fraction=float(use_plus[good].mean()) if good.any() else 0.0,
                                step=dt)
    # consistency of the imaginary-part transport pair on the reconstruction
    d = Derivative(grid, backend="fd", order=tf.stencil_order)
    gradL = d.grad(L_rec.astype(complex))
    im_res = (np.einsum("i...,i...->...", np.imag(tf.beta.values), np.real(gradL))
              + np.imag(tf.gamma.values) * L_rec)
    scale = (float(np.abs(np.imag(tf.beta.values)).max(axis=0)[mask].max())
             * max(float(np.abs(gradL).max(axis=0)[mask].max()), 1e-300)
             + float(np.abs(np.imag(tf.gamma.values))[mask].max()) * float(L_rec[mask].max()))
    diag.imag_residual = float(np.abs(im_res)[valid].max() / scale) if scale > 0 and valid.any() else 0.0
    return ScalarField(grid, L_rec.astype(complex)), valid, diag
