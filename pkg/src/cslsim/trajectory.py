"""Single-trajectory collapse evolution.

A trajectory applies, per time step, the positive Hermitian factor
exp(-(dt / 4 lam) (w_k - 2 lam A_k)^2) with the coupling rotated to the
step midpoint.  The factor splits exactly into a scalar Gaussian piece
and a reduced piece exp(dt (w_k A_k - lam A_k^2)); the squared norm of
the reduced product is the importance weight of the path relative to
the zero-mean Gaussian proposal.  ``collapse_step`` and ``reduced_step``
are the dense single-step reference operations; ``evolve`` runs whole
paths through the batched kernel in :mod:`cslsim.propagation`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import RangeOverflowError, NumericalFailure
from .hilbert import HermitianOperator, StateVector
from .noise import CollapseParams, NoisePath, TimeGrid, standard_increments
from .propagation import GridInfo, evolve_batch, field_energy_sweep, make_backend
from .tolerances import CONSTRUCTION

_EXP_LIMIT = 700.0

# Eigenvalues closer than this (relative to the spectral span) are treated
# as one eigenspace when classifying collapse outcomes.
DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class Scenario:
    """A complete collapse experiment: operators, initial state, parameters.

    For dense scenarios ``hamiltonian`` and ``collapse_op`` are explicit
    Hermitian matrices.  For the periodic-grid particle both are implied
    by ``grid_info`` (kinetic energy diagonal in the transform basis,
    position coupling diagonal on the grid) and the dense fields are left
    unset.
    """

    hamiltonian: Optional[HermitianOperator]
    collapse_op: Optional[HermitianOperator]
    psi0: StateVector
    params: CollapseParams
    grid: TimeGrid
    grid_info: Optional[GridInfo] = None
    label: str = ""

    def __post_init__(self):
        if self.grid_info is None:
            if self.hamiltonian is None or self.collapse_op is None:
                raise ValueError("dense scenario needs both operators")
            if self.hamiltonian.dim != self.collapse_op.dim:
                raise ValueError("operator dimensions disagree: "
                                 f"{self.hamiltonian.dim} vs {self.collapse_op.dim}")
            if self.psi0.dim != self.collapse_op.dim:
                raise ValueError("initial state dimension does not match operators")
        else:
            if self.psi0.dim != self.grid_info.n_points:
                raise ValueError("initial state dimension does not match grid")
        if abs(math.sqrt(self.psi0.norm2) - 1.0) > CONSTRUCTION:
            raise ValueError(f"initial state must be normalized, norm^2 = {self.psi0.norm2!r}")

    @property
    def dim(self) -> int:
        return self.psi0.dim


@dataclass(frozen=True)
class CollapseMetrics:
    """How close a state is to a collapse outcome."""

    variance: float
    nearest_eigenvalue: float
    distance: float


@dataclass
class TrajectoryResult:
    """Everything recorded along one path.

    ``final_state`` is the unnormalized end-of-run state in the lab frame
    (its squared norm is the reduced-propagator norm, i.e. the path weight
    relative to the Gaussian measure).  ``weight`` is the statistical
    weight to use in ensemble averages: the importance weight in raw mode,
    1 in cooked mode where paths are already drawn from the physical
    distribution.
    """

    mode: str
    lam: float
    times: np.ndarray
    w: np.ndarray
    weight: float
    log_reduced_norm2: float
    sum_w2dt: float
    final_state: StateVector
    coupling_populations: np.ndarray
    interaction_sample: float
    series_expA: Optional[np.ndarray] = None
    series_varA: Optional[np.ndarray] = None
    series_expH: Optional[np.ndarray] = None
    series_log_norm2: Optional[np.ndarray] = None
    field_energy_sample: Optional[float] = None
    stored_states: Optional[np.ndarray] = None
    stored_steps: Optional[np.ndarray] = None

    @property
    def log_density(self) -> float:
        """Log of the unnormalized path density with respect to the flat
        path measure: reduced norm squared times the Gaussian factor."""
        if self.lam == 0.0:
            return self.log_reduced_norm2
        return self.log_reduced_norm2 - self.sum_w2dt / (2.0 * self.lam)


def collapse_step(psi: StateVector, a_mid: HermitianOperator, w_k: float,
                  dt: float, params: CollapseParams) -> StateVector:
    """Apply one full collapse factor exp(-(dt/4 lam)(w_k - 2 lam A)^2).

    ``a_mid`` must already be rotated to the step midpoint.  The factor is
    a positive Hermitian contraction toward the eigenspaces of ``a_mid``
    selected by w_k; it never increases any eigencomponent beyond 1, so no
    overflow is possible, but a wildly improbable w_k can annihilate the
    state to machine zero, which is reported as a range error.
    """
    if params.lam == 0.0:
        raise ValueError("the Gaussian collapse factor is singular at lam = 0")
    spec = a_mid.spectrum()
    expo = -(dt / (4.0 * params.lam)) * (w_k - 2.0 * params.lam * spec.eigenvalues) ** 2
    coeffs = spec.eigenvectors.conj().T @ psi.amplitudes
    out = spec.eigenvectors @ (np.exp(expo) * coeffs)
    result = StateVector(out)
    if psi.norm2 > 0.0 and result.norm2 == 0.0:
        raise RangeOverflowError(
            f"collapse factor annihilated the state: w={w_k!r} is "
            f"{abs(expo).max():.3g} log-units from the spectral window",
            exponent=float(abs(expo).max()))
    return result


def reduced_step(psi: StateVector, a_mid: HermitianOperator, w_k: float,
                 dt: float, params: CollapseParams) -> StateVector:
    """Apply the reduced factor exp(dt (w_k A - lam A^2)).

    Identical to :func:`collapse_step` up to the scalar
    exp(-w_k^2 dt / 4 lam); the identity is exact per step, not just in
    the dt -> 0 limit.
    """
    spec = a_mid.spectrum()
    expo = dt * (w_k * spec.eigenvalues - params.lam * spec.eigenvalues**2)
    top = expo.max()
    if top > _EXP_LIMIT:
        raise RangeOverflowError(
            f"reduced-step exponent {top:.1f} exceeds the floating range; "
            f"w={w_k!r}, dt={dt!r}", exponent=float(top))
    coeffs = spec.eigenvectors.conj().T @ psi.amplitudes
    return StateVector(spec.eigenvectors @ (np.exp(expo) * coeffs))


def evolve(scenario: Scenario, path: Optional[NoisePath] = None, *,
           seed: Union[int, np.random.SeedSequence, None] = None,
           record_series: bool = True, store_every: int = 0,
           with_field_energy: bool = False) -> TrajectoryResult:
    """Propagate one trajectory.

    Parameters
    ----------
    scenario : Scenario
    path : NoisePath, optional
        Field values to use verbatim (raw or replayed).  When omitted the
        trajectory is cooked: the field is drawn step by step from the
        drifted Gaussian around 2 lam <A>, which requires ``seed``.
    seed : int or SeedSequence
        Entropy for cooked sampling; ignored when ``path`` is given.
    record_series : bool
        Record per-step <A>, Var A, <H> and log norm^2.
    store_every : int
        Keep every k-th normalized state for reverse sweeps (0 = none).
    with_field_energy : bool
        Also run the reverse sweep and fill ``field_energy_sample``.
        Only meaningful for raw paths, whose ensemble mean it estimates.

    Raises
    ------
    NumericalFailure
        If the path drives the state outside the floating range.
    """
    grid = scenario.grid
    params = scenario.params
    backend = make_backend(scenario, grid.dt)
    if with_field_energy and store_every == 0:
        store_every = max(1, int(math.sqrt(grid.steps)))

    if path is not None:
        mode = "raw" if path.mode == "raw" else "given"
        batch = evolve_batch(backend, grid, params, scenario.psi0.amplitudes,
                             mode=mode, given_w=path.values[None, :],
                             record_series=record_series, store_every=store_every)
    else:
        if seed is None:
            raise ValueError("cooked evolution needs a seed")
        mode = "cooked"
        xi = standard_increments(grid, params, seed)
        batch = evolve_batch(backend, grid, params, scenario.psi0.amplitudes,
                             mode="cooked", increments=xi[None, :],
                             record_series=record_series, store_every=store_every)

    if batch.failed[0]:
        raise NumericalFailure(
            "trajectory left the floating range; largest |w| = "
            f"{np.abs(batch.w[0]).max():.4g} over {grid.steps} steps")

    log_red = float(batch.log_red[0])
    weight = math.exp(log_red) if mode == "raw" else 1.0
    c_final = batch.final_internal[0]
    psi_lab = backend.to_schrodinger(c_final[None, :])[0]
    scale = math.exp(0.5 * log_red) if log_red > -1400.0 else 0.0
    final_state = StateVector(psi_lab * scale)

    coeffs = backend.coupling_coefficients(c_final[None, :])[0]
    populations = coeffs.real**2 + coeffs.imag**2
    populations = populations / populations.sum()

    # Interaction-energy functional: the coupling is diagonal in the final
    # internal frame, so its first two moments are direct sums.
    a_vals = backend.coupling_values
    pops_internal = c_final.real**2 + c_final.imag**2
    mean_a = float(pops_internal @ a_vals)
    mean_a2 = float(pops_internal @ (a_vals * a_vals))
    w_last = float(batch.w[0, -1])
    v_sample = w_last * mean_a - 2.0 * params.lam * mean_a2
    if mode == "raw":
        v_sample *= weight

    field_sample = None
    if with_field_energy:
        field_sample = float(field_energy_sweep(backend, grid, params, batch)[0])

    result = TrajectoryResult(
        mode=mode,
        lam=params.lam,
        times=grid.times,
        w=batch.w[0].copy(),
        weight=weight,
        log_reduced_norm2=log_red,
        sum_w2dt=float(batch.sum_w2dt[0]),
        final_state=final_state,
        coupling_populations=populations,
        interaction_sample=float(v_sample),
        series_expA=None if batch.series_expA is None else batch.series_expA[0].copy(),
        series_varA=None if batch.series_varA is None else batch.series_varA[0].copy(),
        series_expH=None if batch.series_expH is None else batch.series_expH[0].copy(),
        series_log_norm2=None if batch.log_red_series is None else batch.log_red_series[0].copy(),
        field_energy_sample=field_sample,
        stored_states=None if batch.states is None else batch.states[0].copy(),
        stored_steps=batch.stored_steps,
    )
    return result


def evolve_cooked(scenario: Scenario, seed: Union[int, np.random.SeedSequence], *,
                  record_series: bool = True) -> TrajectoryResult:
    """Shorthand for a cooked trajectory drawn from the physical measure."""
    return evolve(scenario, None, seed=seed, record_series=record_series)


def importance_weight(scenario: Scenario, path: NoisePath) -> float:
    """Squared norm of the reduced propagator applied to the initial state.

    This is the density of the physical path measure relative to the
    zero-mean Gaussian proposal; its mean over raw draws is 1.
    """
    result = evolve(scenario, path, record_series=False)
    return math.exp(result.log_reduced_norm2)


def trajectory_field_energy(scenario: Scenario, path: NoisePath, *,
                            store_every: int = 0) -> float:
    """Per-path field-energy estimator via forward/backward sweeps.

    Pairs each interior field jump (w_{k+1} - w_k) with the imaginary part
    of the mixed matrix element of the coupling between the forward state
    and the adjoint back-propagated final state, both evaluated at the
    jump time.  The mean over raw-measure paths is the deterministic
    field energy at time T; individual samples are not sign-definite.

    ``store_every`` controls the checkpoint stride for stored states
    (default: about sqrt(steps), recomputing between checkpoints).
    """
    result = evolve(scenario, path, record_series=False,
                    store_every=store_every, with_field_energy=True)
    return float(result.field_energy_sample)


def collapse_metrics(psi: StateVector, coupling: HermitianOperator) -> CollapseMetrics:
    """Distance of a state from the nearest collapse outcome.

    Returns the coupling variance in the normalized state, the distinct
    eigenvalue nearest to the coupling mean, and one minus the squared
    projection onto that eigenvalue's eigenspace.  Eigenvalues within
    DEGENERACY_RTOL of the spectral span count as one eigenspace, so
    degenerate couplings collapse to subspaces, not individual vectors.
    """
    psin = psi.normalized()
    spec = coupling.spectrum()
    vals = spec.eigenvalues
    coeffs = spec.eigenvectors.conj().T @ psin.amplitudes
    probs = coeffs.real**2 + coeffs.imag**2
    mean = float(probs @ vals)
    var = max(float(probs @ (vals * vals)) - mean * mean, 0.0)

    span = float(vals[-1] - vals[0])
    tol = DEGENERACY_RTOL * max(span, 1.0)
    # vals is ascending; group consecutive near-equal eigenvalues.
    groups = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] - vals[i - 1] > tol:
            groups.append((start, i))
            start = i
    reps = np.array([vals[a:b].mean() for a, b in groups])
    idx = int(np.argmin(np.abs(reps - mean)))
    a, b = groups[idx]
    captured = float(probs[a:b].sum())
    return CollapseMetrics(variance=var,
                           nearest_eigenvalue=float(reps[idx]),
                           distance=max(1.0 - captured, 0.0))
