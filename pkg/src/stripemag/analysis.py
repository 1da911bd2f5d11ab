"""Recover fields from difference frames: stripe fits, scans, calibration.

Stripe features in a background-subtracted cross section are zero-net-area
by atom-number conservation, so every stripe model here integrates to zero
by construction.  Two shapes are used:

* a difference of two concentric Gaussians (narrow positive lobe, wider
  negative lobe, areas matched) for generic stripe detection and fitting;
* the four-Gaussian timing shape for a single velocity class: positive
  lobes at x0 -+ d_pos (where the momentum-reversed atoms land, with
  d_pos = |2 v_r (T_r - T_i/2)|) and negative lobes at x0 -+ v_r T_i
  (the depleted classes), sharing one width and amplitude.

Positions map to velocity classes through x = v * T_map and to two-photon
detunings through 2 k v; the sideband comb calibration replaces the
pixel-size-based scale with a measured meters-per-(rad/s) factor, removing
pixel calibration systematics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .fitting import FitFailedError, FitResult, levenberg_marquardt
from .imaging import Profile
from .model import AtomSpecies


# ---------------------------------------------------------------------------
# shapes


def _gauss(x, c, sigma):
    return np.exp(-0.5 * ((x - c) / sigma) ** 2)


def zero_area_stripe(x, center, sigma_pos, sigma_neg, amplitude):
    """Concentric positive/negative Gaussian pair with zero net area."""
    return amplitude * (
        _gauss(x, center, sigma_pos)
        - (sigma_pos / sigma_neg) * _gauss(x, center, sigma_neg)
    )


def stripe_timing_shape(u, sigma, d_pos, d_neg):
    """Unit-amplitude timing shape versus offset u from the stripe center."""
    return (
        _gauss(u, -d_pos, sigma)
        + _gauss(u, d_pos, sigma)
        - _gauss(u, -d_neg, sigma)
        - _gauss(u, d_neg, sigma)
    )


def timing_offsets(t_image: float, t_pulse: float, species: AtomSpecies) -> tuple[float, float]:
    """(d_pos, d_neg) lobe offsets for pulse time t_pulse and image time t_image."""
    v_r = species.recoil_velocity
    dt = t_pulse - 0.5 * t_image
    return abs(2.0 * v_r * dt), v_r * t_image


# ---------------------------------------------------------------------------
# results


@dataclass
class StripeFit:
    """One fitted stripe."""

    center: float
    center_err: float
    sigma_pos: float
    sigma_neg: float
    amplitude: float
    residual_norm: float
    label: int | None = None    # Delta_m, set by ordering

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "center_m": self.center,
            "center_err_m": self.center_err,
            "sigma_pos_m": self.sigma_pos,
            "sigma_neg_m": self.sigma_neg,
            "amplitude": self.amplitude,
            "residual_norm": self.residual_norm,
        }


@dataclass
class StripeFitResult:
    """Stripes plus the derived Larmor frequency / field magnitude."""

    status: str                          # resolved | unresolved | failed
    stripes: list[StripeFit]
    t_map: float
    separation: float | None = None      # m, x(+1) - x(-1)
    separation_err: float | None = None
    omega_larmor: float | None = None    # rad/s
    omega_err: float | None = None
    b_gauss: float | None = None
    b_err_gauss: float | None = None
    b_upper_bound: float | None = None   # unresolved regime
    feature_width: float | None = None   # m, single-feature width when unresolved
    calibrated: bool = False

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "stripes": [s.to_dict() for s in self.stripes],
            "t_map_s": self.t_map,
            "separation_m": self.separation,
            "separation_err_m": self.separation_err,
            "omega_larmor_rad_s": self.omega_larmor,
            "omega_err_rad_s": self.omega_err,
            "larmor_hz": None if self.omega_larmor is None else self.omega_larmor / (2.0 * math.pi),
            "b_gauss": self.b_gauss,
            "b_err_gauss": self.b_err_gauss,
            "b_upper_bound_gauss": self.b_upper_bound,
            "feature_width_m": self.feature_width,
            "calibrated": self.calibrated,
        }


@dataclass
class ScanFitResult:
    """Hyperbola fit of omega_L versus one coil current."""

    alpha: float                 # G/A
    alpha_err: float
    i_comp: float                # A
    i_comp_err: float
    b_perp: float                # G
    b_perp_err: float
    residuals: np.ndarray        # rad/s, per point
    currents: np.ndarray
    omegas: np.ndarray
    ill_conditioned: bool = False

    def to_dict(self) -> dict:
        return {
            "alpha_g_per_a": self.alpha,
            "alpha_err_g_per_a": self.alpha_err,
            "i_comp_a": self.i_comp,
            "i_comp_err_a": self.i_comp_err,
            "b_perp_gauss": self.b_perp,
            "b_perp_err_gauss": self.b_perp_err,
            "residuals_rad_s": self.residuals.tolist(),
            "currents_a": self.currents.tolist(),
            "omegas_rad_s": self.omegas.tolist(),
            "ill_conditioned": self.ill_conditioned,
        }


@dataclass
class CalibrationResult:
    """Measured position-per-detuning scale from a sideband comb run.

    Also carries the measured line shape (template) of the central comb
    line; fitting measurement stripes with the same empirical shape removes
    the residual systematic from the choice of analytic fit form.
    """

    meters_per_rad_per_s: float
    uncertainty: float
    spacing: float               # m between adjacent comb lines
    line_centers: list[float]
    line_orders: list[int]
    template_x: np.ndarray | None = None   # m, relative to the line center
    template_y: np.ndarray | None = None   # normalized counts

    def to_dict(self) -> dict:
        return {
            "meters_per_rad_per_s": self.meters_per_rad_per_s,
            "uncertainty": self.uncertainty,
            "spacing_m": self.spacing,
            "line_centers_m": self.line_centers,
            "line_orders": self.line_orders,
            "template_x_m": None if self.template_x is None else self.template_x.tolist(),
            "template_y": None if self.template_y is None else self.template_y.tolist(),
        }


@dataclass
class TimingFit:
    """Fit of the four-Gaussian timing shape to one stripe."""

    center: float
    center_err: float
    sigma: float
    amplitude: float
    d_pos: float                 # positive-lobe half-splitting (fitted or fixed)
    d_pos_err: float
    residual_norm: float
    fit: FitResult

    @property
    def positive_lobe_splitting(self) -> float:
        return 2.0 * self.d_pos


@dataclass
class PairFit:
    """Joint fit of two mirrored timing-shape stripes; precision separation."""

    separation: float
    separation_err: float
    center: float
    sigma: float
    amplitude: float
    residual_norm: float
    fit: FitResult


# ---------------------------------------------------------------------------
# detection helpers


def smooth(y: np.ndarray, width: int = 5) -> np.ndarray:
    """Boxcar smoothing, same length."""
    if width <= 1:
        return np.asarray(y, dtype=float)
    kernel = np.ones(width) / width
    return np.convolve(y, kernel, mode="same")


def noise_sigma(y: np.ndarray) -> float:
    """Pixel-scale noise estimate from successive differences.

    Robust against the smooth stripe structure itself (unlike a plain MAD,
    which saturates when stripes fill the profile).
    """
    dy = np.diff(np.asarray(y, dtype=float))
    return 1.4826 * float(np.median(np.abs(dy - np.median(dy)))) / math.sqrt(2.0)


def detect_stripes(
    profile: Profile,
    threshold_sigma: float = 5.0,
    boxcar: int = 5,
    min_spacing_px: int = 12,
) -> list[int]:
    """Indices of candidate stripe maxima in the smoothed profile."""
    sm = smooth(profile.counts, boxcar)
    floor = noise_sigma(profile.counts) / math.sqrt(max(boxcar, 1))
    height = threshold_sigma * floor if floor > 0 else 0.05 * float(np.max(np.abs(sm)) or 1.0)
    peaks, _ = find_peaks(sm, height=height, distance=min_spacing_px, prominence=0.5 * height)
    return [int(p) for p in peaks]


# ---------------------------------------------------------------------------
# per-stripe zero-area fit


_MIN_WIDTH_RATIO = 1.2  # sigma_neg / sigma_pos lower bound


def _fit_zero_area_single(x, y, c0, sigma0, amp0) -> tuple[StripeFit, FitResult]:
    """Fit one zero-area stripe; parameters (center, sigma_pos, q, amplitude).

    The negative-lobe width is sigma_pos * (ratio_min + q^2), which keeps the
    lobes from degenerating into the flat near-cancelling direction
    (sigma_neg -> sigma_pos with diverging amplitude) that noisy data can
    otherwise chase forever.
    """
    span = float(x[-1] - x[0]) if len(x) > 1 else 1.0

    def split(p):
        sp = min(abs(p[1]), 10.0 * span)
        q = min(abs(p[2]), 1e3)
        sn = sp * (_MIN_WIDTH_RATIO + q * q)
        return p[0], sp, sn, p[3]

    def resid(p):
        c, sp, sn, a = split(p)
        return zero_area_stripe(x, c, sp, sn, a) - y

    def jac(p):
        c, sp, sn, a = split(p)
        ratio = sn / sp
        gp = _gauss(x, c, sp)
        gn = _gauss(x, c, sn)
        dc = a * (gp * (x - c) / sp**2 - (sp / sn) * gn * (x - c) / sn**2)
        d_sp = a * (gp * (x - c) ** 2 / sp**3 - gn / sn)          # dF/d sigma_pos
        d_sn = a * ((sp / sn**2) * gn - (sp / sn) * gn * (x - c) ** 2 / sn**3)
        dsp = (d_sp + d_sn * ratio) * np.sign(p[1])
        dq = d_sn * sp * 2.0 * np.clip(p[2], -1e3, 1e3)
        da = zero_area_stripe(x, c, sp, sn, 1.0)
        return np.column_stack([dc, dsp, dq, da])

    q0 = math.sqrt(max(2.5 - _MIN_WIDTH_RATIO, 0.01))
    res = levenberg_marquardt(resid, jac, [c0, sigma0, q0, amp0])
    c, sp, sn, a = split(res.params)
    return (
        StripeFit(
            center=c,
            center_err=float(res.param_errors[0]),
            sigma_pos=sp,
            sigma_neg=sn,
            amplitude=a,
            residual_norm=res.residual_norm,
        ),
        res,
    )


def _initial_width(x, y, peak_idx) -> float:
    """Half-max crossing estimate of the positive-lobe sigma."""
    half = 0.5 * y[peak_idx]
    n = len(y)
    left = peak_idx
    while left > 0 and y[left] > half:
        left -= 1
    right = peak_idx
    while right < n - 1 and y[right] > half:
        right += 1
    fwhm = (x[right] - x[left]) if right > left else 3.0 * (x[1] - x[0])
    return max(fwhm / 2.355, 1.5 * abs(x[1] - x[0]))


def fit_stripes_zero_area(
    profile: Profile,
    species: AtomSpecies,
    t_map: float,
    calibration: CalibrationResult | None = None,
    threshold_sigma: float = 5.0,
    boxcar: int = 5,
) -> StripeFitResult:
    """Detect stripes and fit each as a zero-area Gaussian pair.

    With a resolved +-1 pair the separation, Larmor frequency and |B| are
    filled in; otherwise the result is "unresolved" and carries the
    single-feature width and the field upper bound it implies.
    """
    x = np.asarray(profile.x, dtype=float)
    y = np.asarray(profile.counts, dtype=float)
    sm = smooth(y, boxcar)
    idx = detect_stripes(profile, threshold_sigma=threshold_sigma, boxcar=boxcar)

    stripes: list[StripeFit] = []
    for i in idx:
        sigma0 = _initial_width(x, sm, i)
        half_window = max(6.0 * sigma0, 10.0 * abs(x[1] - x[0]))
        c_ref = float(x[i])
        fit = None
        for _ in range(2):  # refit once around the fitted center
            sel = np.abs(x - c_ref) <= half_window
            if sel.sum() < 8:
                break
            try:
                fit, _ = _fit_zero_area_single(x[sel], y[sel], c_ref, sigma0, sm[i])
            except FitFailedError:
                fit = None
                break
            c_ref = fit.center
        if fit is not None and fit.amplitude > 0:
            stripes.append(fit)

    stripes = _dedupe(stripes)
    stripes.sort(key=lambda s: s.center)
    return _label_and_convert(stripes, species, t_map, calibration, x, sm)


def _dedupe(stripes: list[StripeFit]) -> list[StripeFit]:
    """Drop fits that converged onto an already-kept stripe."""
    kept: list[StripeFit] = []
    for s in sorted(stripes, key=lambda s: -abs(s.amplitude)):
        if all(abs(s.center - k.center) > 0.5 * (s.sigma_pos + k.sigma_pos) for k in kept):
            kept.append(s)
    return kept


def _label_and_convert(
    stripes: list[StripeFit],
    species: AtomSpecies,
    t_map: float,
    calibration: CalibrationResult | None,
    x: np.ndarray | None = None,
    sm: np.ndarray | None = None,
) -> StripeFitResult:
    calibrated = calibration is not None

    def data_amp(s: StripeFit) -> float:
        """Stripe strength read off the smoothed profile, not fit parameters."""
        if x is None or sm is None:
            return abs(s.amplitude)
        i = int(np.argmin(np.abs(x - s.center)))
        return float(np.max(sm[max(i - 2, 0):i + 3]))

    # label only the dominant features: a real +-1 pair has matched channel
    # weights, so the substructure ripples of a strong feature (much weaker
    # than it) must never be labeled as stripes
    amps = {id(s): data_amp(s) for s in stripes}
    if stripes:
        strongest = max(amps.values())
        main_set = [s for s in stripes if amps[id(s)] >= 0.3 * strongest]
    else:
        main_set = []

    # a credible pair is also mirror-symmetric about the v = 0 class
    def pair_ok(a: StripeFit, b: StripeFit, mid: float = 0.0) -> bool:
        span = abs(b.center - a.center)
        if span <= 0:
            return False
        balanced = abs(a.center + b.center - 2.0 * mid) <= 0.3 * span
        ratio = max(amps[id(a)], amps[id(b)]) / max(min(amps[id(a)], amps[id(b)]), 1e-300)
        return balanced and ratio <= 3.0

    sep = None
    sep_err = None

    if len(main_set) >= 3:
        main = sorted(sorted(main_set, key=lambda s: -amps[id(s)])[:3], key=lambda s: s.center)
        if pair_ok(main[0], main[2], mid=main[1].center) and abs(
            main[1].center
        ) < 3.0 * main[1].sigma_pos:
            for s, lab in zip(main, (-1, 0, 1)):
                s.label = lab
            sep = main[2].center - main[0].center
            sep_err = math.hypot(main[2].center_err, main[0].center_err)

    if sep is None and len(main_set) >= 2:
        lo, hi = sorted(sorted(main_set, key=lambda s: -amps[id(s)])[:2], key=lambda s: s.center)
        central = [s for s in (lo, hi) if abs(s.center) < 3.0 * s.sigma_pos]
        # exactly one near-zero stripe means the v = 0 marker plus a single
        # side stripe (no +-1 pair); zero or two near-zero stripes form a
        # candidate pair (overlapping pairs straddle zero inside 3 sigma)
        if len(central) != 1 and pair_ok(lo, hi):
            lo.label, hi.label = -1, 1
            sep = hi.center - lo.center
            sep_err = math.hypot(hi.center_err, lo.center_err)

    if sep is None:
        return _unresolved_result(stripes, species, t_map, calibration)
    omega, b = separation_to_field(sep, t_map, species, calibration=calibration)
    omega_err, b_err = separation_to_field(sep_err, t_map, species, calibration=calibration)
    return StripeFitResult(
        status="resolved",
        stripes=stripes,
        t_map=t_map,
        separation=sep,
        separation_err=sep_err,
        omega_larmor=omega,
        omega_err=omega_err,
        b_gauss=b,
        b_err_gauss=b_err,
        calibrated=calibrated,
    )


def _unresolved_result(stripes, species, t_map, calibration) -> StripeFitResult:
    width = None
    bound = None
    if stripes:
        dominant = max(stripes, key=lambda s: abs(s.amplitude))
        width = dominant.sigma_pos
        omega_bound, bound = separation_to_field(width, t_map, species, calibration=calibration)
    return StripeFitResult(
        status="unresolved",
        stripes=stripes,
        t_map=t_map,
        feature_width=width,
        b_upper_bound=bound,
        calibrated=calibration is not None,
    )


def separation_to_field(
    s: float,
    t_map: float,
    species: AtomSpecies,
    delta_m_pair: int = 2,
    calibration: CalibrationResult | None = None,
) -> tuple[float, float]:
    """Map a +-1 stripe separation to (omega_L, |B|).

    Uncalibrated: omega_L = k s / t_map (for the default Delta_m span of 2).
    With a sideband calibration the measured meters-per-(rad/s) factor
    replaces t_map / (2 k), eliminating pixel-scale systematics.
    """
    if s < 0:
        raise ValueError(f"separation must be >= 0, got {s}")
    if t_map <= 0:
        raise ValueError(f"t_map must be > 0, got {t_map}")
    factor = calibration.meters_per_rad_per_s if calibration else t_map / (2.0 * species.wavenumber)
    omega = (s / factor) / delta_m_pair
    return omega, omega / species.gyromag


# ---------------------------------------------------------------------------
# timing-shape fits


def fit_stripe_timing(
    profile: Profile,
    t_image: float,
    t_pulse: float,
    species: AtomSpecies,
    center_init: float | None = None,
    float_splitting: bool = False,
) -> TimingFit:
    """Fit the four-Gaussian timing shape to the dominant stripe.

    The lobe offsets are fixed by the pulse geometry; with float_splitting
    the positive-lobe half-offset d_pos is fitted instead, which measures
    the momentum-reversal displacement 2 v_r (T_r - T_i/2).
    """
    x = np.asarray(profile.x, dtype=float)
    y = np.asarray(profile.counts, dtype=float)
    d_pos0, d_neg = timing_offsets(t_image, t_pulse, species)

    if center_init is None:
        sm = smooth(y, 5)
        center_init = float(x[np.argmax(sm)])
    sigma0 = max(2.0 * abs(x[1] - x[0]), 0.8 * species.recoil_velocity * t_image * 0.5)
    amp0 = max(float(np.max(smooth(y, 5))), 1e-12)

    def model_parts(c, sig, dp):
        up = x - c
        return (
            _gauss(up, -dp, sig), _gauss(up, dp, sig),
            _gauss(up, -d_neg, sig), _gauss(up, d_neg, sig),
        )

    def model(c, sig, a, dp):
        g1, g2, g3, g4 = model_parts(c, sig, dp)
        return a * (g1 + g2 - g3 - g4)

    def resid(p):
        c, sig, a = p[0], abs(p[1]), p[2]
        dp = abs(p[3]) if float_splitting else d_pos0
        return model(c, sig, a, dp) - y

    def jac(p):
        c, sig, a = p[0], abs(p[1]), p[2]
        dp = abs(p[3]) if float_splitting else d_pos0
        u = x - c
        g1, g2, g3, g4 = model_parts(c, sig, dp)
        dc = a * (
            g1 * (u + dp) / sig**2 + g2 * (u - dp) / sig**2
            - g3 * (u + d_neg) / sig**2 - g4 * (u - d_neg) / sig**2
        )
        dsig = a * (
            g1 * (u + dp) ** 2 + g2 * (u - dp) ** 2
            - g3 * (u + d_neg) ** 2 - g4 * (u - d_neg) ** 2
        ) / sig**3 * np.sign(p[1])
        da = model(c, sig, 1.0, dp)
        cols = [dc, dsig, da]
        if float_splitting:
            ddp = a * (g2 * (u - dp) - g1 * (u + dp)) / sig**2 * np.sign(p[3])
            cols.append(ddp)
        return np.column_stack(cols)

    p0 = [center_init, sigma0, amp0] + ([max(d_pos0, sigma0 / 2)] if float_splitting else [])
    res = levenberg_marquardt(resid, jac, p0)
    c, sig, a = res.params[0], abs(res.params[1]), res.params[2]
    dp = abs(res.params[3]) if float_splitting else d_pos0
    dp_err = float(res.param_errors[3]) if float_splitting else 0.0
    return TimingFit(
        center=c,
        center_err=float(res.param_errors[0]),
        sigma=sig,
        amplitude=a,
        d_pos=dp,
        d_pos_err=dp_err,
        residual_norm=res.residual_norm,
        fit=res,
    )


def fit_stripe_pair(
    profile: Profile,
    t_image: float,
    t_pulse: float,
    species: AtomSpecies,
    separation_init: float,
    center_init: float = 0.0,
) -> PairFit:
    """Joint fit of two mirrored timing-shape stripes at center +- s/2.

    The +-1 channels have equal weights, so a symmetric two-stripe model is
    exact; fitting the separation directly stays well-conditioned down to
    overlapping stripes.
    """
    x = np.asarray(profile.x, dtype=float)
    y = np.asarray(profile.counts, dtype=float)
    d_pos, d_neg = timing_offsets(t_image, t_pulse, species)
    sigma0 = max(2.0 * abs(x[1] - x[0]), 1e-4)
    amp0 = max(float(np.max(smooth(y, 5))), 1e-12)

    offs = np.array([-d_pos, d_pos, -d_neg, d_neg])
    signs = np.array([1.0, 1.0, -1.0, -1.0])

    def terms(p):
        s, c, sig = p[0], p[1], abs(p[2])
        u1 = (x - c - 0.5 * s)[:, None] - offs[None, :]
        u2 = (x - c + 0.5 * s)[:, None] - offs[None, :]
        g1 = np.exp(-0.5 * (u1 / sig) ** 2) * signs
        g2 = np.exp(-0.5 * (u2 / sig) ** 2) * signs
        return u1, u2, g1, g2, sig

    def resid(p):
        _, _, g1, g2, _ = terms(p)
        return p[3] * (g1.sum(axis=1) + g2.sum(axis=1)) - y

    def jac(p):
        u1, u2, g1, g2, sig = terms(p)
        a = p[3]
        # d/du of each Gaussian term is -u/sig^2 * g
        d1 = (g1 * u1).sum(axis=1) / sig**2
        d2 = (g2 * u2).sum(axis=1) / sig**2
        ds = a * (0.5 * d1 - 0.5 * d2)
        dc = a * (d1 + d2)
        dsig = a * ((g1 * u1**2).sum(axis=1) + (g2 * u2**2).sum(axis=1)) / sig**3 * np.sign(p[2])
        da = g1.sum(axis=1) + g2.sum(axis=1)
        return np.column_stack([ds, dc, dsig, da])

    res = levenberg_marquardt(resid, jac, [separation_init, center_init, sigma0, amp0])
    return PairFit(
        separation=abs(res.params[0]),
        separation_err=float(res.param_errors[0]),
        center=res.params[1],
        sigma=abs(res.params[2]),
        amplitude=res.params[3],
        residual_norm=res.residual_norm,
        fit=res,
    )


# ---------------------------------------------------------------------------
# hyperbola scan


def fit_hyperbola(
    currents,
    omegas,
    species: AtomSpecies,
    sigmas=None,
) -> ScanFitResult:
    """Fit omega_L(I) = gyromag sqrt(alpha^2 (I - I0)^2 + B_perp^2).

    Needs >= 4 points; points should straddle the minimum, otherwise the
    result is flagged ill-conditioned.  The fitted I0 is the exact argmin
    of the fitted curve (property of the model).
    """
    i_arr = np.asarray(currents, dtype=float)
    w_arr = np.asarray(omegas, dtype=float)
    if i_arr.size < 4:
        raise ValueError(f"hyperbola fit needs >= 4 points, got {i_arr.size}")
    weights = 1.0 / np.asarray(sigmas, dtype=float) if sigmas is not None else np.ones_like(w_arr)
    gam = species.gyromag

    i_min = i_arr[np.argmin(w_arr)]
    ill = bool(i_min <= i_arr.min() or i_min >= i_arr.max())
    b0 = max(w_arr.min() / gam, 1e-6)
    far = i_arr[np.argmax(np.abs(i_arr - i_min))]
    w_far = w_arr[np.argmax(np.abs(i_arr - i_min))]
    alpha0 = max(abs(w_far / gam - b0) / max(abs(far - i_min), 1e-9), 1e-3)

    def split(p):
        return abs(p[0]), p[1], abs(p[2])

    def resid(p):
        a, i0, bp = split(p)
        return weights * (gam * np.sqrt(a**2 * (i_arr - i0) ** 2 + bp**2) - w_arr)

    def jac(p):
        a, i0, bp = split(p)
        root = np.sqrt(a**2 * (i_arr - i0) ** 2 + bp**2)
        root = np.where(root > 0, root, 1e-300)
        d_a = weights * gam * a * (i_arr - i0) ** 2 / root * np.sign(p[0])
        d_i0 = weights * (-gam * a**2 * (i_arr - i0) / root)
        d_bp = weights * gam * bp / root * np.sign(p[2]) if bp > 0 else weights * 0.0
        return np.column_stack([d_a, d_i0, d_bp])

    res = levenberg_marquardt(resid, jac, [alpha0, i_min, b0])
    a, i0, bp = split(res.params)
    errs = res.param_errors
    return ScanFitResult(
        alpha=a,
        alpha_err=float(errs[0]),
        i_comp=i0,
        i_comp_err=float(errs[1]),
        b_perp=bp,
        b_perp_err=float(errs[2]),
        residuals=resid(res.params) / weights,
        currents=i_arr,
        omegas=w_arr,
        ill_conditioned=ill,
    )


# ---------------------------------------------------------------------------
# sideband comb calibration


def calibrate_with_sidebands(
    profile: Profile,
    modulation_freq: float,
    t_map: float,
    species: AtomSpecies,
    threshold_sigma: float = 5.0,
    line_orders=None,
) -> CalibrationResult:
    """Measure the position-per-detuning factor from a sideband comb frame.

    Fits each comb stripe with the zero-area pair shape and regresses the
    centers against the integer line order (line n sits n * modulation_freq
    away in detuning), so the slope gives meters per rad/s.  line_orders,
    when given, names the orders actually driven (they need not be
    consecutive); otherwise consecutive orders are inferred.
    """
    x = np.asarray(profile.x, dtype=float)
    y = np.asarray(profile.counts, dtype=float)
    sm = smooth(y, 5)
    idx = detect_stripes(profile, threshold_sigma=threshold_sigma)
    if len(idx) < 3:
        raise FitFailedError(
            f"comb fit failed: only {len(idx)} stripes detected, need >= 3",
            params=np.array([]),
            residual_norm=float("nan"),
        )

    nominal_spacing = modulation_freq * (t_map / (2.0 * species.wavenumber))
    if line_orders is not None:
        nominal_spacing *= float(np.min(np.diff(np.sort(np.asarray(line_orders, dtype=float)))))

    centers = []
    center_errs = []
    for i in idx:
        sigma0 = _initial_width(x, sm, i)
        half_window = max(4.0 * sigma0, 8.0 * abs(x[1] - x[0]))
        half_window = min(half_window, 0.45 * nominal_spacing)
        sel = np.abs(x - x[i]) <= half_window
        fit, _ = _fit_zero_area_single(x[sel], y[sel], x[i], sigma0, sm[i])
        centers.append(fit.center)
        center_errs.append(max(fit.center_err, 1e-12))

    order = np.argsort(centers)
    centers = np.array(centers)[order]
    center_errs = [center_errs[k] for k in order]
    if line_orders is not None:
        if len(line_orders) != len(centers):
            raise FitFailedError(
                f"comb fit failed: {len(centers)} stripes detected for "
                f"{len(line_orders)} driven lines",
                params=centers,
                residual_norm=float("nan"),
            )
        orders = np.sort(np.asarray(line_orders, dtype=int))
    else:
        spacing_est = float(np.median(np.diff(centers)))
        orders = np.rint((centers - centers[len(centers) // 2]) / spacing_est).astype(int)
    if len(set(orders.tolist())) != len(orders):
        raise FitFailedError(
            "comb fit failed: could not assign distinct line orders",
            params=centers,
            residual_norm=float("nan"),
        )

    # empirical line-shape template from the central line; lightly smoothed
    # (the underlying shape is smooth, the samples carry shot noise)
    from scipy.signal import savgol_filter

    k_central = int(np.argmin(np.abs(centers)))
    t_window = 0.45 * float(np.min(np.diff(centers)))
    t_sel = np.abs(x - centers[k_central]) <= t_window
    t_x = x[t_sel] - centers[k_central]
    t_y = savgol_filter(y[t_sel], window_length=min(7, len(t_x) // 2 * 2 - 1), polyorder=3)
    norm = float(np.max(np.abs(t_y))) or 1.0
    cal = CalibrationResult(
        meters_per_rad_per_s=float("nan"),
        uncertainty=float("nan"),
        spacing=float("nan"),
        line_centers=centers.tolist(),
        line_orders=orders.tolist(),
        template_x=t_x,
        template_y=t_y / norm,
    )

    # second pass: re-fit every line center with the measured template so
    # calibration and measurement stripes share the same estimator (and
    # therefore the same envelope-tilt bias, which then cancels exactly)
    refined = []
    refined_errs = []
    for c0 in centers:
        sel = np.abs(x - c0) <= t_window
        sub = Profile(x=x[sel], counts=y[sel])
        c_fit, c_err, _amp = fit_single_with_template(sub, cal, center_init=c0)
        refined.append(c_fit)
        refined_errs.append(max(c_err, 1e-12))
    centers = np.array(refined)
    center_errs = refined_errs

    # weighted straight-line fit center = a + spacing * order
    w = 1.0 / np.square(np.array(center_errs))
    design = np.column_stack([np.ones_like(centers), orders.astype(float)])
    wd = design * w[:, None]
    cov = np.linalg.inv(design.T @ wd)
    coef = cov @ (wd.T @ centers)
    spacing = float(coef[1])
    resid = centers - design @ coef
    dof = max(len(centers) - 2, 1)
    scale = float(resid @ (w * resid)) / dof
    spacing_err = math.sqrt(cov[1, 1] * max(scale, 1.0))

    cal.meters_per_rad_per_s = spacing / modulation_freq
    cal.uncertainty = spacing_err / modulation_freq
    cal.spacing = spacing
    cal.line_centers = centers.tolist()
    return cal


# ---------------------------------------------------------------------------
# empirical-template fits (measurement stripes share the comb line shape)


class _Template:
    """Pixel-integrated spline model of a measured line shape.

    The tabulated template is itself pixel-averaged data, so the model for
    a stripe at an arbitrary sub-pixel position is the average of the
    spline over each destination pixel (antiderivative differences); this
    keeps the estimator's pixel-phase behavior identical between the
    calibration comb and measurement stripes.  The shape is tapered to
    zero over its outer 15% so the support edge never slices a feature.
    """

    def __init__(self, x_rel: np.ndarray, y: np.ndarray, pixel_size: float):
        from scipy.interpolate import CubicSpline

        x_rel = np.asarray(x_rel, dtype=float)
        y = np.asarray(y, dtype=float).copy()
        span = x_rel[-1] - x_rel[0]
        e = np.clip(np.minimum(x_rel - x_rel[0], x_rel[-1] - x_rel) / (0.15 * span), 0.0, 1.0)
        y *= 3.0 * e**2 - 2.0 * e**3  # smoothstep taper
        h = pixel_size
        pad_x = np.concatenate(
            [x_rel[0] - h * np.arange(3, 0, -1), x_rel, x_rel[-1] + h * np.arange(1, 4)]
        )
        pad_y = np.concatenate([np.zeros(3), y, np.zeros(3)])
        self._spline = CubicSpline(pad_x, pad_y, bc_type="natural")
        self._anti = self._spline.antiderivative()
        self.lo, self.hi = float(pad_x[0]), float(pad_x[-1])
        self._f_lo = float(self._anti(self.lo))
        self._f_hi = float(self._anti(self.hi))
        self.h = h

    def _integral(self, u):
        u = np.clip(u, self.lo, self.hi)
        return self._anti(u)

    def _point(self, u):
        inside = (u > self.lo) & (u < self.hi)
        return np.where(inside, np.nan_to_num(self._spline(np.clip(u, self.lo, self.hi))), 0.0)

    def __call__(self, u):
        """Pixel-averaged template value at pixel centers u."""
        return (self._integral(u + 0.5 * self.h) - self._integral(u - 0.5 * self.h)) / self.h

    def slope(self, u):
        """d/du of the pixel-averaged value."""
        return (self._point(u + 0.5 * self.h) - self._point(u - 0.5 * self.h)) / self.h


def fit_pair_with_template(
    profile: Profile,
    calibration: CalibrationResult,
    separation_init: float,
    center_init: float = 0.0,
) -> PairFit:
    """Joint fit of two mirrored copies of the calibration line shape.

    Sharing the measured shape between the calibration comb and the
    measurement stripes cancels the systematic from the fit form itself.
    """
    if calibration.template_x is None:
        raise ValueError("calibration carries no line-shape template")
    x_all = np.asarray(profile.x, dtype=float)
    y_all = np.asarray(profile.counts, dtype=float)
    tmpl = _Template(calibration.template_x, calibration.template_y, abs(x_all[1] - x_all[0]))

    # fit only the stripe neighborhoods (template support around each lobe)
    w_t = 0.5 * (tmpl.hi - tmpl.lo)
    sel = (np.abs(x_all - center_init - 0.5 * separation_init) <= w_t) | (
        np.abs(x_all - center_init + 0.5 * separation_init) <= w_t
    )
    x, y = x_all[sel], y_all[sel]
    amp0 = max(float(np.max(smooth(y, 5))), 1e-12)

    def resid(p):
        s, c, a = p
        return a * (tmpl(x - c - 0.5 * s) + tmpl(x - c + 0.5 * s)) - y

    def jac(p):
        s, c, a = p
        g1 = tmpl.slope(x - c - 0.5 * s)
        g2 = tmpl.slope(x - c + 0.5 * s)
        ds = a * (-0.5 * g1 + 0.5 * g2)
        dc = a * (-g1 - g2)
        da = tmpl(x - c - 0.5 * s) + tmpl(x - c + 0.5 * s)
        return np.column_stack([ds, dc, da])

    res = levenberg_marquardt(resid, jac, [separation_init, center_init, amp0])
    return PairFit(
        separation=abs(res.params[0]),
        separation_err=float(res.param_errors[0]),
        center=res.params[1],
        sigma=float("nan"),
        amplitude=res.params[2],
        residual_norm=res.residual_norm,
        fit=res,
    )


def fit_single_with_template(
    profile: Profile,
    calibration: CalibrationResult,
    center_init: float,
) -> tuple[float, float, float]:
    """Fit one copy of the calibration line shape; (center, center_err, amplitude)."""
    if calibration.template_x is None:
        raise ValueError("calibration carries no line-shape template")
    x_all = np.asarray(profile.x, dtype=float)
    y_all = np.asarray(profile.counts, dtype=float)
    tmpl = _Template(calibration.template_x, calibration.template_y, abs(x_all[1] - x_all[0]))
    w_t = 0.5 * (tmpl.hi - tmpl.lo)
    sel = np.abs(x_all - center_init) <= w_t
    x, y = x_all[sel], y_all[sel]
    amp0 = max(float(np.max(smooth(y, 5))), 1e-12)

    def resid(p):
        c, a = p
        return a * tmpl(x - c) - y

    def jac(p):
        c, a = p
        return np.column_stack([-a * tmpl.slope(x - c), tmpl(x - c)])

    res = levenberg_marquardt(resid, jac, [center_init, amp0])
    return float(res.params[0]), float(res.param_errors[0]), float(res.params[1])


# ---------------------------------------------------------------------------
# contrast


def contrast(
    profile: Profile,
    reference: Profile,
    model_counts: np.ndarray | None = None,
    center: float | None = None,
    window: float | None = None,
) -> float:
    """Peak-to-trough stripe amplitude over the no-pulse cloud amplitude.

    model_counts, when given, is the fitted stripe model evaluated on
    profile.x; otherwise the smoothed profile is used directly.
    """
    x = np.asarray(profile.x, dtype=float)
    y = model_counts if model_counts is not None else smooth(profile.counts, 5)
    if center is None:
        center = float(x[np.argmax(np.abs(y))])
    if window is None:
        window = (x[-1] - x[0]) / 8.0
    sel = np.abs(x - center) <= window
    if not np.any(sel):
        raise ValueError("contrast window contains no samples")
    swing = float(np.max(y[sel]) - np.min(y[sel]))
    ref = smooth(reference.counts, 5)
    ref_amp = float(np.interp(center, reference.x, ref))
    if ref_amp <= 0:
        raise ValueError("reference profile amplitude is not positive at the stripe")
    return swing / ref_amp
