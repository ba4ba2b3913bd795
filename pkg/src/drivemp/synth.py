"""Synthetic driving-trace generation for training and evaluation.

Courses alternate cruise phases with two event kinds that, together with
cruise, reproduce three distinct path-feature regimes: slow sustained
sharp turns, gentle arcs at speed, and long near-neutral cruising.  Steering follows a first-order lag of
scale * dtheta_future / v (preview plus continuity of the command), plus
moving-average-smoothed noise.  The lag is what makes the current steering
state informative for the early horizon; the 1/v factor makes the
dtheta -> delta map regime-dependent, giving the upper level something to
exploit.  Everything is deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ingest import smooth_moving_average
from .trace import DT, DrivingTrace


@dataclass(frozen=True)
class ScenarioConfig:
    n_traces: int = 12
    duration_s: float = 240.0
    # regime speeds, km/h
    cruise_speed_kmh: tuple[float, float] = (50.0, 56.0)
    turn_speed_kmh: tuple[float, float] = (30.0, 36.0)
    # maneuver durations, s
    cruise_dur_s: tuple[float, float] = (5.0, 7.5)
    arc_dur_s: tuple[float, float] = (1.1, 1.8)
    turn_dur_s: tuple[float, float] = (5.5, 8.0)
    # course-deviation peaks, degrees per 0.1 s sample
    arc_peak_deg: tuple[float, float] = (0.16, 0.22)
    turn_peak_deg: tuple[float, float] = (0.32, 0.48)
    turn_ramp_s: float = 0.3
    p_turn: float = 0.4
    # steering law
    steer_scale: float = 1500.0   # deg steering * km/h per deg-sample of course deviation
    steer_preview: int = 4        # lookahead, samples
    steer_lag: float = 0.75       # AR(1) pole of the command
    steer_noise_deg: float = 0.35 # stationary std of the smoothed command noise
    noise_window: int = 15        # MA window of the command noise, samples
    heading_noise_deg: float = 0.02  # sub-threshold course wiggle amplitude, deg/sample
    speed_noise_kmh: float = 0.5
    noise_scale: float = 1.0      # global noise multiplier; 0 = noise-free


@dataclass(frozen=True)
class Maneuver:
    kind: str        # "cruise" | "arc" | "turn"
    n: int           # samples
    direction: int   # +1 left / -1 right (0 for cruise)
    peak: float      # deg/sample course deviation at profile peak
    speed: float     # target speed, km/h


def _rnorm(rng: np.random.Generator, lo: float, hi: float) -> float:
    """Normal centered on the range, std a quarter of it: Gaussian
    within-regime spread keeps each regime's feature cloud unimodal for
    the BIC.  A floor at half the lower bound guards the tail."""
    return float(max(rng.normal(0.5 * (lo + hi), 0.25 * (hi - lo)), 0.5 * lo))


def _schedule(cfg: ScenarioConfig, rng: np.random.Generator, n_total: int) -> list[Maneuver]:
    """Cruise / event / cruise / ... filling n_total samples."""
    out: list[Maneuver] = []
    filled = 0
    next_is_event = False
    while filled < n_total:
        if next_is_event:
            if rng.random() < cfg.p_turn:
                dur = _rnorm(rng, *cfg.turn_dur_s)
                m = Maneuver(
                    kind="turn",
                    n=int(round(dur / DT)),
                    direction=1 if rng.random() < 0.5 else -1,
                    peak=_rnorm(rng, *cfg.turn_peak_deg),
                    speed=_rnorm(rng, *cfg.turn_speed_kmh),
                )
            else:
                dur = _rnorm(rng, *cfg.arc_dur_s)
                m = Maneuver(
                    kind="arc",
                    n=int(round(dur / DT)),
                    direction=1 if rng.random() < 0.5 else -1,
                    peak=_rnorm(rng, *cfg.arc_peak_deg),
                    speed=_rnorm(rng, *cfg.cruise_speed_kmh),
                )
        else:
            m = Maneuver(
                kind="cruise",
                n=int(round(_rnorm(rng, *cfg.cruise_dur_s) / DT)),
                direction=0,
                peak=0.0,
                speed=_rnorm(rng, *cfg.cruise_speed_kmh),
            )
        out.append(m)
        filled += m.n
        next_is_event = not next_is_event
    return out


def _smoothed_noise(rng: np.random.Generator, n: int, std: float, window: int) -> np.ndarray:
    if std <= 0.0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    sm = smooth_moving_average(white, window)
    s = float(np.std(sm))
    return sm * (std / s) if s > 0 else np.zeros(n)


def render_trace(
    cfg: ScenarioConfig,
    schedule: list[Maneuver],
    rng: np.random.Generator,
    trace_id: str,
    theta0: float = 0.0,
) -> DrivingTrace:
    """Turn a maneuver schedule into a 10 Hz trace with the steering law."""
    n = sum(m.n for m in schedule)
    dtheta_clean = np.zeros(n)
    speed_target = np.empty(n)
    ramp_mask = np.zeros(n, dtype=bool)
    pos = 0
    for i, m in enumerate(schedule):
        sl = slice(pos, pos + m.n)
        if m.kind != "cruise" and m.n > 0:
            # flat top with half-step linear ramps whose first sample is
            # already above the segmentation threshold: events shed no
            # sub-threshold flank samples into the neighboring neutral
            # segments, so each regime's features depend only on its own
            # (duration, peak) draws
            ramp_s = cfg.turn_ramp_s if m.kind == "turn" else 0.4 * cfg.turn_ramp_s
            ramp = max(min(int(round(ramp_s / DT)), m.n // 2), 1)
            prof = np.ones(m.n)
            up = (np.arange(ramp) + 0.5) / ramp
            prof[:ramp] = up
            prof[m.n - ramp:] = up[::-1]
            dtheta_clean[sl] = m.direction * m.peak * prof
            ramp_mask[pos:pos + ramp] = True
            ramp_mask[pos + m.n - ramp:pos + m.n] = True
        speed_target[sl] = m.speed
        if m.kind == "turn" and m.n > 0:
            # decelerate/accelerate inside the turn so the neighboring cruise
            # segments keep a clean single-regime mean velocity
            prev_speed = schedule[i - 1].speed if i > 0 else m.speed
            next_speed = schedule[i + 1].speed if i + 1 < len(schedule) else m.speed
            r = max(min(12, m.n // 3), 1)
            blend = 0.5 * (1.0 - np.cos(np.pi * np.arange(r) / r))
            speed_target[pos:pos + r] = prev_speed + (m.speed - prev_speed) * blend
            speed_target[pos + m.n - r:pos + m.n] = m.speed + (next_speed - m.speed) * blend[::-1]
        pos += m.n
    ns = cfg.noise_scale
    v = smooth_moving_average(speed_target, 5)
    v = v + ns * _smoothed_noise(rng, n, cfg.speed_noise_kmh, 21)
    v = np.maximum(v, 5.0)
    # sub-threshold course wiggle: per maneuver, a sign-alternating constant
    # amplitude, so a neutral segment's mean and max |dtheta| both equal the
    # (Gaussian) amplitude exactly.  i.i.d. or sinusoidal noise would make
    # those features scale mixtures over segment duration or phase, which
    # the feature GMM then models with spurious extra components.
    wiggle = np.zeros(n)
    if cfg.heading_noise_deg > 0.0:
        signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        pos = 0
        for m in schedule:
            amp = max(rng.normal(cfg.heading_noise_deg, 0.15 * cfg.heading_noise_deg), 0.0)
            wiggle[pos:pos + m.n] = amp * signs[pos:pos + m.n]
            if m.kind == "cruise" and m.n > 0:
                # one taller sample decouples a neutral segment's max |dtheta|
                # from its mean (otherwise they coincide exactly and a
                # collapsed mixture component latches onto that plane)
                j = pos + int(rng.integers(m.n))
                bump = max(rng.normal(0.4, 0.1), 0.0) * cfg.heading_noise_deg
                wiggle[j] = signs[j] * (amp + bump)
            pos += m.n
        # ramps cross the segmentation threshold; wiggle there would push
        # boundary samples across it and contaminate the neighbor's features
        wiggle[ramp_mask] = 0.0
    dtheta = dtheta_clean + ns * wiggle
    dtheta[0] = 0.0
    # steering: previewed regime-dependent target through a first-order lag
    ahead = np.minimum(np.arange(n) + cfg.steer_preview, n - 1)
    target = cfg.steer_scale * dtheta_clean[ahead] / v[ahead]
    delta = np.empty(n)
    acc = 0.0
    a = cfg.steer_lag
    for t in range(n):
        acc = a * acc + (1.0 - a) * target[t]
        delta[t] = acc
    delta = delta + ns * _smoothed_noise(rng, n, cfg.steer_noise_deg, cfg.noise_window)
    theta = theta0 + np.cumsum(dtheta)
    return DrivingTrace(
        timestamps=DT * np.arange(n),
        theta=theta,
        v=v,
        delta=delta,
        id=trace_id,
    )


def synth_corpus(cfg: ScenarioConfig, seed: int = 0) -> list[DrivingTrace]:
    """Generate cfg.n_traces independent traces, deterministic per seed."""
    n_total = int(round(cfg.duration_s / DT))
    out = []
    for i in range(cfg.n_traces):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        schedule = _schedule(cfg, rng, n_total)
        out.append(render_trace(cfg, schedule, rng, trace_id=f"synth-{seed}-{i:03d}"))
    return out


def synth_event_trace(
    cfg: ScenarioConfig,
    seed: int,
    kind: str = "turn",
    direction: int = 1,
    peak: float | None = None,
    duration_s: float | None = None,
    lead_s: float = 8.0,
    tail_s: float = 8.0,
) -> DrivingTrace:
    """One isolated maneuver between cruise phases (for oracle tests and
    demo plots).  Use replace(cfg, noise_scale=0) for a noise-free arc."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7_777_777)))
    if kind == "cruise":
        sched = [Maneuver("cruise", int(round((lead_s + tail_s) / DT)), 0, 0.0,
                          float(np.mean(cfg.cruise_speed_kmh)))]
    else:
        if kind == "turn":
            peak = peak if peak is not None else float(np.mean(cfg.turn_peak_deg))
            dur = duration_s if duration_s is not None else float(np.mean(cfg.turn_dur_s))
            speed = float(np.mean(cfg.turn_speed_kmh))
        elif kind == "arc":
            peak = peak if peak is not None else float(np.mean(cfg.arc_peak_deg))
            dur = duration_s if duration_s is not None else float(np.mean(cfg.arc_dur_s))
            speed = float(np.mean(cfg.cruise_speed_kmh))
        else:
            raise ValueError(f"unknown maneuver kind {kind!r}")
        cruise_speed = float(np.mean(cfg.cruise_speed_kmh))
        sched = [
            Maneuver("cruise", int(round(lead_s / DT)), 0, 0.0, cruise_speed),
            Maneuver(kind, int(round(dur / DT)), direction, peak, speed),
            Maneuver("cruise", int(round(tail_s / DT)), 0, 0.0, cruise_speed),
        ]
    return render_trace(cfg, sched, rng, trace_id=f"event-{kind}-{seed}")


def noise_free(cfg: ScenarioConfig) -> ScenarioConfig:
    return replace(cfg, noise_scale=0.0)
