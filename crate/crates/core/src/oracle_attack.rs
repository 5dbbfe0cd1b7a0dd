//! Binary-output oracle attack on a watermark detector.
//!
//! The attack only sees present/absent answers. It maps a direction `t` to
//! the detection boundary by bisection along the ray `x̃ + α t`, measures
//! the distortion `d = ||α t||²` of that boundary point, estimates the
//! gradient of this distortion with respect to `t` by finite differences
//! (one re-mapping per dimension), and descends. Because the distortion is
//! invariant to rescaling `t`, directions are kept at unit norm and a
//! descent step is a rotation of `t` towards `-∇d` in the plane they span.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::MID_GRAY;
use crate::oracle::{Oracle, OracleSession, QueryPhase};
use crate::rng::RngConfig;
use crate::signal::{psnr, squared_distance, Psnr, Signal};

/// How the first boundary point is found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartStrategy {
    /// Bisection along a random Gaussian direction.
    RandomDirection,
    /// Bisection towards the shortest gray-prefix image that is undetected.
    GrayPrefix,
}

/// Descent step policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// Try a rotation of `initial_angle` towards the negative gradient,
    /// halve it until the distortion drops, grow it while it keeps
    /// dropping, then refine the bracketed minimum with `refine_steps`
    /// golden-section evaluations.
    BacktrackingRotation {
        initial_angle: f64,
        refine_steps: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    /// Absolute tolerance on the ray parameter `α` (directions are unit length,
    /// so this is a Euclidean distance).
    pub bisection_tolerance: f64,
    /// Finite-difference step applied to one coordinate of the unit direction.
    pub probe_step: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
    /// Stop when an iteration lowers the distortion by less than this
    /// relative amount.
    pub improvement_tolerance: f64,
    /// Cap on geometric bracket expansions.
    pub max_doublings: u32,
    pub start: StartStrategy,
    /// Peak value used for PSNR reporting.
    pub peak: f64,
    pub rng: RngConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            bisection_tolerance: 1e-6,
            probe_step: 1e-5,
            max_iterations: 10,
            step_rule: StepRule::BacktrackingRotation {
                initial_angle: std::f64::consts::FRAC_PI_4,
                refine_steps: 40,
            },
            improvement_tolerance: 1e-4,
            max_doublings: 64,
            start: StartStrategy::RandomDirection,
            peak: 255.0,
            rng: RngConfig::new(0, crate::rng::streams::ATTACK),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.bisection_tolerance) || !positive(self.probe_step) {
            return Err(Error::InvalidParameter(
                "bisection tolerance and probe step must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        let StepRule::BacktrackingRotation { initial_angle, .. } = self.step_rule;
        if !(initial_angle > 0.0 && initial_angle < FRAC_PI_2) {
            return Err(Error::InvalidParameter(
                "initial rotation angle must lie in (0, pi/2)".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub distortion: f64,
    pub queries: u64,
}

/// Writes `iteration,distortion,queries` rows.
pub fn write_trace_csv(trace: &[TracePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "distortion", "queries"])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.distortion.to_string(),
            t.queries.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub final_signal: Signal,
    pub queries_used: u64,
    /// The oracle's last observed answer at `final_signal` was "absent".
    pub removed: bool,
    /// `||final_signal - x̃||²`.
    pub distortion: f64,
    /// PSNR of `final_signal` against the attacked input `x̃`.
    pub psnr_to_original: Psnr,
    /// Descent iterations that lowered the distortion.
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
}

fn unit(v: Vec<f64>) -> Option<Signal> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite())
        .then(|| Signal::from_vec_unchecked(v.into_iter().map(|x| x / norm).collect()))
}

fn ray_point(origin: &Signal, direction: &[f64], alpha: f64) -> Result<Signal> {
    Signal::new(
        origin
            .iter()
            .zip(direction)
            .map(|(o, d)| o + alpha * d)
            .collect(),
    )
}

/// Bisection along `origin + α·direction` for an origin known to be
/// detected. Returns the smallest probed `α` on the absent side once the
/// bracket is narrower than the tolerance.
fn map_to_boundary<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    origin: &Signal,
    direction: &[f64],
    hint: Option<(f64, f64)>,
    tolerance: f64,
    cfg: &AttackConfig,
) -> Result<(f64, Signal)> {
    let present = |alpha: f64, s: &mut OracleSession<O>| -> Result<(bool, Signal)> {
        let p = ray_point(origin, direction, alpha)?;
        Ok((s.query(&p)?, p))
    };

    let (mut lo, mut hi, mut hi_point);
    match hint {
        None => {
            lo = 0.0;
            hi = 1.0;
            let mut doublings = 0;
            loop {
                let (det, p) = present(hi, session)?;
                if !det {
                    hi_point = p;
                    break;
                }
                lo = hi;
                hi *= 2.0;
                doublings += 1;
                if doublings > cfg.max_doublings {
                    return Err(Error::NotBracketed { dimension: None });
                }
            }
        }
        Some((center, radius)) => {
            let (det, p) = present(center, session)?;
            let mut r = radius.max(tolerance);
            let mut doublings = 0;
            if det {
                lo = center;
                loop {
                    hi = center + r;
                    let (det, p) = present(hi, session)?;
                    if !det {
                        hi_point = p;
                        break;
                    }
                    lo = hi;
                    r *= 2.0;
                    doublings += 1;
                    if doublings > cfg.max_doublings {
                        return Err(Error::NotBracketed { dimension: None });
                    }
                }
            } else {
                hi = center;
                hi_point = p;
                loop {
                    let candidate = center - r;
                    if candidate <= 0.0 {
                        lo = 0.0;
                        break;
                    }
                    let (det, p) = present(candidate, session)?;
                    if det {
                        lo = candidate;
                        break;
                    }
                    hi = candidate;
                    hi_point = p;
                    r *= 2.0;
                    doublings += 1;
                    if doublings > cfg.max_doublings {
                        return Err(Error::NotBracketed { dimension: None });
                    }
                }
            }
        }
    }

    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (det, p) = present(mid, session)?;
        if det {
            lo = mid;
        } else {
            hi = mid;
            hi_point = p;
        }
    }
    Ok((hi, hi_point))
}

/// Finds `α` where `origin + α·direction` crosses the detection boundary.
///
/// The origin is queried first; if it is already undetected the result is
/// `α = 0`. Otherwise `α` doubles from 1 until the answer flips and the
/// bracket is bisected down to the tolerance. The returned point lies on
/// the absent side.
pub fn locate_boundary<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    origin: &Signal,
    direction: &Signal,
    cfg: &AttackConfig,
) -> Result<(f64, Signal)> {
    origin.check_dim(direction)?;
    if direction.iter().all(|&d| d == 0.0) {
        return Err(Error::InvalidParameter("direction must be nonzero".into()));
    }
    if !session.query(origin)? {
        return Ok((0.0, origin.clone()));
    }
    map_to_boundary(
        session,
        origin,
        direction.as_slice(),
        None,
        cfg.bisection_tolerance,
        cfg,
    )
}

/// State of the descent: a unit direction and its boundary distance.
struct Position {
    direction: Signal,
    alpha: f64,
    point: Signal,
}

impl Position {
    fn distortion(&self) -> f64 {
        self.alpha * self.alpha
    }
}

fn probe_gradient<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    origin: &Signal,
    pos: &Position,
    cfg: &AttackConfig,
) -> Result<Signal> {
    let h = cfg.probe_step;
    // Differences of D are divided by h, so probes (and the base point) are
    // resolved well below the expected change in α.
    let tolerance = cfg.bisection_tolerance.min(1e-4 * pos.alpha * h);
    let (alpha, _) = map_to_boundary(
        session,
        origin,
        pos.direction.as_slice(),
        Some((pos.alpha, cfg.bisection_tolerance)),
        tolerance,
        cfg,
    )?;
    let base = alpha * alpha;
    let radius = 2.0 * alpha * h + 4.0 * tolerance;
    let mut probe = pos.direction.as_slice().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let saved = probe[i];
        probe[i] = saved + h;
        let norm_sq: f64 = probe.iter().map(|x| x * x).sum();
        let (alpha, _) = map_to_boundary(
            session,
            origin,
            &probe,
            Some((alpha, radius)),
            tolerance,
            cfg,
        )
        .map_err(|e| match e {
            Error::NotBracketed { .. } => Error::NotBracketed { dimension: Some(i) },
            other => other,
        })?;
        grad.push((alpha * alpha * norm_sq - base) / h);
        probe[i] = saved;
    }
    Signal::new(grad)
}

/// Finite-difference gradient of the boundary distortion `d(h(t))` with
/// respect to the unit direction `t = (boundary_point - origin) / ||·||`.
///
/// Each coordinate of `t` is perturbed by `probe_step` and the perturbed
/// ray is re-mapped to the boundary with a bracket warm-started at the
/// current `α`, so the cost is about `N·log2(bracket/tolerance)` queries.
pub fn estimate_gradient<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    boundary_point: &Signal,
    origin: &Signal,
    cfg: &AttackConfig,
) -> Result<Signal> {
    boundary_point.check_dim(origin)?;
    let offset: Vec<f64> = boundary_point
        .iter()
        .zip(origin.iter())
        .map(|(b, o)| b - o)
        .collect();
    let alpha = offset.iter().map(|x| x * x).sum::<f64>().sqrt();
    let direction = unit(offset)
        .ok_or_else(|| Error::InvalidParameter("boundary point equals origin".into()))?;
    let pos = Position {
        direction,
        alpha,
        point: boundary_point.clone(),
    };
    probe_gradient(session, origin, &pos, cfg)
}

/// Rotates `t` by `angle` towards `-ĝ` and maps the result to the boundary.
/// Unbracketed candidates report infinite distortion.
fn rotated_position<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    origin: &Signal,
    from: &Position,
    descent: &[f64],
    angle: f64,
    cfg: &AttackConfig,
) -> Result<Option<Position>> {
    let (c, s) = (angle.cos(), angle.sin());
    let Some(direction) = unit(
        from.direction
            .iter()
            .zip(descent)
            .map(|(t, d)| c * t + s * d)
            .collect(),
    ) else {
        return Ok(None);
    };
    let hint = Some((from.alpha, 0.5 * from.alpha));
    match map_to_boundary(
        session,
        origin,
        direction.as_slice(),
        hint,
        cfg.bisection_tolerance,
        cfg,
    ) {
        Ok((alpha, point)) => Ok(Some(Position {
            direction,
            alpha,
            point,
        })),
        Err(Error::NotBracketed { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn cost(p: &Option<Position>) -> f64 {
    p.as_ref().map_or(f64::INFINITY, Position::distortion)
}

/// One descent step along the rotation towards `-gradient`. Returns the
/// best position found, or `None` if no tried angle improved.
fn descend<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    origin: &Signal,
    pos: &Position,
    gradient: &Signal,
    cfg: &AttackConfig,
) -> Result<Option<Position>> {
    let StepRule::BacktrackingRotation {
        initial_angle,
        refine_steps,
    } = cfg.step_rule;
    // Remove the component along t (zero in exact arithmetic) and normalize.
    let along = crate::signal::dot(gradient.as_slice(), pos.direction.as_slice());
    let Some(descent) = unit(
        gradient
            .iter()
            .zip(pos.direction.iter())
            .map(|(g, t)| -(g - along * t))
            .collect(),
    ) else {
        return Ok(None);
    };
    let descent = descent.into_vec();
    let base = pos.distortion();
    let eval = |angle: f64, s: &mut OracleSession<O>| {
        rotated_position(s, origin, pos, &descent, angle, cfg)
    };

    // Backtracking: halve until the distortion drops.
    let mut angle = initial_angle;
    let mut current = eval(angle, session)?;
    let mut upper = FRAC_PI_2;
    while cost(&current) >= base {
        upper = angle;
        angle *= 0.5;
        if angle < 1e-12 {
            return Ok(None);
        }
        current = eval(angle, session)?;
    }
    // Expansion: move halfway to the current upper angle while improving.
    let mut lower = 0.0;
    loop {
        let next = 0.5 * (angle + upper);
        if upper - angle < 1e-12 {
            break;
        }
        let candidate = eval(next, session)?;
        if cost(&candidate) < cost(&current) {
            lower = angle;
            angle = next;
            current = candidate;
        } else {
            upper = next;
            break;
        }
    }

    // Golden-section refinement on [lower, upper] around `angle`.
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lower, upper);
    let mut best = current;
    for _ in 0..refine_steps {
        if b - a < 1e-14 {
            break;
        }
        let x1 = b - INV_PHI * (b - a);
        let x2 = a + INV_PHI * (b - a);
        // Evaluate whichever golden point is farther from the incumbent.
        let probe_at = if (x1 - angle).abs() > (x2 - angle).abs() {
            x1
        } else {
            x2
        };
        let candidate = eval(probe_at, session)?;
        if cost(&candidate) < cost(&best) {
            if probe_at < angle {
                b = angle;
            } else {
                a = angle;
            }
            angle = probe_at;
            best = candidate;
        } else if probe_at < angle {
            a = probe_at;
        } else {
            b = probe_at;
        }
    }
    Ok(best)
}

/// Gray-prefix start: sets pixels `0..k` to mid-gray for the smallest `k`
/// at which the oracle stops detecting the watermark.
pub fn gray_start<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    marked: &Signal,
) -> Result<Signal> {
    let mut current = marked.clone().into_vec();
    let mut candidate = marked.clone();
    if !session.query(&candidate)? {
        return Ok(candidate);
    }
    for k in 0..current.len() {
        current[k] = MID_GRAY;
        candidate = Signal::from_vec_unchecked(current.clone());
        if !session.query(&candidate)? {
            return Ok(candidate);
        }
    }
    Err(Error::GrayStartFailed)
}

/// Blind Newton Sensitivity Attack: drives a detected signal to the
/// closest undetected point it can find using binary answers only.
pub fn bnsa<O: Oracle<Answer = bool>>(
    session: &mut OracleSession<O>,
    marked: &Signal,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let start_count = session.query_count();
    let finish = |session: &OracleSession<O>,
                  final_signal: Signal,
                  removed: bool,
                  iterations: usize,
                  trace: Vec<TracePoint>|
     -> Result<AttackResult> {
        let distortion = squared_distance(final_signal.as_slice(), marked.as_slice());
        Ok(AttackResult {
            psnr_to_original: psnr(marked, &final_signal, cfg.peak)?,
            final_signal,
            queries_used: session.query_count() - start_count,
            removed,
            distortion,
            iterations,
            trace,
        })
    };

    session.set_phase(QueryPhase::Locate);
    if !session.query(marked)? {
        return finish(session, marked.clone(), true, 0, Vec::new());
    }

    let start = match cfg.start {
        StartStrategy::RandomDirection => {
            let mut rng = cfg.rng.rng();
            let raw: Vec<f64> = (0..marked.dim())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let direction = unit(raw).ok_or(Error::EmptySignal)?;
            let flipped = direction.scale(-1.0)?;
            let mut found = None;
            for d in [direction, flipped] {
                match map_to_boundary(
                    session,
                    marked,
                    d.as_slice(),
                    None,
                    cfg.bisection_tolerance,
                    cfg,
                ) {
                    Ok((alpha, point)) => {
                        found = Some(Position {
                            direction: d,
                            alpha,
                            point,
                        });
                        break;
                    }
                    Err(Error::NotBracketed { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            found
        }
        StartStrategy::GrayPrefix => {
            let gray = gray_start(session, marked)?;
            let offset = gray.sub(marked)?;
            let length = offset.norm();
            match unit(offset.into_vec()) {
                Some(direction) => {
                    let (alpha, point) = map_to_boundary(
                        session,
                        marked,
                        direction.as_slice(),
                        Some((length, 0.5 * length)),
                        cfg.bisection_tolerance,
                        cfg,
                    )?;
                    Some(Position {
                        direction,
                        alpha,
                        point,
                    })
                }
                None => None,
            }
        }
    };
    let Some(mut pos) = start else {
        return finish(session, marked.clone(), false, 0, Vec::new());
    };

    let mut trace = vec![TracePoint {
        iteration: 0,
        distortion: pos.distortion(),
        queries: session.query_count() - start_count,
    }];
    let mut improving = 0;
    for iteration in 1..=cfg.max_iterations {
        session.set_phase(QueryPhase::Gradient);
        let gradient = match probe_gradient(session, marked, &pos, cfg) {
            Ok(g) => g,
            Err(Error::NotBracketed { .. }) => break,
            Err(e) => return Err(e),
        };
        session.set_phase(QueryPhase::Descent);
        let step = descend(session, marked, &pos, &gradient, cfg)?;
        let improved = match step {
            Some(next) if next.distortion() < pos.distortion() => {
                let relative = (pos.distortion() - next.distortion()) / pos.distortion();
                pos = next;
                relative >= cfg.improvement_tolerance
            }
            _ => false,
        };
        trace.push(TracePoint {
            iteration,
            distortion: pos.distortion(),
            queries: session.query_count() - start_count,
        });
        if !improved {
            break;
        }
        improving += 1;
    }
    session.set_phase(QueryPhase::Unspecified);
    finish(session, pos.point, true, improving, trace)
}
