//! Victim trace synthesis and the error channels applied to it: per-sample
//! estimation noise in spherical coordinates and a linear yaw drift of the
//! VR frame, with drift fitting and removal.
//!
//! Everything here is seed-deterministic: the same fingerprint, parameters,
//! and seed produce a bit-identical trace.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{normalize_saliency, SaliencyMap, VideoFingerprint};
use crate::geometry::{
    from_spherical, make_quaternion, step_toward, to_spherical, wrap_angle_deg, Frame,
    SphericalAngles, Vec3, VERTICAL_AXIS,
};
use crate::trace::{HeadMovementTrace, TraceSample};

/// Behavioral parameters of the simulated viewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimParams {
    /// Probability per second of re-drawing the attention target from the
    /// current saliency map.
    pub switch_prob_per_s: f64,
    /// Angular speed limit of the head, degrees per second.
    pub max_speed_deg_s: f64,
    /// Scale of the isotropic per-sample angular jitter, degrees.
    pub jitter_sigma_deg: f64,
    /// Spacing of the generated samples, milliseconds.
    pub sample_period_ms: i64,
    #[serde(default)]
    pub seed: u64,
}

impl VictimParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.switch_prob_per_s) {
            return Err(Error::invalid(format!(
                "switch probability must be in [0, 1], got {}",
                self.switch_prob_per_s
            )));
        }
        if self.max_speed_deg_s <= 0.0 {
            return Err(Error::invalid("max speed must be positive"));
        }
        if self.jitter_sigma_deg < 0.0 {
            return Err(Error::invalid("jitter sigma must be nonnegative"));
        }
        if self.sample_period_ms < 1 {
            return Err(Error::invalid("sample period must be at least 1 ms"));
        }
        Ok(())
    }
}

/// Parameters of the estimation-error channel: per-sample Gaussian noise on
/// azimuth and altitude plus a linear yaw drift of the VR frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub yaw_sigma_deg: f64,
    pub pitch_sigma_deg: f64,
    pub drift_rate_deg_s: f64,
    pub drift_offset_deg: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn drift_model(&self) -> DriftModel {
        DriftModel {
            theta_deg_per_s: self.drift_rate_deg_s,
            theta0_deg: self.drift_offset_deg,
        }
    }
}

/// Linear yaw-drift model: the VR frame rotates about the vertical axis by
/// `theta * t + theta0` degrees at time t seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub theta_deg_per_s: f64,
    pub theta0_deg: f64,
}

impl DriftModel {
    pub fn yaw_drift_deg(&self, t_s: f64) -> f64 {
        self.theta_deg_per_s * t_s + self.theta0_deg
    }

    pub fn negated(&self) -> DriftModel {
        DriftModel {
            theta_deg_per_s: -self.theta_deg_per_s,
            theta0_deg: -self.theta0_deg,
        }
    }
}

/// Draw a cell index proportionally to the mass of a normalized map and
/// return that cell's center direction.
fn sample_target(map: &SaliencyMap, rng: &mut ChaCha8Rng) -> Vec3 {
    let u: f64 = rng.random::<f64>() * map.sum();
    let mut acc = 0.0;
    let mut chosen = map.cells().len() - 1;
    for (i, &c) in map.cells().iter().enumerate() {
        acc += c;
        if u < acc {
            chosen = i;
            break;
        }
    }
    map.cell_direction(chosen % map.width(), chosen / map.width())
}

/// Tilt `v` by an isotropic tangent-plane Gaussian (two independent draws
/// from `normal`, one per tangent direction).
fn jitter(v: Vec3, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec3 {
    let g1 = normal.sample(rng);
    let g2 = normal.sample(rng);
    let tilt = (g1 * g1 + g2 * g2).sqrt();
    if tilt == 0.0 {
        return v;
    }
    let e1 = v.any_orthogonal();
    let e2 = v.cross(e1);
    let beta = g2.atan2(g1);
    let axis = e1.scaled(beta.cos()) + e2.scaled(beta.sin());
    make_quaternion(axis, tilt)
        .expect("tangent axis is unit")
        .rotate(v)
}

/// Synthesize a ground-truth victim trace in the VR frame.
///
/// The viewer starts at the argmax direction of the first saliency map (the
/// VR frame is reset there at playback start), holds an attention target
/// drawn from the current normalized map, re-draws it with per-step
/// probability `1 - (1 - switch_prob_per_s)^dt`, and pursues it along the
/// great circle at up to `max_speed_deg_s`. Jitter perturbs the emitted
/// samples only, so the pursuit itself stays smooth. One sample is emitted
/// every `sample_period_ms` over the fingerprint duration.
pub fn simulate_victim(fp: &VideoFingerprint, params: &VictimParams) -> Result<HeadMovementTrace> {
    params.validate()?;
    let normalized: Vec<SaliencyMap> = fp
        .maps()
        .iter()
        .map(normalize_saliency)
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.jitter_sigma_deg)
        .map_err(|_| Error::invalid("jitter sigma must be finite"))?;

    let dt_s = params.sample_period_ms as f64 / 1000.0;
    let step_deg = params.max_speed_deg_s * dt_s;
    let switch_prob = 1.0 - (1.0 - params.switch_prob_per_s).powf(dt_s);

    let (col, row) = normalized[0].argmax();
    let mut position = normalized[0].cell_direction(col, row);
    let mut target = position;

    let mut samples = Vec::new();
    let mut t_ms: i64 = 0;
    while t_ms <= fp.duration_ms() {
        if t_ms > 0 {
            let map = &normalized[fp.nearest_map_index(t_ms)];
            if rng.random::<f64>() < switch_prob {
                target = sample_target(map, &mut rng);
            }
            position = step_toward(position, target, step_deg);
        }
        let emitted = if t_ms > 0 && params.jitter_sigma_deg > 0.0 {
            jitter(position, &normal, &mut rng)
        } else {
            position
        };
        samples.push(TraceSample {
            t_ms,
            v: emitted
                .normalized()
                .expect("rotations of unit vectors stay unit"),
        });
        t_ms += params.sample_period_ms;
    }
    HeadMovementTrace::new(
        format!("victim_{:016x}", params.seed),
        Frame::Vr,
        samples,
    )
}

/// Perturb each sample with independent zero-mean Gaussian noise on azimuth
/// (`yaw_sigma_deg`) and altitude (`pitch_sigma_deg`), clamping altitude to
/// [-90, 90] and renormalizing to unit. Drift fields of the spec are not
/// applied here; see [`inject_yaw_drift`].
pub fn inject_estimation_noise(trace: &HeadMovementTrace, spec: &NoiseSpec) -> HeadMovementTrace {
    if spec.yaw_sigma_deg == 0.0 && spec.pitch_sigma_deg == 0.0 {
        return trace.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let yaw = Normal::new(0.0, spec.yaw_sigma_deg).expect("sigma validated");
    let pitch = Normal::new(0.0, spec.pitch_sigma_deg).expect("sigma validated");
    trace
        .map_orientations(trace.frame(), |_, v| {
            let s = to_spherical(v);
            let azimuth_deg = s.azimuth_deg + yaw.sample(&mut rng);
            let altitude_deg = (s.altitude_deg + pitch.sample(&mut rng)).clamp(-90.0, 90.0);
            from_spherical(SphericalAngles {
                azimuth_deg,
                altitude_deg,
            })
        })
        .expect("spherical reconstruction is unit")
}

/// Rotate the sample at time t about the vertical axis by the model's
/// drift angle, emulating gyroscope yaw drift of the VR frame.
pub fn inject_yaw_drift(trace: &HeadMovementTrace, model: &DriftModel) -> HeadMovementTrace {
    trace
        .map_orientations(trace.frame(), |t_ms, v| {
            let q = make_quaternion(VERTICAL_AXIS, model.yaw_drift_deg(t_ms as f64 / 1000.0))
                .expect("vertical axis is nonzero");
            q.rotate(v)
        })
        .expect("rotation preserves unit norm")
}

/// Undo a yaw drift by applying the negated model; exact inverse of
/// [`inject_yaw_drift`] with the same model.
pub fn remove_yaw_drift(trace: &HeadMovementTrace, model: &DriftModel) -> HeadMovementTrace {
    inject_yaw_drift(trace, &model.negated())
}

/// Fit the linear drift model from two anchor observations `(t_s, yaw_deg)`
/// taken at moments of known equal true yaw. The slope uses the wrapped yaw
/// difference; the intercept reproduces anchor A exactly, so drifts whose
/// absolute offset exceeds 180 degrees recover up to a full turn, which is
/// the same rotation.
pub fn fit_yaw_drift(anchor_a: (f64, f64), anchor_b: (f64, f64)) -> Result<DriftModel> {
    let (t_a, yaw_a) = anchor_a;
    let (t_b, yaw_b) = anchor_b;
    if t_a == t_b {
        return Err(Error::invalid("drift anchors need distinct times"));
    }
    let theta = wrap_angle_deg(yaw_b - yaw_a) / (t_b - t_a);
    Ok(DriftModel {
        theta_deg_per_s: theta,
        theta0_deg: yaw_a - theta * t_a,
    })
}

/// Synchronization offset between a key camera frame at `key_frame_time_ms`
/// and the matching log entry at `key_log_time_ms`: adding the offset to
/// every log timestamp aligns the key pair.
pub fn sync_offset(key_frame_time_ms: i64, key_log_time_ms: i64) -> i64 {
    key_frame_time_ms - key_log_time_ms
}

/// Observed yaw difference `est - reference` of two aligned traces at the
/// sample closest to `t_ms`, wrapped into (-180, 180]. This is the anchor
/// measurement for [`fit_yaw_drift`] when the undrifted reference is known.
pub fn yaw_residual_at(
    est: &HeadMovementTrace,
    reference: &HeadMovementTrace,
    index: usize,
) -> (f64, f64) {
    let e = &est.samples()[index];
    let r = &reference.samples()[index];
    let az_e = to_spherical(e.v).azimuth_deg;
    let az_r = to_spherical(r.v).azimuth_deg;
    (e.t_ms as f64 / 1000.0, wrap_angle_deg(az_e - az_r))
}
