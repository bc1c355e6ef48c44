//! Head-movement traces: representation, windowing, resampling,
//! head-orientation maps, and trace error metrics.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    self, equirect_project, to_spherical, wrap_angle_deg, Frame, Vec3,
};

/// Orientation vectors are accepted as unit within this tolerance.
pub const SAMPLE_UNIT_TOLERANCE: f64 = 1e-6;

/// One timestamped head orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Milliseconds since playback start.
    pub t_ms: i64,
    pub v: Vec3,
}

/// Timestamped head orientations for one viewing session.
///
/// Invariants, enforced at construction: at least one sample, timestamps
/// strictly increasing and nonnegative, all orientations unit within
/// [`SAMPLE_UNIT_TOLERANCE`], and a single coordinate frame for the whole
/// trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMovementTrace {
    session_id: String,
    frame: Frame,
    samples: Vec<TraceSample>,
}

impl HeadMovementTrace {
    pub fn new(
        session_id: impl Into<String>,
        frame: Frame,
        samples: Vec<TraceSample>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trace must contain at least one sample"));
        }
        if samples[0].t_ms < 0 {
            return Err(Error::invalid(format!(
                "first timestamp {} is negative",
                samples[0].t_ms
            )));
        }
        for pair in samples.windows(2) {
            if pair[1].t_ms <= pair[0].t_ms {
                return Err(Error::invalid(format!(
                    "timestamps not strictly increasing at t={}..{}",
                    pair[0].t_ms, pair[1].t_ms
                )));
            }
        }
        for s in &samples {
            if !s.v.is_unit(SAMPLE_UNIT_TOLERANCE) {
                return Err(Error::invalid(format!(
                    "orientation at t={} has norm {}, expected unit",
                    s.t_ms,
                    s.v.norm()
                )));
            }
        }
        Ok(HeadMovementTrace {
            session_id: session_id.into(),
            frame,
            samples,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Timestamp of the last sample, in milliseconds.
    pub fn duration_ms(&self) -> i64 {
        self.samples.last().expect("trace is nonempty").t_ms
    }

    /// Keep samples with `t0_ms <= t < t0_ms + 1000 * duration_s`, rebased
    /// so the window start becomes time zero.
    pub fn window(&self, t0_ms: i64, duration_s: f64) -> Result<HeadMovementTrace> {
        if duration_s <= 0.0 {
            return Err(Error::invalid(format!(
                "window duration must be positive, got {duration_s}"
            )));
        }
        let end = t0_ms as f64 + 1000.0 * duration_s;
        let kept: Vec<TraceSample> = self
            .samples
            .iter()
            .filter(|s| s.t_ms >= t0_ms && (s.t_ms as f64) < end)
            .map(|s| TraceSample {
                t_ms: s.t_ms - t0_ms,
                v: s.v,
            })
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyWindow { t0_ms, duration_s });
        }
        HeadMovementTrace::new(self.session_id.clone(), self.frame, kept)
    }

    /// Resample onto the uniform grid t = 0, period, 2*period, ... up to the
    /// last timestamp, interpolating between neighbors along great circles.
    /// Grid points outside the sampled range clamp to the nearest endpoint.
    pub fn resample(&self, period_ms: i64) -> Result<HeadMovementTrace> {
        if period_ms < 1 {
            return Err(Error::invalid(format!(
                "resample period must be at least 1 ms, got {period_ms}"
            )));
        }
        if self.samples.len() < 2 {
            return Err(Error::InsufficientData(
                "resampling needs at least two samples".into(),
            ));
        }
        let last = self.duration_ms();
        let mut out = Vec::with_capacity((last / period_ms + 1) as usize);
        let mut t = 0;
        while t <= last {
            out.push(TraceSample {
                t_ms: t,
                v: self.interpolate_at(t),
            });
            t += period_ms;
        }
        HeadMovementTrace::new(self.session_id.clone(), self.frame, out)
    }

    fn interpolate_at(&self, t_ms: i64) -> Vec3 {
        let samples = &self.samples;
        if t_ms <= samples[0].t_ms {
            return samples[0].v;
        }
        if t_ms >= samples[samples.len() - 1].t_ms {
            return samples[samples.len() - 1].v;
        }
        let idx = match samples.binary_search_by_key(&t_ms, |s| s.t_ms) {
            Ok(i) => return samples[i].v,
            Err(i) => i,
        };
        let (lo, hi) = (&samples[idx - 1], &samples[idx]);
        let u = (t_ms - lo.t_ms) as f64 / (hi.t_ms - lo.t_ms) as f64;
        slerp(lo.v, hi.v, u)
    }

    /// Pick the nearest sample at each grid time t = 0, tau, 2*tau, ... up
    /// to the trace duration. Grid times exactly halfway between two samples
    /// resolve to the earlier one. Grid steps smaller than the sample period
    /// intentionally repeat samples.
    pub fn sample_at_interval(&self, tau_s: f64) -> Result<SampledTrace> {
        if tau_s <= 0.0 {
            return Err(Error::invalid(format!(
                "sampling interval must be positive, got {tau_s}"
            )));
        }
        let last = self.duration_ms() as f64;
        let mut picked = Vec::new();
        let mut k: u64 = 0;
        loop {
            let t_grid = k as f64 * tau_s * 1000.0;
            // Tiny slack so grid points that should land exactly on the
            // final sample survive float rounding of k * tau.
            if t_grid > last + 1e-6 {
                break;
            }
            let s = self.nearest_sample(t_grid);
            picked.push((s.t_ms, s.v));
            k += 1;
        }
        Ok(SampledTrace {
            frame: self.frame,
            samples: picked,
        })
    }

    fn nearest_sample(&self, t: f64) -> &TraceSample {
        let samples = &self.samples;
        let idx = samples.partition_point(|s| (s.t_ms as f64) < t);
        if idx == 0 {
            return &samples[0];
        }
        if idx == samples.len() {
            return &samples[samples.len() - 1];
        }
        let before = &samples[idx - 1];
        let after = &samples[idx];
        let d_before = t - before.t_ms as f64;
        let d_after = after.t_ms as f64 - t;
        // Ties go to the earlier sample.
        if d_before <= d_after {
            before
        } else {
            after
        }
    }

    /// Convert a camera-based trace to the VR frame using the offset angle
    /// of its first sample. Returns the converted trace and the offset
    /// angle in degrees.
    pub fn convert_to_vr(&self) -> Result<(HeadMovementTrace, f64)> {
        if self.frame != Frame::CameraBased {
            return Err(Error::FrameMismatch {
                expected: Frame::CameraBased.to_string(),
                actual: self.frame.to_string(),
            });
        }
        let a1 = geometry::offset_angle(self.samples[0].v)?;
        let converted = self
            .samples
            .iter()
            .map(|s| TraceSample {
                t_ms: s.t_ms,
                v: geometry::camera_to_vr(s.v, a1),
            })
            .collect();
        Ok((
            HeadMovementTrace::new(self.session_id.clone(), Frame::Vr, converted)?,
            a1,
        ))
    }

    /// Apply `f` to every orientation, keeping timestamps, and retag the
    /// trace with `frame`.
    pub(crate) fn map_orientations(
        &self,
        frame: Frame,
        mut f: impl FnMut(i64, Vec3) -> Vec3,
    ) -> Result<HeadMovementTrace> {
        let samples = self
            .samples
            .iter()
            .map(|s| TraceSample {
                t_ms: s.t_ms,
                v: f(s.t_ms, s.v),
            })
            .collect();
        HeadMovementTrace::new(self.session_id.clone(), frame, samples)
    }
}

/// Output of [`HeadMovementTrace::sample_at_interval`]: the selected
/// samples together with the frame tag they inherit from the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrace {
    pub frame: Frame,
    pub samples: Vec<(i64, Vec3)>,
}

/// Interpolate between unit vectors along their great circle.
pub fn slerp(a: Vec3, b: Vec3, u: f64) -> Vec3 {
    let dot = a.dot(b).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-9 {
        // Nearly identical: linear blend keeps full precision.
        return (a.scaled(1.0 - u) + b.scaled(u)).normalized().unwrap_or(a);
    }
    if omega > std::f64::consts::PI - 1e-9 {
        // Antipodal: no unique great circle, rotate around a fixed
        // orthogonal axis.
        let axis = a.any_orthogonal();
        return geometry::make_quaternion(axis, u * 180.0)
            .expect("orthogonal axis is unit")
            .rotate(a);
    }
    let sin_omega = omega.sin();
    let wa = ((1.0 - u) * omega).sin() / sin_omega;
    let wb = (u * omega).sin() / sin_omega;
    a.scaled(wa) + b.scaled(wb)
}

/// One head orientation splatted onto a W x H equirectangular grid.
/// Cell mass always sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOrientationMap {
    pub width: usize,
    pub height: usize,
    pub t_ms: i64,
    /// Row-major cells, `cells[row * width + col]`.
    pub cells: Vec<f64>,
}

impl HeadOrientationMap {
    pub fn cell(&self, col: usize, row: usize) -> f64 {
        self.cells[row * self.width + col]
    }
}

/// Build one head-orientation map per sample: a unit-mass Gaussian splat
/// of scale `splat_sigma_px` centered at the sample's equirectangular
/// projection. The splat wraps across the w = 0 seam (the grid is a
/// cylinder in w) and truncates at the h bounds. `splat_sigma_px == 0`
/// puts the whole mass in the cell containing the projection.
pub fn orientation_maps(
    samples: &SampledTrace,
    width: usize,
    height: usize,
    splat_sigma_px: f64,
) -> Result<Vec<HeadOrientationMap>> {
    if samples.frame != Frame::Vr {
        return Err(Error::FrameMismatch {
            expected: Frame::Vr.to_string(),
            actual: samples.frame.to_string(),
        });
    }
    if splat_sigma_px < 0.0 {
        return Err(Error::invalid("splat sigma must be nonnegative"));
    }
    samples
        .samples
        .iter()
        .map(|&(t_ms, v)| {
            let p = equirect_project(to_spherical(v), width, height)?;
            let mut cells = vec![0.0; width * height];
            if splat_sigma_px == 0.0 {
                let col = (p.w.floor() as usize).min(width - 1) % width;
                let row = (p.h.floor() as usize).min(height - 1);
                cells[row * width + col] = 1.0;
            } else {
                let inv_two_sigma_sq = 1.0 / (2.0 * splat_sigma_px * splat_sigma_px);
                let mut total = 0.0;
                for row in 0..height {
                    let dh = (row as f64 + 0.5) - p.h;
                    for col in 0..width {
                        let mut dw = ((col as f64 + 0.5) - p.w).abs() % width as f64;
                        if dw > width as f64 / 2.0 {
                            dw = width as f64 - dw;
                        }
                        let val = (-(dw * dw + dh * dh) * inv_two_sigma_sq).exp();
                        cells[row * width + col] = val;
                        total += val;
                    }
                }
                for c in &mut cells {
                    *c /= total;
                }
            }
            Ok(HeadOrientationMap {
                width,
                height,
                t_ms,
                cells,
            })
        })
        .collect()
}

/// Error metrics between an estimated trace and its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceErrorReport {
    /// Mean absolute azimuth difference in degrees, wrapped into [0, 180].
    pub yaw_mae_deg: f64,
    /// Mean absolute altitude difference in degrees.
    pub pitch_mae_deg: f64,
    /// Mean squared component distance, averaged over the three components.
    pub mse: f64,
}

fn check_aligned(est: &HeadMovementTrace, gt: &HeadMovementTrace) -> Result<()> {
    if est.frame() != gt.frame() {
        return Err(Error::FrameMismatch {
            expected: gt.frame().to_string(),
            actual: est.frame().to_string(),
        });
    }
    if est.len() != gt.len() {
        return Err(Error::AlignmentMismatch(format!(
            "lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    for (a, b) in est.samples().iter().zip(gt.samples()) {
        if a.t_ms != b.t_ms {
            return Err(Error::AlignmentMismatch(format!(
                "timestamps differ: {} vs {}",
                a.t_ms, b.t_ms
            )));
        }
    }
    Ok(())
}

/// Mean squared distance between aligned traces, averaged over samples and
/// over the three vector components.
pub fn trace_mse(est: &HeadMovementTrace, gt: &HeadMovementTrace) -> Result<f64> {
    check_aligned(est, gt)?;
    let sum: f64 = est
        .samples()
        .iter()
        .zip(gt.samples())
        .map(|(a, b)| {
            let d = a.v - b.v;
            (d.x * d.x + d.y * d.y + d.z * d.z) / 3.0
        })
        .sum();
    Ok(sum / est.len() as f64)
}

/// Yaw/pitch mean absolute errors plus the component MSE.
///
/// Azimuth differences wrap across the 0/360 seam so that 359 vs 1 degree
/// counts as 2 degrees; pole samples use the canonical azimuth 0.
pub fn trace_mae(est: &HeadMovementTrace, gt: &HeadMovementTrace) -> Result<TraceErrorReport> {
    check_aligned(est, gt)?;
    let mut yaw_sum = 0.0;
    let mut pitch_sum = 0.0;
    for (a, b) in est.samples().iter().zip(gt.samples()) {
        let sa = to_spherical(a.v);
        let sb = to_spherical(b.v);
        yaw_sum += wrap_angle_deg(sa.azimuth_deg - sb.azimuth_deg).abs();
        pitch_sum += (sa.altitude_deg - sb.altitude_deg).abs();
    }
    let n = est.len() as f64;
    Ok(TraceErrorReport {
        yaw_mae_deg: yaw_sum / n,
        pitch_mae_deg: pitch_sum / n,
        mse: trace_mse(est, gt)?,
    })
}

/// CSV header for the on-disk trace format.
pub const TRACE_CSV_HEADER: &str = "t_ms,x,y,z,frame";

/// Serialize a trace to the CSV format: header `t_ms,x,y,z,frame`, one
/// sample per row, LF line endings.
pub fn trace_to_csv(trace: &HeadMovementTrace) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    let tag = trace.frame().token();
    for s in trace.samples() {
        out.push_str(&format!("{},{},{},{},{}\n", s.t_ms, s.v.x, s.v.y, s.v.z, tag));
    }
    out
}

/// Parse a trace from CSV text. Rejects malformed headers, mixed frame
/// tags, non-unit orientations (beyond 1e-6), and unsorted timestamps.
pub fn trace_from_csv(text: &str, session_id: &str) -> Result<HeadMovementTrace> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == TRACE_CSV_HEADER => {}
        other => {
            return Err(Error::invalid(format!(
                "bad trace CSV header: {other:?}, expected {TRACE_CSV_HEADER:?}"
            )))
        }
    }
    let mut frame: Option<Frame> = None;
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::invalid(format!(
                "line {}: expected 5 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::invalid(format!("line {}: bad {name} value {s:?}", lineno + 2))
            })
        };
        let t_ms: i64 = fields[0].parse().map_err(|_| {
            Error::invalid(format!("line {}: bad t_ms value {:?}", lineno + 2, fields[0]))
        })?;
        let v = Vec3::new(
            parse_f(fields[1], "x")?,
            parse_f(fields[2], "y")?,
            parse_f(fields[3], "z")?,
        );
        let row_frame = Frame::parse_token(fields[4])?;
        match frame {
            None => frame = Some(row_frame),
            Some(f) if f == row_frame => {}
            Some(f) => {
                return Err(Error::invalid(format!(
                    "line {}: frame {row_frame} conflicts with earlier {f}",
                    lineno + 2
                )))
            }
        }
        samples.push(TraceSample { t_ms, v });
    }
    let frame = frame.ok_or_else(|| Error::invalid("trace CSV contains no samples"))?;
    HeadMovementTrace::new(session_id, frame, samples)
}

/// Write a trace to `path` in the CSV format.
pub fn write_trace_csv(trace: &HeadMovementTrace, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(trace_to_csv(trace).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Read a trace from `path`; the session id is the file stem.
pub fn read_trace_csv(path: &Path) -> Result<HeadMovementTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let session_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".to_string());
    trace_from_csv(&text, &session_id).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::format(path, msg),
        other => other,
    })
}
