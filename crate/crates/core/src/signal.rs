//! Trajectory logs and the preprocessing pipeline: differentiation, lifting to
//! the full joint state, zero-phase low-pass filtering, downsampling.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::constraint::{ik_continuation, lift_state};
use crate::dynamics::JointState;
use crate::error::{Error, Result};
use crate::model::RobotModel;

/// Processing stage of a dataset; each step may run once, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Raw,
    Differentiated,
    Lifted,
    Filtered,
    Downsampled,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Raw => "raw",
            Stage::Differentiated => "differentiated",
            Stage::Lifted => "lifted",
            Stage::Filtered => "filtered",
            Stage::Downsampled => "downsampled",
        };
        f.write_str(s)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "raw" => Stage::Raw,
            "differentiated" => Stage::Differentiated,
            "lifted" => Stage::Lifted,
            "filtered" => Stage::Filtered,
            "downsampled" => Stage::Downsampled,
            other => return Err(Error::Parse(format!("unknown stage '{other}'"))),
        })
    }
}

/// Uniformly sampled actuated measurements with optional derived channels.
/// Every matrix has one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub t: Vec<f64>,
    pub qa: DMatrix<f64>,
    pub qda: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub qdda: Option<DMatrix<f64>>,
    pub q: Option<DMatrix<f64>>,
    pub qd: Option<DMatrix<f64>>,
    pub qdd: Option<DMatrix<f64>>,
    /// Tracking errors on actuated joints (tracking logs only).
    pub ea: Option<DMatrix<f64>>,
    pub stage: Stage,
}

fn expect_stage(ds: &TrajectoryDataset, expected: Stage) -> Result<()> {
    if ds.stage != expected {
        return Err(Error::StageMismatch {
            expected: expected.to_string(),
            found: ds.stage.to_string(),
        });
    }
    Ok(())
}

impl TrajectoryDataset {
    /// A raw dataset; checks shapes and uniform sampling.
    pub fn new_raw(
        t: Vec<f64>,
        qa: DMatrix<f64>,
        qda: DMatrix<f64>,
        u: DMatrix<f64>,
    ) -> Result<Self> {
        let ds = Self {
            t,
            qa,
            qda,
            u,
            qdda: None,
            q: None,
            qd: None,
            qdd: None,
            ea: None,
            stage: Stage::Raw,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_a(&self) -> usize {
        self.qa.ncols()
    }

    /// Sample period (0 for a single sample).
    pub fn dt(&self) -> f64 {
        if self.t.len() < 2 {
            0.0
        } else {
            (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64
        }
    }

    pub fn duration(&self) -> f64 {
        if self.t.is_empty() {
            0.0
        } else {
            self.t[self.t.len() - 1] - self.t[0]
        }
    }

    /// Checks row counts, column agreement and uniform spacing.
    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        let na = self.qa.ncols();
        let check = |m: &DMatrix<f64>, cols: Option<usize>, name: &str| -> Result<()> {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} rows, expected {n}",
                    m.nrows()
                )));
            }
            if let Some(c) = cols {
                if m.ncols() != c {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has {} columns, expected {c}",
                        m.ncols()
                    )));
                }
            }
            Ok(())
        };
        check(&self.qa, None, "qa")?;
        check(&self.qda, Some(na), "qda")?;
        check(&self.u, Some(na), "u")?;
        if let Some(m) = &self.qdda {
            check(m, Some(na), "qdda")?;
        }
        if let Some(m) = &self.ea {
            check(m, Some(na), "ea")?;
        }
        let full = self.q.as_ref().map(|m| m.ncols());
        for (m, name) in [(&self.q, "q"), (&self.qd, "qd"), (&self.qdd, "qdd")] {
            if let Some(m) = m {
                check(m, full, name)?;
            }
        }
        if n >= 2 {
            let dt = self.dt();
            if !(dt > 0.0) {
                return Err(Error::Validation(
                    "time stamps must be strictly increasing".into(),
                ));
            }
            for (i, w) in self.t.windows(2).enumerate() {
                if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt + 1e-12 * w[1].abs() {
                    return Err(Error::Validation(format!(
                        "non-uniform sampling at sample {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Only the measured channels, as a raw dataset.
    pub fn raw_channels(&self) -> TrajectoryDataset {
        TrajectoryDataset {
            t: self.t.clone(),
            qa: self.qa.clone(),
            qda: self.qda.clone(),
            u: self.u.clone(),
            qdda: None,
            q: None,
            qd: None,
            qdd: None,
            ea: None,
            stage: Stage::Raw,
        }
    }

    /// Full joint state of sample `i`; requires lifted channels.
    pub fn state(&self, i: usize) -> Result<JointState> {
        match (&self.q, &self.qd, &self.qdd) {
            (Some(q), Some(qd), Some(qdd)) => Ok(JointState::new(
                q.row(i).transpose(),
                qd.row(i).transpose(),
                qdd.row(i).transpose(),
            )),
            _ => Err(Error::StageMismatch {
                expected: "lifted".into(),
                found: self.stage.to_string(),
            }),
        }
    }

    pub fn is_lifted(&self) -> bool {
        self.q.is_some() && self.qd.is_some() && self.qdd.is_some()
    }

    /// Samples with the given row indices, same stage.
    pub fn select(&self, rows: &[usize]) -> TrajectoryDataset {
        let sel = |m: &DMatrix<f64>| m.select_rows(rows);
        TrajectoryDataset {
            t: rows.iter().map(|&i| self.t[i]).collect(),
            qa: sel(&self.qa),
            qda: sel(&self.qda),
            u: sel(&self.u),
            qdda: self.qdda.as_ref().map(sel),
            q: self.q.as_ref().map(sel),
            qd: self.qd.as_ref().map(sel),
            qdd: self.qdd.as_ref().map(sel),
            ea: self.ea.as_ref().map(sel),
            stage: self.stage,
        }
    }

    /// Contiguous slice `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> TrajectoryDataset {
        self.select(&(start..end).collect::<Vec<_>>())
    }
}

// ---------------------------------------------------------------------------
// Differentiation

/// Fourth-order finite-difference derivative of every column.
pub fn central_diff_4(x: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 5 {
        return Err(Error::InvalidArgument(format!(
            "differentiation needs at least 5 samples, got {n}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let s = 1.0 / (12.0 * dt);
    let mut d = DMatrix::zeros(n, x.ncols());
    for c in 0..x.ncols() {
        let v = x.column(c);
        d[(0, c)] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) * s;
        d[(1, c)] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) * s;
        for i in 2..n - 2 {
            d[(i, c)] = (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) * s;
        }
        let l = n - 1;
        d[(l, c)] = (25.0 * v[l] - 48.0 * v[l - 1] + 36.0 * v[l - 2] - 16.0 * v[l - 3]
            + 3.0 * v[l - 4])
            * s;
        d[(l - 1, c)] =
            (3.0 * v[l] + 10.0 * v[l - 1] - 18.0 * v[l - 2] + 6.0 * v[l - 3] - v[l - 4]) * s;
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Butterworth

/// Order of the low-pass filter.
pub const FILTER_ORDER: usize = 4;
/// Minimum samples of padding added at each end before filtering.
pub const FILTER_PAD: usize = 3 * FILTER_ORDER;
/// Padding length in cutoff periods.
const EDGE_PAD_PERIODS: f64 = 2.0;
/// Window of the edge trend fit, in cutoff periods.
const EDGE_FIT_PERIODS: f64 = 2.0;
const EDGE_FIT_DEGREE: usize = 3;

/// One second-order section `(b0, b1, b2, a1, a2)` with `a0 = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Digital 4th-order Butterworth low-pass by bilinear transform with
/// pre-warping, as two biquads.
pub fn butterworth4_sections(dt: f64, cutoff_hz: f64) -> Result<[Biquad; 2]> {
    let nyq = 0.5 / dt;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyq) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and the Nyquist frequency {nyq} Hz"
        )));
    }
    let k = (PI * cutoff_hz * dt).tan();
    let section = |q: f64| {
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        }
    };
    let q1 = 1.0 / (2.0 * (PI / 8.0).sin());
    let q2 = 1.0 / (2.0 * (3.0 * PI / 8.0).sin());
    Ok([section(q1), section(q2)])
}

/// Squared magnitude response of the single-pass filter at `f_hz`.
pub fn butterworth4_gain_sq(dt: f64, cutoff_hz: f64, f_hz: f64) -> f64 {
    let w = (PI * f_hz * dt).tan() / (PI * cutoff_hz * dt).tan();
    1.0 / (1.0 + w.powi(2 * FILTER_ORDER as i32))
}

fn run_sections(sections: &[Biquad; 2], x: &mut [f64]) {
    for s in sections {
        let x0 = x[0];
        // steady state for a constant input x0 (unit DC gain)
        let mut z1 = (1.0 - s.b[0]) * x0;
        let mut z2 = (s.b[2] - s.a[1]) * x0;
        for v in x.iter_mut() {
            let xi = *v;
            let y = s.b[0] * xi + z1;
            z1 = s.b[1] * xi - s.a[0] * y + z2;
            z2 = s.b[2] * xi - s.a[1] * y;
            *v = y;
        }
    }
}

/// Zero-phase (forward-backward) 4th-order Butterworth low-pass of every
/// column.
///
/// Each end is padded over about two cutoff periods by odd reflection about
/// a least-squares cubic fitted to the same window, so the pad continues
/// the local trend and a noisy end sample does not set the start-up
/// transient.
pub fn butterworth4_zero_phase(x: &DMatrix<f64>, dt: f64, cutoff_hz: f64) -> Result<DMatrix<f64>> {
    let sections = butterworth4_sections(dt, cutoff_hz)?;
    let n = x.nrows();
    if n <= FILTER_PAD {
        return Err(Error::InvalidArgument(format!(
            "filtering needs more than {FILTER_PAD} samples, got {n}"
        )));
    }
    let periods = |p: f64| ((p / (cutoff_hz * dt)).ceil() as usize).clamp(FILTER_PAD, n - 1);
    let pad = periods(EDGE_PAD_PERIODS);
    let window = periods(EDGE_FIT_PERIODS);
    let mut out = DMatrix::zeros(n, x.ncols());
    let mut buf = vec![0.0; n + 2 * pad];
    let mut edge = vec![0.0; pad.max(window) + 1];
    for c in 0..x.ncols() {
        let v = x.column(c);
        for i in 0..n {
            buf[pad + i] = v[i];
        }
        // head, then the tail as a time-reversed head
        for tail in [false, true] {
            for (k, e) in edge.iter_mut().enumerate() {
                *e = if tail { v[n - 1 - k] } else { v[k] };
            }
            let p = poly_fit(&edge[..=window], EDGE_FIT_DEGREE);
            let trend = |k: f64| {
                p.iter()
                    .rev()
                    .fold(0.0, |acc, c| acc * (k / window as f64) + c)
            };
            for k in 1..=pad {
                let kf = k as f64;
                let value = trend(-kf) - (edge[k] - trend(kf));
                if tail {
                    buf[pad + n - 1 + k] = value;
                } else {
                    buf[pad - k] = value;
                }
            }
        }
        run_sections(&sections, &mut buf);
        buf.reverse();
        run_sections(&sections, &mut buf);
        buf.reverse();
        for i in 0..n {
            out[(i, c)] = buf[pad + i];
        }
    }
    Ok(out)
}

/// Least-squares coefficients (lowest first) of a polynomial in
/// `s = k/(len − 1)` through `y[k]`.
fn poly_fit(y: &[f64], degree: usize) -> Vec<f64> {
    let m = y.len();
    let h = (m - 1) as f64;
    let a = DMatrix::from_fn(m, degree + 1, |k, j| (k as f64 / h).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .expect("both factors were requested");
    sol.iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Pipeline steps

/// Keeps samples `0, factor, 2·factor, …`.
pub fn downsample(ds: &TrajectoryDataset, factor: usize) -> Result<TrajectoryDataset> {
    if factor < 1 {
        return Err(Error::InvalidArgument(
            "downsample factor must be at least 1".into(),
        ));
    }
    expect_stage(ds, Stage::Filtered)?;
    let rows: Vec<usize> = (0..ds.len()).step_by(factor).collect();
    let mut out = ds.select(&rows);
    out.stage = Stage::Downsampled;
    Ok(out)
}

/// Step 1: `q̈_a` by differentiating `q̇_a`.
pub fn differentiate(ds: &TrajectoryDataset) -> Result<TrajectoryDataset> {
    expect_stage(ds, Stage::Raw)?;
    let mut out = ds.raw_channels();
    out.qdda = Some(central_diff_4(&ds.qda, ds.dt())?);
    out.stage = Stage::Differentiated;
    Ok(out)
}

/// Step 2: full joint state of every sample, warm-starting the IK from the
/// previous sample. The first sample is reached by continuation from `start`
/// (a feasible full configuration).
pub fn lift(
    model: &RobotModel,
    ds: &TrajectoryDataset,
    start: &DVector<f64>,
) -> Result<TrajectoryDataset> {
    expect_stage(ds, Stage::Differentiated)?;
    let n = model.n();
    let rows = ds.len();
    if ds.n_a() != model.n_a() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} actuated channels, model has {}",
            ds.n_a(),
            model.n_a()
        )));
    }
    let qdda = ds
        .qdda
        .as_ref()
        .expect("differentiated dataset has accelerations");
    let mut q = DMatrix::zeros(rows, n);
    let mut qd = DMatrix::zeros(rows, n);
    let mut qdd = DMatrix::zeros(rows, n);
    let mut guess = DVector::zeros(model.n_u());
    for i in 0..rows {
        let qa = ds.qa.row(i).transpose();
        if i == 0 {
            let q0 = ik_continuation(model, start, &qa, 20).map_err(|e| Error::at_sample(0, e))?;
            guess = model.unactuated_part(&q0);
        }
        let s = lift_state(
            model,
            &qa,
            &ds.qda.row(i).transpose(),
            &qdda.row(i).transpose(),
            &guess,
        )
        .map_err(|e| Error::at_sample(i, e))?;
        guess = model.unactuated_part(&s.q);
        q.set_row(i, &s.q.transpose());
        qd.set_row(i, &s.qd.transpose());
        qdd.set_row(i, &s.qdd.transpose());
    }
    let mut out = ds.clone();
    out.q = Some(q);
    out.qd = Some(qd);
    out.qdd = Some(qdd);
    out.stage = Stage::Lifted;
    Ok(out)
}

/// Step 3: zero-phase low-pass of velocities, accelerations and torques.
/// Positions are left untouched. `None` marks the step done without filtering.
pub fn filter(
    model: &RobotModel,
    ds: &TrajectoryDataset,
    cutoff_hz: Option<f64>,
) -> Result<TrajectoryDataset> {
    expect_stage(ds, Stage::Lifted)?;
    let mut out = ds.clone();
    if let Some(fc) = cutoff_hz {
        let dt = ds.dt();
        let qd = butterworth4_zero_phase(ds.qd.as_ref().expect("lifted"), dt, fc)?;
        let qdd = butterworth4_zero_phase(ds.qdd.as_ref().expect("lifted"), dt, fc)?;
        out.u = butterworth4_zero_phase(&ds.u, dt, fc)?;
        out.qda = qd.select_columns(model.actuated_indices());
        out.qdda = Some(qdd.select_columns(model.actuated_indices()));
        out.qd = Some(qd);
        out.qdd = Some(qdd);
    }
    out.stage = Stage::Filtered;
    Ok(out)
}

/// Settings of [`process_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Low-pass cutoff; `None` skips filtering.
    pub cutoff_hz: Option<f64>,
    pub downsample: usize,
    /// Feasible full configuration the first IK solve continues from; the
    /// model's assembled home when `None`.
    pub start: Option<DVector<f64>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: Some(5.0),
            downsample: 10,
            start: None,
        }
    }
}

/// Differentiate, lift, filter, downsample.
pub fn process_pipeline(
    model: &RobotModel,
    raw: &TrajectoryDataset,
    cfg: &PipelineConfig,
) -> Result<TrajectoryDataset> {
    expect_stage(raw, Stage::Raw)?;
    raw.validate()?;
    let start = match &cfg.start {
        Some(s) => s.clone(),
        None => crate::constraint::assembled_home(model)?,
    };
    let d = differentiate(raw)?;
    let l = lift(model, &d, &start)?;
    let f = filter(model, &l, cfg.cutoff_hz)?;
    downsample(&f, cfg.downsample)
}

// ---------------------------------------------------------------------------
// CSV

fn channel_names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

impl TrajectoryDataset {
    /// CSV text with `#` comment lines first (stage line added automatically).
    pub fn to_csv_string(&self, comments: &[String]) -> String {
        let na = self.n_a();
        let mut header: Vec<String> = vec!["t".into()];
        header.extend(channel_names("qa", na));
        header.extend(channel_names("qda", na));
        header.extend(channel_names("u", na));
        let mut blocks: Vec<&DMatrix<f64>> = vec![&self.qa, &self.qda, &self.u];
        if let Some(m) = &self.qdda {
            header.extend(channel_names("qdda", na));
            blocks.push(m);
        }
        for (m, p) in [(&self.q, "q"), (&self.qd, "qd"), (&self.qdd, "qdd")] {
            if let Some(m) = m {
                header.extend(channel_names(p, m.ncols()));
                blocks.push(m);
            }
        }
        if let Some(m) = &self.ea {
            header.extend(channel_names("ea", na));
            blocks.push(m);
        }
        let mut text = String::new();
        for c in comments {
            for line in c.lines() {
                text.push_str("# ");
                text.push_str(line);
                text.push('\n');
            }
        }
        text.push_str(&format!("# stage: {}\n", self.stage));
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            rec.clear();
            rec.push(format!("{}", self.t[i]));
            for b in &blocks {
                rec.extend(b.row(i).iter().map(|v| format!("{v}")));
            }
            w.write_record(&rec).expect("in-memory write");
        }
        text.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        text
    }

    /// Parses CSV text produced by [`TrajectoryDataset::to_csv_string`] or any
    /// file following the same header convention.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut stage = Stage::Raw;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(s) = line.trim_start_matches('#').trim().strip_prefix("stage:") {
                stage = s.trim().parse()?;
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Parse("first column must be 't'".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv row {}: {e}", i + 1)))?;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!(
                    "csv row {} has {} fields, expected {}",
                    i + 1,
                    rec.len(),
                    header.len()
                )));
            }
            let vals = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("csv row {}: bad number '{f}'", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(vals);
        }
        let cols = |prefix: &str| -> Vec<usize> {
            let mut found: Vec<(usize, usize)> = header
                .iter()
                .enumerate()
                .filter_map(|(c, h)| {
                    let (p, idx) = h.rsplit_once('_')?;
                    (p == prefix).then(|| idx.parse::<usize>().ok().map(|k| (k, c)))?
                })
                .collect();
            found.sort();
            found.into_iter().map(|(_, c)| c).collect()
        };
        let n = rows.len();
        let take = |c: &[usize]| DMatrix::from_fn(n, c.len(), |r, k| rows[r][c[k]]);
        let opt = |prefix: &str| {
            let c = cols(prefix);
            (!c.is_empty()).then(|| take(&c))
        };
        let (qa_c, qda_c, u_c) = (cols("qa"), cols("qda"), cols("u"));
        if qa_c.is_empty() || qa_c.len() != qda_c.len() || qa_c.len() != u_c.len() {
            return Err(Error::Parse(
                "need matching qa_*, qda_* and u_* columns".into(),
            ));
        }
        let ds = TrajectoryDataset {
            t: rows.iter().map(|r| r[0]).collect(),
            qa: take(&qa_c),
            qda: take(&qda_c),
            u: take(&u_c),
            qdda: opt("qdda"),
            q: opt("q"),
            qd: opt("qd"),
            qdd: opt("qdd"),
            ea: opt("ea"),
            stage,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }
}
