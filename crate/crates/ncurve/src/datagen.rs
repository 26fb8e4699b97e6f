//! Built-in dataset generators and sequence ingestion (JSONL and CSV).

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bernstein::bernstein_row;
use crate::curve::{IndexGrid, NCurve, NCurveMixture};
use crate::error::{NCurveError, Result};
use crate::gaussian::GaussianDist;
use crate::rng::rng_from_seed;

/// Where a dataset came from: generator name, seed, and the generator's
/// parameters echoed as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    pub params: serde_json::Value,
}

/// A rectangular set of sequences: `m` sequences of `n` points in `R^d`,
/// optionally paired with a per-sequence conditioning channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Vec<DVector<f64>>>,
    pub control: Option<Vec<Vec<f64>>>,
    pub meta: DatasetMeta,
}

impl SequenceDataset {
    /// Number of sequences.
    pub fn m(&self) -> usize {
        self.sequences.len()
    }

    /// Sequence length.
    pub fn n(&self) -> usize {
        self.sequences.first().map_or(0, Vec::len)
    }

    /// Point dimension.
    pub fn d(&self) -> usize {
        self.sequences
            .first()
            .and_then(|s| s.first())
            .map_or(0, DVector::len)
    }

    /// Check rectangularity: every sequence has the same length, every point
    /// the same dimension, and the control table (if any) one row per
    /// sequence of one shared width.
    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(NCurveError::EmptyDataset);
        }
        let n = self.n();
        let d = self.d();
        if n == 0 || d == 0 {
            return Err(NCurveError::EmptyInput { what: "sequence points" });
        }
        for (j, seq) in self.sequences.iter().enumerate() {
            if seq.len() != n {
                return Err(NCurveError::ShapeMismatch(format!(
                    "sequence {j} has {} steps, expected {n}",
                    seq.len()
                )));
            }
            for (i, x) in seq.iter().enumerate() {
                if x.len() != d {
                    return Err(NCurveError::ShapeMismatch(format!(
                        "sequence {j} step {i} has dimension {}, expected {d}",
                        x.len()
                    )));
                }
            }
        }
        if let Some(ctrl) = &self.control {
            if ctrl.len() != self.sequences.len() {
                return Err(NCurveError::ShapeMismatch(format!(
                    "{} control rows for {} sequences",
                    ctrl.len(),
                    self.sequences.len()
                )));
            }
            let w = ctrl[0].len();
            for (j, row) in ctrl.iter().enumerate() {
                if row.len() != w {
                    return Err(NCurveError::ShapeMismatch(format!(
                        "control row {j} has width {}, expected {w}",
                        row.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn bezier_mean_2d(controls: &[[f64; 2]], t: f64) -> Result<[f64; 2]> {
    let b = bernstein_row(controls.len() - 1, t)?;
    let mut out = [0.0; 2];
    for (w, c) in b.iter().zip(controls) {
        out[0] += w * c[0];
        out[1] += w * c[1];
    }
    Ok(out)
}

/// Control means of the wave-shaped degree-4 mean curve used by `gen_toy1`.
pub const TOY1_MEAN_CONTROLS: [[f64; 2]; 5] =
    [[0.0, 0.0], [2.5, 4.0], [5.0, -1.0], [7.5, 4.0], [10.0, 0.0]];

/// Per-step noise levels for `gen_toy1`: tight at both ends, loose in the
/// middle.
pub const TOY1_SIGMA_SCHEDULE: [f64; 11] =
    [0.10, 0.15, 0.30, 0.55, 0.80, 0.95, 0.80, 0.55, 0.30, 0.15, 0.10];

/// Planar wave with step-dependent noise: 11 steps along a fixed degree-4
/// mean curve, isotropic Gaussian noise whose level follows a schedule that
/// pinches at the endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy1Config {
    pub m: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for Toy1Config {
    fn default() -> Self {
        Self { m: 1000, noise_scale: 1.0, seed: 101 }
    }
}

pub fn gen_toy1(cfg: &Toy1Config) -> Result<SequenceDataset> {
    if cfg.m == 0 {
        return Err(NCurveError::EmptyDataset);
    }
    let n = TOY1_SIGMA_SCHEDULE.len();
    let mut means = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        means.push(bezier_mean_2d(&TOY1_MEAN_CONTROLS, t)?);
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let mut seq = Vec::with_capacity(n);
        for (i, mean) in means.iter().enumerate() {
            let s = cfg.noise_scale * TOY1_SIGMA_SCHEDULE[i];
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            seq.push(DVector::from_row_slice(&[mean[0] + s * zx, mean[1] + s * zy]));
        }
        sequences.push(seq);
    }
    let ds = SequenceDataset {
        sequences,
        control: None,
        meta: DatasetMeta {
            name: "toy1".into(),
            seed: cfg.seed,
            params: json!({ "m": cfg.m, "noise_scale": cfg.noise_scale }),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Fan of rays from the origin: each sequence picks one heading uniformly
/// from an angular window and walks outward at a fixed radial step with
/// small isotropic noise. The first point carries almost no information, so
/// forecasts must stay spread over the whole fan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy2Config {
    pub m: usize,
    pub n: usize,
    pub radius_step: f64,
    pub angle_min: f64,
    pub angle_max: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for Toy2Config {
    fn default() -> Self {
        Self {
            m: 1000,
            n: 5,
            radius_step: 0.5,
            angle_min: PI / 3.0,
            angle_max: 2.0 * PI / 3.0,
            noise: 0.05,
            seed: 102,
        }
    }
}

pub fn gen_toy2(cfg: &Toy2Config) -> Result<SequenceDataset> {
    if cfg.m == 0 {
        return Err(NCurveError::EmptyDataset);
    }
    if cfg.n < 2 {
        return Err(NCurveError::TooShort { what: "sequence length", min: 2, got: cfg.n });
    }
    // NaN bounds must fail too, so test for the valid case and negate
    let window_ok = cfg.angle_min < cfg.angle_max;
    if !window_ok {
        return Err(NCurveError::Invalid {
            what: "toy2 config",
            msg: format!("angle window [{}, {}] is empty", cfg.angle_min, cfg.angle_max),
        });
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let angle = rng.random_range(cfg.angle_min..cfg.angle_max);
        let (dir_x, dir_y) = (angle.cos(), angle.sin());
        let mut seq = Vec::with_capacity(cfg.n);
        for i in 0..cfg.n {
            let r = cfg.radius_step * i as f64;
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            seq.push(DVector::from_row_slice(&[
                r * dir_x + cfg.noise * zx,
                r * dir_y + cfg.noise * zy,
            ]));
        }
        sequences.push(seq);
    }
    let ds = SequenceDataset {
        sequences,
        control: None,
        meta: DatasetMeta {
            name: "toy2".into(),
            seed: cfg.seed,
            params: json!({
                "m": cfg.m,
                "n": cfg.n,
                "radius_step": cfg.radius_step,
                "angle_min": cfg.angle_min,
                "angle_max": cfg.angle_max,
                "noise": cfg.noise,
            }),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Control means of the upper arc used by `gen_toy3`; the lower arc is its
/// mirror image across the x axis.
pub const TOY3_ARC_A: [[f64; 2]; 4] = [[-4.0, 2.0], [-1.0, 4.0], [2.0, 4.0], [5.0, 2.0]];

/// Two mirrored arcs sampled in one of two regimes. Structured: each
/// sequence commits to one arc for all of its steps, so the population is a
/// genuine two-mode mixture over whole sequences. Unstructured: every step
/// flips its own coin, so sequence-level multimodality vanishes and only the
/// per-step marginals stay bimodal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy3Config {
    pub m: usize,
    pub noise: f64,
    pub structured: bool,
    pub seed: u64,
}

impl Default for Toy3Config {
    fn default() -> Self {
        Self { m: 1000, noise: 0.25, structured: true, seed: 103 }
    }
}

/// Number of steps produced by `gen_toy3` and `gen_toy5`.
pub const TOY3_STEPS: usize = 11;

fn toy3_arc_means() -> Result<[Vec<[f64; 2]>; 2]> {
    let arc_b: Vec<[f64; 2]> = TOY3_ARC_A.iter().map(|c| [c[0], -c[1]]).collect();
    let mut a = Vec::with_capacity(TOY3_STEPS);
    let mut b = Vec::with_capacity(TOY3_STEPS);
    for i in 0..TOY3_STEPS {
        let t = i as f64 / (TOY3_STEPS - 1) as f64;
        a.push(bezier_mean_2d(&TOY3_ARC_A, t)?);
        b.push(bezier_mean_2d(&arc_b, t)?);
    }
    Ok([a, b])
}

/// The two arc mean curves behind `gen_toy3`/`gen_toy5`, as degree-3 curves
/// with point-mass (zero covariance) control points: index 0 is the upper
/// arc, index 1 the mirrored lower arc.
pub fn toy3_reference_curves() -> Result<Vec<NCurve>> {
    let build = |flip: f64| -> Result<NCurve> {
        let controls = TOY3_ARC_A
            .iter()
            .map(|c| GaussianDist::isotropic(DVector::from_row_slice(&[c[0], flip * c[1]]), 0.0))
            .collect::<Result<Vec<_>>>()?;
        NCurve::new(controls)
    };
    Ok(vec![build(1.0)?, build(-1.0)?])
}

fn gen_two_arcs(cfg: &Toy3Config, name: &str) -> Result<SequenceDataset> {
    if cfg.m == 0 {
        return Err(NCurveError::EmptyDataset);
    }
    let arcs = toy3_arc_means()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let mut seq = Vec::with_capacity(TOY3_STEPS);
        let seq_pick_b = rng.random::<f64>() < 0.5;
        for (mean_a, mean_b) in arcs[0].iter().zip(&arcs[1]) {
            let pick_b = if cfg.structured {
                seq_pick_b
            } else {
                rng.random::<f64>() < 0.5
            };
            let mean = if pick_b { mean_b } else { mean_a };
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            seq.push(DVector::from_row_slice(&[
                mean[0] + cfg.noise * zx,
                mean[1] + cfg.noise * zy,
            ]));
        }
        sequences.push(seq);
    }
    let ds = SequenceDataset {
        sequences,
        control: None,
        meta: DatasetMeta {
            name: name.into(),
            seed: cfg.seed,
            params: json!({
                "m": cfg.m,
                "noise": cfg.noise,
                "structured": cfg.structured,
            }),
        },
    };
    ds.validate()?;
    Ok(ds)
}

pub fn gen_toy3(cfg: &Toy3Config) -> Result<SequenceDataset> {
    gen_two_arcs(cfg, "toy3")
}

/// Same two-arc population as structured `gen_toy3`; kept as a separate
/// dataset so over-parameterized fits (more components than modes) can be
/// studied against a fresh draw.
pub fn gen_toy5(cfg: &Toy3Config) -> Result<SequenceDataset> {
    let mut cfg = cfg.clone();
    cfg.structured = true;
    gen_two_arcs(&cfg, "toy5")
}

/// Two-component curve mixture in exact model form: two cubic curves with
/// Gaussian control points sharing a start region, weights 1:3.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy4Config {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for Toy4Config {
    fn default() -> Self {
        Self { m: 1000, n: 25, seed: 104 }
    }
}

/// Mixture weights of the two ground-truth components in `toy4_mixture`.
pub const TOY4_WEIGHTS: [f64; 2] = [0.25, 0.75];

/// Control means of the minority (upper) component.
pub const TOY4_UPPER_CONTROLS: [[f64; 2]; 4] =
    [[-5.0, 0.0], [-2.0, 7.0], [3.0, 7.0], [6.0, 0.0]];

/// Control means of the majority (lower) component.
pub const TOY4_LOWER_CONTROLS: [[f64; 2]; 4] =
    [[-5.0, 0.0], [-8.0, -6.0], [-12.0, -6.0], [-15.0, 0.0]];

/// Per-control isotropic sigmas shared by both components.
pub const TOY4_CONTROL_SIGMAS: [f64; 4] = [0.5, 1.0, 1.0, 0.5];

/// The exact generating mixture behind `gen_toy4`.
pub fn toy4_mixture() -> Result<NCurveMixture> {
    let build = |means: &[[f64; 2]; 4]| -> Result<NCurve> {
        let controls = means
            .iter()
            .zip(TOY4_CONTROL_SIGMAS.iter())
            .map(|(m, s)| GaussianDist::isotropic(DVector::from_row_slice(m), s * s))
            .collect::<Result<Vec<_>>>()?;
        NCurve::new(controls)
    };
    NCurveMixture::new(
        TOY4_WEIGHTS.to_vec(),
        vec![build(&TOY4_UPPER_CONTROLS)?, build(&TOY4_LOWER_CONTROLS)?],
    )
}

/// Draw whole realizations from the exact mixture; returns the generator
/// alongside the data so fits can be judged against the truth.
pub fn gen_toy4(cfg: &Toy4Config) -> Result<(NCurveMixture, SequenceDataset)> {
    if cfg.m == 0 {
        return Err(NCurveError::EmptyDataset);
    }
    let mixture = toy4_mixture()?;
    let grid = IndexGrid::uniform(cfg.n)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let (_, seq) = mixture.sample_realization(&grid, &mut rng)?;
        sequences.push(seq);
    }
    let ds = SequenceDataset {
        sequences,
        control: None,
        meta: DatasetMeta {
            name: "toy4".into(),
            seed: cfg.seed,
            params: json!({ "m": cfg.m, "n": cfg.n }),
        },
    };
    ds.validate()?;
    Ok((mixture, ds))
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control: Option<Vec<f64>>,
}

/// Write one JSON object per line: `{"id": j, "points": [[..], ..]}` plus a
/// `"control"` array when the dataset has one.
pub fn save_jsonl(dataset: &SequenceDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (j, seq) in dataset.sequences.iter().enumerate() {
        let rec = JsonlRecord {
            id: Some(json!(j)),
            points: seq.iter().map(|x| x.iter().copied().collect()).collect(),
            control: dataset.control.as_ref().map(|c| c[j].clone()),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> NCurveError {
    NCurveError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn ragged_err(path: &Path, line: usize, msg: impl Into<String>) -> NCurveError {
    NCurveError::RaggedSequence { path: path.to_path_buf(), line, msg: msg.into() }
}

fn load_jsonl(path: &Path) -> Result<SequenceDataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut sequences = Vec::new();
    let mut control_rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if rec.points.is_empty() {
            return Err(parse_err(path, lineno, "record has no points"));
        }
        let n = rec.points.len();
        let d = rec.points[0].len();
        if d == 0 {
            return Err(parse_err(path, lineno, "first point is empty"));
        }
        match shape {
            None => shape = Some((n, d)),
            Some((n0, d0)) => {
                if n != n0 {
                    return Err(ragged_err(
                        path,
                        lineno,
                        format!("sequence has {n} points, expected {n0}"),
                    ));
                }
                if rec.points.iter().any(|p| p.len() != d0) {
                    return Err(ragged_err(
                        path,
                        lineno,
                        format!("point dimension differs from {d0}"),
                    ));
                }
            }
        }
        if rec.points.iter().any(|p| p.len() != rec.points[0].len()) {
            return Err(ragged_err(path, lineno, "points within the record differ in dimension"));
        }
        sequences.push(rec.points.iter().map(|p| DVector::from_row_slice(p)).collect());
        control_rows.push(rec.control);
    }
    if sequences.is_empty() {
        return Err(NCurveError::EmptyFile { path: path.to_path_buf() });
    }
    let with_control = control_rows.iter().filter(|c| c.is_some()).count();
    let control = if with_control == 0 {
        None
    } else if with_control == control_rows.len() {
        Some(control_rows.into_iter().map(Option::unwrap).collect())
    } else {
        return Err(parse_err(
            path,
            0,
            "some records carry a control array and some do not",
        ));
    };
    let ds = SequenceDataset {
        sequences,
        control,
        meta: DatasetMeta {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            seed: 0,
            params: json!({ "source": path.display().to_string() }),
        },
    };
    ds.validate()?;
    Ok(ds)
}

fn load_csv(path: &Path) -> Result<SequenceDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "seq_id" || &headers[1] != "step" {
        return Err(parse_err(
            path,
            1,
            "header must be seq_id,step,<coordinate columns...>",
        ));
    }
    let d = headers.len() - 2;
    let mut sequences: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut current_id: Option<String> = None;
    let mut current: Vec<DVector<f64>> = Vec::new();
    let mut n: Option<usize> = None;
    let mut flush = |cur: &mut Vec<DVector<f64>>,
                     n: &mut Option<usize>,
                     lineno: usize|
     -> Result<()> {
        if cur.is_empty() {
            return Ok(());
        }
        match n {
            None => *n = Some(cur.len()),
            Some(n0) => {
                if cur.len() != *n0 {
                    return Err(ragged_err(
                        path,
                        lineno,
                        format!("sequence has {} steps, expected {n0}", cur.len()),
                    ));
                }
            }
        }
        sequences.push(std::mem::take(cur));
        Ok(())
    };
    for record in reader.records() {
        let record = record?;
        let lineno = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        if record.len() != d + 2 {
            return Err(parse_err(
                path,
                lineno,
                format!("row has {} fields, expected {}", record.len(), d + 2),
            ));
        }
        let id = record[0].to_string();
        let step: usize = record[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad step '{}'", &record[1])))?;
        if current_id.as_deref() != Some(&id) {
            flush(&mut current, &mut n, lineno)?;
            current_id = Some(id);
        }
        if step != current.len() {
            return Err(ragged_err(
                path,
                lineno,
                format!("step {step} out of order, expected {}", current.len()),
            ));
        }
        let mut coords = Vec::with_capacity(d);
        for a in 0..d {
            let v: f64 = record[a + 2].parse().map_err(|_| {
                parse_err(path, lineno, format!("bad number '{}'", &record[a + 2]))
            })?;
            coords.push(v);
        }
        current.push(DVector::from_vec(coords));
    }
    flush(&mut current, &mut n, 0)?;
    if sequences.is_empty() {
        return Err(NCurveError::EmptyFile { path: path.to_path_buf() });
    }
    let ds = SequenceDataset {
        sequences,
        control: None,
        meta: DatasetMeta {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            seed: 0,
            params: json!({ "source": path.display().to_string() }),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Load sequences from disk. `.csv` files use columns
/// `seq_id,step,<coords...>` with contiguous rows per sequence; anything
/// else is treated as JSON Lines records `{"id", "points", "control"?}`.
pub fn load_sequences(path: &Path) -> Result<SequenceDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_csv(path),
        _ => load_jsonl(path),
    }
}

/// Per-axis min-max normalization onto [-1, 1]: x' = (x - center) /
/// half_range. Axes with zero spread keep half_range 1 so the map stays
/// invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
}

impl ScaleParams {
    /// Measure per-axis extremes over every point of every sequence.
    pub fn fit(sequences: &[Vec<DVector<f64>>]) -> Result<Self> {
        let d = sequences
            .first()
            .and_then(|s| s.first())
            .map(DVector::len)
            .ok_or(NCurveError::EmptyDataset)?;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for seq in sequences {
            for x in seq {
                if x.len() != d {
                    return Err(NCurveError::DimensionMismatch {
                        what: "point dimension",
                        expected: d,
                        got: x.len(),
                    });
                }
                for a in 0..d {
                    lo[a] = lo[a].min(x[a]);
                    hi[a] = hi[a].max(x[a]);
                }
            }
        }
        let center = (0..d).map(|a| 0.5 * (lo[a] + hi[a])).collect();
        let half_range = (0..d)
            .map(|a| {
                let h = 0.5 * (hi[a] - lo[a]);
                if h > 0.0 {
                    h
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { center, half_range })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn forward_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x.len())?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(a, v)| (v - self.center[a]) / self.half_range[a]),
        ))
    }

    pub fn inverse_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x.len())?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(a, v)| v * self.half_range[a] + self.center[a]),
        ))
    }

    pub fn forward_sequences(
        &self,
        sequences: &[Vec<DVector<f64>>],
    ) -> Result<Vec<Vec<DVector<f64>>>> {
        sequences
            .iter()
            .map(|s| s.iter().map(|x| self.forward_point(x)).collect())
            .collect()
    }

    pub fn inverse_sequences(
        &self,
        sequences: &[Vec<DVector<f64>>],
    ) -> Result<Vec<Vec<DVector<f64>>>> {
        sequences
            .iter()
            .map(|s| s.iter().map(|x| self.inverse_point(x)).collect())
            .collect()
    }

    /// Map a mixture fitted on scaled data back into original data units.
    /// Per-axis affine maps commute with the Bézier combination, so
    /// transforming every control point transforms the whole curve:
    /// means become h∘μ + c and covariances diag(h)·Σ·diag(h).
    pub fn inverse_mixture(&self, mixture: &NCurveMixture) -> Result<NCurveMixture> {
        let scale = DMatrix::from_diagonal(&DVector::from_column_slice(&self.half_range));
        let mut components = Vec::with_capacity(mixture.components().len());
        for curve in mixture.components() {
            let controls = curve
                .controls()
                .iter()
                .map(|g| {
                    self.check(g.dim())?;
                    let mean = self.inverse_point(g.mean())?;
                    let cov = &scale * g.cov() * &scale;
                    GaussianDist::new(mean, cov)
                })
                .collect::<Result<Vec<_>>>()?;
            components.push(NCurve::new(controls)?);
        }
        NCurveMixture::new(mixture.weights().to_vec(), components)
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(NCurveError::DimensionMismatch {
                what: "point dimension vs scaling",
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::loss::{mixture_nll, LossReduction};
    use rand_distr::Distribution;

    #[test]
    fn toy1_is_deterministic_and_rectangular() {
        let cfg = Toy1Config { m: 8, ..Toy1Config::default() };
        let a = gen_toy1(&cfg).unwrap();
        let b = gen_toy1(&cfg).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(a.m(), 8);
        assert_eq!(a.n(), 11);
        assert_eq!(a.d(), 2);
        let c = gen_toy1(&Toy1Config { seed: 999, ..cfg }).unwrap();
        assert_ne!(a.sequences, c.sequences);
    }

    #[test]
    fn toy1_with_zero_noise_degenerates_to_the_mean_curve() {
        let cfg = Toy1Config { m: 2, noise_scale: 0.0, seed: 1 };
        let ds = gen_toy1(&cfg).unwrap();
        let seq = &ds.sequences[0];
        assert_eq!(seq[0], DVector::from_row_slice(&[0.0, 0.0]));
        assert_eq!(seq[10], DVector::from_row_slice(&[10.0, 0.0]));
        // midpoint of the degree-4 curve, computed by hand from its controls
        assert!((seq[5][0] - 5.0).abs() < 1e-12);
        assert!((seq[5][1] - 1.625).abs() < 1e-12);
        assert_eq!(ds.sequences[0], ds.sequences[1]);
    }

    #[test]
    fn toy1_noise_follows_the_schedule() {
        let cfg = Toy1Config { m: 10_000, noise_scale: 1.0, seed: 7 };
        let ds = gen_toy1(&cfg).unwrap();
        for (i, &sigma) in TOY1_SIGMA_SCHEDULE.iter().enumerate() {
            for axis in 0..2 {
                let vals: Vec<f64> = ds.sequences.iter().map(|s| s[i][axis]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var =
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                let std = var.sqrt();
                assert!(
                    (std - sigma).abs() < 0.05 * sigma,
                    "step {i} axis {axis}: std {std} vs sigma {sigma}"
                );
            }
        }
    }

    #[test]
    fn toy2_walks_outward_inside_the_angular_window() {
        let cfg = Toy2Config { m: 3000, ..Toy2Config::default() };
        let ds = gen_toy2(&cfg).unwrap();
        assert_eq!(ds.n(), 5);
        let radius = |x: &DVector<f64>| (x[0] * x[0] + x[1] * x[1]).sqrt();
        let mean_r_at = |i: usize| {
            ds.sequences.iter().map(|s| radius(&s[i])).sum::<f64>() / ds.m() as f64
        };
        assert!((mean_r_at(4) - 2.0).abs() < 0.02);
        assert!((mean_r_at(2) - 1.0).abs() < 0.02);
        // the fan widens: cross-sequence spread grows with the step index
        let spread_at = |i: usize| {
            let xs: Vec<f64> = ds.sequences.iter().map(|s| s[i][0]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64
        };
        assert!(spread_at(4) > 8.0 * spread_at(1));
        // headings stay inside the window: x bounded by cos(pi/3)·r, y above
        // sin(pi/3)·r, both padded for the additive noise
        for seq in &ds.sequences {
            let p = &seq[4];
            assert!(p[0].abs() <= 0.5 * 2.0 + 0.3, "x out of fan: {}", p[0]);
            assert!(p[1] >= 3.0f64.sqrt() / 2.0 * 2.0 - 0.3, "y below fan: {}", p[1]);
        }
    }

    #[test]
    fn toy3_structured_balances_arcs_and_keeps_sequences_on_one_arc() {
        let cfg = Toy3Config { m: 10_000, ..Toy3Config::default() };
        let ds = gen_toy3(&cfg).unwrap();
        assert_eq!(ds.n(), TOY3_STEPS);
        // noise 0.25 against arcs at |y| in [2, 3.25]: the sign of y labels
        // the arc with overwhelming margin at every step
        let upper = ds
            .sequences
            .iter()
            .filter(|s| s.iter().all(|x| x[1] > 0.0))
            .count();
        let lower = ds
            .sequences
            .iter()
            .filter(|s| s.iter().all(|x| x[1] < 0.0))
            .count();
        assert_eq!(upper + lower, ds.m(), "some sequence switched arcs");
        let frac = upper as f64 / ds.m() as f64;
        assert!((frac - 0.5).abs() < 0.015, "upper-arc fraction {frac}");
    }

    #[test]
    fn toy3_unstructured_mixes_arcs_within_sequences() {
        let cfg = Toy3Config { m: 2000, structured: false, ..Toy3Config::default() };
        let ds = gen_toy3(&cfg).unwrap();
        let one_sided = ds
            .sequences
            .iter()
            .filter(|s| {
                s.iter().all(|x| x[1] > 0.0) || s.iter().all(|x| x[1] < 0.0)
            })
            .count();
        // a sequence stays one-sided with probability 2·(1/2)^11
        assert!(
            one_sided < 10,
            "{one_sided} of 2000 sequences never switched arcs"
        );
        // per-step mean collapses to the midline
        for i in 0..TOY3_STEPS {
            let mean_y =
                ds.sequences.iter().map(|s| s[i][1]).sum::<f64>() / ds.m() as f64;
            assert!(mean_y.abs() < 0.25, "step {i} mean y {mean_y}");
        }
    }

    #[test]
    fn toy5_is_structured_and_distinct_from_toy3_by_name() {
        let ds = gen_toy5(&Toy3Config { m: 50, structured: false, seed: 105, ..Default::default() })
            .unwrap();
        assert_eq!(ds.meta.name, "toy5");
        assert_eq!(ds.meta.params["structured"], serde_json::Value::Bool(true));
        let one_sided = ds
            .sequences
            .iter()
            .filter(|s| {
                s.iter().all(|x| x[1] > 0.0) || s.iter().all(|x| x[1] < 0.0)
            })
            .count();
        assert_eq!(one_sided, 50);
    }

    #[test]
    fn toy4_matches_its_generator_moments() {
        let cfg = Toy4Config { m: 1000, n: 25, seed: 104 };
        let (mixture, ds) = gen_toy4(&cfg).unwrap();
        assert_eq!(ds.m(), 1000);
        assert_eq!(ds.n(), 25);
        assert_eq!(ds.d(), 2);
        assert_eq!(mixture.k(), 2);
        // both components start at (-5, 0) with control sigma 0.5
        let step0_mean: DVector<f64> = ds
            .sequences
            .iter()
            .map(|s| s[0].clone())
            .fold(DVector::zeros(2), |acc, x| acc + x)
            / ds.m() as f64;
        let se0 = 0.5 / (ds.m() as f64).sqrt();
        assert!((step0_mean[0] + 5.0).abs() < 4.0 * se0, "start x {}", step0_mean[0]);
        assert!(step0_mean[1].abs() < 4.0 * se0, "start y {}", step0_mean[1]);
        // component identity is readable from the final x position
        let upper = ds.sequences.iter().filter(|s| s[24][0] > -4.5).count();
        let frac = upper as f64 / ds.m() as f64;
        assert!((frac - 0.25).abs() < 0.04, "minority fraction {frac}");
    }

    #[test]
    fn toy4_truth_beats_perturbed_mixtures_in_likelihood() {
        let cfg = Toy4Config { m: 300, n: 25, seed: 11 };
        let (mixture, ds) = gen_toy4(&cfg).unwrap();
        let grid = IndexGrid::uniform(25).unwrap();
        let truth =
            mixture_nll(&mixture, &grid, &ds.sequences, LossReduction::SumOverSteps).unwrap();
        let mut rng = rng_from_seed(99);
        let normal = rand_distr::Normal::new(0.0, 0.4).unwrap();
        for trial in 0..30 {
            let components = mixture
                .components()
                .iter()
                .map(|c| {
                    let controls = c
                        .controls()
                        .iter()
                        .map(|g| {
                            let mut mean = g.mean().clone();
                            for a in 0..mean.len() {
                                mean[a] += normal.sample(&mut rng);
                            }
                            GaussianDist::new(mean, g.cov().clone()).unwrap()
                        })
                        .collect::<Vec<_>>();
                    NCurve::new(controls).unwrap()
                })
                .collect::<Vec<_>>();
            let perturbed =
                NCurveMixture::new(mixture.weights().to_vec(), components).unwrap();
            let nll = mixture_nll(&perturbed, &grid, &ds.sequences, LossReduction::SumOverSteps)
                .unwrap();
            assert!(truth < nll, "trial {trial}: truth {truth} vs perturbed {nll}");
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut ds = gen_toy2(&Toy2Config { m: 7, ..Toy2Config::default() }).unwrap();
        ds.control = Some((0..7).map(|j| vec![j as f64, 0.5]).collect());
        save_jsonl(&ds, &path).unwrap();
        let loaded = load_sequences(&path).unwrap();
        assert_eq!(loaded.sequences, ds.sequences);
        assert_eq!(loaded.control, ds.control);
        assert_eq!(loaded.meta.name, "data");
    }

    #[test]
    fn csv_loader_reads_grouped_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(
            &path,
            "seq_id,step,x0,x1\na,0,1.0,2.0\na,1,3.0,4.0\nb,0,5.0,6.0\nb,1,7.0,8.0\n",
        )
        .unwrap();
        let ds = load_sequences(&path).unwrap();
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.sequences[1][0], DVector::from_row_slice(&[5.0, 6.0]));
    }

    #[test]
    fn ragged_jsonl_names_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"id\":0,\"points\":[[1.0,2.0],[3.0,4.0]]}\n{\"id\":1,\"points\":[[1.0,2.0]]}\n",
        )
        .unwrap();
        match load_sequences(&path).unwrap_err() {
            NCurveError::RaggedSequence { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_json_and_empty_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"points\": [[1.0]]}\nnot json\n").unwrap();
        match load_sequences(&bad).unwrap_err() {
            NCurveError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "\n\n").unwrap();
        assert!(matches!(
            load_sequences(&empty).unwrap_err(),
            NCurveError::EmptyFile { .. }
        ));
    }

    #[test]
    fn csv_step_gaps_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        std::fs::write(&path, "seq_id,step,x0\na,0,1.0\na,2,2.0\n").unwrap();
        match load_sequences(&path).unwrap_err() {
            NCurveError::RaggedSequence { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("step 2"), "msg: {msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn scaling_round_trips_and_handles_flat_axes() {
        let seqs = vec![
            vec![
                DVector::from_row_slice(&[0.0, 5.0]),
                DVector::from_row_slice(&[10.0, 5.0]),
            ],
            vec![
                DVector::from_row_slice(&[4.0, 5.0]),
                DVector::from_row_slice(&[6.0, 5.0]),
            ],
        ];
        let scale = ScaleParams::fit(&seqs).unwrap();
        let fwd = scale.forward_sequences(&seqs).unwrap();
        // axis 0 spans [0, 10] -> [-1, 1]; axis 1 is flat -> 0
        assert_eq!(fwd[0][0][0], -1.0);
        assert_eq!(fwd[0][1][0], 1.0);
        assert_eq!(fwd[0][0][1], 0.0);
        let back = scale.inverse_sequences(&fwd).unwrap();
        for (orig, rec) in seqs.iter().zip(&back) {
            for (a, b) in orig.iter().zip(rec) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        assert!(scale.forward_point(&DVector::from_row_slice(&[1.0])).is_err());
    }

    #[test]
    fn inverse_mixture_obeys_change_of_variables() {
        // If q is the density of the unscaled mixture and p of the scaled
        // one, then q(x) = p(forward(x)) / prod(half_range) at every (t, x).
        let scale = ScaleParams {
            center: vec![1.0, -2.0],
            half_range: vec![2.0, 4.0],
        };
        let (scaled, _) = gen_toy4(&Toy4Config { m: 3, ..Toy4Config::default() }).unwrap();
        let unscaled = scale.inverse_mixture(&scaled).unwrap();
        let log_jac: f64 = scale.half_range.iter().map(|h| h.ln()).sum();
        let mut rng = rng_from_seed(9);
        for _ in 0..20 {
            let t: f64 = rng.random();
            let x = DVector::from_row_slice(&[
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ]);
            let lp_unscaled = unscaled.log_density_at(t, &x).unwrap();
            let lp_scaled = scaled
                .log_density_at(t, &scale.forward_point(&x).unwrap())
                .unwrap();
            assert!((lp_unscaled - (lp_scaled - log_jac)).abs() < 1e-10);
        }
    }

    #[test]
    fn validate_rejects_ragged_and_misaligned_control() {
        let mut ds = gen_toy2(&Toy2Config { m: 3, ..Toy2Config::default() }).unwrap();
        ds.sequences[1].pop();
        assert!(matches!(ds.validate(), Err(NCurveError::ShapeMismatch(_))));
        let mut ds2 = gen_toy2(&Toy2Config { m: 3, ..Toy2Config::default() }).unwrap();
        ds2.control = Some(vec![vec![1.0]; 2]);
        assert!(matches!(ds2.validate(), Err(NCurveError::ShapeMismatch(_))));
    }
}
