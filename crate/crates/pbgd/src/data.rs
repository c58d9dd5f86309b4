//! Seeded synthetic datasets and their text container format.
//!
//! Every dataset remembers its seed, the RNG algorithm and the noise
//! convention, so a stored file can always be regenerated and compared.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::solvers::Trajectory;

/// Identifier written into every dataset file.
pub const RNG_ID: &str = "chacha20-polar";
/// Version of the dataset text container.
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "pbgd-dataset";

/// How the second parameter of `N(a, b)` is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseConvention {
    /// `b` is the variance; samples use standard deviation `√b`.
    Variance,
    /// `b` is the standard deviation.
    StdDev,
}

impl NoiseConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Variance => "variance",
            Self::StdDev => "stddev",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(Self::Variance),
            "stddev" => Ok(Self::StdDev),
            other => Err(Error::Parse(format!("unknown noise convention `{other}`"))),
        }
    }

    fn std(self, b: f64) -> f64 {
        match self {
            Self::Variance => b.sqrt(),
            Self::StdDev => b,
        }
    }
}

/// Seed, RNG and noise convention a dataset was generated with.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub rng: String,
    pub noise: NoiseConvention,
}

impl DatasetMeta {
    pub fn new(seed: u64, noise: NoiseConvention) -> Self {
        Self {
            seed,
            rng: RNG_ID.to_string(),
            noise,
        }
    }
}

/// Deterministic Gaussian stream: ChaCha20 uniforms fed through the
/// Marsaglia polar method.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let a = 2.0 * self.uniform() - 1.0;
            let b = 2.0 * self.uniform() - 1.0;
            let s = a * a + b * b;
            if s > 0.0 && s < 1.0 {
                let scale = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(b * scale);
                return a * scale;
            }
        }
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Matrix with i.i.d. `N(mean, std²)` entries, filled in row-major order.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal(mean, std))
    }

    /// Matrix with entries `center_ij + N(0, std²)`.
    pub fn perturb(&mut self, center: &Matrix, std: f64) -> Matrix {
        Matrix::from_fn(center.rows(), center.cols(), |i, j| {
            center.get(i, j) + std * self.standard_normal()
        })
    }
}

/// Dimensions of a representation-learning dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReprDims {
    /// Training samples `N`.
    pub n_trn: usize,
    /// Validation samples `N′`.
    pub n_val: usize,
    /// Input features `m`.
    pub m: usize,
    /// Outputs `n`.
    pub n: usize,
    /// Hidden width `h`.
    pub h: usize,
}

impl Default for ReprDims {
    fn default() -> Self {
        Self {
            n_trn: 30,
            n_val: 20,
            m: 40,
            n: 10,
            h: 300,
        }
    }
}

impl ReprDims {
    pub fn validate(&self) -> Result<()> {
        let ReprDims {
            n_trn,
            n_val,
            m,
            n,
            h,
        } = *self;
        if n_trn == 0 || n_val == 0 || m == 0 || n == 0 || h == 0 {
            return Err(Error::Parameter("dimensions must be positive".into()));
        }
        if m < n_trn.max(n_val) {
            return Err(Error::Parameter(format!(
                "need m >= max(N, N') but m = {m}, N = {n_trn}, N' = {n_val}"
            )));
        }
        if h < m.max(n) {
            return Err(Error::Parameter(format!(
                "need h >= max(m, n) but h = {h}, m = {m}, n = {n}"
            )));
        }
        Ok(())
    }
}

/// Data-generating weights of a representation-learning dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprTruth {
    pub w1_star: Matrix,
    pub w2_star: Matrix,
    pub w2_tilde_star: Matrix,
}

/// Training and validation data for the two-layer linear network problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprDataset {
    pub x_trn: Matrix,
    pub y_trn: Matrix,
    pub x_val: Matrix,
    pub y_val: Matrix,
    /// Hidden width `h` of the network.
    pub h: usize,
    pub truth: Option<ReprTruth>,
    pub meta: Option<DatasetMeta>,
}

impl ReprDataset {
    /// Assembles a dataset from matrices, validating shapes and the
    /// overparameterization constraints.
    pub fn new(
        x_trn: Matrix,
        y_trn: Matrix,
        x_val: Matrix,
        y_val: Matrix,
        h: usize,
        truth: Option<ReprTruth>,
    ) -> Result<Self> {
        let dims = ReprDims {
            n_trn: x_trn.rows(),
            n_val: x_val.rows(),
            m: x_trn.cols(),
            n: y_trn.cols(),
            h,
        };
        dims.validate()?;
        let shapes_ok = y_trn.rows() == dims.n_trn
            && x_val.cols() == dims.m
            && y_val.shape() == (dims.n_val, dims.n);
        if !shapes_ok {
            return Err(Error::Shape("inconsistent representation dataset".into()));
        }
        if let Some(t) = &truth {
            if t.w1_star.shape() != (dims.m, h)
                || t.w2_star.shape() != (h, dims.n)
                || t.w2_tilde_star.shape() != (h, dims.n)
            {
                return Err(Error::Shape(
                    "ground-truth weights do not match dims".into(),
                ));
            }
        }
        Ok(Self {
            x_trn,
            y_trn,
            x_val,
            y_val,
            h,
            truth,
            meta: None,
        })
    }

    pub fn dims(&self) -> ReprDims {
        ReprDims {
            n_trn: self.x_trn.rows(),
            n_val: self.x_val.rows(),
            m: self.x_trn.cols(),
            n: self.y_trn.cols(),
            h: self.h,
        }
    }
}

/// Generates a representation-learning dataset with the variance convention.
pub fn gen_repr_dataset(seed: u64, dims: ReprDims) -> Result<ReprDataset> {
    gen_repr_dataset_with(seed, dims, NoiseConvention::Variance)
}

pub fn gen_repr_dataset_with(
    seed: u64,
    dims: ReprDims,
    noise: NoiseConvention,
) -> Result<ReprDataset> {
    dims.validate()?;
    let ReprDims {
        n_trn,
        n_val,
        m,
        n,
        h,
    } = dims;
    let mut rng = GaussianStream::new(seed);
    let s = |b: f64| noise.std(b);
    let x_trn = rng.normal_matrix(n_trn, m, 5.0, s(0.01));
    let x_val = rng.normal_matrix(n_val, m, -3.0, s(0.01));
    let w1_star = rng.normal_matrix(m, h, 0.0, s(0.01));
    let w2_star = rng.normal_matrix(h, n, 2.0, s(0.01));
    let w2_tilde_star = rng.perturb(&w2_star, s(0.001));
    let y_trn = rng.perturb(&x_trn.matmul(&w1_star).matmul(&w2_star), s(0.01));
    let y_val = rng.perturb(&x_val.matmul(&w1_star).matmul(&w2_tilde_star), s(0.01));
    let mut data = ReprDataset::new(
        x_trn,
        y_trn,
        x_val,
        y_val,
        h,
        Some(ReprTruth {
            w1_star,
            w2_star,
            w2_tilde_star,
        }),
    )?;
    data.meta = Some(DatasetMeta::new(seed, noise));
    Ok(data)
}

/// Dimensions of a hyper-cleaning dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HypercleanDims {
    pub n_trn: usize,
    pub n_val: usize,
    pub m: usize,
    pub n: usize,
}

impl Default for HypercleanDims {
    fn default() -> Self {
        Self {
            n_trn: 100,
            n_val: 10,
            m: 200,
            n: 10,
        }
    }
}

impl HypercleanDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_trn == 0 || self.n_val == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::Parameter("dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted regression data with a corrupted training split.
#[derive(Clone, Debug, PartialEq)]
pub struct HypercleanDataset {
    pub x_trn: Matrix,
    pub y_trn: Matrix,
    pub x_val: Matrix,
    pub y_val: Matrix,
    pub w_star: Option<Matrix>,
    /// `true` for training rows that received the heavy additive noise.
    pub corruption_mask: Vec<bool>,
    pub corruption_rate: f64,
    pub meta: Option<DatasetMeta>,
}

impl HypercleanDataset {
    pub fn new(
        x_trn: Matrix,
        y_trn: Matrix,
        x_val: Matrix,
        y_val: Matrix,
        w_star: Option<Matrix>,
        corruption_mask: Vec<bool>,
    ) -> Result<Self> {
        let (n_trn, m) = x_trn.shape();
        let n = y_trn.cols();
        let ok = y_trn.rows() == n_trn
            && x_val.cols() == m
            && y_val.shape() == (x_val.rows(), n)
            && corruption_mask.len() == n_trn
            && w_star.as_ref().is_none_or(|w| w.shape() == (m, n));
        if !ok {
            return Err(Error::Shape("inconsistent hyper-cleaning dataset".into()));
        }
        let rate = corruption_mask.iter().filter(|&&c| c).count() as f64 / n_trn.max(1) as f64;
        Ok(Self {
            x_trn,
            y_trn,
            x_val,
            y_val,
            w_star,
            corruption_mask,
            corruption_rate: rate,
            meta: None,
        })
    }

    pub fn dims(&self) -> HypercleanDims {
        HypercleanDims {
            n_trn: self.x_trn.rows(),
            n_val: self.x_val.rows(),
            m: self.x_trn.cols(),
            n: self.y_trn.cols(),
        }
    }
}

pub fn gen_hyperclean_dataset(
    seed: u64,
    dims: HypercleanDims,
    corruption_rate: f64,
) -> Result<HypercleanDataset> {
    gen_hyperclean_dataset_with(seed, dims, corruption_rate, NoiseConvention::Variance)
}

pub fn gen_hyperclean_dataset_with(
    seed: u64,
    dims: HypercleanDims,
    corruption_rate: f64,
    noise: NoiseConvention,
) -> Result<HypercleanDataset> {
    dims.validate()?;
    if !(0.0..=1.0).contains(&corruption_rate) {
        return Err(Error::Parameter(format!(
            "corruption rate must lie in [0, 1], got {corruption_rate}"
        )));
    }
    let HypercleanDims { n_trn, n_val, m, n } = dims;
    let mut rng = GaussianStream::new(seed);
    let s = |b: f64| noise.std(b);
    let x_trn = rng.normal_matrix(n_trn, m, 5.0, s(0.01));
    let x_val = rng.normal_matrix(n_val, m, -3.0, s(0.01));
    let w_star = rng.normal_matrix(m, n, 1.0, s(0.01));
    let y_val = rng.perturb(&x_val.matmul(&w_star), s(0.001));
    let mask: Vec<bool> = (0..n_trn)
        .map(|_| rng.uniform() < corruption_rate)
        .collect();
    let clean = rng.perturb(&x_trn.matmul(&w_star), s(0.01));
    // Heavy noise is drawn for every row so the stream does not depend on the mask.
    let heavy = rng.normal_matrix(n_trn, n, 10.0, s(10.0));
    let y_trn = Matrix::from_fn(n_trn, n, |i, j| {
        clean.get(i, j) + if mask[i] { heavy.get(i, j) } else { 0.0 }
    });
    let mut data = HypercleanDataset::new(x_trn, y_trn, x_val, y_val, Some(w_star), mask)?;
    data.corruption_rate = corruption_rate;
    data.meta = Some(DatasetMeta::new(seed, noise));
    Ok(data)
}

/// Either kind of synthetic dataset, as stored in a container file.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Repr(ReprDataset),
    Hyperclean(HypercleanDataset),
}

impl Dataset {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Repr(_) => "repr",
            Self::Hyperclean(_) => "hyperclean",
        }
    }
}

/// Serializes a dataset into the versioned text container.
pub fn dataset_to_string(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "kind = {}", data.kind());
    let meta = match data {
        Dataset::Repr(d) => d.meta.as_ref(),
        Dataset::Hyperclean(d) => d.meta.as_ref(),
    };
    if let Some(meta) = meta {
        let _ = writeln!(out, "seed = {}", meta.seed);
        let _ = writeln!(out, "rng = {}", meta.rng);
        let _ = writeln!(out, "noise = {}", meta.noise.as_str());
    }
    let mut blocks: Vec<(&str, &Matrix)> = Vec::new();
    match data {
        Dataset::Repr(d) => {
            let dims = d.dims();
            let _ = writeln!(
                out,
                "dims = n_trn:{} n_val:{} m:{} n:{} h:{}",
                dims.n_trn, dims.n_val, dims.m, dims.n, dims.h
            );
            let _ = writeln!(
                out,
                "distribution = x_trn:N(5,0.01) x_val:N(-3,0.01) w1:N(0,0.01) w2:N(2,0.01) \
                 w2_tilde:N(w2,0.001) y_trn:N(x_trn w1 w2,0.01) y_val:N(x_val w1 w2_tilde,0.01)"
            );
            blocks.extend([
                ("x_trn", &d.x_trn),
                ("y_trn", &d.y_trn),
                ("x_val", &d.x_val),
                ("y_val", &d.y_val),
            ]);
            if let Some(t) = &d.truth {
                blocks.extend([
                    ("w1_star", &t.w1_star),
                    ("w2_star", &t.w2_star),
                    ("w2_tilde_star", &t.w2_tilde_star),
                ]);
            }
        }
        Dataset::Hyperclean(d) => {
            let dims = d.dims();
            let _ = writeln!(
                out,
                "dims = n_trn:{} n_val:{} m:{} n:{}",
                dims.n_trn, dims.n_val, dims.m, dims.n
            );
            let _ = writeln!(out, "corruption_rate = {}", d.corruption_rate);
            let _ = writeln!(
                out,
                "distribution = x_trn:N(5,0.01) x_val:N(-3,0.01) w:N(1,0.01) \
                 y_val:N(x_val w,0.001) y_trn:N(x_trn w,0.01)+mask*N(10,10)"
            );
            blocks.extend([
                ("x_trn", &d.x_trn),
                ("y_trn", &d.y_trn),
                ("x_val", &d.x_val),
                ("y_val", &d.y_val),
            ]);
            if let Some(w) = &d.w_star {
                blocks.push(("w_star", w));
            }
            let mask: Vec<&str> = d
                .corruption_mask
                .iter()
                .map(|&c| if c { "1" } else { "0" })
                .collect();
            let _ = writeln!(out, "corruption_mask = {}", mask.join(","));
        }
    }
    for (name, m) in blocks {
        let _ = writeln!(out, "[matrix {name} {} {}]", m.rows(), m.cols());
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    let _ = writeln!(out, "[end]");
    out
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_string(data))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// Parses the text container; errors name the field or block that is
/// missing or malformed.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().peekable();
    match lines.next() {
        Some(l) if l.trim() == MAGIC => {}
        _ => return Err(Error::Parse(format!("missing `{MAGIC}` header line"))),
    }
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut matrices: BTreeMap<String, Matrix> = BTreeMap::new();
    let mut saw_end = false;
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "[end]" {
            saw_end = true;
            break;
        }
        if let Some(header) = line
            .strip_prefix("[matrix ")
            .and_then(|h| h.strip_suffix(']'))
        {
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(Error::Parse(format!("malformed matrix header `{line}`")));
            };
            let rows: usize = parse_num(rows, name)?;
            let cols: usize = parse_num(cols, name)?;
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = lines.next().ok_or_else(|| {
                    Error::Parse(format!(
                        "matrix `{name}`: expected {rows} rows, found {r} (truncated)"
                    ))
                })?;
                let before = data.len();
                for tok in row.split(',') {
                    data.push(parse_num::<f64>(tok.trim(), name)?);
                }
                if data.len() - before != cols {
                    return Err(Error::Parse(format!(
                        "matrix `{name}` row {r}: expected {cols} values, found {}",
                        data.len() - before
                    )));
                }
            }
            matrices.insert(name.to_string(), Matrix::new(rows, cols, data)?);
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected `key = value`, got `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |name: &str| {
        fields
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("missing field `{name}`")))
    };
    let version: u32 = parse_num(field("format_version")?, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format_version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = field("kind")?.to_string();
    let meta = match fields.get("seed") {
        Some(seed) => Some(DatasetMeta {
            seed: parse_num(seed, "seed")?,
            rng: field("rng")?.to_string(),
            noise: NoiseConvention::parse(field("noise")?)?,
        }),
        None => None,
    };
    let mut take = |name: &str| {
        matrices
            .remove(name)
            .ok_or_else(|| Error::Parse(format!("missing field `{name}`")))
    };
    let dims_field = field("dims")?.to_string();
    let dims: BTreeMap<&str, usize> = dims_field
        .split_whitespace()
        .map(|kv| {
            let (k, v) = kv
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("malformed dims entry `{kv}`")))?;
            Ok((k, parse_num(v, "dims")?))
        })
        .collect::<Result<_>>()?;
    let dim = |k: &str| {
        dims.get(k)
            .copied()
            .ok_or_else(|| Error::Parse(format!("missing field `dims.{k}`")))
    };
    let x_trn = take("x_trn")?;
    let y_trn = take("y_trn")?;
    let x_val = take("x_val")?;
    let y_val = take("y_val")?;
    let out = match kind.as_str() {
        "repr" => {
            let truth = match (take("w1_star"), take("w2_star"), take("w2_tilde_star")) {
                (Ok(w1_star), Ok(w2_star), Ok(w2_tilde_star)) => Some(ReprTruth {
                    w1_star,
                    w2_star,
                    w2_tilde_star,
                }),
                (Err(_), Err(_), Err(_)) => None,
                (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return Err(e),
            };
            let mut d = ReprDataset::new(x_trn, y_trn, x_val, y_val, dim("h")?, truth)?;
            d.meta = meta;
            Dataset::Repr(d)
        }
        "hyperclean" => {
            let mask = field("corruption_mask")?
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| match t.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Parse(format!("corruption_mask entry `{other}`"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            let w_star = take("w_star").ok();
            let mut d = HypercleanDataset::new(x_trn, y_trn, x_val, y_val, w_star, mask)?;
            d.corruption_rate = parse_num(field("corruption_rate")?, "corruption_rate")?;
            d.meta = meta;
            Dataset::Hyperclean(d)
        }
        other => return Err(Error::Parse(format!("unknown dataset kind `{other}`"))),
    };
    if !saw_end {
        return Err(Error::Parse(
            "missing field `[end]` (truncated file)".into(),
        ));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("field `{field}`: cannot parse `{s}`")))
}

/// Header row of trajectory CSV files.
pub const TRAJECTORY_HEADER: &str =
    "k,upper_rel_err,lower_rel_err,grad_norm_u,grad_norm_v,penalized_value,mu_k,bias_bound,wall_ms";

/// Floor applied to relative errors so that log-scale plots stay finite.
pub const REL_ERR_FLOOR: f64 = 1e-16;

fn csv_number(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

fn csv_error(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        csv_number(x.max(REL_ERR_FLOOR))
    }
}

/// Trajectory as CSV with [`TRAJECTORY_HEADER`]. Absent optional values and
/// NaN are empty fields; `wall_ms` is left empty unless `timing` is set, so
/// that repeated runs produce identical files.
pub fn trajectory_to_csv(traj: &Trajectory, timing: bool) -> String {
    let mut out = String::with_capacity(64 * (traj.records.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &traj.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            csv_error(r.upper_rel_err),
            csv_error(r.lower_rel_err),
            csv_number(r.grad_norm_u),
            csv_number(r.grad_norm_v),
            csv_number(r.penalized_value),
            r.mu_k.map(csv_number).unwrap_or_default(),
            r.bias_bound.map(csv_number).unwrap_or_default(),
            if timing {
                format!("{:.3}", r.wall_millis)
            } else {
                String::new()
            },
        );
    }
    out
}
